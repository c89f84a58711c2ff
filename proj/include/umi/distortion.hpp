/*
 * SPDX-FileCopyrightText: Copyright (c) 2026 The umi authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <span>
#include <vector>

#include "umi/beamform.hpp"
#include "umi/core.hpp"

namespace umi {

struct DistortionMatrix {
  Side orientation = Side::output;
  Basis dual_basis = Basis::transducer_u;
  std::vector<ComplexMatrix2D> slices;  // same layout as the source DualReflectionMatrix
};

struct LocalDistortion {
  Point center;
  double half_x = 0;  // [mm]
  double half_z = 0;  // [mm]
  Axis dual_axis;
  std::vector<Point> members;
  Eigen::MatrixXcd values;  // dual x N_in

  std::size_t n_in() const { return members.size(); }
  LocalDistortion select_rows(std::span<const std::size_t> rows) const;
};

struct AberrationLaw {
  Basis basis = Basis::transducer_u;
  Point center{0, 0};
  std::vector<double> axis;
  Eigen::VectorXcd phase;        // unit modulus, zero circular mean
  std::vector<double> spectrum;  // singular values (or eigenvalues), descending
  bool valid = false;
  bool ramp_corrected = false;
  bool ambiguous = false;
  double shift = 0.0;  // x0 [mm]

  std::vector<double> angles() const;
  static AberrationLaw flat(Basis basis, Point center, std::vector<double> axis);
};

struct CorrelationMatrix {
  ComplexMatrix2D matrix;
  bool normalized = false;
  std::size_t n_in = 0;
};

struct CorrelationWidth {
  double du_in;  // coherence length of |C| [axis units]
  double m;      // aperture over coherence length
  double du_c;   // effective correction aperture
};

// Laws per window center, stacked for the isoplanatic decomposition, plus the
// per-substep window records.
struct AtlasWindow {
  int step = 0;
  Side side = Side::output;
  Point center{0, 0};
  double half_x = 0;
  double half_z = 0;
  std::size_t n_in = 0;
  bool gated = true;  // convergence gate passed
  AberrationLaw law;
};

struct AberrationAtlas {
  std::size_t lattice_nx = 0;  // window centers on a lattice, z-major
  std::size_t lattice_nz = 0;
  std::vector<Point> centers;
  Axis in_axis;
  Axis out_axis;
  std::vector<Eigen::VectorXcd> h_in;
  std::vector<Eigen::VectorXcd> h_out;
  std::vector<bool> valid;
  std::vector<AtlasWindow> records;
};

DistortionMatrix build_distortion(const DualReflectionMatrix& dual, std::span<const PropagationOperator> geom);

LocalDistortion extract_local(const DistortionMatrix& d, const Point& r_p, double half_x, double half_z);

// Removes the circular mean phase and sets unit modulus.
Eigen::VectorXcd phase_only(const Eigen::VectorXcd& v);

AberrationLaw svd_phase_law(const LocalDistortion& local);

CorrelationMatrix correlation_matrix(const LocalDistortion& local);

CorrelationWidth correlation_width(const CorrelationMatrix& c, std::optional<double> aperture = std::nullopt);

// Entries with |dC| below eps times the median diagonal modulus become zero.
CorrelationMatrix normalized_correlation(const CorrelationMatrix& dc, double eps = 1e-3);

AberrationLaw residual_phase_law(const CorrelationMatrix& dc_hat, const Point& center);

// Wavenumber scale g of the ramp exp(-i g a x0): kc / (2 z) on the u axis, 1/2 on the k axis.
double ramp_scale(Basis basis, double z, double kc);

AberrationLaw ramp_removal(const AberrationLaw& law, double z, double kc);

bool convergence_gate(const LocalDistortion& local, double psf_width_ratio);
bool convergence_gate(std::size_t n_in, double psf_width_ratio);

}  // namespace umi
