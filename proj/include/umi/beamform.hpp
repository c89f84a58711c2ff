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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "umi/core.hpp"
#include "umi/maps.hpp"

namespace umi {

enum class MatrixVariant { raw, filtered, corrected };

enum class Side { input, output };

// Entries follow the exp(-i omega t) phasor convention: each coefficient is the
// complex conjugate of the delay-and-sum of analytic signals.
struct FocusedReflectionMatrix {
  ImageGrid grid;
  MatrixVariant variant = MatrixVariant::raw;
  std::vector<Eigen::MatrixXcd> slices;  // per depth, rows x_out, cols x_in
  double mask_bound = 0.0;               // [mm] |x_out - x_in| beyond this is zero
  std::uint64_t dropped = 0;             // contributions outside the record

  ComplexMatrix2D slice(std::size_t iz) const;
  bool masked(std::size_t i_out, std::size_t i_in) const;
};

struct Apodization {
  double f_number = 1.0;  // receive window |u - x_out| <= z / (2 f#)
};

FocusedReflectionMatrix das_focus(const AnalyticCube& analytic, const ImageGrid& grid,
                                  const AcquisitionConfig& config, const Apodization& apodization = {});

FocusedReflectionMatrix confocal_filter(const FocusedReflectionMatrix& raw, const PixelMap& lc_map);

// Table I filter factors n = 10, 10, 8, 6 for steps 1..4.
int default_filter_factor(int step);
PixelMap adaptive_lc(const FMap& f_map, const ImageGrid& grid, const AcquisitionConfig& config, int step);
PixelMap adaptive_lc(const FMap& f_map, const ImageGrid& grid, const AcquisitionConfig& config,
                     double filter_factor);

enum class OperatorKind { T0, P, Q0, Q1, Q2 };

struct PropagationOperator {
  ComplexMatrix2D matrix;  // rows dual axis (k or u), cols focused x
  OperatorKind kind = OperatorKind::T0;

  std::optional<double> depth() const { return matrix.depth; }
  Basis dual_basis() const { return matrix.row_axis.basis; }
  PropagationOperator select_rows(std::span<const std::size_t> rows) const;
};

PropagationOperator build_T0(std::span<const double> x_axis, std::span<const double> k_axis);
// Diagonal propagator exp(i sqrt(kc^2 - k^2) z), zero for evanescent k.
PropagationOperator build_P(double z, std::span<const double> k_axis, double kc);
// Transducer-plane axis of Q0: one full period of the padded grid, containing the x samples.
std::vector<double> transducer_axis(std::span<const double> x_axis);
// Q0 = T0^-1 (P o T0) on a zero-padded symmetric k grid, rows on transducer_axis(x).
PropagationOperator build_Q0(double z, std::span<const double> x_axis, const AcquisitionConfig& config);
// exp(-i pi/4) exp(i kc z) exp(i kc (x - u)^2 / (2 z)), used as a paraxial reference.
PropagationOperator fresnel_Q0(double z, std::span<const double> x_axis, std::span<const double> u_axis,
                               const AcquisitionConfig& config);

struct DualReflectionMatrix {
  Side orientation = Side::output;
  std::vector<ComplexMatrix2D> slices;  // output: (dual, x_in); input: (x_out, dual)
};

ComplexMatrix2D project(const ComplexMatrix2D& focused, Side side, const PropagationOperator& op);
// ops holds either one depth-independent operator or one operator per depth.
DualReflectionMatrix project(const FocusedReflectionMatrix& focused, Side side,
                             std::span<const PropagationOperator> ops);

}  // namespace umi
