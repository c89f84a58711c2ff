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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "umi/beamform.hpp"
#include "umi/distortion.hpp"
#include "umi/metrics.hpp"
#include "umi/phantom.hpp"

namespace umi {

enum class SvdType { D, C_hat };

struct ScheduleStep {
  int index = 1;
  double filter_factor = 10;  // n
  double half_x = 10.0;       // [mm]
  double half_z = 20.0;       // [mm]
  Basis transmit_basis = Basis::plane_wave_k;
  Basis receive_basis = Basis::transducer_u;
  SvdType svd_type = SvdType::D;
};

std::vector<ScheduleStep> table_one_schedule();
void validate_schedule(std::span<const ScheduleStep> schedule);

struct WindowGeometry {
  Point center;
  double half_x;
  double half_z;
};

// Centers on a lattice with stride (half_x / 2, half_z / 2), z-major.
std::vector<WindowGeometry> window_lattice(const ImageGrid& grid, double half_x, double half_z,
                                           std::size_t* lattice_nx = nullptr, std::size_t* lattice_nz = nullptr);

// Raised-cosine weight of a window at r; zero outside.
double window_weight(const WindowGeometry& w, const Point& r);

struct PipelineOptions {
  FMapOptions fmap;
  Apodization apodization;
  bool ramp_removal = true;
  bool convergence_gate = true;
  double rollback_threshold = 0.05;
  std::size_t u_row_stride = 2;  // estimation rows every n grid points
  std::size_t k_row_stride = 2;
  double k_band_margin = 1.1;
  double energy_floor = 0.05;  // edge rows below this fraction of the median row energy are dropped
  bool lc_floor = true;        // l_c never below n times the ideal resolution
  Region area{-5.0, 5.0, 20.0, 30.0};
  const AberratorSpec* truth = nullptr;  // enables law RMS in the step log
};

struct StepLogEntry {
  int step = 0;
  std::string substep;  // initial, output, input
  Basis basis = Basis::focused_x;
  double median_F = 0;
  double contrast_db = 0;
  double fwhm = 0;
  double width_6db = 0;
  double area_F = 0;
  std::optional<double> law_rms;
  std::size_t windows = 0;
  std::size_t valid_windows = 0;
  std::size_t gated_windows = 0;
  bool rolled_back = false;
};

struct FocusReference {
  FocusedReflectionMatrix matrix;
  FMap map;
};

FocusReference build_focus_reference(const ImageGrid& grid, const AcquisitionConfig& config,
                                     const PipelineOptions& options, std::uint64_t seed = 1001);

struct CorrectionState {
  FocusedReflectionMatrix raw;
  std::vector<Eigen::MatrixXcd> c_out;  // composite output operator per depth
  std::vector<Eigen::MatrixXcd> c_in;
  FocusedReflectionMatrix corrected;
  std::vector<FMap> f_history;
  std::vector<StepLogEntry> log;
  AberrationAtlas atlas;
};

PropagationOperator build_estimator(const PropagationOperator& geom, std::span<const AberrationLaw> laws);

// R_c = B1^H B0 R on the output index, R B0^T conj(B1) on the input index.
FocusedReflectionMatrix apply_output_correction(const FocusedReflectionMatrix& raw,
                                                std::span<const PropagationOperator> geom0,
                                                std::span<const PropagationOperator> geom1);
FocusedReflectionMatrix apply_input_correction(const FocusedReflectionMatrix& raw,
                                               std::span<const PropagationOperator> geom0,
                                               std::span<const PropagationOperator> geom1);

// Overlap-add of per-window matrices along the corrected index; pixels with no covering
// window keep the previous matrix.
FocusedReflectionMatrix stitch_windows(std::span<const FocusedReflectionMatrix> per_window,
                                       std::span<const WindowGeometry> windows,
                                       const FocusedReflectionMatrix& previous, Side side,
                                       std::size_t* uncovered = nullptr);

// Free-space operator of a basis on the full grid axis; T0 is scaled to be unitary.
PropagationOperator full_operator(Basis basis, double z, const ImageGrid& grid, const AcquisitionConfig& config);

// Dual-axis rows used for law estimation.
std::vector<std::size_t> estimation_rows(Basis basis, Side side, const ImageGrid& grid,
                                         const AcquisitionConfig& config, const PipelineOptions& options);

// Law on a subset of rows mapped to the full axis by normalized complex interpolation.
Eigen::VectorXcd interpolate_law(const AberrationLaw& law, std::span<const double> axis);

FocusedReflectionMatrix compose(const FocusedReflectionMatrix& raw, const std::vector<Eigen::MatrixXcd>& c_out,
                                const std::vector<Eigen::MatrixXcd>& c_in);

CorrectionState run_schedule(const AnalyticCube& raw, const ImageGrid& grid, const AcquisitionConfig& config,
                             std::span<const ScheduleStep> schedule, const FocusReference& reference,
                             const PipelineOptions& options = {});
CorrectionState run_schedule(const FocusedReflectionMatrix& raw_matrix, const AcquisitionConfig& config,
                             std::span<const ScheduleStep> schedule, const FocusReference& reference,
                             const PipelineOptions& options = {});

// Phase of the accumulated correction seen from r on the element positions (transducer basis).
std::vector<double> effective_law(const CorrectionState& state, Side side, const Point& r,
                                  const AcquisitionConfig& config);

// Elements inside the aperture that sees r on the given side.
std::vector<std::size_t> aperture_elements(Side side, const Point& r, const AcquisitionConfig& config,
                                           const Apodization& apodization);

// RMS of the wrapped difference after piston and best-fit tilt removal.
double residual_rms(std::span<const double> estimate, std::span<const double> truth, std::span<const double> axis);

}  // namespace umi
