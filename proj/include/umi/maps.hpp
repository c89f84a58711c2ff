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
#include <vector>

#include "umi/core.hpp"

namespace umi {

// Scalar per pixel, z-major (index iz * nx + ix).
struct PixelMap {
  std::size_t nx = 0;
  std::size_t nz = 0;
  std::vector<double> values;

  PixelMap() = default;
  PixelMap(std::size_t nx_, std::size_t nz_, double fill) : nx(nx_), nz(nz_), values(nx_ * nz_, fill) {}
  double& at(std::size_t iz, std::size_t ix) { return values[iz * nx + ix]; }
  double at(std::size_t iz, std::size_t ix) const { return values[iz * nx + ix]; }
};

enum class FStatus : std::uint8_t { valid = 0, no_peak = 1, low_snr = 2 };

// Focusing estimate over one rectangular block of pixels.
struct FCell {
  std::size_t ix0, ix1;  // half-open pixel ranges
  std::size_t iz0, iz1;
  double F = 0;
  double width = 0;         // FWHM [mm]
  double width_6db = 0;     // full width at a quarter maximum [mm]
  double reference_width = 0;
  double prominence_db = 0;
  FStatus status = FStatus::no_peak;
};

struct FMap {
  std::size_t nx = 0;
  std::size_t nz = 0;
  std::vector<FCell> cells;
  std::vector<int> cell_of_pixel;  // index into cells per pixel

  const FCell& cell(std::size_t iz, std::size_t ix) const { return cells[cell_of_pixel[iz * nx + ix]]; }
  bool valid(std::size_t iz, std::size_t ix) const { return cell(iz, ix).status == FStatus::valid; }
  PixelMap F_pixels() const;      // NaN where invalid
  PixelMap width_pixels() const;  // NaN where invalid
  // Median of F over valid cells; NaN when none is valid.
  double median_F() const;
};

}  // namespace umi
