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
#include "umi/distortion.hpp"
#include "umi/maps.hpp"

namespace umi {

struct CMPProfile {
  Point midpoint{0, 0};
  std::vector<double> lags;       // [mm], symmetric
  std::vector<double> intensity;  // mean |R|^2 per lag
  double background = 0;
  bool valid = false;

  double at_zero() const { return intensity[intensity.size() / 2]; }
  // Symmetrized intensity at |lag|, linear interpolation.
  double at(double lag) const;
};

struct ProfileWidth {
  double fwhm = 0;       // full width at half maximum [mm]
  double width_6db = 0;  // full width at a quarter of the maximum [mm]
  bool found = false;
};

struct Region {
  double x0, x1, z0, z1;  // [mm]
};

// Single midpoint and depth.
CMPProfile cmp_profile(const ComplexMatrix2D& r, double x_mid, double max_lag);
// Averaged over every midpoint and depth inside the region.
CMPProfile cmp_profile(const FocusedReflectionMatrix& r, const Region& region, double max_lag);
CMPProfile cmp_profile(const FocusedReflectionMatrix& r, std::size_t ix0, std::size_t ix1, std::size_t iz0,
                       std::size_t iz1, double max_lag);

// Widths of the background-subtracted profile.
ProfileWidth profile_width(const CMPProfile& profile);

// 10 log10(I(0) / I(dx0)); +inf when I(dx0) is zero.
double contrast(const CMPProfile& profile, double dx0);

struct FMapOptions {
  double cell_width = 3.0;   // [mm]
  double cell_height = 5.0;  // [mm]
  double max_lag = 5.0;      // [mm]
  double min_prominence_db = 3.0;
  double clip = 1.1;
};

// Cells without a reference get F = 1 when valid, which is how a reference map is built.
FMap f_map(const FocusedReflectionMatrix& r, const FMap* reference, const FMapOptions& options = {});

struct AreaMetrics {
  double F = 0;
  double fwhm = 0;
  double width_6db = 0;
  double contrast_db = 0;
  double ideal_resolution = 0;
  bool valid = false;
};

AreaMetrics area_metrics(const FocusedReflectionMatrix& r, const FocusedReflectionMatrix& reference,
                         const Region& area, const AcquisitionConfig& config, const FMapOptions& options = {});

PixelMap confocal_image(const FocusedReflectionMatrix& r);

struct IsoplanaticDecomposition {
  std::vector<double> singular_values;  // s_p, descending
  Eigen::MatrixXcd a_in;                // columns A_in,p
  Eigen::MatrixXcd a_out;               // columns A_out,p
  Eigen::MatrixXcd patch_vectors;       // columns I_p over the kept window centers
  std::vector<std::size_t> kept;        // atlas window indices
  std::vector<std::size_t> dropped;
  std::vector<PixelMap> patch_maps;     // |I_p| rendered on the image grid
  double entropy = 0;
};

double spectrum_entropy(std::span<const double> s);

IsoplanaticDecomposition isoplanatic_svd(const AberrationAtlas& atlas, const ImageGrid& grid,
                                         std::size_t max_maps = 4);

}  // namespace umi
