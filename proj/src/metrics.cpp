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

#include "umi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

namespace umi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
  return m;
}

struct LagAccumulator {
  long max_lag;
  std::vector<double> sum;
  std::vector<double> count;

  explicit LagAccumulator(long l) : max_lag(l), sum(2 * l + 1, 0.0), count(2 * l + 1, 0.0) {}

  void add(const Eigen::MatrixXcd& m, long mid, double dx, double mask_bound) {
    const long n = m.rows();
    for (long lag = 0; lag <= max_lag; ++lag) {
      if (lag * dx > mask_bound) break;
      const long up = (lag + 1) / 2, down = lag / 2;
      // +lag: x_out - x_in = lag dx
      long o = mid + up, i = mid - down;
      if (o >= 0 && o < n && i >= 0 && i < n) {
        sum[max_lag + lag] += std::norm(m(o, i));
        count[max_lag + lag] += 1;
      }
      if (lag == 0) continue;
      o = mid - down;
      i = mid + up;
      if (o >= 0 && o < n && i >= 0 && i < n) {
        sum[max_lag - lag] += std::norm(m(o, i));
        count[max_lag - lag] += 1;
      }
    }
  }

  CMPProfile finish(Point midpoint, double dx) const {
    CMPProfile p;
    p.midpoint = midpoint;
    const std::size_t n = sum.size();
    p.lags.resize(n);
    p.intensity.resize(n);
    std::vector<double> outer;
    bool any = false;
    for (std::size_t k = 0; k < n; ++k) {
      const long lag = static_cast<long>(k) - max_lag;
      p.lags[k] = lag * dx;
      p.intensity[k] = count[k] > 0 ? sum[k] / count[k] : kNaN;
      if (count[k] > 0) any = true;
      if (count[k] > 0 && std::abs(lag) >= 0.8 * max_lag) outer.push_back(p.intensity[k]);
    }
    p.background = outer.empty() ? 0.0 : median_of(outer);
    p.valid = any && count[max_lag] > 0;
    return p;
  }
};

long lag_samples(double max_lag, double dx) {
  return std::max(1L, static_cast<long>(std::floor(max_lag / dx + 1e-9)));
}

double crossing(const CMPProfile& p, double level, int dir, bool& found) {
  const long c = static_cast<long>(p.intensity.size() / 2);
  const double dx = p.lags.size() > 1 ? p.lags[1] - p.lags[0] : 1.0;
  double prev = p.at_zero() - p.background;
  for (long k = 1; k <= c; ++k) {
    const double v = p.intensity[c + dir * k];
    if (std::isnan(v)) break;
    const double cur = v - p.background;
    if (cur <= level) {
      found = true;
      const double t = (prev - level) / (prev - cur);
      return (k - 1 + t) * dx;
    }
    prev = cur;
  }
  found = false;
  return c * dx;
}

}  // namespace

double CMPProfile::at(double lag) const {
  const double a = std::abs(lag);
  const long c = static_cast<long>(intensity.size() / 2);
  const double dx = lags.size() > 1 ? lags[1] - lags[0] : 1.0;
  const double f = a / dx;
  const long k = static_cast<long>(std::floor(f));
  if (k >= c) return kNaN;
  const double t = f - k;
  auto sym = [&](long j) {
    const double p = intensity[c + j], m = intensity[c - j];
    if (std::isnan(p)) return m;
    if (std::isnan(m)) return p;
    return 0.5 * (p + m);
  };
  return sym(k) * (1 - t) + sym(k + 1) * t;
}

CMPProfile cmp_profile(const ComplexMatrix2D& r, double x_mid, double max_lag) {
  require_basis(r.row_axis, Basis::focused_x, "cmp_profile");
  require_basis(r.col_axis, Basis::focused_x, "cmp_profile");
  const auto& x = r.row_axis.coords;
  if (x.size() < 2) throw Error(ErrorKind::invalid_input, "cmp_profile: axis too short");
  const double dx = x[1] - x[0];
  if (x_mid < x.front() - 0.5 * dx || x_mid > x.back() + 0.5 * dx) {
    throw Error(ErrorKind::geometry, "cmp_profile: midpoint outside the grid");
  }
  const long mid = std::lround((x_mid - x.front()) / dx);
  LagAccumulator acc(lag_samples(max_lag, dx));
  acc.add(r.values, mid, dx, std::numeric_limits<double>::infinity());
  return acc.finish({x[static_cast<std::size_t>(mid)], r.depth.value_or(0.0)}, dx);
}

CMPProfile cmp_profile(const FocusedReflectionMatrix& r, std::size_t ix0, std::size_t ix1, std::size_t iz0,
                       std::size_t iz1, double max_lag) {
  const double dx = r.grid.dx;
  LagAccumulator acc(lag_samples(max_lag, dx));
  for (std::size_t iz = iz0; iz < iz1; ++iz) {
    for (std::size_t ix = ix0; ix < ix1; ++ix) acc.add(r.slices[iz], static_cast<long>(ix), dx, r.mask_bound);
  }
  const std::size_t cx = (ix0 + ix1) / 2, cz = (iz0 + iz1) / 2;
  return acc.finish({r.grid.x[std::min(cx, r.grid.nx() - 1)], r.grid.z[std::min(cz, r.grid.nz() - 1)]}, dx);
}

CMPProfile cmp_profile(const FocusedReflectionMatrix& r, const Region& region, double max_lag) {
  std::size_t ix0 = r.grid.nx(), ix1 = 0, iz0 = r.grid.nz(), iz1 = 0;
  for (std::size_t i = 0; i < r.grid.nx(); ++i) {
    if (r.grid.x[i] >= region.x0 && r.grid.x[i] <= region.x1) {
      ix0 = std::min(ix0, i);
      ix1 = std::max(ix1, i + 1);
    }
  }
  for (std::size_t i = 0; i < r.grid.nz(); ++i) {
    if (r.grid.z[i] >= region.z0 && r.grid.z[i] <= region.z1) {
      iz0 = std::min(iz0, i);
      iz1 = std::max(iz1, i + 1);
    }
  }
  if (ix1 <= ix0 || iz1 <= iz0) throw Error(ErrorKind::geometry, "cmp_profile: region outside the grid");
  return cmp_profile(r, ix0, ix1, iz0, iz1, max_lag);
}

ProfileWidth profile_width(const CMPProfile& profile) {
  ProfileWidth w;
  if (!profile.valid) return w;
  const double peak = profile.at_zero() - profile.background;
  if (!(peak > 0)) return w;
  bool f1 = false, f2 = false, f3 = false, f4 = false;
  w.fwhm = crossing(profile, 0.5 * peak, +1, f1) + crossing(profile, 0.5 * peak, -1, f2);
  w.width_6db = crossing(profile, 0.25 * peak, +1, f3) + crossing(profile, 0.25 * peak, -1, f4);
  w.found = f1 && f2;
  return w;
}

double contrast(const CMPProfile& profile, double dx0) {
  const double i0 = profile.at_zero();
  const double i1 = profile.at(dx0);
  if (std::isnan(i1)) throw Error(ErrorKind::invalid_input, "contrast: resolution length outside the lag axis");
  if (i1 == 0) return std::numeric_limits<double>::infinity();
  return 10 * std::log10(i0 / i1);
}

PixelMap FMap::F_pixels() const {
  PixelMap m(nx, nz, kNaN);
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      if (valid(iz, ix)) m.at(iz, ix) = cell(iz, ix).F;
    }
  }
  return m;
}

PixelMap FMap::width_pixels() const {
  PixelMap m(nx, nz, kNaN);
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      if (valid(iz, ix)) m.at(iz, ix) = cell(iz, ix).width;
    }
  }
  return m;
}

double FMap::median_F() const {
  std::vector<double> v;
  for (const auto& c : cells) {
    if (c.status == FStatus::valid) v.push_back(c.F);
  }
  return median_of(v);
}

FMap f_map(const FocusedReflectionMatrix& r, const FMap* reference, const FMapOptions& options) {
  const std::size_t nx = r.grid.nx(), nz = r.grid.nz();
  FMap map;
  map.nx = nx;
  map.nz = nz;
  const std::size_t ncx = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(nx * r.grid.dx / options.cell_width)));
  const std::size_t ncz = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(nz * r.grid.dz / options.cell_height)));
  if (reference && (reference->nx != nx || reference->nz != nz || reference->cells.size() != ncx * ncz)) {
    throw Error(ErrorKind::invalid_input, "f_map: reference layout does not match");
  }
  map.cells.resize(ncx * ncz);
  map.cell_of_pixel.assign(nx * nz, 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < ncx * ncz; ++c) {
    const std::size_t cz = c / ncx, cx = c % ncx;
    FCell cell;
    cell.ix0 = cx * nx / ncx;
    cell.ix1 = (cx + 1) * nx / ncx;
    cell.iz0 = cz * nz / ncz;
    cell.iz1 = (cz + 1) * nz / ncz;
    const CMPProfile p = cmp_profile(r, cell.ix0, cell.ix1, cell.iz0, cell.iz1, options.max_lag);
    const ProfileWidth w = profile_width(p);
    const double i0 = p.valid ? p.at_zero() : 0.0;
    cell.prominence_db = (i0 > 0 && p.background > 0) ? 10 * std::log10(i0 / p.background)
                                                       : (i0 > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    cell.width = w.fwhm;
    cell.width_6db = w.width_6db;
    if (!w.found || !(i0 > p.background)) {
      cell.status = FStatus::no_peak;
    } else if (cell.prominence_db < options.min_prominence_db) {
      cell.status = FStatus::low_snr;
    } else {
      cell.status = FStatus::valid;
    }
    if (reference) {
      const FCell& ref = reference->cells[c];
      cell.reference_width = ref.width;
      if (cell.status == FStatus::valid && ref.status != FStatus::valid) cell.status = FStatus::low_snr;
      cell.F = cell.status == FStatus::valid ? std::min(options.clip, ref.width / cell.width) : kNaN;
    } else {
      cell.reference_width = cell.width;
      cell.F = cell.status == FStatus::valid ? 1.0 : kNaN;
    }
    map.cells[c] = cell;
  }
  for (std::size_t c = 0; c < map.cells.size(); ++c) {
    const FCell& cell = map.cells[c];
    for (std::size_t iz = cell.iz0; iz < cell.iz1; ++iz) {
      for (std::size_t ix = cell.ix0; ix < cell.ix1; ++ix) map.cell_of_pixel[iz * nx + ix] = static_cast<int>(c);
    }
  }
  return map;
}

AreaMetrics area_metrics(const FocusedReflectionMatrix& r, const FocusedReflectionMatrix& reference,
                         const Region& area, const AcquisitionConfig& config, const FMapOptions& options) {
  AreaMetrics m;
  const CMPProfile p = cmp_profile(r, area, options.max_lag);
  const CMPProfile pr = cmp_profile(reference, area, options.max_lag);
  const ProfileWidth w = profile_width(p);
  const ProfileWidth wr = profile_width(pr);
  m.fwhm = w.fwhm;
  m.width_6db = w.width_6db;
  m.ideal_resolution = ideal_resolution({0.5 * (area.x0 + area.x1), 0.5 * (area.z0 + area.z1)}, config);
  m.contrast_db = p.valid ? contrast(p, m.ideal_resolution) : kNaN;
  m.valid = w.found && wr.found;
  m.F = m.valid ? std::min(options.clip, wr.fwhm / w.fwhm) : kNaN;
  return m;
}

PixelMap confocal_image(const FocusedReflectionMatrix& r) {
  const std::size_t nx = r.grid.nx(), nz = r.grid.nz();
  PixelMap img(nx, nz, 0.0);
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      img.at(iz, ix) = std::norm(r.slices[iz](static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(ix)));
    }
  }
  return img;
}

double spectrum_entropy(std::span<const double> s) {
  double total = 0;
  for (double v : s) total += v;
  if (!(total > 0)) return 0.0;
  double h = 0;
  for (double v : s) {
    const double p = v / total;
    if (p > 0) h -= p * std::log2(p);
  }
  return h;
}

IsoplanaticDecomposition isoplanatic_svd(const AberrationAtlas& atlas, const ImageGrid& grid,
                                         std::size_t max_maps) {
  IsoplanaticDecomposition dec;
  const std::size_t nw = atlas.centers.size();
  if (atlas.h_in.size() != nw || atlas.h_out.size() != nw || atlas.valid.size() != nw) {
    throw Error(ErrorKind::invalid_input, "isoplanatic_svd: atlas arrays disagree in length");
  }
  for (std::size_t w = 0; w < nw; ++w) (atlas.valid[w] ? dec.kept : dec.dropped).push_back(w);
  if (dec.kept.empty()) return dec;
  const auto n_in = atlas.h_in[dec.kept[0]].size();
  const auto n_out = atlas.h_out[dec.kept[0]].size();
  Eigen::MatrixXcd m(n_in + n_out, static_cast<Eigen::Index>(dec.kept.size()));
  for (std::size_t c = 0; c < dec.kept.size(); ++c) {
    const auto& hi = atlas.h_in[dec.kept[c]];
    const auto& ho = atlas.h_out[dec.kept[c]];
    if (hi.size() != n_in || ho.size() != n_out) {
      throw Error(ErrorKind::invalid_input, "isoplanatic_svd: law lengths differ between windows");
    }
    m.col(static_cast<Eigen::Index>(c)) << hi, ho;
  }
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  dec.singular_values.assign(s.data(), s.data() + s.size());
  dec.a_in = svd.matrixU().topRows(n_in);
  dec.a_out = svd.matrixU().bottomRows(n_out);
  dec.patch_vectors = svd.matrixV();
  dec.entropy = spectrum_entropy(dec.singular_values);

  // Bilinear rendering of |I_p| from the window-center lattice to pixels.
  const std::size_t lx = atlas.lattice_nx, lz = atlas.lattice_nz;
  if (lx * lz != nw || lx == 0 || lz == 0) return dec;
  const std::size_t nmaps = std::min<std::size_t>(max_maps, dec.singular_values.size());
  const double cx0 = atlas.centers[0].x;
  const double cz0 = atlas.centers[0].z;
  const double sx = lx > 1 ? atlas.centers[1].x - cx0 : 1.0;
  const double sz = lz > 1 ? atlas.centers[lx].z - cz0 : 1.0;
  for (std::size_t p = 0; p < nmaps; ++p) {
    std::vector<double> lattice(nw, 0.0);
    for (std::size_t c = 0; c < dec.kept.size(); ++c) {
      lattice[dec.kept[c]] = std::abs(dec.patch_vectors(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)));
    }
    PixelMap map(grid.nx(), grid.nz(), 0.0);
    for (std::size_t iz = 0; iz < grid.nz(); ++iz) {
      const double fz = lz > 1 ? std::clamp((grid.z[iz] - cz0) / sz, 0.0, static_cast<double>(lz - 1)) : 0.0;
      const std::size_t z0 = std::min(static_cast<std::size_t>(fz), lz > 1 ? lz - 2 : 0);
      const double tz = lz > 1 ? fz - z0 : 0.0;
      for (std::size_t ix = 0; ix < grid.nx(); ++ix) {
        const double fx = lx > 1 ? std::clamp((grid.x[ix] - cx0) / sx, 0.0, static_cast<double>(lx - 1)) : 0.0;
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), lx > 1 ? lx - 2 : 0);
        const double tx = lx > 1 ? fx - x0 : 0.0;
        const std::size_t x1 = lx > 1 ? x0 + 1 : x0;
        const std::size_t z1 = lz > 1 ? z0 + 1 : z0;
        const double v = (1 - tz) * ((1 - tx) * lattice[z0 * lx + x0] + tx * lattice[z0 * lx + x1]) +
                         tz * ((1 - tx) * lattice[z1 * lx + x0] + tx * lattice[z1 * lx + x1]);
        map.at(iz, ix) = v;
      }
    }
    dec.patch_maps.push_back(std::move(map));
  }
  return dec;
}

}  // namespace umi
