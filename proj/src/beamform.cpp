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

#include "umi/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace umi {

namespace {
constexpr double kPi = std::numbers::pi;

Axis focused_axis(const std::vector<double>& x) { return Axis{Basis::focused_x, x}; }

bool in_trace(double f, int nt) { return f >= 0 && f < static_cast<double>(nt - 1); }
}  // namespace

ComplexMatrix2D FocusedReflectionMatrix::slice(std::size_t iz) const {
  return ComplexMatrix2D{slices.at(iz), focused_axis(grid.x), focused_axis(grid.x), grid.z.at(iz)};
}

bool FocusedReflectionMatrix::masked(std::size_t i_out, std::size_t i_in) const {
  return std::abs(grid.x[i_out] - grid.x[i_in]) > mask_bound;
}

FocusedReflectionMatrix das_focus(const AnalyticCube& analytic, const ImageGrid& grid,
                                  const AcquisitionConfig& config, const Apodization& apodization) {
  config.validate();
  grid.validate();
  const int nu = config.num_elements;
  const int nth = static_cast<int>(config.transmit_angles.size());
  if (analytic.num_elements != nu || analytic.num_angles != nth) {
    throw Error(ErrorKind::invalid_input, "das_focus: cube dimensions do not match the configuration");
  }
  if (!(apodization.f_number > 0)) throw Error(ErrorKind::invalid_input, "das_focus: f-number must be > 0");

  const std::size_t nx = grid.nx(), nz = grid.nz();
  const double c = config.speed_mm_per_s();
  const double fs = analytic.sampling_frequency;
  const double t_start = analytic.start_time;
  const int nt = analytic.num_samples;
  const auto elements = config.element_positions();

  FocusedReflectionMatrix out;
  out.grid = grid;
  out.variant = MatrixVariant::raw;
  out.mask_bound = nth >= 2 ? aliasing_bound(config) : std::numeric_limits<double>::infinity();
  out.slices.resize(nz);
  const auto band = static_cast<long>(std::floor(out.mask_bound / grid.dx + 1e-9));

  std::uint64_t dropped = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : dropped)
  for (std::size_t iz = 0; iz < nz; ++iz) {
    const double z = grid.z[iz];
    const double half_aperture = z / (2 * apodization.f_number);
    std::vector<cdouble> acc(nx * nx, cdouble(0, 0));
    for (int th = 0; th < nth; ++th) {
      const double s = std::sin(config.transmit_angles[th]);
      const double co = std::cos(config.transmit_angles[th]);
      // sample index of the transmit leg is affine in x_in: a + b j
      const double a = ((grid.x[0] * s + z * co) / c - t_start) * fs;
      const double b = grid.dx * s / c * fs;
      for (int u = 0; u < nu; ++u) {
        const cdouble* tr = analytic.trace(u, th);
        const double ue = elements[u];
        for (std::size_t io = 0; io < nx; ++io) {
          const double d = grid.x[io] - ue;
          if (std::abs(d) > half_aperture) continue;
          const double fo = std::sqrt(d * d + z * z) / c * fs;
          const long jlo = std::max(0L, static_cast<long>(io) - band);
          const long jhi = std::min(static_cast<long>(nx) - 1, static_cast<long>(io) + band);
          cdouble* row = acc.data() + io * nx;
          // Only j with 0 <= f < nt - 1 read inside the trace.
          long j0 = jlo, j1 = jhi;
          const double f_lo = a + fo + b * static_cast<double>(jlo);
          const double f_hi = a + fo + b * static_cast<double>(jhi);
          if (f_lo < 0 || f_hi < 0 || f_lo >= nt - 1 || f_hi >= nt - 1) {
            while (j0 <= j1 && !in_trace(a + b * j0 + fo, nt)) ++j0;
            while (j1 >= j0 && !in_trace(a + b * j1 + fo, nt)) --j1;
            dropped += static_cast<std::uint64_t>((jhi - jlo + 1) - std::max(0L, j1 - j0 + 1));
          }
          for (long j = j0; j <= j1; ++j) {
            const double f = a + b * j + fo;
            const long i0 = static_cast<long>(f);
            const double w = f - static_cast<double>(i0);
            row[j] += tr[i0] + w * (tr[i0 + 1] - tr[i0]);
          }
        }
      }
    }
    Eigen::MatrixXcd m(nx, nx);
    for (std::size_t io = 0; io < nx; ++io) {
      for (std::size_t j = 0; j < nx; ++j) m(io, j) = std::conj(acc[io * nx + j]);
    }
    out.slices[iz] = std::move(m);
  }
  out.dropped = dropped;
  return out;
}

FocusedReflectionMatrix confocal_filter(const FocusedReflectionMatrix& raw, const PixelMap& lc_map) {
  const std::size_t nx = raw.grid.nx(), nz = raw.grid.nz();
  if (lc_map.nx != nx || lc_map.nz != nz) {
    throw Error(ErrorKind::invalid_input, "confocal_filter: l_c map does not match the grid");
  }
  for (double v : lc_map.values) {
    if (!(v > 0)) throw Error(ErrorKind::invalid_input, "confocal_filter: l_c must be > 0 everywhere");
  }
  FocusedReflectionMatrix out = raw;
  out.variant = MatrixVariant::filtered;
#pragma omp parallel for schedule(static)
  for (std::size_t iz = 0; iz < nz; ++iz) {
    Eigen::MatrixXcd& m = out.slices[iz];
    for (std::size_t j = 0; j < nx; ++j) {
      for (std::size_t i = 0; i < nx; ++i) {
        if (i == j) continue;
        const double lc = lc_map.at(iz, (i + j) / 2);
        const double d = raw.grid.x[i] - raw.grid.x[j];
        m(i, j) *= std::exp(-d * d / (2 * lc * lc));
      }
    }
  }
  return out;
}

int default_filter_factor(int step) {
  static constexpr int n[] = {10, 10, 8, 6};
  if (step < 1) return n[0];
  if (step > 4) return n[3];
  return n[step - 1];
}

PixelMap adaptive_lc(const FMap& f_map, const ImageGrid& grid, const AcquisitionConfig& config, int step) {
  return adaptive_lc(f_map, grid, config, static_cast<double>(default_filter_factor(step)));
}

PixelMap adaptive_lc(const FMap& f_map, const ImageGrid& grid, const AcquisitionConfig& config,
                     double filter_factor) {
  const std::size_t nx = grid.nx(), nz = grid.nz();
  const bool have_map = f_map.nx == nx && f_map.nz == nz && !f_map.cells.empty();
  PixelMap lc(nx, nz, 0.0);
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      if (have_map && f_map.valid(iz, ix)) {
        lc.at(iz, ix) = f_map.cell(iz, ix).width;
      } else {
        lc.at(iz, ix) = filter_factor * ideal_resolution({grid.x[ix], grid.z[iz]}, config);
      }
    }
  }
  return lc;
}

PropagationOperator PropagationOperator::select_rows(std::span<const std::size_t> rows) const {
  PropagationOperator out;
  out.kind = kind;
  out.matrix.depth = matrix.depth;
  out.matrix.col_axis = matrix.col_axis;
  out.matrix.row_axis.basis = matrix.row_axis.basis;
  out.matrix.values.resize(static_cast<Eigen::Index>(rows.size()), matrix.values.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.matrix.values.row(static_cast<Eigen::Index>(r)) = matrix.values.row(static_cast<Eigen::Index>(rows[r]));
    out.matrix.row_axis.coords.push_back(matrix.row_axis.coords.at(rows[r]));
  }
  return out;
}

PropagationOperator build_T0(std::span<const double> x_axis, std::span<const double> k_axis) {
  if (x_axis.empty() || k_axis.empty()) throw Error(ErrorKind::invalid_input, "build_T0: empty axis");
  PropagationOperator op;
  op.kind = OperatorKind::T0;
  op.matrix.row_axis = Axis{Basis::plane_wave_k, {k_axis.begin(), k_axis.end()}};
  op.matrix.col_axis = Axis{Basis::focused_x, {x_axis.begin(), x_axis.end()}};
  op.matrix.values.resize(static_cast<Eigen::Index>(k_axis.size()), static_cast<Eigen::Index>(x_axis.size()));
  for (std::size_t j = 0; j < x_axis.size(); ++j) {
    for (std::size_t i = 0; i < k_axis.size(); ++i) {
      op.matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::polar(1.0, k_axis[i] * x_axis[j]);
    }
  }
  return op;
}

PropagationOperator build_P(double z, std::span<const double> k_axis, double kc) {
  if (!(z > 0)) throw Error(ErrorKind::geometry, "build_P: z must be > 0");
  PropagationOperator op;
  op.kind = OperatorKind::P;
  op.matrix.row_axis = Axis{Basis::plane_wave_k, {k_axis.begin(), k_axis.end()}};
  op.matrix.col_axis = op.matrix.row_axis;
  op.matrix.depth = z;
  const auto n = static_cast<Eigen::Index>(k_axis.size());
  op.matrix.values = Eigen::MatrixXcd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double k = k_axis[static_cast<std::size_t>(i)];
    if (std::abs(k) <= kc) op.matrix.values(i, i) = std::polar(1.0, std::sqrt(kc * kc - k * k) * z);
  }
  return op;
}

namespace {
// Zero-padded k grid: the lag kernel repeats every kPad * n * dx instead of n * dx.
constexpr std::size_t kPad = 4;
}  // namespace

std::vector<double> transducer_axis(std::span<const double> x_axis) {
  if (x_axis.size() < 2) throw Error(ErrorKind::invalid_input, "transducer_axis: x axis needs two points");
  const std::size_t n = x_axis.size(), m = kPad * n, left = (m - n) / 2;
  const double dx = x_axis[1] - x_axis[0];
  std::vector<double> u(m);
  for (std::size_t i = 0; i < m; ++i) u[i] = x_axis[0] + (static_cast<double>(i) - static_cast<double>(left)) * dx;
  for (std::size_t j = 0; j < n; ++j) u[left + j] = x_axis[j];
  return u;
}

PropagationOperator build_Q0(double z, std::span<const double> x_axis, const AcquisitionConfig& config) {
  if (!(z > 0)) throw Error(ErrorKind::geometry, "build_Q0: z must be > 0");
  if (x_axis.size() < 2) throw Error(ErrorKind::invalid_input, "build_Q0: x axis needs two points");
  const std::size_t n = x_axis.size();
  const double dx = x_axis[1] - x_axis[0];
  const std::size_t m_pad = kPad * n;
  const long left = static_cast<long>((m_pad - n) / 2);
  const auto k = symmetric_k_axis(m_pad, dx);
  const double kc = config.wavenumber();
  std::vector<cdouble> p(m_pad);
  for (std::size_t i = 0; i < m_pad; ++i) {
    p[i] = std::abs(k[i]) <= kc ? std::polar(1.0, std::sqrt(kc * kc - k[i] * k[i]) * z) : cdouble(0, 0);
  }
  std::vector<cdouble> twiddle(m_pad);
  for (std::size_t q = 0; q < m_pad; ++q) twiddle[q] = std::polar(1.0, 2 * std::numbers::pi * q / m_pad);
  const long centre = static_cast<long>(m_pad / 2);
  const long period = static_cast<long>(m_pad);
  // (T0^H (P o T0) / M)(u, x) depends on d = x - u (in samples) only; u spans one full period.
  const long d_min = -(period - 1 - left), d_max = static_cast<long>(n) - 1 + left;
  std::vector<cdouble> lag(static_cast<std::size_t>(d_max - d_min + 1));
  for (long d = d_min; d <= d_max; ++d) {
    cdouble s(0, 0);
    for (std::size_t i = 0; i < m_pad; ++i) {
      if (p[i] == cdouble(0, 0)) continue;
      long q = ((static_cast<long>(i) - centre) * d) % period;
      if (q < 0) q += period;
      s += p[i] * twiddle[static_cast<std::size_t>(q)];
    }
    lag[static_cast<std::size_t>(d - d_min)] = s / static_cast<double>(m_pad);
  }
  PropagationOperator op;
  op.kind = OperatorKind::Q0;
  op.matrix.row_axis = Axis{Basis::transducer_u, transducer_axis(x_axis)};
  op.matrix.col_axis = Axis{Basis::focused_x, {x_axis.begin(), x_axis.end()}};
  op.matrix.depth = z;
  op.matrix.values.resize(period, static_cast<Eigen::Index>(n));
  for (long j = 0; j < static_cast<long>(n); ++j) {
    for (long i = 0; i < period; ++i) op.matrix.values(i, j) = lag[static_cast<std::size_t>(j - (i - left) - d_min)];
  }
  return op;
}

PropagationOperator fresnel_Q0(double z, std::span<const double> x_axis, std::span<const double> u_axis,
                               const AcquisitionConfig& config) {
  if (!(z > 0)) throw Error(ErrorKind::geometry, "fresnel_Q0: z must be > 0");
  const double kc = config.wavenumber();
  PropagationOperator op;
  op.kind = OperatorKind::Q0;
  op.matrix.row_axis = Axis{Basis::transducer_u, {u_axis.begin(), u_axis.end()}};
  op.matrix.col_axis = Axis{Basis::focused_x, {x_axis.begin(), x_axis.end()}};
  op.matrix.depth = z;
  op.matrix.values.resize(static_cast<Eigen::Index>(u_axis.size()), static_cast<Eigen::Index>(x_axis.size()));
  for (std::size_t j = 0; j < x_axis.size(); ++j) {
    for (std::size_t i = 0; i < u_axis.size(); ++i) {
      const double d = x_axis[j] - u_axis[i];
      op.matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::polar(1.0, kc * z + kc * d * d / (2 * z) - kPi / 4);
    }
  }
  return op;
}

ComplexMatrix2D project(const ComplexMatrix2D& focused, Side side, const PropagationOperator& op) {
  focused.validate();
  op.matrix.validate();
  require_basis(op.matrix.col_axis, Basis::focused_x, "project: operator columns");
  if (op.kind == OperatorKind::P) throw Error(ErrorKind::basis_mismatch, "project: P is not a basis change");
  if (op.matrix.depth && focused.depth && std::abs(*op.matrix.depth - *focused.depth) > 1e-9) {
    throw Error(ErrorKind::invalid_input, "project: operator depth does not match matrix depth");
  }
  ComplexMatrix2D out;
  out.depth = focused.depth;
  if (side == Side::output) {
    require_basis(focused.row_axis, Basis::focused_x, "project: output axis");
    if (focused.values.rows() != op.matrix.values.cols()) {
      throw Error(ErrorKind::invalid_input, "project: output axis length mismatch");
    }
    out.values.noalias() = op.matrix.values * focused.values;
    out.row_axis = op.matrix.row_axis;
    out.col_axis = focused.col_axis;
  } else {
    require_basis(focused.col_axis, Basis::focused_x, "project: input axis");
    if (focused.values.cols() != op.matrix.values.cols()) {
      throw Error(ErrorKind::invalid_input, "project: input axis length mismatch");
    }
    out.values.noalias() = focused.values * op.matrix.values.transpose();
    out.row_axis = focused.row_axis;
    out.col_axis = op.matrix.row_axis;
  }
  return out;
}

DualReflectionMatrix project(const FocusedReflectionMatrix& focused, Side side,
                             std::span<const PropagationOperator> ops) {
  const std::size_t nz = focused.slices.size();
  if (ops.size() != 1 && ops.size() != nz) {
    throw Error(ErrorKind::invalid_input, "project: need one operator or one per depth");
  }
  DualReflectionMatrix out;
  out.orientation = side;
  out.slices.resize(nz);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t iz = 0; iz < nz; ++iz) {
    out.slices[iz] = project(focused.slice(iz), side, ops.size() == 1 ? ops[0] : ops[iz]);
  }
  return out;
}

}  // namespace umi
