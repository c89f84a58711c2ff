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

#include "umi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace umi {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double a) { return !std::isfinite(a); }), v.end());
  if (v.empty()) return kNaN;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
  return m;
}

double wrap(double a) { return std::remainder(a, 2 * kPi); }

// Median PSF width ratio w / w_ref over valid cells whose centers fall in the window.
double window_width_ratio(const FMap& map, const ImageGrid& grid, const WindowGeometry& w, double fallback) {
  std::vector<double> r;
  for (const FCell& c : map.cells) {
    if (c.status != FStatus::valid || !(c.reference_width > 0)) continue;
    const double cx = 0.5 * (grid.x[c.ix0] + grid.x[c.ix1 - 1]);
    const double cz = 0.5 * (grid.z[c.iz0] + grid.z[c.iz1 - 1]);
    if (std::abs(cx - w.center.x) < w.half_x && std::abs(cz - w.center.z) < w.half_z) {
      r.push_back(c.width / c.reference_width);
    }
  }
  const double m = median_of(r);
  return std::isfinite(m) ? m : fallback;
}

double global_width_ratio(const FMap& map) {
  std::vector<double> r;
  for (const FCell& c : map.cells) {
    if (c.status == FStatus::valid && c.reference_width > 0) r.push_back(c.width / c.reference_width);
  }
  const double m = median_of(r);
  return std::isfinite(m) ? m : 1.0;
}

// Keeps the contiguous span of rows whose energy exceeds floor times the median row energy.
std::vector<std::size_t> energy_rows(const LocalDistortion& local, double floor) {
  const auto n = local.values.rows();
  std::vector<double> e(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) e[static_cast<std::size_t>(i)] = local.values.row(i).squaredNorm();
  const double ref = median_of(e);
  std::vector<std::size_t> keep;
  if (!(ref > 0)) return keep;
  std::size_t lo = e.size(), hi = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e[i] >= floor * ref) {
      lo = std::min(lo, i);
      hi = i;
    }
  }
  for (std::size_t i = lo; i <= hi && lo < e.size(); ++i) keep.push_back(i);
  return keep;
}

struct SubstepOutcome {
  std::vector<AtlasWindow> windows;
  std::size_t valid = 0;
  std::size_t gated = 0;
};

}  // namespace

std::vector<ScheduleStep> table_one_schedule() {
  return {
      {1, 10, 10.0, 20.0, Basis::plane_wave_k, Basis::transducer_u, SvdType::D},
      {2, 10, 7.5, 15.0, Basis::transducer_u, Basis::plane_wave_k, SvdType::D},
      {3, 8, 5.0, 10.0, Basis::plane_wave_k, Basis::transducer_u, SvdType::C_hat},
      {4, 6, 3.0, 7.5, Basis::transducer_u, Basis::plane_wave_k, SvdType::C_hat},
  };
}

void validate_schedule(std::span<const ScheduleStep> schedule) {
  if (schedule.empty()) throw Error(ErrorKind::invalid_input, "schedule: at least one step required");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const ScheduleStep& s = schedule[i];
    if (!(s.filter_factor > 0)) throw Error(ErrorKind::invalid_input, "schedule: filter factor must be > 0");
    if (!(s.half_x > 0) || !(s.half_z > 0)) throw Error(ErrorKind::invalid_input, "schedule: window must be > 0");
    const auto dual = [](Basis b) { return b == Basis::plane_wave_k || b == Basis::transducer_u; };
    if (!dual(s.transmit_basis) || !dual(s.receive_basis)) {
      throw Error(ErrorKind::basis_mismatch, "schedule: bases must be k or u");
    }
    if (i > 0 && (s.half_x > schedule[i - 1].half_x || s.half_z > schedule[i - 1].half_z)) {
      throw Error(ErrorKind::invalid_input, "schedule: window size must not increase across steps");
    }
  }
}

std::vector<WindowGeometry> window_lattice(const ImageGrid& grid, double half_x, double half_z,
                                           std::size_t* lattice_nx, std::size_t* lattice_nz) {
  if (!(half_x > 0) || !(half_z > 0)) throw Error(ErrorKind::invalid_input, "window_lattice: window must be > 0");
  const double sx = half_x / 2, sz = half_z / 2;
  const double x0 = grid.x.front(), x1 = grid.x.back();
  const double z0 = grid.z.front(), z1 = grid.z.back();
  const auto count = [](double a, double b, double s) {
    return static_cast<std::size_t>(std::floor((b - a) / s + 1e-9)) + 1;
  };
  const std::size_t nx = count(x0, x1, sx), nz = count(z0, z1, sz);
  std::vector<WindowGeometry> out;
  out.reserve(nx * nz);
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t ix = 0; ix < nx; ++ix) out.push_back({{x0 + ix * sx, z0 + iz * sz}, half_x, half_z});
  }
  if (lattice_nx) *lattice_nx = nx;
  if (lattice_nz) *lattice_nz = nz;
  return out;
}

double window_weight(const WindowGeometry& w, const Point& r) {
  const double dx = std::abs(r.x - w.center.x), dz = std::abs(r.z - w.center.z);
  if (!(dx < w.half_x) || !(dz < w.half_z)) return 0.0;
  const double cx = std::cos(kPi * dx / (2 * w.half_x));
  const double cz = std::cos(kPi * dz / (2 * w.half_z));
  return cx * cx * cz * cz;
}

FocusReference build_focus_reference(const ImageGrid& grid, const AcquisitionConfig& config,
                                     const PipelineOptions& options, std::uint64_t seed) {
  const PhantomSpec phantom = PhantomSpec::speckle(grid, seed);
  const SimulationResult sim = synthesize_raw(phantom, AberratorSpec{}, PulseSpec::from_config(config), config);
  FocusReference ref;
  ref.matrix = das_focus(analytic_signal(sim.rf), grid, config, options.apodization);
  ref.map = f_map(ref.matrix, nullptr, options.fmap);
  return ref;
}

PropagationOperator build_estimator(const PropagationOperator& geom, std::span<const AberrationLaw> laws) {
  if (laws.empty() || laws.size() > 2) throw Error(ErrorKind::invalid_input, "build_estimator: one or two laws");
  const bool kind_ok = (geom.kind == OperatorKind::Q0 && geom.dual_basis() == Basis::transducer_u) ||
                       (geom.kind == OperatorKind::T0 && geom.dual_basis() == Basis::plane_wave_k);
  if (!kind_ok) throw Error(ErrorKind::basis_mismatch, "build_estimator: geometry must be Q0 or T0");
  PropagationOperator out = geom;
  out.kind = laws.size() == 1 ? OperatorKind::Q1 : OperatorKind::Q2;
  for (const AberrationLaw& law : laws) {
    if (law.basis != geom.dual_basis()) throw Error(ErrorKind::basis_mismatch, "build_estimator: law basis");
    const Eigen::VectorXcd h = law.axis == geom.matrix.row_axis.coords
                                   ? law.phase
                                   : interpolate_law(law, geom.matrix.row_axis.coords);
    out.matrix.values = h.asDiagonal() * out.matrix.values;
  }
  return out;
}

namespace {

void check_pair(const FocusedReflectionMatrix& raw, std::span<const PropagationOperator> g0,
                std::span<const PropagationOperator> g1) {
  const std::size_t nz = raw.slices.size();
  if (g0.size() != g1.size() || (g0.size() != 1 && g0.size() != nz)) {
    throw Error(ErrorKind::invalid_input, "correction: need one operator pair or one per depth");
  }
  for (std::size_t i = 0; i < g0.size(); ++i) {
    const auto& a = g0[i].matrix.values;
    const auto& b = g1[i].matrix.values;
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() != static_cast<Eigen::Index>(raw.grid.nx())) {
      throw Error(ErrorKind::invalid_input, "correction: operator dimensions do not match");
    }
    if (g0[i].depth() && g1[i].depth() && std::abs(*g0[i].depth() - *g1[i].depth()) > 1e-9) {
      throw Error(ErrorKind::invalid_input, "correction: operator depths differ");
    }
    if (g0.size() == nz && g0[i].depth() && std::abs(*g0[i].depth() - raw.grid.z[i]) > 1e-9) {
      throw Error(ErrorKind::invalid_input, "correction: operator depth does not match the slice");
    }
  }
}

}  // namespace

FocusedReflectionMatrix apply_output_correction(const FocusedReflectionMatrix& raw,
                                                std::span<const PropagationOperator> geom0,
                                                std::span<const PropagationOperator> geom1) {
  check_pair(raw, geom0, geom1);
  FocusedReflectionMatrix out = raw;
  out.variant = MatrixVariant::corrected;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t iz = 0; iz < raw.slices.size(); ++iz) {
    const std::size_t k = geom0.size() == 1 ? 0 : iz;
    const Eigen::MatrixXcd m = geom1[k].matrix.values.adjoint() * geom0[k].matrix.values;
    out.slices[iz].noalias() = m * raw.slices[iz];
  }
  return out;
}

FocusedReflectionMatrix apply_input_correction(const FocusedReflectionMatrix& raw,
                                               std::span<const PropagationOperator> geom0,
                                               std::span<const PropagationOperator> geom1) {
  check_pair(raw, geom0, geom1);
  FocusedReflectionMatrix out = raw;
  out.variant = MatrixVariant::corrected;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t iz = 0; iz < raw.slices.size(); ++iz) {
    const std::size_t k = geom0.size() == 1 ? 0 : iz;
    const Eigen::MatrixXcd m = geom0[k].matrix.values.transpose() * geom1[k].matrix.values.conjugate();
    out.slices[iz].noalias() = raw.slices[iz] * m;
  }
  return out;
}

FocusedReflectionMatrix stitch_windows(std::span<const FocusedReflectionMatrix> per_window,
                                       std::span<const WindowGeometry> windows,
                                       const FocusedReflectionMatrix& previous, Side side, std::size_t* uncovered) {
  if (per_window.size() != windows.size()) throw Error(ErrorKind::invalid_input, "stitch_windows: size mismatch");
  const ImageGrid& grid = previous.grid;
  const std::size_t nx = grid.nx(), nz = grid.nz();
  for (const auto& m : per_window) {
    if (m.slices.size() != nz) throw Error(ErrorKind::invalid_input, "stitch_windows: depth count mismatch");
  }
  FocusedReflectionMatrix out = previous;
  std::size_t missing = 0;
  for (std::size_t iz = 0; iz < nz; ++iz) {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(nx), static_cast<Eigen::Index>(nx));
    std::vector<double> total(nx, 0.0);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (std::abs(grid.z[iz] - windows[w].center.z) >= windows[w].half_z) continue;
      for (std::size_t i = 0; i < nx; ++i) {
        const double wt = window_weight(windows[w], {grid.x[i], grid.z[iz]});
        if (wt == 0) continue;
        total[i] += wt;
        const auto idx = static_cast<Eigen::Index>(i);
        if (side == Side::output) {
          acc.row(idx) += wt * per_window[w].slices[iz].row(idx);
        } else {
          acc.col(idx) += wt * per_window[w].slices[iz].col(idx);
        }
      }
    }
    for (std::size_t i = 0; i < nx; ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (total[i] > 0) {
        if (side == Side::output) {
          out.slices[iz].row(idx) = acc.row(idx) / total[i];
        } else {
          out.slices[iz].col(idx) = acc.col(idx) / total[i];
        }
      } else {
        ++missing;
      }
    }
  }
  if (uncovered) *uncovered = missing;
  return out;
}

PropagationOperator full_operator(Basis basis, double z, const ImageGrid& grid, const AcquisitionConfig& config) {
  if (basis == Basis::transducer_u) return build_Q0(z, grid.x, config);
  if (basis == Basis::plane_wave_k) {
    PropagationOperator op = build_T0(grid.x, symmetric_k_axis(grid.nx(), grid.dx));
    op.matrix.values /= std::sqrt(static_cast<double>(grid.nx()));
    return op;
  }
  throw Error(ErrorKind::basis_mismatch, "full_operator: basis must be k or u");
}

std::vector<std::size_t> estimation_rows(Basis basis, Side side, const ImageGrid& grid,
                                         const AcquisitionConfig& config, const PipelineOptions& options) {
  std::vector<std::size_t> rows;
  if (basis == Basis::transducer_u) {
    const double edge = 0.5 * config.aperture() + 1e-9;
    const auto u = transducer_axis(grid.x);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (std::abs(u[i]) > edge) continue;
      if (seen++ % std::max<std::size_t>(1, options.u_row_stride) == 0) rows.push_back(i);
    }
  } else if (basis == Basis::plane_wave_k) {
    double beta = std::atan(1.0 / (2 * options.apodization.f_number));
    if (side == Side::input) {
      beta = 0;
      for (double t : config.transmit_angles) beta = std::max(beta, std::abs(t));
    }
    const double kmax = options.k_band_margin * config.wavenumber() * std::sin(beta);
    const auto k = symmetric_k_axis(grid.nx(), grid.dx);
    const std::size_t c = grid.nx() / 2;
    const std::size_t stride = std::max<std::size_t>(1, options.k_row_stride);
    // Rows placed symmetrically about k = 0.
    for (std::size_t i = 0; i < k.size(); ++i) {
      const std::size_t off = i > c ? i - c : c - i;
      if (std::abs(k[i]) <= kmax && off % stride == 0) rows.push_back(i);
    }
  } else {
    throw Error(ErrorKind::basis_mismatch, "estimation_rows: basis must be k or u");
  }
  return rows;
}

Eigen::VectorXcd interpolate_law(const AberrationLaw& law, std::span<const double> axis) {
  const std::size_t n = law.axis.size();
  Eigen::VectorXcd out = Eigen::VectorXcd::Ones(static_cast<Eigen::Index>(axis.size()));
  if (n == 0) return out;
  for (std::size_t j = 0; j < axis.size(); ++j) {
    const double a = axis[j];
    cdouble v;
    if (a <= law.axis.front()) {
      v = law.phase(0);
    } else if (a >= law.axis.back()) {
      v = law.phase(static_cast<Eigen::Index>(n - 1));
    } else {
      const auto it = std::upper_bound(law.axis.begin(), law.axis.end(), a);
      const std::size_t hi = static_cast<std::size_t>(it - law.axis.begin());
      const std::size_t lo = hi - 1;
      const double t = (a - law.axis[lo]) / (law.axis[hi] - law.axis[lo]);
      v = (1 - t) * law.phase(static_cast<Eigen::Index>(lo)) + t * law.phase(static_cast<Eigen::Index>(hi));
    }
    const double m = std::abs(v);
    out(static_cast<Eigen::Index>(j)) = m > 1e-12 ? v / m : cdouble(1, 0);
  }
  return out;
}

FocusedReflectionMatrix compose(const FocusedReflectionMatrix& raw, const std::vector<Eigen::MatrixXcd>& c_out,
                                const std::vector<Eigen::MatrixXcd>& c_in) {
  if (c_out.size() != raw.slices.size() || c_in.size() != raw.slices.size()) {
    throw Error(ErrorKind::invalid_input, "compose: operator count does not match depths");
  }
  FocusedReflectionMatrix out = raw;
  out.variant = MatrixVariant::corrected;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t iz = 0; iz < raw.slices.size(); ++iz) {
    out.slices[iz].noalias() = c_out[iz] * raw.slices[iz] * c_in[iz].transpose();
  }
  return out;
}

std::vector<std::size_t> aperture_elements(Side side, const Point& r, const AcquisitionConfig& config,
                                           const Apodization& apodization) {
  double half;
  if (side == Side::output) {
    half = r.z / (2 * apodization.f_number);
  } else {
    double t = 0;
    for (double a : config.transmit_angles) t = std::max(t, std::abs(a));
    half = r.z * std::tan(t);
  }
  std::vector<std::size_t> out;
  for (int i = 0; i < config.num_elements; ++i) {
    if (std::abs(config.element_x(i) - r.x) <= half + 1e-9) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

std::vector<double> effective_law(const CorrectionState& state, Side side, const Point& r,
                                  const AcquisitionConfig& config) {
  const ImageGrid& grid = state.raw.grid;
  const std::size_t iz = grid.nearest_z(r.z);
  const auto ix = static_cast<Eigen::Index>(grid.nearest_x(r.x));
  const Eigen::MatrixXcd& c = side == Side::output ? state.c_out.at(iz) : state.c_in.at(iz);
  const PropagationOperator q0 = build_Q0(grid.z[iz], grid.x, config);
  // [Q0 C^H](u, x) = sum_x' Q0(u, x') conj(C(x, x'))
  const Eigen::VectorXcd col = q0.matrix.values * c.row(ix).adjoint();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(config.num_elements));
  const auto& u = q0.matrix.row_axis.coords;
  for (int e = 0; e < config.num_elements; ++e) {
    const double f = std::round((config.element_x(e) - u.front()) / grid.dx);
    const auto iu = static_cast<Eigen::Index>(std::clamp(f, 0.0, static_cast<double>(u.size() - 1)));
    out.push_back(std::arg(col(iu) * std::conj(q0.matrix.values(iu, ix))));
  }
  return out;
}

double residual_rms(std::span<const double> estimate, std::span<const double> truth, std::span<const double> axis) {
  const std::size_t n = estimate.size();
  if (truth.size() != n || axis.size() != n) throw Error(ErrorKind::invalid_input, "residual_rms: length mismatch");
  if (n == 0) return kNaN;
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = wrap(estimate[i] - truth[i]);
  const auto coherence = [&](double s) {
    cdouble acc(0, 0);
    for (std::size_t i = 0; i < n; ++i) acc += std::polar(1.0, d[i] - s * axis[i]);
    return std::abs(acc);
  };
  double step = 0;
  for (std::size_t i = 1; i < n; ++i) step = std::max(step, std::abs(axis[i] - axis[i - 1]));
  double best = 0;
  if (n > 2 && step > 0) {
    const double smax = kPi / step;
    const int m = 1024;
    double best_c = -1;
    for (int j = -m; j <= m; ++j) {
      const double s = smax * j / m;
      const double c = coherence(s);
      if (c > best_c) {
        best_c = c;
        best = s;
      }
    }
    double lo = best - smax / m, hi = best + smax / m;
    const double g = 0.5 * (std::sqrt(5.0) - 1);
    for (int it = 0; it < 60; ++it) {
      const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
      if (coherence(a) > coherence(b)) {
        hi = b;
      } else {
        lo = a;
      }
    }
    best = 0.5 * (lo + hi);
  }
  cdouble acc(0, 0);
  for (std::size_t i = 0; i < n; ++i) acc += std::polar(1.0, d[i] - best * axis[i]);
  const double piston = std::arg(acc);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = wrap(d[i] - best * axis[i] - piston);
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(n));
}

namespace {

SubstepOutcome estimate_windows(const FocusedReflectionMatrix& filtered, const FMap& current, Basis basis, Side side,
                                const ScheduleStep& step, const AcquisitionConfig& config,
                                const PipelineOptions& options, std::vector<PropagationOperator>& full_ops) {
  const ImageGrid& grid = filtered.grid;
  const std::size_t nz = grid.nz();
  const auto rows = estimation_rows(basis, side, grid, config, options);
  if (basis == Basis::plane_wave_k) {
    full_ops.assign(1, full_operator(basis, grid.z[0], grid, config));
  } else {
    full_ops.resize(nz);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t iz = 0; iz < nz; ++iz) full_ops[iz] = full_operator(basis, grid.z[iz], grid, config);
  }
  std::vector<PropagationOperator> est_ops(full_ops.size());
  for (std::size_t i = 0; i < full_ops.size(); ++i) est_ops[i] = full_ops[i].select_rows(rows);

  const DistortionMatrix d = build_distortion(project(filtered, side, est_ops), est_ops);
  const auto lattice = window_lattice(grid, step.half_x, step.half_z);
  const double fallback_ratio = global_width_ratio(current);
  const double kc = config.wavenumber();

  SubstepOutcome out;
  out.windows.resize(lattice.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t w = 0; w < lattice.size(); ++w) {
    const WindowGeometry& g = lattice[w];
    AtlasWindow rec;
    rec.step = step.index;
    rec.side = side;
    rec.center = g.center;
    rec.half_x = g.half_x;
    rec.half_z = g.half_z;
    rec.gated = false;
    rec.law = AberrationLaw::flat(basis, g.center, {});
    try {
      const LocalDistortion full = extract_local(d, g.center, g.half_x, g.half_z);
      rec.n_in = full.n_in();
      const auto keep = energy_rows(full, options.energy_floor);
      if (keep.size() >= 2) {
        const LocalDistortion local = full.select_rows(keep);
        AberrationLaw law;
        if (step.svd_type == SvdType::D) {
          law = svd_phase_law(local);
        } else {
          law = residual_phase_law(normalized_correlation(correlation_matrix(local)), g.center);
        }
        if (law.valid && options.ramp_removal) law = ramp_removal(law, g.center.z, kc);
        rec.law = std::move(law);
        const double ratio = window_width_ratio(current, grid, g, fallback_ratio);
        rec.gated = !options.convergence_gate || convergence_gate(local, ratio);
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::geometry) throw;
    }
    out.windows[w] = std::move(rec);
  }
  for (const auto& rec : out.windows) {
    if (rec.law.valid) ++out.valid;
    if (rec.law.valid && rec.gated) ++out.gated;
  }
  return out;
}

// Per-depth B1^H B0 with the windowed laws blended per focused pixel.
std::vector<Eigen::MatrixXcd> blended_update(const SubstepOutcome& outcome, const ImageGrid& grid,
                                             const std::vector<PropagationOperator>& full_ops) {
  const std::size_t nx = grid.nx(), nz = grid.nz();
  const std::vector<double>& dual_axis = full_ops[0].matrix.row_axis.coords;
  const auto nd = static_cast<Eigen::Index>(dual_axis.size());
  std::vector<Eigen::VectorXcd> laws(outcome.windows.size());
  std::vector<bool> active(outcome.windows.size(), false);
  for (std::size_t w = 0; w < outcome.windows.size(); ++w) {
    const AtlasWindow& rec = outcome.windows[w];
    active[w] = rec.law.valid && rec.gated;
    laws[w] = active[w] ? interpolate_law(rec.law, dual_axis) : Eigen::VectorXcd::Ones(nd);
  }
  std::vector<Eigen::MatrixXcd> m(nz);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t iz = 0; iz < nz; ++iz) {
    Eigen::MatrixXcd l = Eigen::MatrixXcd::Zero(nd, static_cast<Eigen::Index>(nx));
    std::vector<double> total(nx, 0.0);
    for (std::size_t w = 0; w < outcome.windows.size(); ++w) {
      const AtlasWindow& rec = outcome.windows[w];
      if (std::abs(grid.z[iz] - rec.center.z) >= rec.half_z) continue;
      const WindowGeometry g{rec.center, rec.half_x, rec.half_z};
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const double wt = window_weight(g, {grid.x[ix], grid.z[iz]});
        if (wt == 0) continue;
        total[ix] += wt;
        l.col(static_cast<Eigen::Index>(ix)) += wt * laws[w];
      }
    }
    for (std::size_t ix = 0; ix < nx; ++ix) {
      auto col = l.col(static_cast<Eigen::Index>(ix));
      if (!(total[ix] > 0)) {
        col.setOnes();
        continue;
      }
      for (Eigen::Index i = 0; i < nd; ++i) {
        const double a = std::abs(col(i));
        col(i) = a > 1e-12 ? col(i) / a : cdouble(1, 0);
      }
    }
    const Eigen::MatrixXcd& b0 = full_ops.size() == 1 ? full_ops[0].matrix.values : full_ops[iz].matrix.values;
    const Eigen::MatrixXcd b1 = b0.cwiseProduct(l);
    m[iz].noalias() = b1.adjoint() * b0;
  }
  return m;
}

StepLogEntry log_entry(const CorrectionState& state, int step, const std::string& substep, Basis basis,
                       const FocusReference& reference, const AcquisitionConfig& config,
                       const PipelineOptions& options) {
  StepLogEntry e;
  e.step = step;
  e.substep = substep;
  e.basis = basis;
  e.median_F = state.f_history.back().median_F();
  const AreaMetrics a = area_metrics(state.corrected, reference.matrix, options.area, config, options.fmap);
  e.contrast_db = a.contrast_db;
  e.fwhm = a.fwhm;
  e.width_6db = a.width_6db;
  e.area_F = a.F;
  return e;
}

double law_rms_median(const CorrectionState& state, const SubstepOutcome& outcome, Side side,
                      const AcquisitionConfig& config, const PipelineOptions& options) {
  std::vector<double> rms;
  for (const AtlasWindow& rec : outcome.windows) {
    if (!rec.law.valid || !rec.gated) continue;
    const auto elems = aperture_elements(side, rec.center, config, options.apodization);
    if (elems.size() < 3) continue;
    const auto est = effective_law(state, side, rec.center, config);
    const auto truth = ground_truth_law(*options.truth, config, Basis::transducer_u, rec.center);
    std::vector<double> a, b, u;
    for (std::size_t e : elems) {
      a.push_back(est[e]);
      b.push_back(truth[e]);
      u.push_back(config.element_x(static_cast<int>(e)));
    }
    rms.push_back(residual_rms(a, b, u));
  }
  return median_of(rms);
}

}  // namespace

CorrectionState run_schedule(const AnalyticCube& raw, const ImageGrid& grid, const AcquisitionConfig& config,
                             std::span<const ScheduleStep> schedule, const FocusReference& reference,
                             const PipelineOptions& options) {
  return run_schedule(das_focus(raw, grid, config, options.apodization), config, schedule, reference, options);
}

CorrectionState run_schedule(const FocusedReflectionMatrix& raw_matrix, const AcquisitionConfig& config,
                             std::span<const ScheduleStep> schedule, const FocusReference& reference,
                             const PipelineOptions& options) {
  validate_schedule(schedule);
  const ImageGrid& grid = raw_matrix.grid;
  const std::size_t nx = grid.nx(), nz = grid.nz();
  if (reference.map.nx != nx || reference.map.nz != nz) {
    throw Error(ErrorKind::invalid_input, "run_schedule: reference does not match the grid");
  }

  CorrectionState state;
  state.raw = raw_matrix;
  const Eigen::MatrixXcd eye = Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(nx), static_cast<Eigen::Index>(nx));
  state.c_out.assign(nz, eye);
  state.c_in.assign(nz, eye);
  state.corrected = raw_matrix;
  state.f_history.push_back(f_map(state.corrected, &reference.map, options.fmap));
  state.log.push_back(log_entry(state, 0, "initial", Basis::focused_x, reference, config, options));

  std::vector<AtlasWindow> last_out, last_in;
  for (const ScheduleStep& step : schedule) {
    for (int pass = 0; pass < 2; ++pass) {
      const bool output = pass == 0;
      const Side side = output ? Side::output : Side::input;
      const Basis basis = output ? step.receive_basis : step.transmit_basis;
      const FMap& current = state.f_history.back();
      PixelMap lc = adaptive_lc(current, grid, config, step.filter_factor);
      if (options.lc_floor) {
        for (std::size_t iz = 0; iz < nz; ++iz) {
          for (std::size_t ix = 0; ix < nx; ++ix) {
            const double f = step.filter_factor * ideal_resolution({grid.x[ix], grid.z[iz]}, config);
            lc.at(iz, ix) = std::max(lc.at(iz, ix), f);
          }
        }
      }
      const FocusedReflectionMatrix filtered = confocal_filter(state.corrected, lc);

      std::vector<PropagationOperator> full_ops;
      SubstepOutcome outcome = estimate_windows(filtered, current, basis, side, step, config, options, full_ops);
      const auto m = blended_update(outcome, grid, full_ops);

      std::vector<Eigen::MatrixXcd> c_prev = output ? state.c_out : state.c_in;
      FocusedReflectionMatrix r_prev = state.corrected;
      auto& c = output ? state.c_out : state.c_in;
#pragma omp parallel for schedule(dynamic)
      for (std::size_t iz = 0; iz < nz; ++iz) {
        c[iz] = m[iz] * c[iz];
        if (output) {
          state.corrected.slices[iz] = m[iz] * state.corrected.slices[iz];
        } else {
          state.corrected.slices[iz] = state.corrected.slices[iz] * m[iz].transpose();
        }
      }
      state.corrected.variant = MatrixVariant::corrected;

      FMap next = f_map(state.corrected, &reference.map, options.fmap);
      const double before = current.median_F();
      const double after = next.median_F();
      bool rolled_back = false;
      if (std::isfinite(before) && (!std::isfinite(after) || after < before - options.rollback_threshold)) {
        c = std::move(c_prev);
        state.corrected = std::move(r_prev);
        next = state.f_history.back();
        rolled_back = true;
      }
      state.f_history.push_back(std::move(next));

      StepLogEntry e = log_entry(state, step.index, output ? "output" : "input", basis, reference, config, options);
      e.windows = outcome.windows.size();
      e.valid_windows = outcome.valid;
      e.gated_windows = outcome.gated;
      e.rolled_back = rolled_back;
      if (options.truth) e.law_rms = law_rms_median(state, outcome, side, config, options);
      state.log.push_back(e);

      for (const auto& rec : outcome.windows) state.atlas.records.push_back(rec);
      (output ? last_out : last_in) = std::move(outcome.windows);
    }
  }

  // Atlas over the final window lattice, laws in the transducer basis on the elements.
  const ScheduleStep& last = schedule.back();
  const auto lattice = window_lattice(grid, last.half_x, last.half_z, &state.atlas.lattice_nx, &state.atlas.lattice_nz);
  const auto elements = config.element_positions();
  state.atlas.in_axis = Axis{Basis::transducer_u, elements};
  state.atlas.out_axis = Axis{Basis::transducer_u, elements};
  state.atlas.centers.clear();
  state.atlas.h_in.resize(lattice.size());
  state.atlas.h_out.resize(lattice.size());
  state.atlas.valid.assign(lattice.size(), false);
  for (std::size_t w = 0; w < lattice.size(); ++w) state.atlas.centers.push_back(lattice[w].center);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t w = 0; w < lattice.size(); ++w) {
    const Point& p = lattice[w].center;
    const auto li = effective_law(state, Side::input, p, config);
    const auto lo = effective_law(state, Side::output, p, config);
    Eigen::VectorXcd hi(static_cast<Eigen::Index>(li.size())), ho(static_cast<Eigen::Index>(lo.size()));
    for (std::size_t i = 0; i < li.size(); ++i) hi(static_cast<Eigen::Index>(i)) = std::polar(1.0, li[i]);
    for (std::size_t i = 0; i < lo.size(); ++i) ho(static_cast<Eigen::Index>(i)) = std::polar(1.0, lo[i]);
    state.atlas.h_in[w] = hi;
    state.atlas.h_out[w] = ho;
  }
  for (std::size_t w = 0; w < lattice.size(); ++w) {
    const bool vo = w < last_out.size() && last_out[w].law.valid && last_out[w].gated;
    const bool vi = w < last_in.size() && last_in[w].law.valid && last_in[w].gated;
    state.atlas.valid[w] = vo || vi;
  }
  return state;
}

}  // namespace umi
