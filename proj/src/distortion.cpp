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

#include "umi/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace umi {

namespace {

constexpr double kPi = std::numbers::pi;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
  }
  return m;
}

}  // namespace

LocalDistortion LocalDistortion::select_rows(std::span<const std::size_t> rows) const {
  LocalDistortion out;
  out.center = center;
  out.half_x = half_x;
  out.half_z = half_z;
  out.members = members;
  out.dual_axis.basis = dual_axis.basis;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.values.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(rows[r]));
    out.dual_axis.coords.push_back(dual_axis.coords.at(rows[r]));
  }
  return out;
}

std::vector<double> AberrationLaw::angles() const {
  std::vector<double> a(static_cast<std::size_t>(phase.size()));
  for (Eigen::Index i = 0; i < phase.size(); ++i) a[static_cast<std::size_t>(i)] = std::arg(phase(i));
  return a;
}

AberrationLaw AberrationLaw::flat(Basis basis, Point center, std::vector<double> axis) {
  AberrationLaw law;
  law.basis = basis;
  law.center = center;
  law.phase = Eigen::VectorXcd::Ones(static_cast<Eigen::Index>(axis.size()));
  law.axis = std::move(axis);
  law.valid = true;
  return law;
}

DistortionMatrix build_distortion(const DualReflectionMatrix& dual, std::span<const PropagationOperator> geom) {
  const std::size_t nz = dual.slices.size();
  if (geom.size() != 1 && geom.size() != nz) {
    throw Error(ErrorKind::invalid_input, "build_distortion: need one operator or one per depth");
  }
  DistortionMatrix d;
  d.orientation = dual.orientation;
  d.slices.resize(nz);
  if (nz == 0) return d;
  const Axis& first = dual.orientation == Side::output ? dual.slices[0].row_axis : dual.slices[0].col_axis;
  d.dual_basis = first.basis;
  for (std::size_t iz = 0; iz < nz; ++iz) {
    const ComplexMatrix2D& s = dual.slices[iz];
    const PropagationOperator& op = geom.size() == 1 ? geom[0] : geom[iz];
    const Axis& dual_axis = dual.orientation == Side::output ? s.row_axis : s.col_axis;
    const Axis& focus_axis = dual.orientation == Side::output ? s.col_axis : s.row_axis;
    if (dual_axis.basis != op.dual_basis()) {
      throw Error(ErrorKind::basis_mismatch, "build_distortion: operator basis does not match the dual axis");
    }
    const bool kind_ok = (op.kind == OperatorKind::T0 && dual_axis.basis == Basis::plane_wave_k) ||
                         (op.kind == OperatorKind::Q0 && dual_axis.basis == Basis::transducer_u);
    if (!kind_ok) throw Error(ErrorKind::basis_mismatch, "build_distortion: operator kind does not match basis");
    require_basis(focus_axis, Basis::focused_x, "build_distortion");
    if (op.matrix.row_axis.coords != dual_axis.coords || op.matrix.col_axis.coords != focus_axis.coords) {
      throw Error(ErrorKind::invalid_input, "build_distortion: operator axes do not match the dual matrix");
    }
    if (op.depth() && s.depth && std::abs(*op.depth() - *s.depth) > 1e-9) {
      throw Error(ErrorKind::invalid_input, "build_distortion: depth mismatch");
    }
    ComplexMatrix2D out = s;
    if (dual.orientation == Side::output) {
      out.values = s.values.cwiseProduct(op.matrix.values.conjugate());
    } else {
      out.values = s.values.cwiseProduct(op.matrix.values.transpose().conjugate());
    }
    d.slices[iz] = std::move(out);
  }
  return d;
}

LocalDistortion extract_local(const DistortionMatrix& d, const Point& r_p, double half_x, double half_z) {
  LocalDistortion local;
  local.center = r_p;
  local.half_x = half_x;
  local.half_z = half_z;
  if (d.slices.empty()) throw Error(ErrorKind::invalid_input, "extract_local: empty distortion matrix");
  const bool out_side = d.orientation == Side::output;
  local.dual_axis = out_side ? d.slices[0].row_axis : d.slices[0].col_axis;

  struct Ref {
    std::size_t iz;
    std::size_t j;
  };
  std::vector<Ref> refs;
  for (std::size_t iz = 0; iz < d.slices.size(); ++iz) {
    const ComplexMatrix2D& s = d.slices[iz];
    const double z = s.depth.value_or(0.0);
    if (!(std::abs(z - r_p.z) < half_z)) continue;
    const Axis& focus = out_side ? s.col_axis : s.row_axis;
    for (std::size_t j = 0; j < focus.size(); ++j) {
      if (std::abs(focus.coords[j] - r_p.x) < half_x) {
        refs.push_back({iz, j});
        local.members.push_back({focus.coords[j], z});
      }
    }
  }
  if (refs.empty()) throw Error(ErrorKind::geometry, "extract_local: empty window");
  const auto nd = static_cast<Eigen::Index>(local.dual_axis.size());
  local.values.resize(nd, static_cast<Eigen::Index>(refs.size()));
  for (std::size_t c = 0; c < refs.size(); ++c) {
    const auto& v = d.slices[refs[c].iz].values;
    const auto j = static_cast<Eigen::Index>(refs[c].j);
    if (out_side) {
      local.values.col(static_cast<Eigen::Index>(c)) = v.col(j);
    } else {
      local.values.col(static_cast<Eigen::Index>(c)) = v.row(j).transpose();
    }
  }
  return local;
}

Eigen::VectorXcd phase_only(const Eigen::VectorXcd& v) {
  Eigen::VectorXcd u(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v(i));
    u(i) = a > 0 ? v(i) / a : cdouble(1, 0);
  }
  const cdouble rot = std::polar(1.0, -circular_mean(u));
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u(i) *= rot;
    u(i) /= std::abs(u(i));
  }
  return u;
}

AberrationLaw svd_phase_law(const LocalDistortion& local) {
  AberrationLaw law;
  law.basis = local.dual_axis.basis;
  law.center = local.center;
  law.axis = local.dual_axis.coords;
  const auto rows = local.values.rows();
  law.phase = Eigen::VectorXcd::Ones(rows);
  if (local.n_in() < 2 || rows == 0 || !local.values.allFinite()) return law;

  Eigen::JacobiSVD<Eigen::MatrixXcd, Eigen::HouseholderQRPreconditioner> svd(local.values, Eigen::ComputeThinU);
  if (svd.info() != Eigen::Success) return law;
  const auto& s = svd.singularValues();
  law.spectrum.assign(s.data(), s.data() + s.size());
  law.phase = phase_only(svd.matrixU().col(0));
  std::vector<double> s2(law.spectrum.size());
  for (std::size_t i = 0; i < s2.size(); ++i) s2[i] = law.spectrum[i] * law.spectrum[i];
  law.valid = !s2.empty() && s2[0] > 0 && s2[0] >= 2 * median(s2);
  return law;
}

CorrelationMatrix correlation_matrix(const LocalDistortion& local) {
  CorrelationMatrix c;
  c.n_in = local.n_in();
  c.matrix.row_axis = local.dual_axis;
  c.matrix.col_axis = local.dual_axis;
  const auto n = local.values.rows();
  c.matrix.values = Eigen::MatrixXcd::Zero(n, n);
  if (c.n_in == 0) return c;
  c.matrix.values.selfadjointView<Eigen::Lower>().rankUpdate(local.values, 1.0 / static_cast<double>(c.n_in));
  c.matrix.values = c.matrix.values.selfadjointView<Eigen::Lower>();
  for (Eigen::Index i = 0; i < n; ++i) c.matrix.values(i, i) = cdouble(c.matrix.values(i, i).real(), 0.0);
  return c;
}

CorrelationWidth correlation_width(const CorrelationMatrix& c, std::optional<double> aperture) {
  const auto n = c.matrix.values.rows();
  const auto& ax = c.matrix.row_axis.coords;
  const double du = ax.size() >= 2 ? std::abs(ax[1] - ax[0]) : 1.0;
  const double full = aperture.value_or(ax.size() >= 2 ? std::abs(ax.back() - ax.front()) + du : du);
  std::vector<double> prof(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index m = 0; m < n; ++m) {
    double acc = 0;
    for (Eigen::Index i = 0; i + m < n; ++i) acc += std::abs(c.matrix.values(i, i + m)) + std::abs(c.matrix.values(i + m, i));
    prof[static_cast<std::size_t>(m)] = acc / (2.0 * static_cast<double>(n - m));
  }
  double du_in = full;
  if (n > 0 && prof[0] > 0) {
    const double half = 0.5 * prof[0];
    for (std::size_t m = 1; m < prof.size(); ++m) {
      if (prof[m] <= half) {
        const double t = (prof[m - 1] - half) / (prof[m - 1] - prof[m]);
        du_in = 2 * (static_cast<double>(m - 1) + t) * du;
        break;
      }
    }
  }
  du_in = std::min(du_in, full);
  const double m = full / du_in;
  const double ln_n = std::log(std::max<double>(1.0, static_cast<double>(c.n_in)));
  return {du_in, m, full * std::sqrt(ln_n) / m};
}

CorrelationMatrix normalized_correlation(const CorrelationMatrix& dc, double eps) {
  CorrelationMatrix out = dc;
  out.normalized = true;
  const auto n = dc.matrix.values.rows();
  std::vector<double> diag(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = std::abs(dc.matrix.values(i, i));
  const double floor = eps * median(diag);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const cdouble v = dc.matrix.values(i, j);
      const double a = std::abs(v);
      out.matrix.values(i, j) = (a > 0 && a >= floor) ? v / a : cdouble(0, 0);
    }
  }
  return out;
}

AberrationLaw residual_phase_law(const CorrelationMatrix& dc_hat, const Point& center) {
  AberrationLaw law;
  law.basis = dc_hat.matrix.row_axis.basis;
  law.center = center;
  law.axis = dc_hat.matrix.row_axis.coords;
  const auto n = dc_hat.matrix.values.rows();
  law.phase = Eigen::VectorXcd::Ones(n);
  if (n == 0 || !dc_hat.matrix.values.allFinite()) return law;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(dc_hat.matrix.values);
  if (eig.info() != Eigen::Success) return law;
  const auto& ev = eig.eigenvalues();
  law.spectrum.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) law.spectrum[static_cast<std::size_t>(i)] = ev(n - 1 - i);
  law.phase = phase_only(eig.eigenvectors().col(n - 1));
  const double l1 = law.spectrum[0];
  const double l2 = n >= 2 ? law.spectrum[1] : 0.0;
  const bool separated = l1 > 0 && (l1 - l2) >= 0.01 * l1;
  law.valid = separated && l1 >= 2 * median(law.spectrum);
  return law;
}

double ramp_scale(Basis basis, double z, double kc) {
  if (basis == Basis::transducer_u) return kc / (2 * z);
  if (basis == Basis::plane_wave_k) return 0.5;
  throw Error(ErrorKind::basis_mismatch, "ramp_scale: law must be in a dual basis");
}

AberrationLaw ramp_removal(const AberrationLaw& law, double z, double kc) {
  AberrationLaw out = law;
  const std::size_t n = law.axis.size();
  if (!law.valid || n < 2) return out;
  const double g = ramp_scale(law.basis, z, kc);
  const double du = std::abs(law.axis[1] - law.axis[0]);
  const double span = std::abs(law.axis.back() - law.axis.front()) + du;
  const double lobe = 2 * kPi / (g * span);
  const double range = std::min(0.5 * kPi / (g * du), 10.0);
  const double h = lobe / 16;
  const int half = std::max(4, static_cast<int>(std::ceil(range / h)));

  std::vector<double> intensity(2 * half + 1);
  for (int j = -half; j <= half; ++j) {
    const double x = j * h;
    cdouble s(0, 0);
    for (std::size_t i = 0; i < n; ++i) s += law.phase(static_cast<Eigen::Index>(i)) * std::polar(1.0, g * law.axis[i] * x);
    intensity[j + half] = std::norm(s);
  }
  // autoconvolution sampled at 2 x = m h
  const int na = 4 * half + 1;
  std::vector<double> a(na, 0.0);
  for (int m = 0; m < na; ++m) {
    double acc = 0;
    const int lo = std::max(0, m - 2 * half), hi = std::min(2 * half, m);
    for (int j = lo; j <= hi; ++j) acc += intensity[j] * intensity[m - j];
    a[m] = acc;
  }
  const int best = static_cast<int>(std::max_element(a.begin(), a.end()) - a.begin());
  double offset = 0;
  if (best > 0 && best + 1 < na) {
    const double y0 = a[best - 1], y1 = a[best], y2 = a[best + 1];
    const double den = y0 - 2 * y1 + y2;
    if (den < 0) offset = 0.5 * (y0 - y2) / den;
  }
  const double two_x0 = (best - 2 * half + offset) * h;
  const double x0 = 0.5 * two_x0;

  bool ambiguous = false;
  for (int m = 1; m + 1 < na; ++m) {
    if (std::abs(m - best) <= 1) continue;
    if (a[m] > a[m - 1] && a[m] >= a[m + 1] && a[m] >= 0.5 * a[best]) {
      ambiguous = true;
      break;
    }
  }
  out.ambiguous = ambiguous;
  out.shift = x0;
  if (ambiguous) return out;
  Eigen::VectorXcd corrected(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    corrected(static_cast<Eigen::Index>(i)) =
        law.phase(static_cast<Eigen::Index>(i)) * std::polar(1.0, g * law.axis[i] * x0);
  }
  out.phase = phase_only(corrected);
  out.ramp_corrected = true;
  return out;
}

bool convergence_gate(std::size_t n_in, double psf_width_ratio) {
  const double e = psf_width_ratio * psf_width_ratio;
  if (!std::isfinite(e) || e > 700) return false;
  return static_cast<double>(n_in) >= std::exp(e);
}

bool convergence_gate(const LocalDistortion& local, double psf_width_ratio) {
  return convergence_gate(local.n_in(), psf_width_ratio);
}

}  // namespace umi
