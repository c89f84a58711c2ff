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

#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"

#include "umi/pipeline.hpp"

using namespace umi;

namespace {

constexpr double kPi = std::numbers::pi;

ImageGrid small_grid() { return ImageGrid::uniform(-4, 4, 0.15, 20, 22, 0.5); }

Eigen::MatrixXcd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXcd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = {g(rng), g(rng)};
  return m;
}

FocusedReflectionMatrix random_matrix(const ImageGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FocusedReflectionMatrix r;
  r.grid = g;
  const auto n = static_cast<Eigen::Index>(g.nx());
  for (std::size_t iz = 0; iz < g.nz(); ++iz) r.slices.push_back(gaussian(n, n, rng));
  return r;
}

AberrationLaw random_law(Basis b, const std::vector<double>& axis, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ph(-kPi, kPi);
  AberrationLaw law = AberrationLaw::flat(b, {0, 20}, axis);
  for (auto& v : law.phase) v = std::polar(1.0, ph(rng));
  law.valid = true;
  return law;
}

double rel_diff(const FocusedReflectionMatrix& a, const FocusedReflectionMatrix& b) {
  double num = 0, den = 0;
  for (std::size_t iz = 0; iz < a.slices.size(); ++iz) {
    num += (a.slices[iz] - b.slices[iz]).squaredNorm();
    den += b.slices[iz].squaredNorm();
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("default schedule and validation") {
  const auto s = table_one_schedule();
  REQUIRE(s.size() == 4);
  CHECK_NOTHROW(validate_schedule(s));
  CHECK(s[0].transmit_basis == Basis::plane_wave_k);
  CHECK(s[0].receive_basis == Basis::transducer_u);
  CHECK(s[1].transmit_basis == Basis::transducer_u);
  CHECK(s[2].svd_type == SvdType::C_hat);
  CHECK(s[3].filter_factor == 6);
  CHECK(s[3].half_x == 3.0);

  CHECK_THROWS_AS(validate_schedule(std::vector<ScheduleStep>{}), Error);
  auto grow = s;
  grow[2].half_x = 20;
  CHECK_THROWS_AS(validate_schedule(grow), Error);
  auto bad = s;
  bad[0].receive_basis = Basis::focused_x;
  CHECK_THROWS_AS(validate_schedule(bad), Error);
  auto zero = s;
  zero[1].filter_factor = 0;
  CHECK_THROWS_AS(validate_schedule(zero), Error);
}

TEST_CASE("window lattice has a 75 percent overlap stride") {
  const auto g = small_grid();
  std::size_t lx = 0, lz = 0;
  const auto w = window_lattice(g, 2.0, 1.0, &lx, &lz);
  REQUIRE(w.size() == lx * lz);
  REQUIRE(lx > 1);
  CHECK(w[1].center.x - w[0].center.x == doctest::Approx(0.25 * 2 * 2.0));
  CHECK(w[lx].center.z - w[0].center.z == doctest::Approx(0.25 * 2 * 1.0));
  CHECK(window_weight(w[0], w[0].center) == 1.0);
  CHECK(window_weight(w[0], {w[0].center.x + 2.0, w[0].center.z}) == 0.0);
}

TEST_CASE("estimator construction") {
  const auto c = AcquisitionConfig::desk_default();
  const auto g = small_grid();
  for (Basis b : {Basis::transducer_u, Basis::plane_wave_k}) {
    const auto geom = full_operator(b, 21.0, g, c);
    const auto& axis = geom.matrix.row_axis.coords;
    AberrationLaw flat = AberrationLaw::flat(b, {0, 21}, axis);
    const std::vector<AberrationLaw> one{flat}, two{flat, flat};
    CHECK(build_estimator(geom, one).matrix.values == geom.matrix.values);
    CHECK(build_estimator(geom, two).matrix.values == geom.matrix.values);
    CHECK(build_estimator(geom, two).kind == OperatorKind::Q2);

    auto law = random_law(b, axis, 7);
    auto conj = law;
    conj.phase = law.phase.conjugate();
    const std::vector<AberrationLaw> pair{law, conj};
    CHECK((build_estimator(geom, pair).matrix.values - geom.matrix.values).cwiseAbs().maxCoeff() < 1e-12);
  }
  const auto q0 = full_operator(Basis::transducer_u, 21.0, g, c);
  const auto t0 = full_operator(Basis::plane_wave_k, 21.0, g, c);
  const std::vector<AberrationLaw> wrong{AberrationLaw::flat(Basis::plane_wave_k, {0, 21}, q0.matrix.row_axis.coords)};
  CHECK_THROWS_AS(build_estimator(q0, wrong), Error);
  CHECK_THROWS_AS(build_estimator(t0, std::vector<AberrationLaw>{}), Error);
}

TEST_CASE("self-cancellation of identical operators") {
  const auto c = AcquisitionConfig::desk_default();
  const auto g = small_grid();
  const auto r = random_matrix(g, 12);

  SUBCASE("plane-wave basis is exact") {
    std::vector<PropagationOperator> ops;
    for (std::size_t iz = 0; iz < g.nz(); ++iz) {
      const auto t0 = full_operator(Basis::plane_wave_k, g.z[iz], g, c);
      ops.push_back(build_estimator(t0, std::vector{random_law(Basis::plane_wave_k, t0.matrix.row_axis.coords, iz)}));
    }
    CHECK(rel_diff(apply_output_correction(r, ops, ops), r) < 1e-10);
    CHECK(rel_diff(apply_input_correction(r, ops, ops), r) < 1e-10);
  }

  SUBCASE("transducer basis") {
    // every grid wavenumber propagates, so the u-basis operator is an isometry
    std::vector<PropagationOperator> ops;
    for (std::size_t iz = 0; iz < g.nz(); ++iz) {
      const auto q0 = full_operator(Basis::transducer_u, g.z[iz], g, c);
      ops.push_back(build_estimator(q0, std::vector{random_law(Basis::transducer_u, q0.matrix.row_axis.coords, iz)}));
    }
    CHECK(rel_diff(apply_output_correction(r, ops, ops), r) < 1e-10);
    CHECK(rel_diff(apply_input_correction(r, ops, ops), r) < 1e-10);
  }

  const std::vector<PropagationOperator> one{full_operator(Basis::plane_wave_k, 20.0, g, c)};
  const std::vector<PropagationOperator> two{one[0], one[0]};
  CHECK_THROWS_AS(apply_output_correction(r, one, two), Error);
}

TEST_CASE("gauge safety and energy of a phase-only correction") {
  const auto c = AcquisitionConfig::desk_default();
  const auto g = small_grid();
  const auto r = random_matrix(g, 21);
  std::vector<PropagationOperator> g0, g1, g1_shift;
  for (std::size_t iz = 0; iz < g.nz(); ++iz) {
    const auto t0 = full_operator(Basis::plane_wave_k, g.z[iz], g, c);
    auto law = random_law(Basis::plane_wave_k, t0.matrix.row_axis.coords, 40 + iz);
    g0.push_back(t0);
    g1.push_back(build_estimator(t0, std::vector{law}));
    law.phase *= std::polar(1.0, 1.234);
    g1_shift.push_back(build_estimator(t0, std::vector{law}));
  }
  const auto a = apply_output_correction(r, g0, g1);
  const auto b = apply_output_correction(r, g0, g1_shift);
  const auto ai = apply_input_correction(r, g0, g1);
  const auto bi = apply_input_correction(r, g0, g1_shift);
  double worst = 0;
  for (std::size_t iz = 0; iz < g.nz(); ++iz) {
    worst = std::max(worst, (a.slices[iz].cwiseAbs() - b.slices[iz].cwiseAbs()).cwiseAbs().maxCoeff());
    worst = std::max(worst, (ai.slices[iz].cwiseAbs() - bi.slices[iz].cwiseAbs()).cwiseAbs().maxCoeff());
    CHECK(a.slices[iz].norm() <= r.slices[iz].norm() * (1 + 1e-9));
    CHECK(ai.slices[iz].norm() <= r.slices[iz].norm() * (1 + 1e-9));
  }
  CHECK(worst < 1e-10);
  CHECK(a.variant == MatrixVariant::corrected);
}

TEST_CASE("stitching is a partition of unity") {
  const auto g = small_grid();
  const auto prev = random_matrix(g, 1);
  const auto m = random_matrix(g, 2);

  SUBCASE("single covering window") {
    const std::vector<WindowGeometry> w{{{0, 21}, 100.0, 100.0}};
    const std::vector<FocusedReflectionMatrix> per{m};
    std::size_t uncovered = 99;
    for (Side s : {Side::output, Side::input}) {
      CHECK(rel_diff(stitch_windows(per, w, prev, s, &uncovered), m) < 1e-12);
      CHECK(uncovered == 0);
    }
  }

  SUBCASE("overlapping windows with identical content") {
    std::size_t lx = 0, lz = 0;
    const auto w = window_lattice(g, 3.0, 1.5, &lx, &lz);
    const std::vector<FocusedReflectionMatrix> per(w.size(), m);
    std::size_t uncovered = 99;
    for (Side s : {Side::output, Side::input}) {
      CHECK(rel_diff(stitch_windows(per, w, prev, s, &uncovered), m) < 1e-12);
      CHECK(uncovered == 0);
    }
    // weights over the lattice normalize to one
    for (std::size_t iz = 0; iz < g.nz(); ++iz) {
      for (std::size_t ix = 0; ix < g.nx(); ++ix) {
        double total = 0;
        for (const auto& win : w) total += window_weight(win, {g.x[ix], g.z[iz]});
        CHECK(total > 0);
      }
    }
  }

  SUBCASE("uncovered pixels keep the previous matrix") {
    const std::vector<WindowGeometry> w{{{-4, 20}, 1.0, 0.6}};
    const std::vector<FocusedReflectionMatrix> per{m};
    std::size_t uncovered = 0;
    const auto out = stitch_windows(per, w, prev, Side::output, &uncovered);
    CHECK(uncovered > 0);
    const auto far = static_cast<Eigen::Index>(g.nx() - 1);
    CHECK(out.slices[0].row(far) == prev.slices[0].row(far));
    CHECK(out.slices[4].row(0) == prev.slices[4].row(0));
    CHECK((out.slices[0].row(0) - m.slices[0].row(0)).norm() < 1e-12);
  }
}

TEST_CASE("law interpolation and residual RMS") {
  AberrationLaw law = AberrationLaw::flat(Basis::transducer_u, {0, 20}, {-1.0, 0.0, 1.0});
  law.phase << std::polar(1.0, 0.0), std::polar(1.0, 1.0), std::polar(1.0, 2.0);
  const std::vector<double> same{-1.0, 0.0, 1.0};
  const auto v = interpolate_law(law, same);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::abs(v(i) - law.phase(i)) < 1e-14);
  const std::vector<double> mid{-2.0, -0.5, 0.5, 3.0};
  const auto w = interpolate_law(law, mid);
  CHECK(std::arg(w(0)) == doctest::Approx(0.0));
  CHECK(std::arg(w(1)) == doctest::Approx(0.5));
  CHECK(std::arg(w(3)) == doctest::Approx(2.0));
  for (auto e : w) CHECK(std::abs(e) == doctest::Approx(1.0));

  std::vector<double> axis, truth, est;
  for (int i = 0; i < 64; ++i) {
    axis.push_back(-9.45 + 0.3 * i);
    truth.push_back(std::sin(0.7 * i));
    est.push_back(truth.back() + 0.4 + 0.05 * axis.back());
  }
  CHECK(residual_rms(est, truth, axis) < 1e-3);
  CHECK_THROWS_AS(residual_rms(est, std::vector<double>{1.0}, axis), Error);
}

TEST_CASE("aperture elements") {
  const auto c = AcquisitionConfig::desk_default();
  const auto out = aperture_elements(Side::output, {0, 4}, c, Apodization{});
  for (auto e : out) CHECK(std::abs(c.element_x(static_cast<int>(e))) <= 2.0 + 1e-9);
  CHECK(out.size() == 14);
  CHECK(aperture_elements(Side::output, {0, 40}, c, Apodization{}).size() == 64);
}

TEST_CASE("null case: a step on an aberration-free phantom leaves the image nearly alone") {
  auto c = AcquisitionConfig::desk_default();
  c.record_duration = 36e-6;
  const auto g = ImageGrid::uniform(-6, 6, 0.15, 18, 26, 0.5);
  PipelineOptions opt;
  opt.area = {-3, 3, 19, 25};
  const auto ref = build_focus_reference(g, c, opt);
  const auto sim = synthesize_raw(PhantomSpec::speckle(g, 77), AberratorSpec{}, PulseSpec::from_config(c), c);
  auto schedule = table_one_schedule();
  schedule.resize(1);
  schedule[0].half_x = 6;
  schedule[0].half_z = 4;
  const auto st = run_schedule(analytic_signal(sim.rf), g, c, schedule, ref, opt);
  REQUIRE(st.log.size() == 3);
  CHECK(std::abs(st.log[0].median_F - 1.0) < 0.1);
  CHECK(std::abs(st.log.back().median_F - 1.0) < 0.1);

  std::vector<double> rms;
  for (std::size_t w = 0; w < st.atlas.centers.size(); ++w) {
    if (!st.atlas.valid[w]) continue;
    for (Side side : {Side::output, Side::input}) {
      const Point p = st.atlas.centers[w];
      const auto est = effective_law(st, side, p, c);
      std::vector<double> a, zero, u;
      for (auto e : aperture_elements(side, p, c, opt.apodization)) {
        a.push_back(est[e]);
        zero.push_back(0.0);
        u.push_back(c.element_x(static_cast<int>(e)));
      }
      if (a.size() >= 3) rms.push_back(residual_rms(a, zero, u));
    }
  }
  REQUIRE(!rms.empty());
  std::nth_element(rms.begin(), rms.begin() + rms.size() / 2, rms.end());
  CHECK(rms[rms.size() / 2] < 0.15);

  // speckle-averaged intensity over blocks of about 1 x 2 mm
  const auto before = confocal_image(st.raw);
  const auto after = confocal_image(st.corrected);
  std::vector<double> change;
  for (std::size_t z0 = 0; z0 + 4 <= g.nz(); z0 += 4) {
    for (std::size_t x0 = 0; x0 + 8 <= g.nx(); x0 += 8) {
      double sa = 0, sb = 0;
      for (std::size_t iz = z0; iz < z0 + 4; ++iz) {
        for (std::size_t ix = x0; ix < x0 + 8; ++ix) {
          sa += after.at(iz, ix);
          sb += before.at(iz, ix);
        }
      }
      change.push_back(std::abs(10 * std::log10(sa / sb)));
    }
  }
  std::nth_element(change.begin(), change.begin() + change.size() / 2, change.end());
  CHECK(change[change.size() / 2] < 0.5);
}
