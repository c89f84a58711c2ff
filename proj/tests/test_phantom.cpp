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
#include <numeric>

#include "doctest.h"

#include "umi/phantom.hpp"

using namespace umi;

namespace {

constexpr double kPi = std::numbers::pi;

AcquisitionConfig micro_config() {
  AcquisitionConfig c = AcquisitionConfig::desk_default();
  c.num_elements = 3;
  c.pitch = 2.0;
  c.transmit_angles = {-0.1, 0.15};
  c.record_duration = 40e-6;
  return c;
}

// Brute force over (element, angle, scatterer) with straight rays at c0.
RawReflectionMatrix path_oracle(std::span<const Scatterer> sc, const AcquisitionConfig& c, double leg_delay) {
  const double cmm = c.sound_speed * 1e3;
  const int nt = c.num_samples();
  const double T = 0.5 * c.pulse_cycles / c.center_frequency;
  RawReflectionMatrix out(c.num_elements, static_cast<int>(c.transmit_angles.size()), nt, c.sampling_frequency);
  const double half = 0.5 * c.aperture();
  for (int u = 0; u < c.num_elements; ++u) {
    for (std::size_t th = 0; th < c.transmit_angles.size(); ++th) {
      const double a = c.transmit_angles[th];
      for (const auto& s : sc) {
        const double ustar = s.position.x - s.position.z * std::tan(a);
        if (ustar < -half || ustar > half) continue;
        const double t0 = (s.position.x * std::sin(a) + s.position.z * std::cos(a)) / cmm +
                          std::hypot(s.position.x - c.element_x(u), s.position.z) / cmm + 2 * leg_delay;
        for (int n = 0; n < nt; ++n) {
          const double t = n / c.sampling_frequency - t0;
          if (std::abs(t) > 0.5 * T) continue;
          const double env = std::pow(std::cos(kPi * t / T), 2);
          out.trace(u, static_cast<int>(th))[n] +=
              std::abs(s.amplitude) * env * std::cos(2 * kPi * c.center_frequency * t + std::arg(s.amplitude));
        }
      }
    }
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("micro scene matches a sum-over-paths oracle") {
  const auto c = micro_config();
  const std::vector<Scatterer> sc{{{0.4, 12.0}, {0.7, -0.2}}, {{-1.1, 17.5}, {-0.3, 0.5}}};
  const auto sim = synthesize_raw(sc, AberratorSpec{}, PulseSpec::from_config(c), c);
  const auto ref = path_oracle(sc, c, 0.0);
  CHECK(max_abs_diff(sim.rf.data, ref.data) < 1e-9);
  CHECK(sim.truncated_echoes == 0);
}

TEST_CASE("constant transducer screen is a pure delay per leg") {
  const auto c = micro_config();
  const std::vector<Scatterer> sc{{{0.0, 15.0}, {1, 0}}};
  AberratorSpec ab;
  ab.variant = AberratorVariant::transducer_screen;
  ab.screen_phase.assign(c.num_elements, 0.9);
  const auto sim = synthesize_raw(sc, ab, PulseSpec::from_config(c), c);
  const auto ref = path_oracle(sc, c, 0.9 / (2 * kPi * c.center_frequency));
  CHECK(max_abs_diff(sim.rf.data, ref.data) < 1e-9);
}

TEST_CASE("on-axis echo peaks at the round trip time") {
  auto c = AcquisitionConfig::desk_default();
  c.transmit_angles = {0.0};
  c.record_duration = 40e-6;
  const double z = 20.0;
  const std::vector<Scatterer> sc{{{0.0, z}, {1, 0}}};
  const auto sim = synthesize_raw(sc, AberratorSpec{}, PulseSpec::from_config(c), c);
  const int centre = c.num_elements / 2;
  const double* tr = sim.rf.trace(centre, 0);
  int best = 0;
  for (int n = 0; n < sim.rf.num_samples; ++n) {
    if (std::abs(tr[n]) > std::abs(tr[best])) best = n;
  }
  const double expected = (z + std::hypot(c.element_x(centre), z)) / (c.sound_speed * 1e3);
  CHECK(std::abs(best / c.sampling_frequency - expected) <= 1.0 / c.sampling_frequency);
  CHECK(std::abs(best / c.sampling_frequency - 2 * z / (c.sound_speed * 1e3)) <= 1.0 / c.sampling_frequency);
}

TEST_CASE("empty phantom is rejected") {
  const auto c = micro_config();
  std::vector<Scatterer> none;
  CHECK_THROWS_AS(synthesize_raw(none, AberratorSpec{}, PulseSpec::from_config(c), c), Error);
}

TEST_CASE("phantom realization is deterministic under seed") {
  const auto g = ImageGrid::uniform(-2, 2, 0.15, 10, 12, 0.5);
  const auto a = PhantomSpec::speckle(g, 3).realize();
  const auto b = PhantomSpec::speckle(g, 3).realize();
  const auto d = PhantomSpec::speckle(g, 4).realize();
  REQUIRE(a.size() == b.size());
  REQUIRE(!a.empty());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].amplitude == b[i].amplitude;
    differs = differs || a[i].amplitude != d[i].amplitude;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("multiple scattering noise") {
  const auto c = micro_config();
  const std::vector<Scatterer> sc{{{0.4, 12.0}, {1, 0}}, {{-1.1, 17.5}, {1, 0}}};
  const auto raw = synthesize_raw(sc, AberratorSpec{}, PulseSpec::from_config(c), c).rf;

  MultipleScatteringNoiseSpec off;
  CHECK(add_ms_noise(raw, off, c).data == raw.data);

  MultipleScatteringNoiseSpec zero_db;
  zero_db.power_db = 0.0;
  const auto noisy = add_ms_noise(raw, zero_db, c);
  double ss_sig = 0, ss_noise = 0;
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    ss_sig += raw.data[i] * raw.data[i];
    const double d = noisy.data[i] - raw.data[i];
    ss_noise += d * d;
  }
  CHECK(std::abs(std::sqrt(ss_noise / ss_sig) - 1.0) < 0.05);
  CHECK(add_ms_noise(raw, zero_db, c).data == noisy.data);

  MultipleScatteringNoiseSpec nan_db;
  nan_db.power_db = std::nan("");
  CHECK_THROWS_AS(add_ms_noise(raw, nan_db, c), Error);
}

TEST_CASE("ground truth law of a transducer screen is the demeaned screen") {
  const auto c = AcquisitionConfig::desk_default();
  AberratorSpec ab;
  ab.variant = AberratorVariant::transducer_screen;
  ab.screen_phase = AberratorSpec::random_screen(c.num_elements, 1.0, 10, 11);
  ab.screen_phase[0] += 3.0;
  const double mean = std::accumulate(ab.screen_phase.begin(), ab.screen_phase.end(), 0.0) / c.num_elements;
  for (Point r : {Point{0, 20}, Point{-6, 35}}) {
    const auto law = ground_truth_law(ab, c, Basis::transducer_u, r);
    REQUIRE(law.size() == ab.screen_phase.size());
    for (std::size_t i = 0; i < law.size(); ++i) CHECK(law[i] == doctest::Approx(ab.screen_phase[i] - mean));
  }
}

TEST_CASE("random screen statistics") {
  const auto s = AberratorSpec::random_screen(64, 1.0, 10, 11);
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / s.size();
  double ss = 0;
  for (double v : s) ss += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::sqrt(ss / s.size()) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(AberratorSpec::random_screen(64, 1.0, 10, 11) == s);
}

TEST_CASE("layered medium at c0 has a zero law") {
  const auto c = AcquisitionConfig::desk_default();
  AberratorSpec ab;
  ab.variant = AberratorVariant::layered_c;
  ab.layers = {{10.0, c.sound_speed}, {0.0, c.sound_speed}};
  for (Basis b : {Basis::transducer_u, Basis::plane_wave_k}) {
    for (double v : ground_truth_law(ab, c, b, {2, 30})) CHECK(std::abs(v) < 1e-9);
  }
}

TEST_CASE("two-layer plane-wave law is parabolic and matches a closed-form ray oracle") {
  const auto c = AcquisitionConfig::desk_default();
  const double c0 = c.sound_speed * 1e3, c1 = 1.03 * c0, h = 20.0;
  AberratorSpec ab;
  ab.variant = AberratorVariant::layered_c;
  ab.layers = {{h, c1 * 1e-3}, {0.0, c.sound_speed}};
  const Point r{1.5, 30.0};
  const double kc = c.wavenumber(), omega = 2 * kPi * c.center_frequency;
  std::vector<double> k, oracle;
  // Scatterer that images at r at normal incidence.
  const double zs = h + (r.z / c0 - h / c1) * c0;
  for (double a : c.transmit_angles) {
    const double s = std::sin(a), s1 = s * c1 / c0;
    const double truth = r.x * s / c0 + h * std::sqrt(1 - s1 * s1) / c1 + (zs - h) * std::cos(a) / c0;
    const double model = (r.x * s + r.z * std::cos(a)) / c0;
    k.push_back(kc * s);
    oracle.push_back(omega * (truth - model));
  }
  const auto law = ground_truth_law(ab, c, Basis::plane_wave_k, r, k);

  auto quad = [&](const std::vector<double>& y) {
    Eigen::MatrixXd A(k.size(), 3);
    Eigen::VectorXd b(k.size());
    for (std::size_t i = 0; i < k.size(); ++i) {
      A(i, 0) = 1;
      A(i, 1) = k[i];
      A(i, 2) = k[i] * k[i];
      b(i) = y[i];
    }
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(b);
    const double m = b.mean();
    return std::pair{coef(2), 1 - (A * coef - b).squaredNorm() / (b.array() - m).square().sum()};
  };
  const auto [c_law, r2] = quad(law);
  const auto [c_ref, r2_ref] = quad(oracle);
  CHECK(c_law < 0);  // concave
  CHECK(r2 > 0.99);
  CHECK(std::abs(c_law / c_ref - 1) < 0.05);
}

TEST_CASE("aberrator validation") {
  const auto c = AcquisitionConfig::desk_default();
  AberratorSpec ab;
  ab.variant = AberratorVariant::transducer_screen;
  ab.screen_phase = {0.0, 1.0};
  CHECK_THROWS_AS(ab.validate(c), Error);
  ab.variant = AberratorVariant::layered_c;
  CHECK_THROWS_AS(ab.validate(c), Error);
}
