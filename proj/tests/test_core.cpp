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

#include "umi/core.hpp"

using namespace umi;

namespace {

constexpr double kPi = std::numbers::pi;

// O(n^2) DFT Hilbert oracle for one trace.
std::vector<cdouble> naive_analytic(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<cdouble> X(n);
  for (std::size_t k = 0; k < n; ++k) {
    cdouble acc = 0;
    for (std::size_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, -2 * kPi * double(k * t) / n);
    X[k] = acc;
  }
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n) X[k] *= 2.0;
    else if (2 * k > n) X[k] = 0;
  }
  std::vector<cdouble> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    cdouble acc = 0;
    for (std::size_t k = 0; k < n; ++k) acc += X[k] * std::polar(1.0, 2 * kPi * double(k * t) / n);
    out[t] = acc / double(n);
  }
  return out;
}

}  // namespace

TEST_CASE("analytic signal of a cosine is a unit phasor") {
  const int n = 256;
  RawReflectionMatrix raw(1, 1, n, 40e6);
  const double f = 32.0 / n;  // integer bin, no leakage
  for (int t = 0; t < n; ++t) raw.data[t] = std::cos(2 * kPi * f * t);
  const auto a = analytic_signal(raw);
  for (int t = 0; t < n; ++t) {
    CHECK(std::abs(std::abs(a.data[t]) - 1.0) < 1e-6);
    CHECK(std::abs(a.data[t] - std::polar(1.0, 2 * kPi * f * t)) < 1e-9);
  }
}

TEST_CASE("analytic signal of zeros is zero") {
  RawReflectionMatrix raw(3, 2, 64, 40e6);
  const auto a = analytic_signal(raw);
  for (auto v : a.data) CHECK(v == cdouble(0, 0));
}

TEST_CASE("analytic signal matches a direct DFT oracle") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int n : {64, 97}) {
    RawReflectionMatrix raw(1, 1, n, 40e6);
    for (auto& v : raw.data) v = g(rng);
    const auto a = analytic_signal(raw);
    const auto ref = naive_analytic(raw.data);
    double dev_re = 0, dev = 0;
    for (int t = 0; t < n; ++t) {
      dev_re = std::max(dev_re, std::abs(a.data[t].real() - raw.data[t]));
      dev = std::max(dev, std::abs(a.data[t] - ref[t]));
    }
    CHECK(dev_re < 1e-9);
    CHECK(dev < 1e-9);
  }
}

TEST_CASE("analytic signal rejects short or non-finite traces") {
  RawReflectionMatrix shortc(1, 1, 4, 40e6);
  CHECK_THROWS_AS(analytic_signal(shortc), Error);
  RawReflectionMatrix bad(1, 1, 16, 40e6);
  bad.data[3] = std::nan("");
  CHECK_THROWS_AS(analytic_signal(bad), Error);
}

TEST_CASE("collection angle geometry") {
  const auto c = AcquisitionConfig::desk_default();
  const double half = 0.5 * c.aperture();
  CHECK(collection_angle({0, half}, c).beta == doctest::Approx(kPi / 4).epsilon(1e-12));
  CHECK(collection_angle({0, 1e7}, c).beta < 1e-5);

  // explicit min/max over element edges
  const Point r{3.7, 17.0};
  double best = 0;
  for (double u : {-half, half}) best = std::max(best, std::atan(std::abs(r.x - u) / r.z));
  CHECK(std::abs(collection_angle(r, c).beta - best) < 1e-12);

  auto clipped = c;
  clipped.max_steering_angle = 0.2;
  CHECK(collection_angle({0, 1}, clipped).beta == doctest::Approx(0.2));
  CHECK_THROWS_AS(collection_angle({0, 0}, c), Error);
}

TEST_CASE("ideal resolution limits") {
  auto c = AcquisitionConfig::desk_default();
  // beta -> 90 degrees
  CHECK(ideal_resolution({0, 1e-6}, c) == doctest::Approx(c.wavelength() / 2).epsilon(1e-6));
  // far field doubling
  const double a = ideal_resolution({0, 2000}, c), b = ideal_resolution({0, 4000}, c);
  CHECK(std::abs(b / a - 2.0) < 0.01);
  // wide probe near 29 mm gives about 0.19 mm
  const auto p = AcquisitionConfig::clinical_probe();
  CHECK(p.aperture() == doctest::Approx(38.4));
  CHECK(std::abs(ideal_resolution({0, 28.8}, p) - 0.19) < 0.005);
}

TEST_CASE("aliasing bound") {
  auto p = AcquisitionConfig::clinical_probe();
  CHECK(aliasing_bound(p) == doctest::Approx(45.3).epsilon(2e-3));
  auto fine = p;
  fine.transmit_angles = uniform_angles(201, 25.0 * kPi / 180.0);
  CHECK(aliasing_bound(fine) == doctest::Approx(2 * aliasing_bound(p)).epsilon(1e-9));
  auto high = p;
  high.min_frequency *= 2;
  CHECK(aliasing_bound(high) == doctest::Approx(0.5 * aliasing_bound(p)).epsilon(1e-12));
  auto single = p;
  single.transmit_angles = {0.0};
  CHECK_THROWS_AS(aliasing_bound(single), Error);
}

TEST_CASE("desk defaults") {
  const auto c = AcquisitionConfig::desk_default();
  CHECK(c.num_elements == 64);
  CHECK(c.transmit_angles.size() == 33);
  CHECK(c.angle_step() == doctest::Approx(1.25 * kPi / 180));
  CHECK(c.pulse_cycles == 3);
  const auto g = ImageGrid::desk_default();
  CHECK(g.nx() == 201);
  CHECK(g.nz() == 81);
  CHECK(g.nearest_x(100.0) == g.nx() - 1);
  CHECK(g.nearest_z(-1.0) == 0);
}

TEST_CASE("symmetric k axis") {
  const auto k = symmetric_k_axis(8, 0.5);
  CHECK(k[4] == 0.0);
  CHECK(k[1] - k[0] == doctest::Approx(2 * kPi / 4.0));
  const auto ko = symmetric_k_axis(7, 0.5);
  CHECK(ko[3] == 0.0);
  CHECK(ko[0] == doctest::Approx(-ko[6]));
}

TEST_CASE("basis tags are enforced") {
  Axis a{Basis::plane_wave_k, {0.0}};
  CHECK_NOTHROW(require_basis(a, Basis::plane_wave_k, "t"));
  try {
    require_basis(a, Basis::transducer_u, "t");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::basis_mismatch);
  }
}

TEST_CASE("config validation") {
  auto c = AcquisitionConfig::desk_default();
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.num_elements = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.sound_speed = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(ImageGrid::uniform(0, 1, 0, 1, 2, 0.1), Error);
}
