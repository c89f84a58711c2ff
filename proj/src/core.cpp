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

#include "umi/core.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace umi {

namespace {
std::mutex fftw_planner_mutex;
}

std::string_view to_string(Basis basis) {
  switch (basis) {
    case Basis::focused_x:
      return "focused-x";
    case Basis::plane_wave_k:
      return "plane-wave-k";
    case Basis::transducer_u:
      return "transducer-u";
  }
  return "unknown";
}

void require_basis(const Axis& axis, Basis expected, std::string_view context) {
  if (axis.basis != expected) {
    throw Error(ErrorKind::basis_mismatch, std::string(context) + ": expected " +
                                               std::string(to_string(expected)) + " axis, got " +
                                               std::string(to_string(axis.basis)));
  }
}

void ComplexMatrix2D::validate() const {
  if (static_cast<std::size_t>(values.rows()) != row_axis.size() ||
      static_cast<std::size_t>(values.cols()) != col_axis.size()) {
    throw Error(ErrorKind::invalid_input, "ComplexMatrix2D: axis length does not match values");
  }
}

void AcquisitionConfig::validate() const {
  if (num_elements < 1) throw Error(ErrorKind::invalid_input, "num_elements must be >= 1");
  if (!(pitch > 0)) throw Error(ErrorKind::invalid_input, "pitch must be > 0");
  if (!(sound_speed > 0)) throw Error(ErrorKind::invalid_input, "sound_speed must be > 0");
  if (!(center_frequency > 0)) throw Error(ErrorKind::invalid_input, "center_frequency must be > 0");
  if (!(sampling_frequency > 2 * center_frequency)) {
    throw Error(ErrorKind::invalid_input, "sampling_frequency must exceed 2 * center_frequency");
  }
  if (!(record_duration > 0)) throw Error(ErrorKind::invalid_input, "record_duration must be > 0");
  if (pulse_cycles < 1) throw Error(ErrorKind::invalid_input, "pulse_cycles must be >= 1");
  if (!(min_frequency > 0)) throw Error(ErrorKind::invalid_input, "min_frequency must be > 0");
  if (transmit_angles.empty()) throw Error(ErrorKind::invalid_input, "transmit_angles is empty");
  if (transmit_angles.size() >= 2) {
    const double step = transmit_angles[1] - transmit_angles[0];
    for (std::size_t i = 1; i < transmit_angles.size(); ++i) {
      const double d = transmit_angles[i] - transmit_angles[i - 1];
      if (!(d > 0)) throw Error(ErrorKind::invalid_input, "transmit_angles must be strictly increasing");
      if (std::abs(d - step) > 1e-9 * std::max(1.0, std::abs(step))) {
        throw Error(ErrorKind::invalid_input, "transmit_angles must have a uniform step");
      }
    }
  }
  if (max_steering_angle && !(*max_steering_angle > 0)) {
    throw Error(ErrorKind::invalid_input, "max_steering_angle must be > 0");
  }
}

double AcquisitionConfig::wavenumber() const {
  return 2 * std::numbers::pi / wavelength();
}

std::vector<double> AcquisitionConfig::element_positions() const {
  std::vector<double> u(num_elements);
  for (int i = 0; i < num_elements; ++i) u[i] = element_x(i);
  return u;
}

double AcquisitionConfig::angle_step() const {
  if (transmit_angles.size() < 2) {
    throw Error(ErrorKind::invalid_input, "angle step undefined for a single transmit angle");
  }
  return (transmit_angles.back() - transmit_angles.front()) / (transmit_angles.size() - 1);
}

int AcquisitionConfig::num_samples() const {
  return static_cast<int>(std::ceil(record_duration * sampling_frequency));
}

std::vector<double> uniform_angles(int count, double max_angle) {
  std::vector<double> a(count);
  if (count == 1) {
    a[0] = 0.0;
    return a;
  }
  for (int i = 0; i < count; ++i) a[i] = -max_angle + 2 * max_angle * i / (count - 1);
  return a;
}

AcquisitionConfig AcquisitionConfig::desk_default() {
  AcquisitionConfig c;
  c.transmit_angles = uniform_angles(33, 20.0 * std::numbers::pi / 180.0);
  return c;
}

AcquisitionConfig AcquisitionConfig::clinical_probe() {
  AcquisitionConfig c;
  c.num_elements = 192;
  c.pitch = 0.2;
  c.transmit_angles = uniform_angles(101, 25.0 * std::numbers::pi / 180.0);
  c.record_duration = 80e-6;
  return c;
}

ImageGrid ImageGrid::uniform(double x0, double x1, double dx, double z0, double z1, double dz) {
  if (!(dx > 0) || !(dz > 0) || x1 < x0 || z1 < z0) {
    throw Error(ErrorKind::geometry, "ImageGrid::uniform: invalid extent or spacing");
  }
  ImageGrid g;
  g.dx = dx;
  g.dz = dz;
  const auto nx = static_cast<std::size_t>(std::floor((x1 - x0) / dx + 1e-9)) + 1;
  const auto nz = static_cast<std::size_t>(std::floor((z1 - z0) / dz + 1e-9)) + 1;
  for (std::size_t i = 0; i < nx; ++i) g.x.push_back(x0 + i * dx);
  for (std::size_t i = 0; i < nz; ++i) g.z.push_back(z0 + i * dz);
  g.validate();
  return g;
}

ImageGrid ImageGrid::desk_default() {
  return uniform(-15.0, 15.0, 0.15, 5.0, 45.0, 0.5);
}

void ImageGrid::validate() const {
  if (x.empty() || z.empty()) throw Error(ErrorKind::geometry, "ImageGrid: empty axis");
  for (double zv : z) {
    if (!(zv > 0)) throw Error(ErrorKind::geometry, "ImageGrid: all depths must be > 0");
  }
  auto check_uniform = [](const std::vector<double>& a, double d, const char* name) {
    for (std::size_t i = 1; i < a.size(); ++i) {
      if (std::abs(a[i] - a[i - 1] - d) > 1e-9 * std::max(1.0, d)) {
        throw Error(ErrorKind::geometry, std::string("ImageGrid: non-uniform ") + name + " axis");
      }
    }
  };
  check_uniform(x, dx, "x");
  check_uniform(z, dz, "z");
}

bool ImageGrid::contains(const Point& r) const {
  const double hx = 0.5 * dx, hz = 0.5 * dz;
  return r.x >= x.front() - hx && r.x <= x.back() + hx && r.z >= z.front() - hz &&
         r.z <= z.back() + hz;
}

std::size_t ImageGrid::nearest_x(double xv) const {
  if (x.size() == 1) return 0;
  const double f = std::round((xv - x.front()) / dx);
  return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(x.size() - 1)));
}

std::size_t ImageGrid::nearest_z(double zv) const {
  if (z.size() == 1) return 0;
  const double f = std::round((zv - z.front()) / dz);
  return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(z.size() - 1)));
}

RawReflectionMatrix::RawReflectionMatrix(int nu, int nth, int nt, double fs)
    : num_elements(nu),
      num_angles(nth),
      num_samples(nt),
      sampling_frequency(fs),
      data(static_cast<std::size_t>(nu) * nth * nt, 0.0) {}

AnalyticCube::AnalyticCube(int nu, int nth, int nt, double fs)
    : num_elements(nu),
      num_angles(nth),
      num_samples(nt),
      sampling_frequency(fs),
      data(static_cast<std::size_t>(nu) * nth * nt, cdouble(0.0, 0.0)) {}

AnalyticCube analytic_signal(const RawReflectionMatrix& real_cube) {
  const int n = real_cube.num_samples;
  if (n < 8) throw Error(ErrorKind::invalid_input, "analytic_signal: time axis shorter than 8");
  for (double v : real_cube.data) {
    if (!std::isfinite(v)) throw Error(ErrorKind::invalid_input, "analytic_signal: non-finite sample");
  }
  AnalyticCube out(real_cube.num_elements, real_cube.num_angles, n, real_cube.sampling_frequency);
  const int howmany = real_cube.num_elements * real_cube.num_angles;
  if (howmany == 0) return out;

  auto* buf = reinterpret_cast<fftw_complex*>(out.data.data());
  fftw_plan fwd, inv;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex);
    fwd = fftw_plan_many_dft(1, &n, howmany, buf, nullptr, 1, n, buf, nullptr, 1, n, FFTW_FORWARD,
                             FFTW_ESTIMATE);
    inv = fftw_plan_many_dft(1, &n, howmany, buf, nullptr, 1, n, buf, nullptr, 1, n, FFTW_BACKWARD,
                             FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < real_cube.data.size(); ++i) out.data[i] = cdouble(real_cube.data[i], 0.0);
  fftw_execute(fwd);

  std::vector<double> h(n, 0.0);
  h[0] = 1.0;
  if (n % 2 == 0) {
    h[n / 2] = 1.0;
    for (int i = 1; i < n / 2; ++i) h[i] = 2.0;
  } else {
    for (int i = 1; i <= n / 2; ++i) h[i] = 2.0;
  }
  const double scale = 1.0 / n;
  for (int tr = 0; tr < howmany; ++tr) {
    cdouble* s = out.data.data() + static_cast<std::size_t>(tr) * n;
    for (int i = 0; i < n; ++i) s[i] *= h[i] * scale;
  }
  fftw_execute(inv);
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  return out;
}

CollectionAngle collection_angle(const Point& r, const AcquisitionConfig& config) {
  if (!(r.z > 0)) throw Error(ErrorKind::geometry, "collection_angle: z must be > 0");
  const double half = 0.5 * config.aperture();
  const double offset = std::max(std::abs(r.x - half), std::abs(r.x + half));
  double beta = std::atan(offset / r.z);
  if (config.max_steering_angle) beta = std::min(beta, *config.max_steering_angle);
  return {beta, 2 * r.z * std::tan(beta)};
}

double ideal_resolution(const Point& r, const AcquisitionConfig& config) {
  if (!(r.z > 0)) throw Error(ErrorKind::geometry, "ideal_resolution: z must be > 0");
  const double beta = collection_angle(r, config).beta;
  return config.wavelength() / (2 * std::sin(beta));
}

double aliasing_bound(const AcquisitionConfig& config) {
  if (config.transmit_angles.size() < 2) {
    throw Error(ErrorKind::invalid_input, "aliasing_bound: undefined for a single transmit angle");
  }
  const double lambda_max = config.speed_mm_per_s() / config.min_frequency;
  return lambda_max / (2 * config.angle_step());
}

double axial_resolution(const AcquisitionConfig& config) {
  const double duration = config.pulse_cycles * 0.5 / config.center_frequency;
  return config.speed_mm_per_s() * duration / 2;
}

std::vector<double> symmetric_k_axis(std::size_t n, double dx) {
  std::vector<double> k(n);
  const double dk = 2 * std::numbers::pi / (n * dx);
  const double c = std::floor(n / 2.0);
  for (std::size_t j = 0; j < n; ++j) k[j] = (static_cast<double>(j) - c) * dk;
  return k;
}

double circular_mean(const Eigen::VectorXcd& phasors) {
  cdouble s = phasors.sum();
  if (std::abs(s) == 0.0) return 0.0;
  return std::arg(s);
}

}  // namespace umi
