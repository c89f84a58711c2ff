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

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace umi {

using cdouble = std::complex<double>;

enum class Basis { focused_x, plane_wave_k, transducer_u };

std::string_view to_string(Basis basis);

enum class ErrorKind { invalid_input, geometry, basis_mismatch, numerical, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct Point {
  double x;  // [mm]
  double z;  // [mm]
};

struct Axis {
  Basis basis = Basis::focused_x;
  std::vector<double> coords;  // mm for x and u, rad/mm for k

  std::size_t size() const { return coords.size(); }
};

// Throws basis_mismatch when the axis does not carry the expected tag.
void require_basis(const Axis& axis, Basis expected, std::string_view context);

struct ComplexMatrix2D {
  Eigen::MatrixXcd values;
  Axis row_axis;
  Axis col_axis;
  std::optional<double> depth;  // [mm]

  void validate() const;
};

struct AcquisitionConfig {
  int num_elements = 64;
  double pitch = 0.3;                   // [mm]
  double center_frequency = 7.5e6;      // [Hz]
  double sampling_frequency = 40e6;     // [Hz]
  double sound_speed = 1580.0;          // [m/s]
  std::vector<double> transmit_angles;  // [rad]
  double record_duration = 64e-6;       // [s]
  int pulse_cycles = 3;                 // half periods
  double min_frequency = 2e6;           // [Hz] lower band edge
  std::optional<double> max_steering_angle;  // [rad] clip on beta(r)

  void validate() const;

  double wavelength() const { return sound_speed * 1e3 / center_frequency; }  // [mm]
  double wavenumber() const;                                                  // [rad/mm]
  double speed_mm_per_s() const { return sound_speed * 1e3; }
  double element_x(int i) const { return (i - 0.5 * (num_elements - 1)) * pitch; }
  std::vector<double> element_positions() const;
  double aperture() const { return num_elements * pitch; }
  double angle_step() const;
  int num_samples() const;

  static AcquisitionConfig desk_default();
  static AcquisitionConfig clinical_probe();
};

std::vector<double> uniform_angles(int count, double max_angle);

struct ImageGrid {
  std::vector<double> x;  // [mm]
  std::vector<double> z;  // [mm]
  double dx = 0.0;
  double dz = 0.0;

  static ImageGrid uniform(double x0, double x1, double dx, double z0, double z1, double dz);
  static ImageGrid desk_default();

  void validate() const;
  std::size_t nx() const { return x.size(); }
  std::size_t nz() const { return z.size(); }
  bool contains(const Point& r) const;
  // Nearest lateral index, clamped to the grid.
  std::size_t nearest_x(double xv) const;
  std::size_t nearest_z(double zv) const;
};

// Real channel data R(u_out, theta_in, t), time fastest.
struct RawReflectionMatrix {
  int num_elements = 0;
  int num_angles = 0;
  int num_samples = 0;
  double sampling_frequency = 0.0;  // [Hz]
  std::vector<double> data;

  RawReflectionMatrix() = default;
  RawReflectionMatrix(int nu, int nth, int nt, double fs);
  double* trace(int u, int th) { return data.data() + offset(u, th); }
  const double* trace(int u, int th) const { return data.data() + offset(u, th); }
  std::size_t offset(int u, int th) const {
    return (static_cast<std::size_t>(u) * num_angles + th) * num_samples;
  }
};

struct AnalyticCube {
  int num_elements = 0;
  int num_angles = 0;
  int num_samples = 0;
  double sampling_frequency = 0.0;  // [Hz]
  double start_time = 0.0;          // [s]
  std::vector<cdouble> data;

  AnalyticCube() = default;
  AnalyticCube(int nu, int nth, int nt, double fs);
  cdouble* trace(int u, int th) { return data.data() + offset(u, th); }
  const cdouble* trace(int u, int th) const { return data.data() + offset(u, th); }
  std::size_t offset(int u, int th) const {
    return (static_cast<std::size_t>(u) * num_angles + th) * num_samples;
  }
};

AnalyticCube analytic_signal(const RawReflectionMatrix& real_cube);

struct CollectionAngle {
  double beta;             // [rad]
  double aperture_extent;  // [mm] 2 z tan(beta)
};

CollectionAngle collection_angle(const Point& r, const AcquisitionConfig& config);
double ideal_resolution(const Point& r, const AcquisitionConfig& config);
double aliasing_bound(const AcquisitionConfig& config);
// Axial resolution c0 * T_pulse / 2.
double axial_resolution(const AcquisitionConfig& config);

// Symmetric wavenumber axis with spacing 2 pi / (n dx).
std::vector<double> symmetric_k_axis(std::size_t n, double dx);

// Circular mean of the phases of unit phasors.
double circular_mean(const Eigen::VectorXcd& phasors);

}  // namespace umi
