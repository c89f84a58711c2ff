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

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "umi/core.hpp"

namespace umi {

struct Scatterer {
  Point position;
  cdouble amplitude;
};

struct SpeckleRegion {
  double x0, x1, z0, z1;  // [mm]
  double variance;
};

struct SpecularInterface {
  double depth;      // [mm]
  double amplitude;
};

struct PhantomSpec {
  // Lattice carrying circular Gaussian reflectivity; absent for sparse scenes.
  std::optional<ImageGrid> lattice;
  double background_variance = 1.0;
  std::vector<SpeckleRegion> regions;  // later entries override earlier ones
  std::vector<Scatterer> point_scatterers;
  std::vector<SpecularInterface> specular_interfaces;
  double interface_spacing = 0.05;  // [mm]
  double interface_half_width = 14.0;  // [mm]
  std::uint64_t seed = 1;

  void validate() const;
  // Deterministic under seed.
  std::vector<Scatterer> realize() const;

  static PhantomSpec speckle(const ImageGrid& image, std::uint64_t seed, double margin = 1.0);
};

enum class AberratorVariant { none, transducer_screen, plane_wave_screen, layered_c };

struct Layer {
  double thickness;    // [mm], ignored for the last layer
  double sound_speed;  // [m/s]
};

struct AberratorSpec {
  AberratorVariant variant = AberratorVariant::none;
  std::vector<double> screen_phase;      // per element, or per screen angle
  std::vector<double> screen_amplitude;  // empty means unit modulus
  std::vector<double> screen_angles;     // [rad] for plane_wave_screen
  std::vector<Layer> layers;             // for layered_c

  void validate(const AcquisitionConfig& config) const;

  // Gaussian-correlated phase screen with given RMS and correlation length in elements.
  static std::vector<double> random_screen(int n, double rms, double correlation_length,
                                           std::uint64_t seed);
};

struct PulseSpec {
  int half_periods = 3;
  double center_frequency = 7.5e6;  // [Hz]

  double duration() const { return half_periods / (2 * center_frequency); }
  double evaluate(double t) const;
  static PulseSpec from_config(const AcquisitionConfig& config);
};

struct MultipleScatteringNoiseSpec {
  double power_db = -std::numeric_limits<double>::infinity();  // relative to signal RMS
  std::optional<double> correlation_length;  // [mm], default one wavelength
  std::uint64_t seed = 7;
};

struct SimulationResult {
  RawReflectionMatrix rf;
  std::size_t truncated_echoes = 0;
};

// Travel times through the true medium described by an aberrator.
class Medium {
 public:
  Medium(const AberratorSpec& aberrator, const AcquisitionConfig& config);

  struct TransmitPath {
    double tau;     // [s]
    double u_star;  // [mm] array point of the ray reaching the scatterer
    bool valid;
  };
  struct ReceivePath {
    double tau;        // [s]
    double sin_angle;  // ray direction at the array, (x - u)/d for uniform media
  };

  TransmitPath transmit(double theta, const Point& r) const;
  ReceivePath receive(double u, const Point& r) const;

 private:
  std::vector<double> thickness_;  // [mm]
  std::vector<double> speed_;      // [mm/s]
  double c0_;                      // [mm/s]
  double sin_scale_;               // horizontal slowness per sin(theta)
  bool layered_;
};

SimulationResult synthesize_raw(const PhantomSpec& phantom, const AberratorSpec& aberrator,
                                const PulseSpec& pulse, const AcquisitionConfig& config);
SimulationResult synthesize_raw(std::span<const Scatterer> scatterers, const AberratorSpec& aberrator,
                                const PulseSpec& pulse, const AcquisitionConfig& config);

RawReflectionMatrix add_ms_noise(const RawReflectionMatrix& raw, const MultipleScatteringNoiseSpec& spec,
                                 const AcquisitionConfig& config);

// One-way aberration phase seen from r_p, piston removed. The axis is u [mm] for the
// transducer basis and k [rad/mm] for the plane-wave basis.
std::vector<double> ground_truth_law(const AberratorSpec& aberrator, const AcquisitionConfig& config,
                                     Basis basis, const Point& r_p, std::span<const double> axis);
std::vector<double> ground_truth_law(const AberratorSpec& aberrator, const AcquisitionConfig& config,
                                     Basis basis, const Point& r_p);

}  // namespace umi
