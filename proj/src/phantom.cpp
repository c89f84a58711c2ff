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

#include "umi/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>

#include <fftw3.h>

namespace umi {

namespace {

constexpr double kPi = std::numbers::pi;

// Linear interpolation on a sorted axis with constant extrapolation.
double interp_clamped(std::span<const double> xs, std::span<const double> ys, double x) {
  if (xs.size() == 1) return ys[0];
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs.begin()) - 1;
  const double t = (x - xs[i]) / (xs[i + 1] - xs[i]);
  return ys[i] * (1 - t) + ys[i + 1] * t;
}

std::mt19937_64 channel_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

std::mutex fftw_mutex;

// Scatterer whose normal-incidence echo lands on r_p in the model medium.
Point imaged_source(const Medium& truth, const Medium& model, const Point& r_p) {
  const double target = model.transmit(0, r_p).tau;
  double lo = 0, hi = 2 * r_p.z + 1;
  while (truth.transmit(0, {r_p.x, hi}).tau < target) hi *= 2;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (truth.transmit(0, {r_p.x, mid}).tau < target ? lo : hi) = mid;
  }
  return {r_p.x, 0.5 * (lo + hi)};
}

}  // namespace

void PhantomSpec::validate() const {
  if (lattice) lattice->validate();
  if (!(background_variance >= 0) || !std::isfinite(background_variance)) {
    throw Error(ErrorKind::invalid_input, "phantom: background_variance must be finite and >= 0");
  }
  for (const auto& r : regions) {
    if (!(r.variance >= 0) || !std::isfinite(r.variance)) {
      throw Error(ErrorKind::invalid_input, "phantom: region variance must be finite and >= 0");
    }
  }
  for (const auto& p : point_scatterers) {
    if (!std::isfinite(p.amplitude.real()) || !std::isfinite(p.amplitude.imag())) {
      throw Error(ErrorKind::invalid_input, "phantom: non-finite point amplitude");
    }
    if (!(p.position.z > 0)) throw Error(ErrorKind::geometry, "phantom: point scatterer above the array");
    if (lattice && !lattice->contains(p.position)) {
      throw Error(ErrorKind::geometry, "phantom: point scatterer outside the phantom grid");
    }
  }
  for (const auto& s : specular_interfaces) {
    if (!(s.depth > 0) || !std::isfinite(s.amplitude)) {
      throw Error(ErrorKind::invalid_input, "phantom: invalid specular interface");
    }
  }
}

std::vector<Scatterer> PhantomSpec::realize() const {
  validate();
  std::vector<Scatterer> out;
  if (lattice) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    const ImageGrid& g = *lattice;
    out.reserve(g.nx() * g.nz());
    for (double z : g.z) {
      for (double x : g.x) {
        const double jx = jitter(rng) * g.dx;
        const double jz = jitter(rng) * g.dz;
        const double re = gauss(rng);
        const double im = gauss(rng);
        double var = background_variance;
        for (const auto& r : regions) {
          if (x >= r.x0 && x <= r.x1 && z >= r.z0 && z <= r.z1) var = r.variance;
        }
        if (var <= 0) continue;
        const double s = std::sqrt(var / 2);
        out.push_back({{x + jx, z + jz}, cdouble(re * s, im * s)});
      }
    }
  }
  for (const auto& p : point_scatterers) out.push_back(p);
  for (const auto& s : specular_interfaces) {
    const int n = static_cast<int>(std::floor(interface_half_width / interface_spacing));
    for (int i = -n; i <= n; ++i) {
      out.push_back({{i * interface_spacing, s.depth}, cdouble(s.amplitude, 0.0)});
    }
  }
  return out;
}

PhantomSpec PhantomSpec::speckle(const ImageGrid& image, std::uint64_t seed, double margin) {
  PhantomSpec p;
  p.lattice = ImageGrid::uniform(image.x.front() - margin, image.x.back() + margin, 0.15,
                                 std::max(0.5, image.z.front() - margin), image.z.back() + margin,
                                 0.1);
  p.seed = seed;
  return p;
}

void AberratorSpec::validate(const AcquisitionConfig& config) const {
  for (double v : screen_phase) {
    if (!std::isfinite(v)) throw Error(ErrorKind::invalid_input, "aberrator: non-finite screen phase");
  }
  for (double a : screen_amplitude) {
    if (!(a > 0 && a <= 1)) throw Error(ErrorKind::invalid_input, "aberrator: screen amplitude outside (0,1]");
  }
  switch (variant) {
    case AberratorVariant::none:
      break;
    case AberratorVariant::transducer_screen:
      if (static_cast<int>(screen_phase.size()) != config.num_elements) {
        throw Error(ErrorKind::invalid_input, "aberrator: transducer screen needs one phase per element");
      }
      if (!screen_amplitude.empty() && screen_amplitude.size() != screen_phase.size()) {
        throw Error(ErrorKind::invalid_input, "aberrator: screen amplitude length mismatch");
      }
      break;
    case AberratorVariant::plane_wave_screen: {
      const std::size_t n = screen_angles.empty() ? config.transmit_angles.size() : screen_angles.size();
      if (screen_phase.size() != n) {
        throw Error(ErrorKind::invalid_input, "aberrator: plane-wave screen needs one phase per angle");
      }
      if (!screen_amplitude.empty() && screen_amplitude.size() != n) {
        throw Error(ErrorKind::invalid_input, "aberrator: screen amplitude length mismatch");
      }
      break;
    }
    case AberratorVariant::layered_c:
      if (layers.empty()) throw Error(ErrorKind::invalid_input, "aberrator: layered_c needs layers");
      for (const auto& l : layers) {
        if (!(l.sound_speed > 0)) throw Error(ErrorKind::invalid_input, "aberrator: layer speed must be > 0");
      }
      for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        if (!(layers[i].thickness > 0)) {
          throw Error(ErrorKind::invalid_input, "aberrator: layer thickness must be > 0");
        }
      }
      break;
  }
}

std::vector<double> AberratorSpec::random_screen(int n, double rms, double correlation_length,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int pad = static_cast<int>(std::ceil(3 * correlation_length));
  std::vector<double> white(n + 2 * pad);
  for (auto& w : white) w = gauss(rng);
  std::vector<double> out(n, 0.0);
  // autocorrelation exp(-d^2 / l^2)
  const double sigma = std::max(correlation_length, 1e-9) / 2;
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (int j = -pad; j <= pad; ++j) acc += white[i + pad + j] * std::exp(-0.5 * j * j / (sigma * sigma));
    out[i] = acc;
  }
  const double mean = std::accumulate(out.begin(), out.end(), 0.0) / n;
  double ss = 0;
  for (auto& v : out) {
    v -= mean;
    ss += v * v;
  }
  const double scale = ss > 0 ? rms / std::sqrt(ss / n) : 0.0;
  for (auto& v : out) v *= scale;
  return out;
}

double PulseSpec::evaluate(double t) const {
  const double T = duration();
  if (std::abs(t) > 0.5 * T) return 0.0;
  const double w = std::cos(kPi * t / T);
  return w * w * std::cos(2 * kPi * center_frequency * t);
}

PulseSpec PulseSpec::from_config(const AcquisitionConfig& config) {
  return {config.pulse_cycles, config.center_frequency};
}

Medium::Medium(const AberratorSpec& aberrator, const AcquisitionConfig& config)
    : c0_(config.speed_mm_per_s()),
      sin_scale_(1.0 / config.speed_mm_per_s()),
      layered_(aberrator.variant == AberratorVariant::layered_c) {
  if (layered_) {
    for (const auto& l : aberrator.layers) {
      thickness_.push_back(l.thickness);
      speed_.push_back(l.sound_speed * 1e3);
    }
  }
}

Medium::TransmitPath Medium::transmit(double theta, const Point& r) const {
  if (!layered_) {
    const double s = std::sin(theta), c = std::cos(theta);
    return {(r.x * s + r.z * c) / c0_, r.x - r.z * s / c, true};
  }
  const double p = std::sin(theta) * sin_scale_;
  double tau = p * r.x, shift = 0, top = 0;
  for (std::size_t i = 0; i < speed_.size() && top < r.z; ++i) {
    const double h = (i + 1 == speed_.size()) ? r.z - top : std::min(thickness_[i], r.z - top);
    const double pc = p * speed_[i];
    if (pc >= 1) return {0, 0, false};
    const double q = std::sqrt(1 - pc * pc);
    tau += h * q / speed_[i];
    shift += h * pc / q;
    top += h;
  }
  return {tau, r.x - shift, true};
}

Medium::ReceivePath Medium::receive(double u, const Point& r) const {
  const double dx = r.x - u;
  if (!layered_) {
    const double d = std::hypot(dx, r.z);
    return {d / c0_, dx / d};
  }
  std::vector<double> h;
  std::vector<double> c;
  double top = 0, cmax = 0;
  for (std::size_t i = 0; i < speed_.size() && top < r.z; ++i) {
    const double hi = (i + 1 == speed_.size()) ? r.z - top : std::min(thickness_[i], r.z - top);
    h.push_back(hi);
    c.push_back(speed_[i]);
    cmax = std::max(cmax, speed_[i]);
    top += hi;
  }
  const double X = std::abs(dx);
  double p = 0;
  if (X > 0) {
    double lo = 0, hi = 1.0 / cmax;
    const double zsum = std::accumulate(h.begin(), h.end(), 0.0);
    p = std::min(X / (c[0] * std::hypot(X, zsum)), 0.5 * hi);
    for (int it = 0; it < 200; ++it) {
      double f = -X, df = 0;
      for (std::size_t i = 0; i < h.size(); ++i) {
        const double pc = p * c[i];
        const double q = std::sqrt(1 - pc * pc);
        f += h[i] * pc / q;
        df += h[i] * c[i] / (q * q * q);
      }
      if (f > 0) hi = p; else lo = p;
      double next = p - f / df;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - p) <= 1e-15 * std::abs(p)) {
        p = next;
        break;
      }
      p = next;
    }
  }
  double tau = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double pc = p * c[i];
    tau += h[i] / (c[i] * std::sqrt(1 - pc * pc));
  }
  const double s = p * c[0];
  return {tau, dx >= 0 ? s : -s};
}

SimulationResult synthesize_raw(const PhantomSpec& phantom, const AberratorSpec& aberrator,
                                const PulseSpec& pulse, const AcquisitionConfig& config) {
  const auto scatterers = phantom.realize();
  return synthesize_raw(scatterers, aberrator, pulse, config);
}

SimulationResult synthesize_raw(std::span<const Scatterer> scatterers, const AberratorSpec& aberrator,
                                const PulseSpec& pulse, const AcquisitionConfig& config) {
  config.validate();
  aberrator.validate(config);
  if (scatterers.empty()) throw Error(ErrorKind::invalid_input, "synthesize_raw: empty phantom");

  const int nu = config.num_elements;
  const int nth = static_cast<int>(config.transmit_angles.size());
  const int nt = config.num_samples();
  const double fs = config.sampling_frequency;
  const std::size_t ns = scatterers.size();
  SimulationResult result{RawReflectionMatrix(nu, nth, nt, fs), 0};

  const Medium medium(aberrator, config);
  const double T = pulse.duration();
  const double omega = 2 * kPi * pulse.center_frequency;
  const double Omega = 2 * kPi / T;  // envelope cos^2(pi t/T) = (1 + cos(Omega t))/2
  const double omega_screen = 2 * kPi * config.center_frequency;
  const double half_aperture = 0.5 * config.aperture();
  const auto elements = config.element_positions();

  std::vector<double> amp_el(nu, 1.0);
  std::vector<double> phase_el(nu, 0.0);
  if (aberrator.variant == AberratorVariant::transducer_screen) {
    phase_el = aberrator.screen_phase;
    if (!aberrator.screen_amplitude.empty()) amp_el = aberrator.screen_amplitude;
  }
  const std::vector<double> pw_angles =
      aberrator.screen_angles.empty() ? config.transmit_angles : aberrator.screen_angles;
  std::vector<double> pw_amp(pw_angles.size(), 1.0);
  if (aberrator.variant == AberratorVariant::plane_wave_screen && !aberrator.screen_amplitude.empty()) {
    pw_amp = aberrator.screen_amplitude;
  }
  const bool is_tscreen = aberrator.variant == AberratorVariant::transducer_screen;
  const bool is_pwscreen = aberrator.variant == AberratorVariant::plane_wave_screen;

  std::vector<double> mag(ns);
  std::vector<cdouble> unit(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    mag[s] = std::abs(scatterers[s].amplitude);
    unit[s] = mag[s] > 0 ? scatterers[s].amplitude / mag[s] : cdouble(1, 0);
  }

  // Transmit leg per (angle, scatterer): delay and the two rotating phasors.
  struct Leg {
    double tau;
    double gain;
    cdouble carrier;   // exp(-i omega tau)
    cdouble envelope;  // exp(-i Omega tau)
  };
  std::vector<Leg> tx(static_cast<std::size_t>(nth) * ns);
  for (int th = 0; th < nth; ++th) {
    const double theta = config.transmit_angles[th];
    for (std::size_t s = 0; s < ns; ++s) {
      const auto path = medium.transmit(theta, scatterers[s].position);
      Leg leg{path.tau, 0.0, {}, {}};
      if (path.valid && path.u_star >= -half_aperture && path.u_star <= half_aperture) {
        leg.gain = 1.0;
        if (is_tscreen) {
          leg.tau += interp_clamped(elements, phase_el, path.u_star) / omega_screen;
          leg.gain *= interp_clamped(elements, amp_el, path.u_star);
        } else if (is_pwscreen) {
          leg.tau += interp_clamped(pw_angles, aberrator.screen_phase, theta) / omega_screen;
          leg.gain *= interp_clamped(pw_angles, pw_amp, theta);
        }
      }
      leg.carrier = std::polar(1.0, -omega * leg.tau);
      leg.envelope = std::polar(1.0, -Omega * leg.tau);
      tx[static_cast<std::size_t>(th) * ns + s] = leg;
    }
  }

  std::vector<cdouble> table_w(nt), table_W(nt);
  for (int n = 0; n < nt; ++n) {
    table_w[n] = std::polar(1.0, omega * n / fs);
    table_W[n] = std::polar(1.0, Omega * n / fs);
  }
  const double t_last = (nt - 1) / fs;

  std::size_t truncated = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : truncated)
  for (int u = 0; u < nu; ++u) {
    std::vector<double> rx_tau(ns), rx_gain(ns);
    std::vector<cdouble> rx_carrier(ns), rx_envelope(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      const auto path = medium.receive(elements[u], scatterers[s].position);
      double tau = path.tau, gain = 1.0;
      if (is_tscreen) {
        tau += phase_el[u] / omega_screen;
        gain *= amp_el[u];
      } else if (is_pwscreen) {
        const double a = std::asin(std::clamp(path.sin_angle, -1.0, 1.0));
        tau += interp_clamped(pw_angles, aberrator.screen_phase, a) / omega_screen;
        gain *= interp_clamped(pw_angles, pw_amp, a);
      }
      rx_tau[s] = tau;
      rx_gain[s] = gain;
      rx_carrier[s] = unit[s] * std::polar(1.0, -omega * tau);
      rx_envelope[s] = std::polar(1.0, -Omega * tau);
    }
    for (int th = 0; th < nth; ++th) {
      double* trace = result.rf.trace(u, th);
      const Leg* legs = tx.data() + static_cast<std::size_t>(th) * ns;
      for (std::size_t s = 0; s < ns; ++s) {
        const double g = legs[s].gain * rx_gain[s] * mag[s];
        if (g == 0) continue;
        const double t0 = legs[s].tau + rx_tau[s];
        if (t0 + 0.5 * T > t_last) ++truncated;
        const long n0 = std::max(0L, static_cast<long>(std::ceil((t0 - 0.5 * T) * fs)));
        const long n1 = std::min(static_cast<long>(nt) - 1, static_cast<long>(std::floor((t0 + 0.5 * T) * fs)));
        if (n1 < n0) continue;
        // exp(i omega (n/fs - t0)) and exp(i Omega (n/fs - t0)) at n = n0
        const cdouble carrier = table_w[n0] * legs[s].carrier * rx_carrier[s];
        const cdouble envelope = table_W[n0] * legs[s].envelope * rx_envelope[s];
        const double half_g = 0.5 * g;
        for (long n = n0; n <= n1; ++n) {
          const std::size_t k = static_cast<std::size_t>(n - n0);
          const double e = envelope.real() * table_W[k].real() - envelope.imag() * table_W[k].imag();
          const double w = carrier.real() * table_w[k].real() - carrier.imag() * table_w[k].imag();
          trace[n] += half_g * (1.0 + e) * w;
        }
      }
    }
  }
  result.truncated_echoes = truncated;
  return result;
}

RawReflectionMatrix add_ms_noise(const RawReflectionMatrix& raw, const MultipleScatteringNoiseSpec& spec,
                                 const AcquisitionConfig& config) {
  if (std::isnan(spec.power_db)) throw Error(ErrorKind::invalid_input, "add_ms_noise: power is NaN");
  if (spec.power_db == -std::numeric_limits<double>::infinity()) return raw;
  if (!std::isfinite(spec.power_db)) throw Error(ErrorKind::invalid_input, "add_ms_noise: power must be finite");
  const double corr = spec.correlation_length.value_or(config.wavelength());
  if (!(corr >= 0)) throw Error(ErrorKind::invalid_input, "add_ms_noise: correlation length must be >= 0");

  const int nu = raw.num_elements, nth = raw.num_angles, nt = raw.num_samples;
  RawReflectionMatrix noise(nu, nth, nt, raw.sampling_frequency);
  for (int u = 0; u < nu; ++u) {
    for (int th = 0; th < nth; ++th) {
      auto rng = channel_rng(spec.seed, u, th);
      std::normal_distribution<double> gauss(0.0, 1.0);
      double* tr = noise.trace(u, th);
      for (int n = 0; n < nt; ++n) tr[n] = gauss(rng);
    }
  }

  // Band-pass every trace with the pulse magnitude spectrum.
  const PulseSpec pulse = PulseSpec::from_config(config);
  std::vector<double> pulse_samples(nt, 0.0);
  const double fs = raw.sampling_frequency;
  for (int n = 0; n < nt; ++n) {
    const double t = (n <= nt / 2 ? n : n - nt) / fs;
    pulse_samples[n] = pulse.evaluate(t);
  }
  const int nf = nt / 2 + 1;
  std::vector<cdouble> spec_buf(nf);
  std::vector<double> gain(nf);
  std::vector<double> tbuf(nt);
  fftw_plan fwd, inv;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    fwd = fftw_plan_dft_r2c_1d(nt, tbuf.data(), reinterpret_cast<fftw_complex*>(spec_buf.data()), FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(nt, reinterpret_cast<fftw_complex*>(spec_buf.data()), tbuf.data(), FFTW_ESTIMATE);
  }
  std::copy(pulse_samples.begin(), pulse_samples.end(), tbuf.begin());
  fftw_execute(fwd);
  for (int k = 0; k < nf; ++k) gain[k] = std::abs(spec_buf[k]) / nt;
  for (int u = 0; u < nu; ++u) {
    for (int th = 0; th < nth; ++th) {
      double* tr = noise.trace(u, th);
      std::copy(tr, tr + nt, tbuf.begin());
      fftw_execute(fwd);
      for (int k = 0; k < nf; ++k) spec_buf[k] *= gain[k];
      fftw_execute(inv);
      std::copy(tbuf.begin(), tbuf.end(), tr);
    }
  }
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }

  // Lateral Gaussian correlation across elements.
  RawReflectionMatrix smooth = noise;
  const double sigma = corr / config.pitch;
  if (sigma > 0) {
    const int half = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> kernel(2 * half + 1);
    for (int j = -half; j <= half; ++j) kernel[j + half] = std::exp(-0.5 * j * j / (sigma * sigma));
    for (int th = 0; th < nth; ++th) {
      for (int u = 0; u < nu; ++u) {
        double* out = smooth.trace(u, th);
        std::fill(out, out + nt, 0.0);
        for (int j = -half; j <= half; ++j) {
          const int v = u + j;
          if (v < 0 || v >= nu) continue;
          const double w = kernel[j + half];
          const double* in = noise.trace(v, th);
          for (int n = 0; n < nt; ++n) out[n] += w * in[n];
        }
      }
    }
  }

  double ss_signal = 0, ss_noise = 0;
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    ss_signal += raw.data[i] * raw.data[i];
    ss_noise += smooth.data[i] * smooth.data[i];
  }
  RawReflectionMatrix out = raw;
  if (ss_noise == 0) return out;
  const double scale = std::sqrt(ss_signal / ss_noise) * std::pow(10.0, spec.power_db / 20);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += scale * smooth.data[i];
  return out;
}

std::vector<double> ground_truth_law(const AberratorSpec& aberrator, const AcquisitionConfig& config,
                                     Basis basis, const Point& r_p, std::span<const double> axis) {
  if (basis == Basis::focused_x) {
    throw Error(ErrorKind::basis_mismatch, "ground_truth_law: basis must be plane-wave or transducer");
  }
  const std::size_t n = axis.size();
  std::vector<double> law(n, 0.0);
  if (aberrator.variant == AberratorVariant::none || n == 0) return law;
  aberrator.validate(config);
  const double kc = config.wavenumber();
  const double omega = 2 * kPi * config.center_frequency;
  const auto elements = config.element_positions();
  const std::vector<double> pw_angles =
      aberrator.screen_angles.empty() ? config.transmit_angles : aberrator.screen_angles;
  const Medium truth(aberrator, config);
  const Medium model(AberratorSpec{}, config);
  Point source = r_p;
  if (aberrator.variant == AberratorVariant::layered_c) source = imaged_source(truth, model, r_p);

  for (std::size_t i = 0; i < n; ++i) {
    const double a = axis[i];
    switch (aberrator.variant) {
      case AberratorVariant::none:
        break;
      case AberratorVariant::transducer_screen: {
        double u = a;
        if (basis == Basis::plane_wave_k) {
          const double s = std::clamp(a / kc, -1.0, 1.0);
          u = r_p.x - r_p.z * s / std::sqrt(1 - s * s);
        }
        law[i] = interp_clamped(elements, aberrator.screen_phase, u);
        break;
      }
      case AberratorVariant::plane_wave_screen: {
        double s;
        if (basis == Basis::plane_wave_k) {
          s = std::clamp(a / kc, -1.0, 1.0);
        } else {
          s = (r_p.x - a) / std::hypot(r_p.x - a, r_p.z);
        }
        law[i] = interp_clamped(pw_angles, aberrator.screen_phase, std::asin(s));
        break;
      }
      case AberratorVariant::layered_c: {
        if (basis == Basis::transducer_u) {
          law[i] = omega * (truth.receive(a, source).tau - model.receive(a, r_p).tau);
        } else {
          const double theta = std::asin(std::clamp(a / kc, -1.0, 1.0));
          const auto t = truth.transmit(theta, source);
          law[i] = t.valid ? omega * (t.tau - model.transmit(theta, r_p).tau) : 0.0;
        }
        break;
      }
    }
  }
  const double mean = std::accumulate(law.begin(), law.end(), 0.0) / n;
  for (auto& v : law) v -= mean;
  return law;
}

std::vector<double> ground_truth_law(const AberratorSpec& aberrator, const AcquisitionConfig& config,
                                     Basis basis, const Point& r_p) {
  std::vector<double> axis;
  if (basis == Basis::transducer_u) {
    axis = config.element_positions();
  } else {
    const double kc = config.wavenumber();
    for (double t : config.transmit_angles) axis.push_back(kc * std::sin(t));
  }
  return ground_truth_law(aberrator, config, basis, r_p, axis);
}

}  // namespace umi
