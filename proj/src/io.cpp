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

#include "umi/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include <omp.h>
#include <openssl/evp.h>
#include <png.h>

namespace umi {

static_assert(std::endian::native == std::endian::little, "dataset files assume a little-endian host");

namespace {

using nlohmann::json;

constexpr double kDeg = std::numbers::pi / 180.0;

// Reads one JSON object and rejects keys that were never asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }
  ~Fields() = default;

  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw Error(ErrorKind::invalid_input, "config: " + field + ": " + msg);
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void number(const std::string& key, T& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_number()) fail(at(key), "expected a number");
    if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) fail(at(key), "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0) {
          fail(at(key), "must be >= 0");
        }
      }
    }
    out = v->get<T>();
  }

  void positive(const std::string& key, double& out) {
    number(key, out);
    if (!(out > 0)) fail(at(key), "must be > 0");
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Basis parse_basis(const std::string& s, const std::string& field) {
  if (s == "k") return Basis::plane_wave_k;
  if (s == "u") return Basis::transducer_u;
  Fields::fail(field, "expected \"k\" or \"u\"");
}

std::string basis_tag(Basis b) { return b == Basis::plane_wave_k ? "k" : "u"; }

AberratorVariant parse_variant(const std::string& s, const std::string& field) {
  if (s == "none") return AberratorVariant::none;
  if (s == "transducer_screen") return AberratorVariant::transducer_screen;
  if (s == "plane_wave_screen") return AberratorVariant::plane_wave_screen;
  if (s == "layered_c") return AberratorVariant::layered_c;
  Fields::fail(field, "unknown aberrator variant \"" + s + "\"");
}

std::string variant_tag(AberratorVariant v) {
  switch (v) {
    case AberratorVariant::none: return "none";
    case AberratorVariant::transducer_screen: return "transducer_screen";
    case AberratorVariant::plane_wave_screen: return "plane_wave_screen";
    case AberratorVariant::layered_c: return "layered_c";
  }
  return "none";
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "short write to " + p.string());
}

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

}  // namespace

AberratorSpec RunConfig::aberrator_spec() const {
  AberratorSpec a;
  a.variant = aberrator;
  switch (aberrator) {
    case AberratorVariant::none:
      break;
    case AberratorVariant::transducer_screen:
      a.screen_phase = AberratorSpec::random_screen(acquisition.num_elements, screen.rms,
                                                    screen.correlation_length, screen.seed);
      break;
    case AberratorVariant::plane_wave_screen:
      a.screen_angles = acquisition.transmit_angles;
      a.screen_phase = AberratorSpec::random_screen(static_cast<int>(acquisition.transmit_angles.size()), screen.rms,
                                                    screen.correlation_length, screen.seed);
      break;
    case AberratorVariant::layered_c:
      a.layers = layers;
      break;
  }
  a.validate(acquisition);
  return a;
}

PhantomSpec RunConfig::phantom_spec() const { return PhantomSpec::speckle(grid, phantom_seed, phantom_margin); }

PipelineOptions RunConfig::pipeline_options() const {
  PipelineOptions o;
  o.apodization.f_number = f_number;
  o.area = area;
  return o;
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  Fields root(j, "");
  if (const json* v = root.get("acquisition")) {
    Fields f(*v, "acquisition");
    AcquisitionConfig& a = c.acquisition;
    f.number("num_elements", a.num_elements);
    if (a.num_elements < 1) Fields::fail("acquisition.num_elements", "must be >= 1");
    f.positive("pitch_mm", a.pitch);
    f.positive("center_frequency_hz", a.center_frequency);
    f.positive("sampling_frequency_hz", a.sampling_frequency);
    f.positive("sound_speed_m_s", a.sound_speed);
    f.positive("record_duration_s", a.record_duration);
    f.number("pulse_half_periods", a.pulse_cycles);
    if (a.pulse_cycles < 1) Fields::fail("acquisition.pulse_half_periods", "must be >= 1");
    f.positive("min_frequency_hz", a.min_frequency);
    int count = static_cast<int>(a.transmit_angles.size());
    double max_deg = 20.0;
    f.number("angle_count", count);
    if (count < 1) Fields::fail("acquisition.angle_count", "must be >= 1");
    f.number("max_angle_deg", max_deg);
    if (!(max_deg >= 0 && max_deg < 90)) Fields::fail("acquisition.max_angle_deg", "must be in [0, 90)");
    a.transmit_angles = uniform_angles(count, max_deg * kDeg);
    if (const json* s = f.get("max_steering_angle_deg")) {
      if (!s->is_null()) {
        if (!s->is_number() || !(s->get<double>() > 0)) Fields::fail("acquisition.max_steering_angle_deg", "must be > 0");
        a.max_steering_angle = s->get<double>() * kDeg;
      }
    }
    f.finish();
    try {
      a.validate();
    } catch (const Error& e) {
      Fields::fail("acquisition", e.what());
    }
  }
  if (const json* v = root.get("grid")) {
    Fields f(*v, "grid");
    double x0 = c.grid.x.front(), x1 = c.grid.x.back(), dx = c.grid.dx;
    double z0 = c.grid.z.front(), z1 = c.grid.z.back(), dz = c.grid.dz;
    f.number("x_min_mm", x0);
    f.number("x_max_mm", x1);
    f.positive("dx_mm", dx);
    f.positive("z_min_mm", z0);
    f.positive("z_max_mm", z1);
    f.positive("dz_mm", dz);
    f.finish();
    if (!(x1 > x0)) Fields::fail("grid.x_max_mm", "must exceed x_min_mm");
    if (!(z1 > z0)) Fields::fail("grid.z_max_mm", "must exceed z_min_mm");
    c.grid = ImageGrid::uniform(x0, x1, dx, z0, z1, dz);
  }
  if (const json* v = root.get("beamform")) {
    Fields f(*v, "beamform");
    f.positive("f_number", c.f_number);
    f.finish();
  }
  if (const json* v = root.get("phantom")) {
    Fields f(*v, "phantom");
    f.number("seed", c.phantom_seed);
    f.number("margin_mm", c.phantom_margin);
    if (c.phantom_margin < 0) Fields::fail("phantom.margin_mm", "must be >= 0");
    f.finish();
  }
  if (const json* v = root.get("aberrator")) {
    Fields f(*v, "aberrator");
    c.aberrator = parse_variant(f.string("variant", "none"), "aberrator.variant");
    f.number("rms_rad", c.screen.rms);
    if (c.screen.rms < 0) Fields::fail("aberrator.rms_rad", "must be >= 0");
    f.number("correlation_length_elements", c.screen.correlation_length);
    if (c.screen.correlation_length < 0) Fields::fail("aberrator.correlation_length_elements", "must be >= 0");
    f.number("seed", c.screen.seed);
    if (const json* l = f.get("layers")) {
      if (!l->is_array()) Fields::fail("aberrator.layers", "expected an array");
      c.layers.clear();
      for (std::size_t i = 0; i < l->size(); ++i) {
        Fields lf((*l)[i], "aberrator.layers[" + std::to_string(i) + "]");
        Layer layer{0.0, c.acquisition.sound_speed};
        lf.number("thickness_mm", layer.thickness);
        lf.positive("sound_speed_m_s", layer.sound_speed);
        lf.finish();
        if (i + 1 < l->size() && !(layer.thickness > 0)) {
          Fields::fail("aberrator.layers[" + std::to_string(i) + "].thickness_mm", "must be > 0");
        }
        c.layers.push_back(layer);
      }
    }
    f.finish();
    if (c.aberrator == AberratorVariant::layered_c && c.layers.empty()) {
      Fields::fail("aberrator.layers", "layered_c needs at least one layer");
    }
  }
  if (const json* v = root.get("noise")) {
    Fields f(*v, "noise");
    if (const json* p = f.get("power_db")) {
      if (p->is_null()) {
        c.noise.power_db = -std::numeric_limits<double>::infinity();
      } else if (p->is_number()) {
        c.noise.power_db = p->get<double>();
      } else {
        Fields::fail("noise.power_db", "expected a number or null");
      }
    }
    if (const json* l = f.get("correlation_length_mm")) {
      if (!l->is_null()) {
        if (!l->is_number() || !(l->get<double>() > 0)) Fields::fail("noise.correlation_length_mm", "must be > 0");
        c.noise.correlation_length = l->get<double>();
      }
    }
    f.number("seed", c.noise.seed);
    f.finish();
  }
  if (const json* v = root.get("schedule")) {
    if (!v->is_array() || v->empty()) Fields::fail("schedule", "expected a non-empty array");
    c.schedule.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string path = "schedule[" + std::to_string(i) + "]";
      Fields f((*v)[i], path);
      ScheduleStep s;
      s.index = static_cast<int>(i) + 1;
      f.number("step", s.index);
      f.positive("n", s.filter_factor);
      f.positive("dx_mm", s.half_x);
      f.positive("dz_mm", s.half_z);
      s.transmit_basis = parse_basis(f.string("transmit_basis", "k"), path + ".transmit_basis");
      s.receive_basis = parse_basis(f.string("receive_basis", "u"), path + ".receive_basis");
      const std::string svd = f.string("svd_type", "D");
      if (svd == "D") {
        s.svd_type = SvdType::D;
      } else if (svd == "C_hat") {
        s.svd_type = SvdType::C_hat;
      } else {
        Fields::fail(path + ".svd_type", "expected \"D\" or \"C_hat\"");
      }
      f.finish();
      c.schedule.push_back(s);
    }
    try {
      validate_schedule(c.schedule);
    } catch (const Error& e) {
      Fields::fail("schedule", e.what());
    }
  }
  if (const json* v = root.get("metrics")) {
    Fields f(*v, "metrics");
    if (const json* a = f.get("area_mm")) {
      if (!a->is_array() || a->size() != 4) Fields::fail("metrics.area_mm", "expected [x0, x1, z0, z1]");
      for (const auto& e : *a) {
        if (!e.is_number()) Fields::fail("metrics.area_mm", "expected numbers");
      }
      c.area = {(*a)[0].get<double>(), (*a)[1].get<double>(), (*a)[2].get<double>(), (*a)[3].get<double>()};
      if (!(c.area.x1 > c.area.x0) || !(c.area.z1 > c.area.z0)) Fields::fail("metrics.area_mm", "empty area");
    }
    f.finish();
  }
  root.number("reference_seed", c.reference_seed);
  root.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::invalid_input, std::string("config: malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  const AcquisitionConfig& a = c.acquisition;
  json j;
  j["acquisition"] = {
      {"num_elements", a.num_elements},
      {"pitch_mm", a.pitch},
      {"center_frequency_hz", a.center_frequency},
      {"sampling_frequency_hz", a.sampling_frequency},
      {"sound_speed_m_s", a.sound_speed},
      {"record_duration_s", a.record_duration},
      {"pulse_half_periods", a.pulse_cycles},
      {"min_frequency_hz", a.min_frequency},
      {"angle_count", a.transmit_angles.size()},
      {"max_angle_deg", a.transmit_angles.empty() ? 0.0 : a.transmit_angles.back() / kDeg},
      {"max_steering_angle_deg", a.max_steering_angle ? json(*a.max_steering_angle / kDeg) : json(nullptr)},
  };
  j["grid"] = {{"x_min_mm", c.grid.x.front()}, {"x_max_mm", c.grid.x.back()}, {"dx_mm", c.grid.dx},
               {"z_min_mm", c.grid.z.front()}, {"z_max_mm", c.grid.z.back()}, {"dz_mm", c.grid.dz}};
  j["beamform"] = {{"f_number", c.f_number}};
  j["phantom"] = {{"seed", c.phantom_seed}, {"margin_mm", c.phantom_margin}};
  json layers = json::array();
  for (const Layer& l : c.layers) layers.push_back({{"thickness_mm", l.thickness}, {"sound_speed_m_s", l.sound_speed}});
  j["aberrator"] = {{"variant", variant_tag(c.aberrator)},
                    {"rms_rad", c.screen.rms},
                    {"correlation_length_elements", c.screen.correlation_length},
                    {"seed", c.screen.seed},
                    {"layers", layers}};
  j["noise"] = {{"power_db", std::isfinite(c.noise.power_db) ? json(c.noise.power_db) : json(nullptr)},
                {"correlation_length_mm",
                 c.noise.correlation_length ? json(*c.noise.correlation_length) : json(nullptr)},
                {"seed", c.noise.seed}};
  json sched = json::array();
  for (const ScheduleStep& s : c.schedule) {
    sched.push_back({{"step", s.index},
                     {"n", s.filter_factor},
                     {"dx_mm", s.half_x},
                     {"dz_mm", s.half_z},
                     {"transmit_basis", basis_tag(s.transmit_basis)},
                     {"receive_basis", basis_tag(s.receive_basis)},
                     {"svd_type", s.svd_type == SvdType::D ? "D" : "C_hat"}});
  }
  j["schedule"] = sched;
  j["metrics"] = {{"area_mm", {c.area.x0, c.area.x1, c.area.z0, c.area.z1}}};
  j["reference_seed"] = c.reference_seed;
  return j;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::io, "sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

Dataset Dataset::create(const std::filesystem::path& dir, const json& provenance) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  Dataset ds(dir);
  ds.manifest_ = {{"format", "umi-dataset/1"}, {"provenance", provenance}, {"arrays", json::object()},
                  {"meta", json::object()}};
  ds.manifest_["provenance"]["version"] = UMI_VERSION;
  return ds;
}

Dataset Dataset::open(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "missing " + path.string());
  Dataset ds(dir);
  try {
    in >> ds.manifest_;
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::io, std::string("malformed manifest: ") + e.what());
  }
  if (ds.manifest_.value("format", "") != "umi-dataset/1") throw Error(ErrorKind::io, "unsupported dataset format");
  return ds;
}

bool Dataset::has(const std::string& name) const {
  return manifest_.contains("arrays") && manifest_["arrays"].contains(name);
}

void Dataset::put_bytes(const std::string& name, const std::string& dtype, const std::vector<std::uint8_t>& bytes,
                        std::vector<std::size_t> shape) {
  const std::string file = name + ".bin";
  write_file(dir_ / file, bytes);
  manifest_["arrays"][name] = {{"file", file}, {"dtype", dtype}, {"shape", shape}, {"sha256", sha256_hex(bytes)}};
}

std::vector<std::uint8_t> Dataset::get_bytes(const std::string& name, const std::string& dtype,
                                             std::vector<std::size_t>* shape) const {
  if (!has(name)) throw Error(ErrorKind::io, "dataset has no array " + name);
  const json& e = manifest_["arrays"][name];
  if (e.value("dtype", "") != dtype) throw Error(ErrorKind::io, "array " + name + " is not " + dtype);
  auto bytes = read_file(dir_ / e.at("file").get<std::string>());
  if (sha256_hex(bytes) != e.at("sha256").get<std::string>()) {
    throw Error(ErrorKind::io, "checksum mismatch for " + name);
  }
  const auto sh = e.at("shape").get<std::vector<std::size_t>>();
  const std::size_t width = dtype == "complex64" ? 8 : 4;
  if (bytes.size() != product(sh) * width) throw Error(ErrorKind::io, "size mismatch for " + name);
  if (shape) *shape = sh;
  return bytes;
}

void Dataset::put_float32(const std::string& name, std::span<const double> values, std::vector<std::size_t> shape) {
  if (product(shape) != values.size()) throw Error(ErrorKind::invalid_input, "put_float32: shape mismatch");
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + 4 * i, &f, 4);
  }
  put_bytes(name, "float32", bytes, std::move(shape));
}

void Dataset::put_complex64(const std::string& name, std::span<const cdouble> values, std::vector<std::size_t> shape) {
  if (product(shape) != values.size()) throw Error(ErrorKind::invalid_input, "put_complex64: shape mismatch");
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f[2] = {static_cast<float>(values[i].real()), static_cast<float>(values[i].imag())};
    std::memcpy(bytes.data() + 8 * i, f, 8);
  }
  put_bytes(name, "complex64", bytes, std::move(shape));
}

std::vector<double> Dataset::get_float32(const std::string& name, std::vector<std::size_t>* shape) const {
  const auto bytes = get_bytes(name, "float32", shape);
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

std::vector<cdouble> Dataset::get_complex64(const std::string& name, std::vector<std::size_t>* shape) const {
  const auto bytes = get_bytes(name, "complex64", shape);
  std::vector<cdouble> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f[2];
    std::memcpy(f, bytes.data() + 8 * i, 8);
    out[i] = {f[0], f[1]};
  }
  return out;
}

void Dataset::save() const {
  std::ofstream out(dir_ / "manifest.json");
  if (!out) throw Error(ErrorKind::io, "cannot write manifest in " + dir_.string());
  out << manifest_.dump(2) << '\n';
}

void save_raw(Dataset& ds, const RawReflectionMatrix& raw) {
  ds.put_float32("rf", raw.data,
                 {static_cast<std::size_t>(raw.num_elements), static_cast<std::size_t>(raw.num_angles),
                  static_cast<std::size_t>(raw.num_samples)});
  ds.manifest()["meta"]["raw_sampling_frequency_hz"] = raw.sampling_frequency;
}

RawReflectionMatrix load_raw(const Dataset& ds) {
  std::vector<std::size_t> shape;
  auto data = ds.get_float32("rf", &shape);
  if (shape.size() != 3) throw Error(ErrorKind::io, "rf: expected three axes");
  RawReflectionMatrix raw(static_cast<int>(shape[0]), static_cast<int>(shape[1]), static_cast<int>(shape[2]),
                          ds.manifest().at("meta").at("raw_sampling_frequency_hz").get<double>());
  raw.data = std::move(data);
  return raw;
}

void save_matrix(Dataset& ds, const std::string& name, const FocusedReflectionMatrix& m) {
  const std::size_t nx = m.grid.nx(), nz = m.grid.nz();
  std::vector<cdouble> flat(nz * nx * nx);
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t j = 0; j < nx; ++j) {
        flat[(iz * nx + i) * nx + j] = m.slices[iz](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
  }
  ds.put_complex64(name, flat, {nz, nx, nx});
  ds.manifest()["meta"][name] = {{"x_min_mm", m.grid.x.front()}, {"dx_mm", m.grid.dx},
                                 {"z_min_mm", m.grid.z.front()}, {"dz_mm", m.grid.dz},
                                 {"mask_bound_mm", m.mask_bound}, {"dropped", m.dropped}};
}

FocusedReflectionMatrix load_matrix(const Dataset& ds, const std::string& name) {
  std::vector<std::size_t> shape;
  const auto flat = ds.get_complex64(name, &shape);
  if (shape.size() != 3 || shape[1] != shape[2]) throw Error(ErrorKind::io, name + ": expected (z, x, x)");
  const json& meta = ds.manifest().at("meta").at(name);
  const std::size_t nz = shape[0], nx = shape[1];
  const double x0 = meta.at("x_min_mm").get<double>(), dx = meta.at("dx_mm").get<double>();
  const double z0 = meta.at("z_min_mm").get<double>(), dz = meta.at("dz_mm").get<double>();
  FocusedReflectionMatrix m;
  m.grid = ImageGrid::uniform(x0, x0 + dx * (nx - 1), dx, z0, z0 + dz * (nz - 1), dz);
  if (m.grid.nx() != nx || m.grid.nz() != nz) throw Error(ErrorKind::io, name + ": grid metadata mismatch");
  m.mask_bound = meta.at("mask_bound_mm").get<double>();
  m.dropped = meta.at("dropped").get<std::uint64_t>();
  m.slices.assign(nz, Eigen::MatrixXcd(static_cast<Eigen::Index>(nx), static_cast<Eigen::Index>(nx)));
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t j = 0; j < nx; ++j) {
        m.slices[iz](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = flat[(iz * nx + i) * nx + j];
      }
    }
  }
  return m;
}

void write_png(const std::filesystem::path& path, const PixelMap& intensity, double dynamic_range_db) {
  if (intensity.nx == 0 || intensity.nz == 0) throw Error(ErrorKind::invalid_input, "write_png: empty image");
  double peak = 0;
  for (double v : intensity.values) {
    if (std::isfinite(v)) peak = std::max(peak, v);
  }
  std::vector<png_byte> pixels(intensity.nx * intensity.nz, 0);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = intensity.values[i];
    if (!(peak > 0) || !(v > 0) || !std::isfinite(v)) continue;
    const double db = std::max(-dynamic_range_db, 10 * std::log10(v / peak));
    pixels[i] = static_cast<png_byte>(std::lround(255.0 * (1.0 + db / dynamic_range_db)));
  }
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw Error(ErrorKind::io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error(ErrorKind::io, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(intensity.nx), static_cast<png_uint_32>(intensity.nz), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < intensity.nz; ++r) png_write_row(png, pixels.data() + r * intensity.nx);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n' << std::setprecision(10);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
}

json to_json(const StepLogEntry& e) {
  const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"step", e.step},
          {"substep", e.substep},
          {"basis", std::string(to_string(e.basis))},
          {"median_F", num(e.median_F)},
          {"area_F", num(e.area_F)},
          {"contrast_db", num(e.contrast_db)},
          {"fwhm_mm", num(e.fwhm)},
          {"width_6db_mm", num(e.width_6db)},
          {"law_rms_rad", e.law_rms ? num(*e.law_rms) : json(nullptr)},
          {"windows", e.windows},
          {"valid_windows", e.valid_windows},
          {"gated_windows", e.gated_windows},
          {"rolled_back", e.rolled_back}};
}

int configure_threads() {
  if (const char* s = std::getenv("UMI_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(s, &end, 10);
    if (end == s || *end != '\0' || n < 1) {
      throw Error(ErrorKind::invalid_input, "UMI_THREADS must be a positive integer");
    }
    omp_set_num_threads(static_cast<int>(n));
  }
  return omp_get_max_threads();
}

}  // namespace umi
