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

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "doctest.h"

#include "umi/io.hpp"

using namespace umi;
using nlohmann::json;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("umi_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string error_text(const json& j) {
  try {
    parse_config(j);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::vector<std::uint8_t> bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const RunConfig d = parse_config(json::object());
  CHECK(d.acquisition.num_elements == 64);
  CHECK(d.schedule.size() == 4);
  CHECK(d.aberrator == AberratorVariant::none);
  const json j = to_json(d);
  CHECK(to_json(parse_config(j)) == j);

  json custom = j;
  custom["acquisition"]["num_elements"] = 8;
  custom["aberrator"]["variant"] = "transducer_screen";
  const RunConfig c = parse_config(custom);
  CHECK(c.acquisition.num_elements == 8);
  CHECK(c.aberrator == AberratorVariant::transducer_screen);
  CHECK(c.aberrator_spec().screen_phase.size() == 8);
}

TEST_CASE("config rejects unknown keys and bad values by field") {
  CHECK(error_text({{"acquisiton", json::object()}}).find("acquisiton") != std::string::npos);
  CHECK(error_text({{"acquisition", {{"pitch", 0.3}}}}).find("acquisition.pitch") != std::string::npos);
  CHECK(error_text({{"acquisition", {{"num_elements", 0}}}}).find("acquisition.num_elements") != std::string::npos);
  CHECK(error_text({{"acquisition", {{"pitch_mm", -1.0}}}}).find("acquisition.pitch_mm") != std::string::npos);
  CHECK(error_text({{"grid", {{"x_min_mm", 3.0}, {"x_max_mm", 1.0}}}}).find("grid.x_max_mm") != std::string::npos);
  CHECK(error_text({{"aberrator", {{"variant", "lens"}}}}).find("aberrator.variant") != std::string::npos);
  CHECK(error_text({{"acquisition", {{"num_elements", "64"}}}}) != "");
  try {
    parse_config({{"bogus", 1}});
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_input);
  }
}

TEST_CASE("sha256 known digests") {
  const std::string abc = "abc";
  CHECK(sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("dataset round trip") {
  const auto dir = scratch_dir("roundtrip");
  {
    auto ds = Dataset::create(dir, {{"seed", 3}});
    const std::vector<double> f{0.5, -1.25, 3.0, 1e-3, 7.0, 0.0};
    const std::vector<cdouble> z{{1, -2}, {0.25, 0.5}, {-8, 0}};
    ds.put_float32("f", f, {2, 3});
    ds.put_complex64("z", z, {3});
    CHECK_THROWS_AS(ds.put_float32("bad", f, {4}), Error);
    ds.save();
  }
  const auto ds = Dataset::open(dir);
  std::vector<std::size_t> shape;
  const auto f = ds.get_float32("f", &shape);
  CHECK(shape == std::vector<std::size_t>{2, 3});
  CHECK(f == std::vector<double>{0.5, -1.25, 3.0, static_cast<float>(1e-3), 7.0, 0.0});
  CHECK(ds.get_complex64("z") == std::vector<cdouble>{{1, -2}, {0.25, 0.5}, {-8, 0}});
  CHECK(std::filesystem::file_size(dir / "f.bin") == 6 * 4);
  CHECK(std::filesystem::file_size(dir / "z.bin") == 3 * 8);
  CHECK(ds.manifest()["provenance"]["seed"] == 3);
  CHECK(ds.manifest()["provenance"].contains("version"));
  CHECK_THROWS_AS(ds.get_complex64("f"), Error);
  CHECK_THROWS_AS(ds.get_float32("missing"), Error);

  // corrupted payload is caught by the checksum
  {
    std::ofstream out(dir / "f.bin", std::ios::binary | std::ios::in | std::ios::out);
    out.put('x');
  }
  CHECK_THROWS_AS(ds.get_float32("f"), Error);
  CHECK_THROWS_AS(Dataset::open(scratch_dir("absent")), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("matrix and raw cube round trip") {
  const auto dir = scratch_dir("matrix");
  auto ds = Dataset::create(dir, json::object());
  FocusedReflectionMatrix m;
  m.grid = ImageGrid::uniform(-1, 1, 0.5, 10, 11, 0.5);
  m.mask_bound = 2.5;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> q(-64, 64);
  for (std::size_t iz = 0; iz < m.grid.nz(); ++iz) {
    Eigen::MatrixXcd s(5, 5);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = {q(rng) / 8.0, q(rng) / 8.0};
    m.slices.push_back(s);
  }
  save_matrix(ds, "R", m);
  RawReflectionMatrix raw(2, 3, 4, 40e6);
  for (std::size_t i = 0; i < raw.data.size(); ++i) raw.data[i] = static_cast<double>(i) - 5.5;
  save_raw(ds, raw);
  ds.save();

  const auto back = Dataset::open(dir);
  const auto m2 = load_matrix(back, "R");
  REQUIRE(m2.slices.size() == m.slices.size());
  for (std::size_t iz = 0; iz < m.slices.size(); ++iz) CHECK(m2.slices[iz] == m.slices[iz]);
  CHECK(m2.grid.x == m.grid.x);
  CHECK(m2.grid.z == m.grid.z);
  const auto r2 = load_raw(back);
  CHECK(r2.data == raw.data);
  CHECK(r2.sampling_frequency == 40e6);
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulation is byte identical under a fixed seed") {
  json j = json::object();
  j["acquisition"] = {{"num_elements", 8}, {"angle_count", 5}, {"record_duration_s", 30e-6}};
  j["grid"] = {{"x_min_mm", -2.0}, {"x_max_mm", 2.0}, {"dx_mm", 0.15}, {"z_min_mm", 10.0}, {"z_max_mm", 14.0}, {"dz_mm", 0.5}};
  j["aberrator"] = {{"variant", "transducer_screen"}};
  const RunConfig c = parse_config(j);
  std::vector<std::string> digests;
  for (int run = 0; run < 2; ++run) {
    const auto dir = scratch_dir("determinism" + std::to_string(run));
    auto ds = Dataset::create(dir, json::object());
    const auto sim = synthesize_raw(c.phantom_spec(), c.aberrator_spec(), PulseSpec::from_config(c.acquisition), c.acquisition);
    save_raw(ds, sim.rf);
    ds.save();
    digests.push_back(sha256_hex(bytes_of(dir / "rf.bin")));
    std::filesystem::remove_all(dir);
  }
  CHECK(digests[0] == digests[1]);
}

TEST_CASE("png and csv output") {
  const auto dir = scratch_dir("images");
  std::filesystem::create_directories(dir);
  PixelMap img(4, 3, 1.0);
  img.at(1, 2) = 100.0;
  write_png(dir / "a.png", img, 40.0);
  const auto png = bytes_of(dir / "a.png");
  REQUIRE(png.size() > 8);
  CHECK(png[1] == 'P');
  CHECK(png[2] == 'N');
  CHECK(png[3] == 'G');

  write_csv(dir / "t.csv", {"a", "b"}, {{1.0, 2.5}, {3.0, -1.0}});
  std::ifstream in(dir / "t.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "a,b");
  CHECK(row.rfind("1,2.5", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("step log entries serialize") {
  StepLogEntry e;
  e.step = 2;
  e.substep = "input";
  e.basis = Basis::plane_wave_k;
  e.median_F = 0.8;
  json j = to_json(e);
  CHECK(j["step"] == 2);
  CHECK(j["substep"] == "input");
  CHECK(j["law_rms_rad"].is_null());
  e.law_rms = 0.2;
  CHECK(to_json(e)["law_rms_rad"] == 0.2);
}
