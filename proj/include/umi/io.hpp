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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "umi/pipeline.hpp"

namespace umi {

struct ScreenConfig {
  double rms = 1.0;                // [rad]
  double correlation_length = 10;  // [elements]
  std::uint64_t seed = 11;
};

struct RunConfig {
  AcquisitionConfig acquisition = AcquisitionConfig::desk_default();
  ImageGrid grid = ImageGrid::desk_default();
  double f_number = 1.0;
  std::uint64_t phantom_seed = 1;
  double phantom_margin = 1.0;  // [mm]
  AberratorVariant aberrator = AberratorVariant::none;
  ScreenConfig screen;
  std::vector<Layer> layers;
  MultipleScatteringNoiseSpec noise;
  std::vector<ScheduleStep> schedule = table_one_schedule();
  Region area{-5.0, 5.0, 20.0, 30.0};
  std::uint64_t reference_seed = 1001;

  AberratorSpec aberrator_spec() const;
  PhantomSpec phantom_spec() const;
  PipelineOptions pipeline_options() const;
};

// Unknown keys and out-of-range values raise invalid_input naming the field.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

// Directory holding manifest.json and one little-endian C-order .bin per array.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static Dataset create(const std::filesystem::path& dir, const nlohmann::json& provenance);
  static Dataset open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  nlohmann::json& manifest() { return manifest_; }
  const nlohmann::json& manifest() const { return manifest_; }
  bool has(const std::string& name) const;

  void put_float32(const std::string& name, std::span<const double> values, std::vector<std::size_t> shape);
  void put_complex64(const std::string& name, std::span<const cdouble> values, std::vector<std::size_t> shape);
  std::vector<double> get_float32(const std::string& name, std::vector<std::size_t>* shape = nullptr) const;
  std::vector<cdouble> get_complex64(const std::string& name, std::vector<std::size_t>* shape = nullptr) const;
  void save() const;

 private:
  void put_bytes(const std::string& name, const std::string& dtype, const std::vector<std::uint8_t>& bytes,
                 std::vector<std::size_t> shape);
  std::vector<std::uint8_t> get_bytes(const std::string& name, const std::string& dtype,
                                      std::vector<std::size_t>* shape) const;

  std::filesystem::path dir_;
  nlohmann::json manifest_ = nlohmann::json::object();
};

void save_raw(Dataset& ds, const RawReflectionMatrix& raw);
RawReflectionMatrix load_raw(const Dataset& ds);
void save_matrix(Dataset& ds, const std::string& name, const FocusedReflectionMatrix& m);
FocusedReflectionMatrix load_matrix(const Dataset& ds, const std::string& name);

// Log-compressed grayscale, 0 dB at the maximum, clipped at -dynamic_range_db.
void write_png(const std::filesystem::path& path, const PixelMap& intensity, double dynamic_range_db = 40.0);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

nlohmann::json to_json(const StepLogEntry& e);

// Applies UMI_THREADS when set; returns the thread count in effect.
int configure_threads();

}  // namespace umi
