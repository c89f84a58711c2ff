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
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "umi/io.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

std::vector<double> split_numbers(const std::string& s, std::size_t expected, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw umi::Error(umi::ErrorKind::invalid_input, flag + ": not a number: '" + item + "'");
    }
  }
  if (out.size() != expected) {
    throw umi::Error(umi::ErrorKind::invalid_input, flag + ": expected " + std::to_string(expected) + " values");
  }
  return out;
}

umi::RunConfig config_of(const umi::Dataset& ds) {
  return umi::parse_config(ds.manifest().at("provenance").at("config"));
}

umi::Dataset derive(const umi::Dataset& in, const fs::path& out, const umi::RunConfig& config,
                    const std::string& command) {
  json prov = in.manifest().at("provenance");
  prov["config"] = umi::to_json(config);
  prov["parents"].push_back({{"command", command}, {"manifest_sha256", [&] {
                               const std::string m = in.manifest().dump();
                               return umi::sha256_hex({reinterpret_cast<const std::uint8_t*>(m.data()), m.size()});
                             }()}});
  umi::Dataset ds = umi::Dataset::create(out, prov);
  ds.manifest()["provenance"]["command"] = command;
  return ds;
}

void copy_array(const umi::Dataset& from, umi::Dataset& to, const std::string& name) {
  if (!from.has(name)) return;
  const json& e = from.manifest()["arrays"][name];
  const fs::path src = from.dir() / e.at("file").get<std::string>();
  const fs::path dst = to.dir() / e.at("file").get<std::string>();
  if (fs::absolute(src) != fs::absolute(dst)) fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
  to.manifest()["arrays"][name] = e;
  if (from.manifest()["meta"].contains(name)) to.manifest()["meta"][name] = from.manifest()["meta"][name];
}

umi::FocusReference reference_for(const umi::RunConfig& c) {
  std::cerr << "building aberration-free reference\n";
  return umi::build_focus_reference(c.grid, c.acquisition, c.pipeline_options(), c.reference_seed);
}

int cmd_simulate(const fs::path& config_path, const fs::path& out) {
  const umi::RunConfig c = umi::load_config(config_path);
  const umi::AberratorSpec ab = c.aberrator_spec();
  const umi::PhantomSpec phantom = c.phantom_spec();
  umi::SimulationResult sim = umi::synthesize_raw(phantom, ab, umi::PulseSpec::from_config(c.acquisition), c.acquisition);
  if (std::isfinite(c.noise.power_db)) sim.rf = umi::add_ms_noise(sim.rf, c.noise, c.acquisition);

  umi::Dataset ds = umi::Dataset::create(out, {{"config", umi::to_json(c)}, {"command", "simulate"},
                                               {"parents", json::array()}});
  umi::save_raw(ds, sim.rf);
  ds.manifest()["meta"]["truncated_echoes"] = sim.truncated_echoes;
  if (!ab.screen_phase.empty()) {
    ds.put_float32("truth_screen_phase", ab.screen_phase, {ab.screen_phase.size()});
  }
  const auto u = c.acquisition.element_positions();
  std::vector<double> truth;
  std::vector<double> centers;
  for (double z : {15.0, 25.0, 35.0}) {
    const auto law = umi::ground_truth_law(ab, c.acquisition, umi::Basis::transducer_u, {0.0, z}, u);
    truth.insert(truth.end(), law.begin(), law.end());
    centers.push_back(z);
  }
  ds.put_float32("truth_law_u", truth, {centers.size(), u.size()});
  ds.manifest()["meta"]["truth_law_u"] = {{"x_mm", 0.0}, {"z_mm", centers}};
  ds.save();
  std::cout << "wrote " << out << " (" << sim.rf.num_elements << " x " << sim.rf.num_angles << " x "
            << sim.rf.num_samples << ")\n";
  return 0;
}

int cmd_beamform(const fs::path& in, const fs::path& out, const std::string& grid, double fnum) {
  const umi::Dataset src = umi::Dataset::open(in);
  umi::RunConfig c = config_of(src);
  if (!grid.empty()) {
    const auto g = split_numbers(grid, 6, "--grid");
    c.grid = umi::ImageGrid::uniform(g[0], g[1], g[2], g[3], g[4], g[5]);
  }
  if (fnum > 0) c.f_number = fnum;
  const umi::RawReflectionMatrix rf = umi::load_raw(src);
  const umi::FocusedReflectionMatrix r =
      umi::das_focus(umi::analytic_signal(rf), c.grid, c.acquisition, c.pipeline_options().apodization);
  umi::Dataset ds = derive(src, out, c, "beamform");
  copy_array(src, ds, "rf");
  copy_array(src, ds, "truth_screen_phase");
  copy_array(src, ds, "truth_law_u");
  ds.manifest()["meta"]["raw_sampling_frequency_hz"] = src.manifest()["meta"]["raw_sampling_frequency_hz"];
  umi::save_matrix(ds, "R", r);
  umi::write_png(ds.dir() / "confocal.png", umi::confocal_image(r));
  ds.save();
  std::cout << "wrote " << out << " (" << r.grid.nx() << " x " << r.grid.nx() << " x " << r.grid.nz()
            << ", dropped " << r.dropped << ")\n";
  return 0;
}

int cmd_correct(const fs::path& in, const fs::path& out, int steps, const std::string& schedule_path) {
  const umi::Dataset src = umi::Dataset::open(in);
  umi::RunConfig c = config_of(src);
  if (!schedule_path.empty()) {
    std::ifstream f(schedule_path);
    if (!f) throw umi::Error(umi::ErrorKind::io, "cannot open " + schedule_path);
    json j;
    try {
      f >> j;
    } catch (const json::parse_error& e) {
      throw umi::Error(umi::ErrorKind::invalid_input, std::string("--schedule: malformed JSON: ") + e.what());
    }
    json wrapper = umi::to_json(c);
    wrapper["schedule"] = j.is_object() && j.contains("schedule") ? j["schedule"] : j;
    c = umi::parse_config(wrapper);
  }
  if (steps >= 0) {
    if (static_cast<std::size_t>(steps) > c.schedule.size()) {
      throw umi::Error(umi::ErrorKind::invalid_input, "--steps exceeds the schedule length");
    }
    c.schedule.resize(static_cast<std::size_t>(steps));
  }
  const umi::FocusedReflectionMatrix r = umi::load_matrix(src, "R");
  umi::Dataset ds = derive(src, out, c, "correct");
  copy_array(src, ds, "R");
  copy_array(src, ds, "truth_screen_phase");
  copy_array(src, ds, "truth_law_u");

  std::ofstream log(ds.dir() / "step_log.jsonl");
  if (c.schedule.empty()) {
    umi::save_matrix(ds, "R_corrected", r);
    umi::write_png(ds.dir() / "corrected.png", umi::confocal_image(r));
  } else {
    const umi::FocusReference ref = reference_for(c);
    umi::PipelineOptions opts = c.pipeline_options();
    const umi::AberratorSpec truth = c.aberrator_spec();
    if (truth.variant != umi::AberratorVariant::none) opts.truth = &truth;
    const umi::CorrectionState state = umi::run_schedule(r, c.acquisition, c.schedule, ref, opts);
    umi::save_matrix(ds, "R_corrected", state.corrected);
    umi::write_png(ds.dir() / "corrected.png", umi::confocal_image(state.corrected));
    for (const auto& e : state.log) {
      log << umi::to_json(e).dump() << '\n';
      std::cout << umi::to_json(e).dump() << '\n';
    }
    std::vector<std::vector<double>> rows;
    const umi::FMap& fm = state.f_history.back();
    for (const auto& cell : fm.cells) {
      rows.push_back({r.grid.x[cell.ix0], r.grid.x[cell.ix1 - 1], r.grid.z[cell.iz0], r.grid.z[cell.iz1 - 1], cell.F,
                      cell.width, cell.width_6db, cell.reference_width, static_cast<double>(cell.status)});
    }
    umi::write_csv(ds.dir() / "f_map.csv",
                   {"x0_mm", "x1_mm", "z0_mm", "z1_mm", "F", "fwhm_mm", "width_6db_mm", "reference_fwhm_mm", "status"},
                   rows);
    json atlas = json::array();
    for (const auto& w : state.atlas.records) {
      atlas.push_back({{"step", w.step}, {"side", w.side == umi::Side::output ? "output" : "input"},
                       {"x_mm", w.center.x}, {"z_mm", w.center.z}, {"n_in", w.n_in}, {"valid", w.law.valid},
                       {"gated", w.gated}, {"ambiguous", w.law.ambiguous}, {"shift_mm", w.law.shift}});
    }
    std::ofstream(ds.dir() / "windows.json") << atlas.dump(1) << '\n';
  }
  copy_array(src, ds, "rf");
  ds.manifest()["meta"]["raw_sampling_frequency_hz"] = src.manifest()["meta"]["raw_sampling_frequency_hz"];
  ds.save();
  return 0;
}

int cmd_metrics(const fs::path& in, const fs::path& out, const std::string& area) {
  const umi::Dataset src = umi::Dataset::open(in);
  umi::RunConfig c = config_of(src);
  if (!area.empty()) {
    const auto a = split_numbers(area, 4, "--area");
    if (!(a[2] > 0) || !(a[3] > 0)) throw umi::Error(umi::ErrorKind::invalid_input, "--area: dx and dz must be > 0");
    c.area = {a[0] - a[2] / 2, a[0] + a[2] / 2, a[1] - a[3] / 2, a[1] + a[3] / 2};
  }
  const umi::FocusReference ref = reference_for(c);
  fs::create_directories(out);
  json report;
  report["area_mm"] = {c.area.x0, c.area.x1, c.area.z0, c.area.z1};
  std::vector<std::vector<double>> profile_rows;
  for (const std::string name : {"R", "R_corrected"}) {
    if (!src.has(name)) continue;
    const umi::FocusedReflectionMatrix m = umi::load_matrix(src, name);
    const umi::AreaMetrics a = umi::area_metrics(m, ref.matrix, c.area, c.acquisition);
    const umi::FMap fm = umi::f_map(m, &ref.map);
    const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    report[name] = {{"F", num(a.F)},           {"fwhm_mm", num(a.fwhm)},
                    {"width_6db_mm", num(a.width_6db)}, {"contrast_db", num(a.contrast_db)},
                    {"ideal_resolution_mm", a.ideal_resolution}, {"median_F", num(fm.median_F())}};
    const umi::CMPProfile p = umi::cmp_profile(m, c.area, umi::FMapOptions{}.max_lag);
    for (std::size_t i = 0; i < p.lags.size(); ++i) {
      profile_rows.push_back({name == "R" ? 0.0 : 1.0, p.lags[i], p.intensity[i]});
    }
  }
  umi::write_csv(out / "cmp_profiles.csv", {"corrected", "lag_mm", "intensity"}, profile_rows);
  std::ofstream(out / "metrics.json") << report.dump(2) << '\n';
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_report(const fs::path& in) {
  const umi::Dataset src = umi::Dataset::open(in);
  std::ostringstream md;
  md << "# UMI run report\n\n";
  md << "Version: `" << src.manifest()["provenance"].value("version", "unknown") << "`\n\n";
  const fs::path log_path = in / "step_log.jsonl";
  if (fs::exists(log_path)) {
    md << "| Step | Substep | Basis | F (median) | F (area) | w (mm) | Contrast (dB) | Law RMS (rad) | Windows valid/gated | Rolled back |\n";
    md << "|---|---|---|---|---|---|---|---|---|---|\n";
    std::ifstream log(log_path);
    std::string line;
    const auto fmt = [](const json& v, int prec) {
      if (v.is_null()) return std::string("n/a");
      std::ostringstream os;
      os.setf(std::ios::fixed);
      os.precision(prec);
      os << v.get<double>();
      return os.str();
    };
    while (std::getline(log, line)) {
      if (line.empty()) continue;
      const json e = json::parse(line);
      md << "| " << e["step"] << " | " << e["substep"].get<std::string>() << " | " << e["basis"].get<std::string>()
         << " | " << fmt(e["median_F"], 2) << " | " << fmt(e["area_F"], 2) << " | " << fmt(e["fwhm_mm"], 3) << " | "
         << fmt(e["contrast_db"], 1) << " | " << fmt(e["law_rms_rad"], 2) << " | " << e["valid_windows"] << "/"
         << e["gated_windows"] << " of " << e["windows"] << " | " << (e["rolled_back"].get<bool>() ? "yes" : "no")
         << " |\n";
    }
    md << '\n';
  } else {
    md << "No correction log in this dataset.\n\n";
  }
  for (const char* img : {"confocal.png", "corrected.png"}) {
    if (fs::exists(in / img)) md << "![" << img << "](" << img << ")\n\n";
  }
  md << "## Arrays\n\n| Name | dtype | shape | sha256 |\n|---|---|---|---|\n";
  for (const auto& [name, e] : src.manifest()["arrays"].items()) {
    md << "| " << name << " | " << e["dtype"].get<std::string>() << " | " << e["shape"].dump() << " | `"
       << e["sha256"].get<std::string>().substr(0, 16) << "` |\n";
  }
  std::ofstream(in / "report.md") << md.str();
  std::cout << md.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ultrasound matrix imaging toolkit"};
  app.set_version_flag("--version", std::string(UMI_VERSION));
  app.require_subcommand(1);

  std::string config_path, in_dir, out_dir, grid, area, schedule;
  double fnum = 0;
  int steps = -1;

  auto* sim = app.add_subcommand("simulate", "Simulate channel data from a JSON config");
  sim->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  sim->add_option("-o,--out", out_dir, "Output dataset directory")->required();

  auto* bf = app.add_subcommand("beamform", "Build the focused reflection matrix");
  bf->add_option("-i,--in", in_dir, "Input dataset")->required()->check(CLI::ExistingDirectory);
  bf->add_option("-o,--out", out_dir, "Output dataset directory")->required();
  bf->add_option("--grid", grid, "x0,x1,dx,z0,z1,dz in mm");
  bf->add_option("--fnum", fnum, "Receive f-number")->check(CLI::PositiveNumber);

  auto* cor = app.add_subcommand("correct", "Run the correction schedule");
  cor->add_option("-i,--in", in_dir, "Input dataset")->required()->check(CLI::ExistingDirectory);
  cor->add_option("-o,--out", out_dir, "Output dataset directory")->required();
  cor->add_option("--steps", steps, "Number of schedule steps to run")->check(CLI::NonNegativeNumber);
  cor->add_option("--schedule", schedule, "JSON schedule file")->check(CLI::ExistingFile);

  auto* met = app.add_subcommand("metrics", "Focusing metrics over an area");
  met->add_option("-i,--in", in_dir, "Input dataset")->required()->check(CLI::ExistingDirectory);
  met->add_option("-o,--out", out_dir, "Report directory")->required();
  met->add_option("--area", area, "x0,z0,dx,dz in mm (center and size)");

  auto* rep = app.add_subcommand("report", "Write report.md for a dataset");
  rep->add_option("-i,--in", in_dir, "Dataset")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    const int threads = umi::configure_threads();
    (void)threads;
    if (*sim) return cmd_simulate(config_path, out_dir);
    if (*bf) return cmd_beamform(in_dir, out_dir, grid, fnum);
    if (*cor) return cmd_correct(in_dir, out_dir, steps, schedule);
    if (*met) return cmd_metrics(in_dir, out_dir, area);
    if (*rep) return cmd_report(in_dir);
  } catch (const umi::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case umi::ErrorKind::numerical: return kExitNumerical;
      case umi::ErrorKind::io: return kExitIo;
      default: return kExitValidation;
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: manifest: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return 0;
}
