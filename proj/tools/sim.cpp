// sim: run one named experiment and write its tables plus manifest.json.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ionsim/errors.hpp"
#include "ionsim/experiments.hpp"

namespace {

int print_presets() {
  for (const auto& p : ionsim::list_presets()) std::cout << p.name << "  " << p.description << '\n';
  return 0;
}

std::string experiment_list() {
  std::string s;
  for (auto e : ionsim::all_experiments()) s += (s.empty() ? "" : ", ") + ionsim::to_string(e);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spin-1 XY chain simulator"};
  std::string experiment;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> presets;
  bool list = false;

  app.add_option("experiment", experiment, "one of: " + experiment_list() + ", or 'presets'");
  app.add_option("--config", config_path, "JSON config document");
  app.add_option("--seed", seed, "overrides the document seed");
  app.add_option("--out", out_dir, "output directory (default: out/<experiment>)");
  app.add_option("--preset", presets, "apply a named preset (repeatable)");
  app.add_flag("--list-presets", list, "print the preset catalog and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (list || experiment == "presets") return print_presets();

  try {
    if (experiment.empty()) throw ionsim::ValidationError("missing experiment name; expected one of " + experiment_list());
    const ionsim::Experiment which = ionsim::parse_experiment(experiment);
    if (config_path.empty()) throw ionsim::ValidationError("--config is required");
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw ionsim::ValidationError("cannot read config file " + config_path);
    std::stringstream text;
    text << in.rdbuf();

    const auto cfg = ionsim::parse_config(text.str(), which, presets, seed);
    const auto start = std::chrono::steady_clock::now();
    const auto result = ionsim::run_experiment(cfg);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path("out") / experiment : std::filesystem::path(out_dir);
    ionsim::write_outputs(dir, cfg, result, wall);
    for (const auto& f : result.files) std::cout << (dir / f.name).string() << '\n';
    std::cout << (dir / "manifest.json").string() << '\n';
    return 0;
  } catch (const ionsim::Error& e) {
    std::cerr << "sim: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "sim: " << e.what() << '\n';
    return 1;
  }
}
