#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ionsim/couplings.hpp"
#include "ionsim/dynamics.hpp"
#include "ionsim/ionchain.hpp"
#include "ionsim/protocol.hpp"

namespace ionsim {

enum class Experiment {
  modes,
  couplings,
  dynamics,
  parity_scan,
  witness_vs_time,
  adiabatic,
  ground_state_analysis,
  symmetry_sweep,
  full_vs_effective,
};

const std::vector<Experiment>& all_experiments();
std::string to_string(Experiment e);
Experiment parse_experiment(std::string_view name);

struct Preset {
  std::string name;
  std::string description;
  nlohmann::json overlay;  // merge patch applied over the defaults
};

/// Named presets in a stable (alphabetical) order.
const std::vector<Preset>& list_presets();
const Preset& find_preset(std::string_view name);

/// Uniform grid; stop == 0 means "derive from the couplings" where documented.
struct Grid {
  double start = 0.0;
  double stop = 0.0;
  std::size_t points = 0;

  std::vector<double> values() const;
  bool operator==(const Grid&) const = default;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::modes;
  std::vector<std::string> presets;
  std::uint64_t seed = 0;

  ChainSpec chain;
  std::optional<double> tune_alpha;
  std::optional<Eigen::MatrixXd> j_override;
  EffectiveOptions effective;

  // dynamics
  std::string initial_state = "all_zero";
  Grid times{0.0, 0.0, 201};

  // adiabatic
  RampProfile ramp;
  std::size_t adiabatic_samples = 101;
  double tolerance = 1e-8;

  // parity_scan / witness_vs_time
  MeasurementConfig measurement;
  std::string parity_state = "xy_entangled";
  std::string parity_protocol = "entanglement";
  std::size_t phi_points = 36;
  Grid witness_times{0.0, 0.0, 21};

  // ground_state_analysis / symmetry_sweep
  std::string symmetry_state = "eq10_ground";
  Grid d_grid{0.0, 5000.0, 101};

  // full_vs_effective
  std::vector<double> detuning_ratios{10.0, 20.0, 40.0};
  int n_max = 3;
  std::size_t fve_samples = 101;
  PhononInit phonons;

  /// Fully resolved document (defaults, presets, user values and flags).
  nlohmann::json document;
};

/// Default document with every recognised key.
nlohmann::json default_document();

/// Parses a config text. Empty text throws ValidationError. Merge order:
/// defaults, presets named in the document, the document, `cli_presets`,
/// then `seed`.
ExperimentConfig parse_config(std::string_view text, Experiment experiment,
                              const std::vector<std::string>& cli_presets = {},
                              std::optional<std::uint64_t> seed = std::nullopt);

/// Resolves a merged document into typed fields. Unknown keys and wrong types
/// throw ValidationError naming the field.
ExperimentConfig resolve_document(const nlohmann::json& document, Experiment experiment);

struct OutputFile {
  std::string name;
  std::string content;
};

struct RunResult {
  std::vector<OutputFile> files;
  nlohmann::json derived = nlohmann::json::object();  // values computed during the run
};

RunResult run_experiment(const ExperimentConfig& config);

/// Writes the files (temp-then-rename) plus manifest.json into `out_dir`.
/// Returns the manifest.
nlohmann::json write_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& config,
                             const RunResult& result, double wall_seconds);

std::string sha256_hex(std::string_view data);

/// 12 significant digits.
std::string format_number(double x);
double round_significant(double x);

inline constexpr const char* kVersion = "1.0.0";

}  // namespace ionsim
