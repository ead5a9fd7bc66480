#include "ionsim/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "ionsim/errors.hpp"
#include "ionsim/linalg.hpp"

namespace ionsim {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Formatting

double round_significant(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return std::strtod(buf, nullptr);
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace {

json num(double x) { return round_significant(x); }

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

json vec_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

// Row-major nested arrays.
json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) : columns_(header.size()) { line(header); }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_) throw Error("csv: row width does not match the header");
    std::vector<std::string> cells;
    for (double v : values) cells.push_back(format_number(v));
    line(cells);
  }

  std::string str() const { return out_.str(); }

 private:
  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  std::size_t columns_;
  std::ostringstream out_;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Strict field access over the merged document.

class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_, "must be an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return obj_.contains(key);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!obj_.contains(key)) fail(at(key), "is required");
    return obj_.at(key);
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(at(key), "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(at(key), "must be finite");
    return x;
  }

  double positive(const std::string& key) {
    const double x = number(key);
    if (!(x > 0.0)) fail(at(key), "must be > 0");
    return x;
  }

  std::int64_t integer(const std::string& key, std::int64_t lo, std::int64_t hi) {
    const json& v = raw(key);
    if (!v.is_number_integer()) fail(at(key), "must be an integer");
    const auto x = v.get<std::int64_t>();
    if (x < lo || x > hi) {
      std::ostringstream os;
      os << "must lie in [" << lo << ", " << hi << "]";
      fail(at(key), os.str());
    }
    return x;
  }

  bool boolean(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_boolean()) fail(at(key), "must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(at(key), "must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(at(key), "must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) fail(at(key), "must be an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  Fields object(const std::string& key) { return Fields(raw(key), at(key)); }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!used_.count(it.key())) fail(at(it.key()), "is not a recognised field");
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& what) {
    throw ValidationError("config: " + field + " " + what);
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

Grid read_grid(Fields& f, const char* start, const char* stop, const char* points) {
  Grid g;
  g.start = f.number(start);
  g.stop = f.number(stop);
  g.points = static_cast<std::size_t>(f.integer(points, 1, 100000));
  if (g.start < 0.0) Fields::fail(f.at(start), "must be >= 0");
  if (g.stop != 0.0 && g.stop < g.start) Fields::fail(f.at(stop), "must be >= start (or 0 for automatic)");
  return g;
}

}  // namespace

std::vector<double> Grid::values() const {
  std::vector<double> out(points);
  for (std::size_t k = 0; k < points; ++k)
    out[k] = points == 1 ? start : start + (stop - start) * static_cast<double>(k) / static_cast<double>(points - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Experiments and presets

const std::vector<Experiment>& all_experiments() {
  static const std::vector<Experiment> all = {
      Experiment::modes,           Experiment::couplings,         Experiment::dynamics,
      Experiment::parity_scan,     Experiment::witness_vs_time,   Experiment::adiabatic,
      Experiment::ground_state_analysis, Experiment::symmetry_sweep, Experiment::full_vs_effective};
  return all;
}

std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::modes: return "modes";
    case Experiment::couplings: return "couplings";
    case Experiment::dynamics: return "dynamics";
    case Experiment::parity_scan: return "parity_scan";
    case Experiment::witness_vs_time: return "witness_vs_time";
    case Experiment::adiabatic: return "adiabatic";
    case Experiment::ground_state_analysis: return "ground_state_analysis";
    case Experiment::symmetry_sweep: return "symmetry_sweep";
    case Experiment::full_vs_effective: return "full_vs_effective";
  }
  return "modes";
}

Experiment parse_experiment(std::string_view name) {
  for (Experiment e : all_experiments())
    if (to_string(e) == name) return e;
  std::string options;
  for (Experiment e : all_experiments()) options += (options.empty() ? "" : ", ") + to_string(e);
  throw ValidationError("unknown experiment '" + std::string(name) + "'; expected one of " + options);
}

const std::vector<Preset>& list_presets() {
  static const std::vector<Preset> presets = {
      {"alpha036", "three ions with the beatnote tuned so that the fitted coupling range is alpha = 0.36",
       json{{"chain", {{"n_ions", 3}}}, {"couplings", {{"tune_alpha", 0.36}}}}},
      {"fig2_fit", "two ions with the fitted shifts (200 Hz) S_z + (150 Hz) (S_z)^2 on the second ion",
       json{{"chain",
             {{"n_ions", 2},
              {"site_shifts", json::array({json{{"linear_hz", 0.0}, {"quadratic_hz", 0.0}},
                                           json{{"linear_hz", 200.0}, {"quadratic_hz", 150.0}}})}}}}},
      {"paper_2ion", "two ions with J_12 = 1310 Hz (full transfer near 0.27 ms)",
       json{{"chain", {{"n_ions", 2}}}, {"couplings", {{"j_matrix", json::array({{0.0, 1310.0}, {1310.0, 0.0}})}}}}},
      {"paper_ramp", "exponential ramp D(t) = 5 kHz exp(-t / 0.167 ms) over 1 ms",
       json{{"ramp",
             {{"shape", "exponential"}, {"d_initial", 5000.0}, {"time_constant", 0.167e-3}, {"duration", 1.0e-3}}}}},
  };
  return presets;
}

const Preset& find_preset(std::string_view name) {
  for (const auto& p : list_presets())
    if (p.name == name) return p;
  throw ValidationError("config: unknown preset '" + std::string(name) + "'");
}

json default_document() {
  return json{
      {"presets", json::array()},
      {"seed", 0},
      {"chain",
       {{"n_ions", 3},
        {"axial_freq", 1.0e6},
        {"transverse_com_freq", 4.8e6},
        {"ion_mass_amu", 170.936323},
        {"delta_k", constants::kRaman355DeltaK},
        {"rabi_freq", 50.0e3},
        {"mu_offset", 60.0e3},
        {"d_field", 0.0},
        {"site_shifts", json::array()}}},
      {"couplings", {{"include_v_terms", false}, {"n_bar", 0.05}}},
      {"dynamics", {{"initial_state", "all_zero"}, {"t_start", 0.0}, {"t_stop", 0.0}, {"points", 201}}},
      {"ramp",
       {{"shape", "exponential"},
        {"d_initial", 5000.0},
        {"time_constant", 0.167e-3},
        {"duration", 1.0e-3},
        {"d_final", 0.0},
        {"table", json::array()}}},
      {"adiabatic", {{"samples", 101}, {"tolerance", 1e-8}}},
      {"measurement", {{"mapping", "none"}, {"rabi_noise_rel", 0.0}}},
      {"parity", {{"state", "xy_entangled"}, {"protocol", "entanglement"}, {"phi_points", 36}}},
      {"witness", {{"t_start", 0.0}, {"t_stop", 0.0}, {"points", 21}}},
      {"symmetry", {{"state", "eq10_ground"}, {"d_start", 0.0}, {"d_stop", 5000.0}, {"points", 101}}},
      {"full_vs_effective",
       {{"ratios", json::array({10.0, 20.0, 40.0})},
        {"n_max", 3},
        {"samples", 101},
        {"phonon_init", "ground"},
        {"n_bar", 0.0}}},
  };
}

ExperimentConfig resolve_document(const json& doc, Experiment experiment) {
  ExperimentConfig cfg;
  cfg.experiment = experiment;
  cfg.document = doc;
  Fields top(doc, "");

  const json& presets = top.raw("presets");
  if (!presets.is_array()) Fields::fail("presets", "must be an array of names");
  for (const auto& p : presets) {
    if (!p.is_string()) Fields::fail("presets", "must be an array of names");
    cfg.presets.push_back(p.get<std::string>());
    find_preset(cfg.presets.back());
  }
  {
    const json& s = top.raw("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
      Fields::fail("seed", "must be a non-negative integer");
    cfg.seed = s.get<std::uint64_t>();
  }

  // chain
  {
    Fields f = top.object("chain");
    ChainSpec& c = cfg.chain;
    c.n_ions = static_cast<int>(f.integer("n_ions", 1, kDefaultSiteCap));
    c.axial_freq = f.positive("axial_freq");
    c.transverse_com_freq = f.positive("transverse_com_freq");
    c.ion_mass = f.positive("ion_mass_amu") * constants::kAtomicMassUnit;
    c.delta_k = f.number("delta_k");
    if (c.delta_k < 0.0) Fields::fail("chain.delta_k", "must be >= 0");
    const double rabi = f.number("rabi_freq");
    if (f.has("rabi_freqs")) {
      c.rabi_freqs = f.numbers("rabi_freqs");
      if (c.rabi_freqs.size() != static_cast<std::size_t>(c.n_ions))
        Fields::fail("chain.rabi_freqs", "must have one entry per ion");
    } else {
      c.rabi_freqs.assign(static_cast<std::size_t>(c.n_ions), rabi);
    }
    for (double r : c.rabi_freqs)
      if (!(r >= 0.0)) Fields::fail("chain.rabi_freqs", "entries must be >= 0");
    const double offset = f.number("mu_offset");
    c.mu_detuning = f.has("mu_detuning") ? f.positive("mu_detuning") : c.transverse_com_freq + offset;
    c.d_field = f.number("d_field");
    const json& shifts = f.raw("site_shifts");
    if (!shifts.is_array()) Fields::fail("chain.site_shifts", "must be an array");
    for (std::size_t i = 0; i < shifts.size(); ++i) {
      Fields s(shifts[i], "chain.site_shifts[" + std::to_string(i) + "]");
      c.site_shifts.push_back({s.number("linear_hz"), s.number("quadratic_hz")});
      s.finish();
    }
    if (!c.site_shifts.empty() && c.site_shifts.size() != static_cast<std::size_t>(c.n_ions))
      Fields::fail("chain.site_shifts", "must be empty or have one entry per ion");
    f.finish();
    validate(c);
  }

  // couplings
  {
    Fields f = top.object("couplings");
    cfg.effective.include_v_terms = f.boolean("include_v_terms");
    cfg.effective.n_bar = f.number("n_bar");
    if (cfg.effective.n_bar < 0.0) Fields::fail("couplings.n_bar", "must be >= 0");
    if (f.has("tune_alpha")) {
      cfg.tune_alpha = f.number("tune_alpha");
      if (!(*cfg.tune_alpha >= kAlphaTargetMin && *cfg.tune_alpha <= kAlphaTargetMax))
        Fields::fail("couplings.tune_alpha", "must lie in [0.05, 3]");
    }
    if (f.has("j_matrix")) {
      const json& j = f.raw("j_matrix");
      const auto n = static_cast<std::size_t>(cfg.chain.n_ions);
      if (!j.is_array() || j.size() != n) Fields::fail("couplings.j_matrix", "must be an n_ions x n_ions array");
      Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (std::size_t r = 0; r < n; ++r) {
        if (!j[r].is_array() || j[r].size() != n) Fields::fail("couplings.j_matrix", "must be an n_ions x n_ions array");
        for (std::size_t c = 0; c < n; ++c) {
          if (!j[r][c].is_number()) Fields::fail("couplings.j_matrix", "entries must be numbers");
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
        }
      }
      if (!m.isApprox(m.transpose(), 1e-12) && (m - m.transpose()).cwiseAbs().maxCoeff() > 0.0)
        Fields::fail("couplings.j_matrix", "must be symmetric");
      cfg.j_override = m;
    }
    if (cfg.tune_alpha && cfg.j_override)
      Fields::fail("couplings", "tune_alpha and j_matrix are mutually exclusive");
    f.finish();
  }

  // dynamics
  {
    Fields f = top.object("dynamics");
    cfg.initial_state = f.string("initial_state");
    cfg.times = read_grid(f, "t_start", "t_stop", "points");
    f.finish();
  }

  // ramp
  {
    Fields f = top.object("ramp");
    const std::string shape = f.string("shape");
    if (shape == "exponential") cfg.ramp.shape = RampProfile::Shape::exponential;
    else if (shape == "linear") cfg.ramp.shape = RampProfile::Shape::linear;
    else if (shape == "table") cfg.ramp.shape = RampProfile::Shape::table;
    else Fields::fail("ramp.shape", "must be one of exponential, linear, table");
    cfg.ramp.d_initial = f.number("d_initial");
    cfg.ramp.time_constant = f.number("time_constant");
    cfg.ramp.duration = f.number("duration");
    cfg.ramp.d_final = f.number("d_final");
    const json& table = f.raw("table");
    if (!table.is_array()) Fields::fail("ramp.table", "must be an array of [t, D] pairs");
    for (const auto& e : table) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
        Fields::fail("ramp.table", "must be an array of [t, D] pairs");
      cfg.ramp.table.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
    f.finish();
    cfg.ramp.validate();
  }

  {
    Fields f = top.object("adiabatic");
    cfg.adiabatic_samples = static_cast<std::size_t>(f.integer("samples", 2, 100000));
    cfg.tolerance = f.positive("tolerance");
    f.finish();
  }

  {
    Fields f = top.object("measurement");
    cfg.measurement.mapping = parse_mapping(f.string("mapping"));
    cfg.measurement.rabi_noise_rel = f.number("rabi_noise_rel");
    if (f.has("shots")) cfg.measurement.shots = static_cast<std::uint64_t>(f.integer("shots", 1, 100000000));
    cfg.measurement.seed = cfg.seed;
    f.finish();
    cfg.measurement.validate();
  }

  {
    Fields f = top.object("parity");
    cfg.parity_state = f.string("state");
    cfg.parity_protocol = f.string("protocol");
    if (cfg.parity_protocol != "entanglement" && cfg.parity_protocol != "ground_phase")
      Fields::fail("parity.protocol", "must be entanglement or ground_phase");
    cfg.phi_points = static_cast<std::size_t>(f.integer("phi_points", 3, 100000));
    f.finish();
  }

  {
    Fields f = top.object("witness");
    cfg.witness_times = read_grid(f, "t_start", "t_stop", "points");
    f.finish();
  }

  {
    Fields f = top.object("symmetry");
    cfg.symmetry_state = f.string("state");
    cfg.d_grid.start = f.number("d_start");
    cfg.d_grid.stop = f.number("d_stop");
    cfg.d_grid.points = static_cast<std::size_t>(f.integer("points", 1, 100000));
    f.finish();
  }

  {
    Fields f = top.object("full_vs_effective");
    cfg.detuning_ratios = f.numbers("ratios");
    if (cfg.detuning_ratios.empty()) Fields::fail("full_vs_effective.ratios", "must not be empty");
    for (double r : cfg.detuning_ratios)
      if (!(r > 0.0)) Fields::fail("full_vs_effective.ratios", "entries must be > 0");
    cfg.n_max = static_cast<int>(f.integer("n_max", 1, 64));
    cfg.fve_samples = static_cast<std::size_t>(f.integer("samples", 2, 100000));
    const std::string init = f.string("phonon_init");
    if (init == "ground") cfg.phonons.kind = PhononInit::Kind::ground;
    else if (init == "thermal") cfg.phonons.kind = PhononInit::Kind::thermal;
    else Fields::fail("full_vs_effective.phonon_init", "must be ground or thermal");
    cfg.phonons.n_bar = f.number("n_bar");
    if (cfg.phonons.n_bar < 0.0) Fields::fail("full_vs_effective.n_bar", "must be >= 0");
    f.finish();
  }
  top.finish();
  return cfg;
}

ExperimentConfig parse_config(std::string_view text, Experiment experiment, const std::vector<std::string>& cli_presets,
                              std::optional<std::uint64_t> seed) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos)
    throw ValidationError("config: document is empty");
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ValidationError("config: top level must be an object");

  std::vector<std::string> names;
  if (user.contains("presets")) {
    if (!user["presets"].is_array()) Fields::fail("presets", "must be an array of names");
    for (const auto& p : user["presets"]) {
      if (!p.is_string()) Fields::fail("presets", "must be an array of names");
      names.push_back(p.get<std::string>());
    }
  }
  for (const auto& p : cli_presets)
    if (std::find(names.begin(), names.end(), p) == names.end()) names.push_back(p);

  // Command-line presets are flags, so they land on top of the file values.
  json doc = default_document();
  for (const auto& n : names) doc.merge_patch(find_preset(n).overlay);
  doc.merge_patch(user);
  for (const auto& n : cli_presets) doc.merge_patch(find_preset(n).overlay);
  doc["presets"] = names;
  if (seed) doc["seed"] = *seed;
  return resolve_document(doc, experiment);
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct Setup {
  ChainSpec chain;
  std::optional<NormalModes> modes;
  CouplingSet coupling;
  std::optional<AlphaTuning> tuning;
};

Setup prepare(const ExperimentConfig& cfg, json& derived) {
  Setup s;
  s.chain = cfg.chain;
  if (cfg.j_override) {
    s.coupling = CouplingSet::from_j(*cfg.j_override);
    if (s.chain.n_ions >= 3) {
      try {
        s.coupling.power_law = fit_power_law(s.coupling.j_matrix);
        s.coupling.power_law_first_ion = fit_power_law_first_ion(s.coupling.j_matrix);
      } catch (const FitUndefinedError&) {
      }
    }
    derived["coupling_source"] = "j_matrix";
    return s;
  }
  if (cfg.tune_alpha) {
    s.tuning = tune_alpha(s.chain, *cfg.tune_alpha);
    s.chain.mu_detuning = s.tuning->mu;
    derived["mu_detuning"] = num(s.tuning->mu);
    derived["tuned_alpha"] = num(s.tuning->alpha);
    derived["alpha_range"] = vec_json(std::vector<double>{s.tuning->alpha_min, s.tuning->alpha_max});
  }
  s.modes = transverse_modes(s.chain);
  s.coupling = compute_couplings(*s.modes, s.chain);
  derived["coupling_source"] = "modes";
  return s;
}

double flop_period(const CouplingSet& c) {
  if (c.n_sites() < 2 || c.j_matrix(0, 1) == 0.0)
    throw PhysicsError("automatic time window needs a nonzero J between ions 0 and 1; set an explicit t_stop");
  return 1.0 / (std::sqrt(2.0) * std::abs(c.j_matrix(0, 1)));
}

Grid resolve_times(Grid g, const CouplingSet& c, double periods, json& derived, const char* key) {
  if (g.stop == 0.0) {
    g.stop = g.start + periods * flop_period(c);
    derived[key] = num(g.stop);
  }
  return g;
}

SpinState named_state(const std::string& name, const BasisPtr& basis, const EffectiveHamiltonian& h) {
  if (name == "xy_entangled") {
    if (basis->n_sites() != 2) throw ValidationError("state xy_entangled: requires two ions");
    CVector v = CVector::Zero(static_cast<Eigen::Index>(basis->dim()));
    v(static_cast<Eigen::Index>(basis->index_of_label("+-"))) = 1.0 / std::sqrt(2.0);
    v(static_cast<Eigen::Index>(basis->index_of_label("-+"))) = 1.0 / std::sqrt(2.0);
    return SpinState(basis, v);
  }
  if (name == "xy_ground") return ground_state(h.static_op(), basis, 0).multiplet.front();
  for (ReferenceState r : {ReferenceState::all_zero, ReferenceState::eq10_ground, ReferenceState::aklt3,
                           ReferenceState::two_spin_ground, ReferenceState::two_spin_top})
    if (to_string(r) == name) return reference_state(basis, r);
  if (name.size() == static_cast<std::size_t>(basis->n_sites()) &&
      name.find_first_not_of("-0+") == std::string::npos) {
    CVector v = CVector::Zero(static_cast<Eigen::Index>(basis->dim()));
    v(static_cast<Eigen::Index>(basis->index_of_label(name))) = 1.0;
    return SpinState(basis, v);
  }
  throw ValidationError("config: unknown state '" + name +
                        "' (reference name, xy_entangled, xy_ground, or a label such as 0+-)");
}

std::vector<std::string> labels(const Basis& b, const std::vector<std::size_t>& idx, const std::string& prefix) {
  std::vector<std::string> out;
  for (std::size_t i : idx) out.push_back(prefix + b.label(i));
  return out;
}

std::string pattern_name(std::size_t p, int n) {
  std::string s;
  for (int i = n - 1; i >= 0; --i) s += ((p >> i) & 1u) ? 'D' : 'B';
  return s;
}

json witness_json(const WitnessReport& w) {
  return json{{"amplitude", num(w.amplitude)},
              {"p00", num(w.p00)},
              {"rho_pm_00", num(w.rho_pm_00)},
              {"rho_mp_00", num(w.rho_mp_00)},
              {"rho_pm_mp", num(w.rho_pm_mp)},
              {"lhs", num(w.lhs)},
              {"violated", w.violated},
              {"margin", num(w.margin)},
              {"amplitude_sufficient", w.amplitude_sufficient}};
}

json curve_fit_json(const ParityCurve& c) {
  return json{{"harmonic", c.model.harmonic}, {"sign", c.model.sign}, {"c", num(c.c)},  {"a", num(c.a)},
              {"b", num(c.b)},              {"residual", num(c.residual)}, {"shots_per_point", c.shots_per_point}};
}

json couplings_json(const CouplingSet& c) {
  json j{{"j_matrix", mat_json(c.j_matrix)}, {"v_matrix", mat_json(c.v_matrix)}, {"uniformity", num(c.uniformity)}};
  auto fit = [](const std::optional<PowerLawFit>& f) -> json {
    if (!f) return nullptr;
    return json{{"j0", num(f->j0)}, {"alpha", num(f->alpha)}};
  };
  j["power_law"] = fit(c.power_law);
  j["power_law_first_ion"] = fit(c.power_law_first_ion);
  return j;
}

void run_modes(const ExperimentConfig& cfg, RunResult& out) {
  const NormalModes m = transverse_modes(cfg.chain);
  const Eigen::Index n = m.mode_freqs.size();
  const double residual =
      (m.mode_matrix.transpose() * m.mode_matrix - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
  json j{{"mode_freqs", vec_json(m.mode_freqs)},
         {"mode_matrix", mat_json(m.mode_matrix)},
         {"lamb_dicke", mat_json(m.lamb_dicke)},
         {"equilibrium_positions", vec_json(m.equilibrium_positions)},
         {"orthogonality_residual", num(residual)},
         {"ordering", "mode_matrix[i][m]: ion i (row), mode m (column), modes by descending frequency"},
         {"warnings", m.warnings}};
  out.files.push_back({"modes.json", dump(j)});
  std::vector<std::string> header{"mode", "frequency_hz"};
  for (Eigen::Index i = 0; i < n; ++i) header.push_back("b_" + std::to_string(i));
  for (Eigen::Index i = 0; i < n; ++i) header.push_back("eta_" + std::to_string(i));
  Csv csv(header);
  for (Eigen::Index mm = 0; mm < n; ++mm) {
    std::vector<double> row{static_cast<double>(mm), m.mode_freqs(mm)};
    for (Eigen::Index i = 0; i < n; ++i) row.push_back(m.mode_matrix(i, mm));
    for (Eigen::Index i = 0; i < n; ++i) row.push_back(m.lamb_dicke(i, mm));
    csv.row(row);
  }
  out.files.push_back({"modes.csv", csv.str()});
}

void run_couplings(const ExperimentConfig& cfg, RunResult& out) {
  Setup s = prepare(cfg, out.derived);
  json j = couplings_json(s.coupling);
  j["mu_detuning"] = num(s.chain.mu_detuning);
  if (s.modes) j["resonance_guard"] = vec_json(resonance_guard(*s.modes, s.chain));
  out.files.push_back({"couplings.json", dump(j)});
  Csv pairs({"i", "j", "distance", "j_hz"});
  for (int a = 0; a < s.coupling.n_sites(); ++a)
    for (int b = a + 1; b < s.coupling.n_sites(); ++b)
      pairs.row({double(a), double(b), double(b - a), s.coupling.j_matrix(a, b)});
  out.files.push_back({"couplings.csv", pairs.str()});
  if (s.coupling.v_matrix.size() > 0) {
    Csv v({"i", "m", "v_hz"});
    for (Eigen::Index i = 0; i < s.coupling.v_matrix.rows(); ++i)
      for (Eigen::Index m = 0; m < s.coupling.v_matrix.cols(); ++m) v.row({double(i), double(m), s.coupling.v_matrix(i, m)});
    out.files.push_back({"v_matrix.csv", v.str()});
  }
  if (s.tuning) {
    Csv scan({"mu_hz", "alpha"});
    for (const auto& p : s.tuning->scan) scan.row({p.mu, p.alpha});
    out.files.push_back({"alpha_scan.csv", scan.str()});
  }
}

void run_dynamics(const ExperimentConfig& cfg, RunResult& out) {
  Setup s = prepare(cfg, out.derived);
  const EffectiveHamiltonian h = build_effective(s.coupling, s.chain, cfg.effective);
  const SpinState psi = named_state(cfg.initial_state, h.basis(), h);
  const Grid g = resolve_times(cfg.times, s.coupling, 2.0, out.derived, "t_stop");
  const auto times = g.values();
  const LinearOp op = h.static_op();
  const auto samples = evolve_trajectory(psi, op, times);

  // Report the S_z sector carrying most of the initial weight.
  const Eigen::VectorXd p0 = psi.populations();
  std::map<int, double> weight;
  for (std::size_t i = 0; i < h.basis()->dim(); ++i) weight[h.basis()->sz_total(i)] += p0(static_cast<Eigen::Index>(i));
  int sz = 0;
  double best = -1.0;
  for (auto [k, w] : weight)
    if (w > best) sz = k, best = w;
  const auto idx = h.basis()->sector(sz);

  std::vector<std::string> header{"time_s"};
  for (auto& l : labels(*h.basis(), idx, "P_")) header.push_back(l);
  header.push_back("norm");
  header.push_back("energy_hz");
  Csv csv(header);
  for (const auto& smp : samples) {
    std::vector<double> row{smp.time};
    for (std::size_t i : idx) row.push_back(smp.populations(static_cast<Eigen::Index>(i)));
    row.push_back(smp.norm);
    row.push_back(smp.energy);
    csv.row(row);
  }
  out.files.push_back({"trajectory.csv", csv.str()});
  json j{{"initial_state", cfg.initial_state}, {"sz_sector", sz}, {"couplings", couplings_json(s.coupling)}};
  if (s.coupling.n_sites() >= 2 && s.coupling.j_matrix(0, 1) != 0.0) j["flop_period_s"] = num(flop_period(s.coupling));
  out.files.push_back({"dynamics.json", dump(j)});
}

void run_parity_scan(const ExperimentConfig& cfg, RunResult& out) {
  Setup s = prepare(cfg, out.derived);
  const EffectiveHamiltonian h = build_effective(s.coupling, s.chain, cfg.effective);
  const SpinState psi = named_state(cfg.parity_state, h.basis(), h);
  const bool ent = cfg.parity_protocol == "entanglement";
  const auto grid = uniform_phi_grid(cfg.phi_points);
  const ParityCurve curve = parity_scan(psi, ent ? SequenceTemplate(entanglement_sequence)
                                                 : SequenceTemplate(ground_phase_sequence),
                                        grid, cfg.measurement, ent ? kEntanglementFit : kGroundPhaseFit);
  const int n = psi.basis().n_sites();
  std::vector<std::string> header{"phi_rad", "parity", "stderr"};
  for (std::size_t p = 0; p < (std::size_t{1} << n); ++p) header.push_back("p_" + pattern_name(p, n));
  if (cfg.measurement.shots)
    for (std::size_t p = 0; p < (std::size_t{1} << n); ++p) header.push_back("count_" + pattern_name(p, n));
  Csv csv(header);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::vector<double> row{grid[k], curve.parity_values[k], curve.stderr_values[k]};
    for (Eigen::Index p = 0; p < curve.pattern_probabilities[k].size(); ++p) row.push_back(curve.pattern_probabilities[k](p));
    if (cfg.measurement.shots)
      for (auto c : curve.counts[k]) row.push_back(static_cast<double>(c));
    csv.row(row);
  }
  out.files.push_back({"parity.csv", csv.str()});
  json j{{"state", cfg.parity_state}, {"protocol", cfg.parity_protocol}, {"fit", curve_fit_json(curve)},
         {"pattern_order", "site 0 is the leftmost character; D = dark (|0>), B = bright"}};
  if (n == 2 && ent) {
    j["witness_from_curve"] = witness_json(witness_from_curve(curve));
    j["witness_exact"] = witness_json(witness_from_state(psi));
  }
  out.files.push_back({"parity.json", dump(j)});
}

void run_witness_vs_time(const ExperimentConfig& cfg, RunResult& out) {
  Setup s = prepare(cfg, out.derived);
  if (s.chain.n_ions != 2) throw ValidationError("witness_vs_time: requires chain.n_ions = 2");
  const EffectiveHamiltonian h = build_effective(s.coupling, s.chain, cfg.effective);
  const Grid g = resolve_times(cfg.witness_times, s.coupling, 2.0, out.derived, "witness_t_stop");
  const auto times = g.values();
  const auto grid = uniform_phi_grid(cfg.phi_points);
  const auto series = entanglement_vs_time(h, times, grid, cfg.measurement);

  Csv summary({"time_s", "a_fit", "c_fit", "b_fit", "p00", "lhs", "violated", "exact_a", "exact_lhs"});
  Csv curves({"time_s", "phi_rad", "parity", "stderr"});
  for (const auto& tw : series) {
    const double nan = std::nan("");
    summary.row({tw.time, tw.curve.a, tw.curve.c, tw.curve.b, tw.from_curve.p00, tw.from_curve.lhs,
                 tw.from_curve.violated ? 1.0 : 0.0, tw.exact ? tw.exact->amplitude : nan,
                 tw.exact ? tw.exact->lhs : nan});
    for (std::size_t k = 0; k < grid.size(); ++k)
      curves.row({tw.time, grid[k], tw.curve.parity_values[k], tw.curve.stderr_values[k]});
  }
  out.files.push_back({"witness.csv", summary.str()});
  out.files.push_back({"parity_curves.csv", curves.str()});
}

void run_adiabatic(const ExperimentConfig& cfg, RunResult& out) {
  Setup s = prepare(cfg, out.derived);
  AdiabaticOptions opts;
  opts.samples = cfg.adiabatic_samples;
  opts.integrator.tolerance = cfg.tolerance;
  const AdiabaticResult r = adiabatic_prepare(s.chain, s.coupling, cfg.ramp, opts, cfg.effective);
  const Basis& b = *r.initial.basis_ptr();
  std::vector<std::string> header{"time_s", "d_field_hz"};
  for (auto& l : labels(b, r.pattern_indices, "P_")) header.push_back(l);
  for (const char* c : {"ground_fidelity", "tracked_fidelity", "norm", "energy_hz"}) header.emplace_back(c);
  Csv csv(header);
  for (const auto& smp : r.trajectory) {
    std::vector<double> row{smp.time, smp.d_field};
    for (Eigen::Index k = 0; k < smp.populations.size(); ++k) row.push_back(smp.populations(k));
    row.insert(row.end(), {smp.ground_fidelity, smp.tracked_fidelity, smp.norm, smp.energy});
    csv.row(row);
  }
  out.files.push_back({"adiabatic.csv", csv.str()});
  json j{{"initial_all_zero_overlap", num(r.initial_all_zero_overlap)},
         {"final_ground_fidelity", num(r.final_ground_fidelity)},
         {"final_tracked_fidelity", num(r.final_tracked_fidelity)},
         {"tracked_level", r.tracked_level},
         {"tracked_sector", {{"inversion", r.tracked_sector.first}, {"rotation", r.tracked_sector.second}}},
         {"error_estimate", num(r.error_estimate)}};
  if (b.n_sites() == 3)
    j["final_eq10_overlap"] = num(r.final_state.fidelity(reference_state(r.final_state.basis_ptr(), ReferenceState::eq10_ground)));
  out.files.push_back({"adiabatic.json", dump(j)});
}

void run_ground_state(const ExperimentConfig& cfg, RunResult& out) {
  Setup s = prepare(cfg, out.derived);
  const EffectiveHamiltonian h = build_effective(s.coupling, s.chain, cfg.effective);
  const BasisPtr& basis = h.basis();
  const GroundState gs = ground_state(h.static_op(), basis, 0);
  const SpinState& g = gs.multiplet.front();
  const auto idx = basis->sector(0);

  Csv csv({"index", "label", "re", "im", "probability"});
  std::ostringstream rows;
  rows << "index,label,re,im,probability\n";
  for (std::size_t i : idx) {
    const Complex a = g.amplitudes()(static_cast<Eigen::Index>(i));
    rows << i << ',' << basis->label(i) << ',' << format_number(a.real()) << ',' << format_number(a.imag()) << ','
         << format_number(std::norm(a)) << '\n';
  }
  out.files.push_back({"ground_state.csv", rows.str()});

  const LinearOp inv = inversion_op(*basis), rot = rotation_pi_sx_op(*basis);
  json j{{"energy_hz", num(gs.energy)},
         {"gap_hz", num(gs.gap)},
         {"degenerate", gs.degenerate},
         {"multiplicity", gs.multiplet.size()},
         {"inversion_expectation", num(g.expectation(inv).real())},
         {"rotation_expectation", num(g.expectation(rot).real())},
         {"couplings", couplings_json(s.coupling)}};
  if (basis->n_sites() == 3) {
    const SpinState eq = reference_state(basis, ReferenceState::eq10_ground);
    j["eq10_overlap"] = num(g.fidelity(eq));
    json aklt = json::array();
    for (const auto& o : aklt_boundary_overlaps(g))
      aklt.push_back(json{{"boundary", to_string(o.boundary)}, {"overlap", num(o.overlap)}});
    j["aklt_overlaps"] = aklt;
  }
  out.files.push_back({"ground_state.json", dump(j)});
}

void run_symmetry_sweep(const ExperimentConfig& cfg, RunResult& out) {
  Setup s = prepare(cfg, out.derived);
  const EffectiveHamiltonian h = build_effective(s.coupling, s.chain, cfg.effective);
  const SpinState psi = named_state(cfg.symmetry_state, h.basis(), h);
  const auto grid = cfg.d_grid.values();
  const SymmetryReport r = symmetry_diagnosis(h, psi, grid);
  std::vector<std::string> header{"d_field_hz"};
  for (auto [p, q] : r.sectors) header.push_back("E_inv" + std::string(p > 0 ? "+" : "-") + "_rot" +
                                                (q == 0 ? std::string("0") : std::string(q > 0 ? "+" : "-")));
  Csv csv(header);
  for (const auto& pt : r.sweep) {
    std::vector<double> row{pt.d_field};
    row.insert(row.end(), pt.sector_ground.begin(), pt.sector_ground.end());
    csv.row(row);
  }
  out.files.push_back({"symmetry_sweep.csv", csv.str()});
  auto opt = [](const std::optional<int>& v) -> json { return v ? json(*v) : json(nullptr); };
  json j{{"state", cfg.symmetry_state},
         {"mirror_symmetric", r.mirror_symmetric},
         {"inversion_commutator", num(r.inversion_commutator)},
         {"rotation_commutator", num(r.rotation_commutator)},
         {"inversion_expectation", num(r.inversion_expectation)},
         {"rotation_expectation", num(r.rotation_expectation)},
         {"inversion_eigenvalue", opt(r.inversion_eigenvalue)},
         {"rotation_eigenvalue", opt(r.rotation_eigenvalue)},
         {"crossing_d_hz", r.crossing_d ? json(num(*r.crossing_d)) : json(nullptr)},
         {"max_inter_sector_coupling", num(r.max_inter_sector_coupling)}};
  out.files.push_back({"symmetry.json", dump(j)});
}

void run_full_vs_effective(const ExperimentConfig& cfg, RunResult& out) {
  std::vector<FullVsEffectiveResult> results;
  for (double ratio : cfg.detuning_ratios)
    results.push_back(compare_full_effective(cfg.chain, ratio, cfg.n_max, cfg.fve_samples, cfg.phonons));
  const BasisPtr basis = make_basis(cfg.chain.n_ions);
  const auto& idx = results.front().pattern_indices;
  std::vector<std::string> header{"ratio", "time_s"};
  for (auto& l : labels(*basis, idx, "full_")) header.push_back(l);
  for (auto& l : labels(*basis, idx, "eff_")) header.push_back(l);
  Csv csv(header);
  json runs = json::array();
  for (const auto& r : results) {
    for (const auto& smp : r.samples) {
      std::vector<double> row{r.detuning_ratio, smp.time};
      for (Eigen::Index k = 0; k < smp.full.size(); ++k) row.push_back(smp.full(k));
      for (Eigen::Index k = 0; k < smp.effective.size(); ++k) row.push_back(smp.effective(k));
      csv.row(row);
    }
    runs.push_back(json{{"ratio", num(r.detuning_ratio)},
                        {"mu_detuning", num(r.mu)},
                        {"j12_hz", num(r.j12)},
                        {"flop_period_s", num(r.flop_period)},
                        {"max_discrepancy", num(r.max_discrepancy)},
                        {"max_top_level_population", num(r.max_top_level_population)},
                        {"truncation_flagged", r.truncation_flagged}});
  }
  std::vector<std::pair<double, double>> by_ratio;
  for (const auto& r : results) by_ratio.emplace_back(r.detuning_ratio, r.max_discrepancy);
  std::sort(by_ratio.begin(), by_ratio.end());
  bool monotone = true;
  for (std::size_t k = 1; k < by_ratio.size(); ++k) monotone = monotone && by_ratio[k].second < by_ratio[k - 1].second;
  out.files.push_back({"full_vs_effective.csv", csv.str()});
  out.files.push_back({"full_vs_effective.json", dump(json{{"runs", runs}, {"discrepancy_decreases_with_ratio", monotone}})});
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  RunResult out;
  switch (cfg.experiment) {
    case Experiment::modes: run_modes(cfg, out); break;
    case Experiment::couplings: run_couplings(cfg, out); break;
    case Experiment::dynamics: run_dynamics(cfg, out); break;
    case Experiment::parity_scan: run_parity_scan(cfg, out); break;
    case Experiment::witness_vs_time: run_witness_vs_time(cfg, out); break;
    case Experiment::adiabatic: run_adiabatic(cfg, out); break;
    case Experiment::ground_state_analysis: run_ground_state(cfg, out); break;
    case Experiment::symmetry_sweep: run_symmetry_sweep(cfg, out); break;
    case Experiment::full_vs_effective: run_full_vs_effective(cfg, out); break;
  }
  return out;
}

namespace {

void write_atomic(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
  const auto target = dir / name;
  const auto tmp = dir / (name + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace

json write_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& cfg, const RunResult& result,
                   double wall_seconds) {
  std::filesystem::create_directories(out_dir);
  json files = json::array();
  for (const auto& f : result.files) {
    if (f.name.find('/') != std::string::npos || f.name.find("..") != std::string::npos)
      throw Error("refusing to write outside the output directory: " + f.name);
    write_atomic(out_dir, f.name, f.content);
    files.push_back(json{{"file", f.name}, {"sha256", sha256_hex(f.content)}, {"bytes", f.content.size()}});
  }
  json manifest{{"tool", "sim"},
                {"version", kVersion},
                {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                      "." + std::to_string(EIGEN_MINOR_VERSION)},
                {"experiment", to_string(cfg.experiment)},
                {"seed", cfg.seed},
                {"threads", worker_threads()},
                {"wall_time_s", num(wall_seconds)},
                {"config", cfg.document},
                {"derived", result.derived},
                {"outputs", files}};
  write_atomic(out_dir, "manifest.json", dump(manifest));
  return manifest;
}

}  // namespace ionsim
