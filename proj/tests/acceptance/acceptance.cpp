// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ionsim/couplings.hpp"
#include "ionsim/dynamics.hpp"
#include "ionsim/experiments.hpp"
#include "ionsim/protocol.hpp"

using namespace ionsim;

namespace {

constexpr double kPi = constants::kPi;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

CVector basis_vec(const Basis& b, const std::string& label) {
  CVector v = CVector::Zero(static_cast<Eigen::Index>(b.dim()));
  v(static_cast<Eigen::Index>(b.index_of_label(label))) = 1.0;
  return v;
}

ChainSpec tuned_three_ion(double alpha) {
  ChainSpec s = default_chain(3);
  s.mu_detuning = tune_alpha(s, alpha).mu;
  return s;
}

Outcome two_spin_flop() {
  Outcome o;
  const ExperimentConfig cfg = parse_config("{}", Experiment::dynamics, {"paper_2ion"});
  const double j = (*cfg.j_override)(0, 1);
  const EffectiveHamiltonian h = build_effective(CouplingSet::from_j(*cfg.j_override), cfg.chain);
  const SpinState start(h.basis(), basis_vec(*h.basis(), "00"));
  const double period = 1.0 / (std::sqrt(2.0) * j);
  std::vector<double> times;
  for (int k = 0; k <= 2000; ++k) times.push_back(2.0 * period * k / 2000.0);
  const auto samples = evolve_trajectory(start, h.static_op(), times);
  const std::size_t i00 = h.basis()->index_of_label("00");
  double worst = 0.0;
  for (const auto& s : samples) {
    const double expected = std::pow(std::cos(kPi * std::sqrt(2.0) * j * s.time), 2);
    worst = std::max(worst, std::abs(s.populations(static_cast<Eigen::Index>(i00)) - expected));
  }
  o.require(worst < 1e-8, fmt("max |P00 - cos^2| = %.2e over two periods (tol 1e-8)", worst));

  // First minimum of the simulated P00, refined by golden-section search.
  const LinearOp op = h.static_op();
  auto p00 = [&](double t) { return evolve(start, op, t).probability("00"); };
  std::size_t kmin = 1;
  while (kmin + 1 < samples.size() && samples[kmin + 1].populations(static_cast<Eigen::Index>(i00)) <
                                          samples[kmin].populations(static_cast<Eigen::Index>(i00)))
    ++kmin;
  double a = times[kmin - 1], b = times[kmin + 1];
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 80; ++it) {
    const double c = b - g * (b - a), d = a + g * (b - a);
    if (p00(c) < p00(d)) b = d;
    else a = c;
  }
  const double t_transfer = 0.5 * (a + b);
  o.require(std::abs(t_transfer - 0.27e-3) <= 0.01 * 0.27e-3,
            fmt("full transfer at %.5f ms with J12 = %.0f Hz (target 0.27 ms +- 1%%)", t_transfer * 1e3, j));
  return o;
}

Outcome effective_validity() {
  Outcome o;
  const ChainSpec spec = default_chain(2);
  std::vector<double> disc;
  for (double ratio : {10.0, 20.0, 40.0}) {
    const FullVsEffectiveResult r = compare_full_effective(spec, ratio, 3, 101);
    disc.push_back(r.max_discrepancy);
    if (ratio == 20.0) o.require(r.max_discrepancy < 0.05, fmt("ratio 20 discrepancy %.4g (tol 0.05)", r.max_discrepancy));
    o.require(!r.truncation_flagged, fmt("ratio %.0f top-level population %.2e", ratio, r.max_top_level_population));
  }
  o.require(disc[0] > disc[1] && disc[1] > disc[2],
            fmt("discrepancies %.4g > %.4g > %.4g for ratios 10/20/40", disc[0], disc[1], disc[2]));
  return o;
}

Outcome eq10_ground_state() {
  Outcome o;
  for (double alpha : {0.35, 0.36, 0.37}) {
    const ChainSpec spec = tuned_three_ion(alpha);
    const CouplingSet c = compute_couplings(transverse_modes(spec), spec);
    const EffectiveHamiltonian h = build_effective(c, spec);
    const SpinState g = ground_state(h.static_op(), h.basis(), 0).multiplet.front();
    double worst = 0.0;
    for (const char* l : {"0+-", "0-+", "+-0", "-+0"}) worst = std::max(worst, std::abs(g.probability(l) - 0.16));
    for (const char* l : {"+0-", "-0+"}) worst = std::max(worst, std::abs(g.probability(l) - 0.18));
    o.require(worst <= 0.005, fmt("alpha %.2f (fitted %.4f): max pattern deviation %.4f (tol 0.005)", alpha,
                                  c.power_law->alpha, worst));
    if (alpha == 0.36) {
      const double overlap = g.fidelity(aklt_state(h.basis(), kDefaultAkltBoundary));
      o.require(overlap >= 0.998,
                fmt("AKLT overlap %.5f (tol 0.998), boundary ", overlap) + to_string(kDefaultAkltBoundary));
    }
  }
  return o;
}

Outcome symmetry_obstruction() {
  Outcome o;
  const ChainSpec spec = tuned_three_ion(0.36);
  const CouplingSet physical = compute_couplings(transverse_modes(spec), spec);
  std::vector<double> grid;
  for (int k = 0; k <= 100; ++k) grid.push_back(50.0 * k);

  // Mode-derived couplings are mirror symmetric only to rounding, so the
  // exact-zero check uses the power law they fit, which is persymmetric in
  // floating point. Both are ramped.
  const PowerLawFit fit = *physical.power_law;
  const CouplingSet exact = CouplingSet::power_law_chain(3, fit.j0, fit.alpha);
  for (const CouplingSet* c : {&physical, &exact}) {
    const char* tag = c == &physical ? "mode-derived J" : "power-law J";
    const AdiabaticResult r = adiabatic_prepare(spec, *c, RampProfile::standard());
    const double overlap = r.final_state.fidelity(reference_state(r.final_state.basis_ptr(), ReferenceState::eq10_ground));
    o.require(overlap < 1e-6, std::string(tag) + fmt(": final overlap with eq10_ground %.2e (tol 1e-6)", overlap));
    const EffectiveHamiltonian h = build_effective(*c, spec);
    const SymmetryReport s = symmetry_diagnosis(h, reference_state(h.basis(), ReferenceState::eq10_ground), grid);
    o.require(s.inversion_commutator < 1e-10 && s.rotation_commutator < 1e-10,
              fmt("commutators %.1e, %.1e (tol 1e-10)", s.inversion_commutator, s.rotation_commutator));
    o.require(s.crossing_d.has_value(), s.crossing_d ? fmt("sector crossing at D* = %.4f Hz", *s.crossing_d)
                                                     : std::string("no sector crossing found"));
    const std::string coupling = fmt("inter-sector coupling %.1e", s.max_inter_sector_coupling);
    if (c == &exact) o.require(s.max_inter_sector_coupling == 0.0, coupling + " (must be exactly 0)");
    else o.detail += "; " + coupling + " (rounding in J)";
  }
  return o;
}

Outcome ground_phase_check() {
  Outcome o;
  Eigen::MatrixXd j(2, 2);
  j << 0, 1310, 1310, 0;
  const EffectiveHamiltonian h = build_effective(CouplingSet::from_j(j), default_chain(2));
  const Spectrum spec(h.static_op(), h.basis()->sector(0));
  const auto pairs = spec.sorted_eigenpairs();
  const SpinState ground(h.basis(), pairs.front().second);
  const SpinState top(h.basis(), pairs.back().second);
  const auto grid = uniform_phi_grid(36);
  const ParityCurve g = parity_scan(ground, ground_phase_sequence, grid, {}, kGroundPhaseFit);
  const ParityCurve t = parity_scan(top, ground_phase_sequence, grid, {}, kGroundPhaseFit);
  o.require(std::abs(g.c - 0.375) < 1e-6 && std::abs(g.a - 0.5) < 1e-6,
            fmt("ground (C, A) = (%.9f, %.9f) with + sign", g.c, g.a));
  o.require(std::abs(t.c - 0.375) < 1e-6 && std::abs(t.a + 0.5) < 1e-6,
            fmt("top (C, A) = (%.9f, %.9f), i.e. - sign", t.c, t.a));
  return o;
}

Outcome witness_soundness() {
  Outcome o;
  SeparableSampler sampler(2024);
  double worst = -1.0;
  for (int k = 0; k < 10000; ++k) worst = std::max(worst, witness_from_density(sampler.next()).lhs);
  o.require(worst <= 1.0 + 1e-9, fmt("max separable lhs %.9f over 1e4 states (tol 1 + 1e-9)", worst));

  const double jv = 1310.0;
  Eigen::MatrixXd j(2, 2);
  j << 0, jv, jv, 0;
  const EffectiveHamiltonian h = build_effective(CouplingSet::from_j(j), default_chain(2));
  const SpinState ent = evolve(SpinState(h.basis(), basis_vec(*h.basis(), "00")), h.static_op(), 0.5 / (std::sqrt(2.0) * jv));
  const ParityCurve c = parity_scan(ent, entanglement_sequence, uniform_phi_grid(36), {}, kEntanglementFit);
  const WitnessReport w = witness_from_state(ent);
  o.require(std::abs(c.a - 1.0) < 1e-9 && w.lhs >= 2.0 - 1e-12,
            fmt("XY-generated state: fitted A = %.9f, exact lhs = %.9f", c.a, w.lhs));
  const WitnessReport f = witness_from_amplitude(0.86);
  o.require(std::abs(f.margin - 0.72) < 1e-12 && f.violated, fmt("A = 0.86 gives margin %.6f", f.margin));
  return o;
}

Outcome conservation() {
  Outcome o;
  double norm_drift = 0.0, energy_drift = 0.0, leak = 0.0;
  const CounterRng rng{99};
  for (int n = 2; n <= 5; ++n) {
    ChainSpec spec = default_chain(n);
    const CouplingSet c = compute_couplings(transverse_modes(spec), spec);
    spec.d_field = 0.3 * c.j_matrix.cwiseAbs().maxCoeff();
    EffectiveOptions opts;
    opts.include_v_terms = true;
    const EffectiveHamiltonian h = build_effective(c, spec, opts);
    const BasisPtr& b = h.basis();
    const double jmax = c.j_matrix.cwiseAbs().maxCoeff();
    for (int trial = 0; trial < 3; ++trial) {
      const int sz = trial - 1;
      const auto idx = b->sector(sz);
      CVector v = CVector::Zero(static_cast<Eigen::Index>(b->dim()));
      for (std::size_t k = 0; k < idx.size(); ++k)
        v(static_cast<Eigen::Index>(idx[k])) =
            Complex(rng.normal(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(trial), k, 0),
                    rng.normal(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(trial), k, 1));
      v.normalize();
      const SpinState psi(b, v);
      std::vector<double> times;
      for (int k = 0; k <= 40; ++k) times.push_back(10.0 / jmax * k / 40.0);
      const auto samples = evolve_trajectory(psi, h.static_op(), times);
      const double e0 = samples.front().energy;
      const double escale = std::max(std::abs(e0), 1e-300);
      for (const auto& s : samples) {
        norm_drift = std::max(norm_drift, std::abs(s.norm - 1.0));
        energy_drift = std::max(energy_drift, std::abs(s.energy - e0) / escale);
        double out = 0.0;
        for (std::size_t i = 0; i < b->dim(); ++i)
          if (b->sz_total(i) != sz) out += s.populations(static_cast<Eigen::Index>(i));
        leak = std::max(leak, out);
      }
    }
  }
  o.require(norm_drift < 1e-10, fmt("norm drift %.2e (tol 1e-10)", norm_drift));
  o.require(energy_drift < 1e-9, fmt("relative energy drift %.2e (tol 1e-9)", energy_drift));
  o.require(leak < 1e-10, fmt("out-of-sector population %.2e (tol 1e-10)", leak));
  return o;
}

Outcome subspace_combinatorics() {
  Outcome o;
  const std::vector<std::size_t> expected{3, 7, 19, 51, 141};
  std::vector<double> dev;
  std::string dims;
  for (int n = 2; n <= 6; ++n) {
    // Brute force over all digit strings.
    std::size_t total = 1, count = 0;
    for (int i = 0; i < n; ++i) total *= 3;
    for (std::size_t idx = 0; idx < total; ++idx) {
      int sz = 0;
      for (std::size_t x = idx, k = 0; k < static_cast<std::size_t>(n); ++k, x /= 3) sz += static_cast<int>(x % 3) - 1;
      count += sz == 0;
    }
    const std::size_t lib = Basis(n).sector(0).size();
    o.require(lib == count && lib == expected[static_cast<std::size_t>(n - 2)],
              "N=" + std::to_string(n) + ": " + std::to_string(lib));
    dev.push_back(std::abs(static_cast<double>(lib) / (std::pow(3.0, n) / (2.0 * std::sqrt(double(n)))) - 1.0));
  }
  o.require(dev.back() < dev.front(), fmt("relative deviation from 3^N/(2 sqrt N): N=2 %.4f, N=6 %.4f", dev.front(), dev.back()));
  return o;
}

Outcome coupling_tunability() {
  Outcome o;
  const ChainSpec spec = default_chain(5);
  for (double target : {0.36, 1.0, 2.0}) {
    try {
      const AlphaTuning t = tune_alpha(spec, target);
      ChainSpec s = spec;
      s.mu_detuning = t.mu;
      const CouplingSet c = compute_couplings(transverse_modes(s), s);
      const double alpha = c.power_law->alpha;
      o.require(std::abs(alpha - target) < 0.01, fmt("target %.2f -> fitted %.5f at mu = COM + %.1f Hz", target, alpha,
                                                     t.mu - spec.transverse_com_freq));
    } catch (const AlphaRangeError& e) {
      o.require(false, fmt("target %.2f unreachable, achievable [%.3f, %.3f]", target, e.alpha_min(), e.alpha_max()));
    }
  }
  const auto scan = scan_alpha(spec);
  bool monotone = scan.size() >= 2;
  for (std::size_t k = 1; k < scan.size(); ++k) monotone = monotone && scan[k].alpha > scan[k - 1].alpha;
  o.require(monotone, fmt("alpha monotone over %.0f scanned points, alpha in [%.3f, %.3f]", double(scan.size()),
                          scan.front().alpha, scan.back().alpha));
  return o;
}

Outcome determinism() {
  Outcome o;
  const std::string doc = R"({"measurement": {"shots": 5000}, "parity": {"phi_points": 18}})";
  auto csv = [&](std::uint64_t seed) {
    const RunResult r = run_experiment(parse_config(doc, Experiment::parity_scan, {"paper_2ion"}, seed));
    for (const auto& f : r.files)
      if (f.name == "parity.csv") return f.content;
    return std::string();
  };
  const std::string a = csv(7), b = csv(7);
  o.require(!a.empty() && a == b, "identical seed gives byte-identical parity.csv");

  // Exact pattern distributions at each phase versus sampled counts, several seeds.
  const ExperimentConfig base = parse_config(doc, Experiment::parity_scan, {"paper_2ion"}, 0);
  const BasisPtr basis = make_basis(2);
  CVector v = CVector::Zero(9);
  v(static_cast<Eigen::Index>(basis->index_of_label("+-"))) = v(static_cast<Eigen::Index>(basis->index_of_label("-+"))) =
      1.0 / std::sqrt(2.0);
  const SpinState psi(basis, v);
  const auto grid = uniform_phi_grid(18);
  const ParityCurve exact = parity_scan(psi, entanglement_sequence, grid, MeasurementConfig{}, kEntanglementFit);
  double worst = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    MeasurementConfig m = base.measurement;
    m.seed = seed;
    const ParityCurve sampled = parity_scan(psi, entanglement_sequence, grid, m, kEntanglementFit);
    for (std::size_t k = 0; k < grid.size(); ++k)
      worst = std::max(worst, ks_distance(sampled.counts[k], exact.pattern_probabilities[k]));
  }
  o.require(csv(8) != a, "different seeds give different samples");
  o.require(worst < 3.0 / std::sqrt(5000.0), fmt("max KS distance %.4f (tol 3/sqrt(5000) = %.4f)", worst, 3.0 / std::sqrt(5000.0)));
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"two-spin flop", two_spin_flop},
      {"effective-model validity", effective_validity},
      {"three-spin ground state", eq10_ground_state},
      {"symmetry obstruction", symmetry_obstruction},
      {"ground-state phase check", ground_phase_check},
      {"witness soundness", witness_soundness},
      {"conservation suite", conservation},
      {"subspace combinatorics", subspace_combinatorics},
      {"coupling tunability", coupling_tunability},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str());
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
