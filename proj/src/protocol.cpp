#include "ionsim/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "ionsim/errors.hpp"
#include "ionsim/linalg.hpp"

namespace ionsim {

namespace {

constexpr double kTwoPi = 2.0 * constants::kPi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Gauss-Hermite rule for a standard normal variable (Golub-Welsch).
struct NormalRule {
  std::vector<double> nodes, weights;
};

const NormalRule& normal_rule() {
  static const NormalRule rule = [] {
    constexpr int n = 32;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) jac(k - 1, k) = jac(k, k - 1) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    NormalRule r;
    for (int k = 0; k < n; ++k) {
      r.nodes.push_back(std::sqrt(2.0) * es.eigenvalues()(k));
      const double v = es.eigenvectors()(0, k);
      r.weights.push_back(v * v);
    }
    return r;
  }();
  return rule;
}

int dark_count(std::size_t pattern) { return std::popcount(pattern); }

std::vector<RotationPulse> scaled(std::vector<RotationPulse> pulses, double factor) {
  for (auto& p : pulses) p.theta *= factor;
  return pulses;
}

std::size_t draw_pattern(const Eigen::VectorXd& probs, double u) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    acc += probs(k);
    if (u < acc) return static_cast<std::size_t>(k);
  }
  // Rounding leaves u above the last partial sum: take the last populated pattern.
  for (Eigen::Index k = probs.size() - 1; k > 0; --k)
    if (probs(k) > 0.0) return static_cast<std::size_t>(k);
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rotations

void validate(const RotationPulse& p) {
  if (!(p.theta >= 0.0 && p.theta <= kTwoPi)) throw ValidationError("pulse.theta: must lie in [0, 2 pi]");
  if (!std::isfinite(p.phi)) throw ValidationError("pulse.phi: must be finite");
}

Eigen::Matrix3cd rotation_matrix(const RotationPulse& p) {
  // Indices: 0 = |->, 1 = |0>, 2 = |+>.
  const int other = p.transition == Transition::zero_plus ? 2 : 0;
  const double sign = p.transition == Transition::zero_plus ? 1.0 : -1.0;
  const Complex in = std::polar(1.0, sign * p.phi);  // coefficient of |+-><0|
  const double c = std::cos(0.5 * p.theta), s = std::sin(0.5 * p.theta);
  Eigen::Matrix3cd u = Eigen::Matrix3cd::Identity();
  u(1, 1) = c;
  u(other, other) = c;
  u(other, 1) = Complex(0.0, s) * in;
  u(1, other) = Complex(0.0, s) * std::conj(in);
  return u;
}

SpinState apply_rotation(const SpinState& psi, const RotationPulse& p) {
  return SpinState(psi.basis_ptr(), apply_product(psi.basis(), rotation_matrix(p), psi.amplitudes()));
}

SpinState apply_sequence(const SpinState& psi, std::span<const RotationPulse> pulses) {
  CVector v = psi.amplitudes();
  for (const auto& p : pulses) v = apply_product(psi.basis(), rotation_matrix(p), v);
  return SpinState(psi.basis_ptr(), std::move(v));
}

std::vector<RotationPulse> entanglement_sequence(double phi) {
  const double pi = constants::kPi;
  return {{Transition::zero_minus, pi, 0.0}, {Transition::zero_plus, pi / 2, 0.0}, {Transition::zero_plus, pi / 2, phi}};
}

std::vector<RotationPulse> ground_phase_sequence(double phi) {
  const double pi = constants::kPi;
  return {{Transition::zero_plus, pi / 2, 0.0}, {Transition::zero_minus, pi / 2, phi}};
}

// ---------------------------------------------------------------------------
// Detection

void MeasurementConfig::validate() const {
  if (shots && *shots < 1) throw ValidationError("measurement.shots: must be >= 1 in sampling mode");
  if (!(rabi_noise_rel >= 0.0) || !std::isfinite(rabi_noise_rel))
    throw ValidationError("measurement.rabi_noise_rel: must be a finite value >= 0");
}

Eigen::VectorXd pattern_distribution(const SpinState& psi, Mapping mapping) {
  const Basis& basis = psi.basis();
  CVector v = psi.amplitudes();
  if (mapping != Mapping::none) {
    const RotationPulse pi_pulse{mapping == Mapping::pi_plus ? Transition::zero_plus : Transition::zero_minus,
                                 constants::kPi, 0.0};
    v = apply_product(basis, rotation_matrix(pi_pulse), v);
  }
  const int n = basis.n_sites();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(Eigen::Index{1} << n);
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    std::size_t pattern = 0;
    for (int i = 0; i < n; ++i) pattern = (pattern << 1) | (basis.digit(s, i) == 1 ? 1u : 0u);
    out(static_cast<Eigen::Index>(pattern)) += std::norm(v(static_cast<Eigen::Index>(s)));
  }
  return out;
}

Eigen::VectorXd dark_marginals(const Eigen::VectorXd& probs, int n_sites) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_sites + 1);
  for (Eigen::Index k = 0; k < probs.size(); ++k) out(dark_count(static_cast<std::size_t>(k))) += probs(k);
  return out;
}

DetectionResult detect(const SpinState& psi, const MeasurementConfig& config, std::uint64_t run,
                       std::uint64_t phi_index) {
  config.validate();
  DetectionResult res;
  const Eigen::VectorXd exact = pattern_distribution(psi, config.mapping);
  if (!config.shots) {
    res.pattern_probabilities = exact;
  } else {
    const CounterRng rng{config.seed};
    res.shots = *config.shots;
    res.counts.assign(static_cast<std::size_t>(exact.size()), 0);
    for (std::uint64_t shot = 0; shot < res.shots; ++shot)
      ++res.counts[draw_pattern(exact, rng.uniform(run, phi_index, shot, 2))];
    res.pattern_probabilities.resize(exact.size());
    for (Eigen::Index k = 0; k < exact.size(); ++k)
      res.pattern_probabilities(k) = static_cast<double>(res.counts[static_cast<std::size_t>(k)]) / res.shots;
  }
  res.dark_marginals = dark_marginals(res.pattern_probabilities, psi.basis().n_sites());
  return res;
}

double parity(std::span<const double> marginals) {
  double sum = 0.0, par = 0.0;
  for (std::size_t j = 0; j < marginals.size(); ++j) {
    sum += marginals[j];
    par += (j % 2 == 0 ? 1.0 : -1.0) * marginals[j];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "parity: marginals sum to " << sum << ", expected 1";
    throw ValidationError(os.str());
  }
  return par;
}

double parity(const Eigen::VectorXd& marginals) {
  return parity(std::span<const double>(marginals.data(), static_cast<std::size_t>(marginals.size())));
}

double ks_distance(std::span<const std::uint64_t> counts, const Eigen::VectorXd& probs) {
  if (counts.size() != static_cast<std::size_t>(probs.size())) throw ValidationError("ks_distance: size mismatch");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
  if (total == 0.0) throw ValidationError("ks_distance: no shots");
  double emp = 0.0, ref = 0.0, worst = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    emp += counts[k] / total;
    ref += probs(static_cast<Eigen::Index>(k));
    worst = std::max(worst, std::abs(emp - ref));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Counter-based randomness

std::uint64_t CounterRng::bits(std::uint64_t run, std::uint64_t phi_index, std::uint64_t shot,
                               std::uint64_t stream) const {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ run);
  h = splitmix(h ^ phi_index);
  h = splitmix(h ^ shot);
  return splitmix(h ^ stream);
}

double CounterRng::uniform(std::uint64_t run, std::uint64_t phi_index, std::uint64_t shot,
                           std::uint64_t stream) const {
  return static_cast<double>(bits(run, phi_index, shot, stream) >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t run, std::uint64_t phi_index, std::uint64_t shot, std::uint64_t k) const {
  const double u1 = 1.0 - uniform(run, phi_index, shot, 2 * k + 16);  // (0, 1]
  const double u2 = uniform(run, phi_index, shot, 2 * k + 17);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

// ---------------------------------------------------------------------------
// Parity curves

double ParityCurve::amplitude() const { return std::hypot(a, b); }

void fit_parity(ParityCurve& curve) {
  const auto n = static_cast<Eigen::Index>(curve.phi_grid.size());
  if (curve.model.harmonic < 1) throw ValidationError("fit_parity: harmonic must be >= 1");
  if (curve.model.sign != 1 && curve.model.sign != -1) throw ValidationError("fit_parity: sign must be +1 or -1");
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = curve.model.harmonic * curve.phi_grid[static_cast<std::size_t>(i)];
    design(i, 0) = 1.0;
    design(i, 1) = curve.model.sign * std::cos(x);
    design(i, 2) = std::sin(x);
    rhs(i) = curve.parity_values[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (n < 3 || qr.rank() < 3) throw NumericalError("fit_parity: singular design (too few or aliased phases)");
  const Eigen::Vector3d coef = qr.solve(rhs);
  curve.c = coef(0);
  curve.a = coef(1);
  curve.b = coef(2);
  curve.residual = n > 0 ? std::sqrt((design * coef - rhs).squaredNorm() / static_cast<double>(n)) : 0.0;
}

std::vector<double> uniform_phi_grid(std::size_t points) {
  std::vector<double> out(points);
  for (std::size_t k = 0; k < points; ++k) out[k] = kTwoPi * static_cast<double>(k) / static_cast<double>(points);
  return out;
}

ParityCurve parity_scan(const SpinState& psi, const SequenceTemplate& sequence, std::span<const double> phi_grid,
                        const MeasurementConfig& config, FitModel model, std::uint64_t run) {
  return parity_scan([&psi](double) { return psi; }, sequence, phi_grid, config, model, run);
}

namespace {

std::vector<SpinState> quadrature_states(const PreparedState& prepare, const MeasurementConfig& config) {
  std::vector<SpinState> out;
  if (config.rabi_noise_rel > 0.0 && !config.shots)
    for (double x : normal_rule().nodes) out.push_back(prepare(1.0 + config.rabi_noise_rel * x));
  return out;
}

// Pattern distribution at one analysis phase: exact, noise-averaged over the
// quadrature states, or sampled shot by shot.
Eigen::VectorXd point_probabilities(const PreparedState& prepare, const SpinState& base,
                                    const std::vector<SpinState>& nodes, const std::vector<RotationPulse>& pulses,
                                    const MeasurementConfig& config, std::uint64_t run, std::uint64_t k,
                                    std::vector<std::uint64_t>* counts_out) {
  const double sigma = config.rabi_noise_rel;
  const int n = base.basis().n_sites();
  auto distribution = [&](const SpinState& s, double factor) {
    return pattern_distribution(apply_sequence(s, scaled(pulses, factor)), config.mapping);
  };
  if (!config.shots) {
    if (sigma == 0.0) return distribution(base, 1.0);
    const auto& rule = normal_rule();
    Eigen::VectorXd probs = Eigen::VectorXd::Zero(Eigen::Index{1} << n);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q)
      probs += rule.weights[q] * distribution(nodes[q], 1.0 + sigma * rule.nodes[q]);
    return probs;
  }
  const CounterRng rng{config.seed};
  std::vector<std::uint64_t> counts(std::size_t{1} << n, 0);
  const Eigen::VectorXd clean = sigma > 0.0 ? Eigen::VectorXd() : distribution(base, 1.0);
  for (std::uint64_t shot = 0; shot < *config.shots; ++shot) {
    if (sigma > 0.0) {
      const double f = 1.0 + sigma * rng.normal(run, k, shot);
      ++counts[draw_pattern(distribution(prepare(f), f), rng.uniform(run, k, shot, 2))];
    } else {
      ++counts[draw_pattern(clean, rng.uniform(run, k, shot, 2))];
    }
  }
  Eigen::VectorXd probs(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t j = 0; j < counts.size(); ++j)
    probs(static_cast<Eigen::Index>(j)) = static_cast<double>(counts[j]) / static_cast<double>(*config.shots);
  if (counts_out) *counts_out = std::move(counts);
  return probs;
}

}  // namespace

ParityCurve parity_scan(const PreparedState& prepare, const SequenceTemplate& sequence,
                        std::span<const double> phi_grid, const MeasurementConfig& config, FitModel model,
                        std::uint64_t run) {
  config.validate();
  ParityCurve curve;
  curve.model = model;
  curve.phi_grid.assign(phi_grid.begin(), phi_grid.end());
  const std::size_t m = phi_grid.size();
  curve.parity_values.resize(m);
  curve.stderr_values.assign(m, 0.0);
  curve.pattern_probabilities.resize(m);
  if (config.shots) curve.counts.resize(m);
  curve.shots_per_point = config.shots.value_or(0);

  const SpinState base = prepare(1.0);
  const int n = base.basis().n_sites();
  const std::vector<SpinState> nodes = quadrature_states(prepare, config);

  parallel_for(m, [&](std::size_t k) {
    Eigen::VectorXd probs = point_probabilities(prepare, base, nodes, sequence(phi_grid[k]), config, run, k,
                                                config.shots ? &curve.counts[k] : nullptr);
    curve.parity_values[k] = parity(dark_marginals(probs, n));
    if (config.shots) {
      const double p = curve.parity_values[k];
      curve.stderr_values[k] = std::sqrt(std::max(0.0, 1.0 - p * p) / static_cast<double>(*config.shots));
    }
    curve.pattern_probabilities[k] = std::move(probs);
  });
  fit_parity(curve);
  return curve;
}

// ---------------------------------------------------------------------------
// Witness

WitnessReport witness_from_terms(double amplitude, double p00, double rho_pm_00, double rho_mp_00, double rho_pm_mp) {
  WitnessReport w;
  w.amplitude = amplitude;
  w.p00 = p00;
  w.rho_pm_00 = rho_pm_00;
  w.rho_mp_00 = rho_mp_00;
  w.rho_pm_mp = rho_pm_mp;
  w.lhs = 2.0 * amplitude + p00 + 2.0 * rho_pm_00 + 2.0 * rho_mp_00;
  w.violated = w.lhs > 1.0 + kWitnessTolerance;
  w.margin = w.lhs - 1.0;
  w.amplitude_sufficient = amplitude > 0.5;
  return w;
}

WitnessReport witness_from_amplitude(double amplitude, double p00) {
  return witness_from_terms(amplitude, p00, 0.0, 0.0);
}

WitnessReport witness_from_curve(const ParityCurve& curve, double p00) {
  // A negative cosine coefficient in the model convention carries no
  // coherence evidence.
  return witness_from_amplitude(std::max(0.0, curve.a), p00);
}

WitnessReport witness_from_density(const CMatrix& rho) {
  if (rho.rows() != 9 || rho.cols() != 9) throw ValidationError("witness: density matrix must be 9x9 (two qutrits)");
  const Basis basis(2);
  const auto pm = static_cast<Eigen::Index>(basis.index_of_label("+-"));
  const auto mp = static_cast<Eigen::Index>(basis.index_of_label("-+"));
  const auto zz = static_cast<Eigen::Index>(basis.index_of_label("00"));
  const double coherence = std::abs(rho(pm, mp));
  const double amplitude = 0.5 * (rho(pm, pm).real() + rho(mp, mp).real() + 2.0 * coherence);
  return witness_from_terms(amplitude, rho(zz, zz).real(), std::abs(rho(pm, zz)), std::abs(rho(mp, zz)), coherence);
}

WitnessReport witness_from_state(const SpinState& psi) {
  if (psi.basis().n_sites() != 2) throw ValidationError("witness: requires a two-site state");
  return witness_from_density(psi.amplitudes() * psi.amplitudes().adjoint());
}

Eigen::Vector3cd SeparableSampler::site_state(const CounterRng& rng, std::uint64_t draw, std::uint64_t slot) {
  Eigen::Vector3cd v;
  for (int c = 0; c < 3; ++c)
    v(c) = Complex(rng.normal(draw, slot, static_cast<std::uint64_t>(c), 0),
                   rng.normal(draw, slot, static_cast<std::uint64_t>(c), 1));
  return v.normalized();
}

CMatrix SeparableSampler::next() {
  const std::uint64_t d = draw_++;
  const int parts = 1 + static_cast<int>(rng_.bits(d, 1000, 0, 0) % 4);
  std::vector<double> weights(static_cast<std::size_t>(parts));
  for (int c = 0; c < parts; ++c) weights[static_cast<std::size_t>(c)] = -std::log(1.0 - rng_.uniform(d, 1001, c, 0));
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  CMatrix rho = CMatrix::Zero(9, 9);
  for (int c = 0; c < parts; ++c) {
    const Eigen::Vector3cd a = site_state(rng_, d, 2 * static_cast<std::uint64_t>(c));
    const Eigen::Vector3cd b = site_state(rng_, d, 2 * static_cast<std::uint64_t>(c) + 1);
    CVector psi(9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) psi(3 * i + j) = a(i) * b(j);
    rho += (weights[static_cast<std::size_t>(c)] / total) * (psi * psi.adjoint());
  }
  return rho;
}

// ---------------------------------------------------------------------------
// Entanglement versus time

std::vector<TimeWitness> entanglement_vs_time(const EffectiveHamiltonian& h, std::span<const double> times,
                                              std::span<const double> phi_grid, const MeasurementConfig& config) {
  config.validate();
  const BasisPtr& basis = h.basis();
  if (basis->n_sites() != 2) throw ValidationError("entanglement_vs_time: requires two ions");
  const SpinState start = reference_state(basis, ReferenceState::all_zero);
  const LinearOp h0 = h.static_op();
  const auto sector = basis->sector(0);
  const std::size_t both_dark = 3;

  std::vector<TimeWitness> out(times.size());
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const double t = times[ti];
    if (!(t >= 0.0)) throw ValidationError("entanglement_vs_time: times must be >= 0");
    const SpinState clean = evolve(start, h0, t);
    PreparedState prepare = [&, t](double f) {
      return f == 1.0 ? clean : evolve(start, h.with_rabi_scale(f).static_op(), t);
    };
    TimeWitness& tw = out[ti];
    tw.time = t;
    tw.curve = parity_scan(prepare, entanglement_sequence, phi_grid, config, kEntanglementFit, 2 * ti);
    // P00 from direct detection without analysis pulses.
    MeasurementConfig plain = config;
    plain.mapping = Mapping::none;
    const Eigen::VectorXd direct =
        point_probabilities(prepare, clean, quadrature_states(prepare, plain), {}, plain, 2 * ti + 1, 0, nullptr);
    tw.from_curve = witness_from_curve(tw.curve, direct(both_dark));
    if (!config.shots && config.rabi_noise_rel == 0.0) tw.exact = witness_from_state(clean);
    tw.populations.resize(static_cast<Eigen::Index>(sector.size()));
    for (std::size_t k = 0; k < sector.size(); ++k)
      tw.populations(static_cast<Eigen::Index>(k)) = std::norm(clean.amplitudes()(static_cast<Eigen::Index>(sector[k])));
  }
  return out;
}

std::vector<TimeWitness> entanglement_vs_time(const ChainSpec& spec, const CouplingSet& coupling,
                                              std::span<const double> times, std::span<const double> phi_grid,
                                              const MeasurementConfig& config) {
  return entanglement_vs_time(build_effective(coupling, spec), times, phi_grid, config);
}

std::string to_string(Mapping m) {
  switch (m) {
    case Mapping::none: return "none";
    case Mapping::pi_plus: return "pi_plus";
    case Mapping::pi_minus: return "pi_minus";
  }
  return "none";
}

Mapping parse_mapping(std::string_view s) {
  if (s == "none") return Mapping::none;
  if (s == "pi_plus") return Mapping::pi_plus;
  if (s == "pi_minus") return Mapping::pi_minus;
  throw ValidationError("measurement.mapping: expected one of none, pi_plus, pi_minus");
}

std::string to_string(Transition t) { return t == Transition::zero_plus ? "zero_plus" : "zero_minus"; }

}  // namespace ionsim
