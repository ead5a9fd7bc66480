#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ionsim/dynamics.hpp"
#include "ionsim/quantum.hpp"

namespace ionsim {

// ---------------------------------------------------------------------------
// Rotations

enum class Transition { zero_plus, zero_minus };

/// R_{0+-}(theta, phi) = exp((i theta/2) sum_k [e^{+-i phi}|+-><0| + e^{-+i phi}|0><+-|]).
struct RotationPulse {
  Transition transition = Transition::zero_plus;
  double theta = 0.0;
  double phi = 0.0;
};

void validate(const RotationPulse& p);

/// Single-site 3x3 unitary in the (-, 0, +) ordering.
Eigen::Matrix3cd rotation_matrix(const RotationPulse& p);

SpinState apply_rotation(const SpinState& psi, const RotationPulse& p);
/// Pulses in application order (first element acts first).
SpinState apply_sequence(const SpinState& psi, std::span<const RotationPulse> pulses);

using SequenceTemplate = std::function<std::vector<RotationPulse>(double phi)>;

/// R_{0-}(pi,0), then R_{0+}(pi/2,0), then R_{0+}(pi/2,phi).
std::vector<RotationPulse> entanglement_sequence(double phi);
/// R_{0+}(pi/2,0), then R_{0-}(pi/2,phi).
std::vector<RotationPulse> ground_phase_sequence(double phi);

// ---------------------------------------------------------------------------
// Detection

enum class Mapping { none, pi_plus, pi_minus };

struct MeasurementConfig {
  Mapping mapping = Mapping::none;
  std::optional<std::uint64_t> shots;  // empty: exact probabilities
  std::uint64_t seed = 0;
  double rabi_noise_rel = 0.0;  // per-shot Gaussian sigma on every Omega

  void validate() const;
};

/// Patterns are indexed with site 0 as the most significant bit; bit 1 means
/// the ion is dark (found in |0> after the optional mapping pulse).
struct DetectionResult {
  Eigen::VectorXd pattern_probabilities;   // exact, or counts / shots
  std::vector<std::uint64_t> counts;       // sampled mode only
  Eigen::VectorXd dark_marginals;          // P_j, j = number of dark ions
  std::uint64_t shots = 0;                 // 0 in exact mode
};

/// Exact bright/dark pattern distribution (optional mapping pulse applied).
Eigen::VectorXd pattern_distribution(const SpinState& psi, Mapping mapping);
Eigen::VectorXd dark_marginals(const Eigen::VectorXd& pattern_probabilities, int n_sites);

DetectionResult detect(const SpinState& psi, const MeasurementConfig& config, std::uint64_t run = 0,
                       std::uint64_t phi_index = 0);

/// Sum_j (-1)^j P_j. Throws ValidationError unless the marginals sum to 1 within 1e-9.
double parity(std::span<const double> marginals);
double parity(const Eigen::VectorXd& marginals);

/// Max CDF distance between sampled counts and exact probabilities over the
/// pattern index order.
double ks_distance(std::span<const std::uint64_t> counts, const Eigen::VectorXd& probabilities);

// ---------------------------------------------------------------------------
// Counter-based randomness

/// Stateless generator keyed by (seed, run, phi index, shot, stream).
struct CounterRng {
  std::uint64_t seed = 0;

  std::uint64_t bits(std::uint64_t run, std::uint64_t phi_index, std::uint64_t shot, std::uint64_t stream) const;
  /// Uniform in [0, 1).
  double uniform(std::uint64_t run, std::uint64_t phi_index, std::uint64_t shot, std::uint64_t stream) const;
  /// Standard normal (Box-Muller on streams 2k and 2k+1).
  double normal(std::uint64_t run, std::uint64_t phi_index, std::uint64_t shot, std::uint64_t k = 0) const;
};

// ---------------------------------------------------------------------------
// Parity curves

/// Fitted model Pi(phi) = C + sign*A cos(k phi) + B sin(k phi).
struct FitModel {
  int harmonic = 2;
  int sign = -1;
};

inline constexpr FitModel kEntanglementFit{2, -1};
inline constexpr FitModel kGroundPhaseFit{1, +1};

struct ParityCurve {
  std::vector<double> phi_grid;
  std::vector<double> parity_values;
  std::vector<double> stderr_values;  // binomial, 0 in exact mode
  std::vector<Eigen::VectorXd> pattern_probabilities;  // per phi
  std::vector<std::vector<std::uint64_t>> counts;      // per phi, sampled mode only
  std::uint64_t shots_per_point = 0;
  FitModel model;
  double c = 0.0;
  double a = 0.0;  // signed amplitude of the cosine term in the model's convention
  double b = 0.0;  // sine coefficient
  double residual = 0.0;  // RMS

  /// |A| with the phase absorbed.
  double amplitude() const;
};

/// Least-squares fit to [1, cos k phi, sin k phi]; throws NumericalError on
/// a singular design.
void fit_parity(ParityCurve& curve);

/// Optional Rabi scaling applied to a state-preparation step per shot.
using PreparedState = std::function<SpinState(double rabi_factor)>;

ParityCurve parity_scan(const SpinState& psi, const SequenceTemplate& sequence, std::span<const double> phi_grid,
                        const MeasurementConfig& config, FitModel model, std::uint64_t run = 0);
/// Variant where the state itself depends on the per-shot Rabi factor.
ParityCurve parity_scan(const PreparedState& prepare, const SequenceTemplate& sequence,
                        std::span<const double> phi_grid, const MeasurementConfig& config, FitModel model,
                        std::uint64_t run = 0);

/// Uniform phi grid on [0, 2 pi) with `points` entries.
std::vector<double> uniform_phi_grid(std::size_t points);

// ---------------------------------------------------------------------------
// Witness

/// Rounding allowance on the separable bound lhs <= 1.
inline constexpr double kWitnessTolerance = 1e-9;

struct WitnessReport {
  double amplitude = 0.0;
  double p00 = 0.0;
  double rho_pm_00 = 0.0;
  double rho_mp_00 = 0.0;
  double rho_pm_mp = 0.0;
  double lhs = 0.0;
  bool violated = false;
  double margin = 0.0;  // lhs - 1
  /// A > 1/2 alone proves entanglement.
  bool amplitude_sufficient = false;
};

/// 2A + P00 + 2|rho(+-,00)| + 2|rho(-+,00)| with the given pieces.
WitnessReport witness_from_terms(double amplitude, double p00, double rho_pm_00, double rho_mp_00,
                                 double rho_pm_mp = 0.0);
/// Conservative: coherence terms bounded below by 0.
WitnessReport witness_from_amplitude(double amplitude, double p00 = 0.0);
WitnessReport witness_from_curve(const ParityCurve& curve, double p00 = 0.0);
/// Two-qutrit density matrix (9x9 in the basis ordering); A from populations and |rho(+-,-+)|.
WitnessReport witness_from_density(const CMatrix& rho);
WitnessReport witness_from_state(const SpinState& psi);

/// Random separable two-qutrit density matrices: Haar-like product pure
/// states, or convex mixtures of up to four of them.
class SeparableSampler {
 public:
  explicit SeparableSampler(std::uint64_t seed) : rng_{seed} {}
  CMatrix next();
  static Eigen::Vector3cd site_state(const CounterRng& rng, std::uint64_t draw, std::uint64_t slot);

 private:
  CounterRng rng_;
  std::uint64_t draw_ = 0;
};

// ---------------------------------------------------------------------------
// Entanglement versus time

struct TimeWitness {
  double time = 0.0;
  ParityCurve curve;
  WitnessReport from_curve;
  std::optional<WitnessReport> exact;  // noiseless exact mode only
  Eigen::VectorXd populations;         // S_z = 0 patterns before the analysis pulses
};

/// Evolves |00> under `h` (two sites) for each duration and analyses the
/// entanglement sequence at every phase in `phi_grid`.
std::vector<TimeWitness> entanglement_vs_time(const EffectiveHamiltonian& h, std::span<const double> times,
                                              std::span<const double> phi_grid, const MeasurementConfig& config);
std::vector<TimeWitness> entanglement_vs_time(const ChainSpec& spec, const CouplingSet& coupling,
                                              std::span<const double> times, std::span<const double> phi_grid,
                                              const MeasurementConfig& config);

std::string to_string(Mapping m);
Mapping parse_mapping(std::string_view s);
std::string to_string(Transition t);

}  // namespace ionsim
