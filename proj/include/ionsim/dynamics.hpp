#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ionsim/couplings.hpp"
#include "ionsim/linalg.hpp"
#include "ionsim/quantum.hpp"

namespace ionsim {

// ---------------------------------------------------------------------------
// Ramps

struct RampProfile {
  enum class Shape { exponential, linear, table };

  Shape shape = Shape::exponential;
  double d_initial = 5.0e3;         // Hz
  double time_constant = 0.167e-3;  // s, exponential only
  double duration = 1.0e-3;         // s
  double d_final = 0.0;             // Hz, linear only
  std::vector<std::pair<double, double>> table;  // (t, D), linear interpolation

  double value(double t) const;
  void validate() const;

  /// D(t) = 5 kHz exp(-t / 0.167 ms), run for 1 ms.
  static RampProfile standard();

  bool operator==(const RampProfile&) const = default;
};

// ---------------------------------------------------------------------------
// Effective spin Hamiltonian

struct EffectiveOptions {
  bool include_v_terms = false;
  /// Phonon occupation replacing a^dagger a in the V terms.
  double n_bar = 0.05;
};

/// H = sum_{i<j} (J_ij/4)(S+S- + S-S+) + D(t) sum (S_z)^2 + site shifts
///     [+ sum V(i,m)((2 n_bar + 1) S_z^i - (S_z^i)^2)].
class EffectiveHamiltonian {
 public:
  EffectiveHamiltonian(BasisPtr basis, LinearOp xy, LinearOp v, LinearOp shifts, double d_field);

  const BasisPtr& basis() const { return basis_; }
  const LinearOp& xy_part() const { return xy_; }
  const LinearOp& v_part() const { return v_; }
  const LinearOp& shift_part() const { return shifts_; }
  const LinearOp& sz2_sum() const { return sz2_; }
  double d_field() const { return d_field_; }
  const std::optional<RampProfile>& time_profile() const { return ramp_; }

  double d_at(double t) const { return ramp_ ? ramp_->value(t) : d_field_; }
  /// Operator at time t (static part plus D(t) field).
  LinearOp at(double t) const;
  /// Static operator; ignores any ramp.
  LinearOp static_op() const { return with_field(d_field_); }
  /// Operator with an explicit D value.
  LinearOp with_field(double d) const;

  EffectiveHamiltonian with_ramp(RampProfile ramp) const;
  /// Scales the Rabi frequencies by `factor`: J and V terms scale by factor^2.
  EffectiveHamiltonian with_rabi_scale(double factor) const;

 private:
  BasisPtr basis_;
  LinearOp xy_, v_, shifts_, sz2_;
  double d_field_;
  std::optional<RampProfile> ramp_;
};

/// XY part alone from a J matrix.
LinearOp xy_operator(const Basis& basis, const Eigen::MatrixXd& j);

EffectiveHamiltonian build_effective(const CouplingSet& coupling, const ChainSpec& spec, EffectiveOptions opts = {});

// ---------------------------------------------------------------------------
// Full spin-phonon Hamiltonian

struct PhononInit {
  enum class Kind { ground, thermal };
  Kind kind = Kind::ground;
  double n_bar = 0.0;
};

/// Interaction-picture Hamiltonian
///   sum_{i,m} i eta Omega / (2 sqrt2) (-S+^i a_m e^{i 2pi delta_m t} + h.c.)
/// on spin (x) truncated Fock spaces, delta_m = mu - omega_m. Full index is
/// spin_index * phonon_dim + phonon_index, mode 0 most significant.
class FullHamiltonian {
 public:
  FullHamiltonian(BasisPtr basis, int n_modes, int n_max, std::vector<LinearOp> drive, Eigen::VectorXd detunings,
                  PhononInit init);

  const BasisPtr& basis() const { return basis_; }
  int n_modes() const { return n_modes_; }
  int n_max() const { return n_max_; }
  std::size_t spin_dim() const { return basis_->dim(); }
  std::size_t phonon_dim() const { return phonon_dim_; }
  std::size_t dim() const { return spin_dim() * phonon_dim_; }
  const Eigen::VectorXd& detunings() const { return detunings_; }
  const PhononInit& initial_phonons() const { return init_; }

  LinearOp at(double t) const;
  /// Static generator in the frame rotating with each mode at -delta_m.
  /// Spin-pattern populations (and Fock populations) coincide with the
  /// interaction picture at every time.
  LinearOp rotating_frame() const;
  /// Maps a rotating-frame state at time t to the interaction picture.
  CVector to_interaction_picture(const CVector& psi, double t) const;

  std::vector<int> phonon_occupations(std::size_t phonon_index) const;
  std::size_t full_index(std::size_t spin_index, std::span<const int> occupations) const;

  /// Product of a spin state and the Fock state with the given occupations.
  CVector product_state(const CVector& spin, std::span<const int> occupations) const;
  /// Fock configurations and weights of the initial phonon distribution.
  std::vector<std::pair<std::vector<int>, double>> initial_fock_mixture() const;

  Eigen::VectorXd spin_populations(const CVector& psi) const;
  /// Population with any mode in its top Fock level.
  double top_level_population(const CVector& psi) const;

 private:
  BasisPtr basis_;
  int n_modes_, n_max_;
  std::size_t phonon_dim_;
  std::vector<LinearOp> drive_;  // coefficient of e^{+i 2pi delta_m t}
  LinearOp number_weighted_;     // sum_m delta_m n_m
  Eigen::VectorXd detunings_;
  PhononInit init_;
};

inline constexpr std::size_t kFullDimensionCap = 4096;

FullHamiltonian build_full(const NormalModes& modes, const ChainSpec& spec, int n_max, PhononInit init = {});

// ---------------------------------------------------------------------------
// Evolution

/// Static evolution exp(-i 2pi H t). Requires a normalized state.
SpinState evolve(const SpinState& psi, const LinearOp& h, double duration);

enum class StepScheme { midpoint, commutator_free4 };

struct TimeDependentOptions {
  double tolerance = 1e-8;  // global L2 budget over the whole interval
  double initial_step = 0.0;  // 0: pick from the operator norm
  double min_step = 1e-14;
  std::size_t max_steps = 2'000'000;
  StepScheme scheme = StepScheme::commutator_free4;
};

struct EvolutionReport {
  CVector state;
  double error_estimate = 0.0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
};

/// Piecewise-constant exponential steps with step-doubling acceptance.
EvolutionReport evolve_time_dependent(const CVector& psi, const std::function<LinearOp(double)>& h, double t0,
                                      double t1, const TimeDependentOptions& opts = {});

SpinState evolve(const SpinState& psi, const EffectiveHamiltonian& h, double duration,
                 const TimeDependentOptions& opts = {});

struct StateSample {
  double time;
  Eigen::VectorXd populations;
  double norm;
  double energy;
};

/// Samples a static evolution at the given times.
std::vector<StateSample> evolve_trajectory(const SpinState& psi, const LinearOp& h, std::span<const double> times);

// ---------------------------------------------------------------------------
// Spectra

struct GroundState {
  double energy = 0.0;
  std::vector<SpinState> multiplet;
  bool degenerate = false;
  double gap = 0.0;  // to the next level outside the multiplet (0 if none)
};

inline constexpr double kDegeneracyTolerance = 1e-9;

GroundState ground_state(const LinearOp& h, const BasisPtr& basis, std::optional<int> sz = std::nullopt);

// ---------------------------------------------------------------------------
// Symmetry sectors

/// Joint eigenspace of inversion (and, for S_z = 0, the S_x pi rotation)
/// inside an S_z sector. For sz != 0 rotation is reported as 0.
struct SymmetrySector {
  int inversion;
  int rotation;
  CMatrix basis;  // orthonormal full-space columns
};

std::vector<SymmetrySector> symmetry_sectors(const Basis& basis, int sz);

struct SymmetrySweepPoint {
  double d_field;
  std::vector<double> sector_ground;  // aligned with SymmetryReport::sectors
};

struct SymmetryReport {
  bool mirror_symmetric = false;
  double inversion_commutator = 0.0;
  double rotation_commutator = 0.0;
  double inversion_expectation = 0.0;
  double rotation_expectation = 0.0;
  std::optional<int> inversion_eigenvalue;
  std::optional<int> rotation_eigenvalue;
  std::vector<std::pair<int, int>> sectors;  // (inversion, rotation)
  std::vector<SymmetrySweepPoint> sweep;
  std::optional<double> crossing_d;
  std::pair<int, int> symmetric_sector{1, 1};
  std::pair<int, int> antisymmetric_sector{-1, -1};
  double max_inter_sector_coupling = 0.0;
};

SymmetryReport symmetry_diagnosis(const EffectiveHamiltonian& h, const SpinState& state, std::span<const double> d_grid);

// ---------------------------------------------------------------------------
// Adiabatic preparation

struct AdiabaticOptions {
  std::size_t samples = 101;
  TimeDependentOptions integrator{};
};

struct TrajectorySample {
  double time;
  double d_field;
  Eigen::VectorXd populations;  // over AdiabaticResult::pattern_indices
  double ground_fidelity;
  double tracked_fidelity;
  double norm;
  double energy;
};

struct AdiabaticResult {
  std::vector<std::size_t> pattern_indices;  // S_z = 0 basis indices
  std::vector<TrajectorySample> trajectory;
  SpinState initial;
  SpinState final_state;
  double initial_all_zero_overlap = 0.0;
  double final_ground_fidelity = 0.0;
  double final_tracked_fidelity = 0.0;
  /// Position of the tracked state in the final S_z = 0 spectrum (0 = ground).
  int tracked_level = 0;
  std::pair<int, int> tracked_sector{1, 1};
  double error_estimate = 0.0;
};

/// Starts in the ground state of H(0) and follows the ramp on `h`.
AdiabaticResult adiabatic_prepare(const EffectiveHamiltonian& h, const AdiabaticOptions& opts = {});
AdiabaticResult adiabatic_prepare(const ChainSpec& spec, const CouplingSet& coupling, const RampProfile& ramp,
                                  const AdiabaticOptions& opts = {}, EffectiveOptions eff = {});

// ---------------------------------------------------------------------------
// Full versus effective model

struct FullVsEffectiveSample {
  double time;
  Eigen::VectorXd full;       // spin populations over S_z = 0 patterns
  Eigen::VectorXd effective;
};

struct FullVsEffectiveResult {
  double detuning_ratio = 0.0;
  double mu = 0.0;
  double j12 = 0.0;
  double flop_period = 0.0;
  double max_discrepancy = 0.0;
  double max_top_level_population = 0.0;
  bool truncation_flagged = false;
  std::vector<std::size_t> pattern_indices;
  std::vector<FullVsEffectiveSample> samples;
};

inline constexpr double kTruncationFlagThreshold = 1e-3;

/// Places mu = omega_COM + ratio * max_i |eta(i,COM) Omega_i| and compares
/// spin populations of the full and effective models from |00...>, over one
/// flop period 1/(sqrt2 J_01).
FullVsEffectiveResult compare_full_effective(const ChainSpec& spec, double detuning_ratio, int n_max,
                                             std::size_t samples = 101, PhononInit init = {});

}  // namespace ionsim
