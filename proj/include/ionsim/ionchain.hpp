#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ionsim {

namespace constants {
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kPlanck = 6.62607015e-34;            // J s
inline constexpr double kElementaryCharge = 1.602176634e-19;  // C
inline constexpr double kVacuumPermittivity = 8.8541878128e-12;
inline constexpr double kAtomicMassUnit = 1.66053906660e-27;  // kg
inline constexpr double kYb171Mass = 170.936323 * kAtomicMassUnit;
/// Counter-propagating 355 nm Raman beams.
inline constexpr double kRaman355DeltaK = 2.0 * 2.0 * kPi / 355e-9;
}  // namespace constants

/// Per-site S_z and (S_z)^2 shifts, both in Hz.
struct SiteShift {
  double linear_hz = 0.0;
  double quadratic_hz = 0.0;

  bool operator==(const SiteShift&) const = default;
};

/// Physical configuration of the ion chain and the Raman drive. All
/// frequencies are ordinary frequencies in Hz.
struct ChainSpec {
  int n_ions = 3;
  double axial_freq = 1.0e6;
  double transverse_com_freq = 4.8e6;
  double ion_mass = constants::kYb171Mass;
  double delta_k = constants::kRaman355DeltaK;
  std::vector<double> rabi_freqs;  // one per ion
  double mu_detuning = 0.0;
  double d_field = 0.0;
  std::vector<SiteShift> site_shifts;  // empty, or one per ion

  bool operator==(const ChainSpec&) const = default;

  double anisotropy() const { return transverse_com_freq / axial_freq; }
};

/// Representative 171Yb+ chain: 1 MHz axial, 4.8 MHz transverse COM, 50 kHz
/// Rabi frequency on every ion and a beatnote 60 kHz above the COM mode.
ChainSpec default_chain(int n_ions);

/// Checks the type-level invariants of a ChainSpec. Throws ValidationError
/// for malformed fields and PhysicsError when the linear chain is unstable.
void validate(const ChainSpec& spec);

struct NormalModes {
  Eigen::VectorXd mode_freqs;             // Hz, descending (COM first)
  /// b(i, m), columns are modes. Sign: the first entry within 1e-9 of the
  /// column's largest magnitude is positive.
  Eigen::MatrixXd mode_matrix;
  Eigen::MatrixXd lamb_dicke;             // eta(i, m)
  Eigen::VectorXd equilibrium_positions;  // dimensionless, ascending
  Eigen::VectorXd eigenvalues;            // (omega_m / axial)^2
  std::vector<std::string> warnings;
};

/// Stationary point of sum u_i^2/2 + sum_{i<j} 1/|u_i - u_j|, ascending.
/// Damped Newton iteration; throws NumericalError if it does not converge.
Eigen::VectorXd equilibrium_positions(int n_ions);

/// Gradient of the dimensionless axial potential.
Eigen::VectorXd potential_gradient(const Eigen::VectorXd& positions);

/// Dimensionless transverse Hessian in units of the axial frequency squared.
Eigen::MatrixXd transverse_hessian(const Eigen::VectorXd& positions, double anisotropy);

/// Smallest transverse/axial frequency ratio for which an n-ion linear chain
/// is stable.
double critical_anisotropy(int n_ions);

/// Diagonalizes the transverse Hessian. Throws PhysicsError on an imaginary
/// mode frequency.
NormalModes transverse_modes(const ChainSpec& spec);

/// b(i,m) * delta_k * sqrt(h / (8 pi^2 M omega_m)).
Eigen::MatrixXd lamb_dicke_factors(const NormalModes& modes, const ChainSpec& spec);

/// Lamb-Dicke regime boundary used for warnings.
inline constexpr double kLambDickeWarnThreshold = 0.3;

}  // namespace ionsim
