#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ionsim/errors.hpp"
#include "ionsim/ionchain.hpp"

namespace ionsim {

struct PowerLawFit {
  double j0 = 0.0;     // Hz
  double alpha = 0.0;  // J_ij ~ j0 / |i-j|^alpha
};

struct CouplingSet {
  Eigen::MatrixXd j_matrix;  // Hz, symmetric, zero diagonal
  Eigen::MatrixXd v_matrix;  // Hz, V(i, m)
  std::optional<PowerLawFit> power_law;            // all pairs
  std::optional<PowerLawFit> power_law_first_ion;  // pairs (0, j) only
  double uniformity = 0.0;

  /// Couplings given directly (presets and synthetic tests). V is left zero.
  static CouplingSet from_j(const Eigen::MatrixXd& j);
  /// J_ij = j0 / |i-j|^alpha.
  static CouplingSet power_law_chain(int n, double j0, double alpha);

  int n_sites() const { return static_cast<int>(j_matrix.rows()); }
};

/// Raised when |mu - omega_m| violates the resonance guard.
class DetuningTooCloseError : public PhysicsError {
 public:
  DetuningTooCloseError(const std::string& what, int mode) : PhysicsError(what), mode_(mode) {}
  int mode() const noexcept { return mode_; }

 private:
  int mode_;
};

/// Unreachable alpha target; carries the achievable range.
class AlphaRangeError : public PhysicsError {
 public:
  AlphaRangeError(const std::string& what, double lo, double hi) : PhysicsError(what), lo_(lo), hi_(hi) {}
  double alpha_min() const noexcept { return lo_; }
  double alpha_max() const noexcept { return hi_; }

 private:
  double lo_, hi_;
};

/// Power-law fit failure (mixed signs, too few sites, zero couplings).
class FitUndefinedError : public PhysicsError {
 public:
  using PhysicsError::PhysicsError;
};

/// Guard threshold per mode: 10 * max_i |eta(i,m) * Omega_i|.
Eigen::VectorXd resonance_guard(const NormalModes& modes, const ChainSpec& spec);

/// Throws DetuningTooCloseError naming the first offending mode.
void check_resonance_guard(const NormalModes& modes, const ChainSpec& spec);

/// J_ij = Omega_i Omega_j sum_m eta(i,m) eta(j,m) / (2 (mu - omega_m)).
CouplingSet coupling_matrix(const NormalModes& modes, const ChainSpec& spec, bool enforce_guard = true);

/// V(i,m) = (eta(i,m) Omega_i)^2 / (8 (mu - omega_m)); fills uniformity.
CouplingSet spin_phonon_shifts(const NormalModes& modes, const ChainSpec& spec, bool enforce_guard = true);

/// Both matrices plus the power-law fits (when n >= 3 and signs allow).
CouplingSet compute_couplings(const NormalModes& modes, const ChainSpec& spec, bool enforce_guard = true);

/// max_i |Vsum_i - mean| / |mean| with Vsum_i = sum_m V(i,m).
double shift_uniformity(const Eigen::MatrixXd& v_matrix);

/// Unweighted least squares of log|J_ij| against log|i-j| over all pairs.
PowerLawFit fit_power_law(const Eigen::MatrixXd& j_matrix);
PowerLawFit fit_power_law(const CouplingSet& coupling);
/// Same fit restricted to the pairs (0, j).
PowerLawFit fit_power_law_first_ion(const Eigen::MatrixXd& j_matrix);

struct AlphaScanPoint {
  double mu;
  double alpha;
};

struct AlphaTuning {
  double mu = 0.0;
  double alpha = 0.0;
  double alpha_min = 0.0;  // achievable range on the monotone bracket
  double alpha_max = 0.0;
  std::vector<AlphaScanPoint> scan;  // monotone bracket, ascending mu
};

/// Geometric scan of mu above the COM mode, from the resonance-guard edge up
/// to twice the COM frequency, truncated at the first non-increase of the
/// fitted alpha.
std::vector<AlphaScanPoint> scan_alpha(const ChainSpec& spec, int points = 160);

/// Bisection on the scanned alpha(mu) bracket. Result alpha is within 1e-4 of
/// the target.
AlphaTuning tune_alpha(const ChainSpec& spec, double target_alpha);

inline constexpr double kAlphaTargetMin = 0.05;
inline constexpr double kAlphaTargetMax = 3.0;

}  // namespace ionsim
