#include "ionsim/couplings.hpp"

#include <cmath>
#include <sstream>

#include "ionsim/linalg.hpp"

namespace ionsim {

namespace {

Eigen::MatrixXd j_from_modes(const NormalModes& modes, const ChainSpec& spec, double mu) {
  const auto n = modes.lamb_dicke.rows();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      double sum = 0.0;
      for (Eigen::Index m = 0; m < modes.lamb_dicke.cols(); ++m)
        sum += modes.lamb_dicke(a, m) * modes.lamb_dicke(b, m) / (2.0 * (mu - modes.mode_freqs(m)));
      j(a, b) = j(b, a) = spec.rabi_freqs[a] * spec.rabi_freqs[b] * sum;
    }
  }
  return j;
}

PowerLawFit fit_pairs(const std::vector<std::pair<double, double>>& dist_coupling) {
  if (dist_coupling.size() < 2) throw FitUndefinedError("fit_power_law: at least two pairs are required");
  int positive = 0, negative = 0;
  for (const auto& [d, j] : dist_coupling) {
    if (j > 0) ++positive;
    else if (j < 0) ++negative;
    else throw FitUndefinedError("fit_power_law: a coupling is exactly zero");
  }
  if (positive && negative) {
    std::ostringstream os;
    os << "fit_power_law: mixed-sign couplings (" << positive << " positive, " << negative << " negative)";
    throw FitUndefinedError(os.str());
  }
  const auto k = static_cast<Eigen::Index>(dist_coupling.size());
  Eigen::MatrixXd design(k, 2);
  Eigen::VectorXd rhs(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = std::log(dist_coupling[i].first);
    rhs(i) = std::log(std::abs(dist_coupling[i].second));
  }
  if (design.col(1).maxCoeff() == design.col(1).minCoeff())
    throw FitUndefinedError("fit_power_law: all pairs share one distance");
  const Eigen::Vector2d coef = design.colPivHouseholderQr().solve(rhs);
  PowerLawFit fit;
  fit.j0 = (positive ? 1.0 : -1.0) * std::exp(coef(0));
  fit.alpha = -coef(1);
  if (!std::isfinite(fit.alpha)) throw FitUndefinedError("fit_power_law: non-finite exponent");
  return fit;
}

}  // namespace

CouplingSet CouplingSet::from_j(const Eigen::MatrixXd& j) {
  if (j.rows() != j.cols()) throw ValidationError("coupling: J matrix must be square");
  CouplingSet c;
  c.j_matrix = 0.5 * (j + j.transpose());
  c.j_matrix.diagonal().setZero();
  c.v_matrix = Eigen::MatrixXd::Zero(j.rows(), j.rows());
  return c;
}

CouplingSet CouplingSet::power_law_chain(int n, double j0, double alpha) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) j(a, b) = j(b, a) = j0 / std::pow(static_cast<double>(b - a), alpha);
  return from_j(j);
}

Eigen::VectorXd resonance_guard(const NormalModes& modes, const ChainSpec& spec) {
  const auto n_modes = modes.lamb_dicke.cols();
  Eigen::VectorXd guard = Eigen::VectorXd::Zero(n_modes);
  for (Eigen::Index m = 0; m < n_modes; ++m)
    for (Eigen::Index i = 0; i < modes.lamb_dicke.rows(); ++i)
      guard(m) = std::max(guard(m), 10.0 * std::abs(modes.lamb_dicke(i, m) * spec.rabi_freqs[i]));
  return guard;
}

void check_resonance_guard(const NormalModes& modes, const ChainSpec& spec) {
  const Eigen::VectorXd guard = resonance_guard(modes, spec);
  for (Eigen::Index m = 0; m < guard.size(); ++m) {
    const double gap = std::abs(spec.mu_detuning - modes.mode_freqs(m));
    if (!(gap > guard(m)) && !(guard(m) == 0.0 && gap > 0.0)) {
      std::ostringstream os;
      os << "detuning too close to mode " << m << " (" << modes.mode_freqs(m) << " Hz): |mu - omega| = " << gap
         << " Hz, guard requires > " << guard(m) << " Hz";
      throw DetuningTooCloseError(os.str(), static_cast<int>(m));
    }
  }
}

CouplingSet coupling_matrix(const NormalModes& modes, const ChainSpec& spec, bool enforce_guard) {
  if (enforce_guard) check_resonance_guard(modes, spec);
  CouplingSet c;
  c.j_matrix = j_from_modes(modes, spec, spec.mu_detuning);
  c.v_matrix = Eigen::MatrixXd::Zero(modes.lamb_dicke.rows(), modes.lamb_dicke.cols());
  return c;
}

double shift_uniformity(const Eigen::MatrixXd& v_matrix) {
  if (v_matrix.size() == 0) return 0.0;
  const Eigen::VectorXd sums = v_matrix.rowwise().sum();
  const double mean = sums.mean();
  if (mean == 0.0) return sums.cwiseAbs().maxCoeff() == 0.0 ? 0.0 : INFINITY;
  return (sums.array() - mean).abs().maxCoeff() / std::abs(mean);
}

CouplingSet spin_phonon_shifts(const NormalModes& modes, const ChainSpec& spec, bool enforce_guard) {
  if (enforce_guard) check_resonance_guard(modes, spec);
  const auto n = modes.lamb_dicke.rows();
  CouplingSet c;
  c.j_matrix = Eigen::MatrixXd::Zero(n, n);
  c.v_matrix.resize(n, modes.lamb_dicke.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index m = 0; m < modes.lamb_dicke.cols(); ++m) {
      const double x = modes.lamb_dicke(i, m) * spec.rabi_freqs[i];
      c.v_matrix(i, m) = x * x / (8.0 * (spec.mu_detuning - modes.mode_freqs(m)));
    }
  }
  c.uniformity = shift_uniformity(c.v_matrix);
  return c;
}

CouplingSet compute_couplings(const NormalModes& modes, const ChainSpec& spec, bool enforce_guard) {
  CouplingSet c = coupling_matrix(modes, spec, enforce_guard);
  const CouplingSet v = spin_phonon_shifts(modes, spec, enforce_guard);
  c.v_matrix = v.v_matrix;
  c.uniformity = v.uniformity;
  if (spec.n_ions >= 3) {
    try {
      c.power_law = fit_power_law(c.j_matrix);
      c.power_law_first_ion = fit_power_law_first_ion(c.j_matrix);
    } catch (const FitUndefinedError&) {
      // Leave the fits empty; mixed-sign patterns are legitimate couplings.
    }
  }
  return c;
}

PowerLawFit fit_power_law(const Eigen::MatrixXd& j) {
  if (j.rows() < 3) throw FitUndefinedError("fit_power_law: requires n >= 3");
  std::vector<std::pair<double, double>> pairs;
  for (Eigen::Index a = 0; a < j.rows(); ++a)
    for (Eigen::Index b = a + 1; b < j.cols(); ++b) pairs.emplace_back(static_cast<double>(b - a), j(a, b));
  return fit_pairs(pairs);
}

PowerLawFit fit_power_law(const CouplingSet& coupling) { return fit_power_law(coupling.j_matrix); }

PowerLawFit fit_power_law_first_ion(const Eigen::MatrixXd& j) {
  if (j.rows() < 3) throw FitUndefinedError("fit_power_law: requires n >= 3");
  std::vector<std::pair<double, double>> pairs;
  for (Eigen::Index b = 1; b < j.cols(); ++b) pairs.emplace_back(static_cast<double>(b), j(0, b));
  return fit_pairs(pairs);
}

std::vector<AlphaScanPoint> scan_alpha(const ChainSpec& spec, int points) {
  const NormalModes modes = transverse_modes(spec);
  if (spec.n_ions < 3) throw FitUndefinedError("tune_alpha: requires n >= 3");
  const Eigen::VectorXd guard = resonance_guard(modes, spec);
  const double com = modes.mode_freqs(0);
  double mu_min = com;
  for (Eigen::Index m = 0; m < guard.size(); ++m) mu_min = std::max(mu_min, modes.mode_freqs(m) + guard(m));
  const double lo = std::max(mu_min - com, 1.0) * (1.0 + 1e-9);
  const double hi = com;
  if (!(hi > lo)) throw AlphaRangeError("tune_alpha: resonance guard leaves no room above the COM mode", 0, 0);

  std::vector<AlphaScanPoint> grid(static_cast<std::size_t>(points));
  std::vector<char> ok(grid.size(), 0);
  parallel_for(grid.size(), [&](std::size_t k) {
    const double frac = static_cast<double>(k) / static_cast<double>(points - 1);
    const double mu = com + lo * std::pow(hi / lo, frac);
    grid[k].mu = mu;
    try {
      grid[k].alpha = fit_power_law(j_from_modes(modes, spec, mu)).alpha;
      ok[k] = 1;
    } catch (const FitUndefinedError&) {
    }
  });
  std::vector<AlphaScanPoint> out;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!ok[k]) break;
    if (!out.empty() && !(grid[k].alpha > out.back().alpha)) break;
    out.push_back(grid[k]);
  }
  if (out.size() < 2) throw AlphaRangeError("tune_alpha: no monotone alpha bracket found", 0, 0);
  return out;
}

AlphaTuning tune_alpha(const ChainSpec& spec, double target) {
  AlphaTuning result;
  result.scan = scan_alpha(spec);
  result.alpha_min = result.scan.front().alpha;
  result.alpha_max = result.scan.back().alpha;
  auto range_error = [&](const char* why) {
    std::ostringstream os;
    os << "tune_alpha: target " << target << " " << why << "; achievable alpha range is [" << result.alpha_min
       << ", " << result.alpha_max << "]";
    return AlphaRangeError(os.str(), result.alpha_min, result.alpha_max);
  };
  if (!(target >= kAlphaTargetMin && target <= kAlphaTargetMax)) throw range_error("outside [0.05, 3]");
  if (target < result.alpha_min || target > result.alpha_max) throw range_error("not reachable");

  std::size_t cell = 0;
  while (result.scan[cell + 1].alpha < target) ++cell;
  const NormalModes modes = transverse_modes(spec);
  double lo = result.scan[cell].mu, hi = result.scan[cell + 1].mu;
  double mu = lo, alpha = result.scan[cell].alpha;
  for (int iter = 0; iter < 200; ++iter) {
    mu = 0.5 * (lo + hi);
    alpha = fit_power_law(j_from_modes(modes, spec, mu)).alpha;
    if (std::abs(alpha - target) < 1e-6) break;
    (alpha < target ? lo : hi) = mu;
  }
  if (!(std::abs(alpha - target) < 1e-4)) throw NumericalError("tune_alpha: bisection did not converge");
  result.mu = mu;
  result.alpha = alpha;
  return result;
}

}  // namespace ionsim
