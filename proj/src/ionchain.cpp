#include "ionsim/ionchain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "ionsim/errors.hpp"

namespace ionsim {

namespace {

constexpr int kNewtonIterationCap = 200;
constexpr double kGradientTolerance = 1e-13;

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Eigen::MatrixXd potential_jacobian(const Eigen::VectorXd& u) {
  const auto n = u.size();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d3 = std::pow(std::abs(u(i) - u(j)), 3);
      jac(i, i) += 2.0 / d3;
      jac(i, j) = -2.0 / d3;
    }
  }
  return jac;
}

bool strictly_increasing(const Eigen::VectorXd& u) {
  for (Eigen::Index i = 1; i < u.size(); ++i)
    if (!(u(i) > u(i - 1))) return false;
  return true;
}

// Laplacian-like Coulomb part of the transverse Hessian.
Eigen::MatrixXd coulomb_laplacian(const Eigen::VectorXd& u) {
  const auto n = u.size();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double c = 1.0 / std::pow(std::abs(u(i) - u(j)), 3);
      lap(i, j) = -c;
      lap(i, i) += c;
    }
  }
  return lap;
}

}  // namespace

ChainSpec default_chain(int n_ions) {
  ChainSpec spec;
  spec.n_ions = n_ions;
  spec.rabi_freqs.assign(static_cast<std::size_t>(std::max(n_ions, 0)), 50.0e3);
  spec.mu_detuning = spec.transverse_com_freq + 60.0e3;
  return spec;
}

void validate(const ChainSpec& spec) {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ValidationError("chain." + field + ": " + what);
  };
  if (spec.n_ions < 1) fail("n_ions", "must be >= 1");
  if (!(spec.axial_freq > 0.0) || !std::isfinite(spec.axial_freq)) fail("axial_freq", "must be > 0");
  if (!(spec.transverse_com_freq > 0.0) || !std::isfinite(spec.transverse_com_freq))
    fail("transverse_com_freq", "must be > 0");
  if (!(spec.ion_mass > 0.0) || !std::isfinite(spec.ion_mass)) fail("ion_mass", "must be > 0");
  if (!(spec.delta_k >= 0.0) || !std::isfinite(spec.delta_k)) fail("delta_k", "must be >= 0");
  if (!(spec.mu_detuning > 0.0) || !std::isfinite(spec.mu_detuning)) fail("mu_detuning", "must be > 0");
  if (!std::isfinite(spec.d_field)) fail("d_field", "must be finite");
  if (spec.rabi_freqs.size() != static_cast<std::size_t>(spec.n_ions))
    fail("rabi_freqs", "length must equal n_ions");
  for (double r : spec.rabi_freqs)
    if (!(r >= 0.0) || !std::isfinite(r)) fail("rabi_freqs", "entries must be >= 0");
  if (!spec.site_shifts.empty() && spec.site_shifts.size() != static_cast<std::size_t>(spec.n_ions))
    fail("site_shifts", "must be empty or have length n_ions");
  for (const auto& s : spec.site_shifts)
    if (!std::isfinite(s.linear_hz) || !std::isfinite(s.quadratic_hz)) fail("site_shifts", "must be finite");

  const double crit = critical_anisotropy(spec.n_ions);
  if (!(spec.anisotropy() > crit)) {
    std::ostringstream os;
    os << "linear chain unstable: transverse/axial anisotropy " << spec.anisotropy()
       << " must exceed the critical value " << crit << " for " << spec.n_ions << " ions";
    throw PhysicsError(os.str());
  }
}

Eigen::VectorXd potential_gradient(const Eigen::VectorXd& u) {
  const auto n = u.size();
  Eigen::VectorXd g = u;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = u(i) - u(j);
      g(i) -= (d > 0 ? 1.0 : -1.0) / (d * d);
    }
  }
  return g;
}

Eigen::VectorXd equilibrium_positions(int n_ions) {
  if (n_ions < 1) throw ValidationError("equilibrium_positions: n_ions must be >= 1");
  const Eigen::Index n = n_ions;
  if (n == 1) return Eigen::VectorXd::Zero(1);

  Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(n, -1.0, 1.0) * std::pow(static_cast<double>(n), 0.56);
  Eigen::VectorXd g = potential_gradient(u);

  for (int iter = 0; iter < kNewtonIterationCap; ++iter) {
    if (max_abs(g) < kGradientTolerance) break;
    const Eigen::VectorXd step = potential_jacobian(u).ldlt().solve(-g);
    double damping = 1.0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k, damping *= 0.5) {
      Eigen::VectorXd trial = u + damping * step;
      if (!strictly_increasing(trial)) continue;
      Eigen::VectorXd g_trial = potential_gradient(trial);
      if (g_trial.norm() < g.norm()) {
        u = std::move(trial);
        g = std::move(g_trial);
        accepted = true;
        break;
      }
    }
    // No descent possible: we are at the floating-point floor.
    if (!accepted) break;
  }

  // Mirror symmetry is exact for the true stationary point.
  Eigen::VectorXd sym = 0.5 * (u - u.reverse());
  if (potential_gradient(sym).norm() <= g.norm()) {
    u = sym;
    g = potential_gradient(u);
  }
  if (!(max_abs(g) < 1e-12)) {
    std::ostringstream os;
    os << "equilibrium_positions: Newton solver failed for " << n_ions << " ions (gradient " << max_abs(g)
       << " after " << kNewtonIterationCap << " iterations)";
    throw NumericalError(os.str());
  }
  return u;
}

Eigen::MatrixXd transverse_hessian(const Eigen::VectorXd& positions, double anisotropy) {
  const auto n = positions.size();
  return anisotropy * anisotropy * Eigen::MatrixXd::Identity(n, n) - coulomb_laplacian(positions);
}

double critical_anisotropy(int n_ions) {
  if (n_ions <= 1) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(coulomb_laplacian(equilibrium_positions(n_ions)),
                                                    Eigen::EigenvaluesOnly);
  return std::sqrt(es.eigenvalues().maxCoeff());
}

NormalModes transverse_modes(const ChainSpec& spec) {
  validate(spec);
  NormalModes modes;
  modes.equilibrium_positions = equilibrium_positions(spec.n_ions);
  const Eigen::MatrixXd hess = transverse_hessian(modes.equilibrium_positions, spec.anisotropy());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
  if (es.info() != Eigen::Success) throw NumericalError("transverse_modes: eigensolver failed");

  const Eigen::Index n = spec.n_ions;
  // Eigen returns ascending eigenvalues; reverse for COM-first ordering.
  modes.eigenvalues = es.eigenvalues().reverse();
  modes.mode_matrix = es.eigenvectors().rowwise().reverse();

  if (!(modes.eigenvalues(n - 1) > 0.0)) {
    std::ostringstream os;
    os << "transverse_modes: imaginary mode frequency (zigzag instability) at anisotropy "
       << spec.anisotropy() << "; critical anisotropy is " << critical_anisotropy(spec.n_ions);
    throw PhysicsError(os.str());
  }

  for (Eigen::Index m = 0; m < n; ++m) {
    auto col = modes.mode_matrix.col(m);
    const double peak = col.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(col(i)) >= peak - 1e-9) {
        if (col(i) < 0) col *= -1.0;
        break;
      }
    }
  }

  modes.mode_freqs = spec.axial_freq * modes.eigenvalues.cwiseSqrt();
  modes.lamb_dicke = lamb_dicke_factors(modes, spec);

  const double peak_eta = modes.lamb_dicke.size() ? modes.lamb_dicke.cwiseAbs().maxCoeff() : 0.0;
  if (peak_eta > kLambDickeWarnThreshold) {
    std::ostringstream os;
    os << "max |eta| = " << peak_eta << " exceeds the Lamb-Dicke regime boundary " << kLambDickeWarnThreshold;
    modes.warnings.push_back(os.str());
  }
  return modes;
}

Eigen::MatrixXd lamb_dicke_factors(const NormalModes& modes, const ChainSpec& spec) {
  using constants::kPi;
  const auto n = modes.mode_matrix.rows();
  Eigen::MatrixXd eta(n, modes.mode_matrix.cols());
  for (Eigen::Index m = 0; m < eta.cols(); ++m) {
    const double scale =
        spec.delta_k * std::sqrt(constants::kPlanck / (8.0 * kPi * kPi * spec.ion_mass * modes.mode_freqs(m)));
    eta.col(m) = modes.mode_matrix.col(m) * scale;
  }
  return eta;
}

}  // namespace ionsim
