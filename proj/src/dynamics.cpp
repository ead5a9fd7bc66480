#include "ionsim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "ionsim/errors.hpp"

namespace ionsim {

namespace {

constexpr double kTwoPi = 2.0 * constants::kPi;

using Triplet = Eigen::Triplet<Complex>;

LinearOp from_triplets(std::size_t dim, const std::vector<Triplet>& trips, bool hermitian) {
  SparseMatrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return LinearOp(std::move(m), hermitian);
}

double max_row_sum(const SparseMatrix& m) {
  double worst = 0.0;
  for (int r = 0; r < m.outerSize(); ++r) {
    double s = 0.0;
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) s += std::abs(it.value());
    worst = std::max(worst, s);
  }
  return worst;
}

void require_normalized(const CVector& v, const char* where) {
  if (std::abs(v.norm() - 1.0) > 1e-8) {
    std::ostringstream os;
    os << where << ": state is not normalized (norm " << v.norm() << ")";
    throw ValidationError(os.str());
  }
}

// Lowest eigenpair of B^dagger H B, embedded back through B.
std::pair<double, CVector> sector_ground(const CMatrix& projected, const CMatrix& basis) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(projected);
  if (es.info() != Eigen::Success) throw NumericalError("sector eigensolver failed");
  return {es.eigenvalues()(0), basis * es.eigenvectors().col(0)};
}

CMatrix project(const LinearOp& h, const CMatrix& basis) { return basis.adjoint() * (h.matrix() * basis); }

int sector_of(const SpinState& s) {
  std::map<int, double> weight;
  const Eigen::VectorXd p = s.populations();
  for (std::size_t i = 0; i < s.basis().dim(); ++i) weight[s.basis().sz_total(i)] += p(static_cast<Eigen::Index>(i));
  int best = 0;
  double best_w = -1.0;
  for (const auto& [sz, w] : weight)
    if (w > best_w) best = sz, best_w = w;
  return best;
}

std::optional<int> eigen_sign(double expectation) {
  if (std::abs(expectation - 1.0) < 1e-9) return 1;
  if (std::abs(expectation + 1.0) < 1e-9) return -1;
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ramps

double RampProfile::value(double t) const {
  switch (shape) {
    case Shape::exponential:
      return d_initial * std::exp(-t / time_constant);
    case Shape::linear: {
      const double x = std::clamp(t / duration, 0.0, 1.0);
      return d_initial + (d_final - d_initial) * x;
    }
    case Shape::table: {
      if (t <= table.front().first) return table.front().second;
      if (t >= table.back().first) return table.back().second;
      auto hi = std::upper_bound(table.begin(), table.end(), t,
                                 [](double x, const std::pair<double, double>& p) { return x < p.first; });
      auto lo = hi - 1;
      const double w = (t - lo->first) / (hi->first - lo->first);
      return lo->second + w * (hi->second - lo->second);
    }
  }
  return 0.0;
}

void RampProfile::validate() const {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw ValidationError("ramp.duration: must be > 0");
  if (!std::isfinite(d_initial)) throw ValidationError("ramp.d_initial: must be finite");
  if (shape == Shape::exponential && !(time_constant > 0.0))
    throw ValidationError("ramp.time_constant: must be > 0 for an exponential ramp");
  if (shape == Shape::linear && !std::isfinite(d_final)) throw ValidationError("ramp.d_final: must be finite");
  if (shape == Shape::table) {
    if (table.size() < 2) throw ValidationError("ramp.table: needs at least two (t, D) points");
    for (std::size_t k = 0; k < table.size(); ++k) {
      if (!std::isfinite(table[k].first) || !std::isfinite(table[k].second))
        throw ValidationError("ramp.table: entries must be finite");
      if (k > 0 && !(table[k].first > table[k - 1].first))
        throw ValidationError("ramp.table: times must be strictly increasing");
    }
  }
}

RampProfile RampProfile::standard() { return RampProfile{}; }

// ---------------------------------------------------------------------------
// Effective Hamiltonian

namespace {

LinearOp sz2_total(const Basis& basis) {
  std::vector<Triplet> trips;
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    double v = 0.0;
    for (int i = 0; i < basis.n_sites(); ++i) {
      const int z = basis.digit(s, i) - 1;
      v += z * z;
    }
    if (v != 0.0) trips.emplace_back(static_cast<int>(s), static_cast<int>(s), v);
  }
  return from_triplets(basis.dim(), trips, true);
}

// sum_i (a_i S_z^i + b_i (S_z^i)^2), diagonal.
LinearOp diagonal_sz_terms(const Basis& basis, const std::vector<double>& lin, const std::vector<double>& quad) {
  std::vector<Triplet> trips;
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    double v = 0.0;
    for (int i = 0; i < basis.n_sites(); ++i) {
      const int z = basis.digit(s, i) - 1;
      v += lin[static_cast<std::size_t>(i)] * z + quad[static_cast<std::size_t>(i)] * z * z;
    }
    if (v != 0.0) trips.emplace_back(static_cast<int>(s), static_cast<int>(s), v);
  }
  return from_triplets(basis.dim(), trips, true);
}

}  // namespace

EffectiveHamiltonian::EffectiveHamiltonian(BasisPtr basis, LinearOp xy, LinearOp v, LinearOp shifts, double d_field)
    : basis_(std::move(basis)),
      xy_(std::move(xy)),
      v_(std::move(v)),
      shifts_(std::move(shifts)),
      sz2_(sz2_total(*basis_)),
      d_field_(d_field) {
  for (const LinearOp* op : {&xy_, &v_, &shifts_})
    if (op->dim() != basis_->dim() || !op->hermitian())
      throw ValidationError("EffectiveHamiltonian: parts must be hermitian and match the basis dimension");
}

LinearOp EffectiveHamiltonian::with_field(double d) const { return xy_ + v_ + shifts_ + d * sz2_; }

LinearOp EffectiveHamiltonian::at(double t) const { return with_field(d_at(t)); }

EffectiveHamiltonian EffectiveHamiltonian::with_ramp(RampProfile ramp) const {
  ramp.validate();
  EffectiveHamiltonian out = *this;
  out.d_field_ = ramp.value(0.0);
  out.ramp_ = std::move(ramp);
  return out;
}

EffectiveHamiltonian EffectiveHamiltonian::with_rabi_scale(double factor) const {
  EffectiveHamiltonian out = *this;
  out.xy_ = (factor * factor) * xy_;
  out.v_ = (factor * factor) * v_;
  return out;
}

LinearOp xy_operator(const Basis& basis, const Eigen::MatrixXd& j) {
  const int n = basis.n_sites();
  if (j.rows() != n || j.cols() != n) throw ValidationError("xy_operator: J matrix does not match the site count");
  std::vector<Triplet> trips;
  std::vector<int> d;
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    d = basis.digits(s);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        if (a == b) continue;
        const double coupling = a < b ? j(a, b) : j(b, a);
        if (coupling == 0.0) continue;
        // S_+^a S_-^b; each ladder factor is sqrt2 where allowed.
        if (d[a] < 2 && d[b] > 0) {
          const std::size_t target = s + basis.stride(a) - basis.stride(b);
          trips.emplace_back(static_cast<int>(target), static_cast<int>(s), 0.5 * coupling);
        }
      }
    }
  }
  return from_triplets(basis.dim(), trips, true);
}

EffectiveHamiltonian build_effective(const CouplingSet& coupling, const ChainSpec& spec, EffectiveOptions opts) {
  if (coupling.n_sites() != spec.n_ions)
    throw ValidationError("build_effective: coupling dimension does not match n_ions");
  if (!(opts.n_bar >= 0.0)) throw ValidationError("build_effective: n_bar must be >= 0");
  const auto n = static_cast<std::size_t>(spec.n_ions);
  BasisPtr basis = make_basis(spec.n_ions);
  LinearOp xy = xy_operator(*basis, coupling.j_matrix);

  LinearOp v = LinearOp::zero(basis->dim());
  if (opts.include_v_terms && coupling.v_matrix.size() > 0) {
    if (static_cast<std::size_t>(coupling.v_matrix.rows()) != n)
      throw ValidationError("build_effective: V matrix does not match n_ions");
    std::vector<double> lin(n), quad(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double vsum = coupling.v_matrix.row(static_cast<Eigen::Index>(i)).sum();
      lin[i] = (2.0 * opts.n_bar + 1.0) * vsum;
      quad[i] = -vsum;
    }
    v = diagonal_sz_terms(*basis, lin, quad);
  }

  LinearOp shifts = LinearOp::zero(basis->dim());
  if (!spec.site_shifts.empty()) {
    if (spec.site_shifts.size() != n) throw ValidationError("build_effective: site_shifts length must equal n_ions");
    std::vector<double> lin(n), quad(n);
    for (std::size_t i = 0; i < n; ++i) {
      lin[i] = spec.site_shifts[i].linear_hz;
      quad[i] = spec.site_shifts[i].quadratic_hz;
    }
    shifts = diagonal_sz_terms(*basis, lin, quad);
  }
  return EffectiveHamiltonian(basis, std::move(xy), std::move(v), std::move(shifts), spec.d_field);
}

// ---------------------------------------------------------------------------
// Full Hamiltonian

FullHamiltonian::FullHamiltonian(BasisPtr basis, int n_modes, int n_max, std::vector<LinearOp> drive,
                                 Eigen::VectorXd detunings, PhononInit init)
    : basis_(std::move(basis)),
      n_modes_(n_modes),
      n_max_(n_max),
      drive_(std::move(drive)),
      detunings_(std::move(detunings)),
      init_(init) {
  phonon_dim_ = 1;
  for (int m = 0; m < n_modes_; ++m) phonon_dim_ *= static_cast<std::size_t>(n_max_ + 1);
  std::vector<Triplet> trips;
  for (std::size_t s = 0; s < spin_dim(); ++s) {
    for (std::size_t p = 0; p < phonon_dim_; ++p) {
      const auto occ = phonon_occupations(p);
      double e = 0.0;
      for (int m = 0; m < n_modes_; ++m) e += detunings_(m) * occ[static_cast<std::size_t>(m)];
      if (e != 0.0) trips.emplace_back(static_cast<int>(s * phonon_dim_ + p), static_cast<int>(s * phonon_dim_ + p), e);
    }
  }
  number_weighted_ = from_triplets(dim(), trips, true);
}

LinearOp FullHamiltonian::at(double t) const {
  SparseMatrix sum(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(dim()));
  for (int m = 0; m < n_modes_; ++m) {
    const Complex phase = std::polar(1.0, kTwoPi * detunings_(m) * t);
    const SparseMatrix term = phase * drive_[static_cast<std::size_t>(m)].matrix();
    sum += term;
    sum += SparseMatrix(term.adjoint());
  }
  return LinearOp(std::move(sum), true);
}

LinearOp FullHamiltonian::rotating_frame() const {
  SparseMatrix sum = -number_weighted_.matrix();
  for (const auto& d : drive_) {
    sum += d.matrix();
    sum += SparseMatrix(d.matrix().adjoint());
  }
  return LinearOp(std::move(sum), true);
}

CVector FullHamiltonian::to_interaction_picture(const CVector& psi, double t) const {
  CVector out = psi;
  const auto& diag = number_weighted_.matrix();
  for (int r = 0; r < diag.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(diag, r); it; ++it) out(r) *= std::polar(1.0, -kTwoPi * it.value().real() * t);
  return out;
}

std::vector<int> FullHamiltonian::phonon_occupations(std::size_t p) const {
  std::vector<int> occ(static_cast<std::size_t>(n_modes_));
  for (int m = n_modes_ - 1; m >= 0; --m) {
    occ[static_cast<std::size_t>(m)] = static_cast<int>(p % static_cast<std::size_t>(n_max_ + 1));
    p /= static_cast<std::size_t>(n_max_ + 1);
  }
  return occ;
}

std::size_t FullHamiltonian::full_index(std::size_t spin_index, std::span<const int> occ) const {
  if (occ.size() != static_cast<std::size_t>(n_modes_)) throw ValidationError("full_index: wrong occupation count");
  std::size_t p = 0;
  for (int k : occ) {
    if (k < 0 || k > n_max_) throw ValidationError("full_index: occupation outside the truncation");
    p = p * static_cast<std::size_t>(n_max_ + 1) + static_cast<std::size_t>(k);
  }
  return spin_index * phonon_dim_ + p;
}

CVector FullHamiltonian::product_state(const CVector& spin, std::span<const int> occ) const {
  if (static_cast<std::size_t>(spin.size()) != spin_dim()) throw ValidationError("product_state: spin dimension");
  CVector out = CVector::Zero(static_cast<Eigen::Index>(dim()));
  for (std::size_t s = 0; s < spin_dim(); ++s) out(static_cast<Eigen::Index>(full_index(s, occ))) = spin(s);
  return out;
}

std::vector<std::pair<std::vector<int>, double>> FullHamiltonian::initial_fock_mixture() const {
  std::vector<std::pair<std::vector<int>, double>> out;
  if (init_.kind == PhononInit::Kind::ground || init_.n_bar == 0.0) {
    out.emplace_back(std::vector<int>(static_cast<std::size_t>(n_modes_), 0), 1.0);
    return out;
  }
  std::vector<double> level(static_cast<std::size_t>(n_max_ + 1));
  const double nb = init_.n_bar;
  for (int k = 0; k <= n_max_; ++k) level[static_cast<std::size_t>(k)] = std::pow(nb, k) / std::pow(nb + 1.0, k + 1);
  const double norm = std::accumulate(level.begin(), level.end(), 0.0);
  for (auto& w : level) w /= norm;
  for (std::size_t p = 0; p < phonon_dim_; ++p) {
    auto occ = phonon_occupations(p);
    double w = 1.0;
    for (int k : occ) w *= level[static_cast<std::size_t>(k)];
    out.emplace_back(std::move(occ), w);
  }
  return out;
}

Eigen::VectorXd FullHamiltonian::spin_populations(const CVector& psi) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spin_dim()));
  for (std::size_t s = 0; s < spin_dim(); ++s)
    for (std::size_t p = 0; p < phonon_dim_; ++p)
      out(static_cast<Eigen::Index>(s)) += std::norm(psi(static_cast<Eigen::Index>(s * phonon_dim_ + p)));
  return out;
}

double FullHamiltonian::top_level_population(const CVector& psi) const {
  double total = 0.0;
  for (std::size_t p = 0; p < phonon_dim_; ++p) {
    const auto occ = phonon_occupations(p);
    if (std::find(occ.begin(), occ.end(), n_max_) == occ.end()) continue;
    for (std::size_t s = 0; s < spin_dim(); ++s) total += std::norm(psi(static_cast<Eigen::Index>(s * phonon_dim_ + p)));
  }
  return total;
}

FullHamiltonian build_full(const NormalModes& modes, const ChainSpec& spec, int n_max, PhononInit init) {
  validate(spec);
  if (n_max < 1) throw ValidationError("build_full: n_max must be >= 1");
  if (init.kind == PhononInit::Kind::thermal && !(init.n_bar >= 0.0))
    throw ValidationError("build_full: thermal n_bar must be >= 0");
  const int n = spec.n_ions;
  const auto n_modes = static_cast<int>(modes.mode_freqs.size());
  BasisPtr basis = make_basis(n);
  std::size_t phonon_dim = 1;
  for (int m = 0; m < n_modes; ++m) {
    phonon_dim *= static_cast<std::size_t>(n_max + 1);
    if (phonon_dim * basis->dim() > kFullDimensionCap) break;
  }
  if (phonon_dim * basis->dim() > kFullDimensionCap) {
    std::ostringstream os;
    os << "build_full: dimension 3^" << n << " x " << (n_max + 1) << "^" << n_modes << " exceeds the cap "
       << kFullDimensionCap << "; use a smaller n_max";
    throw ValidationError(os.str());
  }

  Eigen::VectorXd detunings(n_modes);
  for (int m = 0; m < n_modes; ++m) detunings(m) = spec.mu_detuning - modes.mode_freqs(m);

  std::size_t stride_m = phonon_dim;
  std::vector<LinearOp> drive;
  for (int m = 0; m < n_modes; ++m) {
    stride_m /= static_cast<std::size_t>(n_max + 1);
    std::vector<Triplet> trips;
    for (std::size_t s = 0; s < basis->dim(); ++s) {
      for (int i = 0; i < n; ++i) {
        const int d = basis->digit(s, i);
        if (d == 2) continue;
        const Complex c(0.0, -modes.lamb_dicke(i, m) * spec.rabi_freqs[static_cast<std::size_t>(i)] / (2.0 * std::sqrt(2.0)));
        if (c == Complex(0.0)) continue;
        const std::size_t s_out = s + basis->stride(i);
        for (std::size_t p = 0; p < phonon_dim; ++p) {
          const int k = static_cast<int>((p / stride_m) % static_cast<std::size_t>(n_max + 1));
          if (k == 0) continue;
          // S_+ a_m: sqrt2 ladder factor times sqrt(k).
          trips.emplace_back(static_cast<int>(s_out * phonon_dim + p - stride_m), static_cast<int>(s * phonon_dim + p),
                             c * std::sqrt(2.0) * std::sqrt(static_cast<double>(k)));
        }
      }
    }
    drive.push_back(from_triplets(basis->dim() * phonon_dim, trips, false));
  }
  return FullHamiltonian(basis, n_modes, n_max, std::move(drive), std::move(detunings), init);
}

// ---------------------------------------------------------------------------
// Evolution

SpinState evolve(const SpinState& psi, const LinearOp& h, double duration) {
  require_normalized(psi.amplitudes(), "evolve");
  if (h.dim() != psi.basis().dim()) throw ValidationError("evolve: Hamiltonian dimension mismatch");
  if (!h.hermitian()) throw ValidationError("evolve: Hamiltonian is not hermitian");
  return SpinState(psi.basis_ptr(), propagate(h, psi.amplitudes(), duration));
}

namespace {

CVector scheme_step(const std::function<LinearOp(double)>& h, const CVector& v, double t, double dt, StepScheme s) {
  if (s == StepScheme::midpoint) return propagate(h(t + 0.5 * dt), v, dt);
  const double r3 = std::sqrt(3.0);
  const double c1 = 0.5 - r3 / 6.0, c2 = 0.5 + r3 / 6.0;
  const double a1 = (3.0 - 2.0 * r3) / 12.0, a2 = (3.0 + 2.0 * r3) / 12.0;
  const LinearOp h1 = h(t + c1 * dt), h2 = h(t + c2 * dt);
  CVector w = propagate(a2 * h1 + a1 * h2, v, dt);
  return propagate(a1 * h1 + a2 * h2, w, dt);
}

}  // namespace

EvolutionReport evolve_time_dependent(const CVector& psi, const std::function<LinearOp(double)>& h, double t0,
                                      double t1, const TimeDependentOptions& opts) {
  require_normalized(psi, "evolve_time_dependent");
  EvolutionReport rep;
  rep.state = psi;
  const double total = t1 - t0;
  if (total < 0.0) throw ValidationError("evolve_time_dependent: t1 must be >= t0");
  if (total == 0.0) return rep;
  if (!(opts.tolerance > 0.0)) throw ValidationError("evolve_time_dependent: tolerance must be > 0");

  const int order = opts.scheme == StepScheme::midpoint ? 2 : 4;
  const double richardson = std::pow(2.0, order) - 1.0;
  double dt = opts.initial_step;
  if (!(dt > 0.0)) {
    const double norm = std::max(max_row_sum(h(t0).matrix()), 1e-300);
    dt = std::min(total, 0.05 / (kTwoPi * norm));
  }
  double t = t0;
  while (t < t1) {
    const bool last = t + dt >= t1;
    const double step = last ? t1 - t : dt;
    const CVector coarse = scheme_step(h, rep.state, t, step, opts.scheme);
    const CVector half = scheme_step(h, rep.state, t, 0.5 * step, opts.scheme);
    const CVector fine = scheme_step(h, half, t + 0.5 * step, 0.5 * step, opts.scheme);
    const double err = (fine - coarse).norm() / richardson;
    const double allowed = opts.tolerance * step / total;
    if (err <= allowed) {
      rep.state = fine;
      rep.error_estimate += err;
      ++rep.accepted_steps;
      t = last ? t1 : t + step;
    } else {
      ++rep.rejected_steps;
    }
    const double factor = err > 0.0 ? 0.9 * std::pow(allowed / err, 1.0 / (order + 1)) : 2.0;
    dt = step * std::clamp(factor, 0.2, 2.0);
    if (rep.accepted_steps + rep.rejected_steps > opts.max_steps || (t < t1 && dt < opts.min_step)) {
      std::ostringstream os;
      os << "evolve_time_dependent: step control failed at t = " << t << " s (step " << dt
         << " s, achieved local error " << err << " against " << allowed << ")";
      throw NumericalError(os.str());
    }
  }
  return rep;
}

SpinState evolve(const SpinState& psi, const EffectiveHamiltonian& h, double duration,
                 const TimeDependentOptions& opts) {
  if (!h.time_profile()) return evolve(psi, h.static_op(), duration);
  auto gen = [&h](double t) { return h.at(t); };
  return SpinState(psi.basis_ptr(), evolve_time_dependent(psi.amplitudes(), gen, 0.0, duration, opts).state);
}

std::vector<StateSample> evolve_trajectory(const SpinState& psi, const LinearOp& h, std::span<const double> times) {
  require_normalized(psi.amplitudes(), "evolve_trajectory");
  const Spectrum spectrum(h);
  std::vector<StateSample> out(times.size());
  parallel_for(times.size(), [&](std::size_t k) {
    const CVector v = spectrum.evolve(psi.amplitudes(), times[k]);
    out[k].time = times[k];
    out[k].populations = v.cwiseAbs2();
    out[k].norm = v.norm();
    out[k].energy = v.dot(h.apply(v)).real();
  });
  return out;
}

// ---------------------------------------------------------------------------
// Spectra

GroundState ground_state(const LinearOp& h, const BasisPtr& basis, std::optional<int> sz) {
  if (h.dim() != basis->dim()) throw ValidationError("ground_state: dimension mismatch");
  std::vector<std::size_t> subset;
  if (sz) {
    subset = basis->sector(*sz);
  } else {
    subset.resize(basis->dim());
    std::iota(subset.begin(), subset.end(), 0);
  }
  if (subset.empty()) throw ValidationError("ground_state: empty S_z sector");
  const int count = static_cast<int>(std::min<std::size_t>(subset.size(), 64));
  const LowestEigen low = lowest_eigenpairs(h, subset, count);

  GroundState gs;
  gs.energy = low.energies(0);
  double scale = 0.0;
  for (Eigen::Index k = 0; k < low.energies.size(); ++k) scale = std::max(scale, std::abs(low.energies(k)));
  if (scale == 0.0) scale = 1.0;
  Eigen::Index k = 0;
  for (; k < low.energies.size(); ++k) {
    if (low.energies(k) - gs.energy > kDegeneracyTolerance * scale) break;
    gs.multiplet.emplace_back(basis, low.vectors.col(k));
  }
  gs.degenerate = gs.multiplet.size() > 1;
  gs.gap = k < low.energies.size() ? low.energies(k) - gs.energy : 0.0;
  return gs;
}

// ---------------------------------------------------------------------------
// Symmetry sectors

std::vector<SymmetrySector> symmetry_sectors(const Basis& basis, int sz) {
  const auto members = basis.sector(sz);
  const int n = basis.n_sites();
  const bool with_rotation = sz == 0;
  auto invert = [&](std::size_t s) {
    auto d = basis.digits(s);
    std::reverse(d.begin(), d.end());
    return basis.index_of(d);
  };
  auto rotate = [&](std::size_t s) {
    auto d = basis.digits(s);
    for (auto& x : d) x = 2 - x;
    return basis.index_of(d);
  };
  (void)n;

  std::vector<std::pair<int, int>> chars;
  if (with_rotation) chars = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  else chars = {{1, 0}, {-1, 0}};

  std::vector<std::vector<CVector>> columns(chars.size());
  std::vector<char> seen(basis.dim(), 0);
  for (std::size_t s : members) {
    if (seen[s]) continue;
    const std::size_t ps = invert(s);
    const std::size_t rs = with_rotation ? rotate(s) : s;
    const std::size_t prs = with_rotation ? invert(rs) : ps;
    seen[s] = seen[ps] = seen[rs] = seen[prs] = 1;
    for (std::size_t c = 0; c < chars.size(); ++c) {
      const auto [p, r] = chars[c];
      CVector v = CVector::Zero(static_cast<Eigen::Index>(basis.dim()));
      v(static_cast<Eigen::Index>(s)) += 1.0;
      v(static_cast<Eigen::Index>(ps)) += p;
      if (with_rotation) {
        v(static_cast<Eigen::Index>(rs)) += r;
        v(static_cast<Eigen::Index>(prs)) += p * r;
      }
      const double norm = v.norm();
      if (norm > 1e-12) columns[c].push_back(v / norm);
    }
  }
  std::vector<SymmetrySector> out;
  for (std::size_t c = 0; c < chars.size(); ++c) {
    if (columns[c].empty()) continue;
    SymmetrySector sec{chars[c].first, chars[c].second, CMatrix(basis.dim(), columns[c].size())};
    for (std::size_t k = 0; k < columns[c].size(); ++k) sec.basis.col(static_cast<Eigen::Index>(k)) = columns[c][k];
    out.push_back(std::move(sec));
  }
  return out;
}

SymmetryReport symmetry_diagnosis(const EffectiveHamiltonian& h, const SpinState& state, std::span<const double> d_grid) {
  const Basis& basis = *h.basis();
  if (!(state.basis() == basis)) throw ValidationError("symmetry_diagnosis: state basis mismatch");
  SymmetryReport rep;
  const LinearOp inv = inversion_op(basis);
  const LinearOp rot = rotation_pi_sx_op(basis);
  const LinearOp fixed = h.xy_part() + h.v_part() + h.shift_part();
  rep.inversion_commutator = std::max(commutator_max_norm(inv, fixed), commutator_max_norm(inv, h.sz2_sum()));
  rep.rotation_commutator = std::max(commutator_max_norm(rot, fixed), commutator_max_norm(rot, h.sz2_sum()));
  const double scale = std::max(1.0, max_row_sum(fixed.matrix()));
  rep.mirror_symmetric = rep.inversion_commutator < 1e-10 * scale && rep.rotation_commutator < 1e-10 * scale;

  rep.inversion_expectation = state.expectation(inv).real();
  rep.rotation_expectation = state.expectation(rot).real();
  rep.inversion_eigenvalue = eigen_sign(rep.inversion_expectation);
  rep.rotation_eigenvalue = eigen_sign(rep.rotation_expectation);

  const int sz = sector_of(state);
  const auto sectors = symmetry_sectors(basis, sz);
  std::vector<CMatrix> fixed_proj, field_proj;
  for (const auto& sec : sectors) {
    rep.sectors.emplace_back(sec.inversion, sec.rotation);
    fixed_proj.push_back(project(fixed, sec.basis));
    field_proj.push_back(project(h.sz2_sum(), sec.basis));
  }
  if (sz != 0) {
    rep.symmetric_sector = {1, 0};
    rep.antisymmetric_sector = {-1, 0};
  }

  for (std::size_t a = 0; a < sectors.size(); ++a)
    for (std::size_t b = 0; b < sectors.size(); ++b) {
      if (a == b) continue;
      const CMatrix cross_fixed = sectors[a].basis.adjoint() * (fixed.matrix() * sectors[b].basis);
      const CMatrix cross_field = sectors[a].basis.adjoint() * (h.sz2_sum().matrix() * sectors[b].basis);
      for (double d : d_grid)
        rep.max_inter_sector_coupling =
            std::max(rep.max_inter_sector_coupling, (cross_fixed + d * cross_field).cwiseAbs().maxCoeff());
      if (d_grid.empty())
        rep.max_inter_sector_coupling = std::max(
            rep.max_inter_sector_coupling, (cross_fixed + h.d_field() * cross_field).cwiseAbs().maxCoeff());
    }

  rep.sweep.resize(d_grid.size());
  parallel_for(d_grid.size(), [&](std::size_t k) {
    rep.sweep[k].d_field = d_grid[k];
    for (std::size_t s = 0; s < sectors.size(); ++s) {
      Eigen::SelfAdjointEigenSolver<CMatrix> es(fixed_proj[s] + d_grid[k] * field_proj[s], Eigen::EigenvaluesOnly);
      rep.sweep[k].sector_ground.push_back(es.eigenvalues()(0));
    }
  });

  auto find_sector = [&](std::pair<int, int> key) -> std::optional<std::size_t> {
    for (std::size_t s = 0; s < rep.sectors.size(); ++s)
      if (rep.sectors[s] == key) return s;
    return std::nullopt;
  };
  const auto sym = find_sector(rep.symmetric_sector), anti = find_sector(rep.antisymmetric_sector);
  if (sym && anti && d_grid.size() >= 2) {
    auto diff = [&](double d) {
      Eigen::SelfAdjointEigenSolver<CMatrix> a(fixed_proj[*sym] + d * field_proj[*sym], Eigen::EigenvaluesOnly);
      Eigen::SelfAdjointEigenSolver<CMatrix> b(fixed_proj[*anti] + d * field_proj[*anti], Eigen::EigenvaluesOnly);
      return a.eigenvalues()(0) - b.eigenvalues()(0);
    };
    for (std::size_t k = 0; k + 1 < d_grid.size(); ++k) {
      const double f0 = rep.sweep[k].sector_ground[*sym] - rep.sweep[k].sector_ground[*anti];
      const double f1 = rep.sweep[k + 1].sector_ground[*sym] - rep.sweep[k + 1].sector_ground[*anti];
      if (f0 == 0.0) {
        rep.crossing_d = d_grid[k];
        break;
      }
      if ((f0 < 0.0) != (f1 < 0.0) && f1 != 0.0) {
        double lo = d_grid[k], hi = d_grid[k + 1], flo = f0;
        for (int it = 0; it < 100; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double fm = diff(mid);
          if ((fm < 0.0) == (flo < 0.0)) lo = mid, flo = fm;
          else hi = mid;
        }
        rep.crossing_d = 0.5 * (lo + hi);
        break;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Adiabatic preparation

AdiabaticResult adiabatic_prepare(const EffectiveHamiltonian& h, const AdiabaticOptions& opts) {
  if (!h.time_profile()) throw ValidationError("adiabatic_prepare: Hamiltonian has no ramp");
  if (opts.samples < 2) throw ValidationError("adiabatic_prepare: at least two samples are required");
  const RampProfile& ramp = *h.time_profile();
  const BasisPtr& basis = h.basis();
  AdiabaticResult res{basis->sector(0), {}, SpinState(basis, CVector::Zero(basis->dim())),
                      SpinState(basis, CVector::Zero(basis->dim()))};

  const GroundState start = ground_state(h.at(0.0), basis, 0);
  res.initial = start.multiplet.front();
  {
    std::vector<int> zeros(static_cast<std::size_t>(basis->n_sites()), 1);
    res.initial_all_zero_overlap = std::norm(res.initial.amplitudes()(static_cast<Eigen::Index>(basis->index_of(zeros))));
  }

  // Tracked symmetry sector: the one carrying the start state.
  const LinearOp inv = inversion_op(*basis), rot = rotation_pi_sx_op(*basis);
  const LinearOp fixed = h.xy_part() + h.v_part() + h.shift_part();
  const double scale = std::max(1.0, max_row_sum(fixed.matrix()));
  const bool symmetric = commutator_max_norm(inv, fixed) < 1e-10 * scale && commutator_max_norm(rot, fixed) < 1e-10 * scale;
  std::optional<SymmetrySector> tracked;
  if (symmetric) {
    for (auto& sec : symmetry_sectors(*basis, 0)) {
      const CVector coeffs = sec.basis.adjoint() * res.initial.amplitudes();
      if (coeffs.squaredNorm() > 0.5) {
        res.tracked_sector = {sec.inversion, sec.rotation};
        tracked = std::move(sec);
        break;
      }
    }
  }
  CMatrix tracked_fixed, tracked_field;
  if (tracked) {
    tracked_fixed = project(fixed, tracked->basis);
    tracked_field = project(h.sz2_sum(), tracked->basis);
  }

  auto sample = [&](double t, const CVector& psi, TrajectorySample& out, int* level) {
    const LinearOp ht = h.at(t);
    const GroundState g = ground_state(ht, basis, 0);
    out.time = t;
    out.d_field = h.d_at(t);
    out.populations.resize(static_cast<Eigen::Index>(res.pattern_indices.size()));
    for (std::size_t k = 0; k < res.pattern_indices.size(); ++k)
      out.populations(static_cast<Eigen::Index>(k)) = std::norm(psi(static_cast<Eigen::Index>(res.pattern_indices[k])));
    out.ground_fidelity = 0.0;
    for (const auto& m : g.multiplet) out.ground_fidelity += std::norm(m.amplitudes().dot(psi));
    if (tracked) {
      const auto [e, v] = sector_ground(tracked_fixed + out.d_field * tracked_field, tracked->basis);
      out.tracked_fidelity = std::norm(v.dot(psi));
      if (level) {
        const Spectrum spec(ht, res.pattern_indices);
        const Eigen::VectorXd all = spec.eigenvalues();
        const double tol = kDegeneracyTolerance * std::max(1.0, all.cwiseAbs().maxCoeff());
        *level = 0;
        while (*level < all.size() && all(*level) < e - tol) ++*level;
      }
    } else {
      out.tracked_fidelity = out.ground_fidelity;
      if (level) *level = 0;
    }
    out.norm = psi.norm();
    out.energy = psi.dot(ht.apply(psi)).real();
  };

  auto gen = [&h](double t) { return h.at(t); };
  CVector psi = res.initial.amplitudes();
  res.trajectory.resize(opts.samples);
  sample(0.0, psi, res.trajectory[0], nullptr);
  for (std::size_t k = 1; k < opts.samples; ++k) {
    const double t0 = ramp.duration * static_cast<double>(k - 1) / static_cast<double>(opts.samples - 1);
    const double t1 = ramp.duration * static_cast<double>(k) / static_cast<double>(opts.samples - 1);
    TimeDependentOptions seg = opts.integrator;
    seg.tolerance = opts.integrator.tolerance * (t1 - t0) / ramp.duration;
    EvolutionReport rep = evolve_time_dependent(psi, gen, t0, t1, seg);
    psi = rep.state;
    res.error_estimate += rep.error_estimate;
    sample(t1, psi, res.trajectory[k], k + 1 == opts.samples ? &res.tracked_level : nullptr);
  }
  res.final_state = SpinState(basis, psi);
  res.final_ground_fidelity = res.trajectory.back().ground_fidelity;
  res.final_tracked_fidelity = res.trajectory.back().tracked_fidelity;
  return res;
}

AdiabaticResult adiabatic_prepare(const ChainSpec& spec, const CouplingSet& coupling, const RampProfile& ramp,
                                  const AdiabaticOptions& opts, EffectiveOptions eff) {
  return adiabatic_prepare(build_effective(coupling, spec, eff).with_ramp(ramp), opts);
}

// ---------------------------------------------------------------------------
// Full versus effective

FullVsEffectiveResult compare_full_effective(const ChainSpec& spec_in, double ratio, int n_max, std::size_t samples,
                                             PhononInit init) {
  validate(spec_in);
  if (!(ratio > 0.0)) throw ValidationError("full_vs_effective: detuning ratio must be > 0");
  if (samples < 2) throw ValidationError("full_vs_effective: at least two samples are required");
  if (spec_in.n_ions < 2) throw ValidationError("full_vs_effective: needs at least two ions");
  const NormalModes modes = transverse_modes(spec_in);
  double eta_omega = 0.0;
  for (int i = 0; i < spec_in.n_ions; ++i)
    eta_omega = std::max(eta_omega, std::abs(modes.lamb_dicke(i, 0) * spec_in.rabi_freqs[static_cast<std::size_t>(i)]));
  if (eta_omega == 0.0) throw PhysicsError("full_vs_effective: COM coupling vanishes (zero Rabi frequency or delta_k)");

  ChainSpec spec = spec_in;
  spec.mu_detuning = modes.mode_freqs(0) + ratio * eta_omega;
  spec.d_field = 0.0;
  spec.site_shifts.clear();

  // The ratio-10 point sits on the guard boundary by construction.
  const CouplingSet coupling = compute_couplings(modes, spec, false);
  EffectiveOptions eff;
  eff.include_v_terms = true;
  eff.n_bar = init.kind == PhononInit::Kind::thermal ? init.n_bar : 0.0;
  const EffectiveHamiltonian heff = build_effective(coupling, spec, eff);
  const FullHamiltonian hfull = build_full(modes, spec, n_max, init);

  FullVsEffectiveResult res;
  res.detuning_ratio = ratio;
  res.mu = spec.mu_detuning;
  res.j12 = coupling.j_matrix(0, 1);
  if (res.j12 == 0.0) throw PhysicsError("full_vs_effective: J_01 vanishes");
  res.flop_period = 1.0 / (std::sqrt(2.0) * std::abs(res.j12));
  res.pattern_indices = heff.basis()->sector(0);

  const BasisPtr& basis = heff.basis();
  std::vector<int> zeros(static_cast<std::size_t>(spec.n_ions), 1);
  CVector spin0 = CVector::Zero(static_cast<Eigen::Index>(basis->dim()));
  spin0(static_cast<Eigen::Index>(basis->index_of(zeros))) = 1.0;

  const Spectrum eff_spec(heff.static_op());
  const Spectrum full_spec(hfull.rotating_frame());
  const auto mixture = hfull.initial_fock_mixture();

  res.samples.resize(samples);
  std::vector<double> discrepancy(samples), top(samples);
  parallel_for(samples, [&](std::size_t k) {
    const double t = res.flop_period * static_cast<double>(k) / static_cast<double>(samples - 1);
    const Eigen::VectorXd pe = eff_spec.evolve(spin0, t).cwiseAbs2();
    Eigen::VectorXd pf = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis->dim()));
    double top_pop = 0.0;
    for (const auto& [occ, w] : mixture) {
      const CVector psi = full_spec.evolve(hfull.product_state(spin0, occ), t);
      pf += w * hfull.spin_populations(psi);
      top_pop += w * hfull.top_level_population(psi);
    }
    auto& s = res.samples[k];
    s.time = t;
    s.full.resize(static_cast<Eigen::Index>(res.pattern_indices.size()));
    s.effective.resize(static_cast<Eigen::Index>(res.pattern_indices.size()));
    for (std::size_t j = 0; j < res.pattern_indices.size(); ++j) {
      s.full(static_cast<Eigen::Index>(j)) = pf(static_cast<Eigen::Index>(res.pattern_indices[j]));
      s.effective(static_cast<Eigen::Index>(j)) = pe(static_cast<Eigen::Index>(res.pattern_indices[j]));
    }
    discrepancy[k] = (pf - pe).cwiseAbs().maxCoeff();
    top[k] = top_pop;
  });
  res.max_discrepancy = *std::max_element(discrepancy.begin(), discrepancy.end());
  res.max_top_level_population = *std::max_element(top.begin(), top.end());
  res.truncation_flagged = res.max_top_level_population > kTruncationFlagThreshold;
  return res;
}

}  // namespace ionsim
