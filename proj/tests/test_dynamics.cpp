#include <doctest.h>

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "ionsim/dynamics.hpp"
#include "ionsim/errors.hpp"

using namespace ionsim;

namespace {

constexpr double kPi = constants::kPi;

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Spin-1 matrices in the (-, 0, +) ordering.
CMatrix sp1() {
  CMatrix m = CMatrix::Zero(3, 3);
  m(1, 0) = m(2, 1) = std::sqrt(2.0);
  return m;
}
CMatrix sz1() {
  CMatrix m = CMatrix::Zero(3, 3);
  m(0, 0) = -1.0;
  m(2, 2) = 1.0;
  return m;
}

// Operator on site k of an n-site chain; site 0 is the leftmost factor.
CMatrix embed(const CMatrix& op, int k, int n) {
  CMatrix out = CMatrix::Identity(1, 1);
  for (int s = 0; s < n; ++s) out = kron(out, s == k ? op : CMatrix(CMatrix::Identity(3, 3)));
  return out;
}

CMatrix oracle_effective(const Eigen::MatrixXd& j, double d, const std::vector<SiteShift>& shifts,
                         const Eigen::MatrixXd* v, double n_bar) {
  const int n = static_cast<int>(j.rows());
  const CMatrix sp = sp1(), sm = sp1().adjoint(), sz = sz1();
  CMatrix h = CMatrix::Zero(embed(sz, 0, n).rows(), embed(sz, 0, n).cols());
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      h += j(a, b) / 4.0 * (embed(sp, a, n) * embed(sm, b, n) + embed(sm, a, n) * embed(sp, b, n));
  for (int a = 0; a < n; ++a) {
    const CMatrix z = embed(sz, a, n);
    h += d * z * z;
    if (!shifts.empty())
      h += shifts[static_cast<std::size_t>(a)].linear_hz * z + shifts[static_cast<std::size_t>(a)].quadratic_hz * z * z;
    if (v)
      for (Eigen::Index m = 0; m < v->cols(); ++m) h += (*v)(a, m) * ((2.0 * n_bar + 1.0) * z - z * z);
  }
  return h;
}

Eigen::MatrixXd sample_j3() {
  Eigen::MatrixXd j(3, 3);
  j << 0, 1000, 1000 / std::pow(2.0, 0.36), 1000, 0, 1000, 1000 / std::pow(2.0, 0.36), 1000, 0;
  return j;
}

ChainSpec synthetic_spec(int n) {
  ChainSpec s = default_chain(n);
  return s;
}

EffectiveHamiltonian two_spin(double j) {
  Eigen::MatrixXd m(2, 2);
  m << 0, j, j, 0;
  return build_effective(CouplingSet::from_j(m), synthetic_spec(2));
}

CVector basis_vec(const Basis& b, const std::string& label) {
  CVector v = CVector::Zero(static_cast<Eigen::Index>(b.dim()));
  v(static_cast<Eigen::Index>(b.index_of_label(label))) = 1.0;
  return v;
}

// Classical RK4 on dpsi/dt = -i 2pi H(t) psi with a fixed small step.
CVector rk4(const std::function<CMatrix(double)>& h, CVector psi, double t0, double t1, int steps) {
  const double dt = (t1 - t0) / steps;
  const Complex f(0.0, -2.0 * kPi);
  for (int k = 0; k < steps; ++k) {
    const double t = t0 + k * dt;
    const CVector k1 = f * (h(t) * psi);
    const CVector k2 = f * (h(t + dt / 2) * (psi + dt / 2 * k1));
    const CVector k3 = f * (h(t + dt / 2) * (psi + dt / 2 * k2));
    const CVector k4 = f * (h(t + dt) * (psi + dt * k3));
    psi += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return psi;
}

}  // namespace

TEST_CASE("effective Hamiltonian matches the Kronecker-product oracle") {
  ChainSpec s = synthetic_spec(3);
  s.d_field = 321.0;
  s.site_shifts = {{10.0, -4.0}, {0.0, 0.0}, {200.0, 150.0}};
  CouplingSet c = CouplingSet::from_j(sample_j3());
  c.v_matrix = Eigen::MatrixXd::Constant(3, 3, 2.5);
  c.v_matrix(1, 2) = -7.0;
  EffectiveOptions opts;
  opts.include_v_terms = true;
  opts.n_bar = 0.05;
  const EffectiveHamiltonian h = build_effective(c, s, opts);
  const CMatrix oracle = oracle_effective(c.j_matrix, s.d_field, s.site_shifts, &c.v_matrix, 0.05);
  CHECK((h.static_op().dense() - oracle).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(h.static_op().hermitian());
  for (int sz = -3; sz <= 3; ++sz) CHECK(commutator_max_norm(subspace_projector(*h.basis(), sz), h.static_op()) < 1e-12);

  opts.include_v_terms = false;
  const EffectiveHamiltonian h0 = build_effective(c, s, opts);
  CHECK((h0.static_op().dense() - oracle_effective(c.j_matrix, s.d_field, s.site_shifts, nullptr, 0.0)).cwiseAbs().maxCoeff() <
        1e-10);

  CHECK_THROWS_AS(build_effective(CouplingSet::from_j(sample_j3()), synthetic_spec(2)), ValidationError);
}

TEST_CASE("two-spin matrix element and spectrum") {
  const double j = 1234.0;
  const EffectiveHamiltonian h = two_spin(j);
  const Basis& b = *h.basis();
  const CMatrix dense = h.static_op().dense();
  CHECK(std::abs(dense(static_cast<Eigen::Index>(b.index_of_label("00")), static_cast<Eigen::Index>(b.index_of_label("+-"))) -
                 j / 2.0) < 1e-12);
  const auto idx = b.sector(0);
  Eigen::Matrix3cd block;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) block(r, c) = dense(static_cast<Eigen::Index>(idx[r]), static_cast<Eigen::Index>(idx[c]));
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> es(block);
  CHECK(es.eigenvalues()(0) == doctest::Approx(-j / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(std::abs(es.eigenvalues()(1)) < 1e-9);
  CHECK(es.eigenvalues()(2) == doctest::Approx(j / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("static evolution: two-spin flop") {
  const double j = 1310.0;
  const EffectiveHamiltonian h = two_spin(j);
  const BasisPtr& b = h.basis();
  const SpinState start(b, basis_vec(*b, "00"));
  const LinearOp op = h.static_op();

  const SpinState same = evolve(start, op, 0.0);
  CHECK((same.amplitudes() - start.amplitudes()).norm() < 1e-15);

  // Two-level reduction: |00> and (|+-> + |-+>)/sqrt2 coupled by J/sqrt2.
  for (double t : {0.1e-3, 0.2e-3, 0.33e-3}) {
    const SpinState s = evolve(start, op, t);
    CHECK(s.probability("00") == doctest::Approx(std::pow(std::cos(kPi * std::sqrt(2.0) * j * t), 2)).epsilon(1e-10));
    CHECK(std::abs(s.norm() - 1.0) < 1e-10);
  }
  const double half = 0.5 / (std::sqrt(2.0) * j);
  CVector target = (basis_vec(*b, "+-") + basis_vec(*b, "-+")) / std::sqrt(2.0);
  const SpinState ent = evolve(start, op, half);
  CHECK(ent.probability("00") < 1e-20);
  CHECK(ent.fidelity(SpinState(b, target)) == doctest::Approx(1.0).epsilon(1e-12));
  const SpinState back = evolve(start, op, 2.0 * half);
  CHECK(back.fidelity(start) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(evolve(SpinState(b, 2.0 * start.amplitudes()), op, 1e-4), ValidationError);
}

TEST_CASE("trajectory samples conserve norm, energy and S_z") {
  const BasisPtr b = make_basis(4);
  Eigen::MatrixXd j = CouplingSet::power_law_chain(4, 900.0, 0.7).j_matrix;
  ChainSpec s = synthetic_spec(4);
  s.d_field = 150.0;
  const EffectiveHamiltonian h = build_effective(CouplingSet::from_j(j), s);
  CVector v = CVector::Zero(81);
  const auto idx = b->sector(1);
  for (std::size_t k = 0; k < idx.size(); ++k)
    v(static_cast<Eigen::Index>(idx[k])) = Complex(std::cos(1.3 * k), std::sin(0.7 * k + 0.2));
  v.normalize();
  const SpinState psi(b, v);
  std::vector<double> times;
  for (int k = 0; k <= 20; ++k) times.push_back(k * 0.5e-3);
  const auto samples = evolve_trajectory(psi, h.static_op(), times);
  const double e0 = samples.front().energy;
  for (const auto& smp : samples) {
    CHECK(std::abs(smp.norm - 1.0) < 1e-10);
    CHECK(std::abs(smp.energy - e0) < 1e-9 * std::abs(e0));
    double outside = 0.0;
    for (std::size_t i = 0; i < b->dim(); ++i)
      if (b->sz_total(i) != 1) outside += smp.populations(static_cast<Eigen::Index>(i));
    CHECK(outside < 1e-10);
  }
}

TEST_CASE("ramped evolution matches an RK4 oracle") {
  const EffectiveHamiltonian base = two_spin(1000.0);
  const EffectiveHamiltonian h = base.with_ramp(RampProfile::standard());
  const BasisPtr& b = h.basis();
  const SpinState start = ground_state(h.at(0.0), b, 0).multiplet.front();
  const CMatrix xy = base.static_op().dense(), sz2 = base.sz2_sum().dense();
  const RampProfile ramp = RampProfile::standard();
  const CVector oracle = rk4([&](double t) { return CMatrix(xy + ramp.value(t) * sz2); }, start.amplitudes(), 0.0,
                             ramp.duration, 20000);
  for (StepScheme scheme : {StepScheme::commutator_free4, StepScheme::midpoint}) {
    TimeDependentOptions opts;
    opts.scheme = scheme;
    const SpinState out = evolve(start, h, ramp.duration, opts);
    CHECK((out.amplitudes() - oracle).norm() < 1e-7);
    CHECK(std::abs(out.norm() - 1.0) < 1e-8);
  }
}

TEST_CASE("ramp profiles") {
  const RampProfile p = RampProfile::standard();
  CHECK(p.value(0.0) == doctest::Approx(5000.0));
  CHECK(p.value(0.167e-3) == doctest::Approx(5000.0 / std::exp(1.0)).epsilon(1e-12));
  RampProfile lin;
  lin.shape = RampProfile::Shape::linear;
  lin.d_initial = 100.0;
  lin.d_final = 0.0;
  lin.duration = 2.0;
  CHECK(lin.value(0.5) == doctest::Approx(75.0));
  CHECK(lin.value(5.0) == doctest::Approx(0.0));
  RampProfile tab;
  tab.shape = RampProfile::Shape::table;
  tab.table = {{0.0, 10.0}, {1.0, 0.0}};
  tab.duration = 1.0;
  CHECK(tab.value(0.25) == doctest::Approx(7.5));
  RampProfile bad = p;
  bad.duration = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("ground states") {
  const double j = 800.0;
  const EffectiveHamiltonian h = two_spin(j);
  const GroundState g = ground_state(h.static_op(), h.basis(), 0);
  CHECK(g.energy == doctest::Approx(-j / std::sqrt(2.0)).epsilon(1e-12));
  CHECK_FALSE(g.degenerate);
  CHECK(g.gap == doctest::Approx(j / std::sqrt(2.0)).epsilon(1e-9));
  CHECK(g.multiplet.front().fidelity(reference_state(h.basis(), ReferenceState::two_spin_ground)) ==
        doctest::Approx(1.0).epsilon(1e-12));

  ChainSpec s = synthetic_spec(3);
  s.d_field = 5000.0;
  const EffectiveHamiltonian diag = build_effective(CouplingSet::from_j(Eigen::MatrixXd::Zero(3, 3)), s);
  const GroundState d = ground_state(diag.static_op(), diag.basis());
  CHECK(std::abs(d.energy) < 1e-12);
  CHECK(d.gap == doctest::Approx(5000.0));
  CHECK(d.multiplet.front().probability("000") == doctest::Approx(1.0));

  // D = 0, J = 0: everything is degenerate.
  const EffectiveHamiltonian flat = build_effective(CouplingSet::from_j(Eigen::MatrixXd::Zero(2, 2)), synthetic_spec(2));
  const GroundState f = ground_state(flat.static_op(), flat.basis(), 0);
  CHECK(f.degenerate);
  CHECK(f.multiplet.size() == 3);
}

TEST_CASE("symmetry diagnosis") {
  const EffectiveHamiltonian h = build_effective(CouplingSet::from_j(sample_j3()), synthetic_spec(3));
  std::vector<double> grid;
  for (int k = 0; k <= 100; ++k) grid.push_back(50.0 * k);
  const SymmetryReport r = symmetry_diagnosis(h, reference_state(h.basis(), ReferenceState::eq10_ground), grid);
  CHECK(r.mirror_symmetric);
  CHECK(r.inversion_commutator < 1e-10);
  CHECK(r.rotation_commutator < 1e-10);
  REQUIRE(r.inversion_eigenvalue.has_value());
  CHECK(*r.inversion_eigenvalue == -1);
  CHECK(*r.rotation_eigenvalue == -1);
  REQUIRE(r.crossing_d.has_value());
  CHECK(*r.crossing_d > 0.0);
  CHECK(r.max_inter_sector_coupling == 0.0);

  const SymmetryReport z = symmetry_diagnosis(h, reference_state(h.basis(), ReferenceState::all_zero), grid);
  CHECK(*z.inversion_eigenvalue == 1);
  CHECK(*z.rotation_eigenvalue == 1);

  Eigen::MatrixXd skew = sample_j3();
  skew(0, 1) = skew(1, 0) = 1300.0;
  const EffectiveHamiltonian hs = build_effective(CouplingSet::from_j(skew), synthetic_spec(3));
  CHECK_FALSE(symmetry_diagnosis(hs, reference_state(hs.basis(), ReferenceState::all_zero), grid).mirror_symmetric);
}

TEST_CASE("symmetry sectors span the S_z = 0 block") {
  const Basis b(3);
  std::size_t total = 0;
  for (const auto& s : symmetry_sectors(b, 0)) {
    total += static_cast<std::size_t>(s.basis.cols());
    CHECK((s.basis.adjoint() * s.basis - CMatrix::Identity(s.basis.cols(), s.basis.cols())).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(total == 7);
}

TEST_CASE("adiabatic preparation") {
  Eigen::MatrixXd j2(2, 2);
  j2 << 0, 1000, 1000, 0;
  const ChainSpec s2 = synthetic_spec(2);
  const AdiabaticResult r = adiabatic_prepare(s2, CouplingSet::from_j(j2), RampProfile::standard());
  const Basis& b = *r.final_state.basis_ptr();
  CHECK(r.final_state.probability("00") == doctest::Approx(0.5).epsilon(0.2));
  CHECK(r.final_state.probability("+-") == doctest::Approx(0.25).epsilon(0.2));
  CHECK(r.final_state.probability("-+") == doctest::Approx(0.25).epsilon(0.2));
  CHECK(r.tracked_level == 0);
  CHECK(r.trajectory.size() == 101);
  CHECK(r.pattern_indices == b.sector(0));

  RampProfile slow = RampProfile::standard();
  slow.time_constant *= 10.0;
  slow.duration *= 10.0;
  CHECK(adiabatic_prepare(s2, CouplingSet::from_j(j2), slow).final_ground_fidelity >= 0.99);

  const AdiabaticResult r3 = adiabatic_prepare(synthetic_spec(3), CouplingSet::from_j(sample_j3()), RampProfile::standard());
  CHECK(r3.final_state.fidelity(reference_state(r3.final_state.basis_ptr(), ReferenceState::eq10_ground)) < 1e-6);
  CHECK(r3.tracked_sector == std::make_pair(1, 1));
  CHECK(r3.tracked_level > 0);
}

TEST_CASE("full Hamiltonian construction") {
  ChainSpec one = synthetic_spec(1);
  const NormalModes m1 = transverse_modes(one);
  const FullHamiltonian f = build_full(m1, one, 1);
  CHECK(f.dim() == 6);
  for (double t : {0.0, 1.3e-6, 7e-5}) CHECK(f.at(t).hermiticity_defect() < 1e-12);

  ChainSpec dark = synthetic_spec(2);
  dark.rabi_freqs = {0.0, 0.0};
  const FullHamiltonian z = build_full(transverse_modes(dark), dark, 2);
  CHECK(z.at(1e-6).matrix().cwiseAbs().sum() == 0.0);

  const ChainSpec big = synthetic_spec(4);
  CHECK_THROWS_AS(build_full(transverse_modes(big), big, 3), ValidationError);
}

TEST_CASE("full model: interaction picture agrees with the rotating frame") {
  ChainSpec s = synthetic_spec(2);
  const NormalModes m = transverse_modes(s);
  s.mu_detuning = m.mode_freqs(0) + 20.0 * std::abs(m.lamb_dicke(0, 0) * s.rabi_freqs[0]);
  const FullHamiltonian f = build_full(m, s, 2);
  const int zeros[2] = {0, 0};
  const CVector psi0 = f.product_state(basis_vec(*f.basis(), "00"), zeros);
  const double t = 5e-5;
  TimeDependentOptions opts;
  opts.tolerance = 1e-9;
  const EvolutionReport ip = evolve_time_dependent(psi0, [&](double x) { return f.at(x); }, 0.0, t, opts);
  const CVector rf = f.to_interaction_picture(propagate(f.rotating_frame(), psi0, t), t);
  CHECK((ip.state - rf).norm() < 1e-7);
  CHECK((f.spin_populations(ip.state) - f.spin_populations(rf)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("full versus effective at ratio 20") {
  const FullVsEffectiveResult r = compare_full_effective(synthetic_spec(2), 20.0, 3, 41);
  CHECK(r.max_discrepancy < 0.05);
  CHECK(r.max_top_level_population < kTruncationFlagThreshold);
  CHECK_FALSE(r.truncation_flagged);
  CHECK(r.samples.size() == 41);
}
