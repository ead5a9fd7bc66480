#include <doctest.h>

#include <cmath>

#include "ionsim/dynamics.hpp"
#include "ionsim/errors.hpp"
#include "ionsim/quantum.hpp"

using namespace ionsim;

namespace {

// Counts S_z = 0 configurations by walking every digit string.
std::size_t brute_force_sz0(int n) {
  std::size_t total = 1;
  for (int i = 0; i < n; ++i) total *= 3;
  std::size_t count = 0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    int sz = 0;
    for (std::size_t x = idx, k = 0; k < static_cast<std::size_t>(n); ++k, x /= 3) sz += static_cast<int>(x % 3) - 1;
    count += sz == 0;
  }
  return count;
}

double max_abs(const CMatrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("basis encoding") {
  const Basis b1(1);
  CHECK(b1.dim() == 3);
  CHECK(b1.sz_total(0) == -1);
  CHECK(b1.sz_total(1) == 0);
  CHECK(b1.sz_total(2) == 1);
  CHECK(b1.label(0) == "-");

  const Basis b2(2);
  const auto s0 = b2.sector(0);
  REQUIRE(s0.size() == 3);
  std::vector<std::string> labels;
  for (auto i : s0) labels.push_back(b2.label(i));
  CHECK(labels == std::vector<std::string>{"-+", "00", "+-"});

  const Basis b3(3);
  CHECK(b3.label(b3.index_of_label("0+-")) == "0+-");
  CHECK(b3.digit(b3.index_of_label("+0-"), 0) == 2);
}

TEST_CASE("S_z = 0 dimensions match enumeration") {
  for (int n = 1; n <= 7; ++n) CHECK(Basis(n).sector(0).size() == brute_force_sz0(n));
  CHECK(Basis(3).sector(0).size() == 7);
  CHECK(Basis(4).sector(0).size() == 19);
}

TEST_CASE("basis round trip") {
  for (int n = 1; n <= 6; ++n) {
    const Basis b(n);
    for (std::size_t i = 0; i < b.dim(); ++i) {
      CHECK(b.index_of_label(b.label(i)) == i);
      const auto d = b.digits(i);
      CHECK(b.index_of(d) == i);
      CHECK(std::abs(b.sz_total(i)) <= n);
    }
  }
}

TEST_CASE("size cap") {
  CHECK_THROWS_AS(Basis(11), ValidationError);
  CHECK_THROWS_AS(Basis(0), ValidationError);
  CHECK_NOTHROW(Basis(4, 4));
}

TEST_CASE("spin-1 commutation relations") {
  const Basis b(2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const LinearOp sp = site_operator(b, i, SiteOpKind::raise);
      const LinearOp sm = site_operator(b, j, SiteOpKind::lower);
      const CMatrix comm = (sp * sm - sm * sp).dense();
      const CMatrix expected = i == j ? CMatrix(2.0 * site_operator(b, i, SiteOpKind::sz).dense()) : CMatrix::Zero(9, 9);
      CHECK(max_abs(comm - expected) < 1e-14);
    }
  CHECK_THROWS_AS(site_operator(b, 2, SiteOpKind::sz), ValidationError);
}

TEST_CASE("single-site identities") {
  const Basis b(1);
  const CMatrix sp = site_operator(b, 0, SiteOpKind::raise).dense();
  const CMatrix sm = site_operator(b, 0, SiteOpKind::lower).dense();
  const CMatrix sz = site_operator(b, 0, SiteOpKind::sz).dense();
  const CMatrix sx = (sp + sm) / 2.0;
  const CMatrix sy = (sp - sm) / Complex(0.0, 2.0);
  CHECK(max_abs(sx * sx + sy * sy + sz * sz - 2.0 * CMatrix::Identity(3, 3)) < 1e-14);
  CHECK(max_abs(sz * sz - site_operator(b, 0, SiteOpKind::sz_squared).dense()) < 1e-15);
  CVector zero = CVector::Zero(3);
  zero(1) = 1.0;
  CHECK((sp * sm * zero - 2.0 * zero).norm() < 1e-14);
  // S+|-> = sqrt2 |0>, S+|0> = sqrt2 |+>, S+|+> = 0
  CHECK(std::abs(sp(1, 0) - std::sqrt(2.0)) < 1e-15);
  CHECK(std::abs(sp(2, 1) - std::sqrt(2.0)) < 1e-15);
  CHECK(sp.col(2).norm() == 0.0);
}

TEST_CASE("raise and lower are adjoint entrywise") {
  const Basis b(3);
  for (int i = 0; i < 3; ++i) {
    const SparseMatrix up = site_operator(b, i, SiteOpKind::raise).matrix();
    const SparseMatrix down = site_operator(b, i, SiteOpKind::lower).matrix();
    CHECK(max_abs(CMatrix(SparseMatrix(up.adjoint())) - CMatrix(down)) == 0.0);
    CHECK(site_operator(b, i, SiteOpKind::sz).hermitian());
  }
}

TEST_CASE("subspace projector") {
  const Basis b(2);
  auto rank = [&](int sz) { return subspace_projector(b, sz).dense().real().sum(); };
  CHECK(rank(0) == 3.0);
  CHECK(rank(2) == 1.0);
  CHECK(rank(3) == 0.0);
  const CMatrix p = subspace_projector(b, 0).dense();
  CHECK(max_abs(p * p - p) == 0.0);

  const Basis b4(4);
  Eigen::MatrixXd j(4, 4);
  j << 0, 3, 2, 1, 3, 0, 5, 2, 2, 5, 0, 7, 1, 2, 7, 0;
  const LinearOp h = xy_operator(b4, j);
  for (int sz = -4; sz <= 4; ++sz) CHECK(commutator_max_norm(subspace_projector(b4, sz), h) < 1e-12);
}

TEST_CASE("inversion and rotation operators") {
  const BasisPtr b = make_basis(3);
  const LinearOp inv = inversion_op(*b);
  const LinearOp rot = rotation_pi_sx_op(*b);
  CVector v = CVector::Zero(27);
  v(static_cast<Eigen::Index>(b->index_of_label("0+-"))) = 1.0;
  const CVector w = inv.apply(v);
  CHECK(std::abs(w(static_cast<Eigen::Index>(b->index_of_label("-+0"))) - 1.0) < 1e-15);
  const CVector r = rot.apply(v);
  CHECK(std::abs(std::abs(r(static_cast<Eigen::Index>(b->index_of_label("0-+")))) - 1.0) < 1e-15);

  const CMatrix id = CMatrix::Identity(27, 27);
  CHECK(max_abs((inv * inv).dense() - id) < 1e-15);
  CHECK(max_abs((rot * rot).dense() - id) < 1e-15);
  CHECK(max_abs(rot.dense().adjoint() * rot.dense() - id) < 1e-15);

  Eigen::MatrixXd j(3, 3);
  j << 0, 1000, 700, 1000, 0, 1000, 700, 1000, 0;
  const LinearOp h = xy_operator(*b, j);
  CHECK(commutator_max_norm(inv, h) < 1e-10);
  CHECK(commutator_max_norm(rot, h) < 1e-10);

  const SpinState eq10 = reference_state(b, ReferenceState::eq10_ground);
  CHECK((inv.apply(eq10.amplitudes()) + eq10.amplitudes()).norm() < 1e-12);
  CHECK((rot.apply(eq10.amplitudes()) + eq10.amplitudes()).norm() < 1e-12);
  const SpinState zero = reference_state(b, ReferenceState::all_zero);
  CHECK(zero.expectation(inv).real() == doctest::Approx(1.0));
  CHECK(zero.expectation(rot).real() == doctest::Approx(1.0));
}

TEST_CASE("reference states") {
  const BasisPtr b3 = make_basis(3);
  const SpinState eq10 = reference_state(b3, ReferenceState::eq10_ground);
  CHECK(eq10.norm() == doctest::Approx(1.0).epsilon(1e-14));
  for (const char* l : {"0+-", "0-+", "+-0", "-+0"}) CHECK(eq10.probability(l) == doctest::Approx(0.16).epsilon(1e-12));
  for (const char* l : {"+0-", "-0+"}) CHECK(eq10.probability(l) == doctest::Approx(0.18).epsilon(1e-12));

  const SpinState aklt = reference_state(b3, ReferenceState::aklt3);
  CHECK(aklt.fidelity(eq10) >= 0.998);
  const SpinState aklt_trace = aklt_state(b3, AkltBoundary::trace);
  CHECK(aklt_trace.fidelity(aklt) == doctest::Approx(1.0).epsilon(1e-12));

  const auto overlaps = aklt_boundary_overlaps(eq10);
  CHECK(overlaps.size() == 5);
  double best = 0.0;
  AkltBoundary arg = AkltBoundary::up_up;
  for (const auto& o : overlaps)
    if (o.overlap > best) best = o.overlap, arg = o.boundary;
  CHECK(arg == kDefaultAkltBoundary);

  const BasisPtr b2 = make_basis(2);
  const SpinState g = reference_state(b2, ReferenceState::two_spin_ground);
  const SpinState t = reference_state(b2, ReferenceState::two_spin_top);
  CHECK(std::abs(g.overlap(t)) < 1e-15);
  const CVector& a = g.amplitudes();
  CHECK(std::abs(a(static_cast<Eigen::Index>(b2->index_of_label("00"))) - 1.0 / std::sqrt(2.0)) < 1e-15);
  CHECK(std::abs(a(static_cast<Eigen::Index>(b2->index_of_label("+-"))) + 0.5) < 1e-15);
  CHECK(std::abs(a(static_cast<Eigen::Index>(b2->index_of_label("-+"))) + 0.5) < 1e-15);

  CHECK_THROWS_AS(reference_state(b2, ReferenceState::eq10_ground), ValidationError);
  CHECK(parse_reference_state(to_string(ReferenceState::aklt3)) == ReferenceState::aklt3);
}

TEST_CASE("AKLT state on larger chains is normalized") {
  for (int n : {2, 4, 5}) {
    const SpinState s = aklt_state(make_basis(n), AkltBoundary::up_up);
    CHECK(s.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}
