#include "ionsim/quantum.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "ionsim/errors.hpp"

namespace ionsim {

Basis::Basis(int n_sites, int cap) : n_sites_(n_sites) {
  if (n_sites < 1) throw ValidationError("basis: n_sites must be >= 1");
  if (n_sites > cap) {
    std::ostringstream os;
    os << "basis: " << n_sites << " sites exceeds the size cap of " << cap;
    throw ValidationError(os.str());
  }
  strides_.assign(static_cast<std::size_t>(n_sites), 1);
  for (int s = n_sites - 2; s >= 0; --s) strides_[s] = strides_[s + 1] * 3;
  dim_ = strides_[0] * 3;
  sz_total_.resize(dim_);
  for (std::size_t idx = 0; idx < dim_; ++idx) {
    int sz = 0;
    std::size_t rest = idx;
    for (int s = 0; s < n_sites; ++s) {
      sz += static_cast<int>(rest % 3) - 1;
      rest /= 3;
    }
    sz_total_[idx] = sz;
  }
}

int Basis::digit(std::size_t index, int site) const {
  return static_cast<int>((index / strides_[static_cast<std::size_t>(site)]) % 3);
}

std::vector<int> Basis::digits(std::size_t index) const {
  std::vector<int> d(static_cast<std::size_t>(n_sites_));
  for (int s = 0; s < n_sites_; ++s) d[s] = digit(index, s);
  return d;
}

std::size_t Basis::index_of(std::span<const int> d) const {
  if (d.size() != static_cast<std::size_t>(n_sites_)) throw ValidationError("basis: digit count mismatch");
  std::size_t idx = 0;
  for (int s = 0; s < n_sites_; ++s) {
    if (d[s] < 0 || d[s] > 2) throw ValidationError("basis: digit out of range");
    idx += static_cast<std::size_t>(d[s]) * strides_[s];
  }
  return idx;
}

std::string Basis::label(std::size_t index) const {
  std::string out(static_cast<std::size_t>(n_sites_), '?');
  for (int s = 0; s < n_sites_; ++s) out[s] = spin_label_char(digit(index, s));
  return out;
}

std::size_t Basis::index_of_label(std::string_view label) const {
  if (label.size() != static_cast<std::size_t>(n_sites_))
    throw ValidationError("basis: label '" + std::string(label) + "' has wrong length");
  std::vector<int> d;
  d.reserve(label.size());
  for (char c : label) d.push_back(spin_label_digit(c));
  return index_of(d);
}

std::vector<std::size_t> Basis::sector(int sz) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dim_; ++i)
    if (sz_total_[i] == sz) out.push_back(i);
  return out;
}

BasisPtr make_basis(int n_sites, int cap) { return std::make_shared<const Basis>(n_sites, cap); }

char spin_label_char(int digit) {
  switch (digit) {
    case 0: return '-';
    case 1: return '0';
    case 2: return '+';
  }
  throw ValidationError("invalid spin digit");
}

int spin_label_digit(char c) {
  switch (c) {
    case '-': return 0;
    case '0': return 1;
    case '+': return 2;
  }
  throw ValidationError(std::string("invalid spin label character '") + c + "'");
}

// ---------------------------------------------------------------------------
// LinearOp

LinearOp::LinearOp(SparseMatrix matrix, bool hermitian) : matrix_(std::move(matrix)), hermitian_(hermitian) {
  matrix_.makeCompressed();
  if (hermitian_) {
    double scale = 1.0;
    for (int k = 0; k < matrix_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(matrix_, k); it; ++it) scale = std::max(scale, std::abs(it.value()));
    if (hermiticity_defect() > 1e-12 * scale)
      throw NumericalError("LinearOp flagged hermitian but |A - A^dagger| exceeds 1e-12");
  }
}

LinearOp LinearOp::zero(std::size_t dim) {
  SparseMatrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  return LinearOp(std::move(m), true);
}

LinearOp LinearOp::identity(std::size_t dim) {
  SparseMatrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  m.setIdentity();
  return LinearOp(std::move(m), true);
}

LinearOp LinearOp::adjoint() const { return LinearOp(SparseMatrix(matrix_.adjoint()), hermitian_); }

double LinearOp::hermiticity_defect() const {
  SparseMatrix diff = matrix_ - SparseMatrix(matrix_.adjoint());
  double worst = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(diff, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
  return worst;
}

LinearOp operator+(const LinearOp& a, const LinearOp& b) {
  return LinearOp(SparseMatrix(a.matrix_ + b.matrix_), a.hermitian_ && b.hermitian_);
}
LinearOp operator-(const LinearOp& a, const LinearOp& b) {
  return LinearOp(SparseMatrix(a.matrix_ - b.matrix_), a.hermitian_ && b.hermitian_);
}
LinearOp operator*(const LinearOp& a, const LinearOp& b) { return LinearOp(SparseMatrix(a.matrix_ * b.matrix_), false); }
LinearOp operator*(double s, const LinearOp& a) { return LinearOp(SparseMatrix(Complex(s) * a.matrix_), a.hermitian_); }
LinearOp operator*(Complex s, const LinearOp& a) {
  return LinearOp(SparseMatrix(s * a.matrix_), a.hermitian_ && s.imag() == 0.0);
}

double commutator_max_norm(const LinearOp& a, const LinearOp& b) {
  SparseMatrix c = a.matrix() * b.matrix() - b.matrix() * a.matrix();
  double worst = 0.0;
  for (int k = 0; k < c.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(c, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
  return worst;
}

// ---------------------------------------------------------------------------
// SpinState

SpinState::SpinState(BasisPtr basis, CVector amplitudes) : basis_(std::move(basis)), amps_(std::move(amplitudes)) {
  if (!basis_) throw ValidationError("SpinState: null basis");
  if (static_cast<std::size_t>(amps_.size()) != basis_->dim())
    throw ValidationError("SpinState: amplitude length does not match basis dimension");
}

SpinState SpinState::normalized() const {
  const double n = norm();
  if (n == 0.0) throw NumericalError("SpinState: cannot normalize a zero vector");
  return SpinState(basis_, amps_ / n);
}

Complex SpinState::overlap(const SpinState& other) const {
  if (amps_.size() != other.amps_.size()) throw ValidationError("SpinState: dimension mismatch in overlap");
  return amps_.dot(other.amps_);
}

double SpinState::probability(std::string_view label) const {
  return std::norm(amps_(static_cast<Eigen::Index>(basis_->index_of_label(label))));
}

Complex SpinState::expectation(const LinearOp& op) const { return amps_.dot(op.apply(amps_)); }

// ---------------------------------------------------------------------------
// Operators

Eigen::Matrix3cd spin_matrix(SiteOpKind kind) {
  const double r2 = std::sqrt(2.0);
  Eigen::Matrix3cd m = Eigen::Matrix3cd::Zero();
  switch (kind) {
    case SiteOpKind::raise:
      m(1, 0) = r2;  // S+|-> = sqrt2 |0>
      m(2, 1) = r2;  // S+|0> = sqrt2 |+>
      break;
    case SiteOpKind::lower:
      m(0, 1) = r2;
      m(1, 2) = r2;
      break;
    case SiteOpKind::sz:
      m(0, 0) = -1.0;
      m(2, 2) = 1.0;
      break;
    case SiteOpKind::sz_squared:
      m(0, 0) = 1.0;
      m(2, 2) = 1.0;
      break;
  }
  return m;
}

LinearOp site_operator(const Basis& basis, int site, SiteOpKind kind) {
  if (site < 0 || site >= basis.n_sites()) {
    std::ostringstream os;
    os << "site_operator: site " << site << " out of range [0, " << basis.n_sites() << ")";
    throw ValidationError(os.str());
  }
  const Eigen::Matrix3cd m = spin_matrix(kind);
  const auto stride = static_cast<std::ptrdiff_t>(basis.stride(site));
  std::vector<Eigen::Triplet<Complex>> trips;
  trips.reserve(basis.dim());
  for (std::size_t col = 0; col < basis.dim(); ++col) {
    const int d = basis.digit(col, site);
    for (int r = 0; r < 3; ++r) {
      if (m(r, d) == Complex(0.0)) continue;
      const auto row = static_cast<std::ptrdiff_t>(col) + (r - d) * stride;
      trips.emplace_back(static_cast<int>(row), static_cast<int>(col), m(r, d));
    }
  }
  const auto n = static_cast<Eigen::Index>(basis.dim());
  SparseMatrix out(n, n);
  out.setFromTriplets(trips.begin(), trips.end());
  const bool herm = kind == SiteOpKind::sz || kind == SiteOpKind::sz_squared;
  return LinearOp(std::move(out), herm);
}

LinearOp subspace_projector(const Basis& basis, int sz) {
  const auto n = static_cast<Eigen::Index>(basis.dim());
  SparseMatrix out(n, n);
  std::vector<Eigen::Triplet<Complex>> trips;
  for (std::size_t i = 0; i < basis.dim(); ++i)
    if (basis.sz_total(i) == sz) trips.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
  out.setFromTriplets(trips.begin(), trips.end());
  return LinearOp(std::move(out), true);
}

namespace {

template <class Map>
LinearOp permutation_op(const Basis& basis, Map&& map_digits) {
  const auto n = static_cast<Eigen::Index>(basis.dim());
  std::vector<Eigen::Triplet<Complex>> trips;
  trips.reserve(basis.dim());
  for (std::size_t col = 0; col < basis.dim(); ++col) {
    std::vector<int> d = map_digits(basis.digits(col));
    trips.emplace_back(static_cast<int>(basis.index_of(d)), static_cast<int>(col), 1.0);
  }
  SparseMatrix out(n, n);
  out.setFromTriplets(trips.begin(), trips.end());
  // Both permutations used here are involutions, hence hermitian.
  return LinearOp(std::move(out), true);
}

}  // namespace

LinearOp inversion_op(const Basis& basis) {
  return permutation_op(basis, [](std::vector<int> d) {
    std::reverse(d.begin(), d.end());
    return d;
  });
}

LinearOp rotation_pi_sx_op(const Basis& basis) {
  return permutation_op(basis, [](std::vector<int> d) {
    for (int& x : d) x = 2 - x;
    return d;
  });
}

CVector apply_product(const Basis& basis, const Eigen::Matrix3cd& u, const CVector& v) {
  CVector cur = v;
  CVector next(cur.size());
  for (int s = 0; s < basis.n_sites(); ++s) {
    const std::size_t stride = basis.stride(s);
    next.setZero();
    for (std::size_t idx = 0; idx < basis.dim(); ++idx) {
      const Complex a = cur(static_cast<Eigen::Index>(idx));
      if (a == Complex(0.0)) continue;
      const int d = basis.digit(idx, s);
      const std::size_t base = idx - static_cast<std::size_t>(d) * stride;
      for (int r = 0; r < 3; ++r) next(static_cast<Eigen::Index>(base + r * stride)) += u(r, d) * a;
    }
    std::swap(cur, next);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Reference states

namespace {

void require_sites(const Basis& b, int n, const char* what) {
  if (b.n_sites() != n) {
    std::ostringstream os;
    os << "reference_state: '" << what << "' is defined for " << n << " sites, basis has " << b.n_sites();
    throw ValidationError(os.str());
  }
}

SpinState from_pattern_list(const BasisPtr& basis, std::initializer_list<std::pair<const char*, double>> terms) {
  CVector amps = CVector::Zero(static_cast<Eigen::Index>(basis->dim()));
  for (const auto& [label, c] : terms) amps(static_cast<Eigen::Index>(basis->index_of_label(label))) = c;
  return SpinState(basis, amps);
}

}  // namespace

SpinState reference_state(const BasisPtr& basis, ReferenceState which) {
  switch (which) {
    case ReferenceState::all_zero: {
      CVector amps = CVector::Zero(static_cast<Eigen::Index>(basis->dim()));
      amps(static_cast<Eigen::Index>(basis->index_of_label(std::string(basis->n_sites(), '0')))) = 1.0;
      return SpinState(basis, amps);
    }
    case ReferenceState::eq10_ground: {
      require_sites(*basis, 3, "eq10_ground");
      const double a = std::sqrt(0.16);
      const double b = std::sqrt(0.18);
      return from_pattern_list(basis,
                               {{"0-+", a}, {"0+-", -a}, {"-+0", a}, {"+-0", -a}, {"+0-", b}, {"-0+", -b}});
    }
    case ReferenceState::aklt3:
      require_sites(*basis, 3, "aklt3");
      return aklt_state(basis, kDefaultAkltBoundary);
    case ReferenceState::two_spin_ground:
    case ReferenceState::two_spin_top: {
      require_sites(*basis, 2, "two_spin_ground/top");
      const double s = which == ReferenceState::two_spin_ground ? -0.5 : 0.5;
      return from_pattern_list(basis, {{"00", 1.0 / std::sqrt(2.0)}, {"-+", s}, {"+-", s}});
    }
  }
  throw ValidationError("reference_state: unknown state");
}

ReferenceState parse_reference_state(std::string_view name) {
  if (name == "all_zero") return ReferenceState::all_zero;
  if (name == "eq10_ground") return ReferenceState::eq10_ground;
  if (name == "aklt3") return ReferenceState::aklt3;
  if (name == "two_spin_ground") return ReferenceState::two_spin_ground;
  if (name == "two_spin_top") return ReferenceState::two_spin_top;
  throw ValidationError("unknown reference state '" + std::string(name) + "'");
}

std::string to_string(ReferenceState which) {
  switch (which) {
    case ReferenceState::all_zero: return "all_zero";
    case ReferenceState::eq10_ground: return "eq10_ground";
    case ReferenceState::aklt3: return "aklt3";
    case ReferenceState::two_spin_ground: return "two_spin_ground";
    case ReferenceState::two_spin_top: return "two_spin_top";
  }
  return "?";
}

std::string to_string(AkltBoundary b) {
  switch (b) {
    case AkltBoundary::up_up: return "up_up";
    case AkltBoundary::up_down: return "up_down";
    case AkltBoundary::down_up: return "down_up";
    case AkltBoundary::down_down: return "down_down";
    case AkltBoundary::trace: return "trace";
  }
  return "?";
}

namespace {

SpinState aklt_unnormalized(const BasisPtr& basis, AkltBoundary boundary) {
  // A[digit] in the (up, down) auxiliary basis.
  std::array<Eigen::Matrix2d, 3> a;
  a[2] << 0.0, std::sqrt(2.0 / 3.0), 0.0, 0.0;        // |+>: sqrt(2/3) sigma^+
  a[1] << -std::sqrt(1.0 / 3.0), 0.0, 0.0, std::sqrt(1.0 / 3.0);  // |0>: -sqrt(1/3) sigma^z
  a[0] << 0.0, 0.0, -std::sqrt(2.0 / 3.0), 0.0;       // |->: -sqrt(2/3) sigma^-

  CVector amps(static_cast<Eigen::Index>(basis->dim()));
  for (std::size_t idx = 0; idx < basis->dim(); ++idx) {
    Eigen::Matrix2d prod = Eigen::Matrix2d::Identity();
    for (int s = 0; s < basis->n_sites(); ++s) prod = prod * a[basis->digit(idx, s)];
    double v = 0.0;
    switch (boundary) {
      case AkltBoundary::up_up: v = prod(0, 0); break;
      case AkltBoundary::up_down: v = prod(0, 1); break;
      case AkltBoundary::down_up: v = prod(1, 0); break;
      case AkltBoundary::down_down: v = prod(1, 1); break;
      case AkltBoundary::trace: v = prod.trace(); break;
    }
    amps(static_cast<Eigen::Index>(idx)) = v;
  }
  return SpinState(basis, amps);
}

}  // namespace

SpinState aklt_state(const BasisPtr& basis, AkltBoundary boundary) {
  SpinState s = aklt_unnormalized(basis, boundary);
  return s.norm() > 1e-14 ? s.normalized() : s;
}

std::vector<AkltOverlap> aklt_boundary_overlaps(const SpinState& target) {
  std::vector<AkltOverlap> out;
  const SpinState t = target.normalized();
  for (AkltBoundary b : {AkltBoundary::up_up, AkltBoundary::up_down, AkltBoundary::down_up,
                         AkltBoundary::down_down, AkltBoundary::trace}) {
    SpinState s = aklt_unnormalized(target.basis_ptr(), b);
    const double nrm = s.norm();
    double ov = 0.0;
    if (nrm > 1e-14) ov = s.normalized().fidelity(t);
    out.push_back({b, nrm, ov});
  }
  return out;
}

}  // namespace ionsim
