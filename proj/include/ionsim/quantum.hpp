#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace ionsim {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using SparseMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

/// Default site cap: 3^10 = 59049 basis states.
inline constexpr int kDefaultSiteCap = 10;

/// Spin-1 product basis. Base-3 encoding with site 0 as the most significant
/// digit; digit 0 is |->, 1 is |0>, 2 is |+>, so S_z = digit - 1.
class Basis {
 public:
  explicit Basis(int n_sites, int cap = kDefaultSiteCap);

  int n_sites() const { return n_sites_; }
  std::size_t dim() const { return dim_; }

  int digit(std::size_t index, int site) const;
  std::vector<int> digits(std::size_t index) const;
  std::size_t index_of(std::span<const int> digits) const;

  int sz_total(std::size_t index) const { return sz_total_[index]; }
  /// Per-site labels, e.g. "0+-".
  std::string label(std::size_t index) const;
  std::size_t index_of_label(std::string_view label) const;

  /// Indices with the given total S_z, ascending.
  std::vector<std::size_t> sector(int sz) const;

  /// Place value of a site's digit.
  std::size_t stride(int site) const { return strides_[static_cast<std::size_t>(site)]; }

  bool operator==(const Basis& o) const { return n_sites_ == o.n_sites_; }

 private:
  int n_sites_;
  std::size_t dim_;
  std::vector<std::size_t> strides_;
  std::vector<int> sz_total_;
};

using BasisPtr = std::shared_ptr<const Basis>;
BasisPtr make_basis(int n_sites, int cap = kDefaultSiteCap);

char spin_label_char(int digit);
int spin_label_digit(char c);

/// Sparse linear operator with a verified hermiticity flag.
class LinearOp {
 public:
  LinearOp() = default;
  LinearOp(SparseMatrix matrix, bool hermitian);

  static LinearOp zero(std::size_t dim);
  static LinearOp identity(std::size_t dim);

  const SparseMatrix& matrix() const { return matrix_; }
  std::size_t dim() const { return static_cast<std::size_t>(matrix_.rows()); }
  bool hermitian() const { return hermitian_; }

  CVector apply(const CVector& v) const { return matrix_ * v; }
  CMatrix dense() const { return CMatrix(matrix_); }
  LinearOp adjoint() const;

  /// Max-norm of A - A^dagger.
  double hermiticity_defect() const;

  friend LinearOp operator+(const LinearOp& a, const LinearOp& b);
  friend LinearOp operator-(const LinearOp& a, const LinearOp& b);
  friend LinearOp operator*(const LinearOp& a, const LinearOp& b);
  friend LinearOp operator*(double s, const LinearOp& a);
  friend LinearOp operator*(Complex s, const LinearOp& a);

 private:
  SparseMatrix matrix_;
  bool hermitian_ = false;
};

/// Max-norm of the commutator [a, b].
double commutator_max_norm(const LinearOp& a, const LinearOp& b);

/// Normalized (unless stated otherwise) amplitude vector over a Basis.
class SpinState {
 public:
  SpinState(BasisPtr basis, CVector amplitudes);

  const Basis& basis() const { return *basis_; }
  const BasisPtr& basis_ptr() const { return basis_; }
  const CVector& amplitudes() const { return amps_; }
  CVector& amplitudes() { return amps_; }

  double norm() const { return amps_.norm(); }
  SpinState normalized() const;
  Complex overlap(const SpinState& other) const;  // <this|other>
  double fidelity(const SpinState& other) const { return std::norm(overlap(other)); }
  double probability(std::string_view label) const;
  Eigen::VectorXd populations() const { return amps_.cwiseAbs2(); }
  Complex expectation(const LinearOp& op) const;

 private:
  BasisPtr basis_;
  CVector amps_;
};

enum class SiteOpKind { raise, lower, sz, sz_squared };

/// Spin-1 matrix embedded at a site (0-based), identity elsewhere.
LinearOp site_operator(const Basis& basis, int site, SiteOpKind kind);

/// Diagonal 0/1 projector onto total S_z = sz.
LinearOp subspace_projector(const Basis& basis, int sz);

/// Site reversal i -> n-1-i.
LinearOp inversion_op(const Basis& basis);

/// exp(-i pi S_x) on every site, with the global phase (-1)^n removed so that
/// |00...0> has eigenvalue +1. On labels: |+> <-> |->, |0> -> |0>.
LinearOp rotation_pi_sx_op(const Basis& basis);

/// Single-site 3x3 matrix in the digit ordering (-, 0, +).
Eigen::Matrix3cd spin_matrix(SiteOpKind kind);

/// Applies the same 3x3 unitary to every site.
CVector apply_product(const Basis& basis, const Eigen::Matrix3cd& site_unitary, const CVector& v);

enum class ReferenceState { all_zero, eq10_ground, aklt3, two_spin_ground, two_spin_top };

SpinState reference_state(const BasisPtr& basis, ReferenceState which);
ReferenceState parse_reference_state(std::string_view name);
std::string to_string(ReferenceState which);

/// Boundary closure for the AKLT matrix-product state. Open choices pick edge
/// vectors (up/down); `trace` closes the chain with the identity boundary
/// matrix.
enum class AkltBoundary { up_up, up_down, down_up, down_down, trace };

inline constexpr AkltBoundary kDefaultAkltBoundary = AkltBoundary::trace;

std::string to_string(AkltBoundary b);

/// Normalized AKLT matrix-product state on any number of sites. Returns a zero vector if
/// the chosen boundary annihilates the state.
SpinState aklt_state(const BasisPtr& basis, AkltBoundary boundary);

struct AkltOverlap {
  AkltBoundary boundary;
  double norm_before_normalization;
  double overlap;  // |<aklt|target>|^2, 0 if the boundary annihilates the state
};

std::vector<AkltOverlap> aklt_boundary_overlaps(const SpinState& target);

}  // namespace ionsim
