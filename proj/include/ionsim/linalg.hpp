#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ionsim/quantum.hpp"

namespace ionsim {

/// Blocks larger than this are handled by Krylov methods instead of dense
/// eigendecomposition.
inline constexpr std::size_t kDenseBlockCap = 2500;

/// Connected components of the nonzero pattern of a square matrix. Each
/// component is an ascending index list; components are ordered by their
/// smallest index.
std::vector<std::vector<std::size_t>> connected_blocks(const SparseMatrix& m);

/// Dense principal submatrix on the given indices.
CMatrix dense_block(const SparseMatrix& m, std::span<const std::size_t> indices);

/// Eigendecomposition of a Hermitian operator, stored block by block.
/// Propagation uses exp(-i 2 pi H t) with H in Hz.
class Spectrum {
 public:
  struct Block {
    std::vector<std::size_t> indices;
    Eigen::VectorXd values;
    CMatrix vectors;
  };

  explicit Spectrum(const LinearOp& h);
  /// Restricts the decomposition to the given index subset (which must be
  /// invariant under h).
  Spectrum(const LinearOp& h, std::span<const std::size_t> subset);

  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t dim() const { return dim_; }

  CVector evolve(const CVector& psi, double duration) const;

  /// All eigenvalues, ascending.
  Eigen::VectorXd eigenvalues() const;

  /// Eigenpairs sorted by energy, embedded in the full space.
  std::vector<std::pair<double, CVector>> sorted_eigenpairs() const;

 private:
  void add_block(const SparseMatrix& m, std::vector<std::size_t> indices);

  std::size_t dim_ = 0;
  std::vector<Block> blocks_;
};

/// exp(-i 2 pi t H) v via adaptive Lanczos steps.
CVector expm_krylov(const SparseMatrix& h, const CVector& v, double duration, double tol = 1e-12);

/// Static propagation. Dense blockwise when all nonzero-pattern blocks are
/// below kDenseBlockCap, Krylov otherwise.
CVector propagate(const LinearOp& h, const CVector& v, double duration);

/// Lowest eigenpairs of h restricted to `subset` (all indices if empty).
struct LowestEigen {
  Eigen::VectorXd energies;  // ascending
  CMatrix vectors;           // full-space columns
};
LowestEigen lowest_eigenpairs(const LinearOp& h, std::span<const std::size_t> subset, int count);

/// Runs fn(i) for i in [0, n) on IONSIM_THREADS worker threads (default:
/// hardware concurrency). Each index must write only its own output slot.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

int worker_threads();

}  // namespace ionsim
