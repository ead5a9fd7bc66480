#include "ionsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "ionsim/errors.hpp"

namespace ionsim {

namespace {

constexpr double kTwoPi = 6.283185307179586476925;

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

std::vector<std::vector<std::size_t>> group(DisjointSet& ds, std::span<const std::size_t> members) {
  std::unordered_map<std::size_t, std::size_t> slot;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i : members) {
    const std::size_t root = ds.find(i);
    auto [it, inserted] = slot.try_emplace(root, out.size());
    if (inserted) out.emplace_back();
    out[it->second].push_back(i);
  }
  return out;
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

// Lanczos basis with full reorthogonalization. Returns the number of vectors
// built (may stop early on breakdown).
struct LanczosRun {
  CMatrix basis;
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;  // beta(j) couples j and j+1; beta(m-1) is the residual norm
  int size = 0;
};

LanczosRun lanczos(const SparseMatrix& h, const CVector& start, int max_dim) {
  const auto n = start.size();
  max_dim = static_cast<int>(std::min<Eigen::Index>(max_dim, n));
  LanczosRun run;
  run.basis.resize(n, max_dim);
  run.alpha.resize(max_dim);
  run.beta.resize(max_dim);
  CVector v = start / start.norm();
  const double scale = std::max(1.0, max_row_sum(h));
  for (int j = 0; j < max_dim; ++j) {
    run.basis.col(j) = v;
    CVector w = h * v;
    run.alpha(j) = v.dot(w).real();
    // Two passes of classical Gram-Schmidt against the whole basis.
    for (int pass = 0; pass < 2; ++pass) {
      CVector coeffs = run.basis.leftCols(j + 1).adjoint() * w;
      w -= run.basis.leftCols(j + 1) * coeffs;
    }
    const double b = w.norm();
    run.beta(j) = b;
    run.size = j + 1;
    if (b < 1e-13 * scale) {
      run.beta(j) = 0.0;
      break;
    }
    v = w / b;
  }
  return run;
}

Eigen::MatrixXd tridiagonal(const LanczosRun& run) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(run.size, run.size);
  for (int j = 0; j < run.size; ++j) {
    t(j, j) = run.alpha(j);
    if (j + 1 < run.size) t(j, j + 1) = t(j + 1, j) = run.beta(j);
  }
  return t;
}

}  // namespace

std::vector<std::vector<std::size_t>> connected_blocks(const SparseMatrix& m) {
  const auto n = static_cast<std::size_t>(m.rows());
  DisjointSet ds(n);
  for (int r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it)
      if (it.value() != Complex(0.0)) ds.unite(static_cast<std::size_t>(it.row()), static_cast<std::size_t>(it.col()));
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  return group(ds, all);
}

CMatrix dense_block(const SparseMatrix& m, std::span<const std::size_t> indices) {
  const auto k = static_cast<Eigen::Index>(indices.size());
  std::unordered_map<std::size_t, Eigen::Index> pos;
  pos.reserve(indices.size());
  for (Eigen::Index i = 0; i < k; ++i) pos.emplace(indices[static_cast<std::size_t>(i)], i);
  CMatrix out = CMatrix::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (SparseMatrix::InnerIterator it(m, static_cast<Eigen::Index>(indices[static_cast<std::size_t>(i)])); it; ++it) {
      auto found = pos.find(static_cast<std::size_t>(it.col()));
      if (found != pos.end()) out(i, found->second) = it.value();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectrum

Spectrum::Spectrum(const LinearOp& h) : dim_(h.dim()) {
  if (!h.hermitian()) throw ValidationError("Spectrum: operator is not flagged hermitian");
  for (auto& block : connected_blocks(h.matrix())) add_block(h.matrix(), std::move(block));
}

Spectrum::Spectrum(const LinearOp& h, std::span<const std::size_t> subset) : dim_(h.dim()) {
  if (!h.hermitian()) throw ValidationError("Spectrum: operator is not flagged hermitian");
  std::vector<char> inside(h.dim(), 0);
  for (std::size_t i : subset) inside[i] = 1;
  DisjointSet ds(h.dim());
  const SparseMatrix& m = h.matrix();
  for (std::size_t r : subset) {
    for (SparseMatrix::InnerIterator it(m, static_cast<Eigen::Index>(r)); it; ++it) {
      if (it.value() == Complex(0.0)) continue;
      const auto c = static_cast<std::size_t>(it.col());
      if (!inside[c]) throw ValidationError("Spectrum: subset is not invariant under the operator");
      ds.unite(r, c);
    }
  }
  for (auto& block : group(ds, subset)) {
    std::sort(block.begin(), block.end());
    add_block(m, std::move(block));
  }
}

void Spectrum::add_block(const SparseMatrix& m, std::vector<std::size_t> indices) {
  if (indices.size() > kDenseBlockCap) {
    std::ostringstream os;
    os << "Spectrum: block of dimension " << indices.size() << " exceeds the dense cap " << kDenseBlockCap;
    throw ValidationError(os.str());
  }
  Block b;
  CMatrix dense = dense_block(m, indices);
  if (indices.size() == 1) {
    b.values = Eigen::VectorXd::Constant(1, dense(0, 0).real());
    b.vectors = CMatrix::Identity(1, 1);
  } else {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(dense);
    if (es.info() != Eigen::Success) throw NumericalError("Spectrum: eigensolver failed");
    b.values = es.eigenvalues();
    b.vectors = es.eigenvectors();
  }
  b.indices = std::move(indices);
  blocks_.push_back(std::move(b));
}

CVector Spectrum::evolve(const CVector& psi, double duration) const {
  if (static_cast<std::size_t>(psi.size()) != dim_) throw ValidationError("Spectrum::evolve: dimension mismatch");
  CVector out = psi;
  for (const auto& b : blocks_) {
    const auto k = static_cast<Eigen::Index>(b.indices.size());
    CVector local(k);
    for (Eigen::Index i = 0; i < k; ++i) local(i) = psi(static_cast<Eigen::Index>(b.indices[i]));
    CVector coeffs = b.vectors.adjoint() * local;
    for (Eigen::Index i = 0; i < k; ++i) coeffs(i) *= std::polar(1.0, -kTwoPi * b.values(i) * duration);
    local = b.vectors * coeffs;
    for (Eigen::Index i = 0; i < k; ++i) out(static_cast<Eigen::Index>(b.indices[i])) = local(i);
  }
  return out;
}

Eigen::VectorXd Spectrum::eigenvalues() const {
  std::vector<double> all;
  for (const auto& b : blocks_) all.insert(all.end(), b.values.data(), b.values.data() + b.values.size());
  std::sort(all.begin(), all.end());
  return Eigen::Map<Eigen::VectorXd>(all.data(), static_cast<Eigen::Index>(all.size()));
}

std::vector<std::pair<double, CVector>> Spectrum::sorted_eigenpairs() const {
  std::vector<std::pair<double, CVector>> out;
  for (const auto& b : blocks_) {
    for (Eigen::Index j = 0; j < b.values.size(); ++j) {
      CVector v = CVector::Zero(static_cast<Eigen::Index>(dim_));
      for (std::size_t i = 0; i < b.indices.size(); ++i)
        v(static_cast<Eigen::Index>(b.indices[i])) = b.vectors(static_cast<Eigen::Index>(i), j);
      out.emplace_back(b.values(j), std::move(v));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

// ---------------------------------------------------------------------------
// Krylov propagation

CVector expm_krylov(const SparseMatrix& h, const CVector& v, double duration, double tol) {
  const double v_norm = v.norm();
  if (v_norm == 0.0 || duration == 0.0) return v;
  const double h_norm = std::max(max_row_sum(h), 1e-300);
  constexpr int kKrylovDim = 30;

  CVector w = v;
  double t = 0.0;
  double step = std::min(std::abs(duration), 0.5 * kKrylovDim / (kTwoPi * h_norm));
  const double sign = duration < 0 ? -1.0 : 1.0;
  const double total = std::abs(duration);
  int rejections = 0;
  while (t < total) {
    step = std::min(step, total - t);
    const double w_norm = w.norm();
    LanczosRun run = lanczos(h, w, kKrylovDim);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tridiagonal(run));
    const Eigen::VectorXd& lam = es.eigenvalues();
    const Eigen::MatrixXd& q = es.eigenvectors();
    Eigen::VectorXcd phase(run.size);
    for (int j = 0; j < run.size; ++j) phase(j) = std::polar(1.0, -kTwoPi * sign * step * lam(j)) * q(0, j);
    Eigen::VectorXcd small = q.cast<Complex>() * phase;
    const double err = w_norm * run.beta(run.size - 1) * std::abs(small(run.size - 1));
    if (err > tol * std::max(step / total, 1e-3) && run.beta(run.size - 1) != 0.0) {
      step *= 0.5;
      if (++rejections > 200) throw NumericalError("expm_krylov: step control failed");
      continue;
    }
    w = w_norm * (run.basis.leftCols(run.size) * small);
    t += step;
    step *= 1.5;
  }
  return w;
}

CVector propagate(const LinearOp& h, const CVector& v, double duration) {
  if (duration == 0.0) return v;
  auto blocks = connected_blocks(h.matrix());
  std::size_t largest = 0;
  for (const auto& b : blocks) largest = std::max(largest, b.size());
  if (largest <= kDenseBlockCap) {
    Spectrum spec(h);
    return spec.evolve(v, duration);
  }
  return expm_krylov(h.matrix(), v, duration);
}

// ---------------------------------------------------------------------------
// Ground states

LowestEigen lowest_eigenpairs(const LinearOp& h, std::span<const std::size_t> subset, int count) {
  if (!h.hermitian()) throw ValidationError("lowest_eigenpairs: operator is not flagged hermitian");
  std::vector<std::size_t> all;
  if (subset.empty()) {
    all.resize(h.dim());
    std::iota(all.begin(), all.end(), 0);
    subset = all;
  }
  if (subset.empty()) throw ValidationError("lowest_eigenpairs: empty subset");

  // Component decomposition inside the subset.
  std::vector<char> inside(h.dim(), 0);
  for (std::size_t i : subset) inside[i] = 1;
  DisjointSet ds(h.dim());
  for (std::size_t r : subset)
    for (SparseMatrix::InnerIterator it(h.matrix(), static_cast<Eigen::Index>(r)); it; ++it) {
      if (it.value() == Complex(0.0)) continue;
      const auto c = static_cast<std::size_t>(it.col());
      if (!inside[c]) throw ValidationError("lowest_eigenpairs: subset is not invariant under the operator");
      ds.unite(r, c);
    }

  std::vector<std::pair<double, CVector>> candidates;
  for (auto& block : group(ds, subset)) {
    std::sort(block.begin(), block.end());
    const auto k = static_cast<Eigen::Index>(block.size());
    auto embed = [&](const CVector& local) {
      CVector v = CVector::Zero(static_cast<Eigen::Index>(h.dim()));
      for (Eigen::Index i = 0; i < k; ++i) v(static_cast<Eigen::Index>(block[i])) = local(i);
      return v;
    };
    if (block.size() <= kDenseBlockCap) {
      CMatrix dense = dense_block(h.matrix(), block);
      Eigen::SelfAdjointEigenSolver<CMatrix> es(dense);
      if (es.info() != Eigen::Success) throw NumericalError("lowest_eigenpairs: eigensolver failed");
      for (Eigen::Index j = 0; j < std::min<Eigen::Index>(k, count); ++j)
        candidates.emplace_back(es.eigenvalues()(j), embed(es.eigenvectors().col(j)));
      continue;
    }
    // Large block: Lanczos with full reorthogonalization on the block.
    std::vector<Eigen::Triplet<Complex>> trips;
    std::unordered_map<std::size_t, int> pos;
    for (Eigen::Index i = 0; i < k; ++i) pos.emplace(block[i], static_cast<int>(i));
    for (Eigen::Index i = 0; i < k; ++i)
      for (SparseMatrix::InnerIterator it(h.matrix(), static_cast<Eigen::Index>(block[i])); it; ++it)
        trips.emplace_back(static_cast<int>(i), pos.at(static_cast<std::size_t>(it.col())), it.value());
    SparseMatrix local(k, k);
    local.setFromTriplets(trips.begin(), trips.end());
    CVector start(k);
    for (Eigen::Index i = 0; i < k; ++i) start(i) = Complex(1.0 + 0.01 * std::sin(1.0 + i), 0.003 * std::cos(2.0 * i));
    const int max_dim = static_cast<int>(std::min<Eigen::Index>(k, 400));
    LanczosRun run = lanczos(local, start, max_dim);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tridiagonal(run));
    const double residual_scale = std::max(1.0, max_row_sum(local));
    for (int j = 0; j < std::min(run.size, count); ++j) {
      const double res = std::abs(run.beta(run.size - 1) * es.eigenvectors()(run.size - 1, j));
      if (res > 1e-8 * residual_scale) throw NumericalError("lowest_eigenpairs: Lanczos did not converge");
      CVector ritz = run.basis.leftCols(run.size) * es.eigenvectors().col(j).cast<Complex>();
      candidates.emplace_back(es.eigenvalues()(j), embed(ritz.normalized()));
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const auto keep = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(count));
  LowestEigen out;
  out.energies.resize(static_cast<Eigen::Index>(keep));
  out.vectors.resize(static_cast<Eigen::Index>(h.dim()), static_cast<Eigen::Index>(keep));
  for (std::size_t j = 0; j < keep; ++j) {
    out.energies(static_cast<Eigen::Index>(j)) = candidates[j].first;
    out.vectors.col(static_cast<Eigen::Index>(j)) = candidates[j].second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Threads

int worker_threads() {
  if (const char* env = std::getenv("IONSIM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ionsim
