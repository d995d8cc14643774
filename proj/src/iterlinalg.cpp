#include "deepwas/iterlinalg.hpp"

#include "deepwas/ldcore.hpp"
#include "deepwas/rng.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace deepwas {

LinearOperator dense_operator(Mat A, bool is_spd) {
  if (A.rows() != A.cols()) throw ArgumentError("dense_operator: matrix is not square");
  auto shared = std::make_shared<const Mat>(std::move(A));
  LinearOperator op;
  op.dim = shared->rows();
  op.apply = [shared](const Vec& x) -> Vec { return (*shared) * x; };
  op.is_spd = is_spd;
  return op;
}

LinearOperator diagonal_operator(Vec d) {
  auto shared = std::make_shared<const Vec>(std::move(d));
  LinearOperator op;
  op.dim = shared->size();
  op.apply = [shared](const Vec& x) -> Vec { return shared->cwiseProduct(x); };
  op.is_spd = (shared->array() > 0).all();
  return op;
}

namespace {

void check_dims(const LinearOperator& op, const Vec& v, const char* who) {
  if (v.size() != op.dim) {
    std::ostringstream msg;
    msg << who << ": vector of length " << v.size() << " for operator of dim " << op.dim;
    throw ArgumentError(msg.str());
  }
}

}  // namespace

CgResult cg_solve(const LinearOperator& op, const Vec& rhs, double rel_tol, Index max_iter,
                  const LinearOperator* precond) {
  check_dims(op, rhs, "cg_solve");
  if (max_iter <= 0) max_iter = 10 * op.dim + 10;
  CgResult out;
  out.x = Vec::Zero(op.dim);
  const double bnorm = rhs.norm();
  if (!std::isfinite(bnorm)) throw NumericalError("cg_solve: non-finite right-hand side");
  if (bnorm == 0) {
    out.report = {0, 0.0, true};
    return out;
  }

  auto precondition = [&](const Vec& r) { return precond ? precond->apply(r) : r; };
  Vec r = rhs;
  Vec z = precondition(r);
  Vec p = z;
  double rz = r.dot(z);
  double res = 1.0;
  Index k = 0;
  while (k < max_iter) {
    ++k;
    const Vec Ap = op.apply(p);
    const double pAp = p.dot(Ap);
    if (!std::isfinite(pAp)) throw NumericalError("cg_solve: non-finite iterate");
    if (pAp <= 0) throw NumericalError("cg_solve: operator is not positive definite");
    const double a = rz / pAp;
    out.x.noalias() += a * p;
    r.noalias() -= a * Ap;
    res = r.norm() / bnorm;
    if (!std::isfinite(res)) throw NumericalError("cg_solve: non-finite residual");
    if (res <= rel_tol) {
      // The recursive residual drifts; confirm against the true one.
      r = rhs - op.apply(out.x);
      res = r.norm() / bnorm;
      if (res <= rel_tol) {
        out.report = {k, res, true};
        return out;
      }
      z = precondition(r);
      p = z;
      rz = r.dot(z);
      continue;
    }
    z = precondition(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  out.report = {k, res, false};
  return out;
}

Vec draw_probe(Index dim, ProbeKind kind, std::uint64_t seed) {
  Rng rng(seed);
  Vec u(dim);
  if (kind == ProbeKind::rademacher) {
    std::uint64_t bits = 0;
    for (Index i = 0; i < dim; ++i) {
      if (i % 64 == 0) bits = rng();
      u[i] = (bits & 1) ? 1.0 : -1.0;
      bits >>= 1;
    }
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < dim; ++i) u[i] = normal(rng);
  }
  return u;
}

LanczosResult lanczos(const LinearOperator& op, const Vec& start, Index steps) {
  check_dims(op, start, "lanczos");
  const double n0 = start.norm();
  if (!(n0 > 0)) throw ArgumentError("lanczos: zero start vector");
  steps = std::max<Index>(1, std::min(steps, op.dim));
  std::vector<double> alpha, beta;
  Vec q = start / n0;
  Vec q_prev = Vec::Zero(op.dim);
  double b_prev = 0;
  for (Index j = 0; j < steps; ++j) {
    Vec v = op.apply(q);
    if (j > 0) v.noalias() -= b_prev * q_prev;
    const double a = q.dot(v);
    if (!std::isfinite(a)) throw NumericalError("lanczos: non-finite coefficient");
    v.noalias() -= a * q;
    alpha.push_back(a);
    if (j + 1 == steps) break;
    const double b = v.norm();
    if (b < 1e-14 * std::max(1.0, std::abs(a))) break;
    beta.push_back(b);
    q_prev = std::move(q);
    q = v / b;
    b_prev = b;
  }
  LanczosResult out;
  out.alpha = Eigen::Map<Vec>(alpha.data(), static_cast<Index>(alpha.size()));
  out.beta = Eigen::Map<Vec>(beta.data(), static_cast<Index>(beta.size()));
  return out;
}

namespace {

// Eigen-decomposition of the Lanczos tridiagonal.
Eigen::SelfAdjointEigenSolver<Mat> tridiagonal_eigen(const LanczosResult& lz) {
  // computeFromTridiagonal occasionally fails to converge on well-posed
  // input; the dense solver on the (small) tridiagonal is robust.
  const Index k = lz.alpha.size();
  Mat T = Mat::Zero(k, k);
  T.diagonal() = lz.alpha;
  if (k > 1) {
    T.diagonal(1) = lz.beta;
    T.diagonal(-1) = lz.beta;
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(T);
  if (eig.info() != Eigen::Success) throw NumericalError("lanczos: tridiagonal eigensolve failed");
  return eig;
}

}  // namespace

Vec ritz_values(const LinearOperator& op, Index steps, std::uint64_t seed) {
  const Vec start = draw_probe(op.dim, ProbeKind::gaussian, seed);
  return tridiagonal_eigen(lanczos(op, start, steps)).eigenvalues();
}

double slq_logdet(const LinearOperator& op, Index num_probes, Index lanczos_steps,
                  std::uint64_t seed, ProbeKind kind) {
  if (num_probes <= 0) throw ArgumentError("slq_logdet: need at least one probe");
  double total = 0;
  for (Index k = 0; k < num_probes; ++k) {
    const Vec u = draw_probe(op.dim, kind, derive_seed({seed, static_cast<std::uint64_t>(k)}));
    const auto eig = tridiagonal_eigen(lanczos(op, u, lanczos_steps));
    const Vec& theta = eig.eigenvalues();
    if (theta.minCoeff() <= 0)
      throw NumericalError("slq_logdet: nonpositive Ritz value, operator is not SPD");
    const Vec tau2 = eig.eigenvectors().row(0).transpose().array().square();
    total += u.squaredNorm() * tau2.dot(theta.array().log().matrix());
  }
  return total / static_cast<double>(num_probes);
}

std::vector<ProbePair> hutchinson_probe_pairs(const LinearOperator& op, double solve_tol,
                                              Index num_probes, std::uint64_t seed,
                                              ProbeKind kind, Index max_iter,
                                              const LinearOperator* precond) {
  std::vector<ProbePair> pairs;
  pairs.reserve(static_cast<std::size_t>(std::max<Index>(num_probes, 0)));
  for (Index k = 0; k < num_probes; ++k) {
    ProbePair pair;
    pair.u = draw_probe(op.dim, kind, derive_seed({seed, static_cast<std::uint64_t>(k)}));
    auto solved = cg_solve(op, pair.u, solve_tol, max_iter, precond);
    if (!solved.report.converged) {
      std::ostringstream msg;
      msg << "hutchinson_probe_pairs: CG stalled at relative residual "
          << solved.report.final_residual << " after " << solved.report.iterations
          << " iterations";
      throw NumericalError(msg.str());
    }
    pair.solved = std::move(solved.x);
    pair.report = solved.report;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

LinearOperator nystrom_preconditioner(const LinearOperator& op, Index rank, double shift,
                                      std::uint64_t seed) {
  if (rank <= 0 || rank >= op.dim)
    throw ArgumentError("nystrom_preconditioner: rank must lie in [1, dim)");
  if (shift < 0) throw ArgumentError("nystrom_preconditioner: negative shift");
  const Index n = op.dim;

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat omega(n, rank);
  for (Index j = 0; j < rank; ++j)
    for (Index i = 0; i < n; ++i) omega(i, j) = normal(rng);
  Eigen::HouseholderQR<Mat> qr(omega);
  omega = qr.householderQ() * Mat::Identity(n, rank);

  Mat Y(n, rank);
  for (Index j = 0; j < rank; ++j) Y.col(j) = op.apply(omega.col(j));
  const double nu = std::sqrt(static_cast<double>(n)) * std::numeric_limits<double>::epsilon() *
                    Y.norm();
  Y += nu * omega;
  Mat core = omega.transpose() * Y;
  core = 0.5 * (core + core.transpose());
  Eigen::LLT<Mat> chol(core);
  if (chol.info() != Eigen::Success)
    throw NumericalError("nystrom_preconditioner: sketch core is not positive definite");
  // B = Y C^-T with C C^T = core.
  const Mat B = chol.matrixL().solve(Y.transpose()).transpose();
  Eigen::JacobiSVD<Mat> svd(B, Eigen::ComputeThinU);
  Vec lambda = (svd.singularValues().array().square() - nu).max(0.0).matrix();

  const double floor_val = lambda[rank - 1] + shift;
  if (!(floor_val > 0))
    throw ArgumentError("nystrom_preconditioner: zero shift with rank-deficient sketch");
  auto U = std::make_shared<const Mat>(svd.matrixU());
  auto inv_top = std::make_shared<const Vec>((lambda.array() + shift).inverse().matrix());
  LinearOperator pre;
  pre.dim = n;
  pre.is_spd = true;
  pre.apply = [U, inv_top, floor_val](const Vec& x) -> Vec {
    const Vec c = U->transpose() * x;
    return (*U) * inv_top->cwiseProduct(c) + (x - (*U) * c) / floor_val;
  };
  return pre;
}

DenseNll dense_nll_oracle(const Mat& A, const Vec& b, double rel_tol) {
  if (b.size() != A.rows()) throw ArgumentError("dense_nll_oracle: size mismatch");
  const ClippedSpectrum s = clip_spectrum(A, rel_tol);
  DenseNll out;
  const Vec c = s.eigvecs.transpose() * b;
  out.quad = (c.array().square() / s.eigvals.array()).sum();
  out.logpdet = s.logpdet;
  out.rank = s.rank;
  return out;
}

}  // namespace deepwas
