#pragma once

#include "deepwas/common.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace deepwas {

/// Matrix-free square operator. `apply` must be linear and safe to call
/// concurrently.
struct LinearOperator {
  Index dim = 0;
  std::function<Vec(const Vec&)> apply;
  bool is_spd = false;

  Vec operator()(const Vec& x) const { return apply(x); }
};

/// Wraps a dense matrix (shared, so copies of the operator stay cheap).
LinearOperator dense_operator(Mat A, bool is_spd = true);
LinearOperator diagonal_operator(Vec d);

struct SolverReport {
  Index iterations = 0;
  double final_residual = 0;  // ||op(x) - rhs|| / ||rhs||
  bool converged = false;
};

struct CgResult {
  Vec x;
  SolverReport report;
};

/// Preconditioned conjugate gradients from x0 = 0. Stops once the relative
/// residual against ||rhs|| reaches rel_tol. Hitting max_iter is reported,
/// not thrown; NaN/Inf iterates throw NumericalError. `precond` applies an
/// approximation of op^-1.
CgResult cg_solve(const LinearOperator& op, const Vec& rhs, double rel_tol, Index max_iter,
                  const LinearOperator* precond = nullptr);

enum class ProbeKind { rademacher, gaussian };

Vec draw_probe(Index dim, ProbeKind kind, std::uint64_t seed);

struct LanczosResult {
  Vec alpha;  // diagonal of T
  Vec beta;   // off-diagonal of T, length alpha.size() - 1
};

/// Plain Lanczos (no reorthogonalization) started from `start`. Stops early
/// when an off-diagonal coefficient drops below 1e-14.
LanczosResult lanczos(const LinearOperator& op, const Vec& start, Index steps);

/// Eigenvalues of the Lanczos tridiagonal, ascending.
Vec ritz_values(const LinearOperator& op, Index steps, std::uint64_t seed);

/// Stochastic Lanczos quadrature estimate of log|op|.
double slq_logdet(const LinearOperator& op, Index num_probes, Index lanczos_steps,
                  std::uint64_t seed, ProbeKind kind = ProbeKind::rademacher);

struct ProbePair {
  Vec u;
  Vec solved;  // op^-1 u
  SolverReport report;
};

/// Probes u together with CG solves op^-1 u, for Hutchinson trace estimates
/// E[(op^-1 u)^T D u] = trace(op^-1 D). Throws NumericalError carrying the
/// report if a solve does not converge.
std::vector<ProbePair> hutchinson_probe_pairs(const LinearOperator& op, double solve_tol,
                                              Index num_probes, std::uint64_t seed,
                                              ProbeKind kind = ProbeKind::rademacher,
                                              Index max_iter = 0,
                                              const LinearOperator* precond = nullptr);

/// Randomized Nystrom approximation op ~ U diag(lambda) U^T of the given
/// rank, returned as the preconditioner
///   P^-1 = U (Lambda + shift)^-1 U^T + (lambda_rank + shift)^-1 (I - U U^T).
/// Throws ArgumentError if rank >= dim.
LinearOperator nystrom_preconditioner(const LinearOperator& op, Index rank, double shift,
                                      std::uint64_t seed);

struct DenseNll {
  double quad = 0;     // b^T A^dagger b
  double logpdet = 0;  // log |A|_+
  Index rank = 0;
};

/// Full eigendecomposition with the clip_spectrum rule.
DenseNll dense_nll_oracle(const Mat& A, const Vec& b, double rel_tol = 1e-8);

}  // namespace deepwas
