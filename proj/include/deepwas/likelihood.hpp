#pragma once

#include "deepwas/common.hpp"
#include "deepwas/iterlinalg.hpp"
#include "deepwas/ldcore.hpp"

#include <cstdint>

namespace deepwas {

enum class Method { dense, iterative };

struct SolverConfig {
  double cg_rel_tol = 1e-6;
  Index cg_max_iter = 0;  // 0: 10 * dim + 10
  Index num_probes = 100;
  Index lanczos_steps = 40;
  ProbeKind probe_kind = ProbeKind::rademacher;
};

/// B = I + sigma_N^-2 F^1/2 W F^1/2 on the flank of one window. SPD with
/// every eigenvalue >= 1. Holds a pointer to the window, which must outlive it.
struct BOperator {
  const PrecomputedWindow* window = nullptr;
  Vec sqrt_f;
  double sigma2_N = 0;

  Vec apply(const Vec& v) const;
  Mat dense() const;
  LinearOperator as_operator() const;
};

/// Throws ArgumentError on negative/non-finite f or nonpositive sigma2_N.
BOperator make_b_operator(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N);

/// Negative log likelihood of one window with the constant dropped:
/// nll = (quad + logdet) / 2 with quad = b^T A^dagger b, logdet = log|A|_+.
struct WindowLoss {
  double nll = 0;
  double quad = 0;
  double logdet = 0;
  Vec grad_f_flank;  // empty when only the value was requested
  SolverReport solver_report;
  Index probe_iterations = 0;  // CG iterations summed over Hutchinson probes
};

WindowLoss window_nll(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N,
                      Method method, const SolverConfig& cfg = {}, std::uint64_t seed = 0);

/// Value and gradient with respect to f on the flank. The quadratic term's
/// gradient is exact (one extra solve); the log-det gradient is exact under
/// Method::dense and a Hutchinson estimate under Method::iterative.
WindowLoss window_nll_grad(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N,
                           Method method, const SolverConfig& cfg = {}, std::uint64_t seed = 0);

/// window_nll at f = 0.
double null_nll(const PrecomputedWindow& window, double sigma2_N);

// ---------------------------------------------------------------------------
// A-form paths, A = R_core,flank F R_flank,core + sigma_N^2 R_core,core. Used
// by the benchmark and as cross-checks for the B-form.

Mat dense_a_matrix(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N);

/// Cholesky-based exact value and gradient.
WindowLoss a_form_nll_grad_dense(const PrecomputedWindow& window, const Vec& f_flank,
                                 double sigma2_N);

struct NystromOptions {
  Index rank = 0;  // 0 disables preconditioning
  double shift = 1e-8;
};

/// CG + SLQ + Hutchinson on the A-form, optionally Nystrom-preconditioned
/// CG solves.
WindowLoss a_form_nll_grad_iterative(const PrecomputedWindow& window, const Vec& f_flank,
                                     double sigma2_N, const SolverConfig& cfg, std::uint64_t seed,
                                     const NystromOptions& nystrom = {});

// ---------------------------------------------------------------------------
// LD score regression objective

struct ObjectiveValue {
  double value = 0;
  Vec grad_f;
};

/// sum_i (1/l_i) (N h2 l_i / M + 1)^-2 (N (R^2 f)_i + sigma2 - N beta_i^2)^2
/// where row i of `r_terms` holds R(i, k) for every k indexing f.
ObjectiveValue ldsr_objective(const Vec& beta_hat, const Vec& ld_scores, const Mat& r_terms,
                              const Vec& f, double sigma2, double N, double M, double h2_guess);

/// Genome-wide form over the banded matrix.
ObjectiveValue ldsr_objective(const Vec& beta_hat, const BandedCorrelationMatrix& R,
                              const Vec& ld_scores, const Vec& f, double sigma2, double N,
                              double h2_guess);

/// One window: terms over the core, f over the flank, M = total variants.
ObjectiveValue ldsr_window_objective(const PrecomputedWindow& window, const Vec& f_flank,
                                     double sigma2, double N, double M, double h2_guess);

/// Moment estimate of total heritability in the weighting's units,
/// M (mean(N beta^2) - sigma2) / (N mean(l)), floored at 1e-6.
double ldsr_h2_ballpark(const Vec& beta_hat, const Vec& ld_scores, double sigma2, double N);

/// sum_i N b_i^2 / (N s_i + sigma2) + log(N s_i + sigma2), s_i = sum_m f_m R(i,m)^2.
double window1_limit_nll(const Vec& beta_hat, const BandedCorrelationMatrix& R, const Vec& f,
                         double sigma2, double N);

}  // namespace deepwas
