#include "deepwas/likelihood.hpp"

#include "deepwas/rng.hpp"

#include <cmath>
#include <sstream>

namespace deepwas {

namespace {

void check_inputs(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N) {
  if (f_flank.size() != window.flank.size())
    throw ArgumentError("f_flank has length " + std::to_string(f_flank.size()) + ", flank has " +
                        std::to_string(window.flank.size()));
  if (!(sigma2_N > 0) || !std::isfinite(sigma2_N))
    throw ArgumentError("sigma2_N must be positive and finite");
  if (!f_flank.allFinite()) throw ArgumentError("f_flank contains non-finite values");
  if ((f_flank.array() < 0).any()) throw ArgumentError("f_flank must be nonnegative");
}

NumericalError stalled(const char* what, const SolverReport& r) {
  std::ostringstream msg;
  msg << what << ": CG did not converge (relative residual " << r.final_residual << " after "
      << r.iterations << " iterations)";
  return NumericalError(msg.str());
}

// Terms shared by every B-form evaluation.
struct BTerms {
  double inv_s2 = 0;
  Vec s;        // sqrt(f)
  Vec v;        // s .* g
  bool trivial = false;  // f == 0, so B = I
};

BTerms b_terms(const PrecomputedWindow& w, const Vec& f_flank, double sigma2_N) {
  BTerms t;
  t.inv_s2 = 1.0 / sigma2_N;
  t.s = f_flank.array().sqrt();
  t.v = t.s.cwiseProduct(w.g);
  t.trivial = (f_flank.array() == 0).all();
  return t;
}

double base_logdet(const PrecomputedWindow& w, double sigma2_N) {
  return static_cast<double>(w.core_rank()) * std::log(sigma2_N) + w.logpdet_R;
}

}  // namespace

Vec BOperator::apply(const Vec& v) const {
  return v + (1.0 / sigma2_N) * sqrt_f.cwiseProduct(window->W * sqrt_f.cwiseProduct(v));
}

Mat BOperator::dense() const {
  Mat B = (1.0 / sigma2_N) * (sqrt_f.asDiagonal() * window->W * sqrt_f.asDiagonal());
  B.diagonal().array() += 1.0;
  return B;
}

LinearOperator BOperator::as_operator() const {
  LinearOperator op;
  op.dim = sqrt_f.size();
  op.is_spd = true;
  op.apply = [self = *this](const Vec& v) { return self.apply(v); };
  return op;
}

BOperator make_b_operator(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N) {
  check_inputs(window, f_flank, sigma2_N);
  return BOperator{&window, f_flank.array().sqrt(), sigma2_N};
}

namespace {

WindowLoss b_form(const PrecomputedWindow& w, const Vec& f_flank, double sigma2_N, Method method,
                  const SolverConfig& cfg, std::uint64_t seed, bool want_grad) {
  check_inputs(w, f_flank, sigma2_N);
  const BTerms t = b_terms(w, f_flank, sigma2_N);
  const Index p = w.flank.size();
  WindowLoss out;
  out.solver_report = {0, 0.0, true};

  if (t.trivial) {
    out.quad = t.inv_s2 * w.quad_null;
    out.logdet = base_logdet(w, sigma2_N);
    out.nll = 0.5 * (out.quad + out.logdet);
    if (want_grad) {
      // h = g / sigma_N^2 and the log-det gradient is diag(W) / sigma_N^2.
      const Vec h = t.inv_s2 * w.g;
      out.grad_f_flank = 0.5 * (t.inv_s2 * w.W.diagonal() - h.cwiseAbs2());
    }
    return out;
  }

  const BOperator B{&w, t.s, sigma2_N};
  Vec y;  // B^-1 v
  double logdet_B = 0;
  Vec q_diag;  // diag(W - sigma^-2 W S B^-1 S W)

  if (method == Method::dense) {
    const Eigen::LLT<Mat> chol(B.dense());
    if (chol.info() != Eigen::Success) throw NumericalError("B-form Cholesky failed");
    y = chol.solve(t.v);
    logdet_B = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
    if (want_grad) {
      const Mat SW = t.s.asDiagonal() * w.W;
      const Mat X = chol.solve(SW);
      q_diag = w.W.diagonal() - t.inv_s2 * SW.cwiseProduct(X).colwise().sum().transpose();
    }
  } else {
    const LinearOperator op = B.as_operator();
    auto solved = cg_solve(op, t.v, cfg.cg_rel_tol, cfg.cg_max_iter);
    if (!solved.report.converged) throw stalled("B-form solve", solved.report);
    y = std::move(solved.x);
    out.solver_report = solved.report;
    logdet_B = slq_logdet(op, cfg.num_probes, cfg.lanczos_steps, derive_seed({seed, 1}),
                          cfg.probe_kind);
    if (want_grad) {
      // Probe Q = W - sigma^-2 W S B^-1 S W directly: diag(Q) has small
      // off-diagonal mass, unlike the two terms it is the difference of.
      q_diag = Vec::Zero(p);
      const std::uint64_t probe_seed = derive_seed({seed, 2});
      for (Index k = 0; k < cfg.num_probes; ++k) {
        const Vec u =
            draw_probe(p, cfg.probe_kind, derive_seed({probe_seed, static_cast<std::uint64_t>(k)}));
        const Vec wu = w.W * u;
        const auto x = cg_solve(op, t.s.cwiseProduct(wu), cfg.cg_rel_tol, cfg.cg_max_iter);
        if (!x.report.converged) throw stalled("Hutchinson probe solve", x.report);
        out.probe_iterations += x.report.iterations;
        const Vec qu = wu - t.inv_s2 * (w.W * t.s.cwiseProduct(x.x));
        q_diag += qu.cwiseProduct(u);
      }
      q_diag /= static_cast<double>(cfg.num_probes);
    }
  }

  out.quad = t.inv_s2 * w.quad_null - t.inv_s2 * t.inv_s2 * t.v.dot(y);
  out.logdet = base_logdet(w, sigma2_N) + logdet_B;
  out.nll = 0.5 * (out.quad + out.logdet);
  if (want_grad) {
    const Vec h = t.inv_s2 * (w.g - t.inv_s2 * (w.W * t.s.cwiseProduct(y)));
    out.grad_f_flank =
        0.5 * (t.inv_s2 * q_diag - h.cwiseAbs2());
  }
  if (!std::isfinite(out.nll)) throw NumericalError("window likelihood is not finite");
  return out;
}

}  // namespace

WindowLoss window_nll(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N,
                      Method method, const SolverConfig& cfg, std::uint64_t seed) {
  return b_form(window, f_flank, sigma2_N, method, cfg, seed, false);
}

WindowLoss window_nll_grad(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N,
                           Method method, const SolverConfig& cfg, std::uint64_t seed) {
  return b_form(window, f_flank, sigma2_N, method, cfg, seed, true);
}

double null_nll(const PrecomputedWindow& window, double sigma2_N) {
  return window_nll(window, Vec::Zero(window.flank.size()), sigma2_N, Method::dense).nll;
}

// ---------------------------------------------------------------------------

Mat dense_a_matrix(const PrecomputedWindow& window, const Vec& f_flank, double sigma2_N) {
  check_inputs(window, f_flank, sigma2_N);
  const Mat& Rcf = window.r_core_flank;
  Mat A = Rcf * f_flank.asDiagonal() * Rcf.transpose() +
          sigma2_N * Rcf.middleCols(window.core_offset(), window.core.size());
  return 0.5 * (A + A.transpose());
}

WindowLoss a_form_nll_grad_dense(const PrecomputedWindow& window, const Vec& f_flank,
                                 double sigma2_N) {
  const Mat A = dense_a_matrix(window, f_flank, sigma2_N);
  const Mat& Rcf = window.r_core_flank;
  WindowLoss out;
  out.solver_report = {0, 0.0, true};
  const Eigen::LLT<Mat> chol(A);
  if (chol.info() != Eigen::Success) throw NumericalError("A-form Cholesky failed");
  const Vec t = chol.solve(window.beta_core);
  out.quad = window.beta_core.dot(t);
  out.logdet = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
  out.nll = 0.5 * (out.quad + out.logdet);
  const Mat Z = chol.solve(Rcf);
  const Vec proj = Rcf.transpose() * t;
  out.grad_f_flank =
      0.5 * (Rcf.cwiseProduct(Z).colwise().sum().transpose() - proj.cwiseAbs2());
  return out;
}

WindowLoss a_form_nll_grad_iterative(const PrecomputedWindow& window, const Vec& f_flank,
                                     double sigma2_N, const SolverConfig& cfg, std::uint64_t seed,
                                     const NystromOptions& nystrom) {
  check_inputs(window, f_flank, sigma2_N);
  auto Rcf = std::make_shared<const Mat>(window.r_core_flank);
  auto Rcc = std::make_shared<const Mat>(
      window.r_core_flank.middleCols(window.core_offset(), window.core.size()));
  auto f = std::make_shared<const Vec>(f_flank);
  LinearOperator A;
  A.dim = window.core.size();
  A.is_spd = true;
  A.apply = [Rcf, Rcc, f, sigma2_N](const Vec& x) -> Vec {
    const Vec y = f->cwiseProduct(Rcf->transpose() * x);
    return (*Rcf) * y + sigma2_N * ((*Rcc) * x);
  };

  LinearOperator pre;
  const LinearOperator* pre_ptr = nullptr;
  if (nystrom.rank > 0) {
    pre = nystrom_preconditioner(A, nystrom.rank, nystrom.shift, derive_seed({seed, 3}));
    pre_ptr = &pre;
  }

  WindowLoss out;
  auto solved = cg_solve(A, window.beta_core, cfg.cg_rel_tol, cfg.cg_max_iter, pre_ptr);
  if (!solved.report.converged) throw stalled("A-form solve", solved.report);
  out.solver_report = solved.report;
  out.quad = window.beta_core.dot(solved.x);
  out.logdet = slq_logdet(A, cfg.num_probes, cfg.lanczos_steps, derive_seed({seed, 1}),
                          cfg.probe_kind);
  out.nll = 0.5 * (out.quad + out.logdet);

  const auto pairs = hutchinson_probe_pairs(A, cfg.cg_rel_tol, cfg.num_probes,
                                            derive_seed({seed, 2}), cfg.probe_kind,
                                            cfg.cg_max_iter, pre_ptr);
  Vec diag = Vec::Zero(window.flank.size());
  for (const auto& pr : pairs) {
    diag += (Rcf->transpose() * pr.solved).cwiseProduct(Rcf->transpose() * pr.u);
    out.probe_iterations += pr.report.iterations;
  }
  diag /= static_cast<double>(pairs.size());
  const Vec proj = Rcf->transpose() * solved.x;
  out.grad_f_flank = 0.5 * (diag - proj.cwiseAbs2());
  return out;
}

// ---------------------------------------------------------------------------

ObjectiveValue ldsr_objective(const Vec& beta_hat, const Vec& ld_scores, const Mat& r_terms,
                              const Vec& f, double sigma2, double N, double M, double h2_guess) {
  if (beta_hat.size() != ld_scores.size() || r_terms.rows() != beta_hat.size() ||
      r_terms.cols() != f.size())
    throw ArgumentError("ldsr_objective: size mismatch");
  if ((ld_scores.array() < 1.0 - 1e-9).any()) throw ArgumentError("LD scores must be >= 1");
  if ((f.array() < 0).any()) throw ArgumentError("f must be nonnegative");
  const Mat r2 = r_terms.cwiseAbs2();
  const Vec pred = N * (r2 * f);
  const Vec resid = pred.array() + sigma2 - N * beta_hat.array().square();
  const Vec weight =
      ld_scores.cwiseInverse().array() / (N * h2_guess * ld_scores.array() / M + 1.0).square();
  ObjectiveValue out;
  out.value = (weight.array() * resid.array().square()).sum();
  out.grad_f = 2.0 * N * (r2.transpose() * weight.cwiseProduct(resid));
  return out;
}

ObjectiveValue ldsr_objective(const Vec& beta_hat, const BandedCorrelationMatrix& R,
                              const Vec& ld_scores, const Vec& f, double sigma2, double N,
                              double h2_guess) {
  const Index M = R.num_variants();
  if (beta_hat.size() != M || ld_scores.size() != M || f.size() != M)
    throw ArgumentError("ldsr_objective: size mismatch");
  if ((ld_scores.array() < 1.0 - 1e-9).any()) throw ArgumentError("LD scores must be >= 1");
  if ((f.array() < 0).any()) throw ArgumentError("f must be nonnegative");
  const auto bw = static_cast<Index>(R.bandwidth());
  ObjectiveValue out;
  out.grad_f = Vec::Zero(M);
  for (Index i = 0; i < M; ++i) {
    const Index lo = std::max<Index>(0, i - bw), hi = std::min<Index>(M, i + bw + 1);
    double s = 0;
    for (Index k = lo; k < hi; ++k) s += R(i, k) * R(i, k) * f[k];
    const double l = ld_scores[i];
    const double resid = N * s + sigma2 - N * beta_hat[i] * beta_hat[i];
    const double wt = 1.0 / (l * std::pow(N * h2_guess * l / static_cast<double>(M) + 1.0, 2));
    out.value += wt * resid * resid;
    for (Index k = lo; k < hi; ++k) out.grad_f[k] += 2.0 * N * wt * resid * R(i, k) * R(i, k);
  }
  return out;
}

ObjectiveValue ldsr_window_objective(const PrecomputedWindow& window, const Vec& f_flank,
                                     double sigma2, double N, double M, double h2_guess) {
  return ldsr_objective(window.beta_core, window.ld_core, window.r_core_flank, f_flank, sigma2, N,
                        M, h2_guess);
}

double ldsr_h2_ballpark(const Vec& beta_hat, const Vec& ld_scores, double sigma2, double N) {
  const double M = static_cast<double>(beta_hat.size());
  const double chi = N * beta_hat.squaredNorm() / M;
  const double h2 = M * (chi - sigma2) / (N * ld_scores.mean());
  return std::max(h2, 1e-6);
}

double window1_limit_nll(const Vec& beta_hat, const BandedCorrelationMatrix& R, const Vec& f,
                         double sigma2, double N) {
  const Index M = R.num_variants();
  if (beta_hat.size() != M || f.size() != M) throw ArgumentError("window1_limit_nll: size mismatch");
  const auto bw = static_cast<Index>(R.bandwidth());
  double total = 0;
  for (Index i = 0; i < M; ++i) {
    double s = 0;
    for (Index k = std::max<Index>(0, i - bw); k < std::min<Index>(M, i + bw + 1); ++k)
      s += f[k] * R(i, k) * R(i, k);
    const double denom = N * s + sigma2;
    total += N * beta_hat[i] * beta_hat[i] / denom + std::log(denom);
  }
  return total;
}

}  // namespace deepwas
