#include "doctest.h"
#include "helpers.hpp"

#include "deepwas/likelihood.hpp"

#include <cmath>

using namespace deepwas;
using namespace testutil;

namespace {

struct Fixture {
  BandedCorrelationMatrix R;
  SummaryStats stats;
  std::vector<PrecomputedWindow> windows;
};

Fixture make_fixture(Index M, std::size_t bw, std::uint64_t seed, std::uint64_t span = 200,
                     std::uint64_t flank = 100, double N = 100, double sigma2 = 0.5) {
  auto R = gen_banded_correlation(M, bw, 0.85, seed);
  auto stats = SummaryStats::make(0.2 * random_normal(M, seed + 1), N, sigma2);
  auto windows = precompute_all(R, stats, plan_windows(R.positions(), span, flank));
  return {std::move(R), std::move(stats), std::move(windows)};
}

// Dense A-form NLL with the clipped pseudo-inverse.
double oracle_nll(const PrecomputedWindow& w, const Vec& f, double s2N) {
  const auto d = dense_nll_oracle(dense_a_matrix(w, f, s2N), w.beta_core);
  return 0.5 * (d.quad + d.logpdet);
}

}  // namespace

TEST_CASE("window_nll at f = 0 collapses to the null formula") {
  const auto fx = make_fixture(60, 8, 1);
  const double s2N = fx.stats.sigma2_N;
  for (const auto& w : fx.windows) {
    const Vec f = Vec::Zero(w.flank.size());
    const double expect = 0.5 * (w.quad_null / s2N +
                                 static_cast<double>(w.core_rank()) * std::log(s2N) + w.logpdet_R);
    CHECK(window_nll(w, f, s2N, Method::dense).nll == doctest::Approx(expect).epsilon(1e-12));
    CHECK(window_nll(w, f, s2N, Method::iterative).nll == doctest::Approx(expect).epsilon(1e-12));
    CHECK(null_nll(w, s2N) == window_nll(w, f, s2N, Method::dense).nll);
  }
}

TEST_CASE("window_nll on the identity matches the diagonal Gaussian") {
  const auto R = identity_matrix(30);
  const Vec beta = random_vec(30, 2);
  const auto stats = SummaryStats::make(beta, 50, 0.5);
  const auto plan = plan_windows(R.positions(), 1000, 1);
  REQUIRE(plan.size() == 1);
  const auto w = precompute_window(R, stats, plan, 0);
  const double c = 0.03, s2N = stats.sigma2_N;
  double expect = 0;
  for (Index m = 0; m < 30; ++m)
    expect += 0.5 * (beta[m] * beta[m] / (c + s2N) + std::log(c + s2N));
  const Vec f = Vec::Constant(30, c);
  CHECK(window_nll(w, f, s2N, Method::dense).nll == doctest::Approx(expect).epsilon(1e-12));
  SolverConfig cfg;
  cfg.cg_rel_tol = 1e-12;
  // B is a multiple of I here, so SLQ is exact.
  CHECK(window_nll(w, f, s2N, Method::iterative, cfg, 3).nll ==
        doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("null_nll examples") {
  SUBCASE("zero quadratic term") {
    const auto fx = make_fixture(40, 5, 3);
    auto w = fx.windows[0];
    w.quad_null = 0;
    CHECK(null_nll(w, 0.01) ==
          doctest::Approx(0.5 * static_cast<double>(w.core_rank()) * std::log(0.01) +
                          0.5 * w.logpdet_R));
  }
  SUBCASE("standard normal") {
    const BandedCorrelationMatrix R(0, {1}, {1.0f});
    const auto stats = SummaryStats::make(Vec::Ones(1), 1, 1.0);
    const auto w = precompute_window(R, stats, plan_windows(R.positions(), 10, 1), 0);
    CHECK(null_nll(w, 1.0) == doctest::Approx(0.5));
  }
}

TEST_CASE("B-form equals the dense A-form oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto fx = make_fixture(60, 10, 10 + seed);
    const double s2N = fx.stats.sigma2_N;
    const double fmax = 2.0 * fx.stats.sample_size / 60.0;
    for (const auto& w : fx.windows) {
      const Vec f = random_vec(w.flank.size(), 100 + seed, 0.0, fmax);
      const double ref = oracle_nll(w, f, s2N);
      CHECK(std::abs(window_nll(w, f, s2N, Method::dense).nll - ref) <= 1e-6 * std::abs(ref));
      CHECK(std::abs(a_form_nll_grad_dense(w, f, s2N).nll - ref) <= 1e-6 * std::abs(ref));
    }
  }
}

TEST_CASE("log-det gradient at f = 0 is diag(W) / sigma2_N") {
  const auto fx = make_fixture(60, 8, 4);
  const double s2N = fx.stats.sigma2_N;
  const auto& w = fx.windows[1];
  const Vec f = Vec::Zero(w.flank.size());
  const Vec h = w.g / s2N;
  const Vec expect = 0.5 * (w.W.diagonal() / s2N - h.cwiseAbs2());
  CHECK((window_nll_grad(w, f, s2N, Method::dense).grad_f_flank - expect).norm() <=
        1e-10 * expect.norm());
  CHECK((window_nll_grad(w, f, s2N, Method::iterative).grad_f_flank - expect).norm() <=
        1e-10 * expect.norm());
}

TEST_CASE("dense gradient matches central finite differences") {
  const auto fx = make_fixture(40, 6, 5, 400, 100);
  const double s2N = fx.stats.sigma2_N;
  for (const auto& w : fx.windows) {
    const Vec f = random_vec(w.flank.size(), 6, 0.2, 1.0);
    const Vec g = window_nll_grad(w, f, s2N, Method::dense).grad_f_flank;
    Vec fd(f.size());
    for (Index k = 0; k < f.size(); ++k) {
      const double h = 1e-5 * f[k];
      Vec fp = f, fm = f;
      fp[k] += h;
      fm[k] -= h;
      fd[k] = (window_nll(w, fp, s2N, Method::dense).nll -
               window_nll(w, fm, s2N, Method::dense).nll) / (2 * h);
    }
    CHECK(max_rel(g, fd, 1e-3 * fd.cwiseAbs().maxCoeff()) <= 1e-4);
    const Vec ga = a_form_nll_grad_dense(w, f, s2N).grad_f_flank;
    CHECK((ga - g).norm() <= 1e-6 * g.norm());
  }
}

TEST_CASE("iterative gradient is within 5% of the dense gradient") {
  const auto fx = make_fixture(300, 10, 6, 600, 200, 200);
  const double s2N = fx.stats.sigma2_N;
  SolverConfig cfg;
  cfg.num_probes = 200;
  for (const auto& w : fx.windows) {
    const Vec f = random_vec(w.flank.size(), 7, 0.0, 2.0 * 200 / 300.0);
    const Vec gd = window_nll_grad(w, f, s2N, Method::dense).grad_f_flank;
    const auto it = window_nll_grad(w, f, s2N, Method::iterative, cfg, 9);
    CHECK((it.grad_f_flank - gd).norm() <= 0.05 * gd.norm());
    CHECK(it.solver_report.converged);
  }
}

TEST_CASE("iterative quadratic term is exact up to the CG tolerance") {
  const auto fx = make_fixture(200, 10, 7, 500, 200, 200);
  const double s2N = fx.stats.sigma2_N;
  SolverConfig cfg;
  cfg.num_probes = 20;
  for (const auto& w : fx.windows) {
    const Vec f = random_vec(w.flank.size(), 8, 0.0, 2.0);
    const auto d = window_nll(w, f, s2N, Method::dense);
    const auto it = window_nll(w, f, s2N, Method::iterative, cfg, 1);
    CHECK(std::abs(it.quad - d.quad) <= 1e-6 * std::abs(d.quad));
    CHECK(std::abs(it.nll - d.nll) <= 0.05 * std::abs(d.nll));
  }
}

TEST_CASE("window_nll_grad is deterministic in its seed") {
  const auto fx = make_fixture(100, 8, 8);
  const auto& w = fx.windows[0];
  const Vec f = random_vec(w.flank.size(), 9, 0.0, 1.0);
  const auto a = window_nll_grad(w, f, fx.stats.sigma2_N, Method::iterative, {}, 77);
  const auto b = window_nll_grad(w, f, fx.stats.sigma2_N, Method::iterative, {}, 77);
  CHECK(a.nll == b.nll);
  CHECK(a.grad_f_flank == b.grad_f_flank);
}

TEST_CASE("increasing one f weakly increases the log-determinant") {
  const auto fx = make_fixture(80, 8, 9);
  const double s2N = fx.stats.sigma2_N;
  for (const auto& w : fx.windows) {
    const Vec f = random_vec(w.flank.size(), 10, 0.0, 1.0);
    const double base = window_nll(w, f, s2N, Method::dense).logdet;
    for (Index k = 0; k < f.size(); k += 3) {
      Vec g = f;
      g[k] += 0.1;
      CHECK(window_nll(w, g, s2N, Method::dense).logdet >= base - 1e-10);
    }
  }
}

TEST_CASE("B operators have Ritz values at least one") {
  const auto fx = make_fixture(120, 10, 10);
  for (const auto& w : fx.windows) {
    const Vec f = random_vec(w.flank.size(), 11, 0.0, 3.0);
    const auto B = make_b_operator(w, f, fx.stats.sigma2_N);
    CHECK(ritz_values(B.as_operator(), w.flank.size(), 12).minCoeff() >= 1 - 1e-6);
    CHECK(Eigen::SelfAdjointEigenSolver<Mat>(B.dense()).eigenvalues().minCoeff() >= 1 - 1e-10);
  }
}

TEST_CASE("A-form iterative paths") {
  const auto fx = make_fixture(120, 8, 11, 400, 100);
  const double s2N = fx.stats.sigma2_N;
  const auto& w = fx.windows[1];
  const Vec f = random_vec(w.flank.size(), 12, 0.1, 1.0);
  const auto ref = a_form_nll_grad_dense(w, f, s2N);
  SolverConfig cfg;
  cfg.cg_rel_tol = 1e-10;
  const auto plain = a_form_nll_grad_iterative(w, f, s2N, cfg, 3);
  const auto nys = a_form_nll_grad_iterative(w, f, s2N, cfg, 3, NystromOptions{10, 1e-8});
  CHECK(std::abs(plain.quad - ref.quad) <= 1e-6 * std::abs(ref.quad));
  CHECK(std::abs(nys.quad - ref.quad) <= 1e-6 * std::abs(ref.quad));
  CHECK(plain.solver_report.converged);
  CHECK(nys.solver_report.iterations <= plain.solver_report.iterations);
}

TEST_CASE("invalid likelihood inputs") {
  const auto fx = make_fixture(40, 4, 12);
  const auto& w = fx.windows[0];
  Vec f = Vec::Ones(w.flank.size());
  f[0] = -1e-3;
  CHECK_THROWS_AS(window_nll(w, f, 0.01, Method::dense), ArgumentError);
  CHECK_THROWS_AS(window_nll(w, Vec::Ones(w.flank.size() + 1), 0.01, Method::dense), ArgumentError);
  CHECK_THROWS_AS(window_nll(w, Vec::Ones(w.flank.size()), 0.0, Method::dense), ArgumentError);
}

TEST_CASE("ldsr_objective examples") {
  SUBCASE("single variant with unit weights") {
    const double f = 0.3, s2 = 0.5, b = 0.9, N = 1;
    Vec beta(1), ld(1), fv(1);
    beta << b;
    ld << 1;
    fv << f;
    const auto v = ldsr_objective(beta, ld, Mat::Ones(1, 1), fv, s2, N, 1, 0.0);
    CHECK(v.value == doctest::Approx(std::pow(f + s2 - N * b * b, 2)));
  }
  SUBCASE("exact fit has zero loss") {
    const auto R = gen_banded_correlation(20, 3, 0.7, 13);
    const Mat r2 = R.dense().cwiseAbs2();
    const Vec f = random_vec(20, 14, 0.01, 0.1);
    const double N = 50, s2 = 0.5;
    const Vec beta = ((N * r2 * f).array() + s2).sqrt() / std::sqrt(N);
    const auto v = ldsr_objective(beta, R, ld_scores(R), f, s2, N, 0.5);
    CHECK(v.value < 1e-20);
  }
}

TEST_CASE("ldsr_objective gradient matches finite differences") {
  const auto R = gen_banded_correlation(50, 5, 0.8, 15);
  const Vec beta = 0.3 * random_normal(50, 16);
  const Vec ld = ld_scores(R);
  const Vec f = random_vec(50, 17, 0.01, 0.05);
  const double N = 80, s2 = 0.5, h2 = 0.4;
  const auto v = ldsr_objective(beta, R, ld, f, s2, N, h2);
  Vec fd(50);
  for (Index k = 0; k < 50; ++k) {
    const double h = 1e-6;
    Vec fp = f, fm = f;
    fp[k] += h;
    fm[k] -= h;
    fd[k] = (ldsr_objective(beta, R, ld, fp, s2, N, h2).value -
             ldsr_objective(beta, R, ld, fm, s2, N, h2).value) / (2 * h);
  }
  CHECK(max_rel(v.grad_f, fd, 1e-6 * fd.cwiseAbs().maxCoeff()) <= 1e-6);
  // Dense overload agrees with the banded one.
  const auto dense = ldsr_objective(beta, ld, R.dense(), f, s2, N, 50, h2);
  CHECK(dense.value == doctest::Approx(v.value).epsilon(1e-12));
  CHECK((dense.grad_f - v.grad_f).norm() <= 1e-10 * v.grad_f.norm());
}

TEST_CASE("window1_limit_nll examples") {
  const double N = 40, s2 = 0.6;
  const Vec beta = random_vec(10, 18);
  SUBCASE("identity with constant f") {
    const double c = 0.02;
    double expect = 0;
    for (Index m = 0; m < 10; ++m)
      expect += N * beta[m] * beta[m] / (N * c + s2) + std::log(N * c + s2);
    CHECK(window1_limit_nll(beta, identity_matrix(10), Vec::Constant(10, c), s2, N) ==
          doctest::Approx(expect));
  }
  SUBCASE("null") {
    double expect = 0;
    for (Index m = 0; m < 10; ++m) expect += N * beta[m] * beta[m] / s2 + std::log(s2);
    CHECK(window1_limit_nll(beta, gen_banded_correlation(10, 2, 0.5, 1), Vec::Zero(10), s2, N) ==
          doctest::Approx(expect));
  }
}

TEST_CASE("ldsr_h2_ballpark recovers the moment estimate") {
  const Vec beta = Vec::Constant(10, 0.2);
  const Vec ld = Vec::Constant(10, 2.0);
  // chi = N b^2 = 4; h2 = M (chi - s2) / (N l) = 10 * 3.5 / 200.
  CHECK(ldsr_h2_ballpark(beta, ld, 0.5, 100) == doctest::Approx(10 * 3.5 / 200));
  CHECK(ldsr_h2_ballpark(Vec::Zero(10), ld, 0.5, 100) == doctest::Approx(1e-6));
}
