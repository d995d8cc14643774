#include "doctest.h"
#include "helpers.hpp"

#include "deepwas/ldcore.hpp"

#include <cstring>
#include <fstream>

using namespace deepwas;
using namespace testutil;

namespace {

void write_raw_dwld(const std::filesystem::path& path, std::uint64_t M, std::uint64_t bw,
                    const std::vector<float>& band, const std::vector<std::uint64_t>& pos,
                    const char* magic = "DWLD", std::uint32_t version = 1) {
  std::ofstream out(path, std::ios::binary);
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&M), 8);
  out.write(reinterpret_cast<const char*>(&bw), 8);
  out.write(reinterpret_cast<const char*>(band.data()), static_cast<std::streamsize>(4 * band.size()));
  out.write(reinterpret_cast<const char*>(pos.data()), static_cast<std::streamsize>(8 * pos.size()));
}

}  // namespace

TEST_CASE("DWLD identity file loads with bandwidth 0") {
  const auto dir = scratch_dir("dwld_identity");
  write_raw_dwld(dir / "i.dwld", 3, 0, {1, 1, 1}, {10, 20, 30});
  const auto R = load_banded_matrix(dir / "i.dwld");
  CHECK(R.num_variants() == 3);
  CHECK(R.bandwidth() == 0);
  CHECK(R.dense().isIdentity());
}

TEST_CASE("DWLD save then load is bit-identical") {
  const auto dir = scratch_dir("dwld_roundtrip");
  const auto R = gen_banded_correlation(40, 6, 0.7, 3);
  save_banded_matrix(R, dir / "r.dwld");
  const auto back = load_banded_matrix(dir / "r.dwld");
  REQUIRE(back.band_data().size() == R.band_data().size());
  CHECK(std::memcmp(back.band_data().data(), R.band_data().data(), 4 * R.band_data().size()) == 0);
  CHECK(back.positions() == R.positions());
}

TEST_CASE("DWLD validation errors") {
  const auto dir = scratch_dir("dwld_bad");
  SUBCASE("diagonal 0.9") {
    write_raw_dwld(dir / "d.dwld", 2, 0, {1.0f, 0.9f}, {1, 2});
    CHECK_THROWS_AS(load_banded_matrix(dir / "d.dwld"), ValidationError);
  }
  SUBCASE("non-increasing positions") {
    write_raw_dwld(dir / "p.dwld", 2, 0, {1.0f, 1.0f}, {5, 5});
    CHECK_THROWS_AS(load_banded_matrix(dir / "p.dwld"), ValidationError);
  }
  SUBCASE("bad magic") {
    write_raw_dwld(dir / "m.dwld", 2, 0, {1.0f, 1.0f}, {1, 2}, "XXXX");
    CHECK_THROWS_AS(load_banded_matrix(dir / "m.dwld"), FormatError);
  }
  SUBCASE("wrong version") {
    write_raw_dwld(dir / "v.dwld", 2, 0, {1.0f, 1.0f}, {1, 2}, "DWLD", 7);
    CHECK_THROWS_AS(load_banded_matrix(dir / "v.dwld"), FormatError);
  }
  SUBCASE("truncated payload") {
    write_raw_dwld(dir / "t.dwld", 3, 0, {1.0f, 1.0f}, {1, 2});
    CHECK_THROWS_AS(load_banded_matrix(dir / "t.dwld"), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_banded_matrix(dir / "nope.dwld"), IoError);
  }
}

TEST_CASE("banded matrix accessors mirror the lower band") {
  const auto R = gen_banded_correlation(30, 4, 0.8, 11);
  const Mat D = R.dense();
  CHECK((D - D.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(D(0, 10) == 0.0);
  CHECK(R(3, 5) == R(5, 3));
  const Mat blk = R.block(Range{5, 12}, Range{8, 20});
  CHECK((blk - D.block(5, 8, 7, 12)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("clip_spectrum examples") {
  SUBCASE("tiny negative eigenvalue is dropped") {
    Mat A = Mat::Zero(2, 2);
    A(0, 0) = 1;
    A(1, 1) = -1e-12;
    const auto s = clip_spectrum(A, 1e-8);
    CHECK(s.rank == 1);
    CHECK(s.logpdet == doctest::Approx(0.0));
  }
  SUBCASE("identity") {
    const auto s = clip_spectrum(Mat::Identity(3, 3));
    CHECK(s.rank == 3);
    CHECK(std::abs(s.logpdet) < 1e-14);
    CHECK((s.pseudo_inverse() - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("orthogonal projector is its own pseudo-inverse") {
    const Mat G = random_normal(30, 5).reshaped(10, 3);
    const Mat Q = Eigen::HouseholderQR<Mat>(G).householderQ() * Mat::Identity(10, 3);
    const Mat P = Q * Q.transpose();
    const auto s = clip_spectrum(P);
    CHECK(s.rank == 3);
    CHECK((s.pseudo_inverse() - P).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(s.logpdet) < 1e-10);
  }
  SUBCASE("zero matrix is degenerate") {
    CHECK_THROWS_AS(clip_spectrum(Mat::Zero(4, 4)), DegenerateBlockError);
  }
  SUBCASE("asymmetric input") {
    Mat A = Mat::Identity(3, 3);
    A(0, 1) = 0.1;
    CHECK_THROWS_AS(clip_spectrum(A), ArgumentError);
  }
}

TEST_CASE("clip_spectrum is idempotent") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Mat G = random_normal(20 * 8, seed).reshaped(20, 8);
    const Mat A = G * G.transpose();
    const auto s1 = clip_spectrum(A);
    const auto s2 = clip_spectrum(s1.reconstruct());
    CHECK(s1.rank == 8);
    CHECK(s2.rank == 8);
    CHECK(std::abs(s1.logpdet - s2.logpdet) < 1e-10);
    const Vec x = random_vec(20, seed + 100);
    CHECK((s1.apply_pinv(x) - s1.pseudo_inverse() * x).norm() < 1e-10 * (1 + x.norm()));
  }
}

TEST_CASE("plan_windows uniform grid") {
  std::vector<std::uint64_t> pos(1000);
  for (std::uint64_t i = 0; i < 1000; ++i) pos[i] = i;
  const auto plan = plan_windows(pos, 100, 100);
  REQUIRE(plan.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(plan.cores[i].size() == 100);
    if (i > 0 && i < 9) CHECK(plan.flanks[i].size() == 300);
  }
  CHECK(plan.flanks[0] == Range{0, 200});
  CHECK(plan.flanks[9] == Range{800, 1000});
}

TEST_CASE("plan_windows with fewer variants than one window") {
  const auto plan = plan_windows({5, 17, 40}, 1000, 200);
  REQUIRE(plan.size() == 1);
  CHECK(plan.cores[0] == Range{0, 3});
  CHECK(plan.flanks[0] == plan.cores[0]);
}

TEST_CASE("plan_windows nonuniform example") {
  const std::vector<std::uint64_t> pos{0, 10, 500, 980, 1500};
  const auto plan = plan_windows(pos, 1000, 500);
  REQUIRE(plan.size() == 2);
  CHECK(plan.cores[0] == Range{0, 4});
  CHECK(plan.cores[1] == Range{4, 5});
  // Brute-force membership: every variant within flank_span of a core variant.
  for (std::size_t w = 0; w < plan.size(); ++w)
    for (Index m = 0; m < 5; ++m) {
      bool near = false;
      for (Index c = plan.cores[w].begin; c < plan.cores[w].end; ++c) {
        const auto d = pos[static_cast<std::size_t>(m)] > pos[static_cast<std::size_t>(c)]
                           ? pos[static_cast<std::size_t>(m)] - pos[static_cast<std::size_t>(c)]
                           : pos[static_cast<std::size_t>(c)] - pos[static_cast<std::size_t>(m)];
        near = near || d <= 500;
      }
      if (near) CHECK(plan.flanks[w].contains(m));
    }
  CHECK(plan.flanks[1].contains(3));
}

TEST_CASE("plan_windows partitions random positions") {
  Rng rng(99);
  std::uniform_int_distribution<std::uint64_t> gap(1, 40);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint64_t> pos{gap(rng)};
    const int M = 50 + trial * 13;
    for (int i = 1; i < M; ++i) pos.push_back(pos.back() + gap(rng));
    const std::uint64_t span = 200 + static_cast<std::uint64_t>(trial) * 37, flank = 150;
    const auto plan = plan_windows(pos, span, flank);
    Index next = 0;
    for (std::size_t w = 0; w < plan.size(); ++w) {
      CHECK(plan.cores[w].begin == next);
      CHECK(plan.cores[w].size() > 0);
      CHECK(plan.flanks[w].contains(plan.cores[w]));
      const auto lo = pos[static_cast<std::size_t>(plan.cores[w].begin)];
      const auto hi = pos[static_cast<std::size_t>(plan.cores[w].end - 1)];
      CHECK(pos[static_cast<std::size_t>(plan.flanks[w].begin)] + flank + span >= lo);
      CHECK(pos[static_cast<std::size_t>(plan.flanks[w].end - 1)] <= hi + flank + span);
      next = plan.cores[w].end;
    }
    CHECK(next == M);
  }
}

TEST_CASE("plan_windows rejects empty input and zero spans") {
  CHECK_THROWS_AS(plan_windows({}, 100, 10), ArgumentError);
  CHECK_THROWS_AS(plan_windows({1, 2}, 0, 10), ArgumentError);
}

TEST_CASE("SummaryStats invariants") {
  const auto s = SummaryStats::make(Vec::Ones(3), 400, 0.5);
  CHECK(s.sigma2_N == 0.5 / 400);
  CHECK_THROWS_AS(SummaryStats::make(Vec::Ones(3), 400, 1.5), ValidationError);
  CHECK_THROWS_AS(SummaryStats::make(Vec::Ones(3), 0, 0.5), ValidationError);
}

TEST_CASE("summary statistics TSV round trip") {
  const auto dir = scratch_dir("sumstats");
  SummaryTable t;
  t.variant_ids = {"rs1", "rs2", "rs3"};
  t.positions = {100, 250, 900};
  t.beta_hat = Vec(3);
  t.beta_hat << 0.1, -1.0 / 3.0, 2.5e-7;
  t.freq = Vec(3);
  t.freq << 0.1, 0.5, 0.93;
  save_summary_stats(t, 1234, 0.6, dir / "s.tsv", dir / "s.json");
  const auto back = load_summary_stats(dir / "s.tsv", dir / "s.json");
  CHECK(back.table.variant_ids == t.variant_ids);
  CHECK(back.table.positions == t.positions);
  CHECK(back.table.beta_hat == t.beta_hat);
  CHECK(back.table.freq == t.freq);
  CHECK(back.stats.sample_size == 1234);
  CHECK(back.stats.sigma2 == 0.6);
  std::ifstream in(dir / "s.tsv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "variant_id\tposition\tbeta_hat\tfreq");
}

TEST_CASE("precompute_window on the identity") {
  const auto R = identity_matrix(50);
  const auto stats = SummaryStats::make(random_vec(50, 1), 100, 0.5);
  const auto plan = plan_windows(R.positions(), 100, 50);
  const auto w = precompute_window(R, stats, plan, 2);
  CHECK(w.logpdet_R == doctest::Approx(0.0));
  const Index off = w.core_offset();
  Mat expect_L = Mat::Zero(w.flank.size(), w.core.size());
  expect_L.middleRows(off, w.core.size()).setIdentity();
  CHECK((w.L - expect_L).cwiseAbs().maxCoeff() < 1e-12);
  Mat expect_W = Mat::Zero(w.flank.size(), w.flank.size());
  expect_W.block(off, off, w.core.size(), w.core.size()).setIdentity();
  CHECK((w.W - expect_W).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(w.quad_null == doctest::Approx(w.beta_core.squaredNorm()));
}

TEST_CASE("precompute_window with flank equal to core projects R") {
  const auto R = gen_banded_correlation(20, 3, 0.9, 4);
  const auto stats = SummaryStats::make(random_vec(20, 2), 100, 0.5);
  const auto plan = plan_windows(R.positions(), 10000, 1);
  const auto w = precompute_window(R, stats, plan, 0);
  REQUIRE(w.flank == w.core);
  const Mat D = R.dense();
  const Eigen::SelfAdjointEigenSolver<Mat> eig(D);
  const double tau = kDefaultClipTol * eig.eigenvalues().maxCoeff();
  Mat pinv = Mat::Zero(20, 20);
  for (Index k = 0; k < 20; ++k)
    if (eig.eigenvalues()[k] > tau)
      pinv += eig.eigenvectors().col(k) * eig.eigenvectors().col(k).transpose() /
              eig.eigenvalues()[k];
  CHECK((w.W - D * pinv * D).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("precompute_window matches a dense oracle") {
  const auto R = gen_banded_correlation(60, 10, 0.85, 21);
  const auto stats = SummaryStats::make(random_vec(60, 3), 100, 0.5);
  const auto plan = plan_windows(R.positions(), 200, 100);  // 20-variant cores at spacing 10
  const Mat D = R.dense();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto w = precompute_window(R, stats, plan, i);
    CHECK(w.core.size() == 20);
    const Mat Rcc = D.block(w.core.begin, w.core.begin, w.core.size(), w.core.size());
    const Mat Rfc = D.block(w.flank.begin, w.core.begin, w.flank.size(), w.core.size());
    const Eigen::SelfAdjointEigenSolver<Mat> eig(Rcc);
    const Mat pinv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                     eig.eigenvectors().transpose();
    CHECK((w.W - Rfc * pinv * Rfc.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((w.L - Rfc * pinv).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((w.W - w.W.transpose()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(Eigen::SelfAdjointEigenSolver<Mat>(w.W).eigenvalues().minCoeff() >= -1e-8);
    CHECK(w.quad_null >= 0);
    CHECK(w.logpdet_R == doctest::Approx(eig.eigenvalues().array().log().sum()).epsilon(1e-10));
    const Vec b = stats.beta_hat.segment(w.core.begin, w.core.size());
    CHECK(w.quad_null == doctest::Approx(b.dot(pinv * b)).epsilon(1e-10));
  }
}

TEST_CASE("precompute_all is independent of the thread count") {
  const auto R = gen_banded_correlation(300, 8, 0.8, 5);
  const auto stats = SummaryStats::make(random_vec(300, 6), 100, 0.5);
  const auto plan = plan_windows(R.positions(), 300, 100);
  const auto a = precompute_all(R, stats, plan, kDefaultClipTol, 1);
  const auto b = precompute_all(R, stats, plan, kDefaultClipTol, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].window_index == i);
    CHECK(a[i].W == b[i].W);
    CHECK(a[i].L == b[i].L);
    CHECK(a[i].quad_null == b[i].quad_null);
  }
}

TEST_CASE("window cache round trip") {
  const auto dir = scratch_dir("dwpw");
  const auto R = gen_banded_correlation(120, 6, 0.8, 8);
  const auto stats = SummaryStats::make(random_vec(120, 9), 100, 0.5);
  const auto windows = precompute_all(R, stats, plan_windows(R.positions(), 300, 100));
  save_windows(windows, dir / "w.dwpw");
  const auto back = load_windows(dir / "w.dwpw");
  REQUIRE(back.size() == windows.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].core == windows[i].core);
    CHECK(back[i].flank == windows[i].flank);
    CHECK(back[i].W == windows[i].W);
    CHECK(back[i].g == windows[i].g);
    CHECK(back[i].pinv.eigvecs == windows[i].pinv.eigvecs);
    CHECK(back[i].logpdet_R == windows[i].logpdet_R);
    CHECK(back[i].ld_core == windows[i].ld_core);
  }
}

TEST_CASE("ld_scores") {
  SUBCASE("identity") { CHECK(ld_scores(identity_matrix(5)) == Vec::Ones(5)); }
  SUBCASE("2x2") {
    const float r = 0.3f;
    const BandedCorrelationMatrix R(1, {1, 2}, {0.0f, 1.0f, r, 1.0f});
    const Vec l = ld_scores(R);
    CHECK(l[0] == doctest::Approx(1 + double(r) * double(r)));
    CHECK(l[1] == doctest::Approx(1 + double(r) * double(r)));
  }
  SUBCASE("random banded against dense") {
    const auto R = gen_banded_correlation(50, 7, 0.8, 13);
    const Vec dense = R.dense().array().square().rowwise().sum();
    CHECK((ld_scores(R) - dense).cwiseAbs().maxCoeff() < 1e-12);
  }
}
