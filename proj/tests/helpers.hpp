#pragma once

#include "deepwas/ldcore.hpp"
#include "deepwas/rng.hpp"
#include "deepwas/synthgen.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testutil {

using deepwas::Index;
using deepwas::Mat;
using deepwas::Vec;

inline Mat random_spd(Index n, std::uint64_t seed, double cond = 10.0) {
  deepwas::Rng rng(seed);
  std::normal_distribution<double> normal;
  Mat G(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) G(i, j) = normal(rng);
  const Eigen::HouseholderQR<Mat> qr(G);
  const Mat Q = qr.householderQ();
  Vec lam(n);
  for (Index i = 0; i < n; ++i)
    lam[i] = std::pow(cond, n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
  return Q * lam.asDiagonal() * Q.transpose();
}

inline Vec random_vec(Index n, std::uint64_t seed, double lo = -1, double hi = 1) {
  deepwas::Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Vec random_normal(Index n, std::uint64_t seed) {
  deepwas::Rng rng(seed);
  std::normal_distribution<double> normal;
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline double max_rel(const Vec& a, const Vec& b, double floor = 1e-12) {
  double worst = 0;
  for (Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(floor, std::abs(b[i])));
  return worst;
}

inline deepwas::BandedCorrelationMatrix identity_matrix(Index M, std::uint64_t spacing = 10) {
  std::vector<std::uint64_t> pos(static_cast<std::size_t>(M));
  for (Index m = 0; m < M; ++m) pos[static_cast<std::size_t>(m)] = static_cast<std::uint64_t>(m) * spacing;
  return deepwas::BandedCorrelationMatrix(0, pos, std::vector<float>(static_cast<std::size_t>(M), 1.0f));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("deepwas_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
