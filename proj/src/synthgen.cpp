#include "deepwas/synthgen.hpp"

#include "deepwas/iterlinalg.hpp"
#include "deepwas/rng.hpp"

#include <cmath>

namespace deepwas {

namespace {

// Loadings of a banded moving-average process, row m over latents m .. m + bw,
// each row normalized to unit length.
Mat ma_loadings(Index M, Index bw, double decay, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::bernoulli_distribution coin(0.5);
  Mat load(M, bw + 1);
  for (Index m = 0; m < M; ++m) {
    const double sign = coin(rng) ? 1.0 : -1.0;
    for (Index k = 0; k <= bw; ++k) load(m, k) = sign * std::pow(decay, static_cast<double>(k)) * mag(rng);
    load.row(m).normalize();
  }
  return load;
}

Vec standard_normals(Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec z(n);
  for (Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

Vec banded_matvec(const BandedCorrelationMatrix& R, const Vec& x) {
  const Index M = R.num_variants();
  const auto bw = static_cast<Index>(R.bandwidth());
  const auto& band = R.band_data();
  Vec y = Vec::Zero(M);
  for (Index i = 0; i < M; ++i) {
    const float* row = &band[static_cast<std::size_t>(i * (bw + 1))];
    y[i] += x[i];
    for (Index off = 1; off <= std::min(bw, i); ++off) {
      const double r = row[bw - off];
      y[i] += r * x[i - off];
      y[i - off] += r * x[i];
    }
  }
  return y;
}

// L with R ~ L L^T, stored like R's band. Pivots under tol * R_jj zero out
// their column, which handles the semidefinite case.
std::vector<double> banded_cholesky(const BandedCorrelationMatrix& R, double tol = 1e-10) {
  const Index M = R.num_variants();
  const auto bw = static_cast<Index>(R.bandwidth());
  const auto stride = bw + 1;
  std::vector<double> L(static_cast<std::size_t>(M * stride), 0.0);
  auto at = [&](Index i, Index j) -> double& {
    return L[static_cast<std::size_t>(i * stride + bw - (i - j))];
  };
  for (Index j = 0; j < M; ++j) {
    double d = R(j, j);
    for (Index k = std::max<Index>(0, j - bw); k < j; ++k) d -= at(j, k) * at(j, k);
    if (d <= tol * R(j, j)) continue;
    const double ljj = std::sqrt(d);
    at(j, j) = ljj;
    for (Index i = j + 1; i <= std::min(M - 1, j + bw); ++i) {
      double s = R(i, j);
      for (Index k = std::max<Index>(0, i - bw); k < j; ++k) s -= at(i, k) * at(j, k);
      at(i, j) = s / ljj;
    }
  }
  return L;
}

Vec banded_lower_matvec(const std::vector<double>& L, Index M, Index bw, const Vec& z) {
  Vec out = Vec::Zero(M);
  for (Index i = 0; i < M; ++i) {
    const double* row = &L[static_cast<std::size_t>(i * (bw + 1))];
    double s = 0;
    for (Index j = std::max<Index>(0, i - bw); j <= i; ++j) s += row[bw - (i - j)] * z[j];
    out[i] = s;
  }
  return out;
}

}  // namespace

BandedCorrelationMatrix gen_banded_correlation(Index M, std::size_t bandwidth, double decay,
                                               std::uint64_t seed, std::uint64_t spacing,
                                               std::uint64_t first_position) {
  if (M <= 0) throw ArgumentError("gen_banded_correlation: M must be positive");
  if (bandwidth >= static_cast<std::size_t>(M))
    throw ArgumentError("gen_banded_correlation: bandwidth must be < M");
  if (!(decay >= 0) || spacing == 0)
    throw ArgumentError("gen_banded_correlation: need decay >= 0 and spacing > 0");
  const auto bw = static_cast<Index>(bandwidth);
  Rng rng(derive_seed({seed, stream::kLd}));
  const Mat load = ma_loadings(M, bw, decay, rng);

  std::vector<float> band(static_cast<std::size_t>(M * (bw + 1)), 0.0f);
  for (Index i = 0; i < M; ++i) {
    float* row = &band[static_cast<std::size_t>(i * (bw + 1))];
    row[bw] = 1.0f;
    for (Index off = 1; off <= std::min(bw, i); ++off) {
      // Variant i - off covers latents i - off .. i - off + bw; i covers i .. i + bw.
      const Index j = i - off;
      double c = 0;
      for (Index k = 0; k + off <= bw; ++k) c += load(j, k + off) * load(i, k);
      row[bw - off] = static_cast<float>(c);
    }
  }
  std::vector<std::uint64_t> positions(static_cast<std::size_t>(M));
  for (Index m = 0; m < M; ++m)
    positions[static_cast<std::size_t>(m)] = first_position + static_cast<std::uint64_t>(m) * spacing;
  return BandedCorrelationMatrix(bandwidth, std::move(positions), std::move(band));
}

std::string to_string(TruthKind kind) {
  return kind == TruthKind::network ? "network" : "threshold";
}

TruthKind truth_kind_from_string(const std::string& s) {
  if (s == "network") return TruthKind::network;
  if (s == "threshold") return TruthKind::threshold;
  throw ArgumentError("unknown truth kind '" + s + "'");
}

GroundTruth scale_ground_truth(const Vec& f_raw, double N, double M, double sigma2,
                               TruthKind kind) {
  if (f_raw.size() == 0 || !(f_raw.array() > 0).all() || !f_raw.allFinite())
    throw ArgumentError("scale_ground_truth: f_raw must be positive and finite");
  if (!(N > 0) || !(M > 0) || !(sigma2 > 0 && sigma2 <= 1))
    throw ArgumentError("scale_ground_truth: need N, M > 0 and sigma2 in (0, 1]");
  GroundTruth gt;
  gt.kind = kind;
  gt.target_mean = N / M * (1.0 - sigma2);
  gt.scale_applied = gt.target_mean / f_raw.mean();
  gt.f_true = f_raw * gt.scale_applied;
  return gt;
}

GroundTruth threshold_ground_truth(const AnnotationTensor& annot, double M,
                                   const ThresholdRule& rule) {
  if (annot.w < rule.pos_end || rule.pos_begin < 0 || rule.pos_begin >= rule.pos_end)
    throw ArgumentError("threshold_ground_truth: window length " + std::to_string(annot.w) +
                        " does not cover positions up to " + std::to_string(rule.pos_end - 1));
  for (Index c : rule.channels)
    if (c < 0 || c >= annot.d_func + annot.d_pred)
      throw ArgumentError("threshold_ground_truth: channel " + std::to_string(c) +
                          " out of range");
  if (!(M > 0)) throw ArgumentError("threshold_ground_truth: M must be positive");
  GroundTruth gt;
  gt.kind = TruthKind::threshold;
  gt.f_true.resize(annot.num_variants);
  const double span = static_cast<double>(rule.pos_end - rule.pos_begin);
  for (Index m = 0; m < annot.num_variants; ++m) {
    double logf = -std::log(M);
    for (std::size_t k = 0; k < rule.channels.size(); ++k) {
      const Index c = rule.channels[k];
      double s = 0;
      if (c < annot.d_func) {
        for (Index p = rule.pos_begin; p < rule.pos_end; ++p) s += annot.func(m, c, p);
      } else {
        s = span * annot.pred(m, c - annot.d_func);
      }
      if (s > rule.thresholds[k]) logf += rule.values[k];
    }
    gt.f_true[m] = std::exp(logf);
  }
  return gt;
}

GroundTruth network_ground_truth(const PriorInputs& inputs, const NetworkSpec& spec,
                                 std::uint64_t seed, double log_sd, double alpha) {
  NetworkSpec s = spec;
  s.head = HeadKind::exp;
  PriorParams net = build_network(s, derive_seed({seed, stream::kTruth}), 0.0);
  const Range all{0, inputs.num_variants()};
  // With alpha = 0 and an exp head, log of the forward pass is the pre-head output.
  const Vec z_raw = prior_forward(net, inputs, all).array().log();
  const double mean = z_raw.mean();
  const double sd = std::sqrt((z_raw.array() - mean).square().mean());
  if (!(sd > 0)) throw NumericalError("network_ground_truth: constant network output");
  GroundTruth gt;
  gt.kind = TruthKind::network;
  gt.f_true.resize(inputs.num_variants());
  for (Index m = 0; m < inputs.num_variants(); ++m)
    gt.f_true[m] = std::exp(alpha * inputs.log_freq_term[m] + log_sd * (z_raw[m] - mean) / sd);
  return gt;
}

Vec gen_allele_freqs(Index M, std::uint64_t seed) {
  Rng rng(derive_seed({seed, stream::kAnnot, 1}));
  std::uniform_real_distribution<double> u(0.01, 0.99);
  Vec freq(M);
  for (Index m = 0; m < M; ++m) freq[m] = u(rng);
  return freq;
}

AnnotationTensor gen_annotations(const AnnotationSimConfig& cfg, const Vec& freq,
                                 const Vec& ld_score, std::uint64_t seed) {
  if (cfg.d_func <= 0 || cfg.w <= 0 || !(std::abs(cfg.ar_coef) < 1) ||
      !(std::abs(cfg.neighbor_corr) < 1))
    throw ArgumentError("gen_annotations: invalid config");
  const Index M = freq.size();
  Rng rng(derive_seed({seed, stream::kAnnot, 2}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double innov = cfg.noise_sd * std::sqrt(1.0 - cfg.ar_coef * cfg.ar_coef);
  const double lvl_innov = cfg.level_sd * std::sqrt(1.0 - cfg.neighbor_corr * cfg.neighbor_corr);

  std::vector<float> func(static_cast<std::size_t>(M * cfg.d_func * cfg.w));
  Vec level = Vec::Zero(cfg.d_func);
  for (Index m = 0; m < M; ++m) {
    for (Index d = 0; d < cfg.d_func; ++d) {
      level[d] = m == 0 ? cfg.level_sd * normal(rng)
                        : cfg.neighbor_corr * level[d] + lvl_innov * normal(rng);
      double x = cfg.noise_sd * normal(rng);
      float* row = &func[static_cast<std::size_t>((m * cfg.d_func + d) * cfg.w)];
      for (Index p = 0; p < cfg.w; ++p) {
        if (p > 0) x = cfg.ar_coef * x + innov * normal(rng);
        row[p] = static_cast<float>(level[d] + x);
      }
    }
  }
  std::vector<float> pred(static_cast<std::size_t>(M * 3));
  for (Index m = 0; m < M; ++m) {
    pred[static_cast<std::size_t>(3 * m)] = static_cast<float>(freq[m]);
    pred[static_cast<std::size_t>(3 * m + 1)] = static_cast<float>(std::min(freq[m], 1 - freq[m]));
    pred[static_cast<std::size_t>(3 * m + 2)] = static_cast<float>(ld_score[m]);
  }
  return AnnotationTensor::make(cfg.d_func, cfg.w, 3, std::move(func), std::move(pred), freq,
                                ld_score);
}

SampledAssociations sample_associations(const BandedCorrelationMatrix& R, const Vec& f_true,
                                        double N, double sigma2, std::uint64_t seed) {
  const Index M = R.num_variants();
  if (f_true.size() != M) throw ArgumentError("sample_associations: f length differs from M");
  if (!(f_true.array() >= 0).all() || !f_true.allFinite())
    throw ArgumentError("sample_associations: f must be nonnegative");
  SampledAssociations out;
  Rng effects(derive_seed({seed, stream::kEffects}));
  out.beta = f_true.array().sqrt() * standard_normals(M, effects).array();

  Rng noise(derive_seed({seed, stream::kNoise}));
  const double sigma_N = std::sqrt(sigma2 / N);
  Vec eps;
  if (M <= kDenseSamplingLimit) {
    const ClippedSpectrum spec = clip_spectrum(R.dense());
    const Vec z = standard_normals(spec.rank, noise);
    eps = sigma_N * (spec.eigvecs * (spec.eigvals.array().sqrt() * z.array()).matrix());
  } else {
    const auto L = banded_cholesky(R);
    eps = sigma_N *
          banded_lower_matvec(L, M, static_cast<Index>(R.bandwidth()), standard_normals(M, noise));
  }
  out.stats = SummaryStats::make(banded_matvec(R, out.beta) + eps, N, sigma2);
  return out;
}

TestGenotypeSample gen_genotype_fixture(Index M, Index N, std::size_t bandwidth,
                                        const Vec& f_true, double sigma2, std::uint64_t seed,
                                        double decay) {
  if (M <= 0 || N <= 1 || M > 200 || N > 200)
    throw ArgumentError("gen_genotype_fixture: need 0 < M <= 200 and 1 < N <= 200");
  if (f_true.size() != M || !(f_true.array() >= 0).all())
    throw ArgumentError("gen_genotype_fixture: f must be nonnegative with length M");
  if (bandwidth >= static_cast<std::size_t>(M))
    throw ArgumentError("gen_genotype_fixture: bandwidth must be < M");
  const auto bw = static_cast<Index>(bandwidth);
  Rng rng(derive_seed({seed, stream::kGenotype}));
  const Mat load = ma_loadings(M, bw, decay, rng);
  const Mat latent = [&] {
    Mat z(M + bw, N);
    for (Index j = 0; j < N; ++j) z.col(j) = standard_normals(M + bw, rng);
    return z;
  }();

  TestGenotypeSample s;
  s.sigma2 = sigma2;
  s.X.resize(M, N);
  for (Index m = 0; m < M; ++m) s.X.row(m) = load.row(m) * latent.middleRows(m, bw + 1);
  for (Index m = 0; m < M; ++m) {
    s.X.row(m).array() -= s.X.row(m).mean();
    const double sd = std::sqrt(s.X.row(m).squaredNorm() / static_cast<double>(N));
    s.X.row(m) /= sd;
  }
  s.beta_true = f_true.array().sqrt() * standard_normals(M, rng).array();
  s.y = s.X.transpose() * s.beta_true + std::sqrt(sigma2) * standard_normals(N, rng);
  s.R = s.X * s.X.transpose() / static_cast<double>(N);
  s.R.diagonal().setOnes();
  s.beta_hat = s.X * s.y / static_cast<double>(N);
  return s;
}

double y_form_delta_nll(const TestGenotypeSample& s, const Vec& f) {
  auto nll = [&](const Vec& ff) {
    Mat S = s.X.transpose() * ff.asDiagonal() * s.X;
    S.diagonal().array() += s.sigma2;
    const Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalError("y_form_delta_nll: covariance not SPD");
    const double quad = s.y.dot(llt.solve(s.y));
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return 0.5 * (quad + logdet);
  };
  return nll(f) - nll(Vec::Zero(f.size()));
}

double beta_form_delta_nll(const TestGenotypeSample& s, const Vec& f) {
  const double sigma2_N = s.sigma2 / s.N();
  auto nll = [&](const Vec& ff) {
    const Mat A = s.R * ff.asDiagonal() * s.R + sigma2_N * s.R;
    const DenseNll d = dense_nll_oracle(A, s.beta_hat);
    return 0.5 * (d.quad + d.logpdet);
  };
  return nll(f) - nll(Vec::Zero(f.size()));
}

}  // namespace deepwas
