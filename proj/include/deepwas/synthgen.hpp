#pragma once

#include "deepwas/common.hpp"
#include "deepwas/ldcore.hpp"
#include "deepwas/priors.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace deepwas {

/// Correlation of a moving-average latent process: variant m loads on latents
/// m .. m + bandwidth with weights s_m decay^k U(0.5, 1.5), s_m a random sign.
/// Off-diagonals are rounded to float; the diagonal is exactly 1. Positions
/// are first_position + m * spacing.
BandedCorrelationMatrix gen_banded_correlation(Index M, std::size_t bandwidth, double decay,
                                               std::uint64_t seed, std::uint64_t spacing = 10,
                                               std::uint64_t first_position = 1000);

enum class TruthKind { network, threshold };

std::string to_string(TruthKind kind);
TruthKind truth_kind_from_string(const std::string& s);

struct GroundTruth {
  Vec f_true;
  TruthKind kind = TruthKind::network;
  double scale_applied = 1.0;
  double target_mean = 0.0;
};

/// f_true = f_raw * target / mean(f_raw) with target = (N / M) (1 - sigma2).
GroundTruth scale_ground_truth(const Vec& f_raw, double N, double M, double sigma2,
                               TruthKind kind = TruthKind::network);

/// Sparse indicator rule on the concatenated channels [func..., pred...],
/// with pred channels broadcast over positions.
struct ThresholdRule {
  std::array<Index, 4> channels{0, 2, 7, 12};
  std::array<double, 4> values{0.7, 0.5, 1.37, 0.5};
  std::array<double, 4> thresholds{0.0, 0.0, -20.0, -10.0};
  Index pos_begin = 113;  // inclusive
  Index pos_end = 144;    // exclusive
};

/// Unscaled truth with f_true = exp(log f) and
/// log f = sum_d v_d 1(sum_{pos} C_{d,pos} > e_d) - log M.
GroundTruth threshold_ground_truth(const AnnotationTensor& annot, double M,
                                   const ThresholdRule& rule = {});

/// Unscaled truth from a freshly seeded network of the given architecture:
/// f_raw = (freq (1 - freq))^alpha exp(log_sd * z), z the standardized
/// pre-head output over all variants.
GroundTruth network_ground_truth(const PriorInputs& inputs, const NetworkSpec& spec,
                                 std::uint64_t seed, double log_sd = 1.0,
                                 double alpha = kDefaultAlpha);

struct AnnotationSimConfig {
  Index d_func = 10;
  Index w = 32;
  double ar_coef = 0.9;      // along positions
  double level_sd = 1.0;     // per-variant, per-channel level
  double noise_sd = 0.5;     // stationary sd of the AR(1) part
  double neighbor_corr = 0.5;  // AR(1) of the levels along variants
};

/// Raw simulated annotations. pred channels are (freq, maf, ld_score).
AnnotationTensor gen_annotations(const AnnotationSimConfig& cfg, const Vec& freq,
                                 const Vec& ld_score, std::uint64_t seed);

/// Allele frequencies uniform on [0.01, 0.99].
Vec gen_allele_freqs(Index M, std::uint64_t seed);

struct SampledAssociations {
  SummaryStats stats;
  Vec beta;
};

/// beta_m ~ N(0, f_m) independently; beta_hat = R beta + eps with
/// eps ~ N(0, sigma2_N R), sigma2_N = sigma2 / N. Small R (M <= 256) uses
/// the clipped spectral square root, larger R a semidefinite banded
/// Cholesky factor.
SampledAssociations sample_associations(const BandedCorrelationMatrix& R, const Vec& f_true,
                                        double N, double sigma2, std::uint64_t seed);

inline constexpr Index kDenseSamplingLimit = 256;

/// Raw-data fixture: X is M x N with standardized rows.
struct TestGenotypeSample {
  Mat X;
  Vec y;
  Vec beta_true;
  Mat R;         // X X^T / N
  Vec beta_hat;  // X y / N
  double sigma2 = 1.0;

  double N() const { return static_cast<double>(X.cols()); }
};

TestGenotypeSample gen_genotype_fixture(Index M, Index N, std::size_t bandwidth,
                                        const Vec& f_true, double sigma2, std::uint64_t seed,
                                        double decay = 0.7);

/// NLL(f) - NLL(0) of y ~ N(0, X^T F X + sigma2 I).
double y_form_delta_nll(const TestGenotypeSample& s, const Vec& f);

/// NLL(f) - NLL(0) of beta_hat ~ N(R F R, sigma2/N R), pseudo-inverse form.
double beta_form_delta_nll(const TestGenotypeSample& s, const Vec& f);

}  // namespace deepwas
