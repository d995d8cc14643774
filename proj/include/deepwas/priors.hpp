#pragma once

#include "deepwas/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace deepwas {

/// Per-variant annotations. `func_data` is variant-major with, per variant,
/// d_func rows of w positions; `pred_data` is variant-major d_pred scalars.
struct AnnotationTensor {
  Index num_variants = 0;
  Index d_func = 0;
  Index w = 0;
  Index d_pred = 0;
  std::vector<float> func_data;
  std::vector<float> pred_data;
  Vec freq;
  Vec maf;  // min(freq, 1 - freq), kept in sync by make()
  Vec ld_score;

  static AnnotationTensor make(Index d_func, Index w, Index d_pred, std::vector<float> func_data,
                               std::vector<float> pred_data, Vec freq, Vec ld_score);

  float func(Index m, Index d, Index pos) const {
    return func_data[static_cast<std::size_t>((m * d_func + d) * w + pos)];
  }
  float pred(Index m, Index d) const {
    return pred_data[static_cast<std::size_t>(m * d_pred + d)];
  }

  /// M x d_func matrix of per-channel means over the w positions.
  Mat func_window_means() const;
  Mat pred_matrix() const;
};

void save_annotations(const AnnotationTensor& annot, const std::filesystem::path& path);
AnnotationTensor load_annotations(const std::filesystem::path& path);

struct FeatureNormalization {
  Vec func_mean, func_std;  // per func channel, over variants and positions
  Vec pred_mean, pred_std;  // per pred channel
};

/// Standardizes every func and pred channel genome-wide. Zero-variance
/// channels become 0 with std recorded as 1. Needs at least two variants.
std::pair<AnnotationTensor, FeatureNormalization> normalize_features(const AnnotationTensor& raw);

// ---------------------------------------------------------------------------

enum class ModelKind { constant, glm, network };
enum class HeadKind { softplus, exp };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Desk-scale stand-in for the annotation network: per-position linear
/// embedding (d_func -> hidden), mean pool over the window, concatenation
/// with the pred scalars, `num_hidden` GELU layers, positive head.
struct NetworkSpec {
  Index d_func = 0;
  Index d_pred = 0;
  Index w = 1;
  Index hidden = 16;
  Index num_hidden = 2;
  HeadKind head = HeadKind::softplus;
  double init_gain = 1.0;
};

inline constexpr double kDefaultAlpha = 0.7;
inline constexpr double kFreqClamp = 1e-6;

struct PriorParams {
  ModelKind kind = ModelKind::constant;
  double alpha = kDefaultAlpha;
  bool train_alpha = false;
  Index d_func = 0;
  Index d_pred = 0;
  NetworkSpec net;  // network only
  Vec weights;

  Index param_count() const { return weights.size(); }
  /// Index of the additive output offset (w0, c, or the head bias).
  Index offset_index() const;
};

PriorParams make_constant_prior(double log_scale = 0.0, double alpha = kDefaultAlpha);
PriorParams make_glm_prior(Index d_func, Index d_pred, double alpha = kDefaultAlpha);
/// Deterministic in `seed`; throws ArgumentError on an invalid spec.
PriorParams build_network(const NetworkSpec& spec, std::uint64_t seed,
                          double alpha = kDefaultAlpha);
Index network_param_count(const NetworkSpec& spec);

void save_prior_params(const PriorParams& params, const std::filesystem::path& path);
PriorParams load_prior_params(const std::filesystem::path& path);

/// Dense per-variant model inputs derived once from an AnnotationTensor.
struct PriorInputs {
  Mat pooled;     // M x d_func window means
  Mat pred;       // M x d_pred
  Vec log_freq_term;  // log(freq (1 - freq)) with freq clamped to [1e-6, 1 - 1e-6]

  Index num_variants() const { return pooled.rows(); }
};

PriorInputs make_prior_inputs(const AnnotationTensor& annot);

/// f_m = (freq_m (1 - freq_m))^alpha NN(C_m), for every m in `indices`.
Vec prior_forward(const PriorParams& params, const PriorInputs& inputs,
                  std::span<const Index> indices);
Vec prior_forward(const PriorParams& params, const PriorInputs& inputs, Range indices);
Vec prior_forward(const PriorParams& params, const AnnotationTensor& annot,
                  std::span<const Index> indices);

struct PriorGradient {
  Vec weights;
  double alpha = 0;
};

/// Gradient of sum_m upstream_m f_m with respect to the weights (and alpha).
PriorGradient prior_backward(const PriorParams& params, const PriorInputs& inputs,
                             std::span<const Index> indices, const Vec& upstream);
PriorGradient prior_backward(const PriorParams& params, const PriorInputs& inputs, Range indices,
                             const Vec& upstream);
PriorGradient prior_backward(const PriorParams& params, const AnnotationTensor& annot,
                             std::span<const Index> indices, const Vec& upstream);

/// Sets the output offset so that the mean of f over all variants equals
/// target_mean_f (bisection; f is monotone in the offset).
void calibrate_offset(PriorParams& params, const PriorInputs& inputs, double target_mean_f);

}  // namespace deepwas
