#include "deepwas/priors.hpp"

#include "binio.hpp"
#include "deepwas/rng.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace deepwas {

AnnotationTensor AnnotationTensor::make(Index d_func, Index w, Index d_pred,
                                        std::vector<float> func_data,
                                        std::vector<float> pred_data, Vec freq, Vec ld_score) {
  if (d_func < 0 || d_pred < 0 || w <= 0) throw ArgumentError("annotation dimensions invalid");
  AnnotationTensor a;
  a.num_variants = freq.size();
  a.d_func = d_func;
  a.w = w;
  a.d_pred = d_pred;
  const auto M = static_cast<std::size_t>(a.num_variants);
  if (func_data.size() != M * static_cast<std::size_t>(d_func * w) ||
      pred_data.size() != M * static_cast<std::size_t>(d_pred) ||
      ld_score.size() != freq.size())
    throw ArgumentError("annotation arrays do not match num_variants");
  if ((freq.array() < 0).any() || (freq.array() > 1).any())
    throw ValidationError("allele frequencies must lie in [0, 1]");
  a.func_data = std::move(func_data);
  a.pred_data = std::move(pred_data);
  a.maf = freq.array().min(1.0 - freq.array());
  a.freq = std::move(freq);
  a.ld_score = std::move(ld_score);
  return a;
}

Mat AnnotationTensor::func_window_means() const {
  Mat out(num_variants, d_func);
  for (Index m = 0; m < num_variants; ++m)
    for (Index d = 0; d < d_func; ++d) {
      const float* row = &func_data[static_cast<std::size_t>((m * d_func + d) * w)];
      double s = 0;
      for (Index k = 0; k < w; ++k) s += row[k];
      out(m, d) = s / static_cast<double>(w);
    }
  return out;
}

Mat AnnotationTensor::pred_matrix() const {
  Mat out(num_variants, d_pred);
  for (Index m = 0; m < num_variants; ++m)
    for (Index d = 0; d < d_pred; ++d) out(m, d) = pred(m, d);
  return out;
}

namespace {
constexpr std::uint32_t kDwanVersion = 1;
constexpr std::uint32_t kDwpmVersion = 1;
}  // namespace

void save_annotations(const AnnotationTensor& a, const std::filesystem::path& path) {
  std::vector<char> out;
  out.reserve(32 + 4 * (a.func_data.size() + a.pred_data.size() + 2 * a.freq.size()));
  binio::put_magic(out, "DWAN");
  binio::put<std::uint32_t>(out, kDwanVersion);
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(a.num_variants));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.d_func));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.w));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.d_pred));
  for (float v : a.func_data) binio::put<float>(out, v);
  for (float v : a.pred_data) binio::put<float>(out, v);
  for (Index m = 0; m < a.num_variants; ++m) binio::put<float>(out, static_cast<float>(a.freq[m]));
  for (Index m = 0; m < a.num_variants; ++m)
    binio::put<float>(out, static_cast<float>(a.ld_score[m]));
  binio::write_file(path, out);
}

AnnotationTensor load_annotations(const std::filesystem::path& path) {
  binio::Reader in(binio::read_file(path), path.string());
  in.expect_magic("DWAN");
  const auto version = in.get<std::uint32_t>();
  if (version != kDwanVersion)
    throw FormatError(path.string() + ": unsupported DWAN version " + std::to_string(version));
  const auto M = in.get<std::uint64_t>();
  const auto d_func = in.get<std::uint32_t>();
  const auto w = in.get<std::uint32_t>();
  const auto d_pred = in.get<std::uint32_t>();
  if (M >= (std::uint64_t{1} << 36) ||
      in.remaining() != 4 * M * (std::uint64_t{d_func} * w + d_pred + 2))
    throw FormatError(path.string() + ": header does not match payload size");
  std::vector<float> func(M * d_func * w), pred(M * d_pred);
  for (auto& v : func) v = in.get<float>();
  for (auto& v : pred) v = in.get<float>();
  Vec freq(static_cast<Index>(M)), ld(static_cast<Index>(M));
  for (Index m = 0; m < freq.size(); ++m) freq[m] = in.get<float>();
  for (Index m = 0; m < ld.size(); ++m) ld[m] = in.get<float>();
  in.expect_end();
  return AnnotationTensor::make(d_func, w, d_pred, std::move(func), std::move(pred),
                                std::move(freq), std::move(ld));
}

std::pair<AnnotationTensor, FeatureNormalization> normalize_features(const AnnotationTensor& raw) {
  if (raw.num_variants < 2) throw ArgumentError("normalize_features: need at least 2 variants");
  AnnotationTensor out = raw;
  FeatureNormalization norm;
  norm.func_mean.resize(raw.d_func);
  norm.func_std.resize(raw.d_func);
  norm.pred_mean.resize(raw.d_pred);
  norm.pred_std.resize(raw.d_pred);

  auto standardize = [](double sum, double sumsq, double n, double& mean, double& sd) {
    mean = sum / n;
    const double var = std::max(0.0, sumsq / n - mean * mean);
    sd = var > 1e-24 ? std::sqrt(var) : 0.0;
  };

  for (Index d = 0; d < raw.d_func; ++d) {
    // Two passes for a stable variance.
    double sum = 0;
    for (Index m = 0; m < raw.num_variants; ++m)
      for (Index k = 0; k < raw.w; ++k) sum += raw.func(m, d, k);
    const double n = static_cast<double>(raw.num_variants * raw.w);
    const double mean0 = sum / n;
    double ss = 0;
    for (Index m = 0; m < raw.num_variants; ++m)
      for (Index k = 0; k < raw.w; ++k) ss += std::pow(raw.func(m, d, k) - mean0, 2);
    double mean, sd;
    standardize(sum, ss + n * mean0 * mean0, n, mean, sd);
    norm.func_mean[d] = mean;
    norm.func_std[d] = sd > 0 ? sd : 1.0;
    for (Index m = 0; m < raw.num_variants; ++m)
      for (Index k = 0; k < raw.w; ++k) {
        auto& v = out.func_data[static_cast<std::size_t>((m * raw.d_func + d) * raw.w + k)];
        v = sd > 0 ? static_cast<float>((raw.func(m, d, k) - mean) / sd) : 0.0f;
      }
  }
  for (Index d = 0; d < raw.d_pred; ++d) {
    double sum = 0;
    for (Index m = 0; m < raw.num_variants; ++m) sum += raw.pred(m, d);
    const double n = static_cast<double>(raw.num_variants);
    const double mean0 = sum / n;
    double ss = 0;
    for (Index m = 0; m < raw.num_variants; ++m) ss += std::pow(raw.pred(m, d) - mean0, 2);
    double mean, sd;
    standardize(sum, ss + n * mean0 * mean0, n, mean, sd);
    norm.pred_mean[d] = mean;
    norm.pred_std[d] = sd > 0 ? sd : 1.0;
    for (Index m = 0; m < raw.num_variants; ++m) {
      auto& v = out.pred_data[static_cast<std::size_t>(m * raw.d_pred + d)];
      v = sd > 0 ? static_cast<float>((raw.pred(m, d) - mean) / sd) : 0.0f;
    }
  }
  return {std::move(out), std::move(norm)};
}

// ---------------------------------------------------------------------------

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::constant: return "constant";
    case ModelKind::glm: return "glm";
    case ModelKind::network: return "network";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "constant") return ModelKind::constant;
  if (s == "glm") return ModelKind::glm;
  if (s == "network") return ModelKind::network;
  throw ArgumentError("unknown model kind '" + s + "'");
}

namespace {

struct NetLayout {
  Index embed_w = 0, embed_b = 0;
  std::vector<Index> hid_w, hid_b, hid_in;
  Index out_w = 0, out_b = 0, out_in = 0;
  Index total = 0;
};

NetLayout net_layout(const NetworkSpec& s) {
  NetLayout L;
  Index at = 0;
  L.embed_w = at;
  at += s.hidden * s.d_func;
  L.embed_b = at;
  at += s.hidden;
  Index in = s.hidden + s.d_pred;
  for (Index l = 0; l < s.num_hidden; ++l) {
    L.hid_in.push_back(in);
    L.hid_w.push_back(at);
    at += s.hidden * in;
    L.hid_b.push_back(at);
    at += s.hidden;
    in = s.hidden;
  }
  L.out_in = in;
  L.out_w = at;
  at += in;
  L.out_b = at;
  at += 1;
  L.total = at;
  return L;
}

void validate_spec(const NetworkSpec& s) {
  if (s.d_func <= 0 || s.d_pred < 0 || s.w <= 0 || s.hidden <= 0 || s.num_hidden < 0 ||
      !(s.init_gain > 0))
    throw ArgumentError("invalid network spec");
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double gelu_prime(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}
double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kTiny = std::numeric_limits<double>::min();

double head_value(HeadKind h, double x) {
  return std::max(h == HeadKind::softplus ? softplus(x) : std::exp(x), kTiny);
}
double head_slope(HeadKind h, double x) {
  return h == HeadKind::softplus ? sigmoid(x) : std::exp(x);
}

void check_params(const PriorParams& p, const PriorInputs& in) {
  if (!p.weights.allFinite() || !std::isfinite(p.alpha))
    throw NumericalError("prior parameters contain NaN or Inf");
  if (p.kind != ModelKind::constant &&
      (in.pooled.cols() != p.d_func || in.pred.cols() != p.d_pred))
    throw ArgumentError("prior inputs do not match the model's channel counts");
  Index expected = 1;
  if (p.kind == ModelKind::glm) expected = p.d_func + p.d_pred + 1;
  if (p.kind == ModelKind::network) expected = net_layout(p.net).total;
  if (p.weights.size() != expected) throw ArgumentError("prior weight vector has wrong length");
}

void check_indices(const PriorInputs& in, std::span<const Index> idx) {
  for (Index i : idx)
    if (i < 0 || i >= in.num_variants()) throw ArgumentError("prior index out of range");
}

// Everything the network backward pass needs from the forward pass.
struct NetTrace {
  Mat x0;                  // d_func x n
  std::vector<Mat> z;      // z[0] = [embed; pred], z[l] = gelu(a[l-1])
  std::vector<Mat> a;      // hidden pre-activations
  Eigen::RowVectorXd out;  // head pre-activation
};

NetTrace net_forward(const PriorParams& p, const PriorInputs& in, std::span<const Index> idx) {
  const NetworkSpec& s = p.net;
  const NetLayout L = net_layout(s);
  const auto n = static_cast<Index>(idx.size());
  const double* w = p.weights.data();
  NetTrace t;
  t.x0.resize(s.d_func, n);
  Mat z0(s.hidden + s.d_pred, n);
  for (Index j = 0; j < n; ++j) {
    t.x0.col(j) = in.pooled.row(idx[static_cast<std::size_t>(j)]).transpose();
    z0.col(j).tail(s.d_pred) = in.pred.row(idx[static_cast<std::size_t>(j)]).transpose();
  }
  const Eigen::Map<const Mat> We(w + L.embed_w, s.hidden, s.d_func);
  const Eigen::Map<const Vec> be(w + L.embed_b, s.hidden);
  z0.topRows(s.hidden) = (We * t.x0).colwise() + be;
  t.z.push_back(std::move(z0));
  for (Index l = 0; l < s.num_hidden; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const Eigen::Map<const Mat> Wl(w + L.hid_w[li], s.hidden, L.hid_in[li]);
    const Eigen::Map<const Vec> bl(w + L.hid_b[li], s.hidden);
    Mat a = (Wl * t.z.back()).colwise() + bl;
    t.z.push_back(a.unaryExpr([](double x) { return gelu(x); }));
    t.a.push_back(std::move(a));
  }
  const Eigen::Map<const Vec> wo(w + L.out_w, L.out_in);
  t.out = (wo.transpose() * t.z.back()).array() + w[L.out_b];
  return t;
}

Vec output_values(const PriorParams& p, const PriorInputs& in, std::span<const Index> idx,
                  Vec* slope) {
  const auto n = static_cast<Index>(idx.size());
  Vec nn(n);
  if (slope) slope->resize(n);
  switch (p.kind) {
    case ModelKind::constant:
      nn.setConstant(std::exp(p.weights[0]));
      if (slope) slope->setConstant(std::exp(p.weights[0]));
      break;
    case ModelKind::glm: {
      const auto wf = p.weights.head(p.d_func);
      const auto wp = p.weights.segment(p.d_func, p.d_pred);
      const double c = p.weights[p.d_func + p.d_pred];
      for (Index j = 0; j < n; ++j) {
        const Index m = idx[static_cast<std::size_t>(j)];
        nn[j] = std::max(std::exp(in.pooled.row(m).dot(wf) + in.pred.row(m).dot(wp) + c), kTiny);
      }
      if (slope) *slope = nn;
      break;
    }
    case ModelKind::network: {
      const NetTrace t = net_forward(p, in, idx);
      for (Index j = 0; j < n; ++j) {
        nn[j] = head_value(p.net.head, t.out[j]);
        if (slope) (*slope)[j] = head_slope(p.net.head, t.out[j]);
      }
      break;
    }
  }
  return nn;
}

Vec freq_factor(const PriorParams& p, const PriorInputs& in, std::span<const Index> idx) {
  Vec out(static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    out[static_cast<Index>(j)] = std::exp(p.alpha * in.log_freq_term[idx[j]]);
  return out;
}

std::vector<Index> range_indices(Range r) {
  std::vector<Index> idx(static_cast<std::size_t>(r.size()));
  std::iota(idx.begin(), idx.end(), r.begin);
  return idx;
}

}  // namespace

Index network_param_count(const NetworkSpec& spec) {
  validate_spec(spec);
  return net_layout(spec).total;
}

Index PriorParams::offset_index() const {
  switch (kind) {
    case ModelKind::constant: return 0;
    case ModelKind::glm: return d_func + d_pred;
    case ModelKind::network: return net_layout(net).out_b;
  }
  return 0;
}

PriorParams make_constant_prior(double log_scale, double alpha) {
  PriorParams p;
  p.kind = ModelKind::constant;
  p.alpha = alpha;
  p.weights = Vec::Constant(1, log_scale);
  return p;
}

PriorParams make_glm_prior(Index d_func, Index d_pred, double alpha) {
  if (d_func < 0 || d_pred < 0) throw ArgumentError("invalid GLM dimensions");
  PriorParams p;
  p.kind = ModelKind::glm;
  p.alpha = alpha;
  p.d_func = d_func;
  p.d_pred = d_pred;
  p.weights = Vec::Zero(d_func + d_pred + 1);
  return p;
}

PriorParams build_network(const NetworkSpec& spec, std::uint64_t seed, double alpha) {
  validate_spec(spec);
  const NetLayout L = net_layout(spec);
  PriorParams p;
  p.kind = ModelKind::network;
  p.alpha = alpha;
  p.d_func = spec.d_func;
  p.d_pred = spec.d_pred;
  p.net = spec;
  p.weights = Vec::Zero(L.total);
  Rng rng(derive_seed({seed, stream::kInit}));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Index at, Index count, Index fan_in) {
    const double sd = spec.init_gain / std::sqrt(static_cast<double>(fan_in));
    for (Index k = 0; k < count; ++k) p.weights[at + k] = sd * normal(rng);
  };
  fill(L.embed_w, spec.hidden * spec.d_func, spec.d_func);
  for (std::size_t l = 0; l < L.hid_w.size(); ++l)
    fill(L.hid_w[l], spec.hidden * L.hid_in[l], L.hid_in[l]);
  fill(L.out_w, L.out_in, L.out_in);
  return p;
}

void save_prior_params(const PriorParams& params, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["model_kind"] = to_string(params.kind);
  header["alpha"] = params.alpha;
  header["train_alpha"] = params.train_alpha;
  header["d_func"] = params.d_func;
  header["d_pred"] = params.d_pred;
  if (params.kind == ModelKind::network) {
    const NetworkSpec& s = params.net;
    header["spec"] = {{"d_func", s.d_func},     {"d_pred", s.d_pred},
                      {"w", s.w},               {"hidden", s.hidden},
                      {"num_hidden", s.num_hidden},
                      {"head", s.head == HeadKind::softplus ? "softplus" : "exp"},
                      {"init_gain", s.init_gain}};
  } else {
    header["spec"] = nlohmann::ordered_json::object();
  }
  const std::string text = header.dump();
  std::vector<char> out;
  binio::put_magic(out, "DWPM");
  binio::put<std::uint32_t>(out, kDwpmVersion);
  binio::put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(params.weights.size()));
  for (Index k = 0; k < params.weights.size(); ++k) binio::put<double>(out, params.weights[k]);
  binio::write_file(path, out);
}

PriorParams load_prior_params(const std::filesystem::path& path) {
  binio::Reader in(binio::read_file(path), path.string());
  in.expect_magic("DWPM");
  if (in.get<std::uint32_t>() != kDwpmVersion)
    throw FormatError(path.string() + ": unsupported model version");
  const auto hlen = in.get<std::uint64_t>();
  if (hlen > in.remaining()) throw FormatError(path.string() + ": truncated header");
  PriorParams p;
  try {
    const auto header = nlohmann::json::parse(in.get_bytes(hlen));
    p.kind = model_kind_from_string(header.at("model_kind").get<std::string>());
    p.alpha = header.at("alpha").get<double>();
    p.train_alpha = header.at("train_alpha").get<bool>();
    p.d_func = header.at("d_func").get<Index>();
    p.d_pred = header.at("d_pred").get<Index>();
    if (p.kind == ModelKind::network) {
      const auto& s = header.at("spec");
      p.net.d_func = s.at("d_func").get<Index>();
      p.net.d_pred = s.at("d_pred").get<Index>();
      p.net.w = s.at("w").get<Index>();
      p.net.hidden = s.at("hidden").get<Index>();
      p.net.num_hidden = s.at("num_hidden").get<Index>();
      p.net.head = s.at("head").get<std::string>() == "exp" ? HeadKind::exp : HeadKind::softplus;
      p.net.init_gain = s.at("init_gain").get<double>();
      validate_spec(p.net);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad model header: " + e.what());
  }
  const auto n = in.get<std::uint64_t>();
  if (in.remaining() != n * 8) throw FormatError(path.string() + ": weight count mismatch");
  p.weights.resize(static_cast<Index>(n));
  for (Index k = 0; k < p.weights.size(); ++k) p.weights[k] = in.get<double>();
  return p;
}

PriorInputs make_prior_inputs(const AnnotationTensor& annot) {
  PriorInputs in;
  in.pooled = annot.func_window_means();
  in.pred = annot.pred_matrix();
  in.log_freq_term.resize(annot.num_variants);
  for (Index m = 0; m < annot.num_variants; ++m) {
    const double fr = std::clamp(annot.freq[m], kFreqClamp, 1.0 - kFreqClamp);
    in.log_freq_term[m] = std::log(fr * (1.0 - fr));
  }
  return in;
}

Vec prior_forward(const PriorParams& params, const PriorInputs& inputs,
                  std::span<const Index> indices) {
  check_params(params, inputs);
  check_indices(inputs, indices);
  return freq_factor(params, inputs, indices).cwiseProduct(
      output_values(params, inputs, indices, nullptr));
}

Vec prior_forward(const PriorParams& params, const PriorInputs& inputs, Range indices) {
  const auto idx = range_indices(indices);
  return prior_forward(params, inputs, idx);
}

Vec prior_forward(const PriorParams& params, const AnnotationTensor& annot,
                  std::span<const Index> indices) {
  return prior_forward(params, make_prior_inputs(annot), indices);
}

PriorGradient prior_backward(const PriorParams& params, const PriorInputs& inputs,
                             std::span<const Index> indices, const Vec& upstream) {
  check_params(params, inputs);
  check_indices(inputs, indices);
  if (upstream.size() != static_cast<Index>(indices.size()))
    throw ArgumentError("prior_backward: upstream length differs from index count");
  const Vec ff = freq_factor(params, inputs, indices);
  PriorGradient grad;
  grad.weights = Vec::Zero(params.param_count());
  Vec slope;
  const Vec nn = output_values(params, inputs, indices, &slope);
  Vec log_ff(static_cast<Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j)
    log_ff[static_cast<Index>(j)] = inputs.log_freq_term[indices[j]];
  grad.alpha = upstream.cwiseProduct(ff).cwiseProduct(nn).dot(log_ff);

  // d f / d (pre-head output)
  const Vec delta = upstream.cwiseProduct(ff).cwiseProduct(slope);
  switch (params.kind) {
    case ModelKind::constant:
      grad.weights[0] = delta.sum();
      break;
    case ModelKind::glm:
      for (std::size_t j = 0; j < indices.size(); ++j) {
        const Index m = indices[j];
        const double d = delta[static_cast<Index>(j)];
        grad.weights.head(params.d_func) += d * inputs.pooled.row(m).transpose();
        grad.weights.segment(params.d_func, params.d_pred) += d * inputs.pred.row(m).transpose();
      }
      grad.weights[params.d_func + params.d_pred] = delta.sum();
      break;
    case ModelKind::network: {
      const NetworkSpec& s = params.net;
      const NetLayout L = net_layout(s);
      const NetTrace t = net_forward(params, inputs, indices);
      const double* w = params.weights.data();
      double* g = grad.weights.data();
      const Eigen::RowVectorXd d_out = delta.transpose();
      Eigen::Map<Vec>(g + L.out_w, L.out_in) = t.z.back() * d_out.transpose();
      g[L.out_b] = d_out.sum();
      Mat d_z = Eigen::Map<const Vec>(w + L.out_w, L.out_in) * d_out;
      for (Index l = s.num_hidden - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const Mat d_a =
            d_z.cwiseProduct(t.a[li].unaryExpr([](double x) { return gelu_prime(x); }));
        Eigen::Map<Mat>(g + L.hid_w[li], s.hidden, L.hid_in[li]) = d_a * t.z[li].transpose();
        Eigen::Map<Vec>(g + L.hid_b[li], s.hidden) = d_a.rowwise().sum();
        d_z = Eigen::Map<const Mat>(w + L.hid_w[li], s.hidden, L.hid_in[li]).transpose() * d_a;
      }
      const Mat d_e = d_z.topRows(s.hidden);
      Eigen::Map<Mat>(g + L.embed_w, s.hidden, s.d_func) = d_e * t.x0.transpose();
      Eigen::Map<Vec>(g + L.embed_b, s.hidden) = d_e.rowwise().sum();
      break;
    }
  }
  return grad;
}

PriorGradient prior_backward(const PriorParams& params, const PriorInputs& inputs, Range indices,
                             const Vec& upstream) {
  const auto idx = range_indices(indices);
  return prior_backward(params, inputs, idx, upstream);
}

PriorGradient prior_backward(const PriorParams& params, const AnnotationTensor& annot,
                             std::span<const Index> indices, const Vec& upstream) {
  return prior_backward(params, make_prior_inputs(annot), indices, upstream);
}

void calibrate_offset(PriorParams& params, const PriorInputs& inputs, double target_mean_f) {
  if (!(target_mean_f > 0)) throw ArgumentError("calibrate_offset: target must be positive");
  const Range all{0, inputs.num_variants()};
  const Index k = params.offset_index();
  auto mean_at = [&](double offset) {
    params.weights[k] = offset;
    return prior_forward(params, inputs, all).mean();
  };
  double lo = -50, hi = 50;
  // Softplus heads are linear for large offsets; widen until bracketed.
  while (mean_at(hi) < target_mean_f && hi < 1e8) hi *= 4;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < target_mean_f ? lo : hi) = mid;
  }
  params.weights[k] = 0.5 * (lo + hi);
}

}  // namespace deepwas
