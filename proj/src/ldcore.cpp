#include "deepwas/ldcore.hpp"

#include "binio.hpp"
#include "deepwas/parallel.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace deepwas {

BandedCorrelationMatrix::BandedCorrelationMatrix(std::size_t bandwidth,
                                                 std::vector<std::uint64_t> positions,
                                                 std::vector<float> band_data, double diag_tol)
    : bandwidth_(bandwidth), positions_(std::move(positions)), band_(std::move(band_data)) {
  const std::size_t M = positions_.size();
  if (M > 0 && bandwidth_ >= M)
    throw ValidationError("bandwidth " + std::to_string(bandwidth_) + " must be below M = " +
                          std::to_string(M));
  if (band_.size() != M * (bandwidth_ + 1))
    throw ValidationError("band storage holds " + std::to_string(band_.size()) +
                          " values, expected M * (bandwidth + 1) = " +
                          std::to_string(M * (bandwidth_ + 1)));
  for (std::size_t m = 1; m < M; ++m)
    if (positions_[m] <= positions_[m - 1])
      throw ValidationError("positions must be strictly increasing (index " + std::to_string(m) +
                            ")");
  const std::size_t w = bandwidth_ + 1;
  for (std::size_t m = 0; m < M; ++m) {
    const double d = band_[m * w + bandwidth_];
    if (!(std::abs(d - 1.0) <= diag_tol))
      throw ValidationError("diagonal entry " + std::to_string(m) + " is " + std::to_string(d));
    for (std::size_t k = 0; k < bandwidth_; ++k) {
      const float v = band_[m * w + k];
      if (!std::isfinite(v) || std::abs(v) > 1.0 + diag_tol)
        throw ValidationError("correlation out of range at row " + std::to_string(m));
      if (m + k < bandwidth_ && v != 0.0f)
        throw ValidationError("nonzero padding in band row " + std::to_string(m));
    }
  }
}

double BandedCorrelationMatrix::operator()(Index i, Index j) const {
  if (i < j) std::swap(i, j);
  const auto off = static_cast<std::size_t>(i - j);
  if (off > bandwidth_) return 0.0;
  return band_[static_cast<std::size_t>(i) * (bandwidth_ + 1) + (bandwidth_ - off)];
}

Mat BandedCorrelationMatrix::block(Range rows, Range cols) const {
  Mat out = Mat::Zero(rows.size(), cols.size());
  const auto bw = static_cast<Index>(bandwidth_);
  for (Index r = rows.begin; r < rows.end; ++r) {
    const Index lo = std::max(cols.begin, r - bw);
    const Index hi = std::min(cols.end, r + bw + 1);
    for (Index c = lo; c < hi; ++c) out(r - rows.begin, c - cols.begin) = (*this)(r, c);
  }
  return out;
}

Mat BandedCorrelationMatrix::dense() const {
  const Range all{0, num_variants()};
  return block(all, all);
}

namespace {
constexpr std::uint32_t kDwldVersion = 1;
}

void save_banded_matrix(const BandedCorrelationMatrix& R, const std::filesystem::path& path) {
  std::vector<char> out;
  out.reserve(24 + R.band_data().size() * 4 + R.positions().size() * 8);
  binio::put_magic(out, "DWLD");
  binio::put<std::uint32_t>(out, kDwldVersion);
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(R.num_variants()));
  binio::put<std::uint64_t>(out, R.bandwidth());
  for (float v : R.band_data()) binio::put<float>(out, v);
  for (std::uint64_t p : R.positions()) binio::put<std::uint64_t>(out, p);
  binio::write_file(path, out);
}

BandedCorrelationMatrix load_banded_matrix(const std::filesystem::path& path) {
  binio::Reader in(binio::read_file(path), path.string());
  in.expect_magic("DWLD");
  const auto version = in.get<std::uint32_t>();
  if (version != kDwldVersion)
    throw FormatError(path.string() + ": unsupported DWLD version " + std::to_string(version));
  const auto M = in.get<std::uint64_t>();
  const auto bw = in.get<std::uint64_t>();
  // Overflow-safe size check before allocating anything.
  if (bw >= (std::uint64_t{1} << 32) || M >= (std::uint64_t{1} << 40) ||
      in.remaining() != M * (bw + 1) * 4 + M * 8)
    throw FormatError(path.string() + ": header does not match payload size");
  std::vector<float> band(M * (bw + 1));
  for (auto& v : band) v = in.get<float>();
  std::vector<std::uint64_t> pos(M);
  for (auto& p : pos) p = in.get<std::uint64_t>();
  in.expect_end();
  return BandedCorrelationMatrix(bw, std::move(pos), std::move(band));
}

SummaryStats SummaryStats::make(Vec beta_hat, double sample_size, double sigma2) {
  if (!(sample_size > 0)) throw ValidationError("sample size must be positive");
  if (!(sigma2 > 0 && sigma2 <= 1)) throw ValidationError("sigma2 must lie in (0, 1]");
  if (!beta_hat.allFinite()) throw ValidationError("beta_hat contains non-finite values");
  SummaryStats s;
  s.beta_hat = std::move(beta_hat);
  s.sample_size = sample_size;
  s.sigma2 = sigma2;
  s.sigma2_N = sigma2 / sample_size;
  return s;
}

void save_summary_stats(const SummaryTable& table, double sample_size, double sigma2,
                        const std::filesystem::path& tsv_path,
                        const std::filesystem::path& meta_path) {
  const auto M = static_cast<std::size_t>(table.beta_hat.size());
  if (table.variant_ids.size() != M || table.positions.size() != M ||
      static_cast<std::size_t>(table.freq.size()) != M)
    throw ArgumentError("summary table columns differ in length");
  std::ofstream tsv(tsv_path, std::ios::trunc);
  if (!tsv) throw IoError("cannot open for writing: " + tsv_path.string());
  tsv << "variant_id\tposition\tbeta_hat\tfreq\n";
  char buf[64];
  for (std::size_t m = 0; m < M; ++m) {
    tsv << table.variant_ids[m] << '\t' << table.positions[m] << '\t';
    std::snprintf(buf, sizeof buf, "%.17g", table.beta_hat[static_cast<Index>(m)]);
    tsv << buf << '\t';
    std::snprintf(buf, sizeof buf, "%.17g", table.freq[static_cast<Index>(m)]);
    tsv << buf << '\n';
  }
  if (!tsv) throw IoError("write failed: " + tsv_path.string());

  nlohmann::ordered_json meta;
  meta["N"] = sample_size;
  meta["sigma2"] = sigma2;
  std::ofstream js(meta_path, std::ios::trunc);
  if (!js) throw IoError("cannot open for writing: " + meta_path.string());
  js << meta.dump(2) << '\n';
  if (!js) throw IoError("write failed: " + meta_path.string());
}

LoadedSummary load_summary_stats(const std::filesystem::path& tsv_path,
                                 const std::filesystem::path& meta_path) {
  std::ifstream js(meta_path);
  if (!js) throw IoError("cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  if (!meta.contains("N") || !meta.contains("sigma2"))
    throw FormatError(meta_path.string() + ": expected keys N and sigma2");

  std::ifstream tsv(tsv_path);
  if (!tsv) throw IoError("cannot open " + tsv_path.string());
  std::string line;
  if (!std::getline(tsv, line) || line != "variant_id\tposition\tbeta_hat\tfreq")
    throw FormatError(tsv_path.string() + ": bad header");
  LoadedSummary out;
  std::vector<double> beta, freq;
  std::size_t lineno = 1;
  while (std::getline(tsv, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, pos_s, beta_s, freq_s;
    if (!std::getline(row, id, '\t') || !std::getline(row, pos_s, '\t') ||
        !std::getline(row, beta_s, '\t') || !std::getline(row, freq_s))
      throw FormatError(tsv_path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    try {
      std::size_t used = 0;
      const auto pos = std::stoull(pos_s, &used);
      if (used != pos_s.size()) throw std::invalid_argument(pos_s);
      const double b = std::stod(beta_s, &used);
      if (used != beta_s.size()) throw std::invalid_argument(beta_s);
      const double f = std::stod(freq_s, &used);
      if (used != freq_s.size()) throw std::invalid_argument(freq_s);
      out.table.variant_ids.push_back(id);
      out.table.positions.push_back(pos);
      beta.push_back(b);
      freq.push_back(f);
    } catch (const std::logic_error&) {
      throw FormatError(tsv_path.string() + ":" + std::to_string(lineno) + ": unparsable value");
    }
  }
  out.table.beta_hat = Eigen::Map<Vec>(beta.data(), static_cast<Index>(beta.size()));
  out.table.freq = Eigen::Map<Vec>(freq.data(), static_cast<Index>(freq.size()));
  out.stats = SummaryStats::make(out.table.beta_hat, meta["N"].get<double>(),
                                 meta["sigma2"].get<double>());
  return out;
}

// ---------------------------------------------------------------------------

Mat ClippedSpectrum::pseudo_inverse() const {
  return eigvecs * eigvals.cwiseInverse().asDiagonal() * eigvecs.transpose();
}

Mat ClippedSpectrum::reconstruct() const {
  return eigvecs * eigvals.asDiagonal() * eigvecs.transpose();
}

Vec ClippedSpectrum::apply_pinv(const Vec& x) const {
  Vec coeff = eigvecs.transpose() * x;
  coeff.array() /= eigvals.array();
  return eigvecs * coeff;
}

ClippedSpectrum clip_spectrum(const Mat& block, double rel_tol) {
  if (block.rows() != block.cols()) throw ArgumentError("clip_spectrum: block is not square");
  if (block.size() == 0) throw DegenerateBlockError("clip_spectrum: empty block");
  if ((block - block.transpose()).cwiseAbs().maxCoeff() > 1e-6)
    throw ArgumentError("clip_spectrum: block is not symmetric");
  const Mat sym = 0.5 * (block + block.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericalError("clip_spectrum: eigensolver failed");
  const Vec& vals = eig.eigenvalues();  // ascending
  const double lmax = vals[vals.size() - 1];
  if (!(lmax > 0)) throw DegenerateBlockError("clip_spectrum: no positive eigenvalues");
  const double threshold = rel_tol * lmax;
  Index first = 0;
  while (first < vals.size() && vals[first] <= threshold) ++first;
  ClippedSpectrum out;
  out.rank = vals.size() - first;
  out.eigvals = vals.tail(out.rank);
  out.eigvecs = eig.eigenvectors().rightCols(out.rank);
  out.logpdet = out.eigvals.array().log().sum();
  return out;
}

// ---------------------------------------------------------------------------

WindowPlan plan_windows(const std::vector<std::uint64_t>& positions, std::uint64_t window_span,
                        std::uint64_t flank_span) {
  if (positions.empty()) throw ArgumentError("plan_windows: no positions");
  if (window_span == 0 || flank_span == 0)
    throw ArgumentError("plan_windows: spans must be positive");
  for (std::size_t m = 1; m < positions.size(); ++m)
    if (positions[m] <= positions[m - 1])
      throw ArgumentError("plan_windows: positions must be strictly increasing");

  struct Chunk {
    Range core;
    std::uint64_t lo, hi;  // coordinate bounds, inclusive
  };
  const std::uint64_t origin = positions.front();
  std::vector<Chunk> chunks;
  for (std::size_t m = 0; m < positions.size(); ++m) {
    const std::uint64_t k = (positions[m] - origin) / window_span;
    const std::uint64_t lo = origin + k * window_span;
    if (chunks.empty() || chunks.back().lo != lo)
      chunks.push_back({{static_cast<Index>(m), static_cast<Index>(m)}, lo, lo + window_span - 1});
    chunks.back().core.end = static_cast<Index>(m) + 1;
  }
  if (chunks.size() >= 2) {
    const Chunk& tail = chunks.back();
    const std::uint64_t extent = positions[static_cast<std::size_t>(tail.core.end - 1)] - tail.lo + 1;
    if (2 * extent < window_span) {
      chunks[chunks.size() - 2].core.end = tail.core.end;
      chunks[chunks.size() - 2].hi = tail.hi;
      chunks.pop_back();
    }
  }

  WindowPlan plan;
  plan.window_span = window_span;
  plan.flank_span = flank_span;
  for (const Chunk& c : chunks) {
    const std::uint64_t flo = c.lo > flank_span ? c.lo - flank_span : 0;
    const std::uint64_t fhi = c.hi + flank_span;
    const auto b = std::lower_bound(positions.begin(), positions.end(), flo) - positions.begin();
    const auto e = std::upper_bound(positions.begin(), positions.end(), fhi) - positions.begin();
    plan.cores.push_back(c.core);
    plan.flanks.push_back({static_cast<Index>(b), static_cast<Index>(e)});
  }
  return plan;
}

namespace {

double ld_score_row(const BandedCorrelationMatrix& R, Index m) {
  const auto bw = static_cast<Index>(R.bandwidth());
  const Index lo = std::max<Index>(0, m - bw);
  const Index hi = std::min<Index>(R.num_variants(), m + bw + 1);
  double s = 0;
  for (Index j = lo; j < hi; ++j) {
    const double r = R(m, j);
    s += r * r;
  }
  return s;
}

}  // namespace

Vec ld_scores(const BandedCorrelationMatrix& R) {
  Vec out(R.num_variants());
  for (Index m = 0; m < R.num_variants(); ++m) out[m] = ld_score_row(R, m);
  return out;
}

PrecomputedWindow precompute_window(const BandedCorrelationMatrix& R, const SummaryStats& stats,
                                    const WindowPlan& plan, std::size_t i, double rel_tol) {
  if (i >= plan.size())
    throw ArgumentError("precompute_window: window " + std::to_string(i) + " out of range");
  if (stats.beta_hat.size() != R.num_variants())
    throw ArgumentError("precompute_window: beta_hat length differs from M");
  PrecomputedWindow w;
  w.window_index = i;
  w.core = plan.cores[i];
  w.flank = plan.flanks[i];
  if (!w.flank.contains(w.core)) throw ArgumentError("precompute_window: flank misses its core");

  w.pinv = clip_spectrum(R.block(w.core, w.core), rel_tol);
  w.logpdet_R = w.pinv.logpdet;
  w.r_core_flank = R.block(w.core, w.flank);

  // T = R_flank,core U, so L = T diag(1/lambda) U^T and W = T diag(1/lambda) T^T.
  const Mat T = w.r_core_flank.transpose() * w.pinv.eigvecs;
  const Mat T_scaled = T * w.pinv.eigvals.cwiseInverse().asDiagonal();
  w.L = T_scaled * w.pinv.eigvecs.transpose();
  Mat W = T_scaled * T.transpose();
  w.W = 0.5 * (W + W.transpose());

  w.beta_core = stats.beta_hat.segment(w.core.begin, w.core.size());
  const Vec coeff = w.pinv.eigvecs.transpose() * w.beta_core;
  w.quad_null = (coeff.array().square() / w.pinv.eigvals.array()).sum();
  w.g = T_scaled * coeff;

  w.ld_core.resize(w.core.size());
  for (Index k = 0; k < w.core.size(); ++k) w.ld_core[k] = ld_score_row(R, w.core.begin + k);
  return w;
}

std::vector<PrecomputedWindow> precompute_all(const BandedCorrelationMatrix& R,
                                              const SummaryStats& stats, const WindowPlan& plan,
                                              double rel_tol, unsigned threads) {
  std::vector<PrecomputedWindow> out(plan.size());
  parallel_for(plan.size(), threads,
               [&](std::size_t i) { out[i] = precompute_window(R, stats, plan, i, rel_tol); });
  return out;
}

unsigned default_thread_count() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace deepwas

namespace deepwas {

namespace {

constexpr std::uint32_t kDwpwVersion = 1;

void put_range(std::vector<char>& out, Range r) {
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(r.begin));
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(r.end));
}

void put_mat(std::vector<char>& out, const Mat& m) {
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) binio::put<double>(out, m(i, j));
}

void put_vec(std::vector<char>& out, const Vec& v) {
  binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) binio::put<double>(out, v[i]);
}

Range get_range(binio::Reader& in) {
  Range r;
  r.begin = static_cast<Index>(in.get<std::uint64_t>());
  r.end = static_cast<Index>(in.get<std::uint64_t>());
  return r;
}

Index checked_size(binio::Reader& in, std::uint64_t elems_per_unit = 1) {
  const auto n = in.get<std::uint64_t>();
  if (n > in.remaining() / 8 / std::max<std::uint64_t>(1, elems_per_unit) + 1)
    throw FormatError("window cache: implausible size field");
  return static_cast<Index>(n);
}

Mat get_mat(binio::Reader& in) {
  const Index r = checked_size(in);
  const Index c = checked_size(in);
  if (static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(c) > in.remaining() / 8)
    throw FormatError("window cache: truncated matrix");
  Mat m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = in.get<double>();
  return m;
}

Vec get_vec(binio::Reader& in) {
  const Index n = checked_size(in);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = in.get<double>();
  return v;
}

}  // namespace

void save_windows(const std::vector<PrecomputedWindow>& windows,
                  const std::filesystem::path& path) {
  std::vector<char> out;
  binio::put_magic(out, "DWPW");
  binio::put<std::uint32_t>(out, kDwpwVersion);
  binio::put<std::uint64_t>(out, windows.size());
  for (const auto& w : windows) {
    binio::put<std::uint64_t>(out, w.window_index);
    put_range(out, w.core);
    put_range(out, w.flank);
    put_mat(out, w.pinv.eigvecs);
    put_vec(out, w.pinv.eigvals);
    binio::put<double>(out, w.pinv.logpdet);
    put_mat(out, w.L);
    put_mat(out, w.W);
    put_mat(out, w.r_core_flank);
    binio::put<double>(out, w.logpdet_R);
    put_vec(out, w.beta_core);
    put_vec(out, w.g);
    binio::put<double>(out, w.quad_null);
    put_vec(out, w.ld_core);
  }
  binio::write_file(path, out);
}

std::vector<PrecomputedWindow> load_windows(const std::filesystem::path& path) {
  binio::Reader in(binio::read_file(path), path.string());
  in.expect_magic("DWPW");
  if (in.get<std::uint32_t>() != kDwpwVersion)
    throw FormatError(path.string() + ": unsupported window cache version");
  const auto count = in.get<std::uint64_t>();
  if (count > in.remaining()) throw FormatError(path.string() + ": implausible window count");
  std::vector<PrecomputedWindow> out(static_cast<std::size_t>(count));
  for (auto& w : out) {
    w.window_index = static_cast<std::size_t>(in.get<std::uint64_t>());
    w.core = get_range(in);
    w.flank = get_range(in);
    w.pinv.eigvecs = get_mat(in);
    w.pinv.eigvals = get_vec(in);
    w.pinv.rank = w.pinv.eigvals.size();
    w.pinv.logpdet = in.get<double>();
    w.L = get_mat(in);
    w.W = get_mat(in);
    w.r_core_flank = get_mat(in);
    w.logpdet_R = in.get<double>();
    w.beta_core = get_vec(in);
    w.g = get_vec(in);
    w.quad_null = in.get<double>();
    w.ld_core = get_vec(in);
    const Index c = w.core.size(), p = w.flank.size();
    if (!w.flank.contains(w.core) || c <= 0 || w.L.rows() != p || w.L.cols() != c ||
        w.W.rows() != p || w.W.cols() != p || w.r_core_flank.rows() != c ||
        w.r_core_flank.cols() != p || w.beta_core.size() != c || w.g.size() != p ||
        w.ld_core.size() != c || w.pinv.eigvecs.rows() != c ||
        w.pinv.eigvecs.cols() != w.pinv.rank)
      throw FormatError(path.string() + ": inconsistent window " +
                        std::to_string(w.window_index));
  }
  in.expect_end();
  return out;
}

}  // namespace deepwas
