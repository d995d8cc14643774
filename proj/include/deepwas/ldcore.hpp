#pragma once

#include "deepwas/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace deepwas {

/// LD matrix stored as its lower band. Row m holds R(m, m - bandwidth) ..
/// R(m, m) in `band_data()[m * (bandwidth + 1) + k]`; slots that would fall
/// before column 0 are zero padding. Entries further than `bandwidth` off the
/// diagonal are implicitly zero. Immutable after construction.
class BandedCorrelationMatrix {
 public:
  /// Validates positions (strictly increasing), the diagonal (within
  /// `diag_tol` of 1) and the layout. Throws ValidationError.
  BandedCorrelationMatrix(std::size_t bandwidth, std::vector<std::uint64_t> positions,
                          std::vector<float> band_data, double diag_tol = 1e-3);

  Index num_variants() const { return static_cast<Index>(positions_.size()); }
  std::size_t bandwidth() const { return bandwidth_; }
  const std::vector<std::uint64_t>& positions() const { return positions_; }
  const std::vector<float>& band_data() const { return band_; }

  double operator()(Index i, Index j) const;

  /// Dense copy of rows [rows.begin, rows.end) x cols [cols.begin, cols.end).
  Mat block(Range rows, Range cols) const;
  Mat dense() const;

 private:
  std::size_t bandwidth_;
  std::vector<std::uint64_t> positions_;
  std::vector<float> band_;
};

BandedCorrelationMatrix load_banded_matrix(const std::filesystem::path& path);
void save_banded_matrix(const BandedCorrelationMatrix& R, const std::filesystem::path& path);

/// Marginal associations with the sample size and residual variance they
/// were computed under.
struct SummaryStats {
  Vec beta_hat;
  double sample_size = 0;
  double sigma2 = 0;
  double sigma2_N = 0;

  /// Enforces sigma2 in (0, 1], N > 0 and sigma2_N = sigma2 / N exactly.
  static SummaryStats make(Vec beta_hat, double sample_size, double sigma2);
};

/// Per-variant rows of the summary-statistics TSV.
struct SummaryTable {
  std::vector<std::string> variant_ids;
  std::vector<std::uint64_t> positions;
  Vec beta_hat;
  Vec freq;
};

void save_summary_stats(const SummaryTable& table, double sample_size, double sigma2,
                        const std::filesystem::path& tsv_path,
                        const std::filesystem::path& meta_path);

struct LoadedSummary {
  SummaryTable table;
  SummaryStats stats;
};

LoadedSummary load_summary_stats(const std::filesystem::path& tsv_path,
                                 const std::filesystem::path& meta_path);

// ---------------------------------------------------------------------------
// Spectral clipping

inline constexpr double kDefaultClipTol = 1e-8;

/// Retained eigenpairs of a symmetric block. Eigenvalues at or below
/// rel_tol * lambda_max have been dropped.
struct ClippedSpectrum {
  Mat eigvecs;  // n x rank
  Vec eigvals;  // rank, all > threshold
  double logpdet = 0;
  Index rank = 0;

  Mat pseudo_inverse() const;
  Mat reconstruct() const;
  /// R^dagger x without forming R^dagger.
  Vec apply_pinv(const Vec& x) const;
};

/// Throws ArgumentError if `block` is not symmetric within 1e-6 and
/// DegenerateBlockError if nothing survives clipping.
ClippedSpectrum clip_spectrum(const Mat& block, double rel_tol = kDefaultClipTol);

// ---------------------------------------------------------------------------
// Windowing

struct WindowPlan {
  std::vector<Range> cores;
  std::vector<Range> flanks;
  std::uint64_t window_span = 0;
  std::uint64_t flank_span = 0;

  std::size_t size() const { return cores.size(); }
};

/// Cores are consecutive window_span-wide coordinate chunks starting at the
/// first position; empty chunks are skipped and a trailing chunk whose
/// occupied extent is under half a span is merged into its predecessor. The
/// flank of a window holds every variant within flank_span of the window's
/// coordinate bounds, truncated at the data boundaries.
WindowPlan plan_windows(const std::vector<std::uint64_t>& positions, std::uint64_t window_span,
                        std::uint64_t flank_span);

/// All theta-independent quantities of one window. Indices inside `L`, `W`
/// and `r_core_flank` are relative to the flank / core ranges.
struct PrecomputedWindow {
  std::size_t window_index = 0;
  Range core;
  Range flank;
  ClippedSpectrum pinv;  // of R_core,core
  Mat L;                 // |flank| x |core|: R_flank,core R^dagger
  Mat W;                 // |flank| x |flank|: R_flank,core R^dagger R_core,flank
  Mat r_core_flank;      // |core| x |flank| band slice
  double logpdet_R = 0;
  Vec beta_core;
  Vec g;  // L beta_core
  double quad_null = 0;
  Vec ld_core;  // full-band LD scores of the core variants

  Index core_offset() const { return core.begin - flank.begin; }
  Index core_rank() const { return pinv.rank; }
};

PrecomputedWindow precompute_window(const BandedCorrelationMatrix& R, const SummaryStats& stats,
                                    const WindowPlan& plan, std::size_t i,
                                    double rel_tol = kDefaultClipTol);

/// Precomputes every window, in parallel over windows; output order follows
/// the plan regardless of thread count.
std::vector<PrecomputedWindow> precompute_all(const BandedCorrelationMatrix& R,
                                              const SummaryStats& stats, const WindowPlan& plan,
                                              double rel_tol = kDefaultClipTol,
                                              unsigned threads = 1);

/// Window cache (DWPW): magic, u32 version, u64 count, then per window every
/// field of PrecomputedWindow as u64 sizes and f64 payloads.
void save_windows(const std::vector<PrecomputedWindow>& windows, const std::filesystem::path& path);
std::vector<PrecomputedWindow> load_windows(const std::filesystem::path& path);

/// l_m = sum over the stored band of R(m, m')^2.
Vec ld_scores(const BandedCorrelationMatrix& R);

}  // namespace deepwas
