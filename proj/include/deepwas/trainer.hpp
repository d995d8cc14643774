#pragma once

#include "deepwas/common.hpp"
#include "deepwas/ldcore.hpp"
#include "deepwas/likelihood.hpp"
#include "deepwas/priors.hpp"

#include <cstdint>
#include <ostream>
#include <vector>

namespace deepwas {

enum class Objective { deepwas, ldsr };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-3;
  Index warmup_steps = 100;
  Index epochs = 10;
  Index accumulation_steps = 12;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  Method method = Method::iterative;
  SolverConfig solver;
  Objective objective = Objective::deepwas;
  double ldsr_h2 = 0;  // <= 0: moment estimate from the training windows
  std::vector<std::size_t> heldout_window_ids;
  unsigned threads = 1;
  std::ostream* log = nullptr;  // JSON lines, one per window visit

  /// Throws ConfigError on nonpositive or inconsistent settings.
  void validate() const;
};

/// 1e-4 for the network, 1e-3 otherwise.
double default_learning_rate(ModelKind kind);

struct EpochRecord {
  Index epoch = 0;
  double train_nll = 0;       // exact (dense) summed NLL over training windows
  double heldout_metric = 0;  // percent per-person increase; 0 without held-out windows
};

struct TrainState {
  Index step = 0;
  PriorParams params;
  Vec m, v;  // optimizer moments over weights (+ alpha when trained)
  std::vector<EpochRecord> history;
  std::vector<double> step_lr;  // learning rate used at each step
};

/// Decoupled-weight-decay Adam with linear warmup, lr_s = lr min(1, s / warmup)
/// for s = 1, 2, ...
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
  /// Applies one update to `x` in place and returns the learning rate used.
  double step(Vec& x, const Vec& grad, Vec& m, Vec& v, Index step_number) const;
  double learning_rate_at(Index step_number) const;

 private:
  TrainConfig cfg_;
};

/// Loss and parameter gradient of one window, before accumulation.
struct WindowGradient {
  double loss = 0;
  Vec grad;  // weights, then alpha when params.train_alpha
};

struct ObjectiveContext {
  double sigma2 = 0;
  double N = 0;
  double M = 0;
  double h2 = 0.5;  // ldsr weighting
};

WindowGradient window_gradient(const PrecomputedWindow& window, const PriorParams& params,
                               const PriorInputs& inputs, const ObjectiveContext& ctx,
                               const TrainConfig& cfg, std::uint64_t seed);

/// Trains on every window not listed in cfg.heldout_window_ids.
TrainState train(const TrainConfig& cfg, const std::vector<PrecomputedWindow>& windows,
                 const PriorInputs& inputs, PriorParams model, double sigma2, double N);

/// Sum of exact window NLLs at f = model.
double total_nll(const std::vector<const PrecomputedWindow*>& windows, const Vec& f_all,
                 double sigma2_N, unsigned threads = 1);

/// 100 (exp((l_model - l_null) / N) - 1).
double percent_likelihood_increase(double delta_loglik, double N);

/// Held-out metric for genome-wide f.
double evaluate_heldout(const Vec& f_all, const std::vector<const PrecomputedWindow*>& heldout,
                        double sigma2_N, double N, unsigned threads = 1);
double evaluate_heldout(const PriorParams& model, const PriorInputs& inputs,
                        const std::vector<const PrecomputedWindow*>& heldout, double sigma2_N,
                        double N, unsigned threads = 1);

/// sqrt(mean((log f_hat - log f_true)^2)); ArgumentError on nonpositive
/// entries or length mismatch.
double rmse_log_f(const Vec& f_hat, const Vec& f_true);

/// Moment estimate of mean f: (mean(beta^2) - sigma2_N) / mean(l) over the
/// given windows' cores, floored at 1e-12.
double moment_mean_f(const std::vector<const PrecomputedWindow*>& windows, double sigma2_N);

/// Splits windows into (training, held-out) by id; ArgumentError on unknown ids.
std::pair<std::vector<const PrecomputedWindow*>, std::vector<const PrecomputedWindow*>>
split_windows(const std::vector<PrecomputedWindow>& windows,
              const std::vector<std::size_t>& heldout_ids);

}  // namespace deepwas
