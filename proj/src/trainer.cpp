#include "deepwas/trainer.hpp"

#include "deepwas/parallel.hpp"
#include "deepwas/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

namespace deepwas {

std::string to_string(Objective o) { return o == Objective::deepwas ? "deepwas" : "ldsr"; }

Objective objective_from_string(const std::string& s) {
  if (s == "deepwas") return Objective::deepwas;
  if (s == "ldsr") return Objective::ldsr;
  throw ArgumentError("unknown objective '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || warmup_steps < 0 || epochs < 0 || accumulation_steps < 1)
    throw ConfigError("train: need learning_rate >= 0, warmup_steps >= 0, epochs >= 0, "
                      "accumulation_steps >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(adam_eps > 0) ||
      !(weight_decay >= 0))
    throw ConfigError("train: invalid optimizer settings");
  if (!(solver.cg_rel_tol > 0) || solver.num_probes < 1 || solver.lanczos_steps < 1)
    throw ConfigError("train: invalid solver settings");
}

double default_learning_rate(ModelKind kind) {
  return kind == ModelKind::network ? 1e-4 : 1e-3;
}

double AdamW::learning_rate_at(Index s) const {
  if (cfg_.warmup_steps <= 0) return cfg_.learning_rate;
  return cfg_.learning_rate *
         std::min(1.0, static_cast<double>(s) / static_cast<double>(cfg_.warmup_steps));
}

double AdamW::step(Vec& x, const Vec& grad, Vec& m, Vec& v, Index s) const {
  const double lr = learning_rate_at(s);
  m = cfg_.beta1 * m + (1 - cfg_.beta1) * grad;
  v = cfg_.beta2 * v + (1 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(s));
  const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(s));
  const Vec update =
      (m / c1).array() / ((v / c2).array().sqrt() + cfg_.adam_eps) + cfg_.weight_decay * x.array();
  x -= lr * update;
  return lr;
}

namespace {

Vec pack(const PriorParams& p) {
  if (!p.train_alpha) return p.weights;
  Vec x(p.weights.size() + 1);
  x << p.weights, p.alpha;
  return x;
}

void unpack(const Vec& x, PriorParams& p) {
  p.weights = x.head(p.weights.size());
  if (p.train_alpha) p.alpha = x[x.size() - 1];
}

}  // namespace

WindowGradient window_gradient(const PrecomputedWindow& window, const PriorParams& params,
                               const PriorInputs& inputs, const ObjectiveContext& ctx,
                               const TrainConfig& cfg, std::uint64_t seed) {
  const Vec f = prior_forward(params, inputs, window.flank);
  if (!f.allFinite()) throw NumericalError("prior produced non-finite f");
  Vec upstream;
  WindowGradient out;
  if (cfg.objective == Objective::deepwas) {
    const WindowLoss loss =
        window_nll_grad(window, f, ctx.sigma2 / ctx.N, cfg.method, cfg.solver, seed);
    out.loss = loss.nll;
    upstream = loss.grad_f_flank;
  } else {
    const ObjectiveValue obj = ldsr_window_objective(window, f, ctx.sigma2, ctx.N, ctx.M, ctx.h2);
    out.loss = obj.value;
    upstream = obj.grad_f;
  }
  const PriorGradient g = prior_backward(params, inputs, window.flank, upstream);
  if (params.train_alpha) {
    out.grad.resize(g.weights.size() + 1);
    out.grad << g.weights, g.alpha;
  } else {
    out.grad = g.weights;
  }
  return out;
}

std::pair<std::vector<const PrecomputedWindow*>, std::vector<const PrecomputedWindow*>>
split_windows(const std::vector<PrecomputedWindow>& windows,
              const std::vector<std::size_t>& heldout_ids) {
  const std::set<std::size_t> held(heldout_ids.begin(), heldout_ids.end());
  for (std::size_t id : held)
    if (std::none_of(windows.begin(), windows.end(),
                     [&](const PrecomputedWindow& w) { return w.window_index == id; }))
      throw ArgumentError("held-out window id " + std::to_string(id) + " does not exist");
  std::pair<std::vector<const PrecomputedWindow*>, std::vector<const PrecomputedWindow*>> out;
  for (const auto& w : windows) (held.count(w.window_index) ? out.second : out.first).push_back(&w);
  return out;
}

double total_nll(const std::vector<const PrecomputedWindow*>& windows, const Vec& f_all,
                 double sigma2_N, unsigned threads) {
  std::vector<double> nll(windows.size());
  parallel_for(windows.size(), threads, [&](std::size_t i) {
    const PrecomputedWindow& w = *windows[i];
    nll[i] = window_nll(w, f_all.segment(w.flank.begin, w.flank.size()), sigma2_N, Method::dense)
                 .nll;
  });
  return std::accumulate(nll.begin(), nll.end(), 0.0);
}

double percent_likelihood_increase(double delta_loglik, double N) {
  if (!(N > 0)) throw ArgumentError("percent_likelihood_increase: N must be positive");
  return 100.0 * std::expm1(delta_loglik / N);
}

double evaluate_heldout(const Vec& f_all, const std::vector<const PrecomputedWindow*>& heldout,
                        double sigma2_N, double N, unsigned threads) {
  std::vector<double> delta(heldout.size());
  parallel_for(heldout.size(), threads, [&](std::size_t i) {
    const PrecomputedWindow& w = *heldout[i];
    const double model =
        window_nll(w, f_all.segment(w.flank.begin, w.flank.size()), sigma2_N, Method::dense).nll;
    delta[i] = null_nll(w, sigma2_N) - model;
  });
  return percent_likelihood_increase(std::accumulate(delta.begin(), delta.end(), 0.0), N);
}

double evaluate_heldout(const PriorParams& model, const PriorInputs& inputs,
                        const std::vector<const PrecomputedWindow*>& heldout, double sigma2_N,
                        double N, unsigned threads) {
  const Vec f = prior_forward(model, inputs, Range{0, inputs.num_variants()});
  return evaluate_heldout(f, heldout, sigma2_N, N, threads);
}

double rmse_log_f(const Vec& f_hat, const Vec& f_true) {
  if (f_hat.size() != f_true.size() || f_hat.size() == 0)
    throw ArgumentError("rmse_log_f: lengths differ or are zero");
  if (!(f_hat.array() > 0).all() || !(f_true.array() > 0).all())
    throw ArgumentError("rmse_log_f: entries must be positive");
  return std::sqrt((f_hat.array().log() - f_true.array().log()).square().mean());
}

double moment_mean_f(const std::vector<const PrecomputedWindow*>& windows, double sigma2_N) {
  double b2 = 0, l = 0, n = 0;
  for (const auto* w : windows) {
    b2 += w->beta_core.squaredNorm();
    l += w->ld_core.sum();
    n += static_cast<double>(w->core.size());
  }
  if (n == 0 || l <= 0) throw ArgumentError("moment_mean_f: no variants");
  return std::max(1e-12, (b2 / n - sigma2_N) / (l / n));
}

TrainState train(const TrainConfig& cfg, const std::vector<PrecomputedWindow>& windows,
                 const PriorInputs& inputs, PriorParams model, double sigma2, double N) {
  cfg.validate();
  auto [training, heldout] = split_windows(windows, cfg.heldout_window_ids);
  if (training.empty()) throw ArgumentError("train: no training windows");
  const double sigma2_N = sigma2 / N;

  ObjectiveContext ctx{sigma2, N, static_cast<double>(inputs.num_variants()), cfg.ldsr_h2};
  if (cfg.objective == Objective::ldsr && !(ctx.h2 > 0)) {
    Vec beta(0), ld(0);
    for (const auto* w : training) {
      beta.conservativeResize(beta.size() + w->core.size());
      ld.conservativeResize(ld.size() + w->core.size());
      beta.tail(w->core.size()) = w->beta_core;
      ld.tail(w->core.size()) = w->ld_core;
    }
    ctx.h2 = ldsr_h2_ballpark(beta, ld, sigma2, N);
  }

  TrainState st;
  st.params = std::move(model);
  Vec x = pack(st.params);
  st.m = Vec::Zero(x.size());
  st.v = Vec::Zero(x.size());
  const AdamW opt(cfg);
  const Range all{0, inputs.num_variants()};

  auto record_epoch = [&](Index epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const Vec f = prior_forward(st.params, inputs, all);
    rec.train_nll = total_nll(training, f, sigma2_N, cfg.threads);
    if (!heldout.empty()) rec.heldout_metric = evaluate_heldout(f, heldout, sigma2_N, N, cfg.threads);
    st.history.push_back(rec);
  };

  const auto k = static_cast<std::size_t>(cfg.accumulation_steps);
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(training.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed({cfg.seed, stream::kShuffle, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += k) {
      const std::size_t count = std::min(k, order.size() - start);
      std::vector<WindowGradient> grads(count);
      std::vector<std::string> causes(count);
      parallel_for(count, cfg.threads, [&](std::size_t j) {
        const PrecomputedWindow& w = *training[order[start + j]];
        const std::uint64_t seed = derive_seed({cfg.seed, stream::kProbe,
                                                static_cast<std::uint64_t>(epoch), w.window_index});
        try {
          grads[j] = window_gradient(w, st.params, inputs, ctx, cfg, seed);
        } catch (const NumericalError& e) {
          grads[j].loss = std::numeric_limits<double>::quiet_NaN();
          causes[j] = e.what();
        } catch (const DegenerateBlockError& e) {
          grads[j].loss = std::numeric_limits<double>::quiet_NaN();
          causes[j] = e.what();
        }
      });
      Vec g = Vec::Zero(x.size());
      for (std::size_t j = 0; j < count; ++j) {
        const PrecomputedWindow& w = *training[order[start + j]];
        if (!std::isfinite(grads[j].loss) || !grads[j].grad.allFinite()) {
          std::ostringstream msg;
          msg << "non-finite loss or gradient at window " << w.window_index << " (epoch " << epoch
              << ", step " << st.step + 1 << ", parameter norm " << x.norm() << ")";
          if (!causes[j].empty()) msg << ": " << causes[j];
          throw NumericalError(msg.str());
        }
        g += grads[j].grad;
      }
      g /= static_cast<double>(count);
      ++st.step;
      const double lr = opt.step(x, g, st.m, st.v, st.step);
      unpack(x, st.params);
      st.step_lr.push_back(lr);
      if (cfg.log) {
        for (std::size_t j = 0; j < count; ++j) {
          nlohmann::ordered_json line;
          line["step"] = st.step;
          line["epoch"] = epoch;
          line["window"] = training[order[start + j]]->window_index;
          line["nll"] = grads[j].loss;
          line["lr"] = lr;
          *cfg.log << line.dump() << '\n';
        }
      }
    }
    record_epoch(epoch);
  }
  return st;
}

}  // namespace deepwas
