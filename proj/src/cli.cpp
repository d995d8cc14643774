#include "deepwas/cli.hpp"

#include "deepwas/ldcore.hpp"
#include "deepwas/likelihood.hpp"
#include "deepwas/parallel.hpp"
#include "deepwas/priors.hpp"
#include "deepwas/rng.hpp"
#include "deepwas/synthgen.hpp"
#include "deepwas/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>

namespace deepwas {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Configuration

json simulate_defaults() {
  return {{"out_dir", "corpus"},
          {"M", 2000},
          {"N", 500.0},
          {"sigma2", 0.5},
          {"bandwidth", 20},
          {"decay", 0.8},
          {"spacing", 10},
          {"truth", "network"},
          {"d_func", 10},
          {"w", 0},
          {"truth_hidden", 16},
          {"truth_num_hidden", 2},
          {"truth_log_sd", 1.0},
          {"alpha", kDefaultAlpha},
          {"threshold_channels", {0, 2, 7, 12}},
          {"seed", 0}};
}

json precompute_defaults() {
  return {{"corpus_dir", "corpus"},
          {"windows", ""},
          {"window_span", 1000},
          {"flank_span", 500},
          {"clip_tol", kDefaultClipTol}};
}

json split_defaults() { return {{"heldout_every", 10}, {"heldout_windows", json::array()}}; }

json train_defaults() {
  json j = {{"corpus_dir", "corpus"},
            {"windows", ""},
            {"out_dir", "run"},
            {"model", "network"},
            {"objective", "deepwas"},
            {"solver", "iterative"},
            {"learning_rate", nullptr},
            {"warmup_steps", 100},
            {"epochs", 10},
            {"accumulation_steps", 12},
            {"weight_decay", 0.01},
            {"beta1", 0.9},
            {"beta2", 0.999},
            {"adam_eps", 1e-8},
            {"cg_rel_tol", 1e-6},
            {"num_probes", 100},
            {"lanczos_steps", 40},
            {"hidden", 16},
            {"num_hidden", 2},
            {"alpha", kDefaultAlpha},
            {"train_alpha", false},
            {"init_offset", true},
            {"ldsr_h2", 0.0},
            {"seed", 0}};
  j.update(split_defaults());
  return j;
}

json eval_defaults() {
  json j = {{"corpus_dir", "corpus"}, {"windows", ""}, {"model", "run/model.dwpm"},
            {"out", "eval_report.json"}};
  j.update(split_defaults());
  return j;
}

json bench_defaults() {
  return {{"corpus_dir", "corpus"},   {"windows", ""},        {"num_windows", 20},
          {"cg_rel_tol", 1e-6},       {"num_probes", 100},    {"lanczos_steps", 40},
          {"nystrom_rank", 20},       {"ritz_steps", 60},     {"out", "bench.jsonl"},
          {"summary", "bench_summary.json"}, {"seed", 0}};
}

bool same_kind(const json& a, const json& b) {
  if (a.is_null()) return true;
  if (b.is_null()) return false;
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

void merge_config(json& cfg, const json& user, const std::string& origin) {
  if (!user.is_object()) throw ConfigError(origin + ": configuration must be a JSON object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!cfg.contains(it.key())) throw ConfigError(origin + ": unknown key '" + it.key() + "'");
    if (!same_kind(cfg[it.key()], it.value()))
      throw ConfigError(origin + ": key '" + it.key() + "' has the wrong type");
    cfg[it.key()] = it.value();
  }
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

template <class T>
T get(const json& cfg, const char* key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

unsigned resolve_threads(int cli_threads) {
  if (cli_threads > 0) return static_cast<unsigned>(cli_threads);
  if (const char* env = std::getenv("DEEPWAS_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t > 0) return static_cast<unsigned>(t);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("DEEPWAS_THREADS must be a positive integer, got '") + env + "'");
  }
  return default_thread_count();
}

// ---------------------------------------------------------------------------
// Files

struct CorpusPaths {
  fs::path dir;
  fs::path ld() const { return dir / "ld.dwld"; }
  fs::path annot() const { return dir / "annot.dwan"; }
  fs::path tsv() const { return dir / "sumstats.tsv"; }
  fs::path meta() const { return dir / "sumstats.json"; }
  fs::path truth() const { return dir / "truth.json"; }
};

fs::path windows_path(const json& cfg) {
  const auto w = get<std::string>(cfg, "windows");
  return w.empty() ? fs::path(get<std::string>(cfg, "corpus_dir")) / "windows.dwpw" : fs::path(w);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

json read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct Truth {
  Vec f;
  std::string kind;
};

std::optional<Truth> load_truth(const CorpusPaths& corpus) {
  if (!fs::exists(corpus.truth())) return std::nullopt;
  const json j = read_json(corpus.truth());
  Truth t;
  t.kind = j.at("kind").get<std::string>();
  const auto f = j.at("f_true").get<std::vector<double>>();
  t.f = Eigen::Map<const Vec>(f.data(), static_cast<Index>(f.size()));
  return t;
}

PriorInputs load_inputs(const CorpusPaths& corpus) {
  return make_prior_inputs(normalize_features(load_annotations(corpus.annot())).first);
}

std::vector<std::size_t> heldout_ids(const json& cfg, std::size_t num_windows) {
  auto explicit_ids = get<std::vector<std::size_t>>(cfg, "heldout_windows");
  if (!explicit_ids.empty()) return explicit_ids;
  const auto every = get<std::int64_t>(cfg, "heldout_every");
  if (every < 0) throw ConfigError("heldout_every must be >= 0");
  std::vector<std::size_t> ids;
  if (every == 0) return ids;
  for (std::size_t i = 0; i < num_windows; ++i)
    if (i % static_cast<std::size_t>(every) == static_cast<std::size_t>(every) - 1) ids.push_back(i);
  return ids;
}

json history_json(const TrainState& st) {
  json h = json::array();
  for (const auto& r : st.history)
    h.push_back({{"epoch", r.epoch}, {"train_nll", r.train_nll}, {"heldout_metric", r.heldout_metric}});
  return h;
}

Vec core_values(const Vec& f_all, const std::vector<const PrecomputedWindow*>& windows) {
  Index n = 0;
  for (const auto* w : windows) n += w->core.size();
  Vec out(n);
  Index at = 0;
  for (const auto* w : windows) {
    out.segment(at, w->core.size()) = f_all.segment(w->core.begin, w->core.size());
    at += w->core.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_simulate(const json& cfg, unsigned threads, std::ostream& out) {
  (void)threads;
  const auto M = get<Index>(cfg, "M");
  const auto N = get<double>(cfg, "N");
  const auto sigma2 = get<double>(cfg, "sigma2");
  const auto bandwidth = get<std::size_t>(cfg, "bandwidth");
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const TruthKind kind = [&] {
    try {
      return truth_kind_from_string(get<std::string>(cfg, "truth"));
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }();
  if (M < 2 || !(N > 0) || !(sigma2 > 0 && sigma2 <= 1))
    throw ConfigError("simulate: need M >= 2, N > 0 and sigma2 in (0, 1]");
  if (bandwidth >= static_cast<std::size_t>(M)) throw ConfigError("simulate: bandwidth must be < M");

  ThresholdRule rule;
  const auto channels = get<std::vector<Index>>(cfg, "threshold_channels");
  if (channels.size() != rule.channels.size())
    throw ConfigError("threshold_channels must list exactly 4 channels");
  std::copy(channels.begin(), channels.end(), rule.channels.begin());

  AnnotationSimConfig acfg;
  acfg.d_func = get<Index>(cfg, "d_func");
  acfg.w = get<Index>(cfg, "w");
  if (acfg.w == 0) acfg.w = kind == TruthKind::threshold ? rule.pos_end : 32;
  if (kind == TruthKind::threshold && acfg.w < rule.pos_end)
    throw ConfigError("threshold truth needs w >= " + std::to_string(rule.pos_end));

  const BandedCorrelationMatrix R = gen_banded_correlation(
      M, bandwidth, get<double>(cfg, "decay"), seed, get<std::uint64_t>(cfg, "spacing"));
  const Vec ld = ld_scores(R);
  const Vec freq = gen_allele_freqs(M, seed);
  const AnnotationTensor annot = gen_annotations(acfg, freq, ld, seed);
  const AnnotationTensor normed = normalize_features(annot).first;

  GroundTruth raw;
  if (kind == TruthKind::threshold) {
    raw = threshold_ground_truth(normed, static_cast<double>(M), rule);
  } else {
    NetworkSpec spec;
    spec.d_func = acfg.d_func;
    spec.d_pred = annot.d_pred;
    spec.w = acfg.w;
    spec.hidden = get<Index>(cfg, "truth_hidden");
    spec.num_hidden = get<Index>(cfg, "truth_num_hidden");
    raw = network_ground_truth(make_prior_inputs(normed), spec, seed,
                               get<double>(cfg, "truth_log_sd"), get<double>(cfg, "alpha"));
  }
  const GroundTruth truth =
      scale_ground_truth(raw.f_true, N, static_cast<double>(M), sigma2, kind);
  const SampledAssociations sample = sample_associations(R, truth.f_true, N, sigma2, seed);

  const CorpusPaths corpus{get<std::string>(cfg, "out_dir")};
  ensure_dir(corpus.dir);
  save_banded_matrix(R, corpus.ld());
  save_annotations(annot, corpus.annot());
  SummaryTable table;
  table.positions = R.positions();
  table.beta_hat = sample.stats.beta_hat;
  table.freq = freq;
  for (Index m = 0; m < M; ++m) table.variant_ids.push_back("v" + std::to_string(m));
  save_summary_stats(table, N, sigma2, corpus.tsv(), corpus.meta());

  json tj;
  tj["kind"] = to_string(kind);
  tj["N"] = N;
  tj["M"] = M;
  tj["sigma2"] = sigma2;
  tj["target_mean"] = truth.target_mean;
  tj["scale_applied"] = truth.scale_applied;
  tj["mean_f"] = truth.f_true.mean();
  tj["f_true"] = std::vector<double>(truth.f_true.data(), truth.f_true.data() + M);
  write_text(corpus.truth(), tj.dump() + "\n");

  out << json{{"out_dir", corpus.dir.string()}, {"M", M}, {"truth", to_string(kind)},
              {"mean_f", truth.f_true.mean()}}
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_precompute(const json& cfg, unsigned threads, std::ostream& out) {
  const CorpusPaths corpus{get<std::string>(cfg, "corpus_dir")};
  const BandedCorrelationMatrix R = load_banded_matrix(corpus.ld());
  const LoadedSummary sum = load_summary_stats(corpus.tsv(), corpus.meta());
  if (sum.table.positions != R.positions())
    throw ValidationError("summary statistics positions do not match the LD matrix");
  const auto span = get<std::uint64_t>(cfg, "window_span");
  const auto flank = get<std::uint64_t>(cfg, "flank_span");
  if (span == 0) throw ConfigError("window_span must be positive");
  const WindowPlan plan = plan_windows(R.positions(), span, flank);
  const auto windows = precompute_all(R, sum.stats, plan, get<double>(cfg, "clip_tol"), threads);
  const fs::path path = windows_path(cfg);
  save_windows(windows, path);
  out << json{{"windows", path.string()}, {"count", windows.size()}}.dump() << "\n";
  return kExitOk;
}

struct Loaded {
  CorpusPaths corpus;
  std::vector<PrecomputedWindow> windows;
  LoadedSummary summary;
  PriorInputs inputs;
  std::optional<Truth> truth;
};

Loaded load_for_training(const json& cfg) {
  Loaded l;
  l.corpus.dir = get<std::string>(cfg, "corpus_dir");
  l.summary = load_summary_stats(l.corpus.tsv(), l.corpus.meta());
  l.windows = load_windows(windows_path(cfg));
  l.inputs = load_inputs(l.corpus);
  if (l.inputs.num_variants() != l.summary.stats.beta_hat.size())
    throw ValidationError("annotations and summary statistics disagree on the variant count");
  for (const auto& w : l.windows)
    if (w.flank.end > l.inputs.num_variants())
      throw ValidationError("window cache does not match the corpus");
  l.truth = load_truth(l.corpus);
  if (l.truth && l.truth->f.size() != l.inputs.num_variants())
    throw ValidationError("truth.json does not match the corpus");
  return l;
}

int cmd_train(const json& cfg, unsigned threads, std::ostream& out) {
  Loaded data = load_for_training(cfg);
  const double N = data.summary.stats.sample_size;
  const double sigma2 = data.summary.stats.sigma2;

  TrainConfig tc;
  ModelKind kind;
  try {
    kind = model_kind_from_string(get<std::string>(cfg, "model"));
    tc.objective = objective_from_string(get<std::string>(cfg, "objective"));
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  const auto solver = get<std::string>(cfg, "solver");
  if (solver != "dense" && solver != "iterative")
    throw ConfigError("solver must be 'dense' or 'iterative'");
  tc.method = solver == "dense" ? Method::dense : Method::iterative;
  tc.learning_rate = cfg.at("learning_rate").is_null() ? default_learning_rate(kind)
                                                       : get<double>(cfg, "learning_rate");
  tc.warmup_steps = get<Index>(cfg, "warmup_steps");
  tc.epochs = get<Index>(cfg, "epochs");
  tc.accumulation_steps = get<Index>(cfg, "accumulation_steps");
  tc.weight_decay = get<double>(cfg, "weight_decay");
  tc.beta1 = get<double>(cfg, "beta1");
  tc.beta2 = get<double>(cfg, "beta2");
  tc.adam_eps = get<double>(cfg, "adam_eps");
  tc.solver.cg_rel_tol = get<double>(cfg, "cg_rel_tol");
  tc.solver.num_probes = get<Index>(cfg, "num_probes");
  tc.solver.lanczos_steps = get<Index>(cfg, "lanczos_steps");
  tc.ldsr_h2 = get<double>(cfg, "ldsr_h2");
  tc.seed = get<std::uint64_t>(cfg, "seed");
  tc.threads = threads;
  tc.heldout_window_ids = heldout_ids(cfg, data.windows.size());
  tc.validate();

  const double alpha = get<double>(cfg, "alpha");
  PriorParams model;
  if (kind == ModelKind::constant) {
    model = make_constant_prior(0.0, alpha);
  } else if (kind == ModelKind::glm) {
    model = make_glm_prior(data.inputs.pooled.cols(), data.inputs.pred.cols(), alpha);
  } else {
    NetworkSpec spec;
    spec.d_func = data.inputs.pooled.cols();
    spec.d_pred = data.inputs.pred.cols();
    spec.hidden = get<Index>(cfg, "hidden");
    spec.num_hidden = get<Index>(cfg, "num_hidden");
    model = build_network(spec, tc.seed, alpha);
  }
  model.train_alpha = get<bool>(cfg, "train_alpha");

  auto [training, heldout] = split_windows(data.windows, tc.heldout_window_ids);
  if (get<bool>(cfg, "init_offset"))
    calibrate_offset(model, data.inputs, moment_mean_f(training, sigma2 / N));

  const fs::path out_dir = get<std::string>(cfg, "out_dir");
  ensure_dir(out_dir);
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw IoError("cannot open " + (out_dir / "train_log.jsonl").string());
  tc.log = &log;
  const TrainState st = train(tc, data.windows, data.inputs, model, sigma2, N);
  log.close();
  save_prior_params(st.params, out_dir / "model.dwpm");

  json report;
  report["model"] = to_string(kind);
  report["objective"] = to_string(tc.objective);
  report["steps"] = st.step;
  report["history"] = history_json(st);
  const Vec f = prior_forward(st.params, data.inputs, Range{0, data.inputs.num_variants()});
  report["heldout_metric"] =
      heldout.empty() ? 0.0 : evaluate_heldout(f, heldout, sigma2 / N, N, threads);
  if (data.truth) {
    report["rmse_log_f"] = rmse_log_f(f, data.truth->f);
    if (!heldout.empty())
      report["rmse_log_f_heldout"] =
          rmse_log_f(core_values(f, heldout), core_values(data.truth->f, heldout));
  }
  write_text(out_dir / "train_report.json", report.dump(2) + "\n");
  out << report.dump() << "\n";
  return kExitOk;
}

int cmd_eval(const json& cfg, unsigned threads, std::ostream& out) {
  Loaded data = load_for_training(cfg);
  const double N = data.summary.stats.sample_size;
  const double sigma2_N = data.summary.stats.sigma2_N;
  const auto ids = heldout_ids(cfg, data.windows.size());
  auto [training, heldout] = split_windows(data.windows, ids);
  if (heldout.empty()) throw ConfigError("eval: no held-out windows selected");

  const auto model = get<std::string>(cfg, "model");
  Vec f;
  if (model == "truth") {
    if (!data.truth) throw ConfigError("eval: model 'truth' needs truth.json in the corpus");
    f = data.truth->f;
  } else if (model == "null") {
    f = Vec::Zero(data.inputs.num_variants());
  } else {
    f = prior_forward(load_prior_params(model), data.inputs, Range{0, data.inputs.num_variants()});
  }
  json report;
  report["model"] = model;
  report["heldout_windows"] = heldout.size();
  report["heldout_metric"] = evaluate_heldout(f, heldout, sigma2_N, N, threads);
  if (data.truth && (f.array() > 0).all()) {
    report["rmse_log_f"] = rmse_log_f(f, data.truth->f);
    report["rmse_log_f_heldout"] =
        rmse_log_f(core_values(f, heldout), core_values(data.truth->f, heldout));
  }
  write_text(get<std::string>(cfg, "out"), report.dump(2) + "\n");
  out << report.dump() << "\n";
  return kExitOk;
}

double rel_l2(const Vec& a, const Vec& ref) {
  const double d = ref.norm();
  return d > 0 ? (a - ref).norm() / d : (a - ref).norm();
}

int cmd_bench(const json& cfg, unsigned threads, std::ostream& out) {
  (void)threads;  // each measurement runs single-threaded so timings compare
  const CorpusPaths corpus{get<std::string>(cfg, "corpus_dir")};
  const LoadedSummary sum = load_summary_stats(corpus.tsv(), corpus.meta());
  const auto windows = load_windows(windows_path(cfg));
  const auto truth = load_truth(corpus);
  const double sigma2_N = sum.stats.sigma2_N;
  const auto requested = get<std::size_t>(cfg, "num_windows");
  if (requested == 0) throw ConfigError("bench: num_windows must be positive");
  const std::size_t count = std::min(requested, windows.size());

  SolverConfig solver;
  solver.cg_rel_tol = get<double>(cfg, "cg_rel_tol");
  solver.num_probes = get<Index>(cfg, "num_probes");
  solver.lanczos_steps = get<Index>(cfg, "lanczos_steps");
  const auto nys_rank = get<Index>(cfg, "nystrom_rank");
  const auto ritz_steps = get<Index>(cfg, "ritz_steps");
  const auto seed = get<std::uint64_t>(cfg, "seed");

  Vec f_all;
  if (truth) {
    f_all = truth->f;
  } else {
    std::vector<const PrecomputedWindow*> all;
    for (const auto& w : windows) all.push_back(&w);
    f_all = Vec::Constant(sum.stats.beta_hat.size(), moment_mean_f(all, sigma2_N));
  }

  std::ofstream lines(get<std::string>(cfg, "out"), std::ios::binary);
  if (!lines) throw IoError("cannot open " + get<std::string>(cfg, "out") + " for writing");
  json per_window = json::array();
  double worst_grad_err = 0, worst_nll_err = 0;
  bool b_fewer_everywhere = true;
  double min_ritz = std::numeric_limits<double>::infinity();

  for (std::size_t i = 0; i < count; ++i) {
    // Spread the sample over the whole genome.
    const PrecomputedWindow& w = windows[i * windows.size() / count];
    const Vec f = f_all.segment(w.flank.begin, w.flank.size());
    const std::uint64_t wseed = derive_seed({seed, stream::kProbe, w.window_index});
    const WindowLoss ref = window_nll_grad(w, f, sigma2_N, Method::dense);

    auto timed = [&](const char* method, const char* form, Index dim, auto&& fn) {
      const auto t0 = std::chrono::steady_clock::now();
      WindowLoss loss = fn();
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      const double err = rel_l2(loss.grad_f_flank, ref.grad_f_flank);
      lines << json{{"method", method}, {"form", form}, {"dim", dim}, {"wall_ms", ms},
                    {"rel_err", err}}
                   .dump()
            << "\n";
      return std::pair{loss, err};
    };
    const Index c = w.core.size(), p = w.flank.size();
    auto [a_chol, e_chol] = timed("chol", "A", c, [&] { return a_form_nll_grad_dense(w, f, sigma2_N); });
    auto [a_iter, e_a_iter] = timed("iter", "A", c, [&] {
      return a_form_nll_grad_iterative(w, f, sigma2_N, solver, wseed);
    });
    auto [a_nys, e_nys] = timed("nys", "A", c, [&] {
      return a_form_nll_grad_iterative(w, f, sigma2_N, solver, wseed,
                                       NystromOptions{std::min(nys_rank, c - 1), 1e-8});
    });
    auto [b_iter, e_b_iter] = timed("iter", "B", p, [&] {
      return window_nll_grad(w, f, sigma2_N, Method::iterative, solver, wseed);
    });

    const BOperator B = make_b_operator(w, f, sigma2_N);
    const Vec ritz = ritz_values(B.as_operator(), std::min(ritz_steps, p), wseed);
    const double nll_err = std::abs(b_iter.nll - ref.nll) / std::max(1.0, std::abs(ref.nll));
    b_fewer_everywhere =
        b_fewer_everywhere && b_iter.solver_report.iterations < a_iter.solver_report.iterations;
    min_ritz = std::min(min_ritz, ritz.minCoeff());
    worst_grad_err = std::max(worst_grad_err, e_b_iter);
    worst_nll_err = std::max(worst_nll_err, nll_err);
    per_window.push_back({{"window", w.window_index},
                          {"core", c},
                          {"flank", p},
                          {"cg_iters_A", a_iter.solver_report.iterations},
                          {"cg_iters_A_nys", a_nys.solver_report.iterations},
                          {"cg_iters_B", b_iter.solver_report.iterations},
                          {"ritz_min_B", ritz.minCoeff()},
                          {"nll_dense", ref.nll},
                          {"nll_chol_A", a_chol.nll},
                          {"nll_iter_B", b_iter.nll},
                          {"quad_dense", ref.quad},
                          {"quad_iter_B", b_iter.quad},
                          {"grad_err_chol_A", e_chol},
                          {"grad_err_iter_A", e_a_iter},
                          {"grad_err_nys_A", e_nys},
                          {"grad_err_iter_B", e_b_iter}});
  }
  json summary;
  summary["windows"] = per_window;
  summary["b_fewer_iterations_everywhere"] = b_fewer_everywhere;
  summary["min_ritz_B"] = min_ritz;
  summary["max_grad_rel_err_iter_B"] = worst_grad_err;
  summary["max_nll_rel_err_iter_B"] = worst_nll_err;
  write_text(get<std::string>(cfg, "summary"), summary.dump(2) + "\n");
  out << json{{"windows", count},
              {"b_fewer_iterations_everywhere", b_fewer_everywhere},
              {"min_ritz_B", min_ritz},
              {"max_grad_rel_err_iter_B", worst_grad_err}}
             .dump()
      << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DeepWAS: functionally informed priors trained on GWAS summary statistics"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    int threads = 0;
  };
  Common common;
  std::string truth_flag, method_flag;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON configuration file");
    sub->add_option("--set", common.sets, "Override a config key (key=value, value parsed as JSON)");
    sub->add_option("--threads", common.threads, "Worker threads (default: DEEPWAS_THREADS or all cores)");
  };
  auto* sim = app.add_subcommand("simulate", "Generate a semi-synthetic corpus");
  auto* pre = app.add_subcommand("precompute", "Build the per-window cache");
  auto* trn = app.add_subcommand("train", "Train a prior model");
  auto* evl = app.add_subcommand("eval", "Evaluate a model on held-out windows");
  auto* bch = app.add_subcommand("bench", "Compare dense and iterative solvers");
  for (auto* sub : {sim, pre, trn, evl, bch}) add_common(sub);
  for (auto* sub : {sim, trn, bch}) sub->add_option("--seed", common.seed, "Base seed");
  sim->add_option("--truth", truth_flag, "Ground truth kind")->check(CLI::IsMember({"network", "threshold"}));
  trn->add_option("--method", method_flag, "Training objective")->check(CLI::IsMember({"deepwas", "ldsr"}));

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    json cfg = name == "simulate"     ? simulate_defaults()
               : name == "precompute" ? precompute_defaults()
               : name == "train"      ? train_defaults()
               : name == "eval"       ? eval_defaults()
                                      : bench_defaults();
    if (!common.config.empty()) merge_config(cfg, read_config(common.config), common.config);
    for (const auto& kv : common.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
      json value = parse_override_value(text);
      // String keys take the text verbatim, so "null" or "1" stay strings.
      if (cfg.contains(key) && cfg[key].is_string()) value = text;
      merge_config(cfg, json{{key, value}}, "--set");
    }
    if (common.seed) cfg["seed"] = *common.seed;
    if (!truth_flag.empty()) cfg["truth"] = truth_flag;
    if (!method_flag.empty()) cfg["objective"] = method_flag;
    const unsigned threads = resolve_threads(common.threads);

    if (name == "simulate") return cmd_simulate(cfg, threads, out);
    if (name == "precompute") return cmd_precompute(cfg, threads, out);
    if (name == "train") return cmd_train(cfg, threads, out);
    if (name == "eval") return cmd_eval(cfg, threads, out);
    return cmd_bench(cfg, threads, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DegenerateBlockError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace deepwas
