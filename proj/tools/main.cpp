#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msda/benchmark.hpp"
#include "msda/checkpoint.hpp"
#include "msda/errors.hpp"
#include "msda/io.hpp"
#include "msda/trainer.hpp"

namespace fs = std::filesystem;
using namespace msda;

namespace {

std::string invocation_line(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    std::string a = argv[i];
    if (i) out += ' ';
    if (a.empty() || a.find_first_of(" \t\"'$\\") != std::string::npos) {
      std::string q = "'";
      for (char c : a) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
      out += q + "'";
    } else {
      out += a;
    }
  }
  return out;
}

std::uint64_t resolve_seed(std::uint64_t flag) {
  if (const char* env = std::getenv("MSDA_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("MSDA_SEED is not an unsigned integer: ") + env);
    }
  }
  return flag;
}

std::string fmt(double v) { return data::format_double(v); }

void print_eval(const EvalReport& r) {
  std::cout << "domain  role    accuracy\n";
  const std::size_t n = r.domain_accuracy.size();
  for (std::size_t m = 0; m < n; ++m)
    std::cout << std::setw(6) << m + 1 << "  " << (m + 1 == n ? "target" : "source")
              << "  " << std::fixed << std::setprecision(4) << r.domain_accuracy[m]
              << "\n";
  std::cout.unsetf(std::ios::floatfield);
}

io::ordered_json eval_json(const EvalReport& r) {
  io::ordered_json j;
  j["domain_accuracy"] = r.domain_accuracy;
  j["target_accuracy"] = r.target_accuracy();
  return j;
}

struct TrainFlags {
  std::string data, out, model = "crf", preset = "default", config;
  std::optional<int> epochs, batch_size, warmup;
  std::optional<double> lr, weight_decay, threshold, sigma, tau;
  std::uint64_t seed = 0;
  bool no_global = false, no_local = false, no_cls = false, no_mle = false;
};

TrainConfig resolve_config(const TrainFlags& f) {
  TrainConfig c = preset_train(f.preset, parse_model_kind(f.model));
  if (!f.config.empty()) {
    io::ordered_json j = io::read_json(f.config);
    if (!j.contains("model")) j["model"] = f.model;
    c = TrainConfig::from_json(j);
  }
  if (f.epochs) c.epochs = *f.epochs;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.lr) c.lr = *f.lr;
  if (f.weight_decay) c.weight_decay = *f.weight_decay;
  if (f.threshold) c.pseudo_threshold = *f.threshold;
  if (f.warmup) c.warmup_epochs = *f.warmup;
  if (f.sigma) c.sigma = *f.sigma;
  if (f.tau) c.tau = *f.tau;
  c.seed = resolve_seed(f.seed);
  c.disable_global |= f.no_global;
  c.disable_local |= f.no_local;
  c.disable_cls |= f.no_cls;
  c.disable_mle |= f.no_mle;
  c.validate();
  return c;
}

int cmd_train(const TrainFlags& f, const std::string& inv) {
  const TrainConfig config = resolve_config(f);
  const auto data = data::read_bundle(f.data);
  const fs::path out = f.out;
  io::write_json(out / "config.json", inv, config.to_json());

  Trainer trainer(config, data);
  std::vector<EpochMetrics> metrics;
  for (int e = 0; e < config.epochs; ++e) {
    metrics.push_back(trainer.run_epoch());
    const auto& m = metrics.back();
    std::cerr << "epoch " << m.epoch << " loss " << fmt(m.mean.total) << " src_acc "
              << fmt(m.source_accuracy) << " tgt_acc " << fmt(m.target_accuracy)
              << " pseudo " << m.pseudo_labeled << "\n";
  }
  write_metrics_csv(out / "metrics.csv", inv, metrics);
  write_timing_csv(out / "timing.csv", inv, metrics);

  const EvalReport report = evaluate(trainer.model(), data);
  io::ordered_json summary = eval_json(report);
  summary["epochs"] = config.epochs;
  summary["steps"] = trainer.step_count();
  save_checkpoint(out / "checkpoint.mshx", inv, config, trainer.model(),
                  trainer.rng_state(), summary);
  print_eval(report);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& out, const std::string& inv) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto data = data::read_bundle(data_dir);
  const EvalReport report = evaluate(ck.model, data);
  print_eval(report);
  io::write_json(out, inv, eval_json(report));
  return 0;
}

int cmd_dump_adjacency(const std::string& ckpt, const std::string& out,
                       const std::string& inv) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto* crf = ck.model.crf();
  if (!crf) throw ConfigError("dump-adjacency needs a crf checkpoint");
  const Tensor a = crf->prototype_adjacency();
  const int K = crf->classes();
  std::ostringstream s;
  s << "# " << inv << "\n"
    << "# prototype adjacency, sigma=" << fmt(crf->config().sigma)
    << "; row/column r is domain r/K+1, class r%K+1 (K=" << K << ")\n";
  const std::size_t n = a.dim(0);
  for (std::size_t j = 0; j < n; ++j)
    s << (j ? "," : "") << "d" << j / K + 1 << "k" << j % K + 1;
  s << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) s << (j ? "," : "") << fmt(a.at(i, j));
    s << "\n";
  }
  io::write_text(out, s.str());
  return 0;
}

int cmd_dump_probmatrix(const std::string& ckpt, const std::string& data_dir,
                        const std::string& out, const std::string& inv) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto* mrf = ck.model.mrf();
  if (!mrf) throw ConfigError("dump-probmatrix needs an mrf checkpoint");
  const auto data = data::read_bundle(data_dir);
  const auto& target = data.domains.back();
  const auto mats = mrf->category_probability_matrices(target.features, target.labels);
  std::ostringstream s;
  s << "# " << inv << "\n"
    << "# mean joint probability over target samples of each category; "
       "rows are domains 1..M+1, columns classes 1..K\n"
    << "category,domain";
  const int K = mrf->classes();
  for (int k = 0; k < K; ++k) s << ",k" << k + 1;
  s << "\n";
  for (std::size_t c = 0; c < mats.size(); ++c)
    for (std::size_t m = 0; m < mats[c].dim(0); ++m) {
      s << c + 1 << ',' << m + 1;
      for (std::size_t k = 0; k < mats[c].dim(1); ++k) s << ',' << fmt(mats[c].at(m, k));
      s << "\n";
    }
  io::write_text(out, s.str());
  return 0;
}

int cmd_benchmark(const TrainFlags& f, int reps, int iters, const std::string& out,
                  const std::string& inv) {
  TrainFlags g = f;
  data::DatasetBundle data;
  if (f.data.empty()) {
    data = data::generate(data::preset_generator("default"), resolve_seed(f.seed));
  } else {
    data = data::read_bundle(f.data);
  }
  io::ordered_json j;
  j["repetitions"] = reps;
  j["iterations"] = iters;
  auto rows = io::ordered_json::array();
  std::cout << "model  phase  mean_s  std_s  (per " << iters << " iterations, "
            << reps << " runs)\n";
  for (const char* model : {"crf", "mrf"}) {
    g.model = model;
    const TrainConfig config = resolve_config(g);
    const ModelTiming t = benchmark_model(config, data, {reps, iters});
    for (const auto& [phase, stats] :
         {std::pair{"train", &t.train}, std::pair{"infer", &t.infer}}) {
      std::cout << std::left << std::setw(5) << model << "  " << std::setw(5) << phase
                << "  " << fmt(stats->mean) << " +- " << fmt(stats->stddev) << "\n";
      io::ordered_json r;
      r["model"] = model;
      r["phase"] = phase;
      r["mean_s"] = stats->mean;
      r["std_s"] = stats->stddev;
      r["samples_s"] = stats->samples;
      rows.push_back(std::move(r));
    }
    std::cout << std::left << std::setw(5) << model << "  per-query inference "
              << fmt(t.infer_per_query()) << " s\n";
    j[std::string(model) + "_infer_per_query_s"] = t.infer_per_query();
  }
  j["results"] = std::move(rows);
  if (!out.empty()) io::write_json(out, inv, j);
  return 0;
}

int cmd_gradcheck(const std::string& model, std::uint64_t seed, double tol,
                  const std::string& out, const std::string& inv) {
  std::vector<ModelKind> kinds;
  if (model == "all") kinds = {ModelKind::Crf, ModelKind::Mrf};
  else kinds = {parse_model_kind(model)};
  bool ok = true;
  auto all = io::ordered_json::array();
  for (ModelKind k : kinds) {
    const GradCheckReport r = grad_check(gradcheck_config(k, resolve_seed(seed)));
    std::cout << to_string(k) << " objective " << fmt(r.loss) << "\n";
    io::ordered_json jr;
    jr["model"] = to_string(k);
    jr["loss"] = r.loss;
    auto groups = io::ordered_json::array();
    for (const auto& g : r.groups) {
      std::cout << "  " << std::left << std::setw(26) << g.name << " n=" << std::setw(4)
                << g.size << " rel_err " << fmt(g.rel_error) << "\n";
      groups.push_back({{"name", g.name}, {"size", g.size}, {"rel_error", g.rel_error},
                        {"max_abs_error", g.max_abs_error}});
    }
    const bool pass = r.max_rel_error() < tol;
    ok = ok && pass;
    std::cout << "  max rel_err " << fmt(r.max_rel_error()) << (pass ? " PASS" : " FAIL")
              << "\n";
    jr["groups"] = std::move(groups);
    jr["max_rel_error"] = r.max_rel_error();
    all.push_back(std::move(jr));
  }
  if (!out.empty()) io::write_json(out, inv, io::ordered_json{{"reports", all}});
  return ok ? 0 : 2;
}

void add_train_flags(CLI::App* app, TrainFlags& f, bool need_data) {
  auto* d = app->add_option("--data", f.data, "Dataset directory");
  if (need_data) d->required();
  app->add_option("--model", f.model, "crf | mrf | source-only");
  app->add_option("--preset", f.preset, "default | paper");
  app->add_option("--config", f.config, "JSON config file (overrides the preset)");
  app->add_option("--seed", f.seed, "Run seed (MSDA_SEED overrides)");
  app->add_option("--epochs", f.epochs);
  app->add_option("--batch-size", f.batch_size, "Samples per domain per batch");
  app->add_option("--lr", f.lr);
  app->add_option("--weight-decay", f.weight_decay);
  app->add_option("--threshold", f.threshold, "Pseudo-label confidence threshold");
  app->add_option("--warmup", f.warmup, "Leading epochs that train on the sources only");
  app->add_option("--sigma", f.sigma, "CRF kernel bandwidth");
  app->add_option("--tau", f.tau, "MRF energy temperature");
  app->add_flag("--no-global", f.no_global, "Disable the global alignment term");
  app->add_flag("--no-local", f.no_local, "Disable the local compactness term");
  app->add_flag("--no-cls", f.no_cls, "Disable the classification terms");
  app->add_flag("--no-mle", f.no_mle, "Disable the MRF contrastive term");
}

}  // namespace

int main(int argc, char** argv) {
  const std::string inv = invocation_line(argc, argv);
  CLI::App app{"Multi-source domain adaptation with CRF and MRF graphical models"};
  app.require_subcommand(1);

  std::string preset = "default", gen_out, eval_out, adj_out, pm_out, bench_out, gc_out;
  std::string data_dir, ckpt, model = "all";
  std::uint64_t seed = 0;
  int reps = 10, iters = 100;
  double tol = 1e-4;
  TrainFlags tf;

  auto* gen = app.add_subcommand("generate", "Write a synthetic multi-domain dataset");
  gen->add_option("--preset", preset, "default | identity | tiny");
  gen->add_option("--seed", seed);
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  add_train_flags(train, tf, true);
  train->add_option("--out", tf.out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--out", eval_out, "eval.json path")->default_val("eval.json");

  auto* adj = app.add_subcommand("dump-adjacency", "Write the CRF prototype adjacency");
  adj->add_option("--checkpoint", ckpt)->required();
  adj->add_option("--out", adj_out)->default_val("adjacency.csv");

  auto* pm = app.add_subcommand("dump-probmatrix",
                                "Write per-category MRF joint probability matrices");
  pm->add_option("--checkpoint", ckpt)->required();
  pm->add_option("--data", data_dir)->required();
  pm->add_option("--out", pm_out)->default_val("probmatrix.csv");

  auto* bench = app.add_subcommand("benchmark", "Time training and inference of both models");
  add_train_flags(bench, tf, false);
  bench->add_option("--reps", reps, "Repetitions")->check(CLI::PositiveNumber);
  bench->add_option("--iters", iters, "Iterations per repetition")->check(CLI::PositiveNumber);
  bench->add_option("--out", bench_out, "benchmark.json path");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of both objectives");
  gc->add_option("--model", model, "crf | mrf | all");
  gc->add_option("--seed", seed);
  gc->add_option("--tolerance", tol);
  gc->add_option("--out", gc_out, "report JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const auto bundle = data::generate(data::preset_generator(preset), resolve_seed(seed));
      data::write_bundle(bundle, gen_out, inv);
      return 0;
    }
    if (*train) return cmd_train(tf, inv);
    if (*ev) return cmd_eval(ckpt, data_dir, eval_out, inv);
    if (*adj) return cmd_dump_adjacency(ckpt, adj_out, inv);
    if (*pm) return cmd_dump_probmatrix(ckpt, data_dir, pm_out, inv);
    if (*bench) return cmd_benchmark(tf, reps, iters, bench_out, inv);
    if (*gc) return cmd_gradcheck(model, seed, tol, gc_out, inv);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
