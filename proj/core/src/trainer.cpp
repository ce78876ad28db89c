#include "msda/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <utility>

#include "msda/errors.hpp"
#include "msda/io.hpp"

namespace msda {

namespace {

constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kShuffleStream = 0x5A0F;
constexpr std::uint64_t kNegativeStream = 0x4E4547ULL << 32;

template <class... Fs>
struct Overload : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overload(Fs...) -> Overload<Fs...>;

struct Objective {
  Var total;
  LossTerms terms;
  std::optional<PrototypeEstimate> estimate;
  Tensor query_probs;
};

// Builds the model's objective on `tape`. `negatives` seeds MRF sampling.
template <class Model>
Objective build_objective(Model& model, Tape& tape, const data::MiniBatch& batch,
                          Rng& negatives) {
  Objective o;
  if constexpr (std::is_same_v<std::remove_const_t<Model>, crf::CrfModel>) {
    auto l = model.objective(tape, batch);
    o.total = l.total;
    o.terms = {l.total.item(), l.proto, l.src, l.tgt, l.global, l.local, 0, 0, 0};
    o.estimate = std::move(l.estimate);
    o.query_probs = std::move(l.query_probs);
  } else if constexpr (std::is_same_v<std::remove_const_t<Model>, mrf::MrfModel>) {
    auto l = model.objective(tape, batch, negatives);
    o.total = l.total;
    o.terms = {l.total.item(), 0, l.src, l.tgt, 0, 0, l.mle,
               l.stats.positive_mean, l.stats.negative_mean};
    o.query_probs = std::move(l.query_probs);
  } else {
    auto l = model.objective(tape, batch);
    o.total = l.total;
    o.terms.total = l.total.item();
    o.terms.src = l.src;
    o.query_probs = std::move(l.query_probs);
  }
  return o;
}

void check_terms(const LossTerms& t, int classes, std::int64_t step) {
  const std::pair<const char*, double> named[] = {
      {"total", t.total}, {"proto", t.proto}, {"src", t.src},
      {"tgt", t.tgt},     {"global", t.global}, {"local", t.local},
      {"mle", t.mle}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v))
      throw NumericError("step " + std::to_string(step) + ": loss term '" +
                         name + "' is not finite");
  constexpr double kSlack = 1e-9;
  if (t.global < 0.0 || t.local < 0.0)
    throw NumericError("step " + std::to_string(step) +
                       ": alignment loss is negative");
  if (t.tgt < -kSlack || t.tgt > std::log(static_cast<double>(classes)) + kSlack)
    throw NumericError("step " + std::to_string(step) +
                       ": target entropy outside [0, log K]");
}

std::string fmt(double v) { return data::format_double(v); }

}  // namespace

// ---------------------------------------------------------------------------
// AnyModel
// ---------------------------------------------------------------------------

AnyModel AnyModel::create(const TrainConfig& config, int sources, int classes,
                          int input_dim, Rng& rng) {
  config.validate();
  switch (config.model) {
    case ModelKind::Crf:
      return AnyModel(crf::CrfModel(sources, classes, input_dim, config.crf(), rng),
                      sources, classes, input_dim);
    case ModelKind::Mrf:
      return AnyModel(mrf::MrfModel(sources, classes, input_dim, config.mrf(), rng),
                      sources, classes, input_dim);
    case ModelKind::SourceOnly:
      return AnyModel(SourceOnlyModel(sources, classes, input_dim,
                                      config.source_only(), rng),
                      sources, classes, input_dim);
  }
  throw ConfigError("unknown model kind");
}

ModelKind AnyModel::kind() const {
  return std::visit(Overload{[](const crf::CrfModel&) { return ModelKind::Crf; },
                             [](const mrf::MrfModel&) { return ModelKind::Mrf; },
                             [](const SourceOnlyModel&) { return ModelKind::SourceOnly; }},
                    model_);
}

Tensor AnyModel::predict(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != static_cast<std::size_t>(input_dim_))
    throw CheckpointError("feature dimension " +
                          std::to_string(features.rank() == 2 ? features.dim(1) : 0) +
                          " does not match the model's " + std::to_string(input_dim_));
  return std::visit([&](const auto& m) { return m.predict(features); }, model_);
}

std::vector<Parameter*> AnyModel::parameters() {
  return std::visit([](auto& m) { return m.parameters(); }, model_);
}

PrototypeBank* AnyModel::bank() {
  return std::visit(Overload{[](crf::CrfModel& m) { return &m.bank(); },
                             [](mrf::MrfModel& m) { return &m.bank(); },
                             [](SourceOnlyModel&) -> PrototypeBank* { return nullptr; }},
                    model_);
}

const PrototypeBank* AnyModel::bank() const {
  return const_cast<AnyModel*>(this)->bank();
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

double accuracy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw ContractError("accuracy: one prediction row per label required");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = probs.row(i);
    const auto best = std::max_element(r.begin(), r.end()) - r.begin();
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

EvalReport evaluate(const AnyModel& model, const data::DatasetBundle& data) {
  if (data.config.sources != model.sources() || data.config.classes != model.classes() ||
      data.config.input_dim != model.input_dim())
    throw CheckpointError("dataset shape (M, K, D) does not match the model");
  EvalReport r;
  for (const auto& dom : data.domains)
    r.domain_accuracy.push_back(accuracy(model.predict(dom.features), dom.labels));
  return r;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Rng negative_rng(std::uint64_t seed, std::int64_t step) {
  return derive_rng(seed, kNegativeStream + static_cast<std::uint64_t>(step));
}

namespace {

const data::DatasetBundle& checked(const TrainConfig& config,
                                   const data::DatasetBundle& data) {
  config.validate();
  if (data.domains.size() < 2)
    throw ConfigError("training needs at least one source and one target domain");
  return data;
}

}  // namespace

Trainer::Trainer(const TrainConfig& config, const data::DatasetBundle& data)
    : config_(config), data_(&checked(config, data)),
      init_rng_(derive_rng(config.seed, kInitStream)),
      shuffle_rng_(derive_rng(config.seed, kShuffleStream)),
      model_(AnyModel::create(config, data.config.sources, data.config.classes,
                              data.config.input_dim, init_rng_)),
      adam_(model_.parameters(), AdamOptions{config.lr, 0.9, 0.999, 1e-8,
                                             config.weight_decay}),
      sampler_(data, static_cast<std::size_t>(config.batch_size)) {
  refresh_pseudo_labels();
}

void Trainer::refresh_pseudo_labels() {
  if (epoch_ < config_.warmup_epochs) {
    pseudo_.assign(data_->domains.back().size(), std::nullopt);
    return;
  }
  if (!target_probs_) target_probs_ = model_.predict(data_->domains.back().features);
  pseudo_ = data::assign_pseudo_labels(*target_probs_, config_.pseudo_threshold);
}

std::string Trainer::rng_state() const { return msda::rng_state(shuffle_rng_); }

data::MiniBatch Trainer::sample_batch() {
  if (!sampler_.has_next()) sampler_.begin_epoch(shuffle_rng_);
  return next_batch();
}

data::MiniBatch Trainer::next_batch() {
  data::MiniBatch batch = sampler_.next(pseudo_);
  batch.target_entropy = epoch_ == 0 || epoch_ > config_.warmup_epochs;
  return batch;
}

LossTerms Trainer::step(const data::MiniBatch& batch, Tensor* query_probs) {
  Objective o;
  try {
    Tape tape;
    Rng negatives = negative_rng(config_.seed, step_);
    model_.visit([&](auto& m) { o = build_objective(m, tape, batch, negatives); });
    check_terms(o.terms, model_.classes(), step_);
    adam_.zero_grad();
    tape.backward(o.total);
  } catch (const NumericError& e) {
    const std::string what = e.what();
    if (what.rfind("step ", 0) == 0) throw;
    throw NumericError("step " + std::to_string(step_) + ": " + what);
  }
  adam_.step();
  target_probs_.reset();
  if (auto* crf = model_.crf()) {
    for (double g : std::as_const(crf->bank()).parameter().grad.data())
      if (g != 0.0) throw ContractError("EMA prototypes received a gradient");
    crf->commit_prototypes(*o.estimate);
  }
  ++step_;
  if (query_probs) *query_probs = std::move(o.query_probs);
  return o.terms;
}

EpochMetrics Trainer::run_epoch() {
  if (epoch_ > 0 && epoch_ % config_.pseudo_refresh == 0) refresh_pseudo_labels();
  ++epoch_;
  sampler_.begin_epoch(shuffle_rng_);

  EpochMetrics em;
  em.epoch = epoch_;
  for (const auto& p : pseudo_) em.pseudo_labeled += p.has_value();
  std::size_t src_hits = 0, src_seen = 0;
  const auto t0 = std::chrono::steady_clock::now();
  while (sampler_.has_next()) {
    const data::MiniBatch batch = next_batch();
    Tensor probs;
    const LossTerms t = step(batch, &probs);
    auto& m = em.mean;
    m.total += t.total;
    m.proto += t.proto;
    m.src += t.src;
    m.tgt += t.tgt;
    m.global += t.global;
    m.local += t.local;
    m.mle += t.mle;
    m.positive_mean += t.positive_mean;
    m.negative_mean += t.negative_mean;
    std::size_t row = 0;
    for (std::size_t d = 0; d + 1 < batch.domain_count(); ++d)
      for (int y : batch.domains[d].labels) {
        const auto r = probs.row(row++);
        src_hits += (std::max_element(r.begin(), r.end()) - r.begin()) == y;
        ++src_seen;
      }
    ++em.steps;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (em.steps > 0) {
    const double n = static_cast<double>(em.steps);
    auto& m = em.mean;
    for (double* v : {&m.total, &m.proto, &m.src, &m.tgt, &m.global, &m.local,
                      &m.mle, &m.positive_mean, &m.negative_mean})
      *v /= n;
    em.seconds_per_100 = secs / n * 100.0;
  }
  em.source_accuracy =
      src_seen ? static_cast<double>(src_hits) / static_cast<double>(src_seen) : 0.0;
  const auto& target = data_->domains.back();
  target_probs_ = model_.predict(target.features);
  em.target_accuracy = accuracy(*target_probs_, target.labels);
  return em;
}

std::vector<EpochMetrics> Trainer::run() {
  std::vector<EpochMetrics> out;
  for (int e = 0; e < config_.epochs; ++e) out.push_back(run_epoch());
  return out;
}

// ---------------------------------------------------------------------------
// Metrics files
// ---------------------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path,
                       std::string_view invocation,
                       const std::vector<EpochMetrics>& metrics) {
  std::ostringstream out;
  out << "# " << invocation << "\n"
      << "epoch,steps,loss,l_proto,l_src,l_tgt,l_global,l_local,l_mle,"
         "p_pos,p_neg,source_acc,target_acc,pseudo_labeled\n";
  for (const auto& e : metrics) {
    const auto& m = e.mean;
    out << e.epoch << ',' << e.steps << ',' << fmt(m.total) << ',' << fmt(m.proto)
        << ',' << fmt(m.src) << ',' << fmt(m.tgt) << ',' << fmt(m.global) << ','
        << fmt(m.local) << ',' << fmt(m.mle) << ',' << fmt(m.positive_mean) << ','
        << fmt(m.negative_mean) << ',' << fmt(e.source_accuracy) << ','
        << fmt(e.target_accuracy) << ',' << e.pseudo_labeled << '\n';
  }
  io::write_text(path, out.str());
}

void write_timing_csv(const std::filesystem::path& path,
                      std::string_view invocation,
                      const std::vector<EpochMetrics>& metrics) {
  std::ostringstream out;
  out << "# " << invocation << "\n" << "epoch,steps,seconds_per_100\n";
  for (const auto& e : metrics)
    out << e.epoch << ',' << e.steps << ',' << fmt(e.seconds_per_100) << '\n';
  io::write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.rel_error);
  return m;
}

TrainConfig gradcheck_config(ModelKind model, std::uint64_t seed) {
  TrainConfig c;
  c.model = model;
  c.seed = seed;
  c.batch_size = 2;
  c.embed_dim = 3;
  c.extractor_hidden = 4;
  c.gcn_hidden = 3;
  c.gcn_out = 3;
  c.sigma = 1.0;
  c.tau = 1.0;
  c.n2 = 2;
  c.pseudo_threshold = 0.0;
  return c;
}

GradCheckReport grad_check(const TrainConfig& config, double h) {
  const auto data = data::generate(data::preset_generator("tiny"), config.seed);
  Trainer trainer(config, data);
  AnyModel& model = trainer.model();
  const data::MiniBatch batch = trainer.sample_batch();

  if (auto* crf = model.crf()) {
    // Seed the EMA history so the stop-gradient branch is exercised.
    const data::MiniBatch warm = trainer.sample_batch();
    Tape tape(false);
    crf->commit_prototypes(crf->objective(tape, warm).estimate);
  }

  auto evaluate_loss = [&](Tape& tape) {
    Rng negatives = negative_rng(config.seed, 0);
    Objective o;
    model.visit([&](auto& m) { o = build_objective(m, tape, batch, negatives); });
    return o.total;
  };

  GradCheckReport report;
  report.model = config.model;
  std::vector<Parameter*> params = model.parameters();
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = evaluate_loss(tape);
    report.loss = loss.item();
    tape.backward(loss);
  }

  for (auto* p : params) {
    GradCheckGroup g;
    g.name = p->name;
    g.size = p->value.size();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      auto at = [&](double v) {
        p->value[i] = v;
        Tape tape(false);
        return evaluate_loss(tape).item();
      };
      const double numeric = (at(orig + h) - at(orig - h)) / (2.0 * h);
      p->value[i] = orig;
      const double analytic = p->grad[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      g.max_abs_error = std::max(g.max_abs_error, std::abs(analytic - numeric));
    }
    const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
    g.rel_error = scale > 1e-10 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
    report.groups.push_back(std::move(g));
  }
  return report;
}

}  // namespace msda
