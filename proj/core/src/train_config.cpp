#include "msda/train_config.hpp"

#include <set>

#include "msda/errors.hpp"

namespace msda {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Crf: return "crf";
    case ModelKind::Mrf: return "mrf";
    case ModelKind::SourceOnly: return "source-only";
  }
  return "crf";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "crf") return ModelKind::Crf;
  if (s == "mrf") return ModelKind::Mrf;
  if (s == "source-only") return ModelKind::SourceOnly;
  throw ConfigError("model must be crf, mrf or source-only, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(pseudo_threshold >= 0.0 && pseudo_threshold <= 1.0))
    throw ConfigError("pseudo_threshold must lie in [0, 1]");
  if (pseudo_refresh < 1) throw ConfigError("pseudo_refresh must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
  crf().validate();
  mrf().validate();
}

crf::CrfConfig TrainConfig::crf() const {
  crf::CrfConfig c;
  c.lambda1 = disable_global ? 0.0 : lambda1;
  c.lambda2 = disable_local ? 0.0 : lambda2;
  c.sigma = sigma;
  c.beta = beta;
  c.embed_dim = embed_dim;
  c.extractor_hidden = extractor_hidden;
  c.gcn_hidden = gcn_hidden;
  c.gcn_out = gcn_out;
  c.norm = gcn_norm;
  c.final_relu = final_relu;
  c.grad_through_estimate = prototype_grad;
  c.use_cls = !disable_cls;
  return c;
}

mrf::MrfConfig TrainConfig::mrf() const {
  mrf::MrfConfig c;
  c.tau = tau;
  c.alpha = alpha;
  c.n2 = n2;
  c.embed_dim = embed_dim;
  c.extractor_hidden = extractor_hidden;
  c.init_variance = init_variance;
  c.mle_space = mle_space;
  c.use_cls = !disable_cls;
  c.use_mle = !disable_mle;
  return c;
}

SourceOnlyConfig TrainConfig::source_only() const {
  return {embed_dim, extractor_hidden};
}

io::ordered_json TrainConfig::to_json() const {
  io::ordered_json j;
  j["model"] = to_string(model);
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["pseudo_threshold"] = pseudo_threshold;
  j["pseudo_refresh"] = pseudo_refresh;
  j["warmup_epochs"] = warmup_epochs;
  j["embed_dim"] = embed_dim;
  j["extractor_hidden"] = extractor_hidden;
  j["gcn_hidden"] = gcn_hidden;
  j["gcn_out"] = gcn_out;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["sigma"] = sigma;
  j["beta"] = beta;
  j["gcn_norm"] = crf::to_string(gcn_norm);
  j["final_relu"] = final_relu;
  j["prototype_grad"] = prototype_grad ? "through_estimate" : "none";
  j["tau"] = tau;
  j["alpha"] = alpha;
  j["n2"] = n2;
  j["mle_space"] = mrf::to_string(mle_space);
  j["init_variance"] = init_variance;
  j["disable_global"] = disable_global;
  j["disable_local"] = disable_local;
  j["disable_cls"] = disable_cls;
  j["disable_mle"] = disable_mle;
  return j;
}

TrainConfig TrainConfig::from_json(const io::ordered_json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  const std::set<std::string> known = [] {
    std::set<std::string> s;
    const io::ordered_json defaults = TrainConfig{}.to_json();
    for (const auto& [k, v] : defaults.items()) s.insert(k);
    s.insert("invocation");
    return s;
  }();
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");

  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  };
  std::string s;
  if (j.contains("model")) { get("model", s); c.model = parse_model_kind(s); }
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("seed", c.seed);
  get("pseudo_threshold", c.pseudo_threshold);
  get("pseudo_refresh", c.pseudo_refresh);
  get("warmup_epochs", c.warmup_epochs);
  get("embed_dim", c.embed_dim);
  get("extractor_hidden", c.extractor_hidden);
  get("gcn_hidden", c.gcn_hidden);
  get("gcn_out", c.gcn_out);
  get("lambda1", c.lambda1);
  get("lambda2", c.lambda2);
  get("sigma", c.sigma);
  get("beta", c.beta);
  if (j.contains("gcn_norm")) { get("gcn_norm", s); c.gcn_norm = crf::parse_gcn_norm(s); }
  get("final_relu", c.final_relu);
  if (j.contains("prototype_grad")) {
    get("prototype_grad", s);
    if (s != "through_estimate" && s != "none")
      throw ConfigError("prototype_grad must be through_estimate or none");
    c.prototype_grad = s == "through_estimate";
  }
  get("tau", c.tau);
  get("alpha", c.alpha);
  get("n2", c.n2);
  if (j.contains("mle_space")) { get("mle_space", s); c.mle_space = mrf::parse_mle_space(s); }
  get("init_variance", c.init_variance);
  get("disable_global", c.disable_global);
  get("disable_local", c.disable_local);
  get("disable_cls", c.disable_cls);
  get("disable_mle", c.disable_mle);
  c.validate();
  return c;
}

std::string TrainConfig::canonical() const { return to_json().dump(); }

std::uint64_t TrainConfig::hash() const { return io::fnv1a(canonical()); }

TrainConfig preset_train(std::string_view name, ModelKind model) {
  TrainConfig c;
  c.model = model;
  if (name == "paper") {
    c.lr = 2e-4;
    c.weight_decay = 5e-4;
    c.batch_size = 128;
    c.lambda1 = 20.0;
    c.lambda2 = 0.001;
    c.sigma = 0.005;
    c.beta = 0.7;
    c.tau = 0.1;
    c.alpha = 1.0;
    c.n2 = 6;
  } else if (name == "default") {
    // Desk-scale values for the synthetic rotation task; see README.
    c.epochs = 50;
    c.batch_size = 64;
    c.lr = 1e-3;
    c.weight_decay = 5e-4;
    c.warmup_epochs = 30;
    c.sigma = 0.5;
    c.tau = 3.0;
  } else {
    throw ConfigError("unknown train preset '" + std::string(name) + "'");
  }
  c.validate();
  return c;
}

}  // namespace msda
