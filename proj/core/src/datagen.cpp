#include "msda/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "msda/errors.hpp"
#include "msda/io.hpp"
#include "msda/rng.hpp"

namespace msda::data {

namespace {

constexpr std::uint64_t kBaseStream = 0xB45E;
constexpr std::uint64_t kDomainStream = 0xD0A1;

double degrees(double deg) { return deg * std::numbers::pi / 180.0; }

std::vector<DomainSpec> rotated_domains(int sources, int dim,
                                        std::initializer_list<double> degs,
                                        double noise) {
  std::vector<DomainSpec> out;
  int id = 1;
  for (double d : degs) {
    DomainSpec s;
    s.domain_id = id++;
    s.rotation = degrees(d);
    s.translation.assign(static_cast<std::size_t>(dim), 0.0);
    s.noise_std = noise;
    out.push_back(std::move(s));
  }
  if (static_cast<int>(out.size()) != sources + 1)
    throw ContractError("preset domain count mismatch");
  return out;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (classes < 2) throw ConfigError("need at least 2 classes");
  if (sources < 1) throw ConfigError("need at least 1 source domain");
  if (input_dim < 2) throw ConfigError("input dimension must be >= 2");
  if (per_class < 10) throw ConfigError("per-class count must be >= 10");
  if (!(radius >= 0.0) || !(class_std >= 0.0))
    throw ConfigError("radius and class_std must be non-negative");
  if (static_cast<int>(domains.size()) != sources + 1)
    throw ConfigError("expected " + std::to_string(sources + 1) +
                      " domain specs, got " + std::to_string(domains.size()));
  for (std::size_t m = 0; m < domains.size(); ++m) {
    const auto& d = domains[m];
    if (d.domain_id != static_cast<int>(m) + 1)
      throw ConfigError("domain specs must be ordered by id 1..M+1");
    if (!(d.scale > 0.0)) throw ConfigError("domain scale must be positive");
    if (!(d.noise_std >= 0.0))
      throw ConfigError("domain noise_std must be non-negative");
    if (static_cast<int>(d.translation.size()) != input_dim)
      throw ConfigError("translation length must equal input_dim");
  }
}

GeneratorConfig preset_generator(std::string_view name) {
  GeneratorConfig c;
  if (name == "default") {
    c.domains = rotated_domains(3, 2, {0.0, 6.0, 12.0, 30.0}, 0.05);
    c.domains.back().noise_std = 0.7;
  } else if (name == "identity") {
    c.domains = rotated_domains(3, 2, {0.0, 0.0, 0.0, 0.0}, 0.0);
  } else if (name == "tiny") {
    c.sources = 1;
    c.classes = 2;
    c.per_class = 10;
    c.domains = rotated_domains(1, 2, {0.0, 20.0}, 0.05);
  } else {
    throw ConfigError("unknown generator preset '" + std::string(name) + "'");
  }
  return c;
}

DatasetBundle generate(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  const auto K = static_cast<std::size_t>(config.classes);
  const auto D = static_cast<std::size_t>(config.input_dim);
  const std::size_t n = K * static_cast<std::size_t>(config.per_class);

  // Shared latent draws: balanced labels in a seeded random order.
  Rng base = derive_rng(seed, kBaseStream);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i)
    labels[i] = static_cast<int>(i / static_cast<std::size_t>(config.per_class));
  std::shuffle(labels.begin(), labels.end(), base);

  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor latent({n, D});
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * labels[i] / static_cast<double>(K);
    for (std::size_t j = 0; j < D; ++j) {
      double mu = 0.0;
      if (j == 0) mu = config.radius * std::cos(angle);
      if (j == 1) mu = config.radius * std::sin(angle);
      latent.at(i, j) = mu + config.class_std * gauss(base);
    }
  }

  DatasetBundle out;
  out.config = config;
  out.seed = seed;
  for (const DomainSpec& spec : config.domains) {
    Rng rng = derive_rng(seed, kDomainStream + static_cast<std::uint64_t>(spec.domain_id));
    const double cs = std::cos(spec.rotation), sn = std::sin(spec.rotation);
    DomainData dom;
    dom.domain_id = spec.domain_id;
    dom.labels = labels;
    dom.features = Tensor({n, D});
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = latent.at(i, 0), x1 = latent.at(i, 1);
      for (std::size_t j = 0; j < D; ++j) {
        double v = latent.at(i, j);
        if (j == 0) v = cs * x0 - sn * x1;
        if (j == 1) v = sn * x0 + cs * x1;
        v = spec.scale * v + spec.translation[j];
        if (spec.noise_std > 0.0) v += spec.noise_std * gauss(rng);
        dom.features.at(i, j) = v;
      }
    }
    out.domains.push_back(std::move(dom));
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

io::ordered_json meta_json(const DatasetBundle& b) {
  const auto& c = b.config;
  io::ordered_json j;
  j["M"] = c.sources;
  j["K"] = c.classes;
  j["D"] = c.input_dim;
  j["seed"] = b.seed;
  j["per_class"] = c.per_class;
  j["radius"] = c.radius;
  j["class_std"] = c.class_std;
  auto arr = io::ordered_json::array();
  for (const auto& d : c.domains) {
    io::ordered_json s;
    s["domain_id"] = d.domain_id;
    s["rotation"] = d.rotation;
    s["scale"] = d.scale;
    s["translation"] = d.translation;
    s["noise_std"] = d.noise_std;
    arr.push_back(std::move(s));
  }
  j["domains"] = std::move(arr);
  return j;
}

double parse_double(std::string_view s, const std::filesystem::path& file) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("malformed number '" + std::string(s) + "' in " +
                      file.string());
  return v;
}

}  // namespace

void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir,
                  std::string_view invocation) {
  std::filesystem::create_directories(dir);
  const auto D = static_cast<std::size_t>(bundle.config.input_dim);
  for (const auto& dom : bundle.domains) {
    std::string text = "# " + std::string(invocation) + "\n";
    text += "domain_id,label";
    for (std::size_t j = 0; j < D; ++j) text += ",f" + std::to_string(j);
    text += "\n";
    for (std::size_t i = 0; i < dom.size(); ++i) {
      text += std::to_string(dom.domain_id) + "," +
              std::to_string(dom.labels[i] + 1);
      for (std::size_t j = 0; j < D; ++j)
        text += "," + format_double(dom.features.at(i, j));
      text += "\n";
    }
    io::write_text(dir / ("domain_" + std::to_string(dom.domain_id) + ".csv"),
                   text);
  }
  io::write_json(dir / "meta.json", invocation, meta_json(bundle));
}

DatasetBundle read_bundle(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path))
    throw ConfigError("missing dataset metadata " + meta_path.string());
  const auto j = io::read_json(meta_path);
  DatasetBundle b;
  try {
    auto& c = b.config;
    c.sources = j.at("M").get<int>();
    c.classes = j.at("K").get<int>();
    c.input_dim = j.at("D").get<int>();
    c.per_class = j.at("per_class").get<int>();
    c.radius = j.at("radius").get<double>();
    c.class_std = j.at("class_std").get<double>();
    b.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("domains")) {
      DomainSpec d;
      d.domain_id = s.at("domain_id").get<int>();
      d.rotation = s.at("rotation").get<double>();
      d.scale = s.at("scale").get<double>();
      d.translation = s.at("translation").get<std::vector<double>>();
      d.noise_std = s.at("noise_std").get<double>();
      c.domains.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid " + meta_path.string() + ": " + e.what());
  }
  b.config.validate();

  const auto D = static_cast<std::size_t>(b.config.input_dim);
  for (int id = 1; id <= b.config.domain_count(); ++id) {
    const auto path = dir / ("domain_" + std::to_string(id) + ".csv");
    std::istringstream in(io::read_text(path));
    std::string line;
    bool header = false;
    std::vector<double> feats;
    DomainData dom;
    dom.domain_id = id;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (!header) {
        header = true;
        continue;
      }
      std::vector<std::string_view> cells;
      std::string_view rest(line);
      for (;;) {
        const auto comma = rest.find(',');
        cells.push_back(rest.substr(0, comma));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
      }
      if (cells.size() != D + 2)
        throw ConfigError("wrong column count in " + path.string());
      if (static_cast<int>(parse_double(cells[0], path)) != id)
        throw ConfigError("domain_id mismatch in " + path.string());
      const int label = static_cast<int>(parse_double(cells[1], path));
      if (label < 1 || label > b.config.classes)
        throw ConfigError("label out of range in " + path.string());
      dom.labels.push_back(label - 1);
      for (std::size_t k = 0; k < D; ++k)
        feats.push_back(parse_double(cells[2 + k], path));
    }
    if (dom.labels.empty()) throw ConfigError("no samples in " + path.string());
    dom.features = Tensor({dom.labels.size(), D}, std::move(feats));
    b.domains.push_back(std::move(dom));
  }
  return b;
}

}  // namespace msda::data
