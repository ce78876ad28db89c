#include "msda/checkpoint.hpp"

#include <map>
#include <sstream>
#include <utility>

#include "msda/errors.hpp"

namespace msda {

namespace {

std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return s;
}

// Named arrays in file order: optimizer parameters, then EMA prototypes.
std::vector<std::pair<std::string, const Tensor*>> named_arrays(const AnyModel& model) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const Parameter* p : const_cast<AnyModel&>(model).parameters())
    out.emplace_back(p->name, &p->value);
  if (const auto* crf = model.crf())
    out.emplace_back(crf->bank().parameter().name, &crf->bank().values());
  return out;
}

std::string next_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line))
    throw CheckpointError("truncated checkpoint " + path.string());
  return line;
}

std::string expect_field(const std::string& line, std::string_view key,
                         const std::filesystem::path& path) {
  if (line.rfind(std::string(key) + " ", 0) != 0)
    throw CheckpointError("expected '" + std::string(key) + "' in " + path.string());
  return line.substr(key.size() + 1);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::string_view invocation,
                     const TrainConfig& config, const AnyModel& model,
                     std::string_view rng_state, const io::ordered_json& metrics) {
  std::ostringstream out;
  const std::string cfg = config.canonical();
  out << "# " << invocation << "\n"
      << "mshx " << kCheckpointVersion << "\n"
      << "config_hash " << hash_hex(io::fnv1a(cfg)) << "\n"
      << "config " << cfg << "\n"
      << "layout " << model.sources() << ' ' << model.classes() << ' '
      << model.input_dim() << "\n"
      << "rng " << rng_state << "\n"
      << "metrics " << metrics.dump() << "\n";
  const PrototypeBank* bank = model.bank();
  out << "bank ";
  if (!bank) {
    out << "none -";
  } else {
    out << (bank->mode() == PrototypeMode::Ema ? "ema " : "learnable ");
    for (bool b : bank->initialized()) out << (b ? '1' : '0');
  }
  out << "\n";
  for (const auto& [name, t] : named_arrays(model)) {
    out << "param " << name << ' ' << t->rank();
    for (std::size_t d : t->shape()) out << ' ' << d;
    out << "\n";
    for (std::size_t i = 0; i < t->size(); ++i)
      out << (i ? " " : "") << io::hex64((*t)[i]);
    out << "\n";
  }
  out << "end\n";
  io::write_text(path, out.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw CheckpointError("missing checkpoint " + path.string());
  std::istringstream in(io::read_text(path));
  std::string line = next_line(in, path);
  while (!line.empty() && line[0] == '#') line = next_line(in, path);

  if (expect_field(line, "mshx", path) != std::to_string(kCheckpointVersion))
    throw CheckpointError("unsupported checkpoint version in " + path.string());
  const std::string hash = expect_field(next_line(in, path), "config_hash", path);
  const std::string cfg_line = expect_field(next_line(in, path), "config", path);
  if (hash_hex(io::fnv1a(cfg_line)) != hash)
    throw CheckpointError("config hash mismatch in " + path.string());

  TrainConfig config;
  try {
    config = TrainConfig::from_json(io::ordered_json::parse(cfg_line));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("unreadable config in " + path.string() + ": " + e.what());
  }

  std::istringstream layout(expect_field(next_line(in, path), "layout", path));
  int M = 0, K = 0, D = 0;
  if (!(layout >> M >> K >> D) || M < 1 || K < 2 || D < 1)
    throw CheckpointError("bad layout line in " + path.string());

  const std::string rng = expect_field(next_line(in, path), "rng", path);
  io::ordered_json metrics;
  try {
    metrics = io::ordered_json::parse(expect_field(next_line(in, path), "metrics", path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("unreadable metrics in " + path.string() + ": " + e.what());
  }

  std::istringstream bank_line(expect_field(next_line(in, path), "bank", path));
  std::string bank_mode, mask_text;
  bank_line >> bank_mode >> mask_text;

  Rng scratch(0);
  Checkpoint ck{config, rng, metrics, AnyModel::create(config, M, K, D, scratch)};

  std::map<std::string, Tensor> arrays;
  for (line = next_line(in, path); line != "end"; line = next_line(in, path)) {
    std::istringstream head(expect_field(line, "param", path));
    std::string name;
    std::size_t rank = 0;
    head >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) head >> d;
    if (!head || name.empty())
      throw CheckpointError("bad param header in " + path.string());
    std::istringstream body(next_line(in, path));
    std::vector<double> values;
    std::string tok;
    while (body >> tok) values.push_back(io::from_hex64(tok));
    if (values.size() != shape_size(shape))
      throw CheckpointError("param '" + name + "' has wrong value count in " +
                            path.string());
    if (!arrays.emplace(name, Tensor(shape, std::move(values))).second)
      throw CheckpointError("duplicate param '" + name + "' in " + path.string());
  }

  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw CheckpointError("param '" + name + "' missing from " + path.string());
    if (it->second.shape() != shape)
      throw CheckpointError("param '" + name + "' has shape " +
                            shape_string(it->second.shape()) + ", model expects " +
                            shape_string(shape));
    Tensor t = std::move(it->second);
    arrays.erase(it);
    return t;
  };

  PrototypeBank* bank = ck.model.bank();
  const std::string expected_mode =
      !bank ? "none" : bank->mode() == PrototypeMode::Ema ? "ema" : "learnable";
  if (bank_mode != expected_mode)
    throw CheckpointError("bank mode '" + bank_mode + "' does not match model in " +
                          path.string());
  for (Parameter* p : ck.model.parameters()) {
    if (bank && p == &std::as_const(*bank).parameter()) continue;
    p->value = take(p->name, p->value.shape());
  }
  if (bank) {
    if (mask_text.size() != bank->slots())
      throw CheckpointError("bank mask length mismatch in " + path.string());
    std::vector<bool> mask;
    for (char ch : mask_text) mask.push_back(ch == '1');
    bank->restore(take("prototypes", bank->values().shape()), std::move(mask));
  }
  if (!arrays.empty())
    throw CheckpointError("unexpected param '" + arrays.begin()->first + "' in " +
                          path.string());
  return ck;
}

}  // namespace msda
