#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "msda/tensor.hpp"

namespace msda::data {

/// Affine shift applied to the shared base mixture to form one domain.
struct DomainSpec {
  int domain_id = 1;  // 1..M+1; M+1 is the target
  double rotation = 0.0;  // radians, in the (f0, f1) plane
  double scale = 1.0;
  std::vector<double> translation;  // length D
  double noise_std = 0.0;
};

struct GeneratorConfig {
  int sources = 3;      // M
  int classes = 5;      // K
  int input_dim = 2;    // D
  int per_class = 500;  // samples per class per domain
  double radius = 4.0;  // class means sit on a circle of this radius
  double class_std = 0.3;
  std::vector<DomainSpec> domains;  // M+1 entries, target last

  int domain_count() const { return sources + 1; }
  void validate() const;
};

// "default" (desk-scale shifted task), "identity" (no shift), "tiny".
GeneratorConfig preset_generator(std::string_view name);

struct DomainData {
  int domain_id = 1;
  Tensor features;          // [n, D]
  std::vector<int> labels;  // 0-based class index, always stored
  std::size_t size() const { return labels.size(); }
};

struct DatasetBundle {
  GeneratorConfig config;
  std::uint64_t seed = 0;
  std::vector<DomainData> domains;  // index m = domain_id - 1

  int sources() const { return config.sources; }
  int classes() const { return config.classes; }
  int input_dim() const { return config.input_dim; }
  std::size_t target_index() const { return domains.size() - 1; }
  const DomainData& target() const { return domains.back(); }
};

/// Pure function of (config, seed).
///
/// Base latent points (class label plus isotropic Gaussian jitter around the
/// class mean) are drawn once and shared by all domains; each domain then
/// applies its own rotation, scale, translation and additive noise. Class
/// counts are exactly equal in every domain.
DatasetBundle generate(const GeneratorConfig& config, std::uint64_t seed);

// domain_<id>.csv per domain plus meta.json. `invocation` becomes the first
// line of every file.
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir,
                  std::string_view invocation);
DatasetBundle read_bundle(const std::filesystem::path& dir);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace msda::data
