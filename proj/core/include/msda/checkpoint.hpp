#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "msda/io.hpp"
#include "msda/trainer.hpp"

namespace msda {

/// Text container `checkpoint.mshx`:
///
///   # <invocation>
///   mshx 1
///   config_hash <16 hex digits, FNV-1a of the config line>
///   config <one-line JSON>
///   layout <M> <K> <D>
///   rng <generator state>
///   metrics <one-line JSON>
///   bank <none|ema|learnable> <initialised mask as 0/1 digits>
///   param <name> <rank> <dims...>
///   <row-major values, IEEE-754 bits as 16 hex digits, space separated>
///   ...
///   end
struct Checkpoint {
  TrainConfig config;
  std::string rng_state;
  io::ordered_json metrics;
  AnyModel model;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, std::string_view invocation,
                     const TrainConfig& config, const AnyModel& model,
                     std::string_view rng_state, const io::ordered_json& metrics);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msda
