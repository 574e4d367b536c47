#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "surealm/decoding.hpp"
#include "surealm/encoder.hpp"
#include "surealm/model.hpp"
#include "surealm/store.hpp"
#include "surealm/trainer.hpp"

namespace surealm::cli {

struct CorpusPaths {
  std::filesystem::path train;
  std::filesystem::path valid;
  std::filesystem::path test;
};

/// Everything a command needs. vocab_size is not configured; it comes from
/// the training vocabulary.
struct RunConfig {
  CorpusPaths corpus;
  EncoderConfig encoder;
  RetrievalConfig retrieval;
  ModelConfig model;
  TrainConfig train;
  GenerationConfig generation;
  std::filesystem::path output_dir = "out";
  unsigned threads = 1;

  /// Cross-section checks (d_enc agreement, generation limits).
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Builds a config from defaults, then `file` (may be empty), then
/// `--section.key=value` overrides. Relative paths in the file resolve
/// against the file's directory; relative override paths against the
/// working directory. Unknown keys raise ConfigError.
RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides);

/// Applies one "section.key=value" assignment to a JSON config tree.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// FNV-1a 64 hex digest of the canonical (sorted-key, compact) dump.
std::string json_digest(const nlohmann::json& j);

/// Digest of the settings that determine a trained model's meaning:
/// encoder, retrieval, model and train sections.
std::string config_digest(const RunConfig& cfg);

nlohmann::json encoder_json(const EncoderConfig& c);
nlohmann::json retrieval_json(const RetrievalConfig& c);
nlohmann::json model_json(const ModelConfig& c);
nlohmann::json train_json(const TrainConfig& c);
nlohmann::json generation_json(const GenerationConfig& c);

}  // namespace surealm::cli
