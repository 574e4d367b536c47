#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "config.hpp"

namespace surealm::cli {

/// File names inside output_dir.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path vocab() const { return root / "vocab.txt"; }
  std::filesystem::path vocab_meta() const { return root / "vocab.json"; }
  std::filesystem::path store() const { return root / "store.bin"; }
  std::filesystem::path store_meta() const { return root / "store.json"; }
  std::filesystem::path table(const std::string& split) const {
    return root / ("retrieval_" + split + ".jsonl");
  }
  std::filesystem::path table_meta(const std::string& split) const {
    return root / ("retrieval_" + split + ".json");
  }
  std::filesystem::path run_dir(const std::string& run) const { return root / run; }
  std::filesystem::path checkpoint(const std::string& run) const {
    return run_dir(run) / "checkpoint.bin";
  }
  std::filesystem::path checkpoint_meta(const std::string& run) const {
    return run_dir(run) / "checkpoint.json";
  }
  std::filesystem::path metrics(const std::string& run) const {
    return run_dir(run) / "metrics.jsonl";
  }
  std::filesystem::path train_state(const std::string& run) const {
    return run_dir(run) / "train_state.bin";
  }
  std::filesystem::path train_state_meta(const std::string& run) const {
    return run_dir(run) / "train_state.json";
  }
  std::filesystem::path eval_report(const std::string& run, const std::string& split) const {
    return run_dir(run) / ("eval_" + split + ".json");
  }
};

struct TrainOptions {
  bool baseline = false;
  bool resume = false;
  /// Stop (resumably) once this many epochs are done.
  std::optional<std::uint32_t> stop_after_epoch;
  std::string run;  // defaults to "baseline" or "surealm"
};

struct EvalOptions {
  std::string split = "valid";
  std::string run;  // defaults to "surealm"
  std::filesystem::path checkpoint;  // defaults to the run's checkpoint
};

struct GenerateOptions {
  std::string prompt;
  std::string run;
  std::filesystem::path checkpoint;
  std::size_t num_samples = 1;
  std::filesystem::path jsonl;
};

struct InspectOptions {
  std::string prefix;
  std::size_t k = 0;  // 0 means retrieval.top_k
  bool json = false;
};

void cmd_index(const RunConfig& cfg, std::ostream& out);
void cmd_precompute(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& out);
void cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& out);
void cmd_generate(const RunConfig& cfg, const GenerateOptions& opts, std::ostream& out);
void cmd_inspect(const RunConfig& cfg, const InspectOptions& opts, std::ostream& out);

/// Parses argv and runs a subcommand. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace surealm::cli
