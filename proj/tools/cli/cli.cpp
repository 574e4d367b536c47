#include <optional>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "commands.hpp"

namespace surealm::cli {

namespace {

struct Common {
  std::string config;
  std::optional<std::uint32_t> delta, topk, suffix_len;
  bool include_current = false;
  std::optional<std::string> output_dir;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Run configuration (JSON)");
  cmd->add_option("--delta", c.delta, "Retrieval stride (retrieval.delta)");
  cmd->add_option("--topk", c.topk, "Hits per retrieval (retrieval.top_k)");
  cmd->add_option("--suffix-len", c.suffix_len, "Suffix truncation m (retrieval.suffix_len)");
  cmd->add_flag("--include-current", c.include_current,
                "Start stored suffixes at the current word (retrieval.include_current)");
  cmd->add_option("-o,--output-dir", c.output_dir, "Artifact directory (output_dir)");
  cmd->add_option("--threads", c.threads, "Worker threads");
  cmd->allow_extras();
  cmd->footer("Any config key can be set with --section.key=value, e.g. --model.d_model=32.");
}

RunConfig resolve(CLI::App* cmd, const Common& c, std::vector<std::string> extra = {}) {
  std::vector<std::string> overrides;
  for (const auto& arg : cmd->remaining()) {
    if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos) {
      throw ConfigError("unrecognized argument: " + arg);
    }
    overrides.push_back(arg.substr(2));
  }
  if (c.delta) overrides.push_back("retrieval.delta=" + std::to_string(*c.delta));
  if (c.topk) overrides.push_back("retrieval.top_k=" + std::to_string(*c.topk));
  if (c.suffix_len) overrides.push_back("retrieval.suffix_len=" + std::to_string(*c.suffix_len));
  if (c.include_current) overrides.push_back("retrieval.include_current=true");
  if (c.output_dir) overrides.push_back("output_dir=" + *c.output_dir);
  if (c.threads) overrides.push_back("threads=" + std::to_string(*c.threads));
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  return load_run_config(c.config, overrides);
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Suffix-retrieval-augmented language model toolkit", "surealm"};
  app.require_subcommand(1);

  Common common;
  auto* index = app.add_subcommand("index", "Build the vocabulary and embedding store");
  auto* pre = app.add_subcommand("precompute", "Retrieve blocks for every corpus split");
  auto* tr = app.add_subcommand("train", "Train a model (retrieval-augmented or baseline)");
  auto* ev = app.add_subcommand("eval", "Word perplexity of a checkpoint on a split");
  auto* gen = app.add_subcommand("generate", "Decode from a prompt with progressive retrieval");
  auto* ins = app.add_subcommand("inspect", "Show the top store hits for a text prefix");
  for (auto* c : {index, pre, tr, ev, gen, ins}) add_common(c, common);

  TrainOptions topt;
  std::uint32_t stop_after = 0;
  tr->add_flag("--baseline", topt.baseline, "Train without retrieval (K=0)");
  tr->add_flag("--resume", topt.resume, "Continue from the run's last epoch state");
  tr->add_option("--stop-after-epoch", stop_after, "Stop once this many epochs are done");
  tr->add_option("--run", topt.run, "Run name (default: baseline or surealm)");

  EvalOptions eopt;
  ev->add_option("--split", eopt.split, "train, valid or test")->capture_default_str();
  ev->add_option("--run", eopt.run, "Run name (default: surealm)");
  ev->add_option("--checkpoint", eopt.checkpoint, "Checkpoint file (default: the run's best)");

  GenerateOptions gopt;
  bool greedy = false;
  std::optional<std::uint32_t> sample_top_k, max_len, min_len;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  gen->add_option("--prompt", gopt.prompt, "Prompt text")->required();
  gen->add_flag("--greedy", greedy, "Greedy decoding");
  gen->add_option("--sample-top-k", sample_top_k, "Top-k sampling with this k");
  gen->add_option("--temperature", temperature, "Sampling temperature");
  gen->add_option("--seed", seed, "Sampling seed");
  gen->add_option("--max-len", max_len, "Maximum words, prompt included");
  gen->add_option("--min-len", min_len, "Minimum words before EOS is allowed");
  gen->add_option("-n,--num-samples", gopt.num_samples, "Samples to draw");
  gen->add_option("--jsonl", gopt.jsonl, "Write per-step retrievals as JSON Lines");
  gen->add_option("--run", gopt.run, "Run name (default: surealm)");
  gen->add_option("--checkpoint", gopt.checkpoint, "Checkpoint file");

  InspectOptions iopt;
  ins->add_option("--prefix", iopt.prefix, "Word prefix to query")->required();
  ins->add_option("-k", iopt.k, "Number of hits (default: retrieval.top_k)");
  ins->add_flag("--json", iopt.json, "Emit JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (index->parsed()) {
      cmd_index(resolve(index, common), out);
    } else if (pre->parsed()) {
      cmd_precompute(resolve(pre, common), out);
    } else if (tr->parsed()) {
      if (stop_after > 0) topt.stop_after_epoch = stop_after;
      cmd_train(resolve(tr, common), topt, out);
    } else if (ev->parsed()) {
      cmd_eval(resolve(ev, common), eopt, out);
    } else if (gen->parsed()) {
      std::vector<std::string> extra;
      if (sample_top_k) {
        extra.push_back("generation.strategy=top_k");
        extra.push_back("generation.top_k=" + std::to_string(*sample_top_k));
      } else if (temperature) {
        extra.push_back("generation.strategy=temperature");
      }
      if (temperature) extra.push_back(fmt::format("generation.temperature={}", *temperature));
      if (greedy) extra.push_back("generation.strategy=greedy");
      if (seed) extra.push_back("generation.seed=" + std::to_string(*seed));
      if (max_len) extra.push_back("generation.max_len=" + std::to_string(*max_len));
      if (min_len) extra.push_back("generation.min_len=" + std::to_string(*min_len));
      cmd_generate(resolve(gen, common, extra), gopt, out);
    } else if (ins->parsed()) {
      cmd_inspect(resolve(ins, common), iopt, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << " [section " << e.section() << "]\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace surealm::cli
