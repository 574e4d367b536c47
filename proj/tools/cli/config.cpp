#include "config.hpp"

#include <limits>

#include "surealm/binary_io.hpp"

namespace surealm::cli {

using nlohmann::json;

namespace {

std::string strategy_name(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::kGreedy: return "greedy";
    case DecodeStrategy::kTopK: return "top_k";
    case DecodeStrategy::kTemperature: return "temperature";
  }
  return "greedy";
}

DecodeStrategy parse_strategy(const std::string& s) {
  if (s == "greedy") return DecodeStrategy::kGreedy;
  if (s == "top_k") return DecodeStrategy::kTopK;
  if (s == "temperature") return DecodeStrategy::kTemperature;
  throw ConfigError("generation.strategy must be greedy, top_k or temperature, got '" + s + "'");
}

// Typed field readers with the dotted key in error messages.
template <typename T>
T get_uint(const json& j, const std::string& key) {
  if (!j.is_number_unsigned()) {
    throw ConfigError(key + " must be a non-negative integer");
  }
  const auto v = j.get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) throw ConfigError(key + " is out of range");
  return static_cast<T>(v);
}

double get_double(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key + " must be a number");
  return j.get<double>();
}

bool get_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError(key + " must be true or false");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + " must be a string");
  return j.get<std::string>();
}

// Recursively copies `src` into `dst`; every key must already exist.
void merge_strict(json& dst, const json& src, const std::string& prefix) {
  if (!src.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + " must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown config key: " + key);
    if (dst[it.key()].is_object()) {
      merge_strict(dst[it.key()], it.value(), key);
    } else {
      dst[it.key()] = it.value();
    }
  }
}

void resolve_path(json& node, const std::filesystem::path& base) {
  if (!node.is_string()) return;
  const std::filesystem::path p = node.get<std::string>();
  if (!p.empty() && p.is_relative()) node = (base / p).lexically_normal().string();
}

RunConfig from_tree(const json& t) {
  RunConfig c;
  const auto& co = t.at("corpus");
  c.corpus.train = get_string(co.at("train"), "corpus.train");
  c.corpus.valid = get_string(co.at("valid"), "corpus.valid");
  c.corpus.test = get_string(co.at("test"), "corpus.test");

  const auto& e = t.at("encoder");
  c.encoder.d_enc = get_uint<std::uint32_t>(e.at("d_enc"), "encoder.d_enc");
  c.encoder.seed = get_uint<std::uint64_t>(e.at("seed"), "encoder.seed");
  c.encoder.pe_base = get_double(e.at("pe_base"), "encoder.pe_base");

  const auto& r = t.at("retrieval");
  c.retrieval.top_k = get_uint<std::uint32_t>(r.at("top_k"), "retrieval.top_k");
  c.retrieval.delta = get_uint<std::uint32_t>(r.at("delta"), "retrieval.delta");
  c.retrieval.suffix_len = get_uint<std::uint32_t>(r.at("suffix_len"), "retrieval.suffix_len");
  c.retrieval.include_current = get_bool(r.at("include_current"), "retrieval.include_current");

  const auto& m = t.at("model");
  c.model.d_model = get_uint<std::uint32_t>(m.at("d_model"), "model.d_model");
  c.model.n_layers = get_uint<std::uint32_t>(m.at("n_layers"), "model.n_layers");
  c.model.n_heads = get_uint<std::uint32_t>(m.at("n_heads"), "model.n_heads");
  c.model.d_ff = get_uint<std::uint32_t>(m.at("d_ff"), "model.d_ff");
  c.model.d_enc = get_uint<std::uint32_t>(m.at("d_enc"), "model.d_enc");
  c.model.max_seq_len = get_uint<std::uint32_t>(m.at("max_seq_len"), "model.max_seq_len");
  c.model.init_seed = get_uint<std::uint64_t>(m.at("init_seed"), "model.init_seed");

  const auto& tr = t.at("train");
  c.train.batch_size = get_uint<std::uint32_t>(tr.at("batch_size"), "train.batch_size");
  c.train.lr = get_double(tr.at("lr"), "train.lr");
  c.train.beta1 = get_double(tr.at("beta1"), "train.beta1");
  c.train.beta2 = get_double(tr.at("beta2"), "train.beta2");
  c.train.eps = get_double(tr.at("eps"), "train.eps");
  c.train.weight_decay = get_double(tr.at("weight_decay"), "train.weight_decay");
  c.train.warmup_steps = get_uint<std::uint32_t>(tr.at("warmup_steps"), "train.warmup_steps");
  c.train.epochs = get_uint<std::uint32_t>(tr.at("epochs"), "train.epochs");
  c.train.shuffle_seed = get_uint<std::uint64_t>(tr.at("shuffle_seed"), "train.shuffle_seed");
  c.train.grad_clip = get_double(tr.at("grad_clip"), "train.grad_clip");

  const auto& g = t.at("generation");
  c.generation.strategy = parse_strategy(get_string(g.at("strategy"), "generation.strategy"));
  c.generation.sample_top_k = get_uint<std::uint32_t>(g.at("top_k"), "generation.top_k");
  c.generation.temperature = get_double(g.at("temperature"), "generation.temperature");
  c.generation.seed = get_uint<std::uint64_t>(g.at("seed"), "generation.seed");
  c.generation.max_len = get_uint<std::uint32_t>(g.at("max_len"), "generation.max_len");
  c.generation.min_len = get_uint<std::uint32_t>(g.at("min_len"), "generation.min_len");

  c.output_dir = get_string(t.at("output_dir"), "output_dir");
  c.threads = get_uint<unsigned>(t.at("threads"), "threads");
  return c;
}

}  // namespace

nlohmann::json encoder_json(const EncoderConfig& c) {
  return {{"d_enc", c.d_enc}, {"seed", c.seed}, {"pe_base", c.pe_base}};
}

nlohmann::json retrieval_json(const RetrievalConfig& c) {
  return {{"top_k", c.top_k},
          {"delta", c.delta},
          {"suffix_len", c.suffix_len},
          {"include_current", c.include_current}};
}

nlohmann::json model_json(const ModelConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},       {"d_enc", c.d_enc},             {"max_seq_len", c.max_seq_len},
          {"init_seed", c.init_seed}};
}

nlohmann::json train_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"weight_decay", c.weight_decay},
          {"warmup_steps", c.warmup_steps},
          {"epochs", c.epochs},
          {"shuffle_seed", c.shuffle_seed},
          {"grad_clip", c.grad_clip}};
}

nlohmann::json generation_json(const GenerationConfig& c) {
  return {{"strategy", strategy_name(c.strategy)},
          {"top_k", c.sample_top_k},
          {"temperature", c.temperature},
          {"seed", c.seed},
          {"max_len", c.max_len},
          {"min_len", c.min_len}};
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"corpus",
           {{"train", c.corpus.train.string()},
            {"valid", c.corpus.valid.string()},
            {"test", c.corpus.test.string()}}},
          {"encoder", encoder_json(c.encoder)},
          {"retrieval", retrieval_json(c.retrieval)},
          {"model", model_json(c.model)},
          {"train", train_json(c.train)},
          {"generation", generation_json(c.generation)},
          {"output_dir", c.output_dir.string()},
          {"threads", c.threads}};
}

void RunConfig::validate() const {
  encoder.validate();
  retrieval.validate();
  train.validate();
  if (model.d_enc != encoder.d_enc) {
    throw ConfigError("model.d_enc (" + std::to_string(model.d_enc) + ") must equal encoder.d_enc (" +
                      std::to_string(encoder.d_enc) + ")");
  }
  if (generation.max_len > model.max_seq_len) {
    throw ConfigError("generation.max_len must not exceed model.max_seq_len");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config key: " + key);
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override targets a section, not a key: " + key);
  if (node->is_string()) {
    *node = value;
    return;
  }
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) throw ConfigError("cannot parse value for " + key + ": " + value);
  *node = std::move(parsed);
}

RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides) {
  json tree = to_json(RunConfig{});
  if (!file.empty()) {
    if (!std::filesystem::exists(file)) {
      throw ConfigError("config file not found: " + file.string());
    }
    json parsed = json::parse(io::read_file(file), nullptr, false);
    if (parsed.is_discarded()) throw ConfigError("config file is not valid JSON: " + file.string());
    merge_strict(tree, parsed, "");
    const auto base = file.parent_path();
    for (const char* k : {"train", "valid", "test"}) resolve_path(tree["corpus"][k], base);
    if (parsed.contains("output_dir")) resolve_path(tree["output_dir"], base);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  RunConfig cfg = from_tree(tree);
  cfg.validate();
  return cfg;
}

std::string json_digest(const nlohmann::json& j) { return io::hex64(io::fnv1a64(j.dump())); }

std::string config_digest(const RunConfig& cfg) {
  return json_digest({{"encoder", encoder_json(cfg.encoder)},
                      {"retrieval", retrieval_json(cfg.retrieval)},
                      {"model", model_json(cfg.model)},
                      {"train", train_json(cfg.train)}});
}

}  // namespace surealm::cli
