#include "commands.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <sstream>

#include <fmt/format.h>

#include "surealm/binary_io.hpp"
#include "surealm/checkpoint.hpp"
#include "surealm/corpus.hpp"

namespace surealm::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  json j = json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded()) throw FormatError("json", "malformed JSON file: " + path.string());
  return j;
}

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is not configured");
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path.string());
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw ConfigError("missing " + path.string() + "; run `surealm " + producer + "` first");
  }
}

std::string file_digest(const fs::path& path) { return io::hex64(io::fnv1a64(io::read_file(path))); }

// Digest of the settings that fix what a model computes.
std::string model_digest(const RunConfig& cfg) {
  return json_digest({{"encoder", encoder_json(cfg.encoder)},
                      {"retrieval", retrieval_json(cfg.retrieval)},
                      {"model", model_json(cfg.model)}});
}

// Digest of the retrieval settings baked into a store.
std::string store_config_digest(const RunConfig& cfg) {
  return json_digest({{"encoder", encoder_json(cfg.encoder)},
                      {"retrieval", retrieval_json(cfg.retrieval)}});
}

// Training vocabulary, built and recorded on first use.
Vocabulary ensure_vocab(const RunConfig& cfg, const Layout& lay) {
  require_file(cfg.corpus.train, "corpus.train");
  const std::string corpus_digest = file_digest(cfg.corpus.train);
  if (fs::exists(lay.vocab()) && fs::exists(lay.vocab_meta())) {
    const json meta = read_json(lay.vocab_meta());
    if (meta.at("train_corpus_digest") != corpus_digest) {
      throw ConfigError("corpus.train changed since " + lay.vocab().string() +
                        " was written; rerun `surealm index`");
    }
    return Vocabulary::load(lay.vocab());
  }
  fs::create_directories(lay.root);
  const auto corpus = load_corpus(cfg.corpus.train, VocabMode::kBuild);
  corpus.vocab.save(lay.vocab());
  write_json(lay.vocab_meta(), {{"train_corpus_digest", corpus_digest},
                                {"vocab_digest", file_digest(lay.vocab())},
                                {"size", corpus.vocab.size()}});
  return corpus.vocab;
}

std::string vocab_digest(const Layout& lay) { return file_digest(lay.vocab()); }

fs::path split_path(const RunConfig& cfg, const std::string& split) {
  if (split == "train") return cfg.corpus.train;
  if (split == "valid") return cfg.corpus.valid;
  if (split == "test") return cfg.corpus.test;
  throw ConfigError("split must be train, valid or test, got '" + split + "'");
}

std::vector<Sentence> load_split(const RunConfig& cfg, const std::string& split,
                                 const Vocabulary& vocab) {
  const fs::path p = split_path(cfg, split);
  require_file(p, "corpus." + split);
  return load_corpus(p, VocabMode::kApply, &vocab).sentences;
}

// Loads the store and checks it was indexed with the current settings.
EmbeddingStore load_checked_store(const RunConfig& cfg, const Layout& lay) {
  require_artifact(lay.store(), "index");
  require_artifact(lay.store_meta(), "index");
  const json meta = read_json(lay.store_meta());
  if (meta.at("store_config_digest") != store_config_digest(cfg)) {
    throw ConfigError(fmt::format(
        "store {} was indexed with encoder/retrieval settings {} but the current config has {}; "
        "rerun `surealm index` (indexed settings: {})",
        lay.store().string(), meta.at("store_config_digest").get<std::string>(),
        store_config_digest(cfg), meta.at("config").dump()));
  }
  if (meta.at("vocab_digest") != vocab_digest(lay)) {
    throw ConfigError("store was built against a different vocabulary; rerun `surealm index`");
  }
  return load_store(lay.store());
}

Exclusion exclusion_for(const std::string& split) {
  return split == "train" ? Exclusion::kSameSentence : Exclusion::kNone;
}

json table_meta(const RunConfig& cfg, const std::string& split, const std::string& store_dig,
                const fs::path& corpus) {
  return {{"split", split},
          {"store_digest", store_dig},
          {"corpus_digest", file_digest(corpus)},
          {"retrieval", retrieval_json(cfg.retrieval)},
          {"exclusion", split == "train" ? "same_sentence" : "none"}};
}

// Precomputed table for `split` if it matches the store and config;
// otherwise nullopt (or an error when `required`).
std::optional<RetrievalTable> load_table_if_current(const RunConfig& cfg, const Layout& lay,
                                                    const std::string& split,
                                                    const std::string& store_dig, bool required) {
  const auto tp = lay.table(split), mp = lay.table_meta(split);
  if (!fs::exists(tp) || !fs::exists(mp)) {
    if (required) require_artifact(tp, "precompute");
    return std::nullopt;
  }
  const json have = read_json(mp);
  const json want = table_meta(cfg, split, store_dig, split_path(cfg, split));
  if (have != want) {
    if (!required) return std::nullopt;
    throw ConfigError(fmt::format(
        "retrieval table {} does not match the current store and retrieval settings "
        "(table: {}, expected: {}); rerun `surealm precompute`",
        tp.string(), have.dump(), want.dump()));
  }
  return load_table(tp);
}

std::string default_run(const std::string& run, bool baseline) {
  if (!run.empty()) return run;
  return baseline ? "baseline" : "surealm";
}

std::string metrics_line(const EpochMetrics& m) {
  return json{{"epoch", m.epoch},
              {"split", m.split},
              {"loss", m.loss},
              {"ppl", m.ppl},
              {"tokens", m.tokens},
              {"wall_ms", m.wall_ms}}
      .dump();
}

struct LoadedModel {
  ModelParams params;
  json meta;
  bool baseline = false;
};

LoadedModel load_checked_model(const RunConfig& cfg, const Layout& lay, const std::string& run,
                               const fs::path& checkpoint) {
  const fs::path ck = checkpoint.empty() ? lay.checkpoint(run) : checkpoint;
  fs::path meta_path = ck;
  meta_path.replace_extension(".json");
  require_artifact(ck, "train");
  require_artifact(meta_path, "train");
  LoadedModel m;
  m.meta = read_json(meta_path);
  if (m.meta.at("model_digest") != model_digest(cfg)) {
    throw ConfigError(fmt::format(
        "checkpoint {} was trained with different encoder/retrieval/model settings "
        "(checkpoint digest {}, current config {}); pass the config used for training",
        ck.string(), m.meta.at("model_digest").get<std::string>(), model_digest(cfg)));
  }
  if (m.meta.at("vocab_digest") != vocab_digest(lay)) {
    throw ConfigError("checkpoint " + ck.string() + " was trained with a different vocabulary");
  }
  m.baseline = m.meta.at("baseline").get<bool>();
  m.params = load_checkpoint(ck);
  return m;
}

// Loads the store a checkpoint was trained against and checks its digest.
EmbeddingStore store_for(const RunConfig& cfg, const Layout& lay, const LoadedModel& m) {
  auto store = load_checked_store(cfg, lay);
  const std::string have = store_digest(store);
  const std::string want = m.meta.at("store_digest").get<std::string>();
  if (have != want) {
    throw ConfigError(fmt::format("store digest mismatch: checkpoint was trained against {} "
                                  "but {} has digest {}; refusing to mix artifacts",
                                  want, lay.store().string(), have));
  }
  return store;
}

std::vector<TokenId> tokenize_prompt(const std::string& text, const Vocabulary& vocab,
                                     std::ostream& warn) {
  std::vector<TokenId> ids;
  for (const auto& w : tokenize_line(text)) {
    const TokenId id = vocab.lookup(w);
    if (id == kUnk) warn << "warning: '" << w << "' is not in the vocabulary\n";
    ids.push_back(id);
  }
  return ids;
}

// Text view of a store entry: the prefix, current word and stored suffix of
// its training sentence.
struct EntryText {
  std::string prefix, word, suffix;
};

EntryText entry_text(const EmbeddingStore& store, EntryId id, const std::vector<Sentence>& train,
                     const Vocabulary& vocab) {
  const auto& e = store.entry(id);
  if (e.sentence_id >= train.size()) throw ConfigError("store does not match corpus.train");
  const auto& toks = train[e.sentence_id].tokens;
  const auto& rc = store.retrieval_config();
  const std::size_t i = e.split_pos;
  const std::size_t s0 = rc.include_current ? i - 1 : i;
  const std::size_t s1 = std::min(toks.size(), s0 + rc.suffix_len);
  EntryText t;
  t.prefix = vocab.detokenize(std::span(toks).first(i - 1));
  t.word = vocab.token(e.current_word);
  t.suffix = vocab.detokenize(std::span(toks).subspan(s0, s1 - s0));
  return t;
}

}  // namespace

void cmd_index(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.corpus.train, "corpus.train");
  const Layout lay{cfg.output_dir};
  const auto t0 = Clock::now();
  fs::create_directories(lay.root);
  const auto corpus = load_corpus(cfg.corpus.train, VocabMode::kBuild);
  corpus.vocab.save(lay.vocab());
  const std::string corpus_dig = file_digest(cfg.corpus.train);
  write_json(lay.vocab_meta(), {{"train_corpus_digest", corpus_dig},
                                {"vocab_digest", file_digest(lay.vocab())},
                                {"size", corpus.vocab.size()}});
  const auto store = build_store(corpus.sentences, cfg.encoder, cfg.retrieval);
  save_store(store, lay.store());
  const double build_ms = ms_since(t0);
  const std::string digest = store_digest(store);
  write_json(lay.store_meta(),
             {{"store_digest", digest},
              {"store_config_digest", store_config_digest(cfg)},
              {"config", {{"encoder", encoder_json(cfg.encoder)},
                          {"retrieval", retrieval_json(cfg.retrieval)}}},
              {"vocab_digest", file_digest(lay.vocab())},
              {"train_corpus_digest", corpus_dig},
              {"sentences", corpus.sentences.size()},
              {"entries", store.size()},
              {"build_ms", build_ms}});
  out << "sentences: " << corpus.sentences.size() << "\n"
      << "duplicates_removed: " << corpus.duplicates_removed << "\n"
      << "vocab_size: " << corpus.vocab.size() << "\n"
      << "entries: " << store.size() << "\n"
      << fmt::format("build_ms: {:.1f}\n", build_ms) << "store: " << lay.store().string() << "\n"
      << "store_digest: " << digest << "\n";
}

void cmd_precompute(const RunConfig& cfg, std::ostream& out) {
  const Layout lay{cfg.output_dir};
  require_artifact(lay.vocab(), "index");
  const Vocabulary vocab = ensure_vocab(cfg, lay);
  const auto store = load_checked_store(cfg, lay);
  const std::string digest = store_digest(store);
  for (const std::string split : {"train", "valid", "test"}) {
    const fs::path p = split_path(cfg, split);
    if (p.empty()) continue;
    require_file(p, "corpus." + split);
    const auto t0 = Clock::now();
    const auto sentences = load_corpus(p, VocabMode::kApply, &vocab).sentences;
    const auto table =
        precompute_retrievals(store, sentences, cfg.retrieval, exclusion_for(split), cfg.threads);
    save_table(table, lay.table(split));
    write_json(lay.table_meta(split), table_meta(cfg, split, digest, p));
    std::size_t blocks = 0;
    for (const auto& r : table.rows) blocks += r.blocks.size();
    out << fmt::format("{}: sentences={} blocks={} top_k={} delta={} ms={:.1f} -> {}\n", split,
                       sentences.size(), blocks, cfg.retrieval.top_k, cfg.retrieval.delta,
                       ms_since(t0), lay.table(split).string());
  }
}

void cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& out) {
  const Layout lay{cfg.output_dir};
  const std::string run = default_run(opts.run, opts.baseline);
  const Vocabulary vocab = ensure_vocab(cfg, lay);
  const auto train_set = load_corpus(cfg.corpus.train, VocabMode::kApply, &vocab).sentences;
  std::vector<Sentence> valid_set;
  if (!cfg.corpus.valid.empty()) valid_set = load_split(cfg, "valid", vocab);

  ModelConfig mc = cfg.model;
  mc.vocab_size = static_cast<std::uint32_t>(vocab.size());

  std::optional<EmbeddingStore> store;
  std::optional<RetrievalTable> train_table, valid_table;
  std::string store_dig;
  if (!opts.baseline) {
    store = load_checked_store(cfg, lay);
    store_dig = store_digest(*store);
    train_table = load_table_if_current(cfg, lay, "train", store_dig, true);
    if (!valid_set.empty()) valid_table = load_table_if_current(cfg, lay, "valid", store_dig, true);
  }

  TrainInputs in;
  in.model = mc;
  in.train = cfg.train;
  in.retrieval = cfg.retrieval;
  in.store = store ? &*store : nullptr;
  in.train_data = {train_set, train_table ? &*train_table : nullptr};
  in.valid_data = {valid_set, valid_table ? &*valid_table : nullptr};
  in.eval_threads = cfg.threads;

  const json sidecar_base = {
      {"baseline", opts.baseline},
      {"run", run},
      {"config_digest", config_digest(cfg)},
      {"model_digest", model_digest(cfg)},
      {"store_digest", opts.baseline ? json(nullptr) : json(store_dig)},
      {"vocab_digest", vocab_digest(lay)},
      {"config", to_json(cfg)},
  };

  fs::create_directories(lay.run_dir(run));
  std::optional<TrainState> resume;
  if (opts.resume) {
    require_artifact(lay.train_state(run), "train");
    const json meta = read_json(lay.train_state_meta(run));
    if (meta.at("config_digest") != sidecar_base.at("config_digest") ||
        meta.at("store_digest") != sidecar_base.at("store_digest")) {
      throw ConfigError("cannot resume " + lay.train_state(run).string() +
                        ": it was produced with a different config or store");
    }
    resume = deserialize_train_state(io::read_file(lay.train_state(run)));
    out << "resuming " << run << " after epoch " << resume->epochs_done << "\n";
  }

  std::uint32_t saved_best_epoch = resume ? resume->best_epoch : 0;
  auto on_epoch = [&](const TrainState& st, std::span<const EpochMetrics> ms) {
    for (const auto& m : ms) {
      out << fmt::format("epoch {:>3} {:<5} loss {:.5f} ppl {:.4f} tokens {} ({:.0f} ms)\n",
                         m.epoch, m.split, m.loss, m.ppl, m.tokens, m.wall_ms);
    }
    out.flush();
    std::string lines;
    for (const auto& m : st.history) lines += metrics_line(m) + "\n";
    io::write_file(lay.metrics(run), lines);
    if (st.best_epoch != saved_best_epoch || !fs::exists(lay.checkpoint(run))) {
      save_checkpoint(st.best, lay.checkpoint(run));
      saved_best_epoch = st.best_epoch;
    }
    json side = sidecar_base;
    side["best_epoch"] = st.best_epoch;
    side["best_ppl"] = st.best_ppl;
    side["selection_split"] = valid_set.empty() ? "train" : "valid";
    side["epochs_done"] = st.epochs_done;
    write_json(lay.checkpoint_meta(run), side);
    io::write_file(lay.train_state(run), serialize_train_state(st));
    write_json(lay.train_state_meta(run), {{"config_digest", sidecar_base.at("config_digest")},
                                           {"store_digest", sidecar_base.at("store_digest")},
                                           {"epochs_done", st.epochs_done}});
    return !(opts.stop_after_epoch && st.epochs_done >= *opts.stop_after_epoch);
  };

  const auto st = train(in, on_epoch, resume ? &*resume : nullptr);
  out << fmt::format("best epoch {} ppl {:.4f}\ncheckpoint: {}\nmetrics: {}\n", st.best_epoch,
                     st.best_ppl, lay.checkpoint(run).string(), lay.metrics(run).string());
}

void cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& out) {
  const Layout lay{cfg.output_dir};
  require_artifact(lay.vocab(), "index");
  const Vocabulary vocab = ensure_vocab(cfg, lay);
  const std::string run = default_run(opts.run, false);
  const auto model = load_checked_model(cfg, lay, run, opts.checkpoint);
  const auto data = load_split(cfg, opts.split, vocab);

  EvalReport rep;
  if (model.baseline) {
    rep = perplexity(model.params, nullptr, RetrievalData{data, nullptr}, cfg.retrieval,
                     cfg.train.batch_size, cfg.threads);
  } else {
    const auto store = store_for(cfg, lay, model);
    auto table = load_table_if_current(cfg, lay, opts.split, store_digest(store), false);
    if (!table) {
      table = precompute_retrievals(store, data, cfg.retrieval, exclusion_for(opts.split),
                                    cfg.threads);
    }
    rep = perplexity(model.params, &store, RetrievalData{data, &*table}, cfg.retrieval,
                     cfg.train.batch_size, cfg.threads);
  }
  rep.split = opts.split;
  rep.config_digest = model.meta.at("config_digest").get<std::string>();
  const json report = {{"split", rep.split},
                       {"ppl", rep.ppl},
                       {"nll_sum", rep.nll_sum},
                       {"token_count", rep.token_count},
                       {"config_digest", rep.config_digest},
                       {"tokens_include_eos", true},
                       {"baseline", model.baseline}};
  const fs::path dest = opts.checkpoint.empty()
                            ? lay.eval_report(run, opts.split)
                            : fs::path(opts.checkpoint).replace_filename("eval_" + opts.split + ".json");
  write_json(dest, report);
  out << report.dump(2) << "\n";
}

void cmd_generate(const RunConfig& cfg, const GenerateOptions& opts, std::ostream& out) {
  const Layout lay{cfg.output_dir};
  require_artifact(lay.vocab(), "index");
  const Vocabulary vocab = ensure_vocab(cfg, lay);
  const std::string run = default_run(opts.run, false);
  const auto model = load_checked_model(cfg, lay, run, opts.checkpoint);
  std::optional<EmbeddingStore> store;
  std::vector<Sentence> train_set;
  if (!model.baseline) {
    store = store_for(cfg, lay, model);
    if (!opts.jsonl.empty()) train_set = load_split(cfg, "train", vocab);
  }
  std::ostringstream warnings;
  const auto prompt = tokenize_prompt(opts.prompt, vocab, warnings);
  if (!warnings.str().empty()) std::cerr << warnings.str();

  std::ofstream jl;
  if (!opts.jsonl.empty()) {
    if (opts.jsonl.has_parent_path()) fs::create_directories(opts.jsonl.parent_path());
    jl.open(opts.jsonl);
    if (!jl) throw Error("cannot write " + opts.jsonl.string());
  }
  for (std::size_t n = 0; n < opts.num_samples; ++n) {
    GenerationConfig gen = cfg.generation;
    gen.seed = cfg.generation.seed + n;
    const auto res = generate(model.params, store ? &*store : nullptr, prompt, gen, cfg.retrieval);
    const std::string text = vocab.detokenize(res.words);
    out << text << "\n";
    if (!jl.is_open()) continue;
    json steps = json::array();
    for (const auto& step : res.retrievals) {
      json hits = json::array();
      for (EntryId id : step.entry_ids) {
        const auto t = entry_text(*store, id, train_set, vocab);
        hits.push_back({{"entry_id", id},
                        {"sentence_id", store->entry(id).sentence_id},
                        {"retrieved_prefix", t.prefix},
                        {"retrieved_word", t.word},
                        {"retrieved_suffix", t.suffix}});
      }
      steps.push_back(
          {{"prefix_len", step.prefix_len},
           {"query", vocab.detokenize(std::span(res.words).first(step.prefix_len))},
           {"hits", hits}});
    }
    jl << json{{"sample", n},
               {"prompt", opts.prompt},
               {"text", text},
               {"tokens", res.words},
               {"ended_with_eos", res.ended_with_eos},
               {"hit_max_len", res.hit_max_len},
               {"retrieval_calls", res.retrieval_calls},
               {"steps", steps}}
              .dump()
       << "\n";
  }
}

void cmd_inspect(const RunConfig& cfg, const InspectOptions& opts, std::ostream& out) {
  const Layout lay{cfg.output_dir};
  require_artifact(lay.vocab(), "index");
  const Vocabulary vocab = ensure_vocab(cfg, lay);
  const auto store = load_checked_store(cfg, lay);
  const auto train_set = load_split(cfg, "train", vocab);
  std::ostringstream warnings;
  const auto prefix = tokenize_prompt(opts.prefix, vocab, warnings);
  if (!warnings.str().empty()) std::cerr << warnings.str();
  const std::size_t k = opts.k > 0 ? opts.k : cfg.retrieval.top_k;
  const auto query = encode_span(store.encoder_config(), prefix, 1);
  const auto hits = search(store, query, k);

  if (opts.json) {
    json rows = json::array();
    for (std::size_t i = 0; i < hits.size(); ++i) {
      const auto t = entry_text(store, hits[i].entry_id, train_set, vocab);
      rows.push_back({{"rank", i + 1},
                      {"entry_id", hits[i].entry_id},
                      {"score", hits[i].score},
                      {"retrieved_prefix", t.prefix},
                      {"retrieved_word", t.word},
                      {"retrieved_suffix", t.suffix}});
    }
    out << json{{"query", vocab.detokenize(prefix)}, {"hits", rows}}.dump(2) << "\n";
    return;
  }
  out << "Query: " << vocab.detokenize(prefix) << "\n";
  out << fmt::format("{:>4}  {:>8}  {:<32}  {:<14}  {}\n", "rank", "score", "retrieved prefix",
                     "retrieved word", "retrieved suffix");
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto t = entry_text(store, hits[i].entry_id, train_set, vocab);
    out << fmt::format("{:>4}  {:>8.5f}  {:<32}  {:<14}  {}\n", i + 1, hits[i].score, t.prefix,
                       t.word, t.suffix);
  }
}

}  // namespace surealm::cli
