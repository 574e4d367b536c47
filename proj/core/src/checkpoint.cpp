#include "surealm/checkpoint.hpp"

#include "surealm/binary_io.hpp"

namespace surealm {

namespace {
constexpr std::string_view kCheckpointMagic = "SULM";
}

std::string serialize_checkpoint(const ModelParams& params) {
  io::Writer w;
  w.bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto& c = params.config;
  for (std::uint32_t v : {c.d_model, c.n_layers, c.n_heads, c.d_ff, c.d_enc, c.max_seq_len,
                          c.vocab_size}) {
    w.put<std::uint32_t>(v);
  }
  w.put<std::uint64_t>(c.init_seed);
  w.put<std::uint64_t>(params.values.size());
  w.doubles(params.values);
  return w.take();
}

ModelParams deserialize_checkpoint(std::string_view bytes) {
  io::Reader r(bytes);
  r.section("magic");
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("magic", "bad checkpoint magic");
  }
  r.section("version");
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw FormatError("version", "unsupported checkpoint version " + std::to_string(v));
  }
  r.section("model_config");
  ModelConfig c;
  c.d_model = r.get<std::uint32_t>();
  c.n_layers = r.get<std::uint32_t>();
  c.n_heads = r.get<std::uint32_t>();
  c.d_ff = r.get<std::uint32_t>();
  c.d_enc = r.get<std::uint32_t>();
  c.max_seq_len = r.get<std::uint32_t>();
  c.vocab_size = r.get<std::uint32_t>();
  c.init_seed = r.get<std::uint64_t>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError("model_config", e.what());
  }
  r.section("parameter_count");
  const auto count = r.get<std::uint64_t>();
  ModelParams p(c);
  if (count != p.values.size()) {
    throw FormatError("parameter_count", "parameter count " + std::to_string(count) +
                                             " does not match config (" +
                                             std::to_string(p.values.size()) + ")");
  }
  r.section("parameters");
  r.doubles(p.values);
  r.expect_end();
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace surealm
