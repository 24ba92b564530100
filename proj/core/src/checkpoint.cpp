#include "radgen/checkpoint.hpp"

#include <json.hpp>

#include "radgen/error.hpp"
#include "radgen/io.hpp"

namespace radgen {

using nlohmann::json;

std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out = "RGCK";
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + t.name);
    if (t.shape.size() > 0xFF) throw FormatError("tensor rank too large: " + t.name);
    if (shape_size(t.shape) != t.values.size()) {
      throw ShapeError("tensor '" + t.name + "': " + std::to_string(t.values.size()) +
                       " values for shape " + shape_string(t.shape));
    }
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values) put_f32(out, static_cast<float>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.take(4) != "RGCK") throw FormatError("not a checkpoint (bad magic)");
  const auto version = in.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = in.u16();
    t.name = std::string(in.take(len));
    const auto rank = in.u8();
    for (std::uint8_t r = 0; r < rank; ++r) t.shape.push_back(in.u32());
    const std::size_t n = shape_size(t.shape);
    if (n * 4 > in.remaining()) throw FormatError("checkpoint truncated in tensor '" + t.name + "'");
    t.values.resize(n);
    for (auto& v : t.values) v = in.f32();
    out.push_back(std::move(t));
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after last tensor");
  return out;
}

void assign_parameters(ParameterSet& params, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params.entries().size()) {
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, model expects " + std::to_string(params.entries().size()));
  }
  for (const auto& t : tensors) {
    if (!params.contains(t.name)) throw FormatError("unexpected tensor '" + t.name + "'");
    Tensor p = params.at(t.name);
    if (p.shape() != t.shape) {
      throw ShapeError("tensor '" + t.name + "': checkpoint shape " + shape_string(t.shape) +
                       ", model shape " + shape_string(p.shape()));
    }
    auto dst = p.mutable_values();
    std::copy(t.values.begin(), t.values.end(), dst.begin());
  }
}

std::filesystem::path checkpoint_meta_path(const std::filesystem::path& path) {
  return path.string() + ".json";
}

void save_checkpoint(const std::filesystem::path& path, const ReportModel& model,
                     const Vocab& vocab, const std::vector<std::string>& tags) {
  std::vector<NamedTensor> tensors;
  for (const auto& [name, t] : model.parameters().entries()) {
    auto v = t.values();
    tensors.push_back({name, t.shape(), {v.begin(), v.end()}});
  }
  json meta;
  meta["format"] = "rgck/1";
  meta["model"] = json::parse(model_config_to_json(model.config()));
  meta["vocab"] = vocab.serialize();
  meta["tags"] = tags;
  atomic_write(path, encode_tensors(tensors));
  atomic_write(checkpoint_meta_path(path), meta.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("checkpoint '" + path.string() + "' does not exist");
  }
  const auto meta_path = checkpoint_meta_path(path);
  if (!std::filesystem::exists(meta_path)) {
    throw std::runtime_error("checkpoint metadata '" + meta_path.string() + "' does not exist");
  }
  json meta;
  try {
    meta = json::parse(read_file(meta_path));
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  if (!meta.contains("model") || !meta.contains("vocab")) {
    throw FormatError(meta_path.string() + ": missing 'model' or 'vocab'");
  }
  ModelConfig config = model_config_from_json(meta["model"].dump());
  std::vector<std::string> tags;
  if (meta.contains("tags")) tags = meta["tags"].get<std::vector<std::string>>();
  Checkpoint ck{ReportModel(config, 0), Vocab::deserialize(meta["vocab"].get<std::string>()),
                std::move(tags)};
  if (ck.vocab.size() != config.vocab_size) {
    throw FormatError("checkpoint vocab has " + std::to_string(ck.vocab.size()) +
                      " entries, config says " + std::to_string(config.vocab_size));
  }
  assign_parameters(ck.model.parameters(), decode_tensors(read_file(path)));
  return ck;
}

}  // namespace radgen
