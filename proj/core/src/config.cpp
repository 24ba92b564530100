#include "radgen/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "radgen/error.hpp"

namespace radgen {

using nlohmann::json;

std::string_view to_string(DecoderKind kind) {
  return kind == DecoderKind::transformer ? "transformer" : "lstm";
}

std::string_view to_string(EncoderKind kind) {
  return kind == EncoderKind::precomputed ? "precomputed" : "tiny-conv";
}

DecoderKind parse_decoder_kind(std::string_view text) {
  if (text == "transformer") return DecoderKind::transformer;
  if (text == "lstm") return DecoderKind::lstm;
  throw ConfigError("unknown decoder '" + std::string(text) + "' (expected transformer|lstm)");
}

EncoderKind parse_encoder_kind(std::string_view text) {
  if (text == "precomputed") return EncoderKind::precomputed;
  if (text == "tiny-conv" || text == "tiny_conv") return EncoderKind::tiny_conv;
  throw ConfigError("unknown encoder '" + std::string(text) + "' (expected precomputed|tiny-conv)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (d_model == 0 || d_model % 2 != 0) fail("d_model must be positive and even, got " + std::to_string(d_model));
  if (n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
         std::to_string(n_heads) + ")");
  }
  if (n_layers == 0) fail("n_layers must be >= 1");
  if (d_ff == 0) fail("d_ff must be >= 1");
  if (lstm_hidden == 0 || lstm_embed == 0) fail("lstm sizes must be >= 1");
  if (vocab_size < 5) fail("vocab_size must be >= 5 (4 reserved ids + 1 word)");
  if (max_len < 2) fail("max_len must be >= 2");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must be in [0, 1)");
  if (layer_norm_eps <= 0.0) fail("layer_norm_eps must be positive");
  if (memory_slots == 0 || feature_dim == 0) fail("memory_slots and feature_dim must be >= 1");
  if (encoder == EncoderKind::tiny_conv) {
    if (image_height % 4 != 0 || image_width % 4 != 0 || image_height == 0 || image_width == 0) {
      fail("tiny-conv encoder needs image sides divisible by 4");
    }
    if ((image_height / 4) * (image_width / 4) != memory_slots) {
      fail("tiny-conv encoder produces " + std::to_string((image_height / 4) * (image_width / 4)) +
           " positions but memory_slots is " + std::to_string(memory_slots));
    }
    if (conv_channels1 == 0 || conv_channels2 == 0) fail("conv channel counts must be >= 1");
  }
  if (n_observations == 0) fail("n_observations must be >= 1");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (max_epochs == 0) fail("max_epochs must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (early_stop_patience == 0) fail("early_stop_patience must be >= 1");
  if (mlc_loss_weight < 0.0) fail("mlc_loss_weight must be >= 0");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("setting '" + std::string(key) + "': expected a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    std::string s(v);
    double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("setting '" + std::string(key) + "': expected a number, got '" +
                      std::string(v) + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("setting '" + std::string(key) + "': expected a boolean, got '" +
                    std::string(v) + "'");
}

bool apply_model(ModelConfig& m, std::string_view k, std::string_view v) {
  if (k == "decoder") m.decoder = parse_decoder_kind(v);
  else if (k == "encoder") m.encoder = parse_encoder_kind(v);
  else if (k == "d_model") m.d_model = parse_size(k, v);
  else if (k == "n_heads") m.n_heads = parse_size(k, v);
  else if (k == "n_layers") m.n_layers = parse_size(k, v);
  else if (k == "d_ff") m.d_ff = parse_size(k, v);
  else if (k == "lstm_hidden") m.lstm_hidden = parse_size(k, v);
  else if (k == "lstm_embed") m.lstm_embed = parse_size(k, v);
  else if (k == "vocab_size") m.vocab_size = parse_size(k, v);
  else if (k == "max_len") m.max_len = parse_size(k, v);
  else if (k == "dropout_rate") m.dropout_rate = parse_double(k, v);
  else if (k == "layer_norm_eps") m.layer_norm_eps = parse_double(k, v);
  else if (k == "memory_slots") m.memory_slots = parse_size(k, v);
  else if (k == "feature_dim") m.feature_dim = parse_size(k, v);
  else if (k == "image_height") m.image_height = parse_size(k, v);
  else if (k == "image_width") m.image_width = parse_size(k, v);
  else if (k == "conv_channels1") m.conv_channels1 = parse_size(k, v);
  else if (k == "conv_channels2") m.conv_channels2 = parse_size(k, v);
  else if (k == "n_observations") m.n_observations = parse_size(k, v);
  else if (k == "n_tags") m.n_tags = parse_size(k, v);
  else return false;
  return true;
}

bool apply_train(TrainConfig& t, std::string_view k, std::string_view v) {
  if (k == "lr") t.lr = parse_double(k, v);
  else if (k == "beta1") t.beta1 = parse_double(k, v);
  else if (k == "beta2") t.beta2 = parse_double(k, v);
  else if (k == "adam_eps") t.adam_eps = parse_double(k, v);
  else if (k == "batch_size") t.batch_size = parse_size(k, v);
  else if (k == "max_epochs") t.max_epochs = parse_size(k, v);
  else if (k == "dropout") t.dropout = parse_double(k, v);
  else if (k == "early_stop_patience") t.early_stop_patience = parse_size(k, v);
  else if (k == "seed") t.seed = parse_size(k, v);
  else if (k == "fine_tune_encoder") t.fine_tune_encoder = parse_bool(k, v);
  else if (k == "mlc_loss_weight") t.mlc_loss_weight = parse_double(k, v);
  else return false;
  return true;
}

json model_json(const ModelConfig& m) {
  return json{{"decoder", to_string(m.decoder)},
              {"encoder", to_string(m.encoder)},
              {"d_model", m.d_model},
              {"n_heads", m.n_heads},
              {"n_layers", m.n_layers},
              {"d_ff", m.d_ff},
              {"lstm_hidden", m.lstm_hidden},
              {"lstm_embed", m.lstm_embed},
              {"vocab_size", m.vocab_size},
              {"max_len", m.max_len},
              {"dropout_rate", m.dropout_rate},
              {"layer_norm_eps", m.layer_norm_eps},
              {"memory_slots", m.memory_slots},
              {"feature_dim", m.feature_dim},
              {"image_height", m.image_height},
              {"image_width", m.image_width},
              {"conv_channels1", m.conv_channels1},
              {"conv_channels2", m.conv_channels2},
              {"n_observations", m.n_observations},
              {"n_tags", m.n_tags}};
}

json train_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"dropout", t.dropout},
              {"early_stop_patience", t.early_stop_patience},
              {"seed", t.seed},
              {"fine_tune_encoder", t.fine_tune_encoder},
              {"mlc_loss_weight", t.mlc_loss_weight}};
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned() || v.is_number_integer()) return v.dump();
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  throw ConfigError("config values must be scalars, got " + v.dump());
}

}  // namespace

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  std::string k = trim(key);
  std::string v = trim(value);
  if (k.starts_with("model.")) {
    if (apply_model(config.model, std::string_view(k).substr(6), v)) return;
  } else if (k.starts_with("train.")) {
    if (apply_train(config.train, std::string_view(k).substr(6), v)) return;
  } else if (apply_model(config.model, k, v) || apply_train(config.train, k, v)) {
    return;
  }
  throw ConfigError("unknown config key '" + k + "'");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  const std::string body = trim(text);
  if (body.starts_with("{")) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& e) {
      throw FormatError(std::string("config JSON: ") + e.what());
    }
    for (auto& [k, v] : j.items()) {
      if ((k == "model" || k == "train") && v.is_object()) {
        for (auto& [k2, v2] : v.items()) apply_setting(config, k + "." + k2, scalar_text(v2));
      } else {
        apply_setting(config, k, scalar_text(v));
      }
    }
    return config;
  }
  std::istringstream in{std::string(text)};
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("expected key=value", lineno);
    try {
      apply_setting(config, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw FormatError(e.what(), lineno);
    }
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string model_config_to_json(const ModelConfig& config) { return model_json(config).dump(); }

ModelConfig model_config_from_json(std::string_view text) {
  RunConfig rc;
  json j = json::parse(text);
  for (auto& [k, v] : j.items()) apply_setting(rc, "model." + k, scalar_text(v));
  return rc.model;
}

std::string run_config_to_json(const RunConfig& config) {
  return json{{"model", model_json(config.model)}, {"train", train_json(config.train)}}.dump();
}

}  // namespace radgen
