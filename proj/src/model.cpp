#include "scattnet/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "scattnet/errors.hpp"
#include "scattnet/init.hpp"

namespace scattnet {

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::None: return "none";
    case AttentionMode::ChannelOnly: return "channel";
    case AttentionMode::SpatialOnly: return "spatial";
    case AttentionMode::Cascade: return "cascade";
  }
  return "?";
}

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "none") return AttentionMode::None;
  if (s == "channel") return AttentionMode::ChannelOnly;
  if (s == "spatial") return AttentionMode::SpatialOnly;
  if (s == "cascade") return AttentionMode::Cascade;
  throw ContractError("unknown attention mode '" + s +
                      "' (expected none|channel|spatial|cascade)");
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ContractError("in_channels must be >= 1");
  if (num_classes < 2) throw ContractError("num_classes must be >= 2");
  if (encoder_widths.empty()) throw ContractError("encoder_widths must be nonempty");
  for (int w : encoder_widths) {
    if (w < 1) throw ContractError("encoder widths must be positive");
  }
  if (attention != AttentionMode::None && attention_channels() % 8 != 0) {
    throw ContractError(
        "the attention feature width (first encoder width, " +
        std::to_string(attention_channels()) +
        ") must be divisible by 8 when attention is enabled");
  }
}

std::string ModelConfig::canonical_text() const {
  std::ostringstream os;
  os << "attention=" << to_string(attention) << '\n';
  os << "encoder_widths=";
  for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
    if (i) os << ',';
    os << encoder_widths[i];
  }
  os << '\n';
  os << "in_channels=" << in_channels << '\n';
  os << "num_classes=" << num_classes << '\n';
  os << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_canonical_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("malformed config line: " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key :
       {"attention", "encoder_widths", "in_channels", "num_classes", "seed"}) {
    if (!kv.count(key)) throw DataError(std::string("config missing key ") + key);
  }
  ModelConfig c;
  c.attention = attention_mode_from_string(kv["attention"]);
  c.encoder_widths.clear();
  std::istringstream ws(kv["encoder_widths"]);
  std::string tok;
  while (std::getline(ws, tok, ',')) c.encoder_widths.push_back(std::stoi(tok));
  c.in_channels = std::stoi(kv["in_channels"]);
  c.num_classes = std::stoi(kv["num_classes"]);
  c.seed = std::stoull(kv["seed"]);
  c.validate();
  return c;
}

namespace {

Tensor conv_weight(int cout, int cin, int k, std::mt19937_64& rng) {
  Tensor w({cout, cin, k, k});
  fill_kaiming(w, cin * k * k, rng);
  return w;
}

}  // namespace

Model Model::build(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  std::mt19937_64 rng(config.seed);
  const auto& widths = config.encoder_widths;
  const int stages = static_cast<int>(widths.size());

  int prev = config.in_channels;
  for (int i = 0; i < stages; ++i) {
    m.params_.emplace_back("enc" + std::to_string(i) + ".w",
                           conv_weight(widths[i], prev, 3, rng));
    m.params_.emplace_back("enc" + std::to_string(i) + ".b",
                           Tensor({widths[i]}));
    prev = widths[i];
  }
  for (int i = 0; i < stages; ++i) {
    const int out = i + 1 < stages ? widths[stages - 2 - i] : widths[0];
    m.params_.emplace_back("dec" + std::to_string(i) + ".w",
                           conv_weight(out, prev, 3, rng));
    m.params_.emplace_back("dec" + std::to_string(i) + ".b", Tensor({out}));
    prev = out;
  }
  m.params_.emplace_back("head.w",
                         conv_weight(config.num_classes, widths[0], 1, rng));
  m.params_.emplace_back("head.b", Tensor({config.num_classes}));

  // Attention parameters last: the backbone draw order is identical
  // across ablation modes for the same seed.
  const int c = config.attention_channels();
  if (config.attention == AttentionMode::ChannelOnly ||
      config.attention == AttentionMode::Cascade) {
    const int hidden = channel_attention_hidden_width(c);
    Tensor w1({c, hidden}), w2({hidden, c});
    fill_kaiming(w1, c, rng);
    fill_kaiming(w2, hidden, rng);
    m.params_.emplace_back("att.cw1", std::move(w1));
    m.params_.emplace_back("att.cw2", std::move(w2));
  }
  if (config.attention == AttentionMode::SpatialOnly ||
      config.attention == AttentionMode::Cascade) {
    Tensor k({1, 2, 7, 7});
    fill_kaiming(k, 2 * 7 * 7, rng);
    m.params_.emplace_back("att.sk", std::move(k));
  }
  return m;
}

Tensor& Model::param(const std::string& name) {
  for (auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw ContractError("no parameter named '" + name + "'");
}

long Model::total_param_count() const {
  long n = 0;
  for (const auto& [name, t] : params_) n += static_cast<long>(t.numel());
  return n;
}

Model::ForwardResult Model::forward(Tape& tape, Tape::NodeId input,
                                    bool force_attention_identity) const {
  const Tensor& x = tape.value(input);
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw ContractError("forward expects [N," +
                        std::to_string(config_.in_channels) + ",H,W], got " +
                        x.shape_str());
  }
  const int factor = config_.downsample_factor();
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ContractError("input spatial dims " + x.shape_str() +
                        " must be divisible by " + std::to_string(factor) +
                        "; pad the input (e.g. via tiling) first");
  }

  ForwardResult result;
  std::map<std::string, Tape::NodeId> nodes;
  for (const auto& [name, t] : params_) {
    Tape::NodeId id = tape.leaf(t);
    nodes[name] = id;
    result.param_nodes.emplace_back(name, id);
  }

  const int stages = static_cast<int>(config_.encoder_widths.size());
  Tape::NodeId h = input;
  for (int i = 0; i < stages; ++i) {
    h = tape.conv2d(h, nodes["enc" + std::to_string(i) + ".w"],
                    nodes["enc" + std::to_string(i) + ".b"], 1, Padding::Same);
    h = tape.relu(h);
    h = tape.pool2d(h, PoolMode::Max, PoolScope::Windowed, 2, 2);
  }
  for (int i = 0; i < stages; ++i) {
    h = tape.upsample2x_nearest(h);
    h = tape.conv2d(h, nodes["dec" + std::to_string(i) + ".w"],
                    nodes["dec" + std::to_string(i) + ".b"], 1, Padding::Same);
    h = tape.relu(h);
  }

  if (!force_attention_identity) {
    switch (config_.attention) {
      case AttentionMode::None:
        break;
      case AttentionMode::ChannelOnly: {
        ChannelAttentionNodes ca{nodes.at("att.cw1"), nodes.at("att.cw2")};
        h = apply_attention(tape, h, channel_attention(tape, h, ca));
        break;
      }
      case AttentionMode::SpatialOnly: {
        SpatialAttentionNodes sa{nodes.at("att.sk")};
        h = apply_attention(tape, h, spatial_attention(tape, h, sa));
        break;
      }
      case AttentionMode::Cascade: {
        ChannelAttentionNodes ca{nodes.at("att.cw1"), nodes.at("att.cw2")};
        SpatialAttentionNodes sa{nodes.at("att.sk")};
        h = cbam_refine(tape, h, ca, sa);
        break;
      }
    }
  }

  result.logits = tape.conv2d(h, nodes["head.w"], nodes["head.b"], 1,
                              Padding::Same);
  return result;
}

Tensor Model::forward_eval(const Tensor& batch) const {
  Tape tape;
  Tape::NodeId input = tape.leaf(batch);
  ForwardResult r = forward(tape, input);
  return tape.value(r.logits);
}

LabelMap argmax_labels(const Tensor& logits, int sample_index) {
  const int k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  LabelMap out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      float best_v = logits.at(sample_index, 0, y, x);
      for (int c = 1; c < k; ++c) {
        const float v = logits.at(sample_index, c, y, x);
        if (v > best_v) {  // strict: ties keep the lower index
          best_v = v;
          best = c;
        }
      }
      out.at(y, x) = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

std::vector<LabelMap> Model::predict(const Tensor& batch) const {
  Tensor logits = forward_eval(batch);
  std::vector<LabelMap> out;
  out.reserve(static_cast<std::size_t>(logits.dim(0)));
  for (int n = 0; n < logits.dim(0); ++n) out.push_back(argmax_labels(logits, n));
  return out;
}

// ---------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kCkptMagic[4] = {'S', 'C', 'K', 'P'};

void append_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t take_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw DataError("checkpoint truncated");
  std::uint32_t v = (static_cast<std::uint8_t>(buf[pos])) |
                    (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8) |
                    (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + 2])) << 16) |
                    (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + 3])) << 24);
  pos += 4;
  return v;
}

std::string take_bytes(const std::string& buf, std::size_t& pos, std::size_t n) {
  if (pos + n > buf.size()) throw DataError("checkpoint truncated");
  std::string s = buf.substr(pos, n);
  pos += n;
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::string payload;
  const std::string cfg = model.config().canonical_text();
  append_u32(payload, static_cast<std::uint32_t>(cfg.size()));
  payload += cfg;
  append_u32(payload, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, t] : model.params()) {
    append_u32(payload, static_cast<std::uint32_t>(name.size()));
    payload += name;
    std::ostringstream ts(std::ios::binary);
    write_tensor(ts, t);
    payload += ts.str();
  }
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
            static_cast<uInt>(payload.size())));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kCkptMagic, 4);
  out.put(1);  // version
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  std::string tail;
  append_u32(tail, crc);
  out.write(tail.data(), 4);
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path,
                      const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 9 || buf.compare(0, 4, kCkptMagic, 4) != 0) {
    throw DataError("not a checkpoint (bad magic): " + path);
  }
  if (buf[4] != 1) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(static_cast<int>(buf[4])) + ": " + path);
  }
  const std::string payload = buf.substr(5, buf.size() - 9);
  std::size_t tail_pos = buf.size() - 4;
  const std::uint32_t stored_crc = take_u32(buf, tail_pos);
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
            static_cast<uInt>(payload.size())));
  if (crc != stored_crc) {
    throw DataError("checkpoint CRC mismatch (corrupt file): " + path);
  }

  std::size_t pos = 0;
  const std::uint32_t cfg_len = take_u32(payload, pos);
  const std::string cfg_text = take_bytes(payload, pos, cfg_len);
  ModelConfig config = ModelConfig::from_canonical_text(cfg_text);
  if (expected && !(*expected == config)) {
    throw DataError("checkpoint config mismatch for " + path +
                    ":\n-- stored --\n" + config.canonical_text() +
                    "-- expected --\n" + expected->canonical_text());
  }

  Model model = Model::build(config);
  const std::uint32_t n_params = take_u32(payload, pos);
  if (n_params != model.params().size()) {
    throw DataError("checkpoint parameter count " + std::to_string(n_params) +
                    " does not match config-derived count " +
                    std::to_string(model.params().size()));
  }
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::uint32_t name_len = take_u32(payload, pos);
    const std::string name = take_bytes(payload, pos, name_len);
    std::istringstream ts(payload.substr(pos), std::ios::binary);
    Tensor t = read_tensor(ts);
    pos += static_cast<std::size_t>(ts.tellg());
    Tensor& dst = model.param(name);
    if (!dst.same_shape(t)) {
      throw DataError("checkpoint tensor '" + name + "' has shape " +
                      t.shape_str() + ", expected " + dst.shape_str());
    }
    dst = std::move(t);
  }
  if (pos != payload.size()) {
    throw DataError("checkpoint has trailing bytes: " + path);
  }
  return model;
}

}  // namespace scattnet
