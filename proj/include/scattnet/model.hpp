#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scattnet/attention.hpp"
#include "scattnet/data.hpp"
#include "scattnet/tape.hpp"
#include "scattnet/tensor.hpp"

namespace scattnet {

enum class AttentionMode { None, ChannelOnly, SpatialOnly, Cascade };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& s);

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 2;
  std::vector<int> encoder_widths = {16, 32};
  AttentionMode attention = AttentionMode::Cascade;
  std::uint64_t seed = 0;

  int downsample_factor() const { return 1 << encoder_widths.size(); }
  // Channel count of the feature map the attention block sees (the final
  // decoder feature map).
  int attention_channels() const { return encoder_widths.front(); }
  void validate() const;
  // Canonical key-sorted key=value block, one pair per line.
  std::string canonical_text() const;
  static ModelConfig from_canonical_text(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

// Mini SegNet-style encoder-decoder with the attention block on the final
// decoder feature map and a 1x1 classifier head. Parameters are named;
// backbone parameters are drawn before attention parameters so ablation
// variants share backbone initialization for a given seed.
class Model {
 public:
  static Model build(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }
  Tensor& param(const std::string& name);
  long total_param_count() const;

  struct ForwardResult {
    Tape::NodeId logits;
    std::vector<std::pair<std::string, Tape::NodeId>> param_nodes;
  };
  // Builds the graph on `tape`; `input` is [N,Cin,H,W] with H,W divisible
  // by the downsample factor. force_attention_identity bypasses the gates
  // (weights == 1) for ablation-consistency checks.
  ForwardResult forward(Tape& tape, Tape::NodeId input,
                        bool force_attention_identity = false) const;

  Tensor forward_eval(const Tensor& batch) const;  // logits [N,K,H,W]
  std::vector<LabelMap> predict(const Tensor& batch) const;

 private:
  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

// Per-pixel argmax with ties broken toward the lowest class index.
LabelMap argmax_labels(const Tensor& logits, int sample_index);

// Checkpoint: magic "SCKP", u8 version, payload (canonical config text,
// parameter table of SCTN tensors), trailing CRC32 of the payload.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path,
                      const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace scattnet
