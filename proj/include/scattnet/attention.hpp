#pragma once

#include <cstdint>
#include <utility>

#include "scattnet/tape.hpp"
#include "scattnet/tensor.hpp"

namespace scattnet {

// Shared two-layer perceptron of the channel gate. No biases: the module's
// parameter count is C * C/4 exactly (hidden width C/8, two weight
// matrices). For C < 8 the hidden width floors at 1.
struct ChannelAttentionParams {
  Tensor w1;  // [C, hidden]
  Tensor w2;  // [hidden, C]

  int channels() const { return w1.dim(0); }
  int hidden() const { return w1.dim(1); }
  long param_count() const {
    return static_cast<long>(w1.numel() + w2.numel());
  }
};

// 7x7 conv over the two channel-pooled descriptors. No bias: 1*2*7*7 = 98
// parameters.
struct SpatialAttentionParams {
  Tensor kernel;  // [1, 2, 7, 7]

  long param_count() const { return static_cast<long>(kernel.numel()); }
};

// Channel gate followed by spatial gate, in that order.
struct AttentionBlock {
  ChannelAttentionParams channel;
  SpatialAttentionParams spatial;
};

int channel_attention_hidden_width(int channels);

// Fresh Kaiming-style initialized parameter sets, deterministic per seed.
ChannelAttentionParams make_channel_attention(int channels, std::uint64_t seed);
SpatialAttentionParams make_spatial_attention(std::uint64_t seed);
AttentionBlock make_attention_block(int channels, std::uint64_t seed);

// Node-level building blocks; parameter tensors must already live on the
// tape as leaves (or checkpoint-loaded values).
struct ChannelAttentionNodes {
  Tape::NodeId w1;
  Tape::NodeId w2;
};
struct SpatialAttentionNodes {
  Tape::NodeId kernel;
};

// W_c = sigmoid(MLP(avgpool F) + MLP(maxpool F)), shape [N,C,1,1].
Tape::NodeId channel_attention(Tape& tape, Tape::NodeId features,
                               const ChannelAttentionNodes& params);

// W_s = sigmoid(conv7x7([avgpool_c F ; maxpool_c F])), shape [N,1,H,W].
Tape::NodeId spatial_attention(Tape& tape, Tape::NodeId features,
                               const SpatialAttentionNodes& params);

// Broadcast gate product; w is [N,C,1,1] or [N,1,H,W].
Tape::NodeId apply_attention(Tape& tape, Tape::NodeId features,
                             Tape::NodeId weights);

// Full cascade: channel gate, then spatial gate on the channel-refined map.
Tape::NodeId cbam_refine(Tape& tape, Tape::NodeId features,
                         const ChannelAttentionNodes& channel,
                         const SpatialAttentionNodes& spatial);

// (channel params, spatial params) from stored shapes.
std::pair<long, long> param_count(const AttentionBlock& block);

}  // namespace scattnet
