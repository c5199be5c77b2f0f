#include "scattnet/attention.hpp"

#include <random>

#include "scattnet/errors.hpp"
#include "scattnet/init.hpp"

namespace scattnet {

int channel_attention_hidden_width(int channels) {
  return channels >= 8 ? channels / 8 : 1;
}

ChannelAttentionParams make_channel_attention(int channels,
                                              std::uint64_t seed) {
  if (channels < 1) throw ContractError("channel attention needs C >= 1");
  const int hidden = channel_attention_hidden_width(channels);
  ChannelAttentionParams p;
  p.w1 = Tensor({channels, hidden});
  p.w2 = Tensor({hidden, channels});
  std::mt19937_64 rng(seed);
  fill_kaiming(p.w1, channels, rng);
  fill_kaiming(p.w2, hidden, rng);
  return p;
}

SpatialAttentionParams make_spatial_attention(std::uint64_t seed) {
  SpatialAttentionParams p;
  p.kernel = Tensor({1, 2, 7, 7});
  std::mt19937_64 rng(seed);
  fill_kaiming(p.kernel, 2 * 7 * 7, rng);
  return p;
}

AttentionBlock make_attention_block(int channels, std::uint64_t seed) {
  AttentionBlock b;
  b.channel = make_channel_attention(channels, seed);
  b.spatial = make_spatial_attention(seed + 1);
  return b;
}

Tape::NodeId channel_attention(Tape& tape, Tape::NodeId features,
                               const ChannelAttentionNodes& params) {
  const Tensor& f = tape.value(features);
  if (f.rank() != 4) {
    throw ContractError("channel_attention expects [N,C,H,W], got " +
                        f.shape_str());
  }
  const int n = f.dim(0), c = f.dim(1);
  const Tensor& w1 = tape.value(params.w1);
  if (w1.dim(0) != c) {
    throw ContractError("channel_attention: feature channels " +
                        std::to_string(c) + " do not match MLP input " +
                        std::to_string(w1.dim(0)));
  }
  auto mlp = [&](Tape::NodeId pooled) {
    Tape::NodeId flat = tape.reshape(pooled, {n, c});
    Tape::NodeId h = tape.relu(tape.dense(flat, params.w1));
    return tape.dense(h, params.w2);
  };
  Tape::NodeId avg =
      tape.pool2d(features, PoolMode::Avg, PoolScope::GlobalSpatial);
  Tape::NodeId mx =
      tape.pool2d(features, PoolMode::Max, PoolScope::GlobalSpatial);
  Tape::NodeId merged = tape.add(mlp(avg), mlp(mx));
  Tape::NodeId gate = tape.sigmoid(merged);
  return tape.reshape(gate, {n, c, 1, 1});
}

Tape::NodeId spatial_attention(Tape& tape, Tape::NodeId features,
                               const SpatialAttentionNodes& params) {
  const Tensor& f = tape.value(features);
  if (f.rank() != 4) {
    throw ContractError("spatial_attention expects [N,C,H,W], got " +
                        f.shape_str());
  }
  Tape::NodeId avg =
      tape.pool2d(features, PoolMode::Avg, PoolScope::GlobalChannel);
  Tape::NodeId mx =
      tape.pool2d(features, PoolMode::Max, PoolScope::GlobalChannel);
  Tape::NodeId desc = tape.concat_channels(avg, mx);
  Tape::NodeId conv =
      tape.conv2d(desc, params.kernel, Tape::kNone, 1, Padding::Same);
  return tape.sigmoid(conv);
}

Tape::NodeId apply_attention(Tape& tape, Tape::NodeId features,
                             Tape::NodeId weights) {
  return tape.mul_broadcast(features, weights);
}

Tape::NodeId cbam_refine(Tape& tape, Tape::NodeId features,
                         const ChannelAttentionNodes& channel,
                         const SpatialAttentionNodes& spatial) {
  Tape::NodeId wc = channel_attention(tape, features, channel);
  Tape::NodeId refined = apply_attention(tape, features, wc);
  Tape::NodeId ws = spatial_attention(tape, refined, spatial);
  return apply_attention(tape, refined, ws);
}

std::pair<long, long> param_count(const AttentionBlock& block) {
  return {block.channel.param_count(), block.spatial.param_count()};
}

}  // namespace scattnet
