#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scattnet/data.hpp"
#include "scattnet/model.hpp"
#include "scattnet/tape.hpp"

namespace scattnet {

struct TrainConfig {
  float lr = 1e-3f;
  int batch_size = 16;
  int epochs = 50;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::uint64_t seed = 0;
  std::optional<int> ignore_class;  // excluded from the loss, not just reports
  bool augment = true;
  int crop_size = 0;  // 0: use tiles as-is

  void validate() const;
};

// Flat key=value file, keys matching the field names above. Unknown keys
// are rejected.
TrainConfig parse_train_config(const std::string& path);

// Mean over scored pixels of -log softmax(logits)[target], log-sum-exp
// stabilized. targets[n] pairs with logits sample n.
Tape::NodeId cross_entropy(Tape& tape, Tape::NodeId logits,
                           const std::vector<LabelMap>& targets,
                           std::optional<int> ignore_class = std::nullopt);

struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Moments> moments;
  long t = 0;
};

// One bias-corrected Adam update over the model's named parameters.
// Throws NumericError (step not applied) on any non-finite gradient.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
  bool has_eval = false;
  double oa = 0.0;
  double miou = 0.0;
  double af = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  // epoch,loss,oa,miou,af — wall time deliberately left out so reruns with
  // one seed produce identical bytes.
  std::string to_csv() const;
};

// Shuffled minibatch SGD with Adam; writes a checkpoint after every epoch
// when checkpoint_path is nonempty. A non-finite loss aborts with the last
// good checkpoint left in place.
TrainHistory train(Model& model, const std::vector<SamplePatch>& train_set,
                   const std::vector<SamplePatch>* eval_set,
                   const TrainConfig& cfg,
                   const std::string& checkpoint_path = "");

}  // namespace scattnet
