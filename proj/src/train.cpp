#include "scattnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "scattnet/errors.hpp"
#include "scattnet/metrics.hpp"

namespace scattnet {

void TrainConfig::validate() const {
  if (!(lr >= 0.0f)) throw ContractError("lr must be >= 0");
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (epochs < 0) throw ContractError("epochs must be >= 0");
  if (!(beta1 > 0.0f && beta1 < 1.0f && beta2 > 0.0f && beta2 < 1.0f)) {
    throw ContractError("adam betas must lie in (0,1)");
  }
  if (!(eps > 0.0f)) throw ContractError("adam eps must be > 0");
}

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open train config: " + path);
  TrainConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "lr") cfg.lr = std::stof(val);
      else if (key == "batch_size") cfg.batch_size = std::stoi(val);
      else if (key == "epochs") cfg.epochs = std::stoi(val);
      else if (key == "beta1") cfg.beta1 = std::stof(val);
      else if (key == "beta2") cfg.beta2 = std::stof(val);
      else if (key == "eps") cfg.eps = std::stof(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "ignore_class") cfg.ignore_class = std::stoi(val);
      else if (key == "augment") cfg.augment = (val == "1" || val == "true");
      else if (key == "crop_size") cfg.crop_size = std::stoi(val);
      else throw DataError(path + ":" + std::to_string(line_no) +
                           ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

Tape::NodeId cross_entropy(Tape& tape, Tape::NodeId logits,
                           const std::vector<LabelMap>& targets,
                           std::optional<int> ignore_class) {
  const Tensor& x = tape.value(logits);
  if (x.rank() != 4) {
    throw ContractError("cross_entropy expects logits [N,K,H,W], got " +
                        x.shape_str());
  }
  const int n_batch = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (static_cast<int>(targets.size()) != n_batch) {
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) +
                        " target maps for batch of " + std::to_string(n_batch));
  }
  for (const LabelMap& t : targets) {
    if (t.height != h || t.width != w) {
      throw ContractError("cross_entropy: target size mismatch vs logits " +
                          x.shape_str());
    }
  }

  // Per-pixel softmax saved for the backward pass.
  Tensor probs(x.shape());
  double loss_sum = 0.0;
  long scored = 0;
  for (int n = 0; n < n_batch; ++n) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const int target = targets[static_cast<std::size_t>(n)].at(y, xx);
        if (target >= k) {
          throw ContractError("cross_entropy: target label " +
                              std::to_string(target) + " >= K=" +
                              std::to_string(k));
        }
        float mx = x.at(n, 0, y, xx);
        for (int c = 1; c < k; ++c) mx = std::max(mx, x.at(n, c, y, xx));
        double z = 0.0;
        for (int c = 0; c < k; ++c)
          z += std::exp(static_cast<double>(x.at(n, c, y, xx)) - mx);
        for (int c = 0; c < k; ++c)
          probs.at(n, c, y, xx) = static_cast<float>(
              std::exp(static_cast<double>(x.at(n, c, y, xx)) - mx) / z);
        if (ignore_class && target == *ignore_class) continue;
        ++scored;
        loss_sum += std::log(z) - (static_cast<double>(x.at(n, target, y, xx)) - mx);
      }
    }
  }
  if (scored == 0) {
    throw ContractError("cross_entropy: every pixel is ignored, mean loss "
                        "undefined");
  }

  Tensor out({1});
  out[0] = static_cast<float>(loss_sum / scored);
  auto bw = [logits, targets, ignore_class, probs = std::move(probs),
             scored](Tape& t, Tape::NodeId self) {
    const float go = t.grad(self)[0];
    const Tensor& x = t.value(logits);
    Tensor gx(x.shape());
    const float inv = go / static_cast<float>(scored);
    const int k = x.dim(1);
    for (int n = 0; n < x.dim(0); ++n)
      for (int y = 0; y < x.dim(2); ++y)
        for (int xx = 0; xx < x.dim(3); ++xx) {
          const int target = targets[static_cast<std::size_t>(n)].at(y, xx);
          if (ignore_class && target == *ignore_class) continue;
          for (int c = 0; c < k; ++c) {
            const float p = probs.at(n, c, y, xx);
            gx.at(n, c, y, xx) = inv * (p - (c == target ? 1.0f : 0.0f));
          }
        }
    t.accumulate_grad(logits, gx);
  };
  return tape.push(std::move(out), {logits}, std::move(bw), "cross_entropy");
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  // Validate every gradient before touching any parameter: a rejected
  // step must leave params and moments untouched.
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;  // unreached param: zero grad, no entry
    if (!it->second.same_shape(p)) {
      throw ContractError("adam_step: gradient shape for '" + name +
                          "' is " + it->second.shape_str() + ", parameter is " +
                          p.shape_str());
    }
    if (!it->second.all_finite()) {
      throw NumericError("adam_step rejected: non-finite gradient for '" +
                         name + "'");
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), state.t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), state.t);
  for (auto& [name, p] : params) {
    auto& mom = state.moments[name];
    if (mom.m.numel() == 0) {
      mom.m = Tensor(p.shape());
      mom.v = Tensor(p.shape());
    }
    auto it = grads.find(name);
    const Tensor* g = it != grads.end() ? &it->second : nullptr;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const float gi = g ? (*g)[i] : 0.0f;
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0f - cfg.beta1) * gi;
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0f - cfg.beta2) * gi * gi;
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      p[i] = static_cast<float>(
          p[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,loss,oa,miou,af\n";
  os << std::setprecision(10);
  for (const EpochStats& e : epochs) {
    os << e.epoch << ',' << e.mean_loss << ',';
    if (e.has_eval) {
      os << e.oa << ',' << e.miou << ',' << e.af;
    } else {
      os << ",,";
    }
    os << '\n';
  }
  return os.str();
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

TrainHistory train(Model& model, const std::vector<SamplePatch>& train_set,
                   const std::vector<SamplePatch>* eval_set,
                   const TrainConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty dataset");
  const int factor = model.config().downsample_factor();
  const int patch =
      cfg.crop_size > 0 ? cfg.crop_size : train_set.front().image.dim(1);
  if (patch % factor != 0) {
    throw ContractError("train: patch size " + std::to_string(patch) +
                        " not divisible by model downsample factor " +
                        std::to_string(factor));
  }

  AdamState adam;
  TrainHistory history;
  if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int b = static_cast<int>(end - start);
      const int c = train_set.front().image.dim(0);
      Tensor batch({b, c, patch, patch});
      std::vector<LabelMap> targets;
      targets.reserve(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        const SamplePatch& src = train_set[order[start + i]];
        SamplePatch p;
        if (cfg.crop_size > 0 && (src.image.dim(1) != patch ||
                                  src.image.dim(2) != patch)) {
          p = random_crop(src.image, src.mask, patch, rng);
        } else {
          p = src;
        }
        if (cfg.augment) p = augment(p, rng);
        std::copy(p.image.vec().begin(), p.image.vec().end(),
                  batch.vec().begin() +
                      static_cast<std::ptrdiff_t>(i) * c * patch * patch);
        targets.push_back(std::move(p.mask));
      }

      Tape tape;
      Tape::NodeId input = tape.leaf(std::move(batch));
      Model::ForwardResult fwd = model.forward(tape, input);
      Tape::NodeId loss =
          cross_entropy(tape, fwd.logits, targets, cfg.ignore_class);
      const float loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) +
                           "; last good checkpoint retained");
      }
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, node] : fwd.param_nodes) {
        grads.emplace(name, tape.grad(node));
      }
      adam_step(model.params(), grads, adam, cfg);
      loss_sum += loss_value;
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / std::max(1L, batches);
    if (eval_set && !eval_set->empty()) {
      ConfusionMatrix cm(model.config().num_classes);
      for (const SamplePatch& s : *eval_set) {
        const int c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
        Tensor one({1, c, h, w}, s.image.vec());
        accumulate(cm, model.predict(one)[0], s.mask);
      }
      MetricReport rep = compute_report(cm, {});
      stats.has_eval = true;
      stats.oa = rep.oa;
      stats.miou = rep.miou;
      stats.af = rep.af;
    }
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    history.epochs.push_back(stats);
    if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
  }
  return history;
}

}  // namespace scattnet
