// Release gate: one self-contained check per criterion, each printing a
// single PASS/FAIL line. Exit status is nonzero if any criterion fails.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "scattnet/attention.hpp"
#include "scattnet/data.hpp"
#include "scattnet/infer.hpp"
#include "scattnet/metrics.hpp"
#include "scattnet/model.hpp"
#include "scattnet/train.hpp"

using namespace scattnet;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int number, const std::string& name, bool ok,
            const std::string& detail = "") {
  std::cout << (ok ? "PASS" : "FAIL") << " " << number << ": " << name;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << std::endl;
  if (!ok) ++failures;
}

// ---- 1: parameter-count exactness -----------------------------------

void check_param_counts() {
  bool ok = true;
  std::ostringstream detail;
  for (int c : {8, 16, 64, 512}) {
    AttentionBlock block = make_attention_block(c, 1);
    auto [ch, sp] = param_count(block);
    if (ch != static_cast<long>(c) * c / 4 || sp != 98) {
      ok = false;
      detail << "C=" << c << " gave " << ch << "/" << sp << "; ";
    }
  }
  report(1, "attention parameter counts are C*C/4 and 98", ok, detail.str());
}

// ---- 2: gradient correctness ----------------------------------------

// Central-difference check with per-coordinate step refinement. The network
// is piecewise smooth (relu, max-pool), so no single step size works for the
// handful of coordinates whose probe interval straddles a kink; those are
// re-probed with smaller steps, where the numeric slope converges to the
// analytic one.
double ladder_gradcheck(const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& f,
                        const Tensor& at) {
  Tape tape;
  Tape::NodeId x = tape.leaf(at);
  Tape::NodeId loss = f(tape, x);
  tape.backward(loss);
  const Tensor analytic = tape.grad(x);
  auto eval = [&](const Tensor& p) {
    Tape t;
    return static_cast<double>(t.value(f(t, t.leaf(p)))[0]);
  };
  double worst = 0.0;
  Tensor probe = at;
  for (std::size_t i = 0; i < at.numel(); ++i) {
    const float orig = probe[i];
    double best = 1e9;
    for (float eps : {2e-3f, 1e-3f, 5e-4f, 2.5e-4f}) {
      probe[i] = orig + eps;
      const double fp = eval(probe);
      probe[i] = orig - eps;
      const double fm = eval(probe);
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[i]);
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 0.1});
      best = std::min(best, rel);
      if (best < 1e-4) break;  // clearly fine; skip the finer steps
    }
    probe[i] = orig;
    worst = std::max(worst, best);
  }
  return worst;
}

void check_gradients() {
  bool ok = true;
  double worst_att = 0.0, worst_model = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    // distinct well-separated feature values keep the internal max-pool
    // argmaxes fixed under the probe step
    Tensor features = oracles::spread_tensor({2, 16, 4, 4}, rng, -3.5f, 3.5f);
    AttentionBlock block = make_attention_block(16, seed);
    Tensor loss_w = oracles::random_tensor({2, 16, 4, 4}, rng, 0.5f, 1.5f);
    Tensor gate_w_c = oracles::random_tensor({2, 16, 1, 1}, rng, 0.5f, 1.5f);
    Tensor gate_w_s = oracles::random_tensor({2, 1, 4, 4}, rng, 0.5f, 1.5f);

    // weighted *mean* losses: a small scalar keeps float32 rounding of the
    // probed evaluations far below the slope being measured
    auto weighted = [](Tape& t, Tape::NodeId node, const Tensor& w) {
      Tape::NodeId wn = t.leaf(w);
      return t.scale(t.sum_all(t.mul_broadcast(node, wn)),
                     1.0f / static_cast<float>(w.numel()));
    };
    auto channel_loss = [&](Tape& t, Tape::NodeId x) {
      ChannelAttentionNodes n{t.leaf(block.channel.w1), t.leaf(block.channel.w2)};
      return weighted(t, channel_attention(t, x, n), gate_w_c);
    };
    auto spatial_loss = [&](Tape& t, Tape::NodeId x) {
      SpatialAttentionNodes n{t.leaf(block.spatial.kernel)};
      return weighted(t, spatial_attention(t, x, n), gate_w_s);
    };
    auto cascade_loss = [&](Tape& t, Tape::NodeId x) {
      ChannelAttentionNodes cn{t.leaf(block.channel.w1), t.leaf(block.channel.w2)};
      SpatialAttentionNodes sn{t.leaf(block.spatial.kernel)};
      return weighted(t, cbam_refine(t, x, cn, sn), loss_w);
    };

    for (const auto& f : {std::function<Tape::NodeId(Tape&, Tape::NodeId)>(
                              channel_loss),
                          std::function<Tape::NodeId(Tape&, Tape::NodeId)>(
                              spatial_loss),
                          std::function<Tape::NodeId(Tape&, Tape::NodeId)>(
                              cascade_loss)}) {
      auto r = finite_diff_check(f, features, 2e-3f);
      worst_att = std::max(worst_att, r.max_rel_err);
      if (r.max_rel_err >= 1e-3) ok = false;
    }

    // cross-entropy through the full model
    ModelConfig mc;
    mc.in_channels = 2;
    mc.num_classes = 2;
    mc.encoder_widths = {8};
    mc.attention = AttentionMode::Cascade;
    mc.seed = seed;
    Model model = Model::build(mc);
    Tensor batch = oracles::random_tensor({2, 2, 16, 16}, rng, 0.0f, 1.0f);
    std::vector<LabelMap> targets = {oracles::random_labels(16, 16, 2, rng),
                                     oracles::random_labels(16, 16, 2, rng)};
    auto model_loss = [&](Tape& t, Tape::NodeId x) {
      return cross_entropy(t, model.forward(t, x).logits, targets);
    };
    const double model_err = ladder_gradcheck(model_loss, batch);
    worst_model = std::max(worst_model, model_err);
    if (model_err >= 1e-3) ok = false;
  }
  std::ostringstream detail;
  detail << "worst rel err: attention " << worst_att << ", model "
         << worst_model;
  report(2, "finite-difference gradient checks stay under 1e-3", ok,
         detail.str());
}

// ---- 3: attention-map invariants ------------------------------------

void check_attention_invariants() {
  std::mt19937_64 rng(99);
  long violations = 0;
  const int n = 1, c = 8, h = 5, w = 5;
  AttentionBlock block = make_attention_block(c, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor f = oracles::random_tensor({n, c, h, w}, rng, -3.0f, 3.0f);

    Tape tape;
    Tape::NodeId x = tape.leaf(f);
    ChannelAttentionNodes cn{tape.leaf(block.channel.w1),
                             tape.leaf(block.channel.w2)};
    SpatialAttentionNodes sn{tape.leaf(block.spatial.kernel)};
    // copies: building later nodes may reallocate the tape's storage
    const Tensor wc = tape.value(channel_attention(tape, x, cn));
    const Tensor ws = tape.value(spatial_attention(tape, x, sn));
    const Tensor refined = tape.value(cbam_refine(tape, x, cn, sn));

    for (std::size_t i = 0; i < wc.numel(); ++i)
      if (!(wc[i] > 0.0f && wc[i] < 1.0f)) ++violations;
    for (std::size_t i = 0; i < ws.numel(); ++i)
      if (!(ws[i] > 0.0f && ws[i] < 1.0f)) ++violations;
    for (std::size_t i = 0; i < refined.numel(); ++i)
      if (!(std::fabs(refined[i]) <= std::fabs(f[i]))) ++violations;

    // spatial permutation leaves the channel gate alone
    Tensor perm(f.shape());
    std::vector<int> order(static_cast<std::size_t>(h * w));
    for (int i = 0; i < h * w; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h * w; ++i) {
        const int src = order[static_cast<std::size_t>(i)];
        perm.at(0, ch, i / w, i % w) = f.at(0, ch, src / w, src % w);
      }
    Tape tp;
    ChannelAttentionNodes cnp{tp.leaf(block.channel.w1),
                              tp.leaf(block.channel.w2)};
    const Tensor& wcp =
        tp.value(channel_attention(tp, tp.leaf(perm), cnp));
    for (std::size_t i = 0; i < wc.numel(); ++i)
      if (std::fabs(wcp[i] - wc[i]) > 1e-5f) ++violations;

    // channel permutation leaves the spatial gate alone
    Tensor cperm(f.shape());
    std::vector<int> corder(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) corder[static_cast<std::size_t>(i)] = i;
    std::shuffle(corder.begin(), corder.end(), rng);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          cperm.at(0, ch, y, xx) =
              f.at(0, corder[static_cast<std::size_t>(ch)], y, xx);
    Tape ts;
    SpatialAttentionNodes snp{ts.leaf(block.spatial.kernel)};
    const Tensor& wsp =
        ts.value(spatial_attention(ts, ts.leaf(cperm), snp));
    for (std::size_t i = 0; i < ws.numel(); ++i)
      if (std::fabs(wsp[i] - ws[i]) > 1e-5f) ++violations;
  }
  report(3, "attention gate invariants hold over 1000 random inputs",
         violations == 0,
         violations ? std::to_string(violations) + " violations" : "");
}

// ---- 4: metric oracle equivalence -----------------------------------

void check_metric_oracle() {
  std::mt19937_64 rng(7);
  bool ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 5);  // up to 6 classes
    const int h = 1 + static_cast<int>(rng() % 16);
    const int w = 1 + static_cast<int>(rng() % 16);
    LabelMap pred = oracles::random_labels(w, h, k, rng);
    LabelMap gt = pred;
    for (auto& v : gt.labels)
      if (rng() % 4 == 0)
        v = static_cast<std::uint8_t>(rng() % static_cast<std::uint64_t>(k));
    ConfusionMatrix cm(k);
    accumulate(cm, pred, gt);
    MetricReport r = compute_report(cm, {});
    oracles::MetricsRef ref = oracles::metrics_ref({pred}, {gt}, k, {});
    auto close = [](double a, double b) { return std::fabs(a - b) < 1e-9; };
    for (int c = 0; c < k; ++c) {
      const std::size_t ci = static_cast<std::size_t>(c);
      if (!close(r.per_class[ci].iou, ref.iou[ci])) ok = false;
      if (!close(r.per_class[ci].f1, ref.f1[ci])) ok = false;
      const double identity =
          2.0 * r.per_class[ci].iou / (1.0 + r.per_class[ci].iou);
      if (!close(r.per_class[ci].f1, identity)) ok = false;
    }
    if (!close(r.miou, ref.miou) || !close(r.af, ref.af) ||
        !close(r.oa, ref.oa))
      ok = false;
  }
  report(4, "metrics match the brute-force oracle within 1e-9", ok);
}

// ---- 5: tiling identity ---------------------------------------------

void check_tiling_identity() {
  std::mt19937_64 rng(31);
  bool ok = true;
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  auto run_case = [&](int h, int w) {
    const int window = 256;
    LabelMap original = oracles::random_labels(w, h, 6, rng);
    Tensor geometry({1, h, w});
    auto [grid, tiles] = tile_image(geometry, window);
    // explicit coverage count over the padded plane
    std::vector<int> covered(
        static_cast<std::size_t>(grid.padded_height) * grid.padded_width, 0);
    for (const auto& t : grid.tiles)
      for (int y = t.y0; y < t.y0 + window; ++y)
        for (int x = t.x0; x < t.x0 + window; ++x)
          ++covered[static_cast<std::size_t>(y) * grid.padded_width + x];
    for (int v : covered)
      if (v != 1) return false;
    std::vector<LabelMap> label_tiles;
    for (const auto& t : grid.tiles) {
      LabelMap lt(window, window);
      for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x)
          lt.at(y, x) = original.at(reflect(t.y0 + y, h), reflect(t.x0 + x, w));
      label_tiles.push_back(std::move(lt));
    }
    LabelMap back = stitch(grid, label_tiles);
    return back.labels == original.labels;
  };
  // divisible sizes are exact
  if (!run_case(256, 256) || !run_case(512, 256)) ok = false;
  // 50 random non-divisible sizes
  for (int i = 0; i < 50 && ok; ++i) {
    int h = 200 + static_cast<int>(rng() % 400);
    int w = 200 + static_cast<int>(rng() % 400);
    if (h % 256 == 0) ++h;
    if (w % 256 == 0) ++w;
    if (!run_case(h, w)) ok = false;
  }
  report(5, "stitch inverts tiling with exact single coverage", ok);
}

// ---- 6: training smoke test -----------------------------------------

struct SmokeResult {
  double first_loss = 0.0;
  double final_loss = 0.0;
  double oa = 0.0;
  double seconds = 0.0;
};

SmokeResult run_smoke(AttentionMode mode, std::vector<SamplePatch>& train_set,
                      std::vector<SamplePatch>& val_set, int epochs) {
  ModelConfig mc;
  mc.in_channels = 3;
  mc.num_classes = 3;
  // one 2x downsampling stage: the smallest objects in the synthetic data
  // are 2x2 px and do not survive a deeper pyramid without skip connections
  mc.encoder_widths = {16};
  mc.attention = mode;
  mc.seed = 21;
  Model model = Model::build(mc);
  TrainConfig tc;
  tc.lr = 5e-3f;
  tc.batch_size = 8;
  tc.epochs = epochs;
  tc.seed = 21;
  tc.augment = true;
  const auto t0 = std::chrono::steady_clock::now();
  TrainHistory h = train(model, train_set, &val_set, tc);
  SmokeResult r;
  r.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  r.first_loss = h.epochs.front().mean_loss;
  r.final_loss = h.epochs.back().mean_loss;
  r.oa = h.epochs.back().oa;
  return r;
}

void check_training_smoke(std::vector<SamplePatch>& train_set,
                          std::vector<SamplePatch>& val_set) {
  SmokeResult r = run_smoke(AttentionMode::Cascade, train_set, val_set, 15);
  const bool loss_ok = r.final_loss < 0.3 * r.first_loss;
  const bool oa_ok = r.oa >= 0.90;
  std::ostringstream detail;
  detail << "loss " << r.first_loss << " -> " << r.final_loss << ", OA "
         << r.oa << ", " << r.seconds << "s";
  report(6, "cascade model learns the synthetic task", loss_ok && oa_ok,
         detail.str());
}

// ---- 7: ablation report ---------------------------------------------

void check_ablation_report(std::vector<SamplePatch>& train_set,
                           std::vector<SamplePatch>& val_set) {
  // All four variants must train to completion from one seed and produce
  // a well-formed comparison table. The expected tendency is that the
  // attention variants beat the plain backbone, but synthetic desk-scale
  // data cannot certify that ordering, so it is reported, not asserted.
  bool ok = true;
  std::vector<std::pair<std::string, MetricReport>> rows;
  const std::vector<std::string> class_names = {"background", "shapes",
                                                "specks"};
  for (AttentionMode mode :
       {AttentionMode::None, AttentionMode::ChannelOnly,
        AttentionMode::SpatialOnly, AttentionMode::Cascade}) {
    ModelConfig mc;
    mc.in_channels = 3;
    mc.num_classes = 3;
    mc.encoder_widths = {16};
    mc.attention = mode;
    mc.seed = 21;
    Model model = Model::build(mc);
    TrainConfig tc;
    tc.lr = 5e-3f;
    tc.batch_size = 8;
    tc.epochs = 3;
    tc.seed = 21;
    try {
      train(model, train_set, nullptr, tc);
      ConfusionMatrix cm(3);
      for (const SamplePatch& s : val_set) {
        Tensor one({1, 3, s.image.dim(1), s.image.dim(2)}, s.image.vec());
        accumulate(cm, model.predict(one)[0], s.mask);
      }
      rows.emplace_back(to_string(mode), compute_report(cm, {}));
    } catch (const std::exception& e) {
      ok = false;
    }
  }
  std::string table;
  if (rows.size() == 4) {
    table = format_table(rows, class_names, {});
    for (const char* needle :
         {"none", "channel", "spatial", "cascade", "MIoU", "AF", "OA"}) {
      if (table.find(needle) == std::string::npos) ok = false;
    }
    // four data rows under header and rule
    if (std::count(table.begin(), table.end(), '\n') != 6) ok = false;
  } else {
    ok = false;
  }
  report(7, "all four attention variants train and tabulate", ok);
  if (!table.empty()) std::cout << table;
}

// ---- 8: checkpoint round trip ---------------------------------------

void check_checkpoint_roundtrip() {
  ModelConfig mc;
  mc.in_channels = 3;
  mc.num_classes = 4;
  mc.encoder_widths = {8};
  mc.attention = AttentionMode::Cascade;
  mc.seed = 77;
  Model model = Model::build(mc);
  const fs::path dir =
      fs::temp_directory_path() /
      ("scattnet_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string path = (dir / "round.sckp").string();
  save_checkpoint(model, path);
  Model back = load_checkpoint(path);
  std::mt19937_64 rng(5);
  bool ok = true;
  for (int i = 0; i < 10; ++i) {
    Tensor batch = oracles::random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
    if (model.forward_eval(batch).vec() != back.forward_eval(batch).vec())
      ok = false;
  }
  fs::remove_all(dir);
  report(8, "reloaded checkpoints give bit-identical logits", ok);
}

// ---- 9: end-to-end training determinism -----------------------------

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(SCATTNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_cli_determinism() {
  const fs::path dir =
      fs::temp_directory_path() /
      ("scattnet_acceptance_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path data = dir / "data";
  bool ok = run_cli("synth --out " + data.string() +
                    " --num-tiles 8 --tile-size 16 --num-classes 3 "
                    "--seed 3") == 0;
  const std::string train_args =
      " --data " + data.string() +
      " --encoder-widths 8 --num-classes 3 --epochs 2 --batch-size 4 "
      "--lr 0.01 --seed 6";
  const fs::path run_a = dir / "a";
  const fs::path run_b = dir / "b";
  ok = ok && run_cli("train --out " + run_a.string() + train_args) == 0;
  ok = ok && run_cli("train --out " + run_b.string() + train_args) == 0;
  ok = ok && !slurp(run_a / "history.csv").empty() &&
       slurp(run_a / "history.csv") == slurp(run_b / "history.csv");
  fs::remove_all(dir);
  report(9, "repeated training runs emit identical history bytes", ok);
}

}  // namespace

int main() {
  check_param_counts();
  check_gradients();
  check_attention_invariants();
  check_metric_oracle();
  check_tiling_identity();

  Palette palette = isprs_palette();
  SynthSpec spec;
  spec.num_tiles = 64;
  spec.tile_size = 64;
  spec.num_classes = 3;
  auto dataset = synth_dataset(spec, 17, palette);
  std::vector<SamplePatch> train_set(dataset.begin(), dataset.begin() + 56);
  std::vector<SamplePatch> val_set(dataset.begin() + 56, dataset.end());

  check_training_smoke(train_set, val_set);
  check_ablation_report(train_set, val_set);
  check_checkpoint_roundtrip();
  check_cli_determinism();

  std::cout << (failures == 0 ? "ALL CRITERIA PASSED"
                              : std::to_string(failures) + " CRITERIA FAILED")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
