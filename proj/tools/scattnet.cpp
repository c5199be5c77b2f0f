#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "scattnet/data.hpp"
#include "scattnet/errors.hpp"
#include "scattnet/infer.hpp"
#include "scattnet/metrics.hpp"
#include "scattnet/model.hpp"
#include "scattnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "scattnet 1.0.0";

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

int thread_cap() {
  const char* env = std::getenv("SCATT_THREADS");
  if (!env) return 1;
  const int v = std::atoi(env);
  return v >= 1 ? v : 1;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw scattnet::DataError("cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    std::uint64_t seed, const json& config,
                    const std::string& started_at) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["seed"] = seed;
  m["config"] = config;
  m["started_at"] = started_at;
  m["finished_at"] = timestamp_now();
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::string resolve_manifest_path(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.txt";
  if (!fs::exists(p)) {
    throw scattnet::DataError("dataset manifest not found: " + p.string());
  }
  return p.string();
}

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> widths;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      widths.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw scattnet::ContractError("bad encoder width '" + tok + "'");
    }
  }
  return widths;
}

// ---------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  scattnet::SynthSpec spec;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const std::string started = timestamp_now();
  const scattnet::Palette palette = scattnet::isprs_palette();
  auto tiles = scattnet::synth_dataset(a.spec, a.seed, palette);

  fs::create_directories(a.out);
  std::ostringstream manifest;
  manifest << "# synthetic dataset: image mask pairs\n";
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "tile_%04zu.png", i);
    char mask_name[64];
    std::snprintf(mask_name, sizeof(mask_name), "tile_%04zu_mask.png", i);
    scattnet::save_raster((fs::path(a.out) / name).string(), tiles[i].image);
    scattnet::save_mask((fs::path(a.out) / mask_name).string(), tiles[i].mask,
                        palette);
    manifest << name << ' ' << mask_name << '\n';
  }
  write_text(fs::path(a.out) / "manifest.txt", manifest.str());

  json cfg = {{"num_tiles", a.spec.num_tiles},
              {"tile_size", a.spec.tile_size},
              {"num_classes", a.spec.num_classes},
              {"shape_density", a.spec.shape_density}};
  write_manifest(a.out, "synth", a.seed, cfg, started);
  std::cout << "wrote " << tiles.size() << " tiles to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config_file;
  std::string attention = "cascade";
  std::string widths = "16,32";
  int num_classes = 3;
  double val_fraction = 0.2;
  // -1 sentinels: not set on the command line
  double lr = -1.0;
  int batch_size = -1;
  int epochs = -1;
  long long seed = -1;
  int crop_size = -1;
  bool no_augment = false;
  int ignore_class = -1;
};

int run_train(const TrainArgs& a) {
  const std::string started = timestamp_now();
  scattnet::TrainConfig cfg;
  if (!a.config_file.empty()) cfg = scattnet::parse_train_config(a.config_file);
  if (a.lr >= 0.0) cfg.lr = static_cast<float>(a.lr);
  if (a.batch_size >= 0) cfg.batch_size = a.batch_size;
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.crop_size >= 0) cfg.crop_size = a.crop_size;
  if (a.no_augment) cfg.augment = false;
  if (a.ignore_class >= 0) cfg.ignore_class = a.ignore_class;
  cfg.validate();

  const scattnet::Palette palette = scattnet::isprs_palette();
  auto dataset =
      scattnet::load_dataset(resolve_manifest_path(a.data), palette);
  if (dataset.empty()) throw scattnet::DataError("dataset is empty");

  // Deterministic trailing split for held-out evaluation.
  std::size_t val_count = static_cast<std::size_t>(
      a.val_fraction * static_cast<double>(dataset.size()));
  if (a.val_fraction > 0.0 && val_count == 0) val_count = 1;
  if (val_count >= dataset.size()) val_count = dataset.size() - 1;
  std::vector<scattnet::SamplePatch> train_set(
      dataset.begin(), dataset.end() - static_cast<std::ptrdiff_t>(val_count));
  std::vector<scattnet::SamplePatch> val_set(
      dataset.end() - static_cast<std::ptrdiff_t>(val_count), dataset.end());

  scattnet::ModelConfig mc;
  mc.in_channels = dataset.front().image.dim(0);
  mc.num_classes = a.num_classes;
  mc.encoder_widths = parse_widths(a.widths);
  mc.attention = scattnet::attention_mode_from_string(a.attention);
  mc.seed = cfg.seed;
  scattnet::Model model = scattnet::Model::build(mc);

  fs::create_directories(a.out);
  const std::string ckpt = (fs::path(a.out) / "checkpoint.sckp").string();
  scattnet::TrainHistory history =
      scattnet::train(model, train_set, val_set.empty() ? nullptr : &val_set,
                      cfg, ckpt);
  write_text(fs::path(a.out) / "history.csv", history.to_csv());

  json jc = {{"lr", cfg.lr},
             {"batch_size", cfg.batch_size},
             {"epochs", cfg.epochs},
             {"beta1", cfg.beta1},
             {"beta2", cfg.beta2},
             {"eps", cfg.eps},
             {"augment", cfg.augment},
             {"crop_size", cfg.crop_size},
             {"val_fraction", a.val_fraction},
             {"model", scattnet::ModelConfig(mc).canonical_text()}};
  if (cfg.ignore_class) jc["ignore_class"] = *cfg.ignore_class;
  json epochs_seconds = json::array();
  for (const auto& e : history.epochs) epochs_seconds.push_back(e.seconds);
  jc["epoch_seconds"] = epochs_seconds;
  write_manifest(a.out, "train", cfg.seed, jc, started);

  if (!history.epochs.empty()) {
    const auto& last = history.epochs.back();
    std::cout << "final epoch " << last.epoch << ": loss " << last.mean_loss;
    if (last.has_eval) std::cout << ", held-out OA " << last.oa;
    std::cout << "\n";
  }
  std::cout << "checkpoint: " << ckpt << "\n";
  return 0;
}

// ---------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string data;
  std::vector<int> exclude_classes;
  std::string out;
  int window = 256;
  bool oa_all_pixels = true;
};

int run_eval(const EvalArgs& a) {
  const std::string started = timestamp_now();
  const scattnet::Palette palette = scattnet::isprs_palette();
  auto dataset = scattnet::load_dataset(resolve_manifest_path(a.data), palette);
  if (dataset.empty()) throw scattnet::DataError("dataset is empty");
  std::set<int> excluded(a.exclude_classes.begin(), a.exclude_classes.end());

  std::vector<std::pair<std::string, scattnet::MetricReport>> reports;
  std::ostringstream per_image;
  per_image << "model,image,oa,miou,af\n" << std::setprecision(10);
  std::vector<std::string> class_names;

  for (const std::string& ckpt_path : a.checkpoints) {
    scattnet::Model model = scattnet::load_checkpoint(ckpt_path);
    const int k = model.config().num_classes;
    for (int c : excluded) {
      if (c < 0 || c >= k) {
        throw scattnet::ContractError("--exclude-classes index " +
                                      std::to_string(c) +
                                      " out of range for " +
                                      std::to_string(k) + " classes");
      }
    }
    class_names.clear();
    for (int c = 0; c < k; ++c) {
      class_names.push_back(c < palette.size()
                                ? palette.entries[static_cast<std::size_t>(c)].name
                                : "class" + std::to_string(c));
    }
    scattnet::ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto& s = dataset[i];
      for (std::size_t px = 0; px < s.mask.numel(); ++px) {
        if (s.mask.labels[px] >= k) {
          throw scattnet::DataError(
              "dataset class count exceeds the model's " + std::to_string(k) +
              " classes");
        }
      }
      auto pred =
          scattnet::predict_tiled(model, s.image, a.window, thread_cap());
      scattnet::ConfusionMatrix cmi(k);
      scattnet::accumulate(cmi, pred.labels, s.mask);
      auto ri = scattnet::compute_report(cmi, excluded, a.oa_all_pixels);
      per_image << ckpt_path << ',' << i << ',' << ri.oa << ',' << ri.miou
                << ',' << ri.af << '\n';
      cm.merge(cmi);
    }
    reports.emplace_back(fs::path(ckpt_path).parent_path().filename().string() +
                             "/" + fs::path(ckpt_path).filename().string(),
                         scattnet::compute_report(cm, excluded, a.oa_all_pixels));
  }

  const std::string table =
      scattnet::format_table(reports, class_names, excluded);
  std::cout << table;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "metrics.txt", table);
    write_text(fs::path(a.out) / "per_image.csv", per_image.str());
    std::ostringstream agg;
    for (const auto& [name, rep] : reports) {
      agg << "# " << name << '\n'
          << scattnet::report_to_csv(rep, class_names);
    }
    write_text(fs::path(a.out) / "metrics.csv", agg.str());
    json jc = {{"checkpoints", a.checkpoints},
               {"data", a.data},
               {"excluded", a.exclude_classes},
               {"oa_all_pixels", a.oa_all_pixels}};
    write_manifest(a.out, "eval", 0, jc, started);
  }
  return 0;
}

// ---------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string out_mask;
  int window = 256;
  int heatmap_class = -1;
  std::string heatmap_out;
  double alpha = 0.5;
};

int run_infer(const InferArgs& a) {
  scattnet::Model model = scattnet::load_checkpoint(a.checkpoint);
  scattnet::Tensor image = scattnet::load_raster(a.image);
  if (image.dim(0) != model.config().in_channels) {
    throw scattnet::DataError(
        "image has " + std::to_string(image.dim(0)) + " channels, model wants " +
        std::to_string(model.config().in_channels));
  }
  auto pred = scattnet::predict_tiled(model, image, a.window, thread_cap());

  std::string out_mask = a.out_mask;
  if (out_mask.empty()) {
    fs::path p(a.image);
    out_mask = (p.parent_path() / (p.stem().string() + "_pred.png")).string();
  }
  scattnet::save_mask(out_mask, pred.labels, scattnet::isprs_palette());
  std::cout << "mask: " << out_mask << "\n";

  if (a.heatmap_class >= 0) {
    std::string hm_out = a.heatmap_out;
    if (hm_out.empty()) {
      fs::path p(a.image);
      hm_out = (p.parent_path() / (p.stem().string() + "_heatmap.png")).string();
    }
    scattnet::PngImage overlay = scattnet::heatmap_overlay(
        pred.logits, image, a.heatmap_class, static_cast<float>(a.alpha));
    scattnet::write_png(hm_out, overlay);
    std::cout << "heatmap: " << hm_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SCAttNet-style segmentation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--num-tiles", synth_args.spec.num_tiles)
      ->check(CLI::PositiveNumber);
  synth->add_option("--tile-size", synth_args.spec.tile_size);
  synth->add_option("--num-classes", synth_args.spec.num_classes);
  synth->add_option("--shape-density", synth_args.spec.shape_density);
  synth->add_option("--seed", synth_args.seed);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", train_args.data, "dataset dir or manifest")
      ->required();
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--config", train_args.config_file, "key=value config file");
  train->add_option("--attention", train_args.attention,
                    "none|channel|spatial|cascade");
  train->add_option("--encoder-widths", train_args.widths);
  train->add_option("--num-classes", train_args.num_classes);
  train->add_option("--val-fraction", train_args.val_fraction);
  train->add_option("--lr", train_args.lr);
  train->add_option("--batch-size", train_args.batch_size);
  train->add_option("--epochs", train_args.epochs);
  train->add_option("--seed", train_args.seed);
  train->add_option("--crop-size", train_args.crop_size);
  train->add_flag("--no-augment", train_args.no_augment);
  train->add_option("--ignore-class", train_args.ignore_class);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints");
  eval->add_option("--checkpoint", eval_args.checkpoints)->required();
  eval->add_option("--data", eval_args.data)->required();
  eval->add_option("--exclude-classes", eval_args.exclude_classes);
  eval->add_option("--out", eval_args.out);
  eval->add_option("--window", eval_args.window);
  eval->add_flag("!--oa-scored-only", eval_args.oa_all_pixels,
                 "drop excluded classes' pixels from OA too");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "tiled inference on one image");
  infer->add_option("--checkpoint", infer_args.checkpoint)->required();
  infer->add_option("--image", infer_args.image)->required();
  infer->add_option("--out-mask", infer_args.out_mask);
  infer->add_option("--window", infer_args.window);
  infer->add_option("--heatmap-class", infer_args.heatmap_class);
  infer->add_option("--heatmap-out", infer_args.heatmap_out);
  infer->add_option("--alpha", infer_args.alpha);

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (infer->parsed()) return run_infer(infer_args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const scattnet::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const scattnet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const scattnet::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
