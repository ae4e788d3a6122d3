// vyang command-line driver.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vyang/vyang.hpp"

namespace fs = std::filesystem;
using namespace vyang;

namespace {

struct Common {
  std::string manifest, test_manifest, out;
  std::string split = "kfold";
  std::size_t folds = 5;
  bool stratify = false;
  std::string modalities = "g,v,a";
  std::string variant = "full";
  std::uint64_t seed = 0;
  TrainConfig train;
  bool macro = false;
  std::size_t curve_every = 1;
  bool quiet = false;

  // model sizes
  ModelConfig model;
  std::size_t mel_bands = 26;
};

void add_data(CLI::App* app, Common& c) {
  app->add_option("--manifest", c.manifest, "Dataset manifest (JSON lines)")->required();
  app->add_option("--split", c.split, "kfold, independent or cross")
      ->check(CLI::IsMember({"kfold", "independent", "cross"}));
  app->add_option("--test-manifest", c.test_manifest, "Second dataset for --split cross");
  app->add_option("--folds", c.folds, "Folds for --split kfold");
  app->add_flag("--stratify", c.stratify, "Stratify k-fold by label");
  app->add_option("--seed", c.seed, "Seed for splits, initialization and shuffling");
  app->add_option("--mel-bands", c.mel_bands, "Mel bands of the built-in acoustic extractor");
}

void add_training(CLI::App* app, Common& c) {
  app->add_option("--modalities", c.modalities, "Comma list of g, v, a");
  app->add_option("--epochs", c.train.epochs);
  app->add_option("--lr", c.train.learning_rate);
  app->add_option("--batch-size", c.train.batch_size);
  app->add_option("--dropout", c.train.dropout);
  app->add_option("--out", c.out, "Output directory")->required();
  app->add_flag("--macro", c.macro, "Add macro-averaged precision, recall and F1");
  app->add_option("--curve-every", c.curve_every, "Epochs between curve records (0: last only)");
  app->add_flag("--quiet", c.quiet, "No per-fold progress");
  auto& m = c.model;
  app->add_option("--embed-dim", m.glossary.embed_dim);
  app->add_option("--hidden", m.glossary.hidden, "Glossary RNN state size");
  app->add_option("--token-heads", m.glossary.token_heads);
  app->add_option("--context", m.glossary.context, "Context slots per sample");
  app->add_option("--conv-channels", m.visual.conv_channels);
  app->add_option("--conv-blocks", m.visual.blocks);
  app->add_option("--shuffle-groups", m.visual.shuffle_groups);
  app->add_option("--visual-dim", m.visual.out_dim);
  app->add_option("--fusion-dim", m.fusion.dim);
  app->add_option("--heads", m.fusion.heads, "Fusion attention heads");
  app->add_flag("--flat", [&m](std::int64_t) { m.fusion.token_mode = false; }, "Flat fusion input instead of segment tokens");
}

AcousticConfig acoustic_config(const Common& c) {
  AcousticConfig a;
  a.mel_bands = c.mel_bands;
  return a;
}

Dataset load(const std::string& path, const Common& c) {
  LoadOptions o;
  o.acoustic = acoustic_config(c);
  return load_manifest(path, o);
}

ExperimentConfig experiment_config(const Common& c) {
  ExperimentConfig e;
  e.split = parse_split(c.split);
  e.folds = c.folds;
  e.stratify = c.stratify;
  e.seed = c.seed;
  e.model = c.model;
  e.model.visual.context = c.model.glossary.context;
  e.train = c.train;
  e.macro = c.macro;
  e.out = c.out;
  e.curve_every = c.curve_every;
  if (!c.quiet) e.log = [](const std::string& s) { std::cerr << s << "\n"; };
  return e;
}

int run(const Common& c, ExperimentConfig e) {
  Dataset ds = load(c.manifest, c);
  std::optional<Dataset> second;
  if (e.split == SplitKind::cross) {
    if (c.test_manifest.empty()) throw Error("--split cross needs --test-manifest");
    second = load(c.test_manifest, c);
  }
  auto res = run_experiment(ds, e, second ? &*second : nullptr);
  std::cout << metrics_table(res, c.macro).text();
  return 0;
}

std::array<double, 3> parse_reliability(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3) throw Error("--reliability takes one value or three (g,v,a)");
  return {v[0], v[1], v[2]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal sarcasm recognition: training, evaluation and experiment protocol"};
  app.require_subcommand(1);
  Common c;

  auto* train = app.add_subcommand("train", "Train and test one modality mask and variant");
  add_data(train, c);
  add_training(train, c);
  train->add_option("--variant", c.variant)->check(CLI::IsMember({"full", "no-tokenizer-attn", "no-depth-attn", "no-mha"}));

  auto* ablate = app.add_subcommand("ablate", "Run all four variants for one modality mask");
  add_data(ablate, c);
  add_training(ablate, c);

  auto* report = app.add_subcommand("report", "Run the seven modality combinations for one variant");
  add_data(report, c);
  add_training(report, c);
  report->add_option("--variant", c.variant)->check(CLI::IsMember({"full", "no-tokenizer-attn", "no-depth-attn", "no-mha"}));

  std::string run_dir;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a saved run on a manifest");
  evaluate_cmd->add_option("--manifest", c.manifest)->required();
  evaluate_cmd->add_option("--run", run_dir, "Run directory holding model.ckpt and config.json")->required();
  evaluate_cmd->add_option("--out", c.out, "Write metrics.csv here");
  evaluate_cmd->add_flag("--macro", c.macro);
  evaluate_cmd->add_option("--mel-bands", c.mel_bands);

  auto* split = app.add_subcommand("split", "Print the split assignment as CSV");
  add_data(split, c);
  split->add_option("--out", c.out, "Write split.csv here instead of stdout");

  auto* extract = app.add_subcommand("extract-features", "Precompute acoustic features as VTF vectors");
  extract->add_option("--manifest", c.manifest)->required();
  extract->add_option("--out", c.out)->required();
  extract->add_option("--mel-bands", c.mel_bands);

  SynthConfig sc;
  std::string reliability = "1";
  auto* synth = app.add_subcommand("synth", "Generate a planted-signal dataset");
  synth->add_option("--out", c.out)->required();
  synth->add_option("--n", sc.n);
  synth->add_option("--seed", sc.seed);
  synth->add_option("--reliability", reliability, "Signal reliability, one value or g,v,a");
  synth->add_option("--context", sc.context);
  synth->add_option("--frames", sc.frames, "Frames per utterance");
  synth->add_option("--height", sc.height);
  synth->add_option("--width", sc.width);
  synth->add_option("--friends-share", sc.friends_share);
  synth->add_option("--min-words", sc.min_words);
  synth->add_option("--max-words", sc.max_words);
  synth->add_option("--marker-window", sc.marker_window, "Marker position is drawn from the first this-many words");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train || *report || *ablate) {
      ExperimentConfig e = experiment_config(c);
      e.masks = {ModalityMask::parse(c.modalities)};
      e.variants = {parse_variant(c.variant)};
      if (*report) e.masks = ModalityMask::table_rows();
      if (*ablate) e.variants = {Variant::full, Variant::no_tokenizer_attn, Variant::no_depth_attn, Variant::no_mha};
      return run(c, e);
    }
    if (*evaluate_cmd) {
      TrainedRun r = load_run(run_dir);
      Dataset ds = load(c.manifest, c);
      auto ev = evaluate(*r.model, ds.all());
      ExperimentResult res;
      RunResult row;
      row.mask = r.model->config.mask;
      row.variant = r.model->config.variant;
      row.folds.push_back({0, ev.metrics, {}});
      row.aggregate = ev.metrics;
      res.rows.push_back(row);
      Table t = metrics_table(res, c.macro);
      std::cout << t.text();
      if (!c.out.empty()) {
        fs::create_directories(c.out);
        write_file_bytes(fs::path(c.out) / "metrics.csv", t.csv());
      }
      return 0;
    }
    if (*split) {
      Dataset ds = load(c.manifest, c);
      std::string out = "id,fold,role\n";
      auto emit = [&](const Dataset& d, const std::vector<std::size_t>& idx, std::size_t fold, const char* role) {
        for (std::size_t i : idx) out += d.samples[i].id + "," + std::to_string(fold) + "," + role + "\n";
      };
      switch (parse_split(c.split)) {
        case SplitKind::kfold: {
          auto folds = kfold_splits(dataset_labels(ds), c.folds, c.seed, c.stratify);
          for (std::size_t f = 0; f < folds.size(); ++f) emit(ds, folds[f].test, f, "test");
          break;
        }
        case SplitKind::independent:
          emit(ds, speaker_independent_split(ds).train, 0, "train");
          emit(ds, speaker_independent_split(ds).test, 0, "test");
          break;
        case SplitKind::cross: {
          if (c.test_manifest.empty()) throw Error("--split cross needs --test-manifest");
          Dataset other = load(c.test_manifest, c);
          Fold f = cross_dataset_split(ds.size(), other.size(), c.seed);
          emit(ds, f.train, 0, "train");
          emit(ds, f.val, 0, "val");
          emit(other, f.test, 0, "test");
          break;
        }
      }
      if (c.out.empty()) {
        std::cout << out;
      } else {
        fs::create_directories(c.out);
        write_file_bytes(fs::path(c.out) / "split.csv", out);
      }
      return 0;
    }
    if (*extract) {
      Dataset ds = load(c.manifest, c);
      fs::path out(c.out), root = fs::absolute(fs::path(c.manifest)).parent_path();
      fs::create_directories(out / "features");
      for (auto& s : ds.samples) {
        auto fix = [&](Turn& t, const std::string& tag) {
          if (!t.frames_path.empty() && fs::path(t.frames_path).is_relative())
            t.frames_path = (root / t.frames_path).string();
          if (!t.audio) return;
          t.audio_path = "features/" + s.id + "_" + tag + ".vtf";
          write_vtf(out / t.audio_path, *t.audio);
        };
        fix(s.utterance, "u");
        for (std::size_t k = 0; k < s.context.size(); ++k) fix(s.context[k], "c" + std::to_string(k));
      }
      write_manifest(out / "manifest.jsonl", ds.samples);
      std::cout << ds.size() << " samples, " << ds.acoustic_dim << " acoustic features\n";
      return 0;
    }
    if (*synth) {
      sc.reliability = parse_reliability(reliability);
      auto recs = generate_synthetic_dataset(c.out, sc);
      std::size_t pos = 0;
      for (const auto& r : recs) pos += r.label;
      std::cout << recs.size() << " samples (" << pos << " sarcastic) in " << c.out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "vyang: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
