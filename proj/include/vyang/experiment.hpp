#pragma once

// Experiment orchestration: split x modality masks x variants, with report
// tables, per-fold curves and per-run checkpoints.
//
// Output layout under `out`:
//   metrics.csv / metrics.txt     one row per (mask, variant), folds averaged
//   folds.csv                     one row per (mask, variant, fold)
//   runs/<mask>_<variant>/fold<i>/{curves.csv, model.ckpt, vocab.tsv, speakers.tsv, config.json}

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vyang/checkpoint.hpp"
#include "vyang/dataset.hpp"
#include "vyang/metrics.hpp"
#include "vyang/splits.hpp"
#include "vyang/train.hpp"

namespace vyang {

struct ExperimentConfig {
  SplitKind split = SplitKind::kfold;
  std::size_t folds = 5;
  bool stratify = false;
  std::uint64_t seed = 0;
  std::vector<ModalityMask> masks{ModalityMask{}};
  std::vector<Variant> variants{Variant::full};
  ModelConfig model;  // mask, variant, seed and frame geometry are filled per run
  TrainConfig train;
  bool macro = false;
  std::filesystem::path out;  // empty: nothing is written
  std::size_t curve_every = 1;
  // Called after each fold; handy for progress output.
  std::function<void(const std::string&)> log;
};

struct FoldResult {
  std::size_t fold = 0;
  MetricsReport test;
  std::vector<CurveRecord> curve;
};

struct RunResult {
  ModalityMask mask;
  Variant variant = Variant::full;
  std::vector<FoldResult> folds;
  MetricsReport aggregate;
};

// In table order: masks as ModalityMask::table_rows(), then variants in declaration order.
struct ExperimentResult {
  std::vector<RunResult> rows;
  const RunResult& row(const ModalityMask& m, Variant v = Variant::full) const {
    for (const auto& r : rows)
      if (r.mask == m && r.variant == v) return r;
    throw Error("no result row for " + m.label() + " / " + variant_name(v));
  }
};

inline std::string mask_slug(const ModalityMask& m) {
  std::string s;
  for (Modality x : m.active()) s += static_cast<char>(std::tolower(*modality_letter(x)));
  return s;
}

inline std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
  return splitmix64(seed ^ fnv1a("fold/" + std::to_string(fold)));
}

// ---- config serialization -------------------------------------------------

// "gva" -> "g,v,a"
inline std::string mask_letters(const std::string& slug) {
  std::string out;
  for (char ch : slug) out += (out.empty() ? "" : ",") + std::string(1, ch);
  return out;
}

inline nlohmann::json model_config_json(const ModelConfig& c, std::size_t acoustic_dim) {
  nlohmann::json j;
  j["glossary"] = {{"embed_dim", c.glossary.embed_dim}, {"hidden", c.glossary.hidden},
                   {"context", c.glossary.context}, {"token_heads", c.glossary.token_heads},
                   {"token_attention", c.glossary.token_attention}};
  j["visual"] = {{"channels", c.visual.channels}, {"height", c.visual.height}, {"width", c.visual.width},
                 {"conv_channels", c.visual.conv_channels}, {"blocks", c.visual.blocks},
                 {"kernel", c.visual.kernel}, {"shuffle_groups", c.visual.shuffle_groups},
                 {"out_dim", c.visual.out_dim}, {"context", c.visual.context},
                 {"depth_attention", c.visual.depth_attention}};
  j["fusion"] = {{"dim", c.fusion.dim}, {"heads", c.fusion.heads}, {"token_mode", c.fusion.token_mode},
                 {"use_mha", c.fusion.use_mha}};
  j["modalities"] = mask_slug(c.mask);
  j["variant"] = variant_name(c.variant);
  j["seed"] = c.seed;
  j["acoustic_dim"] = acoustic_dim;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, std::size_t& acoustic_dim) {
  ModelConfig c;
  try {
    const auto& g = j.at("glossary");
    c.glossary.embed_dim = g.at("embed_dim");
    c.glossary.hidden = g.at("hidden");
    c.glossary.context = g.at("context");
    c.glossary.token_heads = g.at("token_heads");
    c.glossary.token_attention = g.at("token_attention");
    const auto& v = j.at("visual");
    c.visual.channels = v.at("channels");
    c.visual.height = v.at("height");
    c.visual.width = v.at("width");
    c.visual.conv_channels = v.at("conv_channels");
    c.visual.blocks = v.at("blocks");
    c.visual.kernel = v.at("kernel");
    c.visual.shuffle_groups = v.at("shuffle_groups");
    c.visual.out_dim = v.at("out_dim");
    c.visual.context = v.at("context");
    c.visual.depth_attention = v.at("depth_attention");
    const auto& f = j.at("fusion");
    c.fusion.dim = f.at("dim");
    c.fusion.heads = f.at("heads");
    c.fusion.token_mode = f.at("token_mode");
    c.fusion.use_mha = f.at("use_mha");
    c.mask = ModalityMask::parse(mask_letters(j.at("modalities").get<std::string>()));
    c.variant = parse_variant(j.at("variant"));
    c.seed = j.at("seed");
    acoustic_dim = j.at("acoustic_dim");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- tables ---------------------------------------------------------------

namespace experiment_detail {

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::vector<std::string> metric_header(bool macro) {
  std::vector<std::string> h{"accuracy", "precision", "recall", "f1"};
  if (macro) h.insert(h.end(), {"macro_precision", "macro_recall", "macro_f1"});
  h.insert(h.end(), {"tp", "fp", "tn", "fn"});
  return h;
}

inline std::vector<std::string> metric_cells(const MetricsReport& m, bool macro) {
  std::vector<std::string> c{fixed(m.accuracy), fixed(m.precision), fixed(m.recall), fixed(m.f1)};
  if (macro) c.insert(c.end(), {fixed(m.macro_precision), fixed(m.macro_recall), fixed(m.macro_f1)});
  for (std::size_t v : {m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn}) c.push_back(std::to_string(v));
  return c;
}

inline std::string join(const std::vector<std::string>& cells, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? sep : "") + cells[i];
  return out;
}

}  // namespace experiment_detail

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::string out = experiment_detail::join(header, ",") + "\n";
    for (const auto& r : rows) out += experiment_detail::join(r, ",") + "\n";
    return out;
  }

  // Left-aligned first columns, right-aligned numbers.
  std::string text() const {
    std::vector<std::size_t> w(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) w[i] = header[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
    auto line = [&](const std::vector<std::string>& r) {
      std::string out;
      for (std::size_t i = 0; i < r.size(); ++i) {
        std::string pad(w[i] - r[i].size(), ' ');
        bool numeric = !r[i].empty() && (std::isdigit(static_cast<unsigned char>(r[i][0])) || r[i][0] == '-');
        out += (i ? "  " : "") + (numeric ? pad + r[i] : r[i] + pad);
      }
      while (!out.empty() && out.back() == ' ') out.pop_back();
      return out + "\n";
    };
    std::string out = line(header);
    for (const auto& r : rows) out += line(r);
    return out;
  }
};

inline Table metrics_table(const ExperimentResult& res, bool macro) {
  Table t;
  t.header = {"modalities", "variant", "folds"};
  auto mh = experiment_detail::metric_header(macro);
  t.header.insert(t.header.end(), mh.begin(), mh.end());
  for (const auto& r : res.rows) {
    std::vector<std::string> row{r.mask.label(), variant_name(r.variant), std::to_string(r.folds.size())};
    auto cells = experiment_detail::metric_cells(r.aggregate, macro);
    row.insert(row.end(), cells.begin(), cells.end());
    t.rows.push_back(row);
  }
  return t;
}

inline Table folds_table(const ExperimentResult& res, bool macro) {
  Table t;
  t.header = {"modalities", "variant", "fold"};
  auto mh = experiment_detail::metric_header(macro);
  t.header.insert(t.header.end(), mh.begin(), mh.end());
  for (const auto& r : res.rows)
    for (const auto& f : r.folds) {
      std::vector<std::string> row{r.mask.label(), variant_name(r.variant), std::to_string(f.fold)};
      auto cells = experiment_detail::metric_cells(f.test, macro);
      row.insert(row.end(), cells.begin(), cells.end());
      t.rows.push_back(row);
    }
  return t;
}

inline std::string curves_csv(const std::vector<CurveRecord>& curve) {
  using experiment_detail::fixed;
  std::string out = "epoch,split,loss,accuracy,precision,recall,f1\n";
  for (const auto& c : curve) {
    out += std::to_string(c.epoch) + "," + c.split + "," + fixed(c.loss, 6) + "," + fixed(c.metrics.accuracy) + "," +
           fixed(c.metrics.precision) + "," + fixed(c.metrics.recall) + "," + fixed(c.metrics.f1) + "\n";
  }
  return out;
}

// ---- runs -----------------------------------------------------------------

struct TrainedRun {
  Vocabulary vocab;
  SpeakerTable speakers;
  std::size_t acoustic_dim = 0;
  std::optional<VyangModel> model;
};

inline Vocabulary training_vocabulary(const std::vector<const Sample*>& train) {
  std::vector<std::string> texts;
  for (const Sample* s : train) {
    if (s->utterance.text) texts.push_back(*s->utterance.text);
    for (const auto& c : s->context)
      if (c.text) texts.push_back(*c.text);
  }
  return Vocabulary::build(texts);
}

inline SpeakerTable training_speakers(const std::vector<const Sample*>& train) {
  std::vector<std::string> names;
  for (const Sample* s : train) {
    names.push_back(s->utterance.speaker);
    for (const auto& c : s->context) names.push_back(c.speaker);
  }
  return SpeakerTable::build(names);
}

// Frame geometry comes from the data.
inline ModelConfig fit_visual_geometry(ModelConfig c, const std::vector<const Sample*>& train) {
  for (const Sample* s : train) {
    if (!s->utterance.frames) continue;
    const Tensor& f = *s->utterance.frames;
    c.visual.channels = f.dim(1);
    c.visual.height = f.dim(2);
    c.visual.width = f.dim(3);
    break;
  }
  return c;
}

inline void save_run(const std::filesystem::path& dir, TrainedRun& run, const std::vector<CurveRecord>& curve) {
  std::filesystem::create_directories(dir);
  write_file_bytes(dir / "curves.csv", curves_csv(curve));
  write_file_bytes(dir / "vocab.tsv", run.vocab.to_tsv());
  write_file_bytes(dir / "speakers.tsv", run.speakers.to_tsv());
  write_file_bytes(dir / "config.json", model_config_json(run.model->config, run.acoustic_dim).dump(2) + "\n");
  write_checkpoint(dir / "model.ckpt", model_state(*run.model));
}

inline TrainedRun load_run(const std::filesystem::path& dir) {
  TrainedRun run;
  ModelConfig cfg = model_config_from_json(nlohmann::json::parse(read_file_bytes(dir / "config.json")), run.acoustic_dim);
  run.vocab = Vocabulary::from_tsv(read_file_bytes(dir / "vocab.tsv"));
  run.speakers = SpeakerTable::from_tsv(read_file_bytes(dir / "speakers.tsv"));
  run.model.emplace(cfg, run.vocab, run.speakers, run.acoustic_dim);
  load_model_state(*run.model, read_checkpoint(dir / "model.ckpt"));
  return run;
}

// Trains one (mask, variant) model on `train` and evaluates `test`.
inline FoldResult run_fold(const ExperimentConfig& cfg, const ModalityMask& mask, Variant variant, std::size_t fold,
                           std::size_t acoustic_dim, const std::vector<const Sample*>& train,
                           const std::vector<const Sample*>& test, const std::vector<EvalSet>& curve_sets,
                           const std::filesystem::path& run_dir) {
  if (train.empty() || test.empty()) throw Error("empty train or test partition");
  TrainedRun run;
  run.vocab = training_vocabulary(train);
  run.speakers = training_speakers(train);
  run.acoustic_dim = acoustic_dim;
  ModelConfig mc = fit_visual_geometry(cfg.model, train);
  mc.mask = mask;
  mc.variant = variant;
  mc.seed = fold_seed(cfg.seed, fold);
  if (mask.acoustic && acoustic_dim == 0) throw Error("acoustic modality requested but the dataset has no audio");
  run.model.emplace(mc, run.vocab, run.speakers, acoustic_dim);
  TrainConfig tc = cfg.train;
  tc.seed = fold_seed(cfg.seed, fold);
  TrainOptions opts;
  opts.curve_every = cfg.curve_every;
  FoldResult fr;
  fr.fold = fold;
  fr.curve = train_model(*run.model, train, tc, curve_sets, opts);
  fr.test = evaluate(*run.model, test).metrics;
  if (!run_dir.empty()) save_run(run_dir, run, fr.curve);
  return fr;
}

// `second` is the test dataset for cross-dataset splits.
inline ExperimentResult run_experiment(const Dataset& ds, const ExperimentConfig& cfg, const Dataset* second = nullptr) {
  cfg.train.validate();
  struct Partition {
    std::vector<const Sample*> train, val, test;
  };
  std::vector<Partition> parts;
  switch (cfg.split) {
    case SplitKind::kfold:
      for (const auto& f : kfold_splits(dataset_labels(ds), cfg.folds, cfg.seed, cfg.stratify))
        parts.push_back({select(ds, f.train), {}, select(ds, f.test)});
      break;
    case SplitKind::independent: {
      Fold f = speaker_independent_split(ds);
      parts.push_back({select(ds, f.train), {}, select(ds, f.test)});
      break;
    }
    case SplitKind::cross: {
      if (second == nullptr) throw Error("cross-dataset split needs a test dataset");
      Fold f = cross_dataset_split(ds.size(), second->size(), cfg.seed);
      parts.push_back({select(ds, f.train), select(ds, f.val), select(*second, f.test)});
      break;
    }
  }
  std::size_t acoustic_dim = ds.acoustic_dim;
  if (second && second->acoustic_dim != 0 && acoustic_dim != 0 && second->acoustic_dim != acoustic_dim) {
    throw DimensionError("cross-dataset split: audio feature dims differ (" + std::to_string(acoustic_dim) + " vs " +
                         std::to_string(second->acoustic_dim) + ")");
  }

  std::vector<ModalityMask> masks;
  for (const auto& m : ModalityMask::table_rows())
    for (const auto& want : cfg.masks)
      if (m == want) {
        masks.push_back(m);
        break;
      }
  std::set<Variant> wanted(cfg.variants.begin(), cfg.variants.end());
  if (masks.empty() || wanted.empty()) throw Error("experiment: no masks or variants selected");

  ExperimentResult res;
  for (const auto& mask : masks) {
    for (Variant v : {Variant::full, Variant::no_tokenizer_attn, Variant::no_depth_attn, Variant::no_mha}) {
      if (!wanted.count(v)) continue;
      RunResult row;
      row.mask = mask;
      row.variant = v;
      std::vector<MetricsReport> reports;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        const Partition& p = parts[i];
        std::vector<EvalSet> curve_sets;
        if (!p.val.empty()) curve_sets.push_back({"val", p.val});
        curve_sets.push_back({"test", p.test});
        std::filesystem::path dir;
        if (!cfg.out.empty())
          dir = cfg.out / "runs" / (mask_slug(mask) + "_" + variant_name(v)) / ("fold" + std::to_string(i));
        std::string tag = "[" + mask.label() + ", " + variant_name(v) + ", fold " + std::to_string(i) + "] ";
        try {
          row.folds.push_back(run_fold(cfg, mask, v, i, acoustic_dim, p.train, p.test, curve_sets, dir));
        } catch (const std::exception& e) {
          throw Error(tag + e.what());
        }
        reports.push_back(row.folds.back().test);
        if (cfg.log) cfg.log(tag + "accuracy " + experiment_detail::fixed(reports.back().accuracy));
      }
      row.aggregate = aggregate_folds(reports);
      res.rows.push_back(std::move(row));
    }
  }
  if (!cfg.out.empty()) {
    std::filesystem::create_directories(cfg.out);
    Table t = metrics_table(res, cfg.macro);
    write_file_bytes(cfg.out / "metrics.csv", t.csv());
    write_file_bytes(cfg.out / "metrics.txt", t.text());
    write_file_bytes(cfg.out / "folds.csv", folds_table(res, cfg.macro).csv());
  }
  return res;
}

}  // namespace vyang
