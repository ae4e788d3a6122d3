#pragma once

// Mini-batch training with per-sample tapes, batch-averaged gradients and
// Adam, plus evaluation and per-epoch curve records.

#include <functional>
#include <string>
#include <vector>

#include "vyang/metrics.hpp"
#include "vyang/model.hpp"

namespace vyang {

struct CurveRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0;
  MetricsReport metrics;
};

struct EvalSet {
  std::string name;
  std::vector<const Sample*> samples;
};

struct Evaluation {
  double loss = 0;
  MetricsReport metrics;
  std::vector<int> predictions;
};

// Throws naming the first sample that lacks a masked-in modality.
inline void check_modalities(const std::vector<const Sample*>& samples, const ModalityMask& mask) {
  for (const Sample* s : samples) {
    if (mask.glossary && !s->utterance.text) throw Error("sample " + s->id + ": missing glossary text");
    if (mask.visual && !s->utterance.frames) throw Error("sample " + s->id + ": missing visual frames");
    if (mask.acoustic && !s->utterance.audio) throw Error("sample " + s->id + ": missing acoustic features");
  }
}

inline Evaluation evaluate(VyangModel& model, const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw Error("evaluate: empty sample set");
  check_modalities(samples, model.config.mask);
  Evaluation ev;
  std::vector<int> labels;
  double total = 0;
  for (const Sample* s : samples) {
    Tape tape(false);
    Var p = model.probabilities(tape, *s);
    total += cross_entropy(p, s->label).value().item();
    ev.predictions.push_back(p.value()[1] > 0.5 ? 1 : 0);
    labels.push_back(s->label);
  }
  ev.loss = total / static_cast<double>(samples.size());
  ev.metrics = compute_metrics(ev.predictions, labels);
  return ev;
}

struct TrainOptions {
  // Curve records are taken every `curve_every` epochs and at the last epoch; 0 means last only.
  std::size_t curve_every = 1;
  std::function<void(const CurveRecord&)> on_record;
};

// Trains in place. `curve_sets` are evaluated (eval mode) whenever a curve record is due;
// a set named "train" over the training samples is always included first.
inline std::vector<CurveRecord> train_model(VyangModel& model, const std::vector<const Sample*>& train,
                                            const TrainConfig& cfg, const std::vector<EvalSet>& curve_sets = {},
                                            const TrainOptions& opts = {}) {
  cfg.validate();
  if (train.empty()) throw Error("train: empty training set");
  check_modalities(train, model.config.mask);
  std::vector<CurveRecord> curve;
  if (cfg.epochs == 0) return curve;
  model.fit_normalization(train);
  auto params = model.parameters();
  AdamState adam;
  AdamConfig acfg;
  acfg.lr = cfg.learning_rate;
  std::vector<EvalSet> sets{{"train", train}};
  sets.insert(sets.end(), curve_sets.begin(), curve_sets.end());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = seeded_permutation(train.size(), cfg.seed, "epoch" + std::to_string(epoch));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (Parameter* p : params) p->zero_grad();
      double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = *train[order[i]];
        CounterRng rng(cfg.seed, "dropout/" + std::to_string(epoch) + "/" + std::to_string(i));
        Tape tape;
        Var loss = scale(cross_entropy(classify(model.logits(tape, s, Mode::train, &rng, cfg.dropout)), s.label), inv);
        tape.backward(loss);
      }
      adam_step(params, adam, acfg);
    }
    bool due = epoch == cfg.epochs || (opts.curve_every != 0 && epoch % opts.curve_every == 0);
    if (!due) continue;
    for (const auto& set : sets) {
      if (set.samples.empty()) continue;
      Evaluation ev = evaluate(model, set.samples);
      curve.push_back(CurveRecord{epoch, set.name, ev.loss, ev.metrics});
      if (opts.on_record) opts.on_record(curve.back());
    }
  }
  return curve;
}

}  // namespace vyang
