#pragma once

// Planted-signal datasets. The label is carried by a marker word in the
// text, a coloured patch in the frames (red for sarcastic, blue otherwise)
// and a tone in the audio (1200 Hz vs 400 Hz). A modality with reliability r
// shows the opposite class's signal on a (1 - r) share of the samples. The
// wrong samples of different modalities are disjoint while the shares add up
// to at most one, so the majority of the three signals is always the label.

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "vyang/dataset.hpp"
#include "vyang/random.hpp"
#include "vyang/vtf.hpp"
#include "vyang/wav.hpp"

namespace vyang {

struct SynthConfig {
  std::size_t n = 200;
  std::uint64_t seed = 0;
  std::array<double, 3> reliability{1.0, 1.0, 1.0};  // G, V, A
  std::size_t context = 1;                           // turns per sample
  std::size_t frames = 1;                            // per utterance
  std::size_t channels = 3, height = 8, width = 8;
  std::size_t patch = 3;
  std::uint32_t sample_rate = 8000;
  std::size_t audio_samples = 2000;
  std::size_t min_words = 12, max_words = 18;
  std::size_t marker_window = 3;  // the marker lands in one of the first positions
  double friends_share = 0.2;

  void validate() const {
    if (n < 10) throw Error("synthetic dataset needs n >= 10");
    for (double r : reliability)
      if (!(r >= 0.0 && r <= 1.0)) throw Error("signal reliability must be in [0, 1]");
    if (channels < 3) throw Error("synthetic frames need 3 channels");
    if (patch > height || patch > width) throw Error("patch larger than the frame");
    if (min_words < 4 || max_words < min_words) throw Error("bad sentence length range");
    if (marker_window == 0 || marker_window > min_words) throw Error("marker window must be in [1, min_words]");
  }
};

inline constexpr const char* kPositiveMarker = "totally";
inline constexpr const char* kNegativeMarker = "honestly";
inline constexpr double kPositiveTone = 1200.0;
inline constexpr double kNegativeTone = 400.0;

// Per-sample planted values, for oracles.
struct SynthRecord {
  std::string id;
  int label = 0;
  std::array<int, 3> shown{0, 0, 0};  // class whose signal each modality shows
};

namespace synth_detail {

inline const std::vector<std::string>& filler() {
  static const std::vector<std::string> w{
      "the",   "a",     "we",     "you",   "it",    "was",    "is",    "that",  "this",   "so",
      "just",  "party", "coffee", "work",  "today", "really", "about", "going", "there",  "time",
      "thing", "never", "people", "home",  "later", "maybe",  "told",  "like",  "always", "again"};
  return w;
}

inline const std::vector<std::string>& speakers() {
  static const std::vector<std::string> s{"CHANDLER", "MONICA", "JOEY", "SHELDON", "PENNY", "DOROTHY"};
  return s;
}

inline std::string sentence(CounterRng& rng, const SynthConfig& c, const char* marker) {
  std::size_t len = c.min_words + rng.below(c.max_words - c.min_words + 1);
  std::size_t at = marker ? rng.below(c.marker_window) : len;
  std::string out;
  for (std::size_t i = 0; i < len; ++i) {
    const std::string& w = i == at ? std::string(marker) : filler()[rng.below(filler().size())];
    out += (i ? " " : "") + w;
  }
  return out;
}

// colour: 0 red, 1 blue, -1 no patch
inline Tensor frames(CounterRng& rng, const SynthConfig& c, int colour) {
  Tensor t(Shape{c.frames, c.channels, c.height, c.width});
  for (double& v : t.data()) v = rng.uniform(0.0, 0.4);
  if (colour < 0) return t;
  std::size_t ch = colour == 0 ? 0 : 2;
  for (std::size_t f = 0; f < c.frames; ++f) {
    std::size_t y0 = rng.below(c.height - c.patch + 1), x0 = rng.below(c.width - c.patch + 1);
    for (std::size_t y = y0; y < y0 + c.patch; ++y)
      for (std::size_t x = x0; x < x0 + c.patch; ++x) t.at({f, ch, y, x}) = 0.9 + rng.uniform(0.0, 0.1);
  }
  return t;
}

inline Waveform tone(CounterRng& rng, const SynthConfig& c, double hz) {
  Waveform w;
  w.sample_rate = c.sample_rate;
  double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (std::size_t i = 0; i < c.audio_samples; ++i) {
    double t = static_cast<double>(i) / c.sample_rate;
    w.samples.push_back(0.5 * std::sin(2.0 * M_PI * hz * t + phase) + 0.02 * rng.normal());
  }
  return w;
}

}  // namespace synth_detail

// Writes manifest.jsonl and media/ under `dir`; returns the planted values.
inline std::vector<SynthRecord> generate_synthetic_dataset(const std::filesystem::path& dir, const SynthConfig& c) {
  using namespace synth_detail;
  c.validate();
  std::filesystem::create_directories(dir / "media");
  const std::size_t n = c.n;

  std::vector<SynthRecord> recs(n);
  auto by_label = seeded_permutation(n, c.seed, "synth/labels");
  for (std::size_t i = 0; i < n; ++i) recs[by_label[i]].label = i < n / 2 ? 1 : 0;
  for (auto& r : recs) r.shown = {r.label, r.label, r.label};

  // consecutive runs of one permutation; wraps (and overlaps) once the shares exceed one
  auto by_error = seeded_permutation(n, c.seed, "synth/errors");
  std::size_t cursor = 0;
  for (std::size_t m = 0; m < 3; ++m) {
    auto wrong = static_cast<std::size_t>(std::lround((1.0 - c.reliability[m]) * static_cast<double>(n)));
    for (std::size_t j = 0; j < wrong; ++j) {
      SynthRecord& r = recs[by_error[(cursor + j) % n]];
      r.shown[m] = 1 - r.label;
    }
    cursor += wrong;
  }

  auto by_show = seeded_permutation(n, c.seed, "synth/shows");
  auto friends = static_cast<std::size_t>(std::lround(c.friends_share * static_cast<double>(n)));
  std::vector<std::string> show(n);
  const std::vector<std::string> others{"BBT", "GOLDENGIRLS", "SARCASMAHOLICS"};
  for (std::size_t i = 0; i < n; ++i) show[by_show[i]] = i < friends ? "FRIENDS" : others[i % others.size()];

  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    SynthRecord& r = recs[i];
    char buf[32];
    std::snprintf(buf, sizeof buf, "syn%05zu", i);
    r.id = buf;
    CounterRng rng(c.seed, "synth/sample/" + r.id);
    auto media = [&](const std::string& tag, int colour, double hz, Turn& t) {
      t.frames_path = "media/" + r.id + "_" + tag + ".vtf";
      t.audio_path = "media/" + r.id + "_" + tag + ".wav";
      write_vtf(dir / t.frames_path, frames(rng, c, colour));
      write_wav(dir / t.audio_path, tone(rng, c, hz));
    };
    Sample s;
    s.id = r.id;
    s.show = show[i];
    s.label = r.label;
    for (std::size_t k = 0; k < c.context; ++k) {
      Turn t;
      t.text = sentence(rng, c, nullptr);
      t.speaker = speakers()[rng.below(speakers().size())];
      media("c" + std::to_string(k), static_cast<int>(rng.below(2)), rng.below(2) ? kPositiveTone : kNegativeTone, t);
      s.context.push_back(std::move(t));
    }
    Turn& u = s.utterance;
    u.text = sentence(rng, c, r.shown[0] ? kPositiveMarker : kNegativeMarker);
    u.speaker = speakers()[rng.below(speakers().size())];
    media("u", r.shown[1] ? 0 : 1, r.shown[2] ? kPositiveTone : kNegativeTone, u);
    samples.push_back(std::move(s));
  }
  write_manifest(dir / "manifest.jsonl", samples);
  return recs;
}

}  // namespace vyang
