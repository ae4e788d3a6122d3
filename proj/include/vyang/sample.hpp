#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vyang/tensor.hpp"

namespace vyang {

// One utterance as seen by the three branches. Media is loaded eagerly:
// `frames` is [N_u, C, H, W]; `audio` is the mean-pooled acoustic feature
// vector without speaker (either extracted from a WAV or read precomputed).
struct Turn {
  std::optional<std::string> text;
  std::string speaker;  // empty when the record carries no speaker
  std::string frames_path;
  std::string audio_path;
  std::optional<Tensor> frames;
  std::optional<Tensor> audio;
};

struct Sample {
  std::string id;
  std::string show;
  Turn utterance;
  std::vector<Turn> context;  // chronological, oldest first
  int label = 0;              // 1 = sarcastic
};

}  // namespace vyang
