#pragma once

// Evaluation splits as index lists into a dataset.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "vyang/dataset.hpp"
#include "vyang/random.hpp"

namespace vyang {

enum class SplitKind { kfold, independent, cross };

inline std::string split_name(SplitKind k) {
  switch (k) {
    case SplitKind::kfold: return "kfold";
    case SplitKind::independent: return "independent";
    case SplitKind::cross: return "cross";
  }
  return "?";
}

inline SplitKind parse_split(const std::string& s) {
  for (SplitKind k : {SplitKind::kfold, SplitKind::independent, SplitKind::cross})
    if (split_name(k) == s) return k;
  throw Error("unknown split '" + s + "' (expected kfold, independent or cross)");
}

// For cross-dataset splits `test` indexes the second dataset; `val` is only
// used for curves.
struct Fold {
  std::vector<std::size_t> train, val, test;
};

// Seeded shuffle cut into k contiguous near-equal folds (sizes differ by at
// most one). Stratified folds deal each label's shuffled samples round-robin.
inline std::vector<Fold> kfold_splits(const std::vector<int>& labels, std::size_t k, std::uint64_t seed,
                                      bool stratify = false) {
  std::size_t n = labels.size();
  if (k < 2) throw Error("k-fold needs at least 2 folds, got " + std::to_string(k));
  if (k > n) throw Error("k-fold: " + std::to_string(k) + " folds for " + std::to_string(n) + " samples");
  std::vector<std::size_t> fold_of(n);
  auto order = seeded_permutation(n, seed, "kfold");
  if (stratify) {
    std::stable_partition(order.begin(), order.end(), [&](std::size_t i) { return labels[i] == 1; });
    for (std::size_t j = 0; j < n; ++j) fold_of[order[j]] = j % k;
  } else {
    for (std::size_t f = 0; f < k; ++f)
      for (std::size_t j = f * n / k; j < (f + 1) * n / k; ++j) fold_of[order[j]] = f;
  }
  std::vector<Fold> folds(k);
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  return folds;
}

inline constexpr const char* kIndependentTestShow = "FRIENDS";

inline Fold speaker_independent_split(const Dataset& ds) {
  Fold f;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (ds.samples[i].show == kIndependentTestShow ? f.test : f.train).push_back(i);
  if (f.test.empty()) throw Error("speaker-independent split: no samples with show FRIENDS");
  if (f.train.empty()) throw Error("speaker-independent split: every sample is from FRIENDS");
  return f;
}

// Train/val from the first dataset (80/10 with floor rounding; the remaining
// tenth is held back, floor remainders go to train), test is 10% of the second.
inline Fold cross_dataset_split(std::size_t n_train_ds, std::size_t n_test_ds, std::uint64_t seed) {
  if (n_train_ds == 0 || n_test_ds == 0) throw Error("cross-dataset split: empty dataset");
  std::size_t val = n_train_ds / 10, held = n_train_ds / 10;
  std::size_t test = n_test_ds / 10;
  if (n_train_ds - val - held == 0 || test == 0)
    throw Error("cross-dataset split: datasets of " + std::to_string(n_train_ds) + " and " +
                std::to_string(n_test_ds) + " samples leave an empty partition");
  auto a = seeded_permutation(n_train_ds, seed, "cross/train");
  auto b = seeded_permutation(n_test_ds, seed, "cross/test");
  Fold f;
  f.val.assign(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(val));
  f.train.assign(a.begin() + static_cast<std::ptrdiff_t>(val + held), a.end());
  f.test.assign(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(test));
  for (auto* v : {&f.train, &f.val, &f.test}) std::sort(v->begin(), v->end());
  return f;
}

inline std::vector<int> dataset_labels(const Dataset& ds) {
  std::vector<int> out;
  for (const auto& s : ds.samples) out.push_back(s.label);
  return out;
}

inline std::vector<const Sample*> select(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<const Sample*> out;
  for (std::size_t i : idx) out.push_back(&ds.samples.at(i));
  return out;
}

}  // namespace vyang
