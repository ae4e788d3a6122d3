#pragma once

// Pieces shared by the three branches: the speaker one-hot table and the
// fixed-slot context layout.

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vyang/autograd.hpp"
#include "vyang/ops.hpp"
#include "vyang/vtf.hpp"

namespace vyang {

// Known speakers in sorted order take indices [0, n); index n is UNKNOWN.
class SpeakerTable {
 public:
  SpeakerTable() = default;

  static SpeakerTable build(const std::vector<std::string>& names) {
    SpeakerTable t;
    std::vector<std::string> sorted;
    for (const auto& n : names)
      if (!n.empty()) sorted.push_back(n);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) t.index_.emplace(sorted[i], i);
    t.names_ = std::move(sorted);
    return t;
  }

  std::size_t dim() const { return names_.size() + 1; }
  std::size_t unknown_index() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? unknown_index() : it->second;
  }

  // An empty name means the record has no speaker: all zeros.
  Tensor encode(const std::string& name) const {
    Tensor t(Shape{dim()}, 0.0);
    if (!name.empty()) t[index(name)] = 1.0;
    return t;
  }

  std::string to_tsv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < names_.size(); ++i) os << names_[i] << '\t' << i << '\n';
    os << "<unknown>\t" << unknown_index() << '\n';
    return os.str();
  }

  static SpeakerTable from_tsv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<std::pair<std::size_t, std::string>> rows;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw IoError("speaker table line without tab: " + line);
      rows.emplace_back(std::stoul(line.substr(tab + 1)), line.substr(0, tab));
    }
    if (rows.empty() || rows.back().second != "<unknown>") throw IoError("speaker table must end with <unknown>");
    rows.pop_back();
    std::vector<std::string> names;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].first != i) throw IoError("speaker table ids must be dense and ordered");
      names.push_back(rows[i].second);
    }
    return build(names);
  }

  bool operator==(const SpeakerTable& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

inline Var append_speaker(Tape& tape, const Var& feat, const Tensor& speaker) {
  return concat({feat, tape.constant(speaker)}, 0);
}

// Lays out the most recent `slots` context blocks chronologically, with
// zero blocks in front when fewer exist. Returns an empty vector for slots == 0.
template <class Encode>
std::vector<Var> context_slots(Tape& tape, std::size_t available, std::size_t slots, std::size_t block_dim,
                               Encode&& encode) {
  std::vector<Var> out;
  if (slots == 0) return out;
  std::size_t used = std::min(available, slots);
  for (std::size_t i = used; i < slots; ++i) out.push_back(tape.constant(Tensor(Shape{block_dim}, 0.0)));
  for (std::size_t i = available - used; i < available; ++i) out.push_back(encode(i));
  return out;
}

inline Var concat_blocks(const std::vector<Var>& blocks) {
  return blocks.size() == 1 ? blocks[0] : concat(blocks, 0);
}

}  // namespace vyang
