#pragma once

// Manifest loading. One JSON object per line:
//   {"id", "show", "text", "speaker", "label", "frames", "audio",
//    "context": [{"text", "speaker", "frames", "audio"}, ...]}
// Media paths are relative to the manifest's directory. Frames are VTF
// tensors [N_u,C,H,W] (or [C,H,W] for a single frame); audio is a WAV file
// (features extracted on load) or a precomputed VTF vector.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vyang/acoustic.hpp"
#include "vyang/sample.hpp"
#include "vyang/visual.hpp"
#include "vyang/vtf.hpp"
#include "vyang/wav.hpp"

namespace vyang {

struct Dataset {
  std::vector<Sample> samples;
  std::filesystem::path manifest;
  std::size_t acoustic_dim = 0;  // 0 when no sample has audio

  std::size_t size() const { return samples.size(); }
  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.label == 1;
    return n;
  }
  std::size_t negatives() const { return size() - positives(); }

  std::vector<const Sample*> all() const {
    std::vector<const Sample*> out;
    for (const auto& s : samples) out.push_back(&s);
    return out;
  }
};

struct LoadOptions {
  AcousticConfig acoustic;
  bool load_media = true;
};

namespace dataset_detail {

using nlohmann::json;

inline bool has_suffix(const std::string& s, const std::string& suf) {
  if (s.size() < suf.size()) return false;
  for (std::size_t i = 0; i < suf.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[s.size() - suf.size() + i])) != suf[i]) return false;
  return true;
}

class Loader {
 public:
  Loader(std::filesystem::path root, const LoadOptions& opts) : root_(std::move(root)), opts_(opts), extractor_(opts.acoustic) {}

  Sample sample(const json& j, std::size_t line) {
    where_ = "manifest line " + std::to_string(line);
    if (!j.is_object()) throw Error(where_ + ": expected a JSON object");
    Sample s;
    s.id = str(j, "id");
    where_ += " (sample " + s.id + ")";
    s.show = str(j, "show");
    const json& label = field(j, "label");
    if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1))
      throw Error(where_ + ": field 'label' must be 0 or 1");
    s.label = label.get<int>();
    s.utterance = turn(j, "");
    if (j.contains("context") && !j["context"].is_null()) {
      if (!j["context"].is_array()) throw Error(where_ + ": field 'context' must be an array");
      std::size_t k = 0;
      for (const auto& c : j["context"]) {
        if (!c.is_object()) throw Error(where_ + ": context entry " + std::to_string(k) + " is not an object");
        s.context.push_back(turn(c, "context[" + std::to_string(k++) + "]."));
      }
    }
    return s;
  }

  std::size_t acoustic_dim() const { return audio_dim_; }

 private:
  const json& field(const json& j, const std::string& name, const std::string& prefix = "") const {
    if (!j.contains(name)) throw Error(where_ + ": missing field '" + prefix + name + "'");
    return j[name];
  }

  std::string str(const json& j, const std::string& name, const std::string& prefix = "") const {
    const json& v = field(j, name, prefix);
    if (!v.is_string()) throw Error(where_ + ": field '" + prefix + name + "' must be a string");
    return v.get<std::string>();
  }

  std::string optional_path(const json& j, const std::string& name, const std::string& prefix) const {
    if (!j.contains(name) || j[name].is_null()) return {};
    if (!j[name].is_string()) throw Error(where_ + ": field '" + prefix + name + "' must be a path string");
    return j[name].get<std::string>();
  }

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : root_ / path;
  }

  Turn turn(const json& j, const std::string& prefix) {
    Turn t;
    const json& text = field(j, "text", prefix);
    if (!text.is_null()) {
      if (!text.is_string()) throw Error(where_ + ": field '" + prefix + "text' must be a string or null");
      t.text = text.get<std::string>();
    }
    const json& spk = field(j, "speaker", prefix);
    if (!spk.is_null() && !spk.is_string()) throw Error(where_ + ": field '" + prefix + "speaker' must be a string");
    if (spk.is_string()) t.speaker = spk.get<std::string>();
    t.frames_path = optional_path(j, "frames", prefix);
    t.audio_path = optional_path(j, "audio", prefix);
    if (!opts_.load_media) return t;
    if (!t.frames_path.empty()) t.frames = frames(resolve(t.frames_path));
    if (!t.audio_path.empty()) t.audio = audio(resolve(t.audio_path));
    return t;
  }

  Tensor frames(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw IoError(where_ + ": missing frames file " + p.string());
    Tensor f = read_vtf(p);
    if (f.rank() == 3) f = f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)});
    if (f.rank() != 4 || f.numel() == 0)
      throw DimensionError(where_ + ": frames " + p.string() + " have shape " + shape_str(f.shape()) +
                           ", expected [N,C,H,W]");
    return clamp_frames(std::move(f));
  }

  Tensor audio(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw IoError(where_ + ": missing audio file " + p.string());
    Tensor a;
    if (has_suffix(p.string(), ".wav")) {
      a = extractor_.utterance_feature(read_wav(p));
    } else {
      a = read_vtf(p);
      if (a.rank() != 1) throw DimensionError(where_ + ": audio features " + p.string() + " must be a vector");
    }
    if (audio_dim_ == 0) audio_dim_ = a.numel();
    if (a.numel() != audio_dim_) {
      throw DimensionError(where_ + ": audio " + p.string() + " has " + std::to_string(a.numel()) +
                           " features, earlier samples have " + std::to_string(audio_dim_));
    }
    return a;
  }

  std::filesystem::path root_;
  LoadOptions opts_;
  AcousticExtractor extractor_;
  std::size_t audio_dim_ = 0;
  std::string where_;
};

}  // namespace dataset_detail

inline Dataset load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Dataset ds;
  ds.manifest = path;
  dataset_detail::Loader loader(path.parent_path(), opts);
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(path.string() + ": manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    Sample s = loader.sample(j, lineno);
    if (!seen.insert(s.id).second) {
      throw Error(path.string() + ": manifest line " + std::to_string(lineno) + ": duplicate id '" + s.id + "'");
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw Error(path.string() + ": no samples");
  ds.acoustic_dim = loader.acoustic_dim();
  return ds;
}

// Manifest record for a sample, using its stored media paths.
inline nlohmann::json sample_record(const Sample& s) {
  auto turn = [](const Turn& t, nlohmann::json& j) {
    j["text"] = t.text ? nlohmann::json(*t.text) : nlohmann::json(nullptr);
    j["speaker"] = t.speaker;
    j["frames"] = t.frames_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(t.frames_path);
    j["audio"] = t.audio_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(t.audio_path);
  };
  nlohmann::json j;
  j["id"] = s.id;
  j["show"] = s.show;
  j["label"] = s.label;
  turn(s.utterance, j);
  j["context"] = nlohmann::json::array();
  for (const auto& c : s.context) {
    nlohmann::json cj;
    turn(c, cj);
    j["context"].push_back(cj);
  }
  return j;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) out += sample_record(s).dump() + "\n";
  write_file_bytes(path, out);
}

}  // namespace vyang
