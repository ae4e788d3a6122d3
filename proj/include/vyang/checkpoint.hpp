#pragma once

// Checkpoint container: a text index followed by concatenated VTF entries.
//
//   VCKPT1\n
//   <entries>\n
//   <name>\t<offset>\t<bytes>\t<shape>\n   (one per entry; offset into the payload)
//   \n
//   <payload>

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vyang/model.hpp"
#include "vyang/vtf.hpp"

namespace vyang {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr const char* kCheckpointMagic = "VCKPT1";

inline std::string encode_checkpoint(const NamedTensors& entries) {
  std::string index, payload;
  index += std::string(kCheckpointMagic) + "\n" + std::to_string(entries.size()) + "\n";
  for (const auto& [name, t] : entries) {
    if (name.empty() || name.find_first_of("\t\n") != std::string::npos)
      throw Error("checkpoint: invalid entry name '" + name + "'");
    std::string blob = encode_vtf(t);
    index += name + "\t" + std::to_string(payload.size()) + "\t" + std::to_string(blob.size()) + "\t" +
             shape_str(t.shape()) + "\n";
    payload += blob;
  }
  return index + "\n" + payload;
}

inline NamedTensors decode_checkpoint(const std::string& bytes, const std::string& context = "checkpoint") {
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw IoError(context + ": not a checkpoint container");
  if (!std::getline(in, line)) throw IoError(context + ": truncated index");
  std::size_t count = 0;
  try {
    count = std::stoul(line);
  } catch (const std::exception&) {
    throw IoError(context + ": bad entry count '" + line + "'");
  }
  struct Row {
    std::string name;
    std::size_t offset, size;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw IoError(context + ": truncated index");
    std::istringstream fields(line);
    Row r;
    std::string off, len;
    if (!std::getline(fields, r.name, '\t') || !std::getline(fields, off, '\t') || !std::getline(fields, len, '\t'))
      throw IoError(context + ": malformed index line '" + line + "'");
    r.offset = std::stoul(off);
    r.size = std::stoul(len);
    rows.push_back(r);
  }
  if (!std::getline(in, line) || !line.empty()) throw IoError(context + ": missing index terminator");
  auto base = static_cast<std::size_t>(in.tellg());
  NamedTensors out;
  for (const auto& r : rows) {
    if (base + r.offset + r.size > bytes.size()) throw IoError(context + ": entry " + r.name + " out of range");
    out.emplace_back(r.name, decode_vtf(bytes.substr(base + r.offset, r.size), context + ":" + r.name));
  }
  return out;
}

inline void write_checkpoint(const std::filesystem::path& p, const NamedTensors& e) {
  write_file_bytes(p, encode_checkpoint(e));
}
inline NamedTensors read_checkpoint(const std::filesystem::path& p) {
  return decode_checkpoint(read_file_bytes(p), p.string());
}

// Parameters in visit order, then fitted buffers.
inline NamedTensors model_state(VyangModel& m) {
  NamedTensors out;
  m.visit([&](Parameter& p) { out.emplace_back(p.name, p.value); });
  m.visit_buffers([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

// Every model tensor must be present with its shape; extra entries are an error too.
inline void load_model_state(VyangModel& m, const NamedTensors& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : entries)
    if (!by_name.emplace(n, &t).second) throw Error("checkpoint: duplicate entry " + n);
  std::size_t used = 0;
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint: missing entry " + name);
    if (it->second->shape() != dst.shape()) {
      throw DimensionError("checkpoint: entry " + name + " has shape " + shape_str(it->second->shape()) +
                           ", model expects " + shape_str(dst.shape()));
    }
    dst = *it->second;
    ++used;
  };
  m.visit([&](Parameter& p) { take(p.name, p.value); });
  m.visit_buffers(take);
  if (used != by_name.size()) throw Error("checkpoint: entries not present in the model");
}

}  // namespace vyang
