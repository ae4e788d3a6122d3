#pragma once

// VTF binary tensor files:
//   "VTF1" | dtype u8 (0 = f32, 1 = f64) | ndim u8 | ndim x u32 LE dims | row-major payload (LE)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vyang/tensor.hpp"

namespace vyang {

class IoError : public Error {
 public:
  using Error::Error;
};

enum class VtfDtype : std::uint8_t { f32 = 0, f64 = 1 };

static_assert(std::endian::native == std::endian::little, "VTF I/O assumes a little-endian host");

namespace vtf_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(const std::string& buf, std::string context) : buf_(buf), ctx_(std::move(context)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError(ctx_ + ": truncated VTF data");
  }
  std::size_t pos() const { return pos_; }
  const char* cur() const { return buf_.data() + pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::string& buf_;
  std::string ctx_;
  std::size_t pos_ = 0;
};

}  // namespace vtf_detail

inline std::string encode_vtf(const Tensor& t, VtfDtype dtype = VtfDtype::f64) {
  if (t.rank() > 255) throw IoError("VTF supports at most 255 dimensions");
  std::string out = "VTF1";
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xffffffffULL) throw IoError("VTF dimension exceeds u32");
    vtf_detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  if (dtype == VtfDtype::f64) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(double));
  } else {
    for (double v : t.data()) {
      float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  return out;
}

inline Tensor decode_vtf(const std::string& buf, const std::string& context = "VTF") {
  vtf_detail::Reader r(buf, context);
  r.need(4);
  if (std::memcmp(r.cur(), "VTF1", 4) != 0) throw IoError(context + ": bad VTF magic");
  r.skip(4);
  auto dtype = r.get<std::uint8_t>();
  if (dtype > 1) throw IoError(context + ": unknown VTF dtype code " + std::to_string(dtype));
  auto ndim = r.get<std::uint8_t>();
  if (ndim == 0) throw IoError(context + ": VTF tensor with zero dimensions");
  Shape shape(ndim);
  for (auto& d : shape) {
    d = r.get<std::uint32_t>();
    if (d == 0) throw IoError(context + ": VTF dimension of size zero");
  }
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  if (dtype == 1) {
    r.need(n * 8);
    std::memcpy(data.data(), r.cur(), n * 8);
    r.skip(n * 8);
  } else {
    r.need(n * 4);
    for (std::size_t i = 0; i < n; ++i) data[i] = r.get<float>();
  }
  if (r.pos() != buf.size()) throw IoError(context + ": trailing bytes after VTF payload");
  return Tensor(std::move(shape), std::move(data));
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + p.string());
}

inline Tensor read_vtf(const std::filesystem::path& p) { return decode_vtf(read_file_bytes(p), p.string()); }

inline void write_vtf(const std::filesystem::path& p, const Tensor& t, VtfDtype dtype = VtfDtype::f64) {
  write_file_bytes(p, encode_vtf(t, dtype));
}

}  // namespace vyang
