#pragma once

// Mono 16-bit PCM RIFF/WAVE reading and writing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "vyang/vtf.hpp"

namespace vyang {

struct Waveform {
  std::uint32_t sample_rate = 0;
  std::vector<double> samples;  // in [-1, 1]
};

namespace wav_detail {

template <class T>
T read_le(const std::string& b, std::size_t at) {
  T v;
  std::memcpy(&v, b.data() + at, sizeof(T));
  return v;
}

template <class T>
void write_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace wav_detail

inline Waveform decode_wav(const std::string& b, const std::string& context = "WAV") {
  using wav_detail::read_le;
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw IoError(context + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  Waveform w;
  while (pos + 8 <= b.size()) {
    std::string id = b.substr(pos, 4);
    std::uint32_t len = read_le<std::uint32_t>(b, pos + 4);
    std::size_t body = pos + 8;
    if (body + len > b.size()) throw IoError(context + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (len < 16) throw IoError(context + ": short fmt chunk");
      if (read_le<std::uint16_t>(b, body) != 1) throw IoError(context + ": only PCM audio is supported");
      channels = read_le<std::uint16_t>(b, body + 2);
      w.sample_rate = read_le<std::uint32_t>(b, body + 4);
      bits = read_le<std::uint16_t>(b, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError(context + ": data chunk before fmt chunk");
      if (channels != 1 || bits != 16) {
        throw IoError(context + ": expected mono 16-bit PCM, got " + std::to_string(channels) + " channel(s) at " +
                      std::to_string(bits) + " bits");
      }
      std::size_t n = len / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) w.samples[i] = read_le<std::int16_t>(b, body + 2 * i) / 32768.0;
      if (w.sample_rate == 0) throw IoError(context + ": sample rate is zero");
      if (n == 0) throw IoError(context + ": no samples");
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw IoError(context + ": no data chunk");
}

inline std::string encode_wav(const Waveform& w) {
  using wav_detail::write_le;
  std::string data;
  data.reserve(w.samples.size() * 2);
  for (double s : w.samples) {
    double c = std::clamp(s, -1.0, 1.0) * 32767.0;
    write_le<std::int16_t>(data, static_cast<std::int16_t>(std::lround(c)));
  }
  std::string out = "RIFF";
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(36 + data.size()));
  out += "WAVEfmt ";
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, w.sample_rate);
  write_le<std::uint32_t>(out, w.sample_rate * 2);
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out += "data";
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
  return out + data;
}

inline Waveform read_wav(const std::filesystem::path& p) { return decode_wav(read_file_bytes(p), p.string()); }
inline void write_wav(const std::filesystem::path& p, const Waveform& w) { write_file_bytes(p, encode_wav(w)); }

}  // namespace vyang
