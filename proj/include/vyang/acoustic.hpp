#pragma once

// Utterance-level acoustic features: framing, Hann-windowed magnitude
// spectrum (FFTW), triangular mel filterbank, log compression, RMS and
// spectral centroid, mean-pooled over frames. The branch itself has no
// learnable parameters and never carries context.

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vyang/features.hpp"
#include "vyang/sample.hpp"
#include "vyang/wav.hpp"

namespace vyang {

inline constexpr double kLogEps = 1e-10;

struct AcousticConfig {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t mel_bands = 26;
  bool include_rms = true;
  bool include_centroid = true;

  std::size_t dim() const { return mel_bands + (include_rms ? 1 : 0) + (include_centroid ? 1 : 0); }

  std::size_t window_samples(std::uint32_t rate) const {
    return static_cast<std::size_t>(std::lround(window_ms * rate / 1000.0));
  }
  std::size_t hop_samples(std::uint32_t rate) const {
    return static_cast<std::size_t>(std::lround(hop_ms * rate / 1000.0));
  }

  void validate() const {
    if (!(window_ms > 0 && hop_ms > 0 && window_ms >= hop_ms)) throw Error("acoustic config: need window >= hop > 0");
    if (mel_bands == 0) throw Error("acoustic config: need at least one mel band");
  }
};

// The preset dimension of the precomputed external feature set.
inline constexpr std::size_t kPaperAcousticDim = 283;

inline std::vector<std::vector<double>> frame_signal(const std::vector<double>& x, std::size_t window,
                                                     std::size_t hop) {
  if (window == 0 || hop == 0) throw Error("frame_signal: window and hop must be positive");
  if (x.size() < window) {
    throw Error("frame_signal: waveform of " + std::to_string(x.size()) + " samples is shorter than the " +
                std::to_string(window) + "-sample window");
  }
  std::size_t full = (x.size() - window) / hop + 1;
  bool tail = (x.size() - window) % hop != 0;
  std::vector<std::vector<double>> frames;
  frames.reserve(full + (tail ? 1 : 0));
  for (std::size_t f = 0; f < full + (tail ? 1 : 0); ++f) {
    std::vector<double> fr(window, 0.0);
    std::size_t start = f * hop;
    std::size_t n = std::min(window, x.size() - start);
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(start), n, fr.begin());
    frames.push_back(std::move(fr));
  }
  return frames;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Center frequencies (Hz) of `bands` triangles spaced evenly in mel over [0, rate/2].
inline std::vector<double> mel_centers(std::size_t bands, double rate) {
  double top = hz_to_mel(rate / 2.0);
  std::vector<double> c(bands);
  for (std::size_t m = 0; m < bands; ++m) c[m] = mel_to_hz(top * static_cast<double>(m + 1) / (bands + 1));
  return c;
}

// Hann window, magnitude spectrum and mel filterbank for one window length.
class SpectralFrontEnd {
 public:
  SpectralFrontEnd(std::size_t window, std::uint32_t rate, std::size_t bands)
      : n_(window), rate_(rate), bins_(window / 2 + 1), hann_(window), weights_(bands, std::vector<double>(bins_, 0.0)) {
    for (std::size_t i = 0; i < n_; ++i) {
      hann_[i] = n_ == 1 ? 1.0 : 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n_ - 1));
    }
    double top = hz_to_mel(rate / 2.0);
    std::vector<double> edges(bands + 2);
    for (std::size_t m = 0; m < bands + 2; ++m) edges[m] = mel_to_hz(top * static_cast<double>(m) / (bands + 1));
    for (std::size_t m = 0; m < bands; ++m)
      for (std::size_t k = 0; k < bins_; ++k) {
        double f = bin_hz(k);
        double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        double w = 0.0;
        if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
        else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
        weights_[m][k] = w;
      }
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n_));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins_));
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), in_, out_, FFTW_ESTIMATE);
  }
  SpectralFrontEnd(const SpectralFrontEnd&) = delete;
  SpectralFrontEnd& operator=(const SpectralFrontEnd&) = delete;
  ~SpectralFrontEnd() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t bins() const { return bins_; }
  double bin_hz(std::size_t k) const { return static_cast<double>(k) * rate_ / static_cast<double>(n_); }
  const std::vector<std::vector<double>>& filterbank() const { return weights_; }

  std::vector<double> magnitude(const std::vector<double>& frame) {
    for (std::size_t i = 0; i < n_; ++i) in_[i] = frame[i] * hann_[i];
    fftw_execute(plan_);
    std::vector<double> mag(bins_);
    for (std::size_t k = 0; k < bins_; ++k) mag[k] = std::hypot(out_[k][0], out_[k][1]);
    return mag;
  }

 private:
  std::size_t n_;
  double rate_;
  std::size_t bins_;
  std::vector<double> hann_;
  std::vector<std::vector<double>> weights_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Column means of a row-major [rows, cols] buffer.
inline Tensor mean_rows(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  Tensor out(Shape{cols});
  for (std::size_t j = 0; j < cols; ++j) out[j] = pairwise_sum(m.data() + j, rows, cols) / static_cast<double>(rows);
  return out;
}

class AcousticExtractor {
 public:
  explicit AcousticExtractor(AcousticConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const AcousticConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim(); }

  // [log-mel bands..., rms?, centroid?]; the centroid is in Hz.
  std::vector<double> frame_features(const std::vector<double>& frame, std::uint32_t rate) {
    SpectralFrontEnd& fe = front_end(frame.size(), rate);
    auto mag = fe.magnitude(frame);
    std::vector<double> out;
    out.reserve(dim());
    for (const auto& w : fe.filterbank()) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += w[k] * mag[k];
      out.push_back(std::log(e + kLogEps));
    }
    if (cfg_.include_rms) {
      double ss = 0.0;
      for (double v : frame) ss += v * v;
      out.push_back(std::sqrt(ss / static_cast<double>(frame.size())));
    }
    if (cfg_.include_centroid) {
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) {
        num += fe.bin_hz(k) * mag[k];
        den += mag[k];
      }
      out.push_back(den > 0.0 ? num / den : 0.0);
    }
    return out;
  }

  // Mean of the per-frame features, as a [d_a] tensor.
  Tensor utterance_feature(const Waveform& w) {
    if (w.sample_rate == 0) throw Error("acoustic branch: sample rate must be positive");
    auto frames = frame_signal(w.samples, cfg_.window_samples(w.sample_rate), cfg_.hop_samples(w.sample_rate));
    std::vector<double> feats;  // [frames, d_a] row-major
    feats.reserve(frames.size() * dim());
    for (const auto& f : frames) {
      auto v = frame_features(f, w.sample_rate);
      feats.insert(feats.end(), v.begin(), v.end());
    }
    return mean_rows(feats, frames.size(), dim());
  }

 private:
  SpectralFrontEnd& front_end(std::size_t window, std::uint32_t rate) {
    auto key = std::make_pair(window, rate);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      it = cache_.emplace(key, std::make_unique<SpectralFrontEnd>(window, rate, cfg_.mel_bands)).first;
    }
    return *it->second;
  }

  AcousticConfig cfg_;
  std::map<std::pair<std::size_t, std::uint32_t>, std::unique_ptr<SpectralFrontEnd>> cache_;
};

// A_cat: the utterance feature with its speaker appended. There is no context block.
class AcousticBranch {
 public:
  SpeakerTable speakers;
  std::size_t feature_dim_in = 0;  // d_a of the stored vectors

  AcousticBranch() = default;
  AcousticBranch(SpeakerTable s, std::size_t d_a) : speakers(std::move(s)), feature_dim_in(d_a) {}

  std::size_t block_dim() const { return feature_dim_in + speakers.dim(); }
  std::size_t feature_dim() const { return block_dim(); }
  std::size_t segments() const { return 1; }

  std::vector<Var> segment_blocks(Tape& tape, const Sample& s) const {
    const Turn& u = s.utterance;
    if (!u.audio) throw Error("acoustic branch: utterance has no audio");
    if (u.audio->rank() != 1 || u.audio->numel() != feature_dim_in) {
      throw DimensionError("acoustic branch expects " + std::to_string(feature_dim_in) + "-dim features, got " +
                           shape_str(u.audio->shape()));
    }
    return {append_speaker(tape, tape.constant(*u.audio), speakers.encode(u.speaker))};
  }

  Var features(Tape& tape, const Sample& s) const { return segment_blocks(tape, s)[0]; }
};

}  // namespace vyang
