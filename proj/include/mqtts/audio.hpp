#pragma once

// Log-mel spectrogram extraction and waveform containers.
//
// The extractor exposes two paths that share one implementation: `build`
// assembles the spectrogram as a differentiable graph (used inside the
// reconstruction loss), and `log_mel` runs the same builder on a non-recording
// graph, so both produce bitwise-identical values for the same input.

#include <vector>

#include "mqtts/mat.hpp"
#include "mqtts/ops.hpp"
#include "mqtts/tensor.hpp"

namespace mqtts {

struct Waveform {
  std::vector<double> samples;  // mono, nominally in [-1, 1]
  int sample_rate = 16000;
};

struct MelConfig {
  Index bands = 80;
  Index win = 1024;
  Index hop = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double floor = 1e-5;  // power clamp before the log
  int sample_rate = 16000;
};

// Number of analysis frames for a waveform of `len` samples: ceil(len / hop).
Index mel_frames(Index len, const MelConfig& cfg);

class MelExtractor {
 public:
  explicit MelExtractor(const MelConfig& cfg);

  const MelConfig& config() const { return cfg_; }

  // Differentiable path. `wave` must have shape (len, 1). Returns (T, bands).
  Tensor build(Graph& g, Tensor wave) const;

  // Plain path: runs `build` on a non-recording graph.
  Mat log_mel(const std::vector<double>& samples) const;
  Mat log_mel(const Waveform& w) const;

  // Triangular mel filterbank, shape (win/2 + 1, bands).
  const Mat& filterbank() const { return fbank_; }
  const std::vector<double>& window() const { return window_; }

  // Center frequency in Hz of band `b`.
  double band_center_hz(Index b) const;

 private:
  MelConfig cfg_;
  std::vector<double> window_;  // periodic Hann, length win
  Mat cos_mat_;                 // (win, bins)
  Mat sin_mat_;                 // (win, bins)
  Mat fbank_;                   // (bins, bands)
  std::vector<double> centers_hz_;
};

}  // namespace mqtts
