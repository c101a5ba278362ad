#include "mqtts/audio.hpp"

#include <cmath>

#include "mqtts/error.hpp"

namespace mqtts {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

Index mel_frames(Index len, const MelConfig& cfg) {
  if (len < 1) fail(ErrorKind::input, "mel: empty waveform");
  return (len + cfg.hop - 1) / cfg.hop;
}

MelExtractor::MelExtractor(const MelConfig& cfg) : cfg_(cfg) {
  if (cfg.bands < 1) fail(ErrorKind::config, "mel: bands must be positive");
  if (cfg.win < 2 || cfg.win % 2 != 0) fail(ErrorKind::config, "mel: win must be even and >= 2");
  if (cfg.hop < 1 || cfg.hop > cfg.win) fail(ErrorKind::config, "mel: need 1 <= hop <= win");
  if (cfg.sample_rate < 1) fail(ErrorKind::config, "mel: bad sample rate");
  if (!(cfg.fmin >= 0.0) || !(cfg.fmax > cfg.fmin) ||
      cfg.fmax > 0.5 * cfg.sample_rate + 1e-9) {
    fail(ErrorKind::config, "mel: need 0 <= fmin < fmax <= sample_rate / 2");
  }
  if (!(cfg.floor > 0.0)) fail(ErrorKind::config, "mel: floor must be positive");

  const Index win = cfg.win;
  const Index bins = win / 2 + 1;

  window_.resize(static_cast<std::size_t>(win));
  for (Index j = 0; j < win; ++j) {
    window_[static_cast<std::size_t>(j)] =
        0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(j) / static_cast<double>(win));
  }

  cos_mat_ = Mat(win, bins);
  sin_mat_ = Mat(win, bins);
  for (Index j = 0; j < win; ++j) {
    for (Index k = 0; k < bins; ++k) {
      double ang = 2.0 * kPi * static_cast<double>(j) * static_cast<double>(k) /
                   static_cast<double>(win);
      cos_mat_.at(j, k) = std::cos(ang);
      sin_mat_.at(j, k) = std::sin(ang);
    }
  }

  // Triangular filters with corners spaced uniformly on the mel scale.
  std::vector<double> corners_hz(static_cast<std::size_t>(cfg.bands) + 2);
  double mel_lo = hz_to_mel(cfg.fmin);
  double mel_hi = hz_to_mel(cfg.fmax);
  for (Index i = 0; i < cfg.bands + 2; ++i) {
    double m = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                            static_cast<double>(cfg.bands + 1);
    corners_hz[static_cast<std::size_t>(i)] = mel_to_hz(m);
  }
  centers_hz_.assign(corners_hz.begin() + 1, corners_hz.end() - 1);

  fbank_ = Mat(bins, cfg.bands);
  double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(win);
  for (Index k = 0; k < bins; ++k) {
    double f = static_cast<double>(k) * bin_hz;
    for (Index b = 0; b < cfg.bands; ++b) {
      double left = corners_hz[static_cast<std::size_t>(b)];
      double center = corners_hz[static_cast<std::size_t>(b) + 1];
      double right = corners_hz[static_cast<std::size_t>(b) + 2];
      double w = 0.0;
      if (f > left && f < right) {
        w = f <= center ? (f - left) / (center - left) : (right - f) / (right - center);
      }
      fbank_.at(k, b) = w;
    }
  }
}

double MelExtractor::band_center_hz(Index b) const {
  if (b < 0 || b >= cfg_.bands) fail(ErrorKind::input, "mel: band index out of range");
  return centers_hz_[static_cast<std::size_t>(b)];
}

Tensor MelExtractor::build(Graph& g, Tensor wave) const {
  if (wave.shape().size() != 2 || wave.cols() != 1) {
    fail(ErrorKind::dimension, "mel: wave must have shape (len, 1), got " + shape_str(wave.shape()));
  }
  const Index len = wave.rows();
  const Index t = mel_frames(len, cfg_);
  const Index pad_left = (cfg_.win - cfg_.hop) / 2;

  Tensor window = g.leaf({1, cfg_.win}, window_, false);
  Tensor cosm = g.leaf({cos_mat_.rows, cos_mat_.cols}, cos_mat_.v, false);
  Tensor sinm = g.leaf({sin_mat_.rows, sin_mat_.cols}, sin_mat_.v, false);
  Tensor fb = g.leaf({fbank_.rows, fbank_.cols}, fbank_.v, false);

  Tensor frames = frame_gather_op(wave, cfg_.win, cfg_.hop, pad_left, t);
  Tensor windowed = mul_rowvec(frames, window);
  Tensor re = matmul(windowed, cosm);
  Tensor im = matmul(windowed, sinm);
  Tensor power = add(mul(re, re), mul(im, im));
  Tensor mel = matmul(power, fb);
  return log_act(clamp_min(mel, cfg_.floor));
}

Mat MelExtractor::log_mel(const std::vector<double>& samples) const {
  Graph g(false);
  Tensor wave = g.leaf({static_cast<Index>(samples.size()), 1}, samples, false);
  Tensor out = build(g, wave);
  Mat m(out.rows(), out.cols());
  m.v = out.value();
  return m;
}

Mat MelExtractor::log_mel(const Waveform& w) const { return log_mel(w.samples); }

}  // namespace mqtts
