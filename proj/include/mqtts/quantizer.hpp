#pragma once

// Stage-1 model: convolutional encoder, multi-codebook quantization
// bottleneck, and convolutional decoder with speaker conditioning. The
// encoder downsamples by hop (64 = 4^3) through three strided stages, each
// followed by a group-normalized residual block; the decoder mirrors it with
// overlap-add transposed convolutions.

#include <cstdint>
#include <span>
#include <vector>

#include "mqtts/audio.hpp"
#include "mqtts/mat.hpp"
#include "mqtts/optimizer.hpp"
#include "mqtts/ops.hpp"
#include "mqtts/rng.hpp"
#include "mqtts/tensor.hpp"

namespace mqtts {

inline constexpr Index kSpeakerDim = 16;

struct QuantizerConfig {
  Index groups = 4;       // N codebooks
  Index codes = 160;      // K entries per codebook
  Index latent_dim = 32;  // d, sliced into N equal parts
  double gamma = 0.25;
  double lambda = 10.0;
  Index hop = 64;  // samples per latent frame (= 4^3, one factor per stage)
  int sample_rate = 16000;
  Index channels = 32;          // conv trunk width
  Index gn_channels_per_group = 16;

  Index group_dim() const { return latent_dim / groups; }
  void validate() const;
};

struct CodeGrid {
  Index t = 0;  // frames
  Index n = 0;  // groups
  Index k = 0;  // vocabulary the codes were drawn from
  std::vector<std::int32_t> codes;  // row-major (t, n)

  std::int32_t& at(Index frame, Index group) {
    return codes[static_cast<std::size_t>(frame * n + group)];
  }
  std::int32_t at(Index frame, Index group) const {
    return codes[static_cast<std::size_t>(frame * n + group)];
  }
  void validate() const;
};

class Quantizer {
 public:
  Quantizer(const QuantizerConfig& cfg, Rng& init_rng);

  const QuantizerConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const MelExtractor& mel() const { return mel_; }

  // Encoder: wave (samples, 1) -> latents (T, d), T = ceil(samples / hop).
  Tensor encode_graph(const Binding& bind, Tensor wave) const;

  // Nearest codebook entry per frame and group; ties break to lowest index.
  CodeGrid assign_codes(const Mat& z) const;

  // Selected codebook embeddings as a differentiable lookup, (T, d).
  Tensor codebook_lookup(const Binding& bind, const CodeGrid& grid) const;

  // (1/T) sum over frames and groups of ||sg[z_c] - e||^2 + gamma ||z_c - sg[e]||^2.
  Tensor vq_loss(Tensor z_c, Tensor e) const;

  // Forward value e, gradient passed through to z_c unchanged.
  Tensor straight_through(Tensor z_c, Tensor e) const;

  // Decoder: embeddings (T, d) + speaker vector -> wave (T * hop, 1).
  Tensor decode_graph(const Binding& bind, Tensor z_q, std::span<const double> speaker) const;

  // Reconstruction term: mean absolute log-mel difference, both (samples, 1).
  Tensor mel_l1(Tensor reference_wave, Tensor decoded_wave) const;

  // Plain-value paths on non-recording graphs.
  Mat encode(const Waveform& x) const;
  Waveform decode(const CodeGrid& grid, std::span<const double> speaker) const;

  // Mean squared quantization error ||z - nearest embedding||^2 per frame.
  double quantization_error(const Mat& z) const;

  // Replaces codebook entries unused in `used` with rows sampled from data.
  Index reseed_dead_codes(const std::vector<std::vector<char>>& used, const Mat& latents,
                          Rng& rng);

 private:
  Tensor residual_block(const Binding& bind, Tensor x, const std::string& prefix) const;
  Tensor conv(const Binding& bind, Tensor x, const std::string& name, Index kernel, Index stride,
              Index pad) const;

  QuantizerConfig cfg_;
  ParamStore params_;
  MelExtractor mel_;
};

// Splits a latent vector into n equal contiguous parts (and back).
std::vector<std::vector<double>> slice_groups(std::span<const double> z, Index n);
std::vector<double> concat_groups(const std::vector<std::vector<double>>& parts);

// Deterministic unit-norm 16-dim embedding from mean log band energies.
std::vector<double> stub_speaker_embedder(const Waveform& x);

// Lloyd k-means over rows of data; returns (k, dim) centroids. Used for
// codebook refitting experiments and dead-code tests.
Mat kmeans_fit(const Mat& data, Index k, int iters, Rng& rng);

}  // namespace mqtts
