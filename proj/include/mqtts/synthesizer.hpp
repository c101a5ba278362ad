#pragma once

// Stage-2 model: phoneme encoder, autoregressive decoder over code frames,
// and the sub-decoder that factorizes each frame's joint code distribution
// into per-group conditionals.
//
// Both encoder and decoder use ALiBi attention biases instead of positional
// encodings. Cross-attention is single-head and appears only on the last
// decoder layer, so the model has exactly one alignment map. The processed
// speaker vector is broadcast-added to the decoder input at every step.
//
// Two forward paths are provided: a graph path for training and gradient
// checks, and a plain incremental path with per-layer KV caches for fast
// autoregressive inference. Both run the same kernel calls row for row and
// are cross-checked in the tests.

#include <cstdint>
#include <span>
#include <vector>

#include "mqtts/codec.hpp"
#include "mqtts/mat.hpp"
#include "mqtts/optimizer.hpp"
#include "mqtts/ops.hpp"
#include "mqtts/rng.hpp"

namespace mqtts {

struct SynthesizerConfig {
  Index layers_enc = 2;
  Index layers_dec = 2;
  Index model_dim = 64;
  Index heads = 4;  // self-attention; cross-attention is always single-head
  Index dim_ff = 256;
  Index subdecoder_layers = 1;
  Index groups = 4;    // N, must match the quantizer
  Index codes = 160;   // K, per-group base vocabulary
  Index phonemes = 16; // inventory size
  bool use_subdecoder = true;  // false: plain linear heads (ablation)
  bool use_alibi = true;       // false: no positional signal at all (probes)

  Index vocab() const { return extended_vocab(codes); }
  Index group_dim() const { return model_dim / groups; }
  Index head_dim() const { return model_dim / heads; }
  void validate() const;
};

// Geometric ALiBi slopes; power-of-two head counts follow 2^(-8(h+1)/n),
// other counts interleave the sequence for the next power of two.
std::vector<double> alibi_slopes(Index heads);

// One head's additive attention bias. Bidirectional: -slope*|i-j|.
// Causal: -slope*(i-j) at or below the diagonal, -inf above it.
Mat alibi_bias(Index len, double slope, bool causal);

// Incremental decoding state. Caches grow by one row per step.
struct DecoderState {
  Mat enc;            // (enc_len, model_dim) encoder states
  Mat enc_k, enc_v;   // precomputed cross-attention keys/values
  Mat spk;            // (1, model_dim) processed speaker vector
  std::vector<Mat> self_k, self_v;  // per decoder layer, (capacity, model_dim)
  Index steps = 0;
  Index capacity = 0;
  std::vector<double> cross_weights;  // last step, full enc_len, zeros off-window
  std::vector<double> cross_logits;   // last step, scaled scores at every position
};

class Synthesizer {
 public:
  Synthesizer(const SynthesizerConfig& cfg, Rng& init_rng);

  const SynthesizerConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // --- graph path ---

  // Encoder states for a phoneme sequence. pad_left embeds the sequence
  // after that many masked-out zero rows; outputs cover the real rows only.
  Tensor encode_phonemes_graph(const Binding& bind, std::span<const std::int32_t> ids,
                               Index pad_left = 0) const;
  // Two linear layers with a ReLU between them on the raw speaker vector.
  Tensor speaker_embed_graph(const Binding& bind, std::span<const double> speaker) const;
  // Teacher-forced decoder states O_t for stream positions 0..len-2,
  // shape (len-1, model_dim). Also exposes the cross-attention map via
  // *alignment when non-null, shape (len-1, enc_len).
  Tensor decoder_states_graph(const Binding& bind, const TokenStream& stream, Tensor enc,
                              Tensor spk, Tensor* alignment = nullptr) const;
  // Per-group logits over the vocabulary, each (len-1, vocab), teacher-forced.
  std::vector<Tensor> stream_logits_graph(const Binding& bind, const TokenStream& stream,
                                          Tensor dec_states) const;
  // Summed negative log-likelihood of the stream's targets (scalar).
  Tensor utterance_loss_graph(const Binding& bind, std::span<const std::int32_t> ids,
                              std::span<const double> speaker, const TokenStream& stream) const;

  double utterance_loss(std::span<const std::int32_t> ids, std::span<const double> speaker,
                        const TokenStream& stream) const;

  // --- plain incremental path ---

  Mat encode_phonemes(std::span<const std::int32_t> ids) const;
  Mat process_speaker(std::span<const double> speaker) const;
  DecoderState begin_stream(Mat enc_states, Mat spk, Index capacity) const;
  // One autoregressive step. prev_tokens holds the N tokens fed at this
  // position (the START row first, then each generated frame). Cross
  // attention is restricted to encoder positions [win_lo, win_hi].
  Mat decoder_step(std::span<const std::int32_t> prev_tokens, DecoderState& state, Index win_lo,
                   Index win_hi) const;
  // Conditional distribution for one group given the frame's earlier codes.
  std::vector<double> group_distribution(const Mat& o_t, std::span<const std::int32_t> prefix,
                                         Index group) const;

 private:
  struct Attn {
    const Param *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  };
  struct Layer {
    const Param *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    Attn self;
    bool has_cross = false;
    const Param *lnx_g, *lnx_b;
    Attn cross;
    const Param *ff_w1, *ff_b1, *ff_w2, *ff_b2;
  };

  Attn add_attn(const std::string& prefix, Index in_dim, Index out_dim, Rng& rng);
  Layer add_layer(const std::string& prefix, bool cross, Rng& rng);

  Tensor attention_graph(const Binding& bind, const Attn& a, Tensor x, Index heads,
                         const std::vector<Mat>& bias, Tensor* weights_out = nullptr) const;
  Tensor cross_attention_graph(const Binding& bind, const Attn& a, Tensor x, Tensor mem,
                               Tensor* weights_out) const;
  Tensor ffn_graph(const Binding& bind, const Layer& l, Tensor h) const;
  Tensor stack_graph(const Binding& bind, const std::vector<Layer>& layers, Tensor x, Index heads,
                     const std::vector<Mat>& bias, Tensor mem, Tensor* alignment,
                     const Param* final_g, const Param* final_b) const;
  Tensor subdecoder_graph(const Binding& bind, const TokenStream& stream, Tensor dec_states,
                          Index upto_group, std::vector<Tensor>* logits) const;

  // plain helpers
  Mat plain_linear(const Mat& x, const Param* w, const Param* b) const;
  Mat plain_ln(const Mat& x, const Param* g, const Param* b) const;
  Mat plain_subdecoder_states(const Mat& inputs) const;

  SynthesizerConfig cfg_;
  ParamStore params_;
  const Param* spk_w1_;
  const Param* spk_b1_;
  const Param* spk_w2_;
  const Param* spk_b2_;
  const Param* phon_emb_;
  std::vector<Layer> enc_layers_;
  const Param* enc_final_g_;
  const Param* enc_final_b_;
  std::vector<const Param*> dec_emb_;  // per group, (vocab, model_dim/groups)
  std::vector<Layer> dec_layers_;
  const Param* dec_final_g_;
  const Param* dec_final_b_;
  const Param* sub_start_w_;
  const Param* sub_start_b_;
  std::vector<const Param*> sub_emb_;  // per group except the last, (vocab, model_dim)
  std::vector<Layer> sub_layers_;
  const Param* sub_final_g_;
  const Param* sub_final_b_;
  std::vector<const Param*> head_w_;  // per group, zero-initialized
  std::vector<const Param*> head_b_;
};

}  // namespace mqtts
