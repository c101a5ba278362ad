#pragma once

// Synthesis loop: a silence prompt is fed through the decoder, then frames
// are sampled group by group under nucleus truncation while a windowed
// alignment machine walks the cross-attention scores monotonically across
// the phoneme sequence and decides when the utterance is finished.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mqtts/codec.hpp"
#include "mqtts/quantizer.hpp"
#include "mqtts/rng.hpp"
#include "mqtts/synthesizer.hpp"

namespace mqtts {

struct SynthesisConfig {
  double top_p = 0.8;
  Index window = 4;           // N_w
  double prompt_sigma = 1e-5;
  Index max_frames = 1000;
  std::uint64_t seed = 0;
  void validate() const;
};

// Window start as a function of the decoder step. The window covers
// [b, b + window - 1] clipped at enc_len - 1; it advances by at most one
// position per step and never moves backwards.
struct AlignmentState {
  Index b = 0;
  Index window = 4;
  Index enc_len = 0;
  Index step = 0;

  Index win_lo() const { return b; }
  Index win_hi() const {
    return b + window - 1 < enc_len - 1 ? b + window - 1 : enc_len - 1;
  }
};

// Candidate prefix of a distribution: indices sorted by probability
// descending (ties by index), cut at the smallest cumulative mass >= p,
// with probabilities renormalized over the kept set.
std::vector<std::pair<Index, double>> nucleus_candidates(std::span<const double> dist, double p);

// Samples from the renormalized candidate prefix.
Index nucleus_sample(std::span<const double> dist, double p, Rng& rng);

// Stable softmax over one span of logits.
std::vector<double> window_softmax(std::span<const double> logits);

// One alignment update. `window_logits` are the cross-attention scores at
// positions win_lo()..win_hi() of the step just taken; the window advances
// when the softmax weight of its leading position falls strictly below
// 1/window, and stays clamped at the last encoder position.
AlignmentState advance_alignment(std::span<const double> window_logits, const AlignmentState& st);

// Completion test, meaningful once b has reached the last encoder position:
// over the trailing `window` positions the weight of the final one has
// dropped strictly below 1/window, i.e. attention has moved off the last
// phoneme. `logits_full` holds scores for all enc_len positions.
bool alignment_complete(std::span<const double> logits_full, const AlignmentState& st);

struct SynthesisDiagnostics {
  std::vector<Index> alignment_path;   // b per decoder step, prompt steps included
  std::vector<double> attn_entropy;    // window attention entropy per step
  std::vector<double> token_entropy;   // mean group distribution entropy per emitted frame
  std::vector<std::int32_t> sampled_tokens;  // emitted frames x groups, extended alphabet
  Index prompt_frames = 0;
  Index enc_len = 0;
  bool truncated = false;
  bool ended_by_token = false;
  bool ended_by_alignment = false;
};

struct SynthesisResult {
  Waveform wave;   // generated frames only; the prompt is stripped
  CodeGrid codes;  // repetition-expanded codes behind the waveform
  SynthesisDiagnostics diag;
};

// Full loop: encode phonemes, feed the framing token and the three prompt
// frames, then sample until the alignment machine signals completion, a
// framing token is sampled, or max_frames is hit (flagged as truncated).
SynthesisResult synthesize(const Quantizer& q, const Synthesizer& s,
                           std::span<const std::int32_t> phonemes,
                           std::span<const double> speaker, const SynthesisConfig& cfg);

// Plain-text diagnostics container, consumed by the plotting command.
void write_diagnostics(const std::string& path, const SynthesisDiagnostics& d);
SynthesisDiagnostics read_diagnostics(const std::string& path);

}  // namespace mqtts
