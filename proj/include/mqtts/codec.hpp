#pragma once

// Bridges code grids and transformer token streams: repetition encoding,
// start/end framing, the silence prompt prefix, and grid/stream file io.
//
// Each group's vocabulary is extended with three control tokens placed
// directly after the codes: REP = K, START = K + 1, END = K + 2. Repetition
// replacement is applied per group: a code equal to its immediate
// predecessor in the same group becomes REP.

#include <cstdint>
#include <string>
#include <vector>

#include "mqtts/quantizer.hpp"

namespace mqtts {

inline constexpr Index kPromptFrames = 3;

constexpr std::int32_t rep_token(Index k) { return static_cast<std::int32_t>(k); }
constexpr std::int32_t start_token(Index k) { return static_cast<std::int32_t>(k + 1); }
constexpr std::int32_t end_token(Index k) { return static_cast<std::int32_t>(k + 2); }
constexpr Index extended_vocab(Index k) { return k + 3; }

// Per-group token sequences over [0, K) plus the control tokens. All groups
// share one length: position 0 is START, positions 1..len-2 carry content,
// position len-1 is END.
struct TokenStream {
  Index len = 0;  // positions per group, framing included
  Index n = 0;    // groups
  Index k = 0;    // base vocabulary size
  std::vector<std::int32_t> tokens;  // row-major (len, n)

  std::int32_t& at(Index pos, Index group) {
    return tokens[static_cast<std::size_t>(pos * n + group)];
  }
  std::int32_t at(Index pos, Index group) const {
    return tokens[static_cast<std::size_t>(pos * n + group)];
  }
  Index content_len() const { return len - 2; }
  void validate() const;
};

TokenStream encode_repetition(const CodeGrid& c);
CodeGrid decode_repetition(const TokenStream& t);

// Encodes 3 frames of Gaussian noise (sigma = 0 gives digital silence)
// through the quantizer and returns the resulting 3-frame grid.
CodeGrid silence_prompt(const Quantizer& q, double noise_sigma, std::uint64_t seed);

// Grid container file, also used for token streams via the extended flag.
void write_code_grid(const std::string& path, const CodeGrid& c);
CodeGrid read_code_grid(const std::string& path);
void write_token_stream(const std::string& path, const TokenStream& t);
TokenStream read_token_stream(const std::string& path);

}  // namespace mqtts
