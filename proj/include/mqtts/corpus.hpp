#pragma once

// Synthetic training corpus: each phoneme symbol maps to a short motif
// (sine, upward chirp, or noise burst) at a per-speaker base frequency,
// symbol 0 is a pause, and every utterance rides on a low noise floor.
// Utterance i is generated from an independent stream forked off the
// corpus seed, so generation order and thread count never matter.

#include <cstdint>
#include <string>
#include <vector>

#include "mqtts/audio.hpp"
#include "mqtts/tensor.hpp"

namespace mqtts {

struct ToyCorpusSpec {
  Index utterances = 50;
  Index phonemes = 16;  // inventory size including the pause symbol 0
  Index speakers = 4;
  Index min_phones = 3;  // spoken symbols per utterance, pauses excluded
  Index max_phones = 8;
  Index min_dwell = 8;  // frames held per symbol
  Index max_dwell = 16;
  double noise_min = 1e-4;  // background sigma, log-uniform per utterance
  double noise_max = 3e-2;
  Index hop = 64;
  int sample_rate = 16000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Utterance {
  std::string id;
  Index speaker = 0;
  std::vector<std::int32_t> phones;
  Waveform wave;
};

// Motif frequency of a phoneme for a speaker (quarter-tone steps above a
// per-speaker base); meaningful for symbols >= 1.
double motif_frequency(Index speaker, std::int32_t phoneme);

Utterance generate_utterance(const ToyCorpusSpec& spec, Index index);

// All utterances, fanned out over a worker pool.
std::vector<Utterance> generate_corpus(const ToyCorpusSpec& spec);

// Disk layout: <dir>/manifest.tsv with "id<TAB>speaker<TAB>p0 p1 ..." rows
// plus one 16-bit PCM <dir>/<id>.wav per utterance.
void write_corpus(const std::string& dir, const std::vector<Utterance>& utts);
std::vector<Utterance> read_corpus(const std::string& dir);

}  // namespace mqtts
