#pragma once

// Flat key = value run configuration. Every knob of the pipeline lives
// under a section prefix (quantizer., synthesizer., synthesis., corpus.,
// stage1., stage2.); files are versioned and unknown or duplicate keys
// are rejected so a typo cannot silently train the wrong model.

#include <cstdint>
#include <string>

#include "mqtts/corpus.hpp"
#include "mqtts/inference.hpp"
#include "mqtts/quantizer.hpp"
#include "mqtts/synthesizer.hpp"

namespace mqtts {

struct TrainStageConfig {
  Index steps = 0;
  Index batch_frames = 200;
  double lr = 2e-4;  // linearly decayed to zero across the run
  double beta1 = 0.9;
  double beta2 = 0.98;
  Index log_every = 50;
  std::uint64_t seed = 0;
  bool kmeans_init = false;  // stage 1: fit codebooks to initial latents
  Index reseed_every = 0;    // stage 1: dead-code reseed interval, 0 = off

  void validate() const;
};

struct RunConfig {
  QuantizerConfig quantizer;
  SynthesizerConfig synthesizer;
  SynthesisConfig synthesis;
  ToyCorpusSpec corpus;
  TrainStageConfig stage1;
  TrainStageConfig stage2;

  // per-section checks plus cross-section agreement (code space, hop,
  // sample rate, phoneme inventory)
  void validate() const;
};

RunConfig default_run_config();

// Canonical serialization: fixed key order, shortest round-trip numerals.
std::string write_config_text(const RunConfig& cfg);

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

// One "key=value" override, as given on a command line.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace mqtts
