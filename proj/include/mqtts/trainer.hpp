#pragma once

// Two-stage training. Stage 1 fits the quantizer on random utterance
// crops with the weighted VQ plus log-mel reconstruction objective; stage
// 2 teacher-forces the synthesizer on repetition-encoded code streams
// from a frozen quantizer. Both stages run Adam under a linear decay and
// are deterministic given the stage seed.

#include <iosfwd>
#include <span>

#include "mqtts/config.hpp"
#include "mqtts/corpus.hpp"
#include "mqtts/quantizer.hpp"
#include "mqtts/synthesizer.hpp"

namespace mqtts {

struct TrainReport {
  std::vector<double> loss;  // objective value per step, before the update
  Index reseeded = 0;        // codebook rows replaced by dead-code reseeding

  double first() const { return loss.front(); }
  double last() const { return loss.back(); }
};

TrainReport train_quantizer(Quantizer& q, std::span<const Utterance> corpus,
                            const TrainStageConfig& cfg, std::ostream* log = nullptr);

// The quantizer is read-only here; its parameter hash is checked across
// the run to pin the stage separation.
TrainReport train_synthesizer(Synthesizer& s, const Quantizer& q,
                              std::span<const Utterance> corpus, const TrainStageConfig& cfg,
                              std::ostream* log = nullptr);

}  // namespace mqtts
