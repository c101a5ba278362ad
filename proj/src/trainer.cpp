#include "mqtts/trainer.hpp"

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

#include "mqtts/codec.hpp"
#include "mqtts/error.hpp"
#include "mqtts/optimizer.hpp"
#include "mqtts/rng.hpp"

namespace mqtts {
namespace {

Index frames_of(const Utterance& u, Index hop) {
  return static_cast<Index>(u.wave.samples.size()) / hop;
}

void log_step(std::ostream* log, const char* stage, Index step, Index steps, double loss,
              Index log_every) {
  if (!log) return;
  if (step % log_every != 0 && step != steps - 1) return;
  *log << stage << " step " << step << " loss " << loss << "\n";
}

std::vector<std::vector<double>> speaker_table(std::span<const Utterance> corpus) {
  std::vector<std::vector<double>> spk;
  spk.reserve(corpus.size());
  for (const Utterance& u : corpus) spk.push_back(stub_speaker_embedder(u.wave));
  return spk;
}

// Fits each codebook to the encoder's current latent distribution. Latents are
// pooled from a bounded number of utterances so init cost stays flat in corpus
// size.
void kmeans_init_codebooks(Quantizer& q, std::span<const Utterance> corpus, Rng& rng) {
  const QuantizerConfig& qc = q.config();
  constexpr Index kMaxUtts = 8;
  constexpr Index kMaxRows = 4096;
  std::vector<Mat> latents;
  Index rows = 0;
  for (Index i = 0; i < std::min<Index>(corpus.size(), kMaxUtts) && rows < kMaxRows; ++i) {
    latents.push_back(q.encode(corpus[static_cast<std::size_t>(i)].wave));
    rows += latents.back().rows;
  }
  rows = std::min(rows, kMaxRows);
  const Index gd = qc.group_dim();
  for (Index g = 0; g < qc.groups; ++g) {
    Mat data(rows, gd);
    Index r = 0;
    for (const Mat& z : latents) {
      for (Index i = 0; i < z.rows && r < rows; ++i, ++r) {
        for (Index c = 0; c < gd; ++c) data.at(r, c) = z.at(i, g * gd + c);
      }
    }
    Mat cent = kmeans_fit(data, qc.codes, 25, rng);
    Param* book = q.params().find("book." + std::to_string(g));
    if (!book) fail(ErrorKind::contract, "quantizer store is missing book." + std::to_string(g));
    book->value = cent.v;
  }
}

}  // namespace

TrainReport train_quantizer(Quantizer& q, std::span<const Utterance> corpus,
                            const TrainStageConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (corpus.empty()) fail(ErrorKind::input, "train_quantizer: empty corpus");
  const Index hop = q.config().hop;
  for (const Utterance& u : corpus) {
    if (frames_of(u, hop) < 1)
      fail(ErrorKind::input, "train_quantizer: utterance " + u.id + " is shorter than one frame");
  }

  Rng rng(cfg.seed);
  const std::vector<std::vector<double>> spk = speaker_table(corpus);
  if (cfg.kmeans_init) kmeans_init_codebooks(q, corpus, rng);

  Adam adam(q.params(), AdamConfig{cfg.beta1, cfg.beta2, 1e-8});
  std::vector<std::vector<char>> used(
      static_cast<std::size_t>(q.config().groups),
      std::vector<char>(static_cast<std::size_t>(q.config().codes), 0));
  Mat last_latents;

  TrainReport report;
  report.loss.reserve(static_cast<std::size_t>(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    const Index ui = rng.uniform_int(static_cast<Index>(corpus.size()));
    const Utterance& u = corpus[static_cast<std::size_t>(ui)];
    const Index frames = frames_of(u, hop);
    const Index crop = std::min(frames, cfg.batch_frames);
    const Index start = frames > crop ? rng.uniform_int(frames - crop + 1) : 0;
    std::span<const double> slice(u.wave.samples.data() + start * hop,
                                  static_cast<std::size_t>(crop * hop));

    Graph g(true);
    Binding bind(g, q.params(), true);
    Tensor w = g.leaf({crop * hop, 1}, slice, false);
    Tensor z_c = q.encode_graph(bind, w);
    Mat zm(z_c.rows(), z_c.cols());
    zm.v = z_c.value();
    CodeGrid grid = q.assign_codes(zm);
    for (Index t = 0; t < grid.t; ++t)
      for (Index n = 0; n < grid.n; ++n)
        used[static_cast<std::size_t>(n)][static_cast<std::size_t>(grid.at(t, n))] = 1;
    Tensor e = q.codebook_lookup(bind, grid);
    Tensor loss = add(scale(q.vq_loss(z_c, e), q.config().lambda),
                      q.mel_l1(w, q.decode_graph(bind, q.straight_through(z_c, e), spk[ui])));

    std::vector<std::vector<double>> grads = collect_grads(g, loss, bind);
    adam.step(grads, linear_decay_lr(cfg.lr, step, cfg.steps));
    report.loss.push_back(loss.scalar());
    last_latents = std::move(zm);
    log_step(log, "stage1", step, cfg.steps, report.loss.back(), cfg.log_every);

    if (cfg.reseed_every > 0 && (step + 1) % cfg.reseed_every == 0) {
      report.reseeded += q.reseed_dead_codes(used, last_latents, rng);
      for (auto& group : used) std::fill(group.begin(), group.end(), 0);
    }
  }
  return report;
}

TrainReport train_synthesizer(Synthesizer& s, const Quantizer& q,
                              std::span<const Utterance> corpus, const TrainStageConfig& cfg,
                              std::ostream* log) {
  cfg.validate();
  if (corpus.empty()) fail(ErrorKind::input, "train_synthesizer: empty corpus");
  if (s.config().groups != q.config().groups || s.config().codes != q.config().codes)
    fail(ErrorKind::config, "train_synthesizer: synthesizer and quantizer vocabularies disagree");
  const std::uint64_t frozen = q.params().content_hash();

  const std::vector<std::vector<double>> spk = speaker_table(corpus);
  std::vector<TokenStream> streams;
  streams.reserve(corpus.size());
  for (const Utterance& u : corpus) {
    if (u.wave.samples.empty())
      fail(ErrorKind::input, "train_synthesizer: utterance " + u.id + " is empty");
    streams.push_back(encode_repetition(q.assign_codes(q.encode(u.wave))));
  }

  Adam adam(s.params(), AdamConfig{cfg.beta1, cfg.beta2, 1e-8});
  Rng rng(cfg.seed);

  TrainReport report;
  report.loss.reserve(static_cast<std::size_t>(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    // sample utterances with replacement until the batch covers the
    // configured number of content frames
    std::vector<Index> batch;
    Index covered = 0;
    while (covered < cfg.batch_frames) {
      const Index ui = rng.uniform_int(static_cast<Index>(corpus.size()));
      batch.push_back(ui);
      covered += streams[static_cast<std::size_t>(ui)].content_len();
    }

    Graph g(true);
    Binding bind(g, s.params(), true);
    Tensor total;
    for (Index ui : batch) {
      const std::size_t i = static_cast<std::size_t>(ui);
      Tensor l = s.utterance_loss_graph(bind, corpus[i].phones, spk[i], streams[i]);
      total = total.valid() ? add(total, l) : l;
    }
    total = scale(total, 1.0 / static_cast<double>(batch.size()));

    std::vector<std::vector<double>> grads = collect_grads(g, total, bind);
    adam.step(grads, linear_decay_lr(cfg.lr, step, cfg.steps));
    report.loss.push_back(total.scalar());
    log_step(log, "stage2", step, cfg.steps, report.loss.back(), cfg.log_every);
  }

  if (q.params().content_hash() != frozen)
    fail(ErrorKind::contract, "train_synthesizer: quantizer parameters changed during stage 2");
  return report;
}

}  // namespace mqtts
