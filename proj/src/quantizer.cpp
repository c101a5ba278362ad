#include "mqtts/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "mqtts/error.hpp"
#include "mqtts/kernels.hpp"

namespace mqtts {

namespace {

constexpr double kLeakySlope = 0.1;
constexpr double kGnEps = 1e-5;

MelConfig loss_mel_config(const QuantizerConfig& cfg) {
  MelConfig m;
  m.bands = 80;
  m.win = 1024;
  m.hop = cfg.hop;
  m.floor = 1e-5;
  m.sample_rate = cfg.sample_rate;
  m.fmax = 0.5 * cfg.sample_rate;
  return m;
}

}  // namespace

void QuantizerConfig::validate() const {
  if (groups < 1 || codes < 1 || latent_dim < 1) {
    fail(ErrorKind::config, "quantizer: groups, codes, latent_dim must be positive");
  }
  if (latent_dim % groups != 0) {
    fail(ErrorKind::config, "quantizer: latent_dim " + std::to_string(latent_dim) +
                                " not divisible by groups " + std::to_string(groups));
  }
  if (!(gamma > 0.0) || !(lambda > 0.0)) {
    fail(ErrorKind::config, "quantizer: gamma and lambda must be positive");
  }
  if (hop != 64) fail(ErrorKind::config, "quantizer: hop must be 64 (three stride-4 stages)");
  if (channels < 1 || channels % gn_channels_per_group != 0) {
    fail(ErrorKind::config, "quantizer: channels must be a multiple of gn_channels_per_group");
  }
  if (sample_rate < 1) fail(ErrorKind::config, "quantizer: bad sample rate");
}

void CodeGrid::validate() const {
  if (t < 1 || n < 1) fail(ErrorKind::input, "code grid: empty");
  if (codes.size() != static_cast<std::size_t>(t * n)) {
    fail(ErrorKind::input, "code grid: size mismatch");
  }
  for (std::int32_t c : codes) {
    if (c < 0 || c >= k) {
      fail(ErrorKind::input, "code grid: code " + std::to_string(c) + " out of range [0, " +
                                 std::to_string(k) + ")");
    }
  }
}

Quantizer::Quantizer(const QuantizerConfig& cfg, Rng& init_rng)
    : cfg_(cfg), mel_(loss_mel_config(cfg)) {
  cfg_.validate();
  const Index c = cfg_.channels;
  const Index d = cfg_.latent_dim;

  auto conv_param = [&](const std::string& name, Index kernel, Index in, Index out) {
    Param* w = params_.add(name + ".w", {kernel * in, out});
    init_fanin(w, init_rng, kernel * in);
    init_zero(params_.add(name + ".b", {1, out}));
  };
  auto res_params = [&](const std::string& prefix) {
    conv_param(prefix + ".c1", 3, c, c);
    conv_param(prefix + ".c2", 3, c, c);
    Param* g = params_.add(prefix + ".gn.g", {1, c});
    std::fill(g->value.begin(), g->value.end(), 1.0);
    init_zero(params_.add(prefix + ".gn.b", {1, c}));
  };

  conv_param("enc.stem", 9, 1, c);
  for (int s = 0; s < 3; ++s) {
    std::string p = "enc.s" + std::to_string(s);
    conv_param(p + ".down", 8, c, c);
    res_params(p + ".res");
  }
  conv_param("enc.head", 3, c, d);

  for (Index i = 0; i < cfg_.groups; ++i) {
    Param* b = params_.add("book." + std::to_string(i), {cfg_.codes, cfg_.group_dim()});
    init_uniform(b, init_rng, -1.0 / static_cast<double>(cfg_.codes),
                 1.0 / static_cast<double>(cfg_.codes));
  }

  Param* sw = params_.add("dec.spk.w", {kSpeakerDim, d});
  init_fanin(sw, init_rng, kSpeakerDim);
  init_zero(params_.add("dec.spk.b", {1, d}));
  conv_param("dec.stem", 3, d, c);
  for (int s = 0; s < 3; ++s) {
    std::string p = "dec.s" + std::to_string(s);
    Param* up = params_.add(p + ".up.w", {c, 8 * c});
    init_fanin(up, init_rng, c);
    init_zero(params_.add(p + ".up.b", {1, c}));
    res_params(p + ".res");
  }
  conv_param("dec.head", 9, c, 1);
}

Tensor Quantizer::conv(const Binding& bind, Tensor x, const std::string& name, Index kernel,
                       Index stride, Index pad) const {
  const Param* w = params_.find(name + ".w");
  const Param* b = params_.find(name + ".b");
  Index rows = (x.rows() + stride - 1) / stride;
  Tensor frames = frame_gather_op(x, kernel, stride, pad, rows);
  return add_rowvec(matmul(frames, bind[w]), bind[b]);
}

Tensor Quantizer::residual_block(const Binding& bind, Tensor x, const std::string& prefix) const {
  Tensor h = conv(bind, leaky_relu(x, kLeakySlope), prefix + ".c1", 3, 1, 1);
  h = conv(bind, leaky_relu(h, kLeakySlope), prefix + ".c2", 3, 1, 1);
  h = group_norm(h, cfg_.gn_channels_per_group, kGnEps);
  h = add_rowvec(mul_rowvec(h, bind[params_.find(prefix + ".gn.g")]),
                 bind[params_.find(prefix + ".gn.b")]);
  return add(x, h);
}

Tensor Quantizer::encode_graph(const Binding& bind, Tensor wave) const {
  if (wave.shape().size() != 2 || wave.cols() != 1) {
    fail(ErrorKind::dimension, "encode: wave must be (samples, 1), got " + shape_str(wave.shape()));
  }
  if (wave.rows() < 1) fail(ErrorKind::input, "encode: empty waveform");
  if (wave.rows() < cfg_.hop) fail(ErrorKind::input, "encode: waveform shorter than one hop");

  Tensor h = leaky_relu(conv(bind, wave, "enc.stem", 9, 1, 4), kLeakySlope);
  for (int s = 0; s < 3; ++s) {
    std::string p = "enc.s" + std::to_string(s);
    h = leaky_relu(conv(bind, h, p + ".down", 8, 4, 2), kLeakySlope);
    h = residual_block(bind, h, p + ".res");
  }
  return conv(bind, h, "enc.head", 3, 1, 1);
}

CodeGrid Quantizer::assign_codes(const Mat& z) const {
  if (z.cols != cfg_.latent_dim) {
    fail(ErrorKind::dimension, "assign_codes: latents have dim " + std::to_string(z.cols) +
                                   ", expected " + std::to_string(cfg_.latent_dim));
  }
  if (z.rows < 1) fail(ErrorKind::input, "assign_codes: no frames");
  const Index gdim = cfg_.group_dim();
  std::vector<double> books(
      static_cast<std::size_t>(cfg_.groups * cfg_.codes * gdim));
  for (Index i = 0; i < cfg_.groups; ++i) {
    const Param* b = params_.find("book." + std::to_string(i));
    std::copy(b->value.begin(), b->value.end(),
              books.begin() + static_cast<std::ptrdiff_t>(i * cfg_.codes * gdim));
  }
  CodeGrid grid;
  grid.t = z.rows;
  grid.n = cfg_.groups;
  grid.k = cfg_.codes;
  grid.codes.resize(static_cast<std::size_t>(grid.t * grid.n));
  kernels::nearest_codes(z.v.data(), z.rows, cfg_.groups, gdim, books.data(), cfg_.codes,
                         grid.codes.data());
  return grid;
}

Tensor Quantizer::codebook_lookup(const Binding& bind, const CodeGrid& grid) const {
  grid.validate();
  if (grid.n != cfg_.groups || grid.k != cfg_.codes) {
    fail(ErrorKind::input, "codebook_lookup: grid does not match configuration");
  }
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(cfg_.groups));
  std::vector<std::int32_t> ids(static_cast<std::size_t>(grid.t));
  for (Index i = 0; i < cfg_.groups; ++i) {
    for (Index t = 0; t < grid.t; ++t) ids[static_cast<std::size_t>(t)] = grid.at(t, i);
    parts.push_back(embedding_rows(bind[params_.find("book." + std::to_string(i))], ids));
  }
  return concat_cols(parts);
}

Tensor Quantizer::vq_loss(Tensor z_c, Tensor e) const {
  Tensor quant = sub(stop_gradient(z_c), e);
  Tensor commit = sub(z_c, stop_gradient(e));
  Tensor s = add(sum_all(mul(quant, quant)), scale(sum_all(mul(commit, commit)), cfg_.gamma));
  return scale(s, 1.0 / static_cast<double>(z_c.rows()));
}

Tensor Quantizer::straight_through(Tensor z_c, Tensor e) const {
  return pass_through(e, z_c);
}

Tensor Quantizer::decode_graph(const Binding& bind, Tensor z_q,
                               std::span<const double> speaker) const {
  if (static_cast<Index>(speaker.size()) != kSpeakerDim) {
    fail(ErrorKind::dimension, "decode: speaker vector must have dim " +
                                   std::to_string(kSpeakerDim));
  }
  Graph& g = z_q.graph();
  Tensor spk = g.leaf({1, kSpeakerDim}, speaker, false);
  Tensor cond = add(matmul(spk, bind[params_.find("dec.spk.w")]),
                    bind[params_.find("dec.spk.b")]);
  Tensor h = add_rowvec(z_q, cond);
  h = leaky_relu(conv(bind, h, "dec.stem", 3, 1, 1), kLeakySlope);
  for (int s = 0; s < 3; ++s) {
    std::string p = "dec.s" + std::to_string(s);
    Tensor u = matmul(h, bind[params_.find(p + ".up.w")]);
    h = overlap_add_op(u, 8, 4, 2, 4 * h.rows());
    h = leaky_relu(add_rowvec(h, bind[params_.find(p + ".up.b")]), kLeakySlope);
    h = residual_block(bind, h, p + ".res");
  }
  return tanh_act(conv(bind, h, "dec.head", 9, 1, 4));
}

Tensor Quantizer::mel_l1(Tensor reference_wave, Tensor decoded_wave) const {
  Graph& g = reference_wave.graph();
  Tensor mx = mel_.build(g, reference_wave);
  Tensor my = mel_.build(g, decoded_wave);
  return mean_all(abs_act(sub(mx, my)));
}

Mat Quantizer::encode(const Waveform& x) const {
  Graph g(false);
  Binding bind(g, const_cast<ParamStore&>(params_), false);  // read-only binding
  Tensor wave = g.leaf({static_cast<Index>(x.samples.size()), 1}, x.samples, false);
  Tensor z = encode_graph(bind, wave);
  Mat m(z.rows(), z.cols());
  m.v = z.value();
  return m;
}

Waveform Quantizer::decode(const CodeGrid& grid, std::span<const double> speaker) const {
  Graph g(false);
  Binding bind(g, const_cast<ParamStore&>(params_), false);  // read-only binding
  Tensor e = codebook_lookup(bind, grid);
  Tensor wave = decode_graph(bind, e, speaker);
  Waveform w;
  w.sample_rate = cfg_.sample_rate;
  w.samples = wave.value();
  return w;
}

double Quantizer::quantization_error(const Mat& z) const {
  CodeGrid grid = assign_codes(z);
  const Index gdim = cfg_.group_dim();
  double total = 0.0;
  for (Index t = 0; t < z.rows; ++t) {
    for (Index i = 0; i < cfg_.groups; ++i) {
      const Param* b = params_.find("book." + std::to_string(i));
      const double* e = b->value.data() + static_cast<std::ptrdiff_t>(grid.at(t, i) * gdim);
      for (Index j = 0; j < gdim; ++j) {
        double d = z.at(t, i * gdim + j) - e[j];
        total += d * d;
      }
    }
  }
  return total / static_cast<double>(z.rows);
}

Index Quantizer::reseed_dead_codes(const std::vector<std::vector<char>>& used, const Mat& latents,
                                   Rng& rng) {
  if (static_cast<Index>(used.size()) != cfg_.groups) {
    fail(ErrorKind::dimension, "reseed: usage table has wrong group count");
  }
  if (latents.rows < 1 || latents.cols != cfg_.latent_dim) {
    fail(ErrorKind::dimension, "reseed: latents shape mismatch");
  }
  const Index gdim = cfg_.group_dim();
  Index replaced = 0;
  for (Index i = 0; i < cfg_.groups; ++i) {
    if (static_cast<Index>(used[static_cast<std::size_t>(i)].size()) != cfg_.codes) {
      fail(ErrorKind::dimension, "reseed: usage table has wrong code count");
    }
    Param* b = params_.find("book." + std::to_string(i));
    for (Index c = 0; c < cfg_.codes; ++c) {
      if (used[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]) continue;
      Index r = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(latents.rows)));
      for (Index j = 0; j < gdim; ++j) {
        b->value[static_cast<std::size_t>(c * gdim + j)] = latents.at(r, i * gdim + j);
      }
      ++replaced;
    }
  }
  return replaced;
}

std::vector<std::vector<double>> slice_groups(std::span<const double> z, Index n) {
  if (n < 1) fail(ErrorKind::config, "slice_groups: need at least one group");
  if (static_cast<Index>(z.size()) % n != 0) {
    fail(ErrorKind::config, "slice_groups: dim " + std::to_string(z.size()) +
                                " not divisible by " + std::to_string(n));
  }
  const Index gdim = static_cast<Index>(z.size()) / n;
  std::vector<std::vector<double>> parts(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    parts[static_cast<std::size_t>(i)].assign(z.begin() + i * gdim, z.begin() + (i + 1) * gdim);
  }
  return parts;
}

std::vector<double> concat_groups(const std::vector<std::vector<double>>& parts) {
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<double> stub_speaker_embedder(const Waveform& x) {
  if (x.samples.empty()) fail(ErrorKind::input, "speaker embedder: empty waveform");
  MelConfig cfg;
  cfg.bands = kSpeakerDim;
  cfg.win = 1024;
  cfg.hop = 256;
  cfg.sample_rate = x.sample_rate;
  cfg.fmax = 0.5 * x.sample_rate;
  Mat mel = MelExtractor(cfg).log_mel(x);

  std::vector<double> e(static_cast<std::size_t>(kSpeakerDim), 0.0);
  for (Index t = 0; t < mel.rows; ++t)
    for (Index b = 0; b < mel.cols; ++b) e[static_cast<std::size_t>(b)] += mel.at(t, b);
  double mean = 0.0;
  for (double& v : e) {
    v /= static_cast<double>(mel.rows);
    mean += v;
  }
  mean /= static_cast<double>(kSpeakerDim);
  double norm = 0.0;
  for (double& v : e) {
    v -= mean;  // band-energy shape, not overall level
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    std::fill(e.begin(), e.end(), 0.0);
    e[0] = 1.0;  // degenerate spectrum: fixed deterministic embedding
    return e;
  }
  for (double& v : e) v /= norm;
  return e;
}

Mat kmeans_fit(const Mat& data, Index k, int iters, Rng& rng) {
  if (data.rows < k) fail(ErrorKind::input, "kmeans: fewer rows than clusters");
  if (k < 1) fail(ErrorKind::input, "kmeans: k must be positive");
  const Index dim = data.cols;

  // distinct random rows as initial centroids
  std::vector<Index> idx(static_cast<std::size_t>(data.rows));
  for (Index i = 0; i < data.rows; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < k; ++i) {
    Index j = i + static_cast<Index>(
                      rng.uniform_int(static_cast<std::uint64_t>(data.rows - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  Mat centers(k, dim);
  for (Index c = 0; c < k; ++c) {
    const double* src = data.row(idx[static_cast<std::size_t>(c)]);
    std::copy(src, src + dim, centers.row(c));
  }

  std::vector<Index> assign(static_cast<std::size_t>(data.rows));
  for (int it = 0; it < iters; ++it) {
    for (Index r = 0; r < data.rows; ++r) {
      Index best = 0;
      double best_d = 1e300;
      for (Index c = 0; c < k; ++c) {
        double d = 0.0;
        for (Index j = 0; j < dim; ++j) {
          double x = data.at(r, j) - centers.at(c, j);
          d += x * x;
        }
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[static_cast<std::size_t>(r)] = best;
    }
    Mat sums(k, dim);
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index r = 0; r < data.rows; ++r) {
      Index c = assign[static_cast<std::size_t>(r)];
      counts[static_cast<std::size_t>(c)] += 1;
      for (Index j = 0; j < dim; ++j) sums.at(c, j) += data.at(r, j);
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        Index r = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(data.rows)));
        const double* src = data.row(r);
        std::copy(src, src + dim, centers.row(c));
        continue;
      }
      for (Index j = 0; j < dim; ++j) {
        centers.at(c, j) = sums.at(c, j) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
  }
  return centers;
}

}  // namespace mqtts
