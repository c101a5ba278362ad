#include "mqtts/synthesizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "mqtts/error.hpp"
#include "mqtts/kernels.hpp"

namespace mqtts {

namespace {

constexpr double kLnEps = 1e-5;
// finite key mask for the left-padding probe; -inf would NaN fully-masked rows
constexpr double kMaskOff = -1e30;

Mat to_mat(Tensor t) {
  Mat m(t.rows(), t.ndim() == 2 ? t.cols() : 1);
  std::memcpy(m.v.data(), t.value().data(), t.value().size() * sizeof(double));
  return m;
}

}  // namespace

void SynthesizerConfig::validate() const {
  if (layers_enc < 1 || layers_dec < 1 || subdecoder_layers < 1) {
    fail(ErrorKind::config, "synthesizer: need at least one layer per stack");
  }
  if (model_dim < 1 || heads < 1 || dim_ff < 1 || groups < 1 || codes < 1 || phonemes < 1) {
    fail(ErrorKind::config, "synthesizer: dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    fail(ErrorKind::config, "synthesizer: model_dim " + std::to_string(model_dim) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  if (model_dim % groups != 0) {
    fail(ErrorKind::config, "synthesizer: model_dim " + std::to_string(model_dim) +
                                " not divisible by " + std::to_string(groups) + " groups");
  }
}

std::vector<double> alibi_slopes(Index heads) {
  if (heads < 1) fail(ErrorKind::input, "alibi: need at least one head");
  auto geometric = [](Index n) {
    std::vector<double> s;
    for (Index h = 1; h <= n; ++h) {
      s.push_back(std::pow(2.0, -8.0 * static_cast<double>(h) / static_cast<double>(n)));
    }
    return s;
  };
  if ((heads & (heads - 1)) == 0) return geometric(heads);
  Index n2 = 1;
  while (n2 * 2 <= heads) n2 *= 2;
  std::vector<double> s = geometric(n2);
  std::vector<double> extra = geometric(2 * n2);
  for (std::size_t i = 0; static_cast<Index>(s.size()) < heads; i += 2) s.push_back(extra[i]);
  return s;
}

Mat alibi_bias(Index len, double slope, bool causal) {
  if (len < 1) fail(ErrorKind::input, "alibi: empty sequence");
  const double ninf = -std::numeric_limits<double>::infinity();
  Mat b(len, len);
  for (Index i = 0; i < len; ++i) {
    for (Index j = 0; j < len; ++j) {
      if (causal && j > i) {
        b.at(i, j) = ninf;
      } else {
        b.at(i, j) = -slope * std::abs(static_cast<double>(i - j));
      }
    }
  }
  return b;
}

Synthesizer::Attn Synthesizer::add_attn(const std::string& prefix, Index in_dim, Index out_dim,
                                        Rng& rng) {
  Attn a;
  auto lin = [&](const std::string& name, const Param*& w, const Param*& b) {
    Param* pw = params_.add(prefix + "." + name + ".w", {in_dim, out_dim});
    init_fanin(pw, rng, in_dim);
    Param* pb = params_.add(prefix + "." + name + ".b", {1, out_dim});
    init_zero(pb);
    w = pw;
    b = pb;
  };
  lin("q", a.wq, a.bq);
  lin("k", a.wk, a.bk);
  lin("v", a.wv, a.bv);
  lin("o", a.wo, a.bo);
  return a;
}

Synthesizer::Layer Synthesizer::add_layer(const std::string& prefix, bool cross, Rng& rng) {
  const Index d = cfg_.model_dim;
  Layer l;
  auto ln = [&](const std::string& name, const Param*& g, const Param*& b) {
    Param* pg = params_.add(prefix + "." + name + ".g", {1, d});
    std::fill(pg->value.begin(), pg->value.end(), 1.0);
    Param* pb = params_.add(prefix + "." + name + ".b", {1, d});
    init_zero(pb);
    g = pg;
    b = pb;
  };
  ln("ln1", l.ln1_g, l.ln1_b);
  l.self = add_attn(prefix + ".attn", d, d, rng);
  l.has_cross = cross;
  if (cross) {
    ln("lnx", l.lnx_g, l.lnx_b);
    l.cross = add_attn(prefix + ".cross", d, d, rng);
  }
  ln("ln2", l.ln2_g, l.ln2_b);
  Param* w1 = params_.add(prefix + ".ff.w1", {d, cfg_.dim_ff});
  init_fanin(w1, rng, d);
  init_zero(params_.add(prefix + ".ff.b1", {1, cfg_.dim_ff}));
  Param* w2 = params_.add(prefix + ".ff.w2", {cfg_.dim_ff, d});
  init_fanin(w2, rng, cfg_.dim_ff);
  init_zero(params_.add(prefix + ".ff.b2", {1, d}));
  l.ff_w1 = w1;
  l.ff_b1 = params_.find(prefix + ".ff.b1");
  l.ff_w2 = w2;
  l.ff_b2 = params_.find(prefix + ".ff.b2");
  return l;
}

Synthesizer::Synthesizer(const SynthesizerConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  cfg_.validate();
  const Index d = cfg_.model_dim;
  const Index v = cfg_.vocab();

  Param* sw1 = params_.add("spk.l1.w", {kSpeakerDim, d});
  init_fanin(sw1, init_rng, kSpeakerDim);
  init_zero(params_.add("spk.l1.b", {1, d}));
  Param* sw2 = params_.add("spk.l2.w", {d, d});
  init_fanin(sw2, init_rng, d);
  init_zero(params_.add("spk.l2.b", {1, d}));
  spk_w1_ = sw1;
  spk_b1_ = params_.find("spk.l1.b");
  spk_w2_ = sw2;
  spk_b2_ = params_.find("spk.l2.b");

  Param* pe = params_.add("emb.phon", {cfg_.phonemes, d});
  init_uniform(pe, init_rng, -1.0 / std::sqrt(static_cast<double>(d)),
               1.0 / std::sqrt(static_cast<double>(d)));
  phon_emb_ = pe;

  for (Index i = 0; i < cfg_.layers_enc; ++i) {
    enc_layers_.push_back(add_layer("enc." + std::to_string(i), false, init_rng));
  }
  Param* eg = params_.add("enc.final.g", {1, d});
  std::fill(eg->value.begin(), eg->value.end(), 1.0);
  init_zero(params_.add("enc.final.b", {1, d}));
  enc_final_g_ = eg;
  enc_final_b_ = params_.find("enc.final.b");

  const Index gd = cfg_.group_dim();
  for (Index g = 0; g < cfg_.groups; ++g) {
    Param* e = params_.add("dec.emb." + std::to_string(g), {v, gd});
    init_uniform(e, init_rng, -1.0 / std::sqrt(static_cast<double>(gd)),
                 1.0 / std::sqrt(static_cast<double>(gd)));
    dec_emb_.push_back(e);
  }
  for (Index i = 0; i < cfg_.layers_dec; ++i) {
    bool last = i == cfg_.layers_dec - 1;
    dec_layers_.push_back(add_layer("dec." + std::to_string(i), last, init_rng));
  }
  Param* dg = params_.add("dec.final.g", {1, d});
  std::fill(dg->value.begin(), dg->value.end(), 1.0);
  init_zero(params_.add("dec.final.b", {1, d}));
  dec_final_g_ = dg;
  dec_final_b_ = params_.find("dec.final.b");

  if (cfg_.use_subdecoder) {
    Param* ssw = params_.add("sub.start.w", {d, d});
    init_fanin(ssw, init_rng, d);
    init_zero(params_.add("sub.start.b", {1, d}));
    sub_start_w_ = ssw;
    sub_start_b_ = params_.find("sub.start.b");
    for (Index g = 0; g + 1 < cfg_.groups; ++g) {
      Param* e = params_.add("sub.emb." + std::to_string(g), {v, d});
      init_uniform(e, init_rng, -1.0 / std::sqrt(static_cast<double>(d)),
                   1.0 / std::sqrt(static_cast<double>(d)));
      sub_emb_.push_back(e);
    }
    for (Index i = 0; i < cfg_.subdecoder_layers; ++i) {
      sub_layers_.push_back(add_layer("sub." + std::to_string(i), false, init_rng));
    }
    Param* sg = params_.add("sub.final.g", {1, d});
    std::fill(sg->value.begin(), sg->value.end(), 1.0);
    init_zero(params_.add("sub.final.b", {1, d}));
    sub_final_g_ = sg;
    sub_final_b_ = params_.find("sub.final.b");
  } else {
    sub_start_w_ = sub_start_b_ = sub_final_g_ = sub_final_b_ = nullptr;
  }

  // output heads start at zero so a fresh model is exactly uniform
  for (Index g = 0; g < cfg_.groups; ++g) {
    Param* hw = params_.add("head." + std::to_string(g) + ".w", {d, v});
    init_zero(hw);
    Param* hb = params_.add("head." + std::to_string(g) + ".b", {1, v});
    init_zero(hb);
    head_w_.push_back(hw);
    head_b_.push_back(hb);
  }
}

namespace {

Tensor affine_ln(const Binding& bind, Tensor x, const Param* g, const Param* b) {
  return add_rowvec(mul_rowvec(layer_norm(x, kLnEps), bind[g]), bind[b]);
}

}  // namespace

Tensor Synthesizer::attention_graph(const Binding& bind, const Attn& a, Tensor x, Index heads,
                                    const std::vector<Mat>& bias, Tensor* weights_out) const {
  Graph& g = x.graph();
  const Index hd = cfg_.model_dim / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor q = add_rowvec(matmul(x, bind[a.wq]), bind[a.bq]);
  Tensor k = add_rowvec(matmul(x, bind[a.wk]), bind[a.bk]);
  Tensor v = add_rowvec(matmul(x, bind[a.wv]), bind[a.bv]);
  std::vector<Tensor> ctx;
  for (Index h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor scores = scale(matmul_nt(qh, kh), sc);
    Tensor biased = add(scores, g.leaf({x.rows(), x.rows()}, bias[static_cast<std::size_t>(h)].v));
    Tensor w = softmax(biased, 1);
    if (weights_out != nullptr && h == 0) *weights_out = w;
    ctx.push_back(matmul(w, vh));
  }
  Tensor o = concat_cols(ctx);
  return add_rowvec(matmul(o, bind[a.wo]), bind[a.bo]);
}

Tensor Synthesizer::cross_attention_graph(const Binding& bind, const Attn& a, Tensor x, Tensor mem,
                                          Tensor* weights_out) const {
  const double sc = 1.0 / std::sqrt(static_cast<double>(cfg_.model_dim));
  Tensor q = add_rowvec(matmul(x, bind[a.wq]), bind[a.bq]);
  Tensor k = add_rowvec(matmul(mem, bind[a.wk]), bind[a.bk]);
  Tensor v = add_rowvec(matmul(mem, bind[a.wv]), bind[a.bv]);
  Tensor w = softmax(scale(matmul_nt(q, k), sc), 1);
  if (weights_out != nullptr) *weights_out = w;
  return add_rowvec(matmul(matmul(w, v), bind[a.wo]), bind[a.bo]);
}

Tensor Synthesizer::ffn_graph(const Binding& bind, const Layer& l, Tensor h) const {
  Tensor a = relu(add_rowvec(matmul(h, bind[l.ff_w1]), bind[l.ff_b1]));
  return add_rowvec(matmul(a, bind[l.ff_w2]), bind[l.ff_b2]);
}

Tensor Synthesizer::stack_graph(const Binding& bind, const std::vector<Layer>& layers, Tensor x,
                                Index heads, const std::vector<Mat>& bias, Tensor mem,
                                Tensor* alignment, const Param* final_g,
                                const Param* final_b) const {
  for (const Layer& l : layers) {
    x = add(x, attention_graph(bind, l.self, affine_ln(bind, x, l.ln1_g, l.ln1_b), heads, bias));
    if (l.has_cross) {
      x = add(x, cross_attention_graph(bind, l.cross, affine_ln(bind, x, l.lnx_g, l.lnx_b), mem,
                                       alignment));
    }
    x = add(x, ffn_graph(bind, l, affine_ln(bind, x, l.ln2_g, l.ln2_b)));
  }
  return affine_ln(bind, x, final_g, final_b);
}

Tensor Synthesizer::encode_phonemes_graph(const Binding& bind, std::span<const std::int32_t> ids,
                                          Index pad_left) const {
  if (ids.empty()) fail(ErrorKind::input, "phoneme encoder: empty sequence");
  if (pad_left < 0) fail(ErrorKind::input, "phoneme encoder: negative padding");
  for (std::int32_t id : ids) {
    if (id < 0 || id >= cfg_.phonemes) {
      fail(ErrorKind::input, "phoneme encoder: id " + std::to_string(id) +
                                 " outside inventory of " + std::to_string(cfg_.phonemes));
    }
  }
  Graph& g = bind.leaves().front().graph();
  Tensor x = embedding_rows(bind[phon_emb_], ids);
  const Index total = pad_left + static_cast<Index>(ids.size());
  if (pad_left > 0) {
    Tensor zeros = g.leaf_fill({pad_left, cfg_.model_dim}, 0.0);
    std::vector<Tensor> parts{zeros, x};
    x = concat_rows(parts);
  }
  std::vector<double> slopes = alibi_slopes(cfg_.heads);
  std::vector<Mat> bias;
  for (Index h = 0; h < cfg_.heads; ++h) {
    Mat b = alibi_bias(total, cfg_.use_alibi ? slopes[static_cast<std::size_t>(h)] : 0.0, false);
    for (Index i = 0; i < total; ++i) {
      for (Index j = 0; j < pad_left; ++j) b.at(i, j) += kMaskOff;
    }
    bias.push_back(std::move(b));
  }
  Tensor out =
      stack_graph(bind, enc_layers_, x, cfg_.heads, bias, Tensor(), nullptr, enc_final_g_,
                  enc_final_b_);
  if (pad_left > 0) out = slice_rows(out, pad_left, total);
  return out;
}

Tensor Synthesizer::speaker_embed_graph(const Binding& bind,
                                        std::span<const double> speaker) const {
  if (static_cast<Index>(speaker.size()) != kSpeakerDim) {
    fail(ErrorKind::dimension, "speaker embed: expected " + std::to_string(kSpeakerDim) +
                                   " values, got " + std::to_string(speaker.size()));
  }
  Graph& g = bind.leaves().front().graph();
  Tensor s = g.leaf({1, kSpeakerDim}, speaker);
  Tensor h = relu(add_rowvec(matmul(s, bind[spk_w1_]), bind[spk_b1_]));
  return add_rowvec(matmul(h, bind[spk_w2_]), bind[spk_b2_]);
}

Tensor Synthesizer::decoder_states_graph(const Binding& bind, const TokenStream& stream,
                                         Tensor enc, Tensor spk, Tensor* alignment) const {
  stream.validate();
  if (stream.n != cfg_.groups || stream.k != cfg_.codes) {
    fail(ErrorKind::dimension, "decoder: stream shape does not match the model");
  }
  const Index steps = stream.len - 1;
  std::vector<Tensor> parts;
  for (Index g = 0; g < cfg_.groups; ++g) {
    std::vector<std::int32_t> ids(static_cast<std::size_t>(steps));
    for (Index p = 0; p < steps; ++p) ids[static_cast<std::size_t>(p)] = stream.at(p, g);
    parts.push_back(embedding_rows(bind[dec_emb_[static_cast<std::size_t>(g)]], ids));
  }
  Tensor x = add_rowvec(concat_cols(parts), spk);
  std::vector<double> slopes = alibi_slopes(cfg_.heads);
  std::vector<Mat> bias;
  for (Index h = 0; h < cfg_.heads; ++h) {
    bias.push_back(
        alibi_bias(steps, cfg_.use_alibi ? slopes[static_cast<std::size_t>(h)] : 0.0, true));
  }
  return stack_graph(bind, dec_layers_, x, cfg_.heads, bias, enc, alignment, dec_final_g_,
                     dec_final_b_);
}

Tensor Synthesizer::subdecoder_graph(const Binding& bind, const TokenStream& stream,
                                     Tensor dec_states, Index upto_group,
                                     std::vector<Tensor>* logits) const {
  const Index steps = stream.len - 1;
  const Index n = upto_group + 1;
  const Index hd = cfg_.head_dim();
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));

  // one tensor per sub-decoder position, each (steps, model_dim)
  std::vector<Tensor> pos;
  pos.push_back(add_rowvec(matmul(dec_states, bind[sub_start_w_]), bind[sub_start_b_]));
  for (Index i = 1; i < n; ++i) {
    std::vector<std::int32_t> ids(static_cast<std::size_t>(steps));
    for (Index p = 0; p < steps; ++p) ids[static_cast<std::size_t>(p)] = stream.at(p + 1, i - 1);
    pos.push_back(embedding_rows(bind[sub_emb_[static_cast<std::size_t>(i - 1)]], ids));
  }

  for (const Layer& l : sub_layers_) {
    std::vector<Tensor> q(pos.size()), k(pos.size()), v(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      Tensor a = affine_ln(bind, pos[i], l.ln1_g, l.ln1_b);
      q[i] = add_rowvec(matmul(a, bind[l.self.wq]), bind[l.self.bq]);
      k[i] = add_rowvec(matmul(a, bind[l.self.wk]), bind[l.self.bk]);
      v[i] = add_rowvec(matmul(a, bind[l.self.wv]), bind[l.self.bv]);
    }
    for (Index i = 0; i < n; ++i) {
      std::vector<Tensor> ctx_heads;
      for (Index h = 0; h < cfg_.heads; ++h) {
        Tensor qh = slice_cols(q[static_cast<std::size_t>(i)], h * hd, (h + 1) * hd);
        std::vector<Tensor> cols;
        for (Index j = 0; j <= i; ++j) {
          Tensor kh = slice_cols(k[static_cast<std::size_t>(j)], h * hd, (h + 1) * hd);
          cols.push_back(rowwise_dot(qh, kh));
        }
        Tensor w = softmax(scale(concat_cols(cols), sc), 1);
        Tensor ctx;
        for (Index j = 0; j <= i; ++j) {
          Tensor vh = slice_cols(v[static_cast<std::size_t>(j)], h * hd, (h + 1) * hd);
          Tensor term = mul_colvec(vh, slice_cols(w, j, j + 1));
          ctx = j == 0 ? term : add(ctx, term);
        }
        ctx_heads.push_back(ctx);
      }
      Tensor o = add_rowvec(matmul(concat_cols(ctx_heads), bind[l.self.wo]), bind[l.self.bo]);
      pos[static_cast<std::size_t>(i)] = add(pos[static_cast<std::size_t>(i)], o);
    }
    for (std::size_t i = 0; i < pos.size(); ++i) {
      pos[i] = add(pos[i], ffn_graph(bind, l, affine_ln(bind, pos[i], l.ln2_g, l.ln2_b)));
    }
  }

  if (logits != nullptr) {
    logits->clear();
    for (Index gi = 0; gi < n; ++gi) {
      Tensor f = affine_ln(bind, pos[static_cast<std::size_t>(gi)], sub_final_g_, sub_final_b_);
      logits->push_back(add_rowvec(matmul(f, bind[head_w_[static_cast<std::size_t>(gi)]]),
                                   bind[head_b_[static_cast<std::size_t>(gi)]]));
    }
  }
  return pos.back();
}

std::vector<Tensor> Synthesizer::stream_logits_graph(const Binding& bind,
                                                     const TokenStream& stream,
                                                     Tensor dec_states) const {
  std::vector<Tensor> logits;
  if (!cfg_.use_subdecoder) {
    for (Index g = 0; g < cfg_.groups; ++g) {
      logits.push_back(add_rowvec(matmul(dec_states, bind[head_w_[static_cast<std::size_t>(g)]]),
                                  bind[head_b_[static_cast<std::size_t>(g)]]));
    }
    return logits;
  }
  subdecoder_graph(bind, stream, dec_states, cfg_.groups - 1, &logits);
  return logits;
}

Tensor Synthesizer::utterance_loss_graph(const Binding& bind, std::span<const std::int32_t> ids,
                                         std::span<const double> speaker,
                                         const TokenStream& stream) const {
  Tensor enc = encode_phonemes_graph(bind, ids);
  Tensor spk = speaker_embed_graph(bind, speaker);
  Tensor dec = decoder_states_graph(bind, stream, enc, spk);
  std::vector<Tensor> logits = stream_logits_graph(bind, stream, dec);
  const Index steps = stream.len - 1;
  Tensor loss;
  for (Index g = 0; g < cfg_.groups; ++g) {
    std::vector<std::int32_t> targets(static_cast<std::size_t>(steps));
    for (Index p = 0; p < steps; ++p) targets[static_cast<std::size_t>(p)] = stream.at(p + 1, g);
    Tensor term = cross_entropy_sum(logits[static_cast<std::size_t>(g)], targets);
    loss = g == 0 ? term : add(loss, term);
  }
  return loss;
}

double Synthesizer::utterance_loss(std::span<const std::int32_t> ids,
                                   std::span<const double> speaker,
                                   const TokenStream& stream) const {
  Graph g(false);
  // read-only binding: evaluation only, parameters are never written through it
  Binding bind(g, const_cast<ParamStore&>(params_), false);
  return utterance_loss_graph(bind, ids, speaker, stream).scalar();
}

// --- plain incremental path ---

Mat Synthesizer::plain_linear(const Mat& x, const Param* w, const Param* b) const {
  Mat out(x.rows, w->shape[1]);
  kernels::gemm(false, false, x.rows, w->shape[1], x.cols, x.v.data(), w->value.data(),
                out.v.data());
  for (Index i = 0; i < out.rows; ++i) {
    for (Index j = 0; j < out.cols; ++j) out.at(i, j) += b->value[static_cast<std::size_t>(j)];
  }
  return out;
}

Mat Synthesizer::plain_ln(const Mat& x, const Param* g, const Param* b) const {
  // mirrors the layer_norm op's arithmetic exactly, then the affine pair
  Mat out(x.rows, x.cols);
  const double count = static_cast<double>(x.cols);
  for (Index i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double mean = 0.0;
    for (Index j = 0; j < x.cols; ++j) mean += xr[j];
    mean /= count;
    double var = 0.0;
    for (Index j = 0; j < x.cols; ++j) {
      double d = xr[j] - mean;
      var += d * d;
    }
    var /= count;
    double inv = 1.0 / std::sqrt(var + kLnEps);
    for (Index j = 0; j < x.cols; ++j) {
      double y = (xr[j] - mean) * inv;
      out.at(i, j) = y * g->value[static_cast<std::size_t>(j)] + b->value[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

Mat Synthesizer::encode_phonemes(std::span<const std::int32_t> ids) const {
  Graph g(false);
  Binding bind(g, const_cast<ParamStore&>(params_), false);
  return to_mat(encode_phonemes_graph(bind, ids));
}

Mat Synthesizer::process_speaker(std::span<const double> speaker) const {
  Graph g(false);
  Binding bind(g, const_cast<ParamStore&>(params_), false);
  return to_mat(speaker_embed_graph(bind, speaker));
}

DecoderState Synthesizer::begin_stream(Mat enc_states, Mat spk, Index capacity) const {
  if (enc_states.cols != cfg_.model_dim || enc_states.rows < 1) {
    fail(ErrorKind::dimension, "begin stream: bad encoder state shape");
  }
  if (spk.rows != 1 || spk.cols != cfg_.model_dim) {
    fail(ErrorKind::dimension, "begin stream: bad speaker shape");
  }
  if (capacity < 1) fail(ErrorKind::input, "begin stream: capacity must be positive");
  DecoderState st;
  const Attn& cross = dec_layers_.back().cross;
  st.enc_k = plain_linear(enc_states, cross.wk, cross.bk);
  st.enc_v = plain_linear(enc_states, cross.wv, cross.bv);
  st.enc = std::move(enc_states);
  st.spk = std::move(spk);
  const Index hd = cfg_.head_dim();
  st.self_k.assign(static_cast<std::size_t>(cfg_.layers_dec * cfg_.heads), Mat(capacity, hd));
  st.self_v.assign(static_cast<std::size_t>(cfg_.layers_dec * cfg_.heads), Mat(capacity, hd));
  st.steps = 0;
  st.capacity = capacity;
  return st;
}

Mat Synthesizer::decoder_step(std::span<const std::int32_t> prev_tokens, DecoderState& state,
                              Index win_lo, Index win_hi) const {
  if (static_cast<Index>(prev_tokens.size()) != cfg_.groups) {
    fail(ErrorKind::dimension, "decoder step: expected one token per group");
  }
  for (std::int32_t t : prev_tokens) {
    if (t < 0 || t >= cfg_.vocab()) {
      fail(ErrorKind::input, "decoder step: token " + std::to_string(t) + " out of range");
    }
  }
  if (state.steps >= state.capacity) fail(ErrorKind::contract, "decoder step: cache full");
  if (win_lo < 0 || win_hi < win_lo || win_hi >= state.enc.rows) {
    fail(ErrorKind::input, "decoder step: window out of bounds");
  }

  const Index d = cfg_.model_dim;
  const Index gd = cfg_.group_dim();
  const Index hd = cfg_.head_dim();
  const Index t = state.steps;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> slopes = alibi_slopes(cfg_.heads);

  Mat x(1, d);
  for (Index g = 0; g < cfg_.groups; ++g) {
    const double* row =
        dec_emb_[static_cast<std::size_t>(g)]->value.data() + prev_tokens[static_cast<std::size_t>(g)] * gd;
    for (Index c = 0; c < gd; ++c) x.at(0, g * gd + c) = row[c];
  }
  for (Index c = 0; c < d; ++c) x.at(0, c) += state.spk.at(0, c);

  for (Index li = 0; li < cfg_.layers_dec; ++li) {
    const Layer& l = dec_layers_[static_cast<std::size_t>(li)];
    Mat xa = plain_ln(x, l.ln1_g, l.ln1_b);
    Mat q = plain_linear(xa, l.self.wq, l.self.bq);
    Mat k = plain_linear(xa, l.self.wk, l.self.bk);
    Mat v = plain_linear(xa, l.self.wv, l.self.bv);
    Mat ctx(1, d);
    for (Index h = 0; h < cfg_.heads; ++h) {
      Mat& kc = state.self_k[static_cast<std::size_t>(li * cfg_.heads + h)];
      Mat& vc = state.self_v[static_cast<std::size_t>(li * cfg_.heads + h)];
      for (Index c = 0; c < hd; ++c) {
        kc.at(t, c) = k.at(0, h * hd + c);
        vc.at(t, c) = v.at(0, h * hd + c);
      }
      std::vector<double> scores(static_cast<std::size_t>(t + 1));
      kernels::gemm(false, true, 1, t + 1, hd, q.v.data() + h * hd, kc.v.data(), scores.data());
      const double slope = cfg_.use_alibi ? slopes[static_cast<std::size_t>(h)] : 0.0;
      for (Index j = 0; j <= t; ++j) {
        scores[static_cast<std::size_t>(j)] =
            scores[static_cast<std::size_t>(j)] * sc - slope * static_cast<double>(t - j);
      }
      std::vector<double> w(scores.size());
      kernels::softmax_rows(scores.data(), 1, t + 1, w.data());
      kernels::gemm(false, false, 1, hd, t + 1, w.data(), vc.v.data(), ctx.v.data() + h * hd);
    }
    Mat attn_out = plain_linear(ctx, l.self.wo, l.self.bo);
    for (Index c = 0; c < d; ++c) x.at(0, c) += attn_out.at(0, c);

    if (l.has_cross) {
      Mat xc = plain_ln(x, l.lnx_g, l.lnx_b);
      Mat cq = plain_linear(xc, l.cross.wq, l.cross.bq);
      const Index elen = state.enc.rows;
      // scores are kept for every encoder position (the alignment machine
      // reads them outside the window); softmax and context use the window only
      state.cross_logits.assign(static_cast<std::size_t>(elen), 0.0);
      kernels::gemm(false, true, 1, elen, d, cq.v.data(), state.enc_k.v.data(),
                    state.cross_logits.data());
      const double csc = 1.0 / std::sqrt(static_cast<double>(d));
      for (double& s : state.cross_logits) s *= csc;
      const Index nwin = win_hi - win_lo + 1;
      std::vector<double> w(static_cast<std::size_t>(nwin));
      kernels::softmax_rows(state.cross_logits.data() + win_lo, 1, nwin, w.data());
      state.cross_weights.assign(static_cast<std::size_t>(elen), 0.0);
      for (Index j = 0; j < nwin; ++j)
        state.cross_weights[static_cast<std::size_t>(win_lo + j)] = w[static_cast<std::size_t>(j)];
      Mat cctx(1, d);
      kernels::gemm(false, false, 1, d, nwin, w.data(), state.enc_v.row(win_lo), cctx.v.data());
      Mat cross_out = plain_linear(cctx, l.cross.wo, l.cross.bo);
      for (Index c = 0; c < d; ++c) x.at(0, c) += cross_out.at(0, c);
    }

    Mat hdn = plain_linear(plain_ln(x, l.ln2_g, l.ln2_b), l.ff_w1, l.ff_b1);
    for (double& e : hdn.v) e = e > 0.0 ? e : 0.0;
    Mat ff_out = plain_linear(hdn, l.ff_w2, l.ff_b2);
    for (Index c = 0; c < d; ++c) x.at(0, c) += ff_out.at(0, c);
  }

  state.steps = t + 1;
  return plain_ln(x, dec_final_g_, dec_final_b_);
}

Mat Synthesizer::plain_subdecoder_states(const Mat& inputs) const {
  const Index n = inputs.rows;
  const Index d = cfg_.model_dim;
  const Index hd = cfg_.head_dim();
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat x = inputs;
  for (const Layer& l : sub_layers_) {
    Mat xa = plain_ln(x, l.ln1_g, l.ln1_b);
    Mat q = plain_linear(xa, l.self.wq, l.self.bq);
    Mat k = plain_linear(xa, l.self.wk, l.self.bk);
    Mat v = plain_linear(xa, l.self.wv, l.self.bv);
    Mat ctx(n, d);
    for (Index i = 0; i < n; ++i) {
      for (Index h = 0; h < cfg_.heads; ++h) {
        std::vector<double> scores(static_cast<std::size_t>(i + 1));
        for (Index j = 0; j <= i; ++j) {
          double s = 0.0;
          const double* qr = q.row(i) + h * hd;
          const double* kr = k.row(j) + h * hd;
          for (Index c = 0; c < hd; ++c) s += qr[c] * kr[c];
          scores[static_cast<std::size_t>(j)] = s * sc;
        }
        std::vector<double> w(scores.size());
        kernels::softmax_rows(scores.data(), 1, i + 1, w.data());
        for (Index j = 0; j <= i; ++j) {
          const double* vr = v.row(j) + h * hd;
          for (Index c = 0; c < hd; ++c) {
            ctx.at(i, h * hd + c) += w[static_cast<std::size_t>(j)] * vr[c];
          }
        }
      }
    }
    Mat attn_out = plain_linear(ctx, l.self.wo, l.self.bo);
    for (Index i = 0; i < x.size(); ++i) x.v[static_cast<std::size_t>(i)] += attn_out.v[static_cast<std::size_t>(i)];
    Mat hdn = plain_linear(plain_ln(x, l.ln2_g, l.ln2_b), l.ff_w1, l.ff_b1);
    for (double& e : hdn.v) e = e > 0.0 ? e : 0.0;
    Mat ff_out = plain_linear(hdn, l.ff_w2, l.ff_b2);
    for (Index i = 0; i < x.size(); ++i) x.v[static_cast<std::size_t>(i)] += ff_out.v[static_cast<std::size_t>(i)];
  }
  return x;
}

std::vector<double> Synthesizer::group_distribution(const Mat& o_t,
                                                    std::span<const std::int32_t> prefix,
                                                    Index group) const {
  if (group < 0 || group >= cfg_.groups) fail(ErrorKind::input, "group distribution: bad group");
  if (o_t.rows != 1 || o_t.cols != cfg_.model_dim) {
    fail(ErrorKind::dimension, "group distribution: bad decoder state shape");
  }
  if (static_cast<Index>(prefix.size()) < group) {
    fail(ErrorKind::input, "group distribution: prefix shorter than group index");
  }
  for (Index i = 0; i < group; ++i) {
    if (prefix[static_cast<std::size_t>(i)] < 0 ||
        prefix[static_cast<std::size_t>(i)] >= cfg_.vocab()) {
      fail(ErrorKind::input, "group distribution: prefix token out of range");
    }
  }
  const Index v = cfg_.vocab();
  Mat logits;
  if (!cfg_.use_subdecoder) {
    logits = plain_linear(o_t, head_w_[static_cast<std::size_t>(group)],
                          head_b_[static_cast<std::size_t>(group)]);
  } else {
    const Index d = cfg_.model_dim;
    Mat inputs(group + 1, d);
    Mat start = plain_linear(o_t, sub_start_w_, sub_start_b_);
    for (Index c = 0; c < d; ++c) inputs.at(0, c) = start.at(0, c);
    for (Index i = 1; i <= group; ++i) {
      const double* row = sub_emb_[static_cast<std::size_t>(i - 1)]->value.data() +
                          prefix[static_cast<std::size_t>(i - 1)] * d;
      for (Index c = 0; c < d; ++c) inputs.at(i, c) = row[c];
    }
    Mat states = plain_subdecoder_states(inputs);
    Mat last(1, d);
    for (Index c = 0; c < d; ++c) last.at(0, c) = states.at(group, c);
    Mat f = plain_ln(last, sub_final_g_, sub_final_b_);
    logits = plain_linear(f, head_w_[static_cast<std::size_t>(group)],
                          head_b_[static_cast<std::size_t>(group)]);
  }
  std::vector<double> dist(static_cast<std::size_t>(v));
  kernels::softmax_rows(logits.v.data(), 1, v, dist.data());
  return dist;
}

}  // namespace mqtts
