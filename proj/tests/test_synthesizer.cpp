#include "mqtts/synthesizer.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mqtts/error.hpp"
#include "mqtts/finite_diff.hpp"
#include "mqtts/rng.hpp"
#include "test_util.hpp"

using namespace mqtts;
using namespace mqtts::testutil;

namespace {

SynthesizerConfig tiny_config() {
  SynthesizerConfig c;
  c.layers_enc = 2;
  c.layers_dec = 2;
  c.model_dim = 16;
  c.heads = 2;
  c.dim_ff = 32;
  c.subdecoder_layers = 1;
  c.groups = 2;
  c.codes = 6;  // vocabulary 9 with the control tokens
  c.phonemes = 5;
  return c;
}

TokenStream make_stream(Index t, Index n, Index k, Rng& rng) {
  CodeGrid g;
  g.t = t;
  g.n = n;
  g.k = k;
  g.codes.resize(static_cast<std::size_t>(t * n));
  for (Index gi = 0; gi < n; ++gi) {
    for (Index f = 0; f < t; ++f) {
      if (f > 0 && rng.uniform() < 0.35) {
        g.at(f, gi) = g.at(f - 1, gi);
      } else {
        g.at(f, gi) = static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(k)));
      }
    }
  }
  return encode_repetition(g);
}

void randomize_heads(Synthesizer& s, Rng& rng) {
  for (Index g = 0; g < s.config().groups; ++g) {
    for (const char* part : {".w", ".b"}) {
      Param* p = s.params().find("head." + std::to_string(g) + part);
      for (double& v : p->value) v = rng.uniform(-0.3, 0.3);
    }
  }
}

std::vector<double> tensor_row(Tensor t, Index r) {
  const Index c = t.cols();
  std::vector<double> out(static_cast<std::size_t>(c));
  for (Index j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] = t.value()[static_cast<std::size_t>(r * c + j)];
  return out;
}

std::vector<double> mat_row(const Mat& m, Index r) {
  return std::vector<double>(m.row(r), m.row(r) + m.cols);
}

}  // namespace

TEST_CASE("synthesizer config validation") {
  Rng rng(1);
  SynthesizerConfig c = tiny_config();
  c.model_dim = 10;
  c.heads = 4;
  CHECK(catch_kind([&] { Synthesizer s(c, rng); }) == ErrorKind::config);
  c = tiny_config();
  c.groups = 3;  // 16 % 3 != 0
  CHECK(catch_kind([&] { Synthesizer s(c, rng); }) == ErrorKind::config);
  c = tiny_config();
  c.layers_enc = 0;
  CHECK(catch_kind([&] { Synthesizer s(c, rng); }) == ErrorKind::config);
  c = tiny_config();
  c.dim_ff = 0;
  CHECK(catch_kind([&] { Synthesizer s(c, rng); }) == ErrorKind::config);
}

TEST_CASE("alibi slopes follow the geometric sequence") {
  std::vector<double> s4 = alibi_slopes(4);
  REQUIRE(s4.size() == 4);
  CHECK(s4[0] == 0.25);
  CHECK(s4[1] == 0.0625);
  CHECK(s4[2] == 0.015625);
  CHECK(s4[3] == 0.00390625);

  std::vector<double> s1 = alibi_slopes(1);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0] == 0.00390625);

  std::vector<double> s2 = alibi_slopes(2);
  CHECK(s2[0] == 0.0625);
  CHECK(s2[1] == 0.00390625);

  // non-power-of-two interleaves the next power's sequence
  std::vector<double> s3 = alibi_slopes(3);
  REQUIRE(s3.size() == 3);
  CHECK(s3[0] == 0.0625);
  CHECK(s3[1] == 0.00390625);
  CHECK(s3[2] == 0.25);

  CHECK(catch_kind([] { alibi_slopes(0); }) == ErrorKind::input);
}

TEST_CASE("alibi bias matrices") {
  Mat bi = alibi_bias(4, 0.25, false);
  CHECK(bi.at(2, 2) == 0.0);
  CHECK(bi.at(0, 2) == -0.5);
  CHECK(bi.at(2, 0) == -0.5);
  CHECK(bi.at(0, 3) == -0.75);

  Mat ca = alibi_bias(4, 0.25, true);
  CHECK(ca.at(3, 3) == 0.0);
  CHECK(ca.at(3, 1) == -0.5);
  CHECK(std::isinf(ca.at(1, 3)));
  CHECK(ca.at(1, 3) < 0.0);
  CHECK(std::isinf(ca.at(0, 1)));

  CHECK(catch_kind([] { alibi_bias(0, 0.1, false); }) == ErrorKind::input);
}

TEST_CASE("phoneme encoder shapes and input validation") {
  Rng rng(2);
  Synthesizer s(tiny_config(), rng);
  Graph g(false);
  Binding bind(g, s.params(), false);

  std::vector<std::int32_t> one{3};
  Tensor e1 = s.encode_phonemes_graph(bind, one);
  CHECK(e1.rows() == 1);
  CHECK(e1.cols() == 16);
  for (double v : e1.value()) CHECK(std::isfinite(v));

  std::vector<std::int32_t> empty;
  CHECK(catch_kind([&] { s.encode_phonemes_graph(bind, empty); }) == ErrorKind::input);
  std::vector<std::int32_t> bad{0, 5};
  CHECK(catch_kind([&] { s.encode_phonemes_graph(bind, bad); }) == ErrorKind::input);
  std::vector<std::int32_t> neg{-1};
  CHECK(catch_kind([&] { s.encode_phonemes_graph(bind, neg); }) == ErrorKind::input);
}

TEST_CASE("alibi makes position matter and removing it leaves permutation symmetry") {
  Rng rng(3);
  SynthesizerConfig cfg = tiny_config();
  cfg.use_alibi = false;
  Synthesizer plain(cfg, rng);

  // cyclic shift: a reversal would preserve |i - j| and slip past the
  // distance-based bias, so the probe has to change at least one distance
  std::vector<std::int32_t> fwd{0, 1, 2};
  std::vector<std::int32_t> cyc{1, 2, 0};
  const Index perm[3] = {1, 2, 0};
  Mat a = plain.encode_phonemes(fwd);
  Mat b = plain.encode_phonemes(cyc);
  // without a positional signal the encoder is permutation-equivariant
  for (Index i = 0; i < 3; ++i) {
    std::vector<double> ra = mat_row(a, perm[i]);
    std::vector<double> rb = mat_row(b, i);
    CHECK(max_abs_diff(ra, rb) < 1e-12);
  }

  Rng rng2(3);
  Synthesizer biased(tiny_config(), rng2);
  Mat c = biased.encode_phonemes(fwd);
  Mat d = biased.encode_phonemes(cyc);
  double dd = 0.0;
  for (Index i = 0; i < 3; ++i) {
    std::vector<double> rc = mat_row(c, perm[i]);
    std::vector<double> rd = mat_row(d, i);
    dd = std::max(dd, max_abs_diff(rc, rd));
  }
  CHECK(dd > 1e-6);
}

TEST_CASE("left padding never leaks into encoder outputs") {
  Rng rng(4);
  Synthesizer s(tiny_config(), rng);
  std::vector<std::int32_t> ids{0, 1, 2, 3};

  Graph g1(false);
  Binding b1(g1, s.params(), false);
  Tensor base = s.encode_phonemes_graph(b1, ids, 0);

  Graph g2(false);
  Binding b2(g2, s.params(), false);
  Tensor padded = s.encode_phonemes_graph(b2, ids, 5);

  REQUIRE(padded.rows() == base.rows());
  CHECK(bitwise_equal(base.value(), padded.value()));
}

TEST_CASE("decoder states are causal in the stream") {
  Rng rng(5);
  Synthesizer s(tiny_config(), rng);
  Rng sr(50);
  TokenStream a = make_stream(6, 2, 6, sr);
  TokenStream b = a;
  // flip the final content frame of group 0
  std::int32_t& tok = b.at(b.len - 2, 0);
  tok = tok == 2 ? 3 : 2;
  REQUIRE(a.tokens != b.tokens);

  std::vector<std::int32_t> ids{0, 1, 2};
  std::vector<double> spk = random_vec(rng, 16, 0.5);

  auto states = [&](const TokenStream& st) {
    Graph g(false);
    Binding bind(g, s.params(), false);
    Tensor enc = s.encode_phonemes_graph(bind, ids);
    Tensor sv = s.speaker_embed_graph(bind, spk);
    return s.decoder_states_graph(bind, st, enc, sv).value();
  };
  std::vector<double> oa = states(a);
  std::vector<double> ob = states(b);
  const Index steps = a.len - 1;
  const Index d = 16;
  // all rows before the perturbed position agree bitwise, the last differs
  std::vector<double> head_a(oa.begin(), oa.begin() + (steps - 1) * d);
  std::vector<double> head_b(ob.begin(), ob.begin() + (steps - 1) * d);
  CHECK(bitwise_equal(head_a, head_b));
  std::vector<double> tail_a(oa.end() - d, oa.end());
  std::vector<double> tail_b(ob.end() - d, ob.end());
  CHECK(max_abs_diff(tail_a, tail_b) > 0.0);
}

TEST_CASE("decoder reacts to the speaker and to encoder content") {
  Rng rng(6);
  Synthesizer s(tiny_config(), rng);
  Rng sr(60);
  TokenStream st = make_stream(4, 2, 6, sr);
  std::vector<std::int32_t> ids{0, 1};
  std::vector<double> spk_a = random_vec(rng, 16, 0.5);
  std::vector<double> spk_b = random_vec(rng, 16, 0.5);

  auto states = [&](std::span<const double> spk, bool zero_enc) {
    Graph g(false);
    Binding bind(g, s.params(), false);
    Tensor enc = s.encode_phonemes_graph(bind, ids);
    if (zero_enc) enc = g.leaf_fill({enc.rows(), enc.cols()}, 0.0);
    Tensor sv = s.speaker_embed_graph(bind, spk);
    return s.decoder_states_graph(bind, st, enc, sv).value();
  };
  std::vector<double> base = states(spk_a, false);
  CHECK(max_abs_diff(base, states(spk_b, false)) > 1e-9);
  CHECK(max_abs_diff(base, states(spk_a, true)) > 1e-9);
}

TEST_CASE("exactly one cross attention map exists and its rows are distributions") {
  Rng rng(7);
  SynthesizerConfig cfg = tiny_config();
  cfg.layers_dec = 3;
  Synthesizer s(cfg, rng);

  CHECK(s.params().find("dec.0.cross.q.w") == nullptr);
  CHECK(s.params().find("dec.1.cross.q.w") == nullptr);
  CHECK(s.params().find("dec.2.cross.q.w") != nullptr);

  Rng sr(70);
  TokenStream st = make_stream(5, 2, 6, sr);
  std::vector<std::int32_t> ids{0, 1, 2, 3};
  std::vector<double> spk = random_vec(rng, 16, 0.5);
  Graph g(false);
  Binding bind(g, s.params(), false);
  Tensor enc = s.encode_phonemes_graph(bind, ids);
  Tensor sv = s.speaker_embed_graph(bind, spk);
  Tensor align;
  s.decoder_states_graph(bind, st, enc, sv, &align);
  REQUIRE(align.valid());
  REQUIRE(align.rows() == st.len - 1);
  REQUIRE(align.cols() == 4);
  for (Index i = 0; i < align.rows(); ++i) {
    double sum = 0.0;
    for (Index j = 0; j < align.cols(); ++j) {
      double w = align.value()[static_cast<std::size_t>(i * align.cols() + j)];
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("a fresh model is exactly uniform over the vocabulary") {
  Rng rng(8);
  Synthesizer s(tiny_config(), rng);
  Rng sr(80);
  TokenStream st = make_stream(5, 2, 6, sr);
  std::vector<std::int32_t> ids{0, 1, 2};
  std::vector<double> spk = random_vec(rng, 16, 0.5);

  double loss = s.utterance_loss(ids, spk, st);
  double expect = static_cast<double>((st.len - 1) * 2) * std::log(9.0);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-9));

  // and the ablation heads are uniform too
  Rng rng2(8);
  SynthesizerConfig cfg = tiny_config();
  cfg.use_subdecoder = false;
  Synthesizer lin(cfg, rng2);
  CHECK(lin.utterance_loss(ids, spk, st) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("group conditionals are autoregressive within a frame") {
  Rng rng(9);
  Synthesizer s(tiny_config(), rng);
  randomize_heads(s, rng);
  Rng sr(90);
  TokenStream a = make_stream(6, 2, 6, sr);
  TokenStream b = a;
  const Index pstar = 2;  // decoder step whose targets sit at stream position 3
  std::int32_t& tok = b.at(pstar + 1, 0);
  tok = tok == 1 ? 4 : 1;
  REQUIRE(a.tokens != b.tokens);

  std::vector<std::int32_t> ids{0, 1, 2};
  std::vector<double> spk = random_vec(rng, 16, 0.5);

  auto logits = [&](const TokenStream& st) {
    Graph g(false);
    Binding bind(g, s.params(), false);
    Tensor enc = s.encode_phonemes_graph(bind, ids);
    Tensor sv = s.speaker_embed_graph(bind, spk);
    Tensor dec = s.decoder_states_graph(bind, st, enc, sv);
    std::vector<Tensor> lg = s.stream_logits_graph(bind, st, dec);
    std::vector<std::vector<double>> rows;
    for (Tensor t : lg) rows.push_back(tensor_row(t, pstar));
    return rows;
  };
  std::vector<std::vector<double>> la = logits(a);
  std::vector<std::vector<double>> lb = logits(b);
  // group 0 conditions only on the decoder state, so its logits are untouched
  CHECK(bitwise_equal(la[0], lb[0]));
  // group 1 conditions on group 0's target token
  CHECK(max_abs_diff(la[1], lb[1]) > 1e-9);
}

TEST_CASE("linear-head ablation removes the within-frame conditioning") {
  Rng rng(10);
  SynthesizerConfig cfg = tiny_config();
  Synthesizer sub(cfg, rng);
  randomize_heads(sub, rng);
  cfg.use_subdecoder = false;
  Rng rng2(10);
  Synthesizer lin(cfg, rng2);
  randomize_heads(lin, rng2);

  Mat o(1, 16);
  Rng or_(11);
  for (double& v : o.v) v = or_.uniform(-1.0, 1.0);

  std::vector<std::int32_t> p1{1};
  std::vector<std::int32_t> p2{4};
  std::vector<double> d1 = sub.group_distribution(o, p1, 1);
  std::vector<double> d2 = sub.group_distribution(o, p2, 1);
  CHECK(max_abs_diff(d1, d2) > 1e-9);

  std::vector<double> e1 = lin.group_distribution(o, p1, 1);
  std::vector<double> e2 = lin.group_distribution(o, p2, 1);
  CHECK(bitwise_equal(e1, e2));

  // tokens at or past the queried group are never read
  std::vector<std::int32_t> q1{1, 0};
  std::vector<std::int32_t> q2{1, 5};
  CHECK(bitwise_equal(sub.group_distribution(o, q1, 1), sub.group_distribution(o, q2, 1)));

  for (auto* m : {&sub, &lin}) {
    for (Index g = 0; g < 2; ++g) {
      std::vector<double> d = m->group_distribution(o, q1, g);
      double sum = 0.0;
      for (double v : d) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  CHECK(catch_kind([&] { sub.group_distribution(o, p1, 2); }) == ErrorKind::input);
  std::vector<std::int32_t> none;
  CHECK(catch_kind([&] { sub.group_distribution(o, none, 1); }) == ErrorKind::input);
}

TEST_CASE("plain incremental path matches the teacher-forced graph") {
  Rng rng(12);
  Synthesizer s(tiny_config(), rng);
  randomize_heads(s, rng);
  Rng sr(120);
  TokenStream st = make_stream(5, 2, 6, sr);
  std::vector<std::int32_t> ids{0, 1, 2};
  std::vector<double> spk = random_vec(rng, 16, 0.5);
  const Index steps = st.len - 1;

  Graph g(false);
  Binding bind(g, s.params(), false);
  Tensor enc = s.encode_phonemes_graph(bind, ids);
  Tensor sv = s.speaker_embed_graph(bind, spk);
  Tensor align;
  Tensor dec = s.decoder_states_graph(bind, st, enc, sv, &align);
  std::vector<Tensor> logits = s.stream_logits_graph(bind, st, dec);

  Mat enc_m = s.encode_phonemes(ids);
  CHECK(bitwise_equal(enc_m.v, enc.value()));
  Mat spk_m = s.process_speaker(spk);
  CHECK(bitwise_equal(spk_m.v, sv.value()));

  DecoderState state = s.begin_stream(enc_m, spk_m, steps);
  for (Index p = 0; p < steps; ++p) {
    std::vector<std::int32_t> prev{st.at(p, 0), st.at(p, 1)};
    Mat o = s.decoder_step(prev, state, 0, enc_m.rows - 1);
    CHECK(max_abs_diff(mat_row(o, 0), tensor_row(dec, p)) < 1e-12);
    CHECK(max_abs_diff(state.cross_weights, tensor_row(align, p)) < 1e-12);

    // per-group conditionals agree with the teacher-forced logits
    std::vector<std::int32_t> prefix{st.at(p + 1, 0), st.at(p + 1, 1)};
    for (Index gi = 0; gi < 2; ++gi) {
      std::vector<double> dist = s.group_distribution(o, prefix, gi);
      std::vector<double> row = tensor_row(logits[static_cast<std::size_t>(gi)], p);
      double mx = row[0];
      for (double v : row) mx = std::max(mx, v);
      double denom = 0.0;
      for (double v : row) denom += std::exp(v - mx);
      for (std::size_t j = 0; j < row.size(); ++j) {
        CHECK(dist[j] == doctest::Approx(std::exp(row[j] - mx) / denom).epsilon(1e-10));
      }
    }
  }
  CHECK(state.steps == steps);
  std::vector<std::int32_t> prev{0, 0};
  CHECK(catch_kind([&] { s.decoder_step(prev, state, 0, enc_m.rows - 1); }) ==
        ErrorKind::contract);
}

TEST_CASE("identical seeds give identical models and identical steps") {
  Rng r1(13), r2(13);
  Synthesizer a(tiny_config(), r1);
  Synthesizer b(tiny_config(), r2);
  CHECK(a.params().content_hash() == b.params().content_hash());

  std::vector<std::int32_t> ids{0, 1};
  std::vector<double> spk(16, 0.25);
  Mat enc = a.encode_phonemes(ids);
  Mat sv = a.process_speaker(spk);
  DecoderState s1 = a.begin_stream(enc, sv, 4);
  DecoderState s2 = b.begin_stream(enc, sv, 4);
  std::vector<std::int32_t> prev{7, 7};  // START tokens
  Mat o1 = a.decoder_step(prev, s1, 0, 1);
  Mat o2 = b.decoder_step(prev, s2, 0, 1);
  CHECK(bitwise_equal(o1.v, o2.v));
}

TEST_CASE("stream and window validation in the plain path") {
  Rng rng(14);
  Synthesizer s(tiny_config(), rng);
  Rng sr(140);
  TokenStream st = make_stream(3, 2, 6, sr);

  Graph g(false);
  Binding bind(g, s.params(), false);
  std::vector<std::int32_t> ids{0};
  Tensor enc = s.encode_phonemes_graph(bind, ids);
  Tensor sv = s.speaker_embed_graph(bind, std::vector<double>(16, 0.1));

  TokenStream wrong = st;
  wrong.k = 5;
  for (auto& t : wrong.tokens) {
    if (t >= 5) t -= 1;  // keep tokens in the smaller extended vocabulary
  }
  CHECK(catch_kind([&] { s.decoder_states_graph(bind, wrong, enc, sv); }) ==
        ErrorKind::dimension);

  Mat enc_m = s.encode_phonemes(ids);
  Mat spk_m = s.process_speaker(std::vector<double>(16, 0.1));
  DecoderState state = s.begin_stream(enc_m, spk_m, 4);
  std::vector<std::int32_t> prev{0, 0};
  CHECK(catch_kind([&] { s.decoder_step(prev, state, 0, 1); }) == ErrorKind::input);
  CHECK(catch_kind([&] { s.decoder_step(prev, state, -1, 0); }) == ErrorKind::input);
  std::vector<std::int32_t> bad{0, 9};
  CHECK(catch_kind([&] { s.decoder_step(bad, state, 0, 0); }) == ErrorKind::input);
  std::vector<std::int32_t> short_row{0};
  CHECK(catch_kind([&] { s.decoder_step(short_row, state, 0, 0); }) == ErrorKind::dimension);

  std::vector<double> bad_spk(7, 0.0);
  CHECK(catch_kind([&] { s.process_speaker(bad_spk); }) == ErrorKind::dimension);
}

TEST_CASE("loss gradients match finite differences on every parameter") {
  Rng rng(15);
  Synthesizer s(tiny_config(), rng);
  randomize_heads(s, rng);
  Rng sr(150);
  TokenStream st = make_stream(2, 2, 6, sr);
  std::vector<std::int32_t> ids{0, 3};
  std::vector<double> spk = random_vec(rng, 16, 0.5);

  for (const auto& p : s.params().all()) {
    auto f = [&](Graph& g, Tensor x) {
      Binding bind(g, s.params(), false);
      bind.replace(p.get(), x);
      return s.utterance_loss_graph(bind, ids, spk, st);
    };
    double err = finite_diff_check(f, p->shape, p->value, FdOptions{});
    INFO("parameter ", p->name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("a few optimizer steps reduce the stream loss") {
  Rng rng(16);
  Synthesizer s(tiny_config(), rng);
  Rng sr(160);
  TokenStream st = make_stream(4, 2, 6, sr);
  std::vector<std::int32_t> ids{0, 2};
  std::vector<double> spk = random_vec(rng, 16, 0.5);

  double before = s.utterance_loss(ids, spk, st);
  Adam opt(s.params(), AdamConfig{0.9, 0.98, 1e-8});
  for (int step = 0; step < 20; ++step) {
    Graph g(true);
    Binding bind(g, s.params(), true);
    Tensor loss = s.utterance_loss_graph(bind, ids, spk, st);
    opt.step(collect_grads(g, loss, bind), 1e-3);
  }
  double after = s.utterance_loss(ids, spk, st);
  CHECK(after < before);
  CHECK(after < 0.9 * before);
}
