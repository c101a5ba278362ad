#include "mqtts/codec.hpp"

#include <cstdio>
#include <vector>

#include "doctest.h"
#include "mqtts/error.hpp"
#include "mqtts/rng.hpp"
#include "test_util.hpp"

using namespace mqtts;
using namespace mqtts::testutil;

namespace {

CodeGrid make_grid(Index n, Index k, const std::vector<std::vector<std::int32_t>>& by_group) {
  CodeGrid g;
  g.t = static_cast<Index>(by_group.front().size());
  g.n = n;
  g.k = k;
  g.codes.resize(static_cast<std::size_t>(g.t * g.n));
  for (Index gi = 0; gi < n; ++gi) {
    for (Index t = 0; t < g.t; ++t) g.at(t, gi) = by_group[static_cast<std::size_t>(gi)][static_cast<std::size_t>(t)];
  }
  return g;
}

std::vector<std::int32_t> group_tokens(const TokenStream& s, Index g) {
  std::vector<std::int32_t> out;
  for (Index p = 0; p < s.len; ++p) out.push_back(s.at(p, g));
  return out;
}

Index count_token(const TokenStream& s, std::int32_t v) {
  Index c = 0;
  for (std::int32_t t : s.tokens) {
    if (t == v) ++c;
  }
  return c;
}

}  // namespace

TEST_CASE("repetition encoding replaces repeated codes per group") {
  const Index k = 8;
  const std::int32_t R = rep_token(k), S = start_token(k), E = end_token(k);

  CodeGrid a = make_grid(1, k, {{5, 5, 5, 7}});
  CHECK(group_tokens(encode_repetition(a), 0) == std::vector<std::int32_t>{S, 5, R, R, 7, E});

  CodeGrid b = make_grid(1, k, {{1, 2, 3}});
  CHECK(group_tokens(encode_repetition(b), 0) == std::vector<std::int32_t>{S, 1, 2, 3, E});

  CodeGrid c = make_grid(1, k, {{4}});
  CHECK(group_tokens(encode_repetition(c), 0) == std::vector<std::int32_t>{S, 4, E});
}

TEST_CASE("repetition encoding treats groups independently") {
  const Index k = 8;
  const std::int32_t R = rep_token(k), S = start_token(k), E = end_token(k);
  CodeGrid g = make_grid(2, k, {{3, 3}, {3, 4}});
  TokenStream s = encode_repetition(g);
  CHECK(group_tokens(s, 0) == std::vector<std::int32_t>{S, 3, R, E});
  CHECK(group_tokens(s, 1) == std::vector<std::int32_t>{S, 3, 4, E});
}

TEST_CASE("decoding inverts encoding on random grids") {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    CodeGrid g;
    g.t = 1 + static_cast<Index>(rng.uniform_int(24));
    g.n = 4;
    g.k = 8;
    g.codes.resize(static_cast<std::size_t>(g.t * g.n));
    for (Index gi = 0; gi < g.n; ++gi) {
      for (Index t = 0; t < g.t; ++t) {
        // bias toward runs so REP actually fires
        if (t > 0 && rng.uniform() < 0.5) {
          g.at(t, gi) = g.at(t - 1, gi);
        } else {
          g.at(t, gi) = static_cast<std::int32_t>(rng.uniform_int(8));
        }
      }
    }
    TokenStream s = encode_repetition(g);
    CHECK(s.len == g.t + 2);
    CodeGrid back = decode_repetition(s);
    REQUIRE(back.t == g.t);
    REQUIRE(back.n == g.n);
    CHECK(back.k == g.k);
    CHECK(back.codes == g.codes);
  }
}

TEST_CASE("malformed token streams are rejected") {
  const Index k = 8;
  CodeGrid g = make_grid(1, k, {{5, 5, 5, 7}});
  TokenStream good = encode_repetition(g);
  REQUIRE_NOTHROW(good.validate());

  TokenStream s = good;
  s.at(1, 0) = rep_token(k);  // repetition with no predecessor
  CHECK(catch_kind([&] { decode_repetition(s); }) == ErrorKind::stream);

  s = good;
  s.at(0, 0) = 5;  // missing start
  CHECK(catch_kind([&] { decode_repetition(s); }) == ErrorKind::stream);

  s = good;
  s.at(s.len - 1, 0) = 2;  // missing end
  CHECK(catch_kind([&] { decode_repetition(s); }) == ErrorKind::stream);

  s = good;
  s.at(2, 0) = end_token(k);  // end inside content
  CHECK(catch_kind([&] { decode_repetition(s); }) == ErrorKind::stream);

  s = good;
  s.at(2, 0) = start_token(k);  // start inside content
  CHECK(catch_kind([&] { decode_repetition(s); }) == ErrorKind::stream);

  s = good;
  s.at(2, 0) = static_cast<std::int32_t>(k + 5);  // beyond the extended vocabulary
  CHECK(catch_kind([&] { decode_repetition(s); }) == ErrorKind::stream);

  s = good;
  s.len = 2;
  s.tokens.resize(2);
  s.at(0, 0) = start_token(k);
  s.at(1, 0) = end_token(k);  // framing with no content
  CHECK(catch_kind([&] { decode_repetition(s); }) == ErrorKind::stream);
}

TEST_CASE("silence prompt is deterministic and three frames long") {
  QuantizerConfig cfg;
  cfg.groups = 4;
  cfg.codes = 8;
  Rng rng(7);
  Quantizer q(cfg, rng);

  CodeGrid a = silence_prompt(q, 0.0, 1);
  CodeGrid b = silence_prompt(q, 0.0, 2);  // sigma 0 ignores the seed
  REQUIRE(a.t == kPromptFrames);
  CHECK(a.n == cfg.groups);
  CHECK(a.k == cfg.codes);
  CHECK(a.codes == b.codes);
  REQUIRE_NOTHROW(a.validate());

  CodeGrid c = silence_prompt(q, 1e-5, 9);
  CodeGrid d = silence_prompt(q, 1e-5, 9);
  CHECK(c.t == kPromptFrames);
  CHECK(c.codes == d.codes);

  CHECK(catch_kind([&] { silence_prompt(q, -1.0, 0); }) == ErrorKind::input);
}

TEST_CASE("smooth signals earn more repetition tokens than white noise") {
  QuantizerConfig cfg;
  cfg.groups = 4;
  cfg.codes = 8;
  Rng rng(11);
  Quantizer q(cfg, rng);

  const Index len = 64 * 24;
  Waveform smooth{std::vector<double>(static_cast<std::size_t>(len), 0.3), 16000};
  Waveform noise{std::vector<double>(static_cast<std::size_t>(len)), 16000};
  for (double& s : noise.samples) s = rng.uniform(-0.5, 0.5);

  Mat zs = q.encode(smooth);
  Mat zn = q.encode(noise);

  // fit codebooks on the pooled latents so noise codes actually spread out
  const Index gdim = cfg.group_dim();
  for (Index g = 0; g < cfg.groups; ++g) {
    Mat pooled(zs.rows + zn.rows, gdim);
    for (Index r = 0; r < zs.rows; ++r) {
      for (Index c = 0; c < gdim; ++c) pooled.at(r, c) = zs.at(r, g * gdim + c);
    }
    for (Index r = 0; r < zn.rows; ++r) {
      for (Index c = 0; c < gdim; ++c) pooled.at(zs.rows + r, c) = zn.at(r, g * gdim + c);
    }
    Mat centers = kmeans_fit(pooled, cfg.codes, 10, rng);
    Param* book = q.params().find("book." + std::to_string(g));
    REQUIRE(book != nullptr);
    for (Index i = 0; i < centers.rows * centers.cols; ++i) {
      book->value[static_cast<std::size_t>(i)] = centers.at(i / gdim, i % gdim);
    }
  }

  Index rep_smooth = count_token(encode_repetition(q.assign_codes(zs)), rep_token(cfg.codes));
  Index rep_noise = count_token(encode_repetition(q.assign_codes(zn)), rep_token(cfg.codes));
  CHECK(rep_smooth > rep_noise);
}

TEST_CASE("grid and stream files round trip") {
  Rng rng(13);
  CodeGrid g;
  g.t = 17;
  g.n = 4;
  g.k = 160;
  g.codes.resize(static_cast<std::size_t>(g.t * g.n));
  for (auto& c : g.codes) c = static_cast<std::int32_t>(rng.uniform_int(160));

  const char* grid_path = "test_grid.bin";
  write_code_grid(grid_path, g);
  CodeGrid gr = read_code_grid(grid_path);
  CHECK(gr.t == g.t);
  CHECK(gr.n == g.n);
  CHECK(gr.k == g.k);
  CHECK(gr.codes == g.codes);

  TokenStream s = encode_repetition(g);
  const char* stream_path = "test_stream.bin";
  write_token_stream(stream_path, s);
  TokenStream sr = read_token_stream(stream_path);
  CHECK(sr.len == s.len);
  CHECK(sr.k == s.k);
  CHECK(sr.tokens == s.tokens);

  // the vocabulary flag keeps the two kinds apart
  CHECK(catch_kind([&] { read_token_stream(grid_path); }) == ErrorKind::input);
  CHECK(catch_kind([&] { read_code_grid(stream_path); }) == ErrorKind::input);

  CHECK(catch_kind([] { read_code_grid("no_such_file.bin"); }) == ErrorKind::io);

  // valid magic and header but a payload that is too short
  const unsigned char stub[21] = {'M', 'Q', 'C', 'G', '0', '0', '0', '1', 100, 0, 0,
                                  0,   4,   0,   0,   0,   8,   0,   0,   0, 0};
  std::FILE* f = std::fopen(grid_path, "wb");
  std::fwrite(stub, 1, sizeof stub, f);
  std::fclose(f);
  CHECK(catch_kind([&] { read_code_grid(grid_path); }) == ErrorKind::input);

  f = std::fopen(grid_path, "wb");
  std::fputs("not a grid file at all", f);
  std::fclose(f);
  CHECK(catch_kind([&] { read_code_grid(grid_path); }) == ErrorKind::input);

  std::remove(grid_path);
  std::remove(stream_path);
}
