#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "mqtts/audio.hpp"
#include "mqtts/finite_diff.hpp"
#include "mqtts/rng.hpp"
#include "mqtts/wavio.hpp"
#include "test_util.hpp"

using namespace mqtts;
using namespace mqtts::testutil;

namespace {

std::vector<double> sine(Index n, double freq_hz, double amp, int sr) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] =
        amp * std::sin(2.0 * 3.14159265358979323846 * freq_hz * static_cast<double>(i) /
                       static_cast<double>(sr));
  }
  return x;
}

}  // namespace

TEST_CASE("mel frame count and shape") {
  MelConfig cfg;
  CHECK(mel_frames(2048, cfg) == 32);
  CHECK(mel_frames(2049, cfg) == 33);
  CHECK(mel_frames(1, cfg) == 1);
  CHECK(mel_frames(64, cfg) == 1);
  CHECK(mel_frames(65, cfg) == 2);
  CHECK(catch_kind([&] { mel_frames(0, cfg); }) == ErrorKind::input);

  MelExtractor ex(cfg);
  Mat m = ex.log_mel(std::vector<double>(2048, 0.0));
  CHECK(m.rows == 32);
  CHECK(m.cols == 80);
}

TEST_CASE("mel config validation") {
  auto bad = [](auto mutate) {
    MelConfig cfg;
    mutate(cfg);
    return catch_kind([&] { MelExtractor ex(cfg); });
  };
  CHECK(bad([](MelConfig& c) { c.bands = 0; }) == ErrorKind::config);
  CHECK(bad([](MelConfig& c) { c.win = 1023; }) == ErrorKind::config);
  CHECK(bad([](MelConfig& c) { c.hop = 2048; }) == ErrorKind::config);
  CHECK(bad([](MelConfig& c) { c.hop = 0; }) == ErrorKind::config);
  CHECK(bad([](MelConfig& c) { c.fmax = 9000.0; }) == ErrorKind::config);  // above Nyquist
  CHECK(bad([](MelConfig& c) { c.fmin = 8000.0; }) == ErrorKind::config);
  CHECK(bad([](MelConfig& c) { c.floor = 0.0; }) == ErrorKind::config);
}

TEST_CASE("silence maps to the log floor exactly") {
  MelExtractor ex(MelConfig{});
  Mat m = ex.log_mel(std::vector<double>(512, 0.0));
  double expect = std::log(1e-5);
  for (double x : m.v) CHECK(x == expect);
}

TEST_CASE("filterbank geometry") {
  MelConfig cfg;
  MelExtractor ex(cfg);
  const Mat& fb = ex.filterbank();
  CHECK(fb.rows == 513);
  CHECK(fb.cols == 80);
  double prev = 0.0;
  for (Index b = 0; b < cfg.bands; ++b) {
    double c = ex.band_center_hz(b);
    CHECK(c > prev);
    prev = c;
    double colsum = 0.0;
    for (Index k = 0; k < fb.rows; ++k) colsum += fb.at(k, b);
    CHECK(colsum > 0.0);
  }
  for (double w : fb.v) {
    CHECK(w >= 0.0);
    CHECK(w <= 1.0 + 1e-12);
  }
}

TEST_CASE("unit impulse gives closed-form band energies") {
  // An impulse of height 1 at sample s lands at window position j in frame t,
  // so every DFT bin has power window[j]^2 and band b reads
  // log(max(window[j]^2 * colsum_b, floor)).
  MelConfig cfg;
  MelExtractor ex(cfg);
  const Index s = 1000;
  std::vector<double> x(2048, 0.0);
  x[s] = 1.0;
  Mat m = ex.log_mel(x);

  const Mat& fb = ex.filterbank();
  std::vector<double> colsum(static_cast<std::size_t>(cfg.bands), 0.0);
  for (Index k = 0; k < fb.rows; ++k)
    for (Index b = 0; b < fb.cols; ++b) colsum[static_cast<std::size_t>(b)] += fb.at(k, b);

  const Index pad = (cfg.win - cfg.hop) / 2;
  for (Index t : {8, 15, 23}) {
    Index j = s - t * cfg.hop + pad;
    REQUIRE(j >= 0);
    REQUIRE(j < cfg.win);
    double w = ex.window()[static_cast<std::size_t>(j)];
    for (Index b = 0; b < cfg.bands; ++b) {
      double expect = std::log(std::max(w * w * colsum[static_cast<std::size_t>(b)], cfg.floor));
      CHECK(std::abs(m.at(t, b) - expect) < 1e-9);
    }
  }
}

TEST_CASE("pure tone concentrates energy in the matching band") {
  MelConfig cfg;
  MelExtractor ex(cfg);
  for (double freq : {500.0, 1000.0, 3000.0}) {
    Mat m = ex.log_mel(sine(4096, freq, 0.5, cfg.sample_rate));
    // Average the middle frames, take the loudest band.
    Index best = -1;
    double best_e = -1e300;
    for (Index b = 0; b < cfg.bands; ++b) {
      double e = 0.0;
      for (Index t = 16; t < 48; ++t) e += m.at(t, b);
      if (e > best_e) {
        best_e = e;
        best = b;
      }
    }
    Index nearest = 0;
    double nd = 1e300;
    for (Index b = 0; b < cfg.bands; ++b) {
      double d = std::abs(ex.band_center_hz(b) - freq);
      if (d < nd) {
        nd = d;
        nearest = b;
      }
    }
    CHECK(std::abs(best - nearest) <= 1);
  }
}

TEST_CASE("shifting by one hop shifts rows") {
  MelConfig cfg;
  MelExtractor ex(cfg);
  Rng rng(77);
  std::vector<double> x = random_vec(rng, 4096, 0.3);
  std::vector<double> a(x.begin(), x.begin() + 2048);
  std::vector<double> b(x.begin() + 64, x.begin() + 64 + 2048);
  Mat ma = ex.log_mel(a);
  Mat mb = ex.log_mel(b);
  // Rows whose analysis windows lie inside both slices must agree exactly.
  for (Index t = 9; t <= 23; ++t) {
    for (Index c = 0; c < cfg.bands; ++c) {
      CHECK(ma.at(t, c) == mb.at(t - 1, c));
    }
  }
}

TEST_CASE("plain path equals graph path bitwise") {
  MelConfig cfg;
  MelExtractor ex(cfg);
  Rng rng(78);
  std::vector<double> x = random_vec(rng, 1536, 0.4);
  Mat plain = ex.log_mel(x);

  Graph g(true);
  Tensor wave = g.leaf({static_cast<Index>(x.size()), 1}, x, true);
  Tensor m = ex.build(g, wave);
  CHECK(plain.rows == m.rows());
  CHECK(plain.cols == m.cols());
  CHECK(bitwise_equal(plain.v, m.value()));
}

TEST_CASE("mel gradient matches finite differences") {
  MelConfig cfg;
  cfg.bands = 8;
  cfg.win = 32;
  cfg.hop = 8;
  cfg.floor = 1e-12;
  MelExtractor ex(cfg);
  Rng rng(79);
  std::vector<double> x0 = random_vec(rng, 40, 0.5);
  for (double& v : x0) v += 0.7;  // keep band powers far from the clamp

  auto f = [&](Graph& g, Tensor wave) { return sum_all(ex.build(g, wave)); };
  CHECK(finite_diff_check(f, {40, 1}, x0) < 1e-4);
}

TEST_CASE("wav round trip") {
  Rng rng(80);
  Waveform w;
  w.sample_rate = 16000;
  w.samples = random_vec(rng, 3000, 0.3);
  for (double& x : w.samples) x = std::tanh(x);  // keep strictly inside [-1, 1]
  const char* path = "test_roundtrip.wav";
  write_wav(path, w);
  Waveform r = read_wav(path);
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  double md = 0.0;
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    md = std::max(md, std::abs(r.samples[i] - w.samples[i]));
  // write scales by 32767, read divides by 32768, so the bound is (0.5 + |x|) / 32768
  CHECK(md <= 1.5 / 32768.0 + 1e-12);
  std::remove(path);
}

TEST_CASE("wav clipping and errors") {
  Waveform w;
  w.sample_rate = 8000;
  w.samples = {2.0, -2.0, 0.0};
  const char* path = "test_clip.wav";
  write_wav(path, w);
  Waveform r = read_wav(path);
  CHECK(r.sample_rate == 8000);
  CHECK(std::abs(r.samples[0] - 32767.0 / 32768.0) < 1e-9);
  CHECK(std::abs(r.samples[1] + 32767.0 / 32768.0) < 1e-9);
  CHECK(r.samples[2] == 0.0);
  std::remove(path);

  CHECK(catch_kind([] { read_wav("no_such_file.wav"); }) == ErrorKind::io);

  // A stereo header must be rejected.
  {
    std::ofstream f("test_stereo.wav", std::ios::binary);
    unsigned char hdr[44] = {'R', 'I', 'F', 'F', 40, 0, 0, 0, 'W', 'A', 'V', 'E',
                             'f', 'm', 't', ' ', 16, 0, 0, 0, 1,   0,   2,   0,
                             0x80, 0x3e, 0, 0, 0, 0xfa, 0, 0, 4, 0, 16, 0,
                             'd', 'a', 't', 'a', 4, 0, 0, 0};
    f.write(reinterpret_cast<const char*>(hdr), 44);
    char z[4] = {0, 0, 0, 0};
    f.write(z, 4);
  }
  CHECK(catch_kind([] { read_wav("test_stereo.wav"); }) == ErrorKind::input);
  std::remove("test_stereo.wav");

  // Garbage bytes are an input error, not a crash.
  {
    std::ofstream f("test_garbage.wav", std::ios::binary);
    f << "definitely not a wav";
  }
  CHECK(catch_kind([] { read_wav("test_garbage.wav"); }) == ErrorKind::input);
  std::remove("test_garbage.wav");
}
