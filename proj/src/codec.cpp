#include "mqtts/codec.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "mqtts/error.hpp"

namespace mqtts {

void TokenStream::validate() const {
  if (len < 3 || n < 1) fail(ErrorKind::stream, "token stream: no content");
  if (tokens.size() != static_cast<std::size_t>(len * n)) {
    fail(ErrorKind::stream, "token stream: size mismatch");
  }
  for (Index g = 0; g < n; ++g) {
    if (at(0, g) != start_token(k)) fail(ErrorKind::stream, "token stream: missing start token");
    if (at(len - 1, g) != end_token(k)) fail(ErrorKind::stream, "token stream: missing end token");
    if (at(1, g) == rep_token(k)) {
      fail(ErrorKind::stream, "token stream: repetition token with no predecessor");
    }
    for (Index p = 1; p < len - 1; ++p) {
      std::int32_t v = at(p, g);
      if (v == start_token(k) || v == end_token(k)) {
        fail(ErrorKind::stream, "token stream: framing token inside content");
      }
      if (v < 0 || v > rep_token(k)) {
        fail(ErrorKind::stream, "token stream: token " + std::to_string(v) + " out of range");
      }
    }
  }
}

TokenStream encode_repetition(const CodeGrid& c) {
  c.validate();
  TokenStream out;
  out.len = c.t + 2;
  out.n = c.n;
  out.k = c.k;
  out.tokens.resize(static_cast<std::size_t>(out.len * out.n));
  for (Index g = 0; g < c.n; ++g) {
    out.at(0, g) = start_token(c.k);
    out.at(out.len - 1, g) = end_token(c.k);
    for (Index t = 0; t < c.t; ++t) {
      bool repeat = t > 0 && c.at(t, g) == c.at(t - 1, g);
      out.at(t + 1, g) = repeat ? rep_token(c.k) : c.at(t, g);
    }
  }
  return out;
}

CodeGrid decode_repetition(const TokenStream& t) {
  t.validate();
  CodeGrid out;
  out.t = t.content_len();
  out.n = t.n;
  out.k = t.k;
  out.codes.resize(static_cast<std::size_t>(out.t * out.n));
  for (Index g = 0; g < out.n; ++g) {
    for (Index f = 0; f < out.t; ++f) {
      std::int32_t v = t.at(f + 1, g);
      out.at(f, g) = v == rep_token(t.k) ? out.at(f - 1, g) : v;
    }
  }
  return out;
}

CodeGrid silence_prompt(const Quantizer& q, double noise_sigma, std::uint64_t seed) {
  if (noise_sigma < 0.0) fail(ErrorKind::input, "silence prompt: negative sigma");
  Waveform clip;
  clip.sample_rate = q.config().sample_rate;
  clip.samples.assign(static_cast<std::size_t>(kPromptFrames * q.config().hop), 0.0);
  if (noise_sigma > 0.0) {
    Rng rng(seed);
    for (double& s : clip.samples) s = rng.normal(0.0, noise_sigma);
  }
  return q.assign_codes(q.encode(clip));
}

namespace {

constexpr char kGridMagic[8] = {'M', 'Q', 'C', 'G', '0', '0', '0', '1'};

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8 & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 16 & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 24 & 0xff));
}

void write_grid_file(const std::string& path, Index rows, Index n, Index k, bool extended,
                     const std::vector<std::int32_t>& values) {
  Index limit = extended ? extended_vocab(k) : k;
  if (limit > 65536) fail(ErrorKind::input, "grid file: vocabulary too large for u16 codes");
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kGridMagic, kGridMagic + 8);
  put_u32(buf, static_cast<std::uint32_t>(rows));
  put_u32(buf, static_cast<std::uint32_t>(n));
  put_u32(buf, static_cast<std::uint32_t>(k));
  buf.push_back(extended ? 1 : 0);
  for (std::int32_t v : values) {
    buf.push_back(static_cast<unsigned char>(v & 0xff));
    buf.push_back(static_cast<unsigned char>(v >> 8 & 0xff));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "grid file: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) fail(ErrorKind::io, "grid file: write failed for " + path);
}

void read_grid_file(const std::string& path, bool want_extended, Index& rows, Index& n, Index& k,
                    std::vector<std::int32_t>& values) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "grid file: cannot open " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::io, "grid file: read failed for " + path);
  if (data.size() < 21 || std::memcmp(data.data(), kGridMagic, 8) != 0) {
    fail(ErrorKind::input, "grid file: bad magic in " + path);
  }
  rows = read_u32(data.data() + 8);
  n = read_u32(data.data() + 12);
  k = read_u32(data.data() + 16);
  unsigned char extended = data[20];
  if (extended > 1) fail(ErrorKind::input, "grid file: bad vocabulary flag");
  if ((extended != 0) != want_extended) {
    fail(ErrorKind::input, want_extended ? "grid file: holds a code grid, not a token stream"
                                         : "grid file: holds a token stream, not a code grid");
  }
  std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(n);
  if (data.size() != 21 + 2 * count) fail(ErrorKind::input, "grid file: truncated " + path);
  values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = data.data() + 21 + 2 * i;
    values[i] = static_cast<std::int32_t>(p[0] | p[1] << 8);
  }
}

}  // namespace

void write_code_grid(const std::string& path, const CodeGrid& c) {
  c.validate();
  write_grid_file(path, c.t, c.n, c.k, false, c.codes);
}

CodeGrid read_code_grid(const std::string& path) {
  CodeGrid c;
  read_grid_file(path, false, c.t, c.n, c.k, c.codes);
  c.validate();
  return c;
}

void write_token_stream(const std::string& path, const TokenStream& t) {
  t.validate();
  write_grid_file(path, t.len, t.n, t.k, true, t.tokens);
}

TokenStream read_token_stream(const std::string& path) {
  TokenStream t;
  read_grid_file(path, true, t.len, t.n, t.k, t.tokens);
  t.validate();
  return t;
}

}  // namespace mqtts
