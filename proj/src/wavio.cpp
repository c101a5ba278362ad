#include "mqtts/wavio.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "mqtts/error.hpp"

namespace mqtts {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8 & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 16 & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 24 & 0xff));
}

void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8 & 0xff));
}

void put_tag(std::vector<unsigned char>& b, const char* tag) {
  b.insert(b.end(), tag, tag + 4);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "wav: cannot open " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::io, "wav: read failed for " + path);
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorKind::input, "wav: not a RIFF/WAVE file: " + path);
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;

  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const unsigned char* hdr = data.data() + pos;
    std::uint32_t size = read_u32(hdr + 4);
    std::size_t body = pos + 8;
    if (body + size > data.size()) fail(ErrorKind::input, "wav: truncated chunk in " + path);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) fail(ErrorKind::input, "wav: short fmt chunk in " + path);
      format = read_u16(data.data() + body);
      channels = read_u16(data.data() + body + 2);
      rate = read_u32(data.data() + body + 4);
      bits = read_u16(data.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      pcm = data.data() + body;
      pcm_bytes = size;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }

  if (!have_fmt || pcm == nullptr) fail(ErrorKind::input, "wav: missing fmt or data chunk in " + path);
  if (format != 1) fail(ErrorKind::input, "wav: only PCM (format 1) is supported: " + path);
  if (channels != 1) fail(ErrorKind::input, "wav: only mono is supported: " + path);
  if (bits != 16) fail(ErrorKind::input, "wav: only 16-bit samples are supported: " + path);
  if (pcm_bytes % 2 != 0) fail(ErrorKind::input, "wav: odd data size in " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(pcm_bytes / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    std::int16_t s = static_cast<std::int16_t>(read_u16(pcm + 2 * i));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  if (w.sample_rate < 1) fail(ErrorKind::input, "wav: bad sample rate");
  std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);  // byte rate
  put_u16(out, 2);                                              // block align
  put_u16(out, 16);                                             // bits
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double x : w.samples) {
    double c = x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
    std::int16_t s = static_cast<std::int16_t>(std::lrint(c * 32767.0));
    put_u16(out, static_cast<std::uint16_t>(s));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "wav: cannot create " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) fail(ErrorKind::io, "wav: write failed for " + path);
}

}  // namespace mqtts
