#include "mqtts/checkpoint.hpp"

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mqtts/error.hpp"

namespace mqtts {

namespace {

constexpr char kMagic[8] = {'M', 'Q', 'C', 'K', 'P', 'T', '0', '1'};

const std::array<std::uint32_t, 256>& crc_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const unsigned char* p;
  const unsigned char* end;
  const std::string& path;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n)
      fail(ErrorKind::input, "checkpoint: truncated file " + path);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    return s;
  }
};

}  // namespace

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  const auto& t = crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char b : bytes) c = t[(c ^ b) & 0xff] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_text, const ParamStore& params) {
  if (kind.size() != 4) fail(ErrorKind::input, "checkpoint: kind must be four characters");

  std::string body;
  body.append(kind);
  put_u32(body, static_cast<std::uint32_t>(config_text.size()));
  body.append(config_text);
  put_u32(body, static_cast<std::uint32_t>(params.all().size()));
  for (const auto& p : params.all()) {
    if (p->name.size() > 0xffff) fail(ErrorKind::input, "checkpoint: parameter name too long");
    put_u16(body, static_cast<std::uint16_t>(p->name.size()));
    body.append(p->name);
    put_u16(body, static_cast<std::uint16_t>(p->shape.size()));
    for (Index d : p->shape) put_u64(body, static_cast<std::uint64_t>(d));
    for (double v : p->value) put_f64(body, v);
  }
  std::uint32_t crc =
      crc32(std::span(reinterpret_cast<const unsigned char*>(body.data()), body.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "checkpoint: cannot open " + tmp + " for writing");
    out.write(kMagic, sizeof(kMagic));
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    std::string tail;
    put_u32(tail, crc);
    out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
    if (!out) fail(ErrorKind::io, "checkpoint: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "checkpoint: cannot rename " + tmp + " to " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "checkpoint: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::io, "checkpoint: read failed for " + path);

  if (data.size() < sizeof(kMagic) + 4 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
    fail(ErrorKind::input, "checkpoint: " + path + " is not a checkpoint file");
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data.data());
  std::size_t body_len = data.size() - sizeof(kMagic) - 4;
  std::span<const unsigned char> body(bytes + sizeof(kMagic), body_len);

  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(bytes[data.size() - 4 + i]) << (8 * i);
  if (crc32(body) != stored)
    fail(ErrorKind::input, "checkpoint: checksum mismatch in " + path);

  Reader r{body.data(), body.data() + body.size(), path};
  CheckpointData ck;
  ck.kind = r.str(4);
  ck.config_text = r.str(r.u32());
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointData::Entry e;
    e.name = r.str(r.u16());
    std::uint16_t ndim = r.u16();
    std::size_t total = 1;
    for (std::uint16_t d = 0; d < ndim; ++d) {
      std::uint64_t dim = r.u64();
      if (dim == 0 || dim > (1u << 24)) fail(ErrorKind::input, "checkpoint: bad dimension in " + path);
      e.shape.push_back(static_cast<Index>(dim));
      total *= dim;
    }
    e.value.resize(total);
    for (std::size_t v = 0; v < total; ++v) e.value[v] = r.f64();
    ck.tensors.push_back(std::move(e));
  }
  if (r.p != r.end) fail(ErrorKind::input, "checkpoint: trailing bytes in " + path);
  return ck;
}

void load_params(ParamStore& store, const CheckpointData& ck) {
  if (store.all().size() != ck.tensors.size())
    fail(ErrorKind::input, "checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    Param* p = store.all()[i].get();
    const CheckpointData::Entry& e = ck.tensors[i];
    if (p->name != e.name)
      fail(ErrorKind::input, "checkpoint: parameter order mismatch at " + p->name + " vs " + e.name);
    if (p->shape != e.shape) fail(ErrorKind::input, "checkpoint: shape mismatch for " + p->name);
    p->value = e.value;
  }
}

}  // namespace mqtts
