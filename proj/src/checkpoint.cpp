#include "dicforge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace dicforge::ckpt {

namespace {

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_record(std::string& buf, const TensorRecord& r) {
  put_u32(buf, uint32_t(r.name.size()));
  buf += r.name;
  put_u32(buf, uint32_t(r.dims.size()));
  size_t numel = 1;
  for (int64_t d : r.dims) {
    put_u32(buf, uint32_t(d));
    numel *= size_t(d);
  }
  if (numel != r.data.size()) throw validation_error("record data does not match dims: " + r.name);
  for (float v : r.data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
  }
}

struct Reader {
  std::string buf;
  size_t pos = 0;
  std::string path;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw io_error("truncated checkpoint: " + path);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos++])) << (8 * i);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  TensorRecord record() {
    TensorRecord r;
    r.name = str(u32());
    const uint32_t rank = u32();
    if (rank > 8) throw io_error("implausible rank in checkpoint: " + path);
    size_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = u32();
      r.dims.push_back(int64_t(d));
      numel *= d;
    }
    r.data.resize(numel);
    need(numel * 4);
    for (size_t i = 0; i < numel; ++i) {
      const uint32_t bits = u32();
      std::memcpy(&r.data[i], &bits, 4);
    }
    return r;
  }
};

Reader open_reader(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r;
  r.buf = ss.str();
  r.path = path;
  if (r.buf.size() < 12 || std::memcmp(r.buf.data(), "DICM", 4) != 0) {
    throw io_error("bad DICM magic in " + path);
  }
  r.pos = 4;
  return r;
}

}  // namespace

void write_dicm(const std::string& path, const Checkpoint& ckpt) {
  std::string buf = "DICM";
  put_u32(buf, 1);
  put_u32(buf, uint32_t(ckpt.params.size()));
  for (const auto& r : ckpt.params) put_record(buf, r);
  put_u32(buf, uint32_t(ckpt.adam.size()));
  put_u64(buf, ckpt.adam_step);
  for (const auto& r : ckpt.adam) put_record(buf, r);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + tmp);
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw io_error("short write to " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint read_dicm(const std::string& path) {
  Reader r = open_reader(path);
  const uint32_t version = r.u32();
  if (version != 1) throw io_error("unsupported DICM version in " + path);
  Checkpoint ckpt;
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) ckpt.params.push_back(r.record());
  const uint32_t na = r.u32();
  ckpt.adam_step = r.u64();
  for (uint32_t i = 0; i < na; ++i) ckpt.adam.push_back(r.record());
  return ckpt;
}

DicmSummary read_dicm_summary(const std::string& path) {
  const Checkpoint ckpt = read_dicm(path);
  DicmSummary s;
  s.version = 1;
  s.param_count = uint32_t(ckpt.params.size());
  s.adam_step = ckpt.adam_step;
  s.has_adam = !ckpt.adam.empty();
  for (const auto& r : ckpt.params) s.entries.emplace_back(r.name, r.dims);
  return s;
}

}  // namespace dicforge::ckpt
