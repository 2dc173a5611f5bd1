#include "mfqe/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mfqe/errors.hpp"

namespace mfqe {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'Q', 'E'};

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    u32(v);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      throw FormatError(std::string("checkpoint.parse: truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::vector<float> to_f32(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

void Checkpoint::put(const std::string& name, std::vector<std::uint32_t> dims, std::vector<float> data) {
  if (name.empty() || name.size() > 0xFFFF) throw ArgumentError("checkpoint.put: name length must be 1..65535");
  if (dims.size() > 0xFF) throw ArgumentError("checkpoint.put: rank above 255 for '" + name + "'");
  if (element_count(dims) != data.size())
    throw ArgumentError("checkpoint.put: dims of '" + name + "' describe " + std::to_string(element_count(dims)) +
                        " values, got " + std::to_string(data.size()));
  for (auto& e : entries_) {
    if (e.name == name) {
      e.dims = std::move(dims);
      e.data = std::move(data);
      return;
    }
  }
  entries_.push_back({name, std::move(dims), std::move(data)});
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

const CheckpointEntry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw FormatError("checkpoint.get: missing entry '" + name + "'");
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(0);
    w.u8(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.u32(d);
    for (float f : e.data) w.f32(f);
  }
  return std::move(w.out);
}

Checkpoint Checkpoint::parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw FormatError("checkpoint.parse: bad magic");
  const auto version = r.u32("version");
  if (version != kVersion)
    throw FormatError("checkpoint.parse: unsupported version " + std::to_string(version));
  const auto count = r.u32("entry count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16("name length");
    auto name = r.str(len, "name");
    const auto dtype = r.u8("dtype");
    if (dtype != 0)
      throw FormatError("checkpoint.parse: unknown dtype " + std::to_string(dtype) + " for '" + name + "'");
    const auto rank = r.u8("rank");
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32("dims");
    std::size_t n = 1;
    for (auto d : dims) {
      if (d != 0 && n > bytes.size() / d) throw FormatError("checkpoint.parse: dims of '" + name + "' too large");
      n *= d;
    }
    r.need(n * 4, "payload");
    std::vector<float> data(n);
    for (auto& f : data) f = r.f32("payload");
    if (c.has(name)) throw FormatError("checkpoint.parse: duplicate entry '" + name + "'");
    c.entries_.push_back({std::move(name), std::move(dims), std::move(data)});
  }
  if (!r.done()) throw FormatError("checkpoint.parse: trailing bytes after the last entry");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint.save: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("checkpoint.save: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint.load: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

void put_svm(Checkpoint& ckpt, const svm::Model& m) {
  const auto nsv = static_cast<std::uint32_t>(m.support_vectors.size());
  const auto dims = static_cast<std::uint32_t>(m.dims());
  std::vector<float> sv;
  sv.reserve(std::size_t{nsv} * dims);
  for (const auto& row : m.support_vectors) {
    if (row.size() != dims) throw ArgumentError("checkpoint.put_svm: support vector width mismatch");
    sv.insert(sv.end(), row.begin(), row.end());
  }
  ckpt.put("svm.sv", {nsv, dims}, std::move(sv));
  ckpt.put("svm.coef", {nsv}, to_f32(m.dual_coefs));
  ckpt.put("svm.bias", {1}, {static_cast<float>(m.bias)});
  ckpt.put("svm.gamma", {1}, {static_cast<float>(m.gamma)});
  ckpt.put("svm.platt", {2}, {static_cast<float>(m.platt_a), static_cast<float>(m.platt_b)});
  std::vector<float> st = to_f32(m.standardizer.mean);
  st.insert(st.end(), m.standardizer.std.begin(), m.standardizer.std.end());
  ckpt.put("svm.standardizer", {2, dims}, std::move(st));
}

bool has_svm(const Checkpoint& ckpt) { return ckpt.has("svm.sv"); }

svm::Model get_svm(const Checkpoint& ckpt) {
  const auto& sv = ckpt.get("svm.sv");
  const auto& coef = ckpt.get("svm.coef");
  const auto& st = ckpt.get("svm.standardizer");
  if (sv.dims.size() != 2 || coef.dims.size() != 1 || coef.dims[0] != sv.dims[0] || st.dims.size() != 2 ||
      st.dims[0] != 2 || st.dims[1] != sv.dims[1])
    throw FormatError("checkpoint.get_svm: inconsistent svm.* shapes");
  const auto& bias = ckpt.get("svm.bias");
  const auto& gamma = ckpt.get("svm.gamma");
  const auto& platt = ckpt.get("svm.platt");
  if (bias.data.size() != 1 || gamma.data.size() != 1 || platt.data.size() != 2)
    throw FormatError("checkpoint.get_svm: svm.bias, svm.gamma and svm.platt must hold 1, 1 and 2 values");
  svm::Model m;
  const std::size_t d = sv.dims[1];
  for (std::size_t i = 0; i < sv.dims[0]; ++i)
    m.support_vectors.emplace_back(sv.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                                   sv.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  m.dual_coefs.assign(coef.data.begin(), coef.data.end());
  m.bias = bias.data[0];
  m.gamma = gamma.data[0];
  m.platt_a = platt.data[0];
  m.platt_b = platt.data[1];
  m.standardizer.mean.assign(st.data.begin(), st.data.begin() + static_cast<std::ptrdiff_t>(d));
  m.standardizer.std.assign(st.data.begin() + static_cast<std::ptrdiff_t>(d), st.data.end());
  return m;
}

}  // namespace mfqe
