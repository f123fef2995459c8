#include "lpr/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lpr/common.hpp"

namespace lpr {
namespace {

enum class DtypeCode : uint8_t { kFloat32 = 1, kFloat64 = 2, kInt64 = 3 };

DtypeCode code_of(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return DtypeCode::kFloat32;
    case torch::kFloat64: return DtypeCode::kFloat64;
    case torch::kInt64: return DtypeCode::kInt64;
    default: throw Error("checkpoint: unsupported tensor dtype");
  }
}

torch::Dtype dtype_of(uint8_t c) {
  switch (static_cast<DtypeCode>(c)) {
    case DtypeCode::kFloat32: return torch::kFloat32;
    case DtypeCode::kFloat64: return torch::kFloat64;
    case DtypeCode::kInt64: return torch::kInt64;
  }
  throw Error("checkpoint: unknown dtype code " + std::to_string(c));
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<uint64_t>(s.size());
    out_ += s;
  }
  void raw(const void* p, size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <typename T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > in_.size()) throw Error("checkpoint: truncated archive");
  }
  const std::string& in_;
  size_t pos_ = 0;
};

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const torch::Tensor& Checkpoint::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw Error("checkpoint: missing tensor '" + name + "'");
}

void Checkpoint::put(const std::string& name, const torch::Tensor& t) {
  for (auto& [n, v] : tensors) {
    if (n == name) {
      v = t;
      return;
    }
  }
  tensors.emplace_back(name, t);
}

std::string Checkpoint::serialize() const {
  auto sorted = tensors;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Writer w;
  const std::string magic = std::string(kCheckpointMagic) + "\n";
  w.raw(magic.data(), magic.size());
  w.str(config_json);
  w.pod<int64_t>(iteration);
  w.str(rng_state);
  w.pod<uint64_t>(sorted.size());
  for (const auto& [name, tensor] : sorted) {
    auto t = tensor.detach().cpu().contiguous();
    w.str(name);
    w.pod<uint8_t>(static_cast<uint8_t>(code_of(t.scalar_type())));
    w.pod<uint32_t>(static_cast<uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod<int64_t>(d);
    w.raw(t.data_ptr(), t.numel() * t.element_size());
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  const std::string magic = std::string(kCheckpointMagic) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw Error("checkpoint: missing lpr-ckpt-v1 header");
  Reader r(bytes);
  std::string skip(magic.size(), '\0');
  r.raw(skip.data(), skip.size());
  Checkpoint c;
  c.config_json = r.str();
  c.iteration = r.pod<int64_t>();
  c.rng_state = r.str();
  const auto count = r.pod<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto dtype = dtype_of(r.pod<uint8_t>());
    const auto ndim = r.pod<uint32_t>();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<int64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    r.raw(t.data_ptr(), t.numel() * t.element_size());
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error("checkpoint: trailing bytes");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

uint64_t checksum(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace lpr
