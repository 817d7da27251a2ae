#ifndef TDRM_TRAIN_CHECKPOINT_HPP_
#define TDRM_TRAIN_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "tdrm/core/common.hpp"
#include "tdrm/core/optim.hpp"
#include "tdrm/core/params.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/core/tensor.hpp"

namespace tdrm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint files store raw little-endian arrays");

enum class DType : uint8_t { kF64 = 0, kF32 = 1, kI64 = 2, kU64 = 3, kU8 = 4 };

inline size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF64:
    case DType::kI64:
    case DType::kU64:
      return 8;
    case DType::kF32:
      return 4;
    case DType::kU8:
      return 1;
  }
  throw ContractError("unknown dtype code");
}

struct CheckpointArray {
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<uint8_t> bytes;

  int64_t elements() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

// Self-describing container of named arrays: magic "TDRM", a format version,
// a manifest of (name, dtype, shape, byte offset), then the raw arrays.
// Model kind and architecture hash travel as "__meta.*" entries.
class CheckpointWriter {
 public:
  void add_raw(const std::string& name, DType dtype, Shape shape, const void* data,
               size_t nbytes) {
    TDRM_CHECK(!arrays_.count(name), "duplicate checkpoint array: " + name);
    CheckpointArray arr;
    arr.dtype = dtype;
    arr.shape = std::move(shape);
    TDRM_CHECK(nbytes == static_cast<size_t>(arr.elements()) * dtype_size(dtype),
               "checkpoint array size does not match its shape: " + name);
    arr.bytes.resize(nbytes);
    std::memcpy(arr.bytes.data(), data, nbytes);
    order_.push_back(name);
    arrays_.emplace(name, std::move(arr));
  }

  void add_f64(const std::string& name, Shape shape, const std::vector<double>& v) {
    add_raw(name, DType::kF64, std::move(shape), v.data(), v.size() * 8);
  }
  void add_f32(const std::string& name, Shape shape, const std::vector<float>& v) {
    add_raw(name, DType::kF32, std::move(shape), v.data(), v.size() * 4);
  }
  void add_i64(const std::string& name, Shape shape, const std::vector<int64_t>& v) {
    add_raw(name, DType::kI64, std::move(shape), v.data(), v.size() * 8);
  }
  void add_u64(const std::string& name, Shape shape, const std::vector<uint64_t>& v) {
    add_raw(name, DType::kU64, std::move(shape), v.data(), v.size() * 8);
  }
  void add_u8(const std::string& name, Shape shape, const std::vector<uint8_t>& v) {
    add_raw(name, DType::kU8, std::move(shape), v.data(), v.size());
  }
  void add_string(const std::string& name, const std::string& s) {
    add_raw(name, DType::kU8, {static_cast<int64_t>(s.size())}, s.data(), s.size());
  }
  void add_scalar_u64(const std::string& name, uint64_t v) { add_u64(name, {1}, {v}); }

  void write(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    TDRM_CHECK(f != nullptr, "cannot open checkpoint for writing: " + path);
    auto put = [f, &path](const void* p, size_t n) {
      TDRM_CHECK(std::fwrite(p, 1, n, f) == n, "short write to checkpoint: " + path);
    };
    const char magic[4] = {'T', 'D', 'R', 'M'};
    uint32_t version = kFormatVersion;
    put(magic, 4);
    put(&version, 4);
    uint32_t count = static_cast<uint32_t>(order_.size());
    put(&count, 4);
    uint64_t offset = 0;
    for (const std::string& name : order_) {
      const CheckpointArray& arr = arrays_.at(name);
      uint32_t nlen = static_cast<uint32_t>(name.size());
      put(&nlen, 4);
      put(name.data(), name.size());
      uint8_t dt = static_cast<uint8_t>(arr.dtype);
      put(&dt, 1);
      uint32_t rank = static_cast<uint32_t>(arr.shape.size());
      put(&rank, 4);
      for (int64_t d : arr.shape) put(&d, 8);
      put(&offset, 8);
      uint64_t nbytes = arr.bytes.size();
      put(&nbytes, 8);
      offset += nbytes;
    }
    for (const std::string& name : order_) {
      const CheckpointArray& arr = arrays_.at(name);
      put(arr.bytes.data(), arr.bytes.size());
    }
    std::fclose(f);
  }

  static constexpr uint32_t kFormatVersion = 1;

 private:
  std::vector<std::string> order_;
  std::map<std::string, CheckpointArray> arrays_;
};

class CheckpointFile {
 public:
  static CheckpointFile load(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    TDRM_CHECK(f != nullptr, "cannot open checkpoint: " + path);
    auto get = [f, &path](void* p, size_t n) {
      TDRM_CHECK(std::fread(p, 1, n, f) == n, "short read from checkpoint: " + path);
    };
    char magic[4];
    get(magic, 4);
    TDRM_CHECK(std::memcmp(magic, "TDRM", 4) == 0, "not a checkpoint file: " + path);
    uint32_t version = 0;
    get(&version, 4);
    TDRM_CHECK(version == CheckpointWriter::kFormatVersion,
               "unsupported checkpoint format version " + std::to_string(version) +
                   " (this build reads version " +
                   std::to_string(CheckpointWriter::kFormatVersion) + "): " + path);
    uint32_t count = 0;
    get(&count, 4);
    CheckpointFile out;
    struct Pending {
      std::string name;
      uint64_t offset;
      uint64_t nbytes;
    };
    std::vector<Pending> pending;
    for (uint32_t k = 0; k < count; ++k) {
      uint32_t nlen = 0;
      get(&nlen, 4);
      std::string name(nlen, '\0');
      get(name.data(), nlen);
      uint8_t dt = 0;
      get(&dt, 1);
      TDRM_CHECK(dt <= static_cast<uint8_t>(DType::kU8), "bad dtype in checkpoint: " + path);
      uint32_t rank = 0;
      get(&rank, 4);
      CheckpointArray arr;
      arr.dtype = static_cast<DType>(dt);
      arr.shape.resize(rank);
      for (uint32_t r = 0; r < rank; ++r) get(&arr.shape[r], 8);
      uint64_t offset = 0, nbytes = 0;
      get(&offset, 8);
      get(&nbytes, 8);
      TDRM_CHECK(nbytes == static_cast<uint64_t>(arr.elements()) * dtype_size(arr.dtype),
                 "manifest size mismatch for " + name + ": " + path);
      out.order_.push_back(name);
      out.arrays_.emplace(name, std::move(arr));
      pending.push_back({name, offset, nbytes});
    }
    long payload = std::ftell(f);
    TDRM_CHECK(payload >= 0, "cannot locate checkpoint payload: " + path);
    for (const Pending& p : pending) {
      CheckpointArray& arr = out.arrays_.at(p.name);
      arr.bytes.resize(p.nbytes);
      TDRM_CHECK(std::fseek(f, payload + static_cast<long>(p.offset), SEEK_SET) == 0,
                 "seek failed in checkpoint: " + path);
      get(arr.bytes.data(), p.nbytes);
    }
    std::fclose(f);
    return out;
  }

  bool has(const std::string& name) const { return arrays_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }

  const CheckpointArray& array(const std::string& name) const {
    auto it = arrays_.find(name);
    TDRM_CHECK(it != arrays_.end(), "checkpoint has no array named " + name);
    return it->second;
  }

  std::vector<double> f64(const std::string& name) const {
    return typed<double>(name, DType::kF64);
  }
  std::vector<float> f32(const std::string& name) const { return typed<float>(name, DType::kF32); }
  std::vector<int64_t> i64(const std::string& name) const {
    return typed<int64_t>(name, DType::kI64);
  }
  std::vector<uint64_t> u64(const std::string& name) const {
    return typed<uint64_t>(name, DType::kU64);
  }
  std::vector<uint8_t> u8(const std::string& name) const {
    return typed<uint8_t>(name, DType::kU8);
  }

  std::string str(const std::string& name) const {
    std::vector<uint8_t> v = u8(name);
    return std::string(v.begin(), v.end());
  }

  uint64_t scalar_u64(const std::string& name) const {
    std::vector<uint64_t> v = u64(name);
    TDRM_CHECK(v.size() == 1, "expected a scalar in checkpoint array " + name);
    return v[0];
  }

  std::string kind() const { return str("__meta.kind"); }
  uint64_t arch_hash() const { return scalar_u64("__meta.arch_hash"); }

 private:
  template <typename T>
  std::vector<T> typed(const std::string& name, DType want) const {
    const CheckpointArray& arr = array(name);
    TDRM_CHECK(arr.dtype == want, "checkpoint array " + name + " has a different dtype");
    std::vector<T> out(static_cast<size_t>(arr.elements()));
    std::memcpy(out.data(), arr.bytes.data(), arr.bytes.size());
    return out;
  }

  std::vector<std::string> order_;
  std::map<std::string, CheckpointArray> arrays_;
};

// Every parameter under the prefix, stored under its own name.
template <typename S>
void save_params(CheckpointWriter& w, const ParamSet<S>& ps, const std::string& prefix = "") {
  for (const auto& e : ps.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    std::vector<double> v(e.tensor.value().begin(), e.tensor.value().end());
    w.add_f64(e.name, e.tensor.shape(), v);
  }
}

// Restores every parameter under the prefix. A missing array or a shape
// mismatch means the checkpoint belongs to a different architecture, so the
// load is refused rather than partially applied.
template <typename S>
void load_params(const CheckpointFile& f, ParamSet<S>& ps, const std::string& prefix = "") {
  for (auto& e : ps.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    TDRM_CHECK(f.has(e.name),
               "checkpoint is missing parameter " + e.name + "; refusing to load");
    const CheckpointArray& arr = f.array(e.name);
    TDRM_CHECK(arr.shape == e.tensor.shape(),
               "checkpoint parameter " + e.name + " has shape " + shape_str(arr.shape) +
                   " but this model expects " + shape_str(e.tensor.shape()) +
                   "; refusing to load");
    std::vector<double> v = f.f64(e.name);
    auto& dst = e.tensor.raw_value();
    for (size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<S>(v[i]);
  }
}

template <typename S>
void save_adamw(CheckpointWriter& w, AdamW<S>& opt, const std::string& tag) {
  w.add_scalar_u64("__opt." + tag + ".t", static_cast<uint64_t>(opt.step_count()));
  for (auto& [name, mv] : opt.state()) {
    std::vector<double> m(mv.first.begin(), mv.first.end());
    std::vector<double> v(mv.second.begin(), mv.second.end());
    w.add_f64("__opt." + tag + ".m." + name, {static_cast<int64_t>(m.size())}, m);
    w.add_f64("__opt." + tag + ".v." + name, {static_cast<int64_t>(v.size())}, v);
  }
}

template <typename S>
void load_adamw(const CheckpointFile& f, AdamW<S>& opt, const std::string& tag) {
  opt.set_step_count(static_cast<int64_t>(f.scalar_u64("__opt." + tag + ".t")));
  opt.state().clear();
  const std::string mpre = "__opt." + tag + ".m.";
  for (const std::string& name : f.names()) {
    if (name.rfind(mpre, 0) != 0) continue;
    std::string param = name.substr(mpre.size());
    std::vector<double> m = f.f64(name);
    std::vector<double> v = f.f64("__opt." + tag + ".v." + param);
    auto& slot = opt.state()[param];
    slot.first.assign(m.begin(), m.end());
    slot.second.assign(v.begin(), v.end());
  }
}

inline void save_rng(CheckpointWriter& w, const RngStream& rng, const std::string& name) {
  RngStream::State st = rng.state();
  w.add_u64("__rng." + name, {2}, {st.key, st.counter});
}

inline void load_rng(const CheckpointFile& f, RngStream& rng, const std::string& name) {
  std::vector<uint64_t> v = f.u64("__rng." + name);
  TDRM_CHECK(v.size() == 2, "rng state array must hold two words: " + name);
  rng.set_state({v[0], v[1]});
}

}  // namespace tdrm

#endif  // TDRM_TRAIN_CHECKPOINT_HPP_
