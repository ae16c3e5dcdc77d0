#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "afa/model.hpp"
#include "afa/sha256.hpp"

namespace afa {

template <class S>
struct TensorEntry {
  std::string name;
  Mat<S> data;
  bool trainable = false;
};

// Self-describing container for model weights: config, per-tensor trainable
// flags, and a provenance tag. Tensors are kept in canonical schema order so
// save -> load -> save is byte-identical.
template <class S>
class Checkpoint {
 public:
  ModelConfig config;
  LoraSpec lora;
  std::string provenance = "base";

  std::vector<TensorEntry<S>>& tensors() { return tensors_; }
  const std::vector<TensorEntry<S>>& tensors() const { return tensors_; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Mat<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw data_error("checkpoint: unknown tensor " + name);
    return tensors_[it->second].data;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw data_error("checkpoint: unknown tensor " + name);
    return tensors_[it->second].data;
  }

  TensorEntry<S>& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw data_error("checkpoint: unknown tensor " + name);
    return tensors_[it->second];
  }
  const TensorEntry<S>& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw data_error("checkpoint: unknown tensor " + name);
    return tensors_[it->second];
  }

  void add(std::string name, Mat<S> data, bool trainable) {
    if (has(name)) throw data_error("checkpoint: duplicate tensor " + name);
    index_[name] = tensors_.size();
    tensors_.push_back(TensorEntry<S>{std::move(name), std::move(data), trainable});
  }

  void remove(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) return;
    tensors_.erase(tensors_.begin() + static_cast<long>(it->second));
    rebuild_index();
  }

  void rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < tensors_.size(); ++i) index_[tensors_[i].name] = i;
  }

  // Every schema tensor present exactly once with the declared shape, and
  // nothing else.
  void validate_schema() const {
    const auto schema = model_schema(config, lora);
    std::map<std::string, const TensorSpec*> wanted;
    for (const auto& spec : schema) wanted[spec.name] = &spec;
    for (const auto& e : tensors_) {
      auto it = wanted.find(e.name);
      if (it == wanted.end()) throw data_error("checkpoint: unexpected tensor " + e.name);
      if (e.data.rows() != it->second->rows || e.data.cols() != it->second->cols)
        throw data_error(strf("checkpoint: tensor %s has shape %ldx%ld, schema requires %ldx%ld",
                              e.name.c_str(), long(e.data.rows()), long(e.data.cols()),
                              long(it->second->rows), long(it->second->cols)));
    }
    if (tensors_.size() != schema.size()) {
      for (const auto& spec : schema)
        if (!has(spec.name)) throw data_error("checkpoint: missing tensor " + spec.name);
    }
  }

  // BERT-style initialization: weights and embeddings N(0, 0.02^2), biases
  // zero, layer norms identity. Draw order follows the schema.
  static Checkpoint random_init(const ModelConfig& cfg, uint64_t seed) {
    Checkpoint ckpt;
    ckpt.config = cfg;
    Rng rng(seed);
    for (const auto& spec : model_schema(cfg)) {
      Mat<S> m;
      if (is_decay_exempt(spec.name)) {
        m = Mat<S>::Zero(spec.rows, spec.cols);
        if (spec.name.size() > 6 &&
            spec.name.compare(spec.name.size() - 6, 6, ".gamma") == 0)
          m.setOnes();
      } else {
        m = normal_matrix<S>(rng, spec.rows, spec.cols, 0.02);
      }
      ckpt.add(spec.name, std::move(m), true);
    }
    return ckpt;
  }

  std::string save_bytes() const;
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("checkpoint: cannot open for writing: " + path);
    const std::string bytes = save_bytes();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("checkpoint: write failed: " + path);
  }

  static Checkpoint load_bytes(const std::string& bytes);
  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint: cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_bytes(bytes);
  }

  std::string tensor_digest(const std::string& name) const {
    const Mat<S>& m = at(name);
    return Sha256::hex(m.data(), sizeof(S) * static_cast<size_t>(m.size()));
  }

 private:
  std::vector<TensorEntry<S>> tensors_;
  std::map<std::string, size_t> index_;
};

namespace detail {

constexpr char kCkptMagic[4] = {'A', 'F', 'C', 'P'};
constexpr uint32_t kCkptVersion = 1;

struct ByteWriter {
  std::string buf;
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  void raw(void* p, size_t n) {
    if (pos + n > buf.size()) throw data_error("checkpoint: truncated data");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    if (pos + n > buf.size()) throw data_error("checkpoint: truncated data");
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

// Layout (all little-endian): magic "AFCP", version u32, dtype u8 (scalar
// byte width), provenance string, config block, lora block, tensor directory
// (name, rows u64, cols u64, trainable u8), then raw row-major tensor data in
// directory order.
template <class S>
std::string Checkpoint<S>::save_bytes() const {
  if (!host_is_little_endian()) throw data_error("checkpoint: big-endian hosts unsupported");
  detail::ByteWriter w;
  w.raw(detail::kCkptMagic, 4);
  w.u32(detail::kCkptVersion);
  w.u8(static_cast<uint8_t>(sizeof(S)));
  w.str(provenance);
  w.u32(static_cast<uint32_t>(config.n_layers));
  w.u32(static_cast<uint32_t>(config.d_model));
  w.u32(static_cast<uint32_t>(config.heads));
  w.u32(static_cast<uint32_t>(config.ext_heads));
  w.u32(static_cast<uint32_t>(config.d_k));
  w.u32(static_cast<uint32_t>(config.d_v));
  w.u32(static_cast<uint32_t>(config.d_ff));
  w.u32(static_cast<uint32_t>(config.ext_ffn));
  w.u32(static_cast<uint32_t>(config.vocab_size));
  w.u32(static_cast<uint32_t>(config.max_seq_len));
  w.f64(config.ln_eps);
  w.f64(config.dropout_p);
  w.u32(static_cast<uint32_t>(lora.rank));
  w.f64(lora.alpha);
  w.u32(lora.targets);
  w.u32(static_cast<uint32_t>(tensors_.size()));
  for (const auto& e : tensors_) {
    w.str(e.name);
    w.u64(static_cast<uint64_t>(e.data.rows()));
    w.u64(static_cast<uint64_t>(e.data.cols()));
    w.u8(e.trainable ? 1 : 0);
  }
  for (const auto& e : tensors_)
    w.raw(e.data.data(), sizeof(S) * static_cast<size_t>(e.data.size()));
  return std::move(w.buf);
}

template <class S>
Checkpoint<S> Checkpoint<S>::load_bytes(const std::string& bytes) {
  if (!host_is_little_endian()) throw data_error("checkpoint: big-endian hosts unsupported");
  detail::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw data_error("checkpoint: corrupt header (bad magic)");
  const uint32_t version = r.u32();
  if (version != detail::kCkptVersion)
    throw data_error(strf("checkpoint: unsupported format version %u", version));
  const uint8_t dtype = r.u8();
  if (dtype != sizeof(S))
    throw data_error(strf("checkpoint: precision mismatch (file has %u-byte scalars, "
                          "requested %zu-byte)",
                          unsigned(dtype), sizeof(S)));
  Checkpoint ckpt;
  ckpt.provenance = r.str();
  ckpt.config.n_layers = static_cast<int>(r.u32());
  ckpt.config.d_model = static_cast<int>(r.u32());
  ckpt.config.heads = static_cast<int>(r.u32());
  ckpt.config.ext_heads = static_cast<int>(r.u32());
  ckpt.config.d_k = static_cast<int>(r.u32());
  ckpt.config.d_v = static_cast<int>(r.u32());
  ckpt.config.d_ff = static_cast<int>(r.u32());
  ckpt.config.ext_ffn = static_cast<int>(r.u32());
  ckpt.config.vocab_size = static_cast<int>(r.u32());
  ckpt.config.max_seq_len = static_cast<int>(r.u32());
  ckpt.config.ln_eps = r.f64();
  ckpt.config.dropout_p = r.f64();
  ckpt.lora.rank = static_cast<int>(r.u32());
  ckpt.lora.alpha = r.f64();
  ckpt.lora.targets = r.u32();
  ckpt.config.validate();
  const uint32_t count = r.u32();
  struct DirEntry {
    std::string name;
    uint64_t rows, cols;
    bool trainable;
  };
  std::vector<DirEntry> dir;
  dir.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    DirEntry e;
    e.name = r.str();
    e.rows = r.u64();
    e.cols = r.u64();
    e.trainable = r.u8() != 0;
    if (e.rows == 0 || e.cols == 0 || e.rows > (1ull << 32) || e.cols > (1ull << 32))
      throw data_error("checkpoint: tensor " + e.name + " has an invalid shape");
    dir.push_back(std::move(e));
  }
  for (const auto& e : dir) {
    Mat<S> m(static_cast<Index>(e.rows), static_cast<Index>(e.cols));
    r.raw(m.data(), sizeof(S) * static_cast<size_t>(m.size()));
    ckpt.add(e.name, std::move(m), e.trainable);
  }
  if (r.pos != bytes.size()) throw data_error("checkpoint: trailing bytes after tensor data");
  ckpt.validate_schema();
  return ckpt;
}

}  // namespace afa
