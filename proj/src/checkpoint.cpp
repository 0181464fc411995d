#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "adgen/config.hpp"
#include "adgen/trainer.hpp"

// Checkpoint file layout (little-endian throughout):
//   bytes 0..4   magic "ADGN1"
//   u32          config text length, then that many bytes of "key = value" text
//   u64          completed optimizer steps
//   u32          record count
//   per record:  u32 name length, name bytes, u32 rank, i64 extents[rank],
//                f32 payload (numel values)
//   u64          FNV-1a 64 checksum of every byte before it
// Records hold the parameters in registry order, then the first moments as
// "optim.m.<name>" and second moments as "optim.v.<name>".

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace adgen {

namespace {

constexpr char kMagic[5] = {'A', 'D', 'G', 'N', '1'};
constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
  return h;
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }

  void record(const std::string& name, const Tensor<float>& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    raw(name.data(), name.size());
    u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d = 0; d < t.rank(); ++d) i64(t.size(d));
    raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) throw IntegrityError("checkpoint truncated");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, sizeof v); return v; }
  std::string str(std::size_t n) {
    if (pos_ + n > buf_.size()) throw IntegrityError("checkpoint truncated");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::pair<std::string, Tensor<float>> record() {
    const std::uint32_t name_len = u32();
    if (name_len > 4096) throw IntegrityError("checkpoint record name too long");
    std::string name = str(name_len);
    const std::uint32_t rank = u32();
    if (rank > 8) throw IntegrityError("checkpoint record rank too large");
    Shape shape(rank);
    for (auto& e : shape) {
      e = i64();
      if (e <= 0) throw IntegrityError("checkpoint record extent not positive");
    }
    Tensor<float> t = Tensor<float>::zeros(shape);
    raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(float));
    return {std::move(name), std::move(t)};
  }

  std::size_t pos() const { return pos_; }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

void copy_into(Tensor<float>& dst, const Tensor<float>& src, const std::string& name) {
  if (dst.shape() != src.shape())
    throw IntegrityError("checkpoint shape mismatch for " + name);
  std::memcpy(dst.data(), src.data(), static_cast<std::size_t>(src.numel()) * sizeof(float));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const OptimState<float>& opt, const TrainConfig& train_cfg, Index step) {
  auto named = params.named();
  if (opt.m.size() != named.size() || opt.v.size() != named.size())
    throw ShapeError("save_checkpoint: optimizer state does not match parameter registry");

  Writer w;
  w.raw(kMagic, sizeof kMagic);
  const std::string cfg_text = configs_to_text(params.config, train_cfg);
  w.u32(static_cast<std::uint32_t>(cfg_text.size()));
  w.raw(cfg_text.data(), cfg_text.size());
  w.u64(static_cast<std::uint64_t>(step));
  w.u32(static_cast<std::uint32_t>(3 * named.size()));
  for (const auto& [name, p] : named) w.record(name, p);
  for (std::size_t k = 0; k < named.size(); ++k) w.record("optim.m." + named[k].first, opt.m[k]);
  for (std::size_t k = 0; k < named.size(); ++k) w.record("optim.v." + named[k].first, opt.v[k]);

  const std::uint64_t checksum = fnv1a(w.bytes().data(), w.bytes().size());
  std::string out = w.bytes();
  out.append(reinterpret_cast<const char*>(&checksum), sizeof checksum);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValueError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ValueError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValueError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t))
    throw IntegrityError("checkpoint truncated");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
  const std::uint64_t actual = fnv1a(bytes.data(), bytes.size() - sizeof stored);
  if (stored != actual) throw IntegrityError("checkpoint checksum mismatch");
  bytes.resize(bytes.size() - sizeof stored);

  Reader r(std::move(bytes));
  char magic[5];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IntegrityError("not a checkpoint file (bad magic)");

  Checkpoint ck;
  const std::uint32_t cfg_len = r.u32();
  const std::string cfg_text = r.str(cfg_len);
  configs_from_text(cfg_text, &ck.model_cfg, &ck.train_cfg);
  ck.model_cfg.validate();
  ck.step = static_cast<Index>(r.u64());

  // Materialize tensors once from the embedded config, then fill from records.
  ck.params = init_params<float>(ck.model_cfg, /*weight_seed=*/0);
  ck.opt = OptimState<float>::init(ck.params);
  auto named = ck.params.named();
  const auto expected = param_shapes(ck.model_cfg);
  if (named.size() != expected.size())
    throw IntegrityError("checkpoint registry size mismatch");

  const std::uint32_t n_records = r.u32();
  if (n_records != 3 * named.size())
    throw IntegrityError("checkpoint record count mismatch");

  for (std::size_t k = 0; k < named.size(); ++k) {
    auto [name, t] = r.record();
    if (name != named[k].first)
      throw IntegrityError("checkpoint parameter order mismatch: expected " + named[k].first +
                           ", found " + name);
    copy_into(named[k].second, t, name);
  }
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto [name, t] = r.record();
    if (name != "optim.m." + named[k].first)
      throw IntegrityError("checkpoint moment order mismatch: " + name);
    copy_into(ck.opt.m[k], t, name);
  }
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto [name, t] = r.record();
    if (name != "optim.v." + named[k].first)
      throw IntegrityError("checkpoint moment order mismatch: " + name);
    copy_into(ck.opt.v[k], t, name);
  }
  if (r.pos() != r.bytes().size()) throw IntegrityError("checkpoint has trailing bytes");
  ck.opt.step = ck.step;
  return ck;
}

}  // namespace adgen
