#include "kdiff/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include "kdiff/error.hpp"

namespace kdiff {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'E', 'V', '2', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const unsigned char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_tensor(const std::string& name, const Tensor& t, StorageMode storage) {
    put_string(name);
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(d);
    for (double v : t.data()) {
      if (storage == StorageMode::Float64) {
        put<double>(v);
      } else {
        put<float>(static_cast<float>(v));
      }
    }
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> get_tensor(StorageMode storage) {
    std::string name = get_string();
    const auto rank = get<std::uint32_t>();
    if (rank == 0 || rank > 8) fail(ErrorKind::TruncatedFile, "implausible rank in blob '" + name + "'");
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<std::size_t>(get<std::uint64_t>()));
      if (shape.back() == 0 || shape.back() > size_) fail(ErrorKind::TruncatedFile, "bad extent in '" + name + "'");
      count *= shape.back();
    }
    need(count * (storage == StorageMode::Float64 ? 8 : 4));
    std::vector<double> values(count);
    for (auto& v : values) v = storage == StorageMode::Float64 ? get<double>() : static_cast<double>(get<float>());
    return {std::move(name), Tensor(std::move(shape), std::move(values))};
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) fail(ErrorKind::TruncatedFile, "checkpoint ends early");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const unsigned char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(size)));
}

void write_header(Writer& w, const TrainConfig& c, const TrainState& s, StorageMode storage) {
  w.put<std::int32_t>(c.schedule_steps);
  w.put<double>(c.beta_start);
  w.put<double>(c.beta_end);
  w.put<std::int32_t>(c.experts);
  w.put<std::int32_t>(s.bank.size());
  const auto& d = c.denoiser;
  for (std::size_t v : {d.height, d.width, d.channels, d.patch, d.d_model, d.d_text, d.layers, d.ffn_mult}) {
    w.put<std::uint64_t>(v);
  }
  w.put<std::uint8_t>(static_cast<std::uint8_t>(d.scale_mode));
  w.put<double>(d.init_std);
  for (std::size_t v : {c.text.vocab_size, c.text.d_text, c.text.layers, c.text.ffn_mult}) w.put<std::uint64_t>(v);
  w.put<double>(c.text.init_std);
  w.put<double>(c.w_a);
  w.put<double>(c.w_l);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(storage));
  w.put<double>(c.policy.p_know);
  w.put<double>(c.policy.p_cap);
  w.put<std::uint8_t>((c.policy.insert_tokens ? 1 : 0) | (c.policy.scale_attention ? 2 : 0) |
                      (c.policy.weight_loss ? 4 : 0) | (c.policy.append_labels ? 8 : 0) | (c.conditional ? 16 : 0));
  w.put<double>(c.p_uncond);
  w.put<double>(c.adam.lr);
  w.put<double>(c.adam.beta1);
  w.put<double>(c.adam.beta2);
  w.put<double>(c.adam.eps);
  w.put<double>(c.adam.weight_decay);
  w.put<std::int32_t>(c.batch_size);
  w.put<std::int64_t>(c.warmup_steps);
  w.put<std::int64_t>(c.train_steps);
  w.put<std::uint64_t>(c.seed);
  w.put<std::int64_t>(c.log_every);
  w.put<std::int64_t>(c.checkpoint_every);
  w.put<std::int64_t>(s.step);
  w.put<std::int64_t>(s.text_optimizer.step);
  for (const auto& o : s.expert_optimizers) w.put<std::int64_t>(o.step);
}

void put_params(Writer& w, const std::string& prefix, const ParamSet& p, StorageMode storage) {
  for (const auto& [name, t] : p.entries()) w.put_tensor(prefix + name, t, storage);
}

void put_moments(Writer& w, const std::string& prefix, const ParamSet& p, const OptimizerState& o,
                 StorageMode storage) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    w.put_tensor(prefix + "m/" + p.entries()[i].first, o.m[i], storage);
    w.put_tensor(prefix + "v/" + p.entries()[i].first, o.v[i], storage);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config,
                     StorageMode storage) {
  Writer w;
  for (char c : kMagic) w.put<char>(c);
  w.put<std::uint32_t>(kCheckpointVersion);
  write_header(w, config, state, storage);

  std::uint32_t blobs = static_cast<std::uint32_t>(state.bank.text_encoder.size() * 3);
  for (const auto& e : state.bank.experts) blobs += static_cast<std::uint32_t>(e.size() * 3);
  w.put<std::uint32_t>(blobs);
  put_params(w, "text/", state.bank.text_encoder, storage);
  for (int e = 0; e < state.bank.size(); ++e) put_params(w, "expert" + std::to_string(e) + "/", state.bank.experts[e], storage);
  put_moments(w, "opt/text/", state.bank.text_encoder, state.text_optimizer, storage);
  for (int e = 0; e < state.bank.size(); ++e) {
    put_moments(w, "opt/expert" + std::to_string(e) + "/", state.bank.experts[e], state.expert_optimizers[e], storage);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc_of(bytes.data(), bytes.size());
  w.put<std::uint32_t>(crc);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorKind::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::IoError, "cannot move checkpoint into place: " + ec.message());
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct BlobCursor {
  std::vector<std::pair<std::string, Tensor>>& blobs;
  std::size_t next = 0;

  Tensor take(const std::string& name, const Shape& shape) {
    auto& [stored, value] = blobs.at(next++);
    if (stored != name || value.shape() != shape) {
      fail(ErrorKind::ChecksumMismatch, "unexpected blob '" + stored + "', wanted '" + name + "'");
    }
    return std::move(value);
  }
};

ParamSet take_params(BlobCursor& cursor, const std::string& prefix, const ParamSet& layout) {
  ParamSet out;
  for (const auto& [name, t] : layout.entries()) out.add(name, cursor.take(prefix + name, t.shape()));
  return out;
}

void take_moments(BlobCursor& cursor, const std::string& prefix, const ParamSet& layout, OptimizerState& o) {
  o.m.clear();
  o.v.clear();
  for (const auto& [name, t] : layout.entries()) {
    o.m.push_back(cursor.take(prefix + "m/" + name, t.shape()));
    o.v.push_back(cursor.take(prefix + "v/" + name, t.shape()));
  }
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes.data(), bytes.size());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::BadMagic, path.string() + " is not a checkpoint");
  }
  for (int i = 0; i < 4; ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::VersionUnsupported, "checkpoint version " + std::to_string(version));
  }

  LoadedCheckpoint out;
  TrainConfig& c = out.config;
  c.schedule_steps = r.get<std::int32_t>();
  c.beta_start = r.get<double>();
  c.beta_end = r.get<double>();
  c.experts = r.get<std::int32_t>();
  const int bank_size = r.get<std::int32_t>();
  if (bank_size < 1 || bank_size > 1 << 16) fail(ErrorKind::TruncatedFile, "implausible expert count");
  auto& d = c.denoiser;
  for (std::size_t* v : {&d.height, &d.width, &d.channels, &d.patch, &d.d_model, &d.d_text, &d.layers, &d.ffn_mult}) {
    *v = static_cast<std::size_t>(r.get<std::uint64_t>());
  }
  d.scale_mode = static_cast<ScaleMode>(r.get<std::uint8_t>());
  d.init_std = r.get<double>();
  d.schedule_steps = c.schedule_steps;
  for (std::size_t* v : {&c.text.vocab_size, &c.text.d_text, &c.text.layers, &c.text.ffn_mult}) {
    *v = static_cast<std::size_t>(r.get<std::uint64_t>());
  }
  c.text.init_std = r.get<double>();
  c.w_a = r.get<double>();
  c.w_l = r.get<double>();
  out.storage = static_cast<StorageMode>(r.get<std::uint8_t>());
  if (out.storage != StorageMode::Float64 && out.storage != StorageMode::Float32) {
    fail(ErrorKind::VersionUnsupported, "unknown storage mode");
  }
  c.policy.p_know = r.get<double>();
  c.policy.p_cap = r.get<double>();
  const auto flags = r.get<std::uint8_t>();
  c.policy.insert_tokens = flags & 1;
  c.policy.scale_attention = flags & 2;
  c.policy.weight_loss = flags & 4;
  c.policy.append_labels = flags & 8;
  c.conditional = flags & 16;
  c.p_uncond = r.get<double>();
  c.adam.lr = r.get<double>();
  c.adam.beta1 = r.get<double>();
  c.adam.beta2 = r.get<double>();
  c.adam.eps = r.get<double>();
  c.adam.weight_decay = r.get<double>();
  c.batch_size = r.get<std::int32_t>();
  c.warmup_steps = r.get<std::int64_t>();
  c.train_steps = r.get<std::int64_t>();
  c.seed = r.get<std::uint64_t>();
  c.log_every = r.get<std::int64_t>();
  c.checkpoint_every = r.get<std::int64_t>();

  TrainState& s = out.state;
  s.step = r.get<std::int64_t>();
  s.text_optimizer.step = r.get<std::int64_t>();
  s.expert_optimizers.resize(bank_size);
  for (auto& o : s.expert_optimizers) o.step = r.get<std::int64_t>();

  const auto blob_count = r.get<std::uint32_t>();
  std::vector<std::pair<std::string, Tensor>> blobs;
  for (std::uint32_t i = 0; i < blob_count; ++i) blobs.push_back(r.get_tensor(out.storage));
  const std::size_t body = r.position();
  const auto stored_crc = r.get<std::uint32_t>();
  if (r.position() != bytes.size()) fail(ErrorKind::ChecksumMismatch, "trailing bytes after checksum");
  if (stored_crc != crc_of(bytes.data(), body)) fail(ErrorKind::ChecksumMismatch, path.string());

  // The header is trusted from here on; layouts reproduced from it let
  // every blob's name and shape be checked.
  Rng layout_rng(0);
  const ParamSet text_layout = init_text_encoder(c.text, layout_rng);
  const ParamSet expert_layout = init_denoiser(c.denoiser, layout_rng);
  const auto expected = 3 * (text_layout.size() + static_cast<std::size_t>(bank_size) * expert_layout.size());
  if (blobs.size() != expected) fail(ErrorKind::ChecksumMismatch, "blob count does not match the header");

  BlobCursor cursor{blobs};
  s.bank.denoiser = c.denoiser;
  s.bank.text = c.text;
  s.bank.text_encoder = take_params(cursor, "text/", text_layout);
  for (int e = 0; e < bank_size; ++e) {
    s.bank.experts.push_back(take_params(cursor, "expert" + std::to_string(e) + "/", expert_layout));
  }
  take_moments(cursor, "opt/text/", text_layout, s.text_optimizer);
  for (int e = 0; e < bank_size; ++e) {
    take_moments(cursor, "opt/expert" + std::to_string(e) + "/", expert_layout, s.expert_optimizers[e]);
  }
  return out;
}

std::string checkpoint_hash(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc_of(bytes.data(), bytes.size());
  return os.str();
}

}  // namespace kdiff
