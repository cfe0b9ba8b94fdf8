#include "cmunet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace cmunet {

namespace {

constexpr std::uint8_t kMetaDtype = 2;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
void put_values(std::string& out, std::span<const T> values) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : values) {
    U bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (std::size_t i = 0; i < sizeof bits; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  void need(std::size_t n, const std::string& entry) {
    if (bytes_.size() - pos_ < n) throw FormatError(source_ + ": truncated at entry '" + entry + "'");
  }
  std::uint32_t u32(const std::string& entry) {
    need(4, entry);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8(const std::string& entry) {
    need(1, entry);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::string take(std::size_t n, const std::string& entry) {
    need(n, entry);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  void values(std::span<T> dst, const std::string& entry) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(dst.size() * sizeof(U), entry);
    for (auto& v : dst) {
      U bits = 0;
      for (std::size_t i = 0; i < sizeof bits; ++i) {
        bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
      }
      pos_ += sizeof bits;
      std::memcpy(&v, &bits, sizeof v);
    }
  }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out = "CMUW";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size() + 1));
  const std::string meta = ckpt.meta.dump();
  put_u32(out, static_cast<std::uint32_t>(std::strlen(kMetaEntry)));
  out += kMetaEntry;
  out.push_back(static_cast<char>(kMetaDtype));
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name == kMetaEntry) throw FormatError("checkpoint: tensor may not be named __meta__");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.dtype()));
    put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    dispatch_dtype(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      put_values<T>(out, t.data<T>());
    });
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.take(4, "header") != "CMUW") throw FormatError(source + ": bad magic");
  const auto version = r.u32("header");
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.u32("header");
  Checkpoint ckpt;
  bool have_meta = false;
  std::string previous = "header";
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.u32(previous);
    if (name_len > 4096) throw FormatError(source + ": implausible name length after '" + previous + "'");
    const std::string name = r.take(name_len, previous);
    const auto dtype = r.u8(name);
    const auto ndim = r.u32(name);
    if (ndim > 8) throw FormatError(source + ": entry '" + name + "' has " + std::to_string(ndim) + " dims");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const auto d = r.u32(name);
      if (d == 0) throw FormatError(source + ": entry '" + name + "' has a zero dimension");
      numel *= d;
      if (numel > (std::uint64_t{1} << 34)) throw FormatError(source + ": entry '" + name + "' is too large");
      shape.push_back(d);
    }
    if (dtype == kMetaDtype) {
      if (name != kMetaEntry || ndim != 1) throw FormatError(source + ": bad metadata entry '" + name + "'");
      try {
        ckpt.meta = nlohmann::json::parse(r.take(numel, name));
      } catch (const nlohmann::json::exception& ex) {
        throw FormatError(source + ": entry '" + name + "': " + ex.what());
      }
      have_meta = true;
    } else if (dtype == 0 || dtype == 1) {
      const DType dt = static_cast<DType>(dtype);
      r.need(numel * (dt == DType::kFloat32 ? 4 : 8), name);
      Tensor t = Tensor::empty(shape, dt);
      dispatch_dtype(dt, [&](auto tag) {
        using T = decltype(tag);
        r.values<T>(t.data<T>(), name);
      });
      ckpt.tensors.push_back({name, t});
    } else {
      throw FormatError(source + ": entry '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
    previous = name;
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes after entry '" + previous + "'");
  if (!have_meta) throw FormatError(source + ": missing __meta__ entry");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

Checkpoint make_checkpoint(const CmUnet& model, const RunConfig& cfg, std::int64_t epoch,
                           const AdamW* optimizer, const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.meta = {{"version", kCheckpointVersion},
               {"config", run_config_to_json(cfg)},
               {"epoch", epoch},
               {"seed", cfg.train.seed}};
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) ckpt.meta[k] = v;
  }
  for (const auto& p : model.named_parameters()) ckpt.tensors.push_back(p);
  for (const auto& b : model.named_buffers()) ckpt.tensors.push_back(b);
  if (optimizer) {
    ckpt.meta["optimizer_steps"] = optimizer->steps();
    for (const auto& s : optimizer->state()) ckpt.tensors.push_back(s);
  }
  return ckpt;
}

RunConfig checkpoint_run_config(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) throw FormatError("checkpoint: metadata has no config");
  return run_config_from_json(ckpt.meta.at("config"));
}

void restore_model(CmUnet& model, const Checkpoint& ckpt) {
  auto copy = [&](const NamedTensor& dst) {
    const Tensor* src = ckpt.find(dst.name);
    if (!src) throw FormatError("checkpoint: missing entry '" + dst.name + "'");
    if (src->shape() != dst.tensor.shape()) {
      throw FormatError("checkpoint: entry '" + dst.name + "' has shape " +
                        shape_to_string(src->shape()) + ", model expects " +
                        shape_to_string(dst.tensor.shape()));
    }
    Tensor target = dst.tensor;
    target.copy_from(src->to(target.dtype()));
  };
  for (const auto& p : model.named_parameters()) copy(p);
  for (const auto& b : model.named_buffers()) copy(b);
}

}  // namespace cmunet
