#include "hiersum/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "hiersum/errors.hpp"

namespace hiersum {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'A', 'R'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  uint8_t u8() { return raw(1)[0]; }

  uint32_t u32() {
    const unsigned char* p = raw(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    const unsigned char* p = raw(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }

  std::string str(size_t n) {
    const unsigned char* p = raw(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  const unsigned char* raw(size_t n) {
    if (n > remaining()) {
      throw IoError("truncated archive: " + path_);
    }
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

const ArchiveTensor* Archive::find(const std::string& name) const {
  for (const ArchiveTensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_archive(const Archive& archive, const std::string& path) {
  std::string payload;
  std::string table;
  put_u32(table, static_cast<uint32_t>(archive.tensors.size()));
  for (const ArchiveTensor& t : archive.tensors) {
    int64_t numel = 1;
    for (int d : t.shape) {
      if (d < 1) throw ValidationError("archive tensor '" + t.name + "' has a non-positive dim");
      numel *= d;
    }
    if (static_cast<int64_t>(t.values.size()) != numel) {
      throw ValidationError("archive tensor '" + t.name + "' has " +
                            std::to_string(t.values.size()) + " values for shape product " +
                            std::to_string(numel));
    }
    put_u32(table, static_cast<uint32_t>(t.name.size()));
    table += t.name;
    table.push_back(0);  // dtype f32
    put_u32(table, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(table, static_cast<uint32_t>(d));
    put_u64(table, payload.size());
    const size_t bytes = t.values.size() * sizeof(float);
    const size_t at = payload.size();
    payload.resize(at + bytes);
    static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
    std::memcpy(payload.data() + at, t.values.data(), bytes);
  }

  const std::string config_text = format_kv_text(archive.config);
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, config_text.size());
  out += config_text;
  out += table;
  put_u64(out, payload.size());
  out += payload;

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write archive: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed while writing archive: " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open archive: " + path);
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader r(bytes, path);

  const std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw ValidationError("not an archive file: " + path);
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw ValidationError("unsupported archive version " + std::to_string(version) + ": " + path);
  }
  const uint64_t config_len = r.u64();
  Archive archive;
  archive.config = parse_kv_text(r.str(config_len));

  const uint32_t n_tensors = r.u32();
  struct Entry {
    ArchiveTensor tensor;
    uint64_t offset;
    uint64_t numel;
  };
  std::vector<Entry> entries;
  entries.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    Entry e;
    const uint32_t name_len = r.u32();
    e.tensor.name = r.str(name_len);
    const uint8_t dtype = r.u8();
    if (dtype != 0) {
      throw ValidationError("archive tensor '" + e.tensor.name + "' has unsupported dtype " +
                            std::to_string(dtype));
    }
    const uint32_t ndim = r.u32();
    uint64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint32_t dim = r.u32();
      if (dim == 0) {
        throw ValidationError("archive tensor '" + e.tensor.name + "' has a zero dim");
      }
      e.tensor.shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    if (numel > (uint64_t{1} << 32)) {
      throw ValidationError("archive tensor '" + e.tensor.name + "' is implausibly large");
    }
    e.offset = r.u64();
    e.numel = numel;
    entries.push_back(std::move(e));
  }

  const uint64_t payload_len = r.u64();
  if (payload_len != r.remaining()) {
    throw IoError("truncated archive: " + path);
  }
  const unsigned char* payload = r.raw(payload_len);
  for (Entry& e : entries) {
    const uint64_t bytes = e.numel * sizeof(float);
    if (e.offset > payload_len || bytes > payload_len - e.offset) {
      throw IoError("truncated archive: " + path);
    }
    e.tensor.values.resize(e.numel);
    std::memcpy(e.tensor.values.data(), payload + e.offset, bytes);
    archive.tensors.push_back(std::move(e.tensor));
  }
  return archive;
}

Archive checkpoint_archive(const HierTransformer& model, const OptimizerState* opt,
                           const KvMap& extra_config) {
  Archive archive;
  archive.config = extra_config;
  model_config_to_kv(model.config(), archive.config);
  if (opt) archive.config["opt_step"] = std::to_string(opt->step);

  auto push = [&archive](const std::string& name, const std::vector<int>& shape,
                         std::span<const double> values) {
    ArchiveTensor t;
    t.name = name;
    t.shape = shape;
    t.values.reserve(values.size());
    for (double v : values) t.values.push_back(static_cast<float>(v));
    archive.tensors.push_back(std::move(t));
  };

  for (const auto& [name, p] : model.named_params()) {
    push(name, p.shape(), p.data());
  }
  if (opt) {
    for (const auto& [name, p] : model.named_params()) {
      auto it = opt->moments.find(name);
      if (it == opt->moments.end()) continue;
      push("opt.m." + name, p.shape(), it->second.m);
      push("opt.v." + name, p.shape(), it->second.v);
    }
  }
  return archive;
}

void save_checkpoint(const HierTransformer& model, const OptimizerState* opt,
                     const KvMap& extra_config, const std::string& path) {
  save_archive(checkpoint_archive(model, opt, extra_config), path);
}

ModelConfig model_config_of_archive(const Archive& archive) {
  return model_config_from_kv(archive.config);
}

void load_checkpoint_into(const Archive& archive, HierTransformer& model, OptimizerState* opt) {
  KvMap stored;
  model_config_to_kv(model_config_of_archive(archive), stored);
  KvMap own;
  model_config_to_kv(model.config(), own);
  for (const auto& [key, value] : own) {
    if (stored.at(key) != value) {
      throw ValidationError("checkpoint config mismatch on '" + key + "': archive has " +
                            stored.at(key) + ", model has " + value);
    }
  }
  for (auto& [name, p] : model.named_params()) {
    const ArchiveTensor* t = archive.find(name);
    if (!t) throw ValidationError("checkpoint is missing parameter '" + name + "'");
    if (static_cast<int64_t>(t->values.size()) != p.numel()) {
      throw ValidationError("checkpoint parameter '" + name + "' has wrong size");
    }
    std::span<double> value = p.data();
    for (size_t i = 0; i < t->values.size(); ++i) value[i] = t->values[i];
  }
  if (opt) {
    opt->moments.clear();
    opt->step = kv_int(archive.config, "opt_step", 0);
    for (auto& [name, p] : model.named_params()) {
      const ArchiveTensor* m = archive.find("opt.m." + name);
      const ArchiveTensor* v = archive.find("opt.v." + name);
      if (!m && !v) continue;
      if (!m || !v || static_cast<int64_t>(m->values.size()) != p.numel() ||
          static_cast<int64_t>(v->values.size()) != p.numel()) {
        throw ValidationError("checkpoint moments for '" + name + "' are incomplete");
      }
      OptimizerState::Moments& mom = opt->moments[name];
      mom.m.assign(m->values.begin(), m->values.end());
      mom.v.assign(v->values.begin(), v->values.end());
    }
  }
}

void canonicalize_f32(HierTransformer& model, OptimizerState* opt) {
  for (auto& [name, p] : model.named_params()) {
    for (double& v : p.data()) v = static_cast<double>(static_cast<float>(v));
  }
  if (opt) {
    for (auto& [name, mom] : opt->moments) {
      for (double& v : mom.m) v = static_cast<double>(static_cast<float>(v));
      for (double& v : mom.v) v = static_cast<double>(static_cast<float>(v));
    }
  }
}

}  // namespace hiersum
