#include "docrep/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "docrep/serialize.hpp"

namespace docrep {

namespace {

constexpr char kMagic[8] = {'D', 'O', 'C', 'R', 'E', 'P', 'C', 'K'};
constexpr std::size_t kHeaderSize = 8 + 4 + 4 + 8;

class Writer {
 public:
  template <typename V>
  void pod(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size, std::string where) : data_(data), size_(size), where_(std::move(where)) {}
  template <typename V>
  V pod() {
    V v;
    need(sizeof(V));
    std::memcpy(&v, data_ + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == size_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw std::runtime_error(where_ + ": checkpoint payload ends early");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string where_;
};

std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

struct RawCheckpoint {
  CheckpointMeta meta;
  std::vector<char> file;
  std::size_t tensors_offset = 0;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  RawCheckpoint raw;
  raw.file.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const auto where = path.string();
  if (raw.file.size() < kHeaderSize || std::memcmp(raw.file.data(), kMagic, 8) != 0) {
    if (raw.file.size() >= 8 && std::memcmp(raw.file.data(), kMagic, 8) == 0)
      throw std::runtime_error(where + ": checkpoint is truncated (incomplete header)");
    throw std::runtime_error(where + ": not a docrep checkpoint");
  }
  std::uint32_t version, checksum;
  std::uint64_t payload_size;
  std::memcpy(&version, raw.file.data() + 8, 4);
  std::memcpy(&checksum, raw.file.data() + 12, 4);
  std::memcpy(&payload_size, raw.file.data() + 16, 8);
  if (version != kCheckpointVersion)
    throw std::runtime_error(where + ": checkpoint format version " + std::to_string(version) + " does not match version " +
                             std::to_string(kCheckpointVersion) + " read by this build");
  const std::size_t actual = raw.file.size() - kHeaderSize;
  if (payload_size != actual)
    throw std::runtime_error(where + ": checkpoint integrity check failed: header declares " + std::to_string(payload_size) +
                             " payload bytes but the file holds " + std::to_string(actual) + " (truncated or corrupted)");
  if (crc(raw.file.data() + kHeaderSize, actual) != checksum)
    throw std::runtime_error(where + ": checkpoint integrity check failed: checksum mismatch");

  Reader r(raw.file.data() + kHeaderSize, actual, where);
  const auto meta = nlohmann::json::parse(r.str());
  raw.meta.version = version;
  raw.meta.precision = meta.at("precision").get<std::string>();
  raw.meta.model_config = meta.at("model");
  raw.meta.extra = meta.value("extra", nlohmann::json::object());
  raw.meta.step = meta.at("step").get<int>();
  raw.meta.seed = meta.at("seed").get<std::uint64_t>();
  raw.meta.has_optimizer = meta.at("has_optimizer").get<bool>();
  raw.tensors_offset = kHeaderSize + r.pos();
  return raw;
}

}  // namespace

template <>
std::string precision_name<float>() {
  return "single";
}
template <>
std::string precision_name<double>() {
  return "double";
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DocumentModel<T>& model, const AdamW<T>* optimizer, int step,
                     std::uint64_t seed, const nlohmann::json& extra) {
  Writer w;
  nlohmann::json meta;
  meta["precision"] = precision_name<T>();
  meta["model"] = model.config();
  meta["extra"] = extra.is_null() ? nlohmann::json::object() : extra;
  meta["step"] = step;
  meta["seed"] = seed;
  meta["has_optimizer"] = optimizer != nullptr;
  w.str(meta.dump());
  const auto& params = model.parameters().all();
  w.pod<std::uint64_t>(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    const auto& data = p.var.value().data;
    w.pod<std::uint64_t>(data.size());
    w.bytes(data.data(), data.size() * sizeof(T));
  }
  if (optimizer) {
    w.pod<std::int64_t>(optimizer->updates());
    const auto& slots = optimizer->slots();
    w.pod<std::uint64_t>(slots.size());
    for (const auto& s : slots) {
      w.pod<std::int64_t>(s.steps);
      w.pod<std::uint64_t>(s.m.size());
      w.bytes(s.m.data(), s.m.size() * sizeof(T));
      w.bytes(s.v.data(), s.v.size() * sizeof(T));
    }
  }
  const auto& payload = w.buffer();
  const std::uint32_t version = kCheckpointVersion;
  const std::uint32_t checksum = crc(payload.data(), payload.size());
  const std::uint64_t size = payload.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&checksum), 4);
    out.write(reinterpret_cast<const char*>(&size), 8);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, DocumentModel<T>& model, AdamW<T>* optimizer) {
  auto raw = read_raw(path);
  const auto where = path.string();
  if (raw.meta.precision != precision_name<T>())
    throw std::runtime_error(where + ": checkpoint holds " + raw.meta.precision + "-precision weights but the model uses " +
                             precision_name<T>() + " precision");
  const nlohmann::json current = model.config();
  if (auto field = first_config_difference(raw.meta.model_config, current); !field.empty()) {
    std::string detail;
    try {
      std::string ptr = "/" + field;
      for (auto& c : ptr)
        if (c == '.') c = '/';
      const nlohmann::json::json_pointer jp(ptr);
      detail = " (checkpoint: " + (raw.meta.model_config.contains(jp) ? raw.meta.model_config.at(jp).dump() : "absent") +
               ", current: " + (current.contains(jp) ? current.at(jp).dump() : "absent") + ")";
    } catch (const std::exception&) {
    }
    throw std::runtime_error(where + ": model configuration mismatch in field '" + field + "'" + detail);
  }
  if (optimizer && !raw.meta.has_optimizer) throw std::runtime_error(where + ": checkpoint has no optimizer state to resume from");

  auto& params = model.parameters().all();
  Reader r(raw.file.data() + raw.tensors_offset, raw.file.size() - raw.tensors_offset, where);
  const auto count = r.pod<std::uint64_t>();
  if (count != params.size())
    throw std::runtime_error(where + ": checkpoint has " + std::to_string(count) + " parameters, model has " +
                             std::to_string(params.size()));
  std::vector<std::vector<T>> staged(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = r.str();
    if (name != params[i].name)
      throw std::runtime_error(where + ": parameter " + std::to_string(i) + " is '" + name + "', model expects '" + params[i].name +
                               "'");
    const auto n = r.pod<std::uint64_t>();
    if (n != params[i].var.value().data.size())
      throw std::runtime_error(where + ": parameter '" + name + "' has " + std::to_string(n) + " values, model expects " +
                               std::to_string(params[i].var.value().data.size()));
    staged[i].resize(n);
    r.bytes(staged[i].data(), n * sizeof(T));
  }
  AdamW<T> staged_opt;
  if (raw.meta.has_optimizer) {
    staged_opt.set_updates(r.pod<std::int64_t>());
    const auto slots = r.pod<std::uint64_t>();
    if (slots > params.size()) throw std::runtime_error(where + ": optimizer state has more slots than parameters");
    staged_opt.slots().resize(slots);
    for (std::size_t i = 0; i < slots; ++i) {
      auto& s = staged_opt.slots()[i];
      s.steps = r.pod<std::int64_t>();
      const auto n = r.pod<std::uint64_t>();
      if (n != 0 && n != staged[i].size()) throw std::runtime_error(where + ": optimizer moment size mismatch");
      s.m.resize(n);
      s.v.resize(n);
      r.bytes(s.m.data(), n * sizeof(T));
      r.bytes(s.v.data(), n * sizeof(T));
    }
  }
  if (!r.done()) throw std::runtime_error(where + ": trailing bytes after checkpoint payload");

  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].var.mutable_value().data = std::move(staged[i]);
    params[i].var.zero_grad();
  }
  if (optimizer) {
    const auto opts = optimizer->options();
    *optimizer = AdamW<T>(opts);
    optimizer->slots() = std::move(staged_opt.slots());
    optimizer->set_updates(staged_opt.updates());
  }
  model.clear_feature_cache();
  return raw.meta;
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) { return read_raw(path).meta; }

template void save_checkpoint(const std::filesystem::path&, const DocumentModel<float>&, const AdamW<float>*, int, std::uint64_t,
                              const nlohmann::json&);
template void save_checkpoint(const std::filesystem::path&, const DocumentModel<double>&, const AdamW<double>*, int, std::uint64_t,
                              const nlohmann::json&);
template CheckpointMeta load_checkpoint(const std::filesystem::path&, DocumentModel<float>&, AdamW<float>*);
template CheckpointMeta load_checkpoint(const std::filesystem::path&, DocumentModel<double>&, AdamW<double>*);

}  // namespace docrep
