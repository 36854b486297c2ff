#pragma once

// Checkpoint container: a text header followed by raw little-endian payloads.
//
//   fedbiot-checkpoint v1
//   meta <key> <value...>
//   record <name> <f32|f64> <d0xd1> <byte count> <fnv1a-64 hex>
//   end
//   <payload of record 0><payload of record 1>...
//
// Keys and names contain no whitespace. Values run to the end of the line.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedbiot/compute/array.hpp"
#include "fedbiot/compute/optim.hpp"
#include "fedbiot/model/lora.hpp"
#include "fedbiot/model/transformer.hpp"

namespace fedbiot {

inline constexpr const char* kCheckpointMagic = "fedbiot-checkpoint v1";

enum class DType { F32, F64 };

inline std::string to_string(DType d) { return d == DType::F32 ? "f32" : "f64"; }

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace detail {

template <class T>
std::string to_le_bytes(const Array<T>& a) {
  std::string out(a.size() * sizeof(T), '\0');
  if (!a.empty()) std::memcpy(out.data(), a.data(), out.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < out.size(); i += sizeof(T)) std::reverse(out.begin() + i, out.begin() + i + sizeof(T));
  }
  return out;
}

template <class S>
std::vector<S> from_le_bytes(std::string bytes) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(S))
      std::reverse(bytes.begin() + i, bytes.begin() + i + sizeof(S));
  }
  std::vector<S> out(bytes.size() / sizeof(S));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

inline Shape parse_shape(const std::string& s) {
  Shape shape;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t next = s.find('x', pos);
    const std::string part = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw IntegrityError("checkpoint: malformed shape '" + s + "'");
    }
    shape.push_back(std::stoull(part));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return shape;
}

inline std::string format_shape(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

}  // namespace detail

class Checkpoint {
 public:
  struct Record {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
    std::string bytes;
  };

  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }

  const std::string& meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw IntegrityError("checkpoint: missing metadata '" + key + "'");
    return it->second;
  }
  bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }
  const std::map<std::string, std::string>& all_meta() const noexcept { return meta_; }

  template <class T>
  void put(const std::string& name, const Array<T>& a) {
    if (index_.count(name)) throw Error("checkpoint: duplicate record '" + name + "'");
    index_[name] = records_.size();
    records_.push_back({name, dtype_of<T>(), a.shape(), detail::to_le_bytes(a)});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  // Reads a record, converting between f32 and f64 when needed.
  template <class T>
  Array<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IntegrityError("checkpoint: missing record '" + name + "'");
    const Record& r = records_[it->second];
    std::vector<T> values;
    if (r.dtype == DType::F32) {
      for (float v : detail::from_le_bytes<float>(r.bytes)) values.push_back(static_cast<T>(v));
    } else {
      for (double v : detail::from_le_bytes<double>(r.bytes)) values.push_back(static_cast<T>(v));
    }
    if (values.size() != shape_count(r.shape)) throw IntegrityError("checkpoint: record '" + name + "' has wrong size");
    return Array<T>(r.shape, std::move(values));
  }

  const std::vector<Record>& records() const noexcept { return records_; }

  void write(std::ostream& os) const {
    os << kCheckpointMagic << '\n';
    for (const auto& [k, v] : meta_) os << "meta " << k << ' ' << v << '\n';
    for (const Record& r : records_) {
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(r.bytes)));
      os << "record " << r.name << ' ' << to_string(r.dtype) << ' ' << detail::format_shape(r.shape) << ' '
         << r.bytes.size() << ' ' << hex << '\n';
    }
    os << "end\n";
    for (const Record& r : records_) os.write(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()));
    if (!os) throw FileError("checkpoint: write failed");
  }

  static Checkpoint read(std::istream& is) {
    Checkpoint ck;
    std::string line;
    if (!std::getline(is, line) || line != kCheckpointMagic) throw IntegrityError("checkpoint: bad magic line");
    struct Pending {
      std::size_t size;
      std::uint64_t checksum;
    };
    std::vector<Pending> pending;
    bool ended = false;
    while (std::getline(is, line)) {
      if (line == "end") {
        ended = true;
        break;
      }
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "meta") {
        std::string key, value;
        ls >> key;
        std::getline(ls >> std::ws, value);
        if (key.empty()) throw IntegrityError("checkpoint: malformed meta line");
        ck.meta_[key] = value;
      } else if (tag == "record") {
        std::string name, dtype, shape, checksum;
        std::size_t size = 0;
        if (!(ls >> name >> dtype >> shape >> size >> checksum) || (dtype != "f32" && dtype != "f64")) {
          throw IntegrityError("checkpoint: malformed record line '" + line + "'");
        }
        Record r{name, dtype == "f32" ? DType::F32 : DType::F64, detail::parse_shape(shape), {}};
        const std::size_t width = r.dtype == DType::F32 ? 4 : 8;
        if (size != shape_count(r.shape) * width) throw IntegrityError("checkpoint: record '" + name + "' size mismatch");
        if (ck.index_.count(name)) throw IntegrityError("checkpoint: duplicate record '" + name + "'");
        ck.index_[name] = ck.records_.size();
        ck.records_.push_back(std::move(r));
        pending.push_back({size, std::stoull(checksum, nullptr, 16)});
      } else {
        throw IntegrityError("checkpoint: unexpected header line '" + line + "'");
      }
    }
    if (!ended) throw IntegrityError("checkpoint: truncated header");
    for (std::size_t i = 0; i < pending.size(); ++i) {
      Record& r = ck.records_[i];
      r.bytes.resize(pending[i].size);
      is.read(r.bytes.data(), static_cast<std::streamsize>(pending[i].size));
      if (static_cast<std::size_t>(is.gcount()) != pending[i].size) {
        throw IntegrityError("checkpoint: payload of '" + r.name + "' is truncated");
      }
      if (fnv1a64(r.bytes) != pending[i].checksum) {
        throw IntegrityError("checkpoint: checksum mismatch in record '" + r.name + "'");
      }
    }
    if (is.peek() != std::char_traits<char>::eof()) throw IntegrityError("checkpoint: trailing bytes after payload");
    return ck;
  }

  // Writes to a sibling temporary file and renames it into place.
  void save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw FileError("cannot write " + tmp.string());
      write(os);
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileError("cannot read " + path.string());
    try {
      return read(is);
    } catch (const IntegrityError& e) {
      throw IntegrityError(path.string() + ": " + e.what());
    }
  }

 private:
  std::map<std::string, std::string> meta_;
  std::vector<Record> records_;
  std::map<std::string, std::size_t> index_;
};

// LoRA factors under `prefix`, with rank, alpha and the key list as metadata.
template <class T>
void put_lora(Checkpoint& ck, const std::string& prefix, const LoraSet<T>& set) {
  std::ostringstream rank, alpha, keys;
  rank << set.rank();
  alpha.precision(17);
  alpha << set.alpha();
  for (const auto& [k, f] : set.factors()) {
    keys << (keys.tellp() > 0 ? "," : "") << k.layer << ':' << projection_name(k.projection);
    ck.put(prefix + "." + lora_key_name(k) + ".A", f.a);
    ck.put(prefix + "." + lora_key_name(k) + ".B", f.b);
  }
  ck.set_meta(prefix + ".rank", rank.str());
  ck.set_meta(prefix + ".alpha", alpha.str());
  ck.set_meta(prefix + ".keys", keys.str());
}

template <class T>
LoraSet<T> get_lora(const Checkpoint& ck, const std::string& prefix) {
  LoraSet<T> set(std::stoull(ck.meta(prefix + ".rank")), std::stod(ck.meta(prefix + ".alpha")));
  std::istringstream keys(ck.meta(prefix + ".keys"));
  for (std::string item; std::getline(keys, item, ',');) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw IntegrityError("checkpoint: malformed LoRA key '" + item + "'");
    const LoraKey k{std::stoull(item.substr(0, colon)), parse_projection(item.substr(colon + 1))};
    set.insert(k, {ck.get<T>(prefix + "." + lora_key_name(k) + ".A"), ck.get<T>(prefix + "." + lora_key_name(k) + ".B")});
  }
  return set;
}

template <class T>
void put_stack(Checkpoint& ck, const std::string& prefix, const TransformerStack<T>& s) {
  const ModelConfig& c = s.config;
  ck.set_meta(prefix + ".config", std::to_string(c.n_layers) + ' ' + std::to_string(c.d_model) + ' ' +
                                      std::to_string(c.n_heads) + ' ' + std::to_string(c.d_ff) + ' ' +
                                      std::to_string(c.vocab_size) + ' ' + std::to_string(c.max_seq_len) + ' ' +
                                      std::to_string(c.rng_seed));
  const auto names = s.parameter_names();
  const auto params = s.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ck.put(prefix + "." + names[i], *params[i]);
}

template <class T>
TransformerStack<T> get_stack(const Checkpoint& ck, const std::string& prefix) {
  std::istringstream cs(ck.meta(prefix + ".config"));
  ModelConfig c;
  if (!(cs >> c.n_layers >> c.d_model >> c.n_heads >> c.d_ff >> c.vocab_size >> c.max_seq_len >> c.rng_seed)) {
    throw IntegrityError("checkpoint: malformed model config");
  }
  c.validate();
  TransformerStack<T> s = TransformerStack<T>::init(c);
  const auto names = s.parameter_names();
  auto params = s.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Array<T> a = ck.get<T>(prefix + "." + names[i]);
    if (a.shape() != params[i]->shape()) throw IntegrityError("checkpoint: record '" + names[i] + "' has wrong shape");
    *params[i] = std::move(a);
  }
  return s;
}

template <class T>
void put_optimizer(Checkpoint& ck, const std::string& prefix, const Optimizer<T>& opt) {
  ck.set_meta(prefix + ".steps", std::to_string(opt.steps()));
  ck.set_meta(prefix + ".slots", std::to_string(opt.first_moments().size()));
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    ck.put(prefix + ".m" + std::to_string(i), opt.first_moments()[i]);
    ck.put(prefix + ".v" + std::to_string(i), opt.second_moments()[i]);
  }
}

// Restores moments into an optimizer already built from its configuration.
template <class T>
void get_optimizer(const Checkpoint& ck, const std::string& prefix, Optimizer<T>& opt) {
  opt.reset();
  const std::size_t slots = std::stoull(ck.meta(prefix + ".slots"));
  for (std::size_t i = 0; i < slots; ++i) {
    opt.first_moments().push_back(ck.get<T>(prefix + ".m" + std::to_string(i)));
    opt.second_moments().push_back(ck.get<T>(prefix + ".v" + std::to_string(i)));
  }
  opt.set_steps(std::stoull(ck.meta(prefix + ".steps")));
}

}  // namespace fedbiot
