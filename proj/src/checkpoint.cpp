#include "crispr/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "crispr/errors.hpp"

namespace crispr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'R', 'S', 'P'};
constexpr std::size_t kHeaderSize = 16;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(std::string_view in, std::size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

std::size_t element_size(DType t) { return t == DType::f32 ? 4 : 8; }

std::string serialize(const Model& model, bool with_lineage) {
  model.config.validate();
  const DType dtype = model.config.dtype;
  const char* dtype_name = dtype == DType::f32 ? "f32" : "f64";

  nlohmann::json table = nlohmann::json::object();
  std::string payload;
  model.for_each_tensor([&](const std::string& name, const std::vector<std::size_t>& shape,
                            const std::vector<double>& values) {
    table[name] = {{"dtype", dtype_name}, {"offset", payload.size()}, {"shape", shape}};
    for (double v : values) {
      if (dtype == DType::f32) {
        put(payload, static_cast<float>(v));
      } else {
        put(payload, v);
      }
    }
  });

  nlohmann::json meta = {{"config", model.config.to_json()}, {"tensors", std::move(table)}};
  if (with_lineage && !model.base_fingerprint.empty())
    meta["base_fingerprint"] = model.base_fingerprint;
  const std::string meta_text = meta.dump();

  std::string out;
  out.reserve(kHeaderSize + meta_text.size() + payload.size());
  out.append(kMagic, 4);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(meta_text.size()));
  out += meta_text;
  out += payload;
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  model.validate();
  return serialize(model, true);
}

Model deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CorruptHeaderError("missing CRSP magic");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion)
    throw CorruptHeaderError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = get<std::uint64_t>(bytes, 8);
  if (meta_len > bytes.size() - kHeaderSize)
    throw CorruptHeaderError("metadata length exceeds file size");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.substr(kHeaderSize, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeaderError(std::string("metadata is not valid JSON: ") + e.what());
  }
  if (!meta.is_object() || !meta.contains("config") || !meta.contains("tensors") ||
      !meta["tensors"].is_object())
    throw CorruptHeaderError("metadata lacks config or tensor table");

  ModelConfig config;
  try {
    config = ModelConfig::from_json(meta["config"]);
  } catch (const ConfigError& e) {
    throw CorruptHeaderError(e.what());
  }

  const std::string_view payload = bytes.substr(kHeaderSize + meta_len);
  const std::size_t esize = element_size(config.dtype);
  const char* dtype_name = config.dtype == DType::f32 ? "f32" : "f64";
  const auto& table = meta["tensors"];

  Model model = Model::zeros(config);
  std::size_t expected_offset = 0;
  std::size_t seen = 0;
  model.for_each_tensor([&](const std::string& name, const std::vector<std::size_t>& shape,
                            std::vector<double>& values) {
    if (!table.contains(name)) throw ShapeMismatchError("tensor table lacks '" + name + "'");
    const auto& entry = table[name];
    std::vector<std::size_t> stored_shape;
    std::size_t offset = 0;
    try {
      stored_shape = entry.at("shape").get<std::vector<std::size_t>>();
      offset = entry.at("offset").get<std::size_t>();
      if (entry.at("dtype").get<std::string>() != dtype_name)
        throw ShapeMismatchError("dtype of '" + name + "' disagrees with config");
    } catch (const nlohmann::json::exception& e) {
      throw CorruptHeaderError("malformed tensor entry '" + name + "': " + e.what());
    }
    if (stored_shape != shape) throw ShapeMismatchError("shape mismatch for '" + name + "'");
    if (offset != expected_offset)
      throw ShapeMismatchError("unexpected payload offset for '" + name + "'");
    const std::size_t nbytes = values.size() * esize;
    if (offset + nbytes > payload.size())
      throw ShapeMismatchError("tensor data for '" + name + "' is truncated");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::size_t at = offset + i * esize;
      const double v = config.dtype == DType::f32 ? static_cast<double>(get<float>(payload, at))
                                                  : get<double>(payload, at);
      if (!std::isfinite(v)) throw NonFiniteValueError("non-finite value in '" + name + "'");
      values[i] = v;
    }
    expected_offset = offset + nbytes;
    ++seen;
  });
  if (seen != table.size()) throw ShapeMismatchError("tensor table has unexpected entries");
  if (expected_offset != payload.size())
    throw ShapeMismatchError("payload size disagrees with tensor table");
  if (meta.contains("base_fingerprint")) {
    if (!meta["base_fingerprint"].is_string())
      throw CorruptHeaderError("base_fingerprint must be a string");
    model.base_fingerprint = meta["base_fingerprint"].get<std::string>();
  }
  return model;
}

Model load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(model));
}

std::string checkpoint_fingerprint(const Model& model) {
  const std::string bytes = serialize(model, false);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace crispr
