#include "ssf/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace ssf {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'F', 'M'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a_str(std::uint64_t h, const std::string& s) {
  return fnv1a(h, s.data(), s.size());
}

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw DataError(path + ": truncated checkpoint");
  return v;
}

void put_floats(std::ofstream& f, std::span<const float> v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_floats(std::ifstream& f, std::span<float> v, const std::string& path) {
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!f) throw DataError(path + ": truncated checkpoint payload");
}

}  // namespace

std::uint64_t config_digest(const EncoderConfig& enc, const DecoderConfig& dec) {
  std::string canon = "P=" + std::to_string(enc.patch_size) + ";M=" + std::to_string(enc.window_size) +
                      ";C=" + std::to_string(enc.embed_dim) + ";depths=";
  for (int d : enc.depths) canon += std::to_string(d) + ",";
  canon += ";heads=";
  for (int h : enc.num_heads) canon += std::to_string(h) + ",";
  char mlp[40];
  std::snprintf(mlp, sizeof(mlp), "%.17g", enc.mlp_ratio);
  canon += ";mlp=" + std::string(mlp) + ";in=" + std::to_string(enc.in_channels) +
           ";Cd=" + std::to_string(dec.embed_dim) + ";N=" + std::to_string(dec.num_classes) +
           ";ign=" + std::to_string(dec.ignore_index);
  return fnv1a_str(0xcbf29ce484222325ull, canon);
}

void save_checkpoint(const std::string& path, const SSformer& model, const AdamW* opt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(kMagic, 4);
  put<std::uint32_t>(f, kVersion);
  put<std::uint64_t>(f, config_digest(model.encoder().config(), model.decoder().config()));
  const auto& params = model.parameters();
  put<std::uint32_t>(f, static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& s = p.tensor.shape();
    put<std::uint32_t>(f, static_cast<std::uint32_t>(s.size()));
    for (int d : s) put<std::uint32_t>(f, static_cast<std::uint32_t>(d));
    put_floats(f, p.tensor.data());
  }
  put<std::uint8_t>(f, opt != nullptr ? 1 : 0);
  if (opt != nullptr) {
    put<std::uint64_t>(f, static_cast<std::uint64_t>(opt->step_count()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_floats(f, opt->moments_m()[i]);
      put_floats(f, opt->moments_v()[i]);
    }
  }
  if (!f) throw DataError("failed writing " + path);
}

void load_checkpoint(const std::string& path, SSformer& model, AdamW* opt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path + ": not an SSFM checkpoint");
  }
  const auto version = get<std::uint32_t>(f, path);
  if (version != kVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto digest = get<std::uint64_t>(f, path);
  const auto expect = config_digest(model.encoder().config(), model.decoder().config());
  if (digest != expect) {
    throw ConfigError(path + ": checkpoint config digest " + std::to_string(digest) +
                      " does not match model digest " + std::to_string(expect));
  }
  const auto count = get<std::uint32_t>(f, path);
  auto& params = model.parameters();
  if (count != params.size()) {
    throw ConfigError(path + ": checkpoint has " + std::to_string(count) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  for (Parameter& p : params) {
    const auto name_len = get<std::uint32_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw DataError(path + ": truncated checkpoint");
    if (name != p.name) {
      throw ConfigError(path + ": expected tensor \"" + p.name + "\", found \"" + name + "\"");
    }
    const auto rank = get<std::uint32_t>(f, path);
    Shape s(rank);
    for (auto& d : s) d = static_cast<int>(get<std::uint32_t>(f, path));
    if (s != p.tensor.shape()) {
      throw ConfigError(path + ": tensor " + name + " has shape " + shape_str(s) +
                        ", model expects " + shape_str(p.tensor.shape()));
    }
    get_floats(f, p.tensor.data(), path);
  }
  const auto has_opt = get<std::uint8_t>(f, path);
  if (has_opt == 1 && opt != nullptr) {
    const auto step = get<std::uint64_t>(f, path);
    std::vector<std::vector<float>> m, v;
    for (const Parameter& p : params) {
      std::vector<float> mi(static_cast<std::size_t>(p.tensor.numel()));
      std::vector<float> vi(static_cast<std::size_t>(p.tensor.numel()));
      get_floats(f, mi, path);
      get_floats(f, vi, path);
      m.push_back(std::move(mi));
      v.push_back(std::move(vi));
    }
    opt->restore_state(static_cast<std::int64_t>(step), std::move(m), std::move(v));
  }
}

}  // namespace ssf
