#include "ssf/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace ssf {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  f.seekg(0, std::ios::end);
  const auto n = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<unsigned char> buf(n);
  if (n > 0) f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (!f) throw DataError("failed reading " + path);
  return buf;
}

struct PnmHeader {
  char kind;  // '5' or '6'
  int w = 0, h = 0, maxval = 0;
  std::size_t payload = 0;  // byte offset of the first payload byte
};

bool pnm_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

PnmHeader parse_pnm_header(const std::vector<unsigned char>& buf, const std::string& path) {
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
    const std::string magic =
        buf.size() >= 2 ? std::string(reinterpret_cast<const char*>(buf.data()), 2) : "<eof>";
    throw DataError(path + ": unsupported format magic \"" + magic +
                    "\" at byte 0 (binary P5/P6 required)");
  }
  PnmHeader hd;
  hd.kind = static_cast<char>(buf[1]);
  std::size_t pos = 2;
  auto skip_ws = [&]() {
    while (pos < buf.size()) {
      if (pnm_space(buf[pos])) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_ws();
    if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') {
      throw DataError(path + ": expected " + std::string(what) + " at byte " +
                      std::to_string(pos));
    }
    long v = 0;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1 << 26) throw DataError(path + ": absurd " + std::string(what));
      ++pos;
    }
    return static_cast<int>(v);
  };
  hd.w = read_int("width");
  hd.h = read_int("height");
  hd.maxval = read_int("maxval");
  if (hd.w <= 0 || hd.h <= 0) {
    throw DataError(path + ": non-positive dimensions in header");
  }
  if (hd.maxval > 255) {
    throw DataError(path + ": maxval " + std::to_string(hd.maxval) +
                    " exceeds 255 (single-byte samples required), header ends at byte " +
                    std::to_string(pos));
  }
  if (pos >= buf.size() || !pnm_space(buf[pos])) {
    throw DataError(path + ": expected whitespace after maxval at byte " + std::to_string(pos));
  }
  hd.payload = pos + 1;
  const std::size_t channels = hd.kind == '6' ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(hd.w) * static_cast<std::size_t>(hd.h) * channels;
  if (buf.size() - hd.payload < need) {
    throw DataError(path + ": truncated payload, need " + std::to_string(need) +
                    " bytes from offset " + std::to_string(hd.payload) + ", file has " +
                    std::to_string(buf.size() - hd.payload));
  }
  return hd;
}

void hsv_to_rgb(double hue, double sat, double val, float rgb[3]) {
  const double h6 = hue / 60.0;
  const int i = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = val * (1.0 - sat);
  const double q = val * (1.0 - f * sat);
  const double t = val * (1.0 - (1.0 - f) * sat);
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = val; g = t; b = p; break;
    case 1: r = q; g = val; b = p; break;
    case 2: r = p; g = val; b = t; break;
    case 3: r = p; g = q; b = val; break;
    case 4: r = t; g = p; b = val; break;
    default: r = val; g = p; b = q; break;
  }
  rgb[0] = static_cast<float>(r);
  rgb[1] = static_cast<float>(g);
  rgb[2] = static_cast<float>(b);
}

std::vector<std::array<float, 3>> make_palette(int n_classes) {
  std::vector<std::array<float, 3>> pal(static_cast<std::size_t>(n_classes));
  pal[0] = {0.16f, 0.16f, 0.20f};  // background
  for (int c = 1; c < n_classes; ++c) {
    float rgb[3];
    hsv_to_rgb(std::fmod(137.508 * c, 360.0), 0.78, 0.88, rgb);
    pal[static_cast<std::size_t>(c)] = {rgb[0], rgb[1], rgb[2]};
  }
  return pal;
}

constexpr double kPixelNoise = 0.05;

}  // namespace

Tensor load_image_pgm_ppm(const std::string& path) {
  const auto buf = read_file(path);
  const PnmHeader hd = parse_pnm_header(buf, path);
  const int channels = hd.kind == '6' ? 3 : 1;
  const float inv = 1.0f / 255.0f;
  std::vector<float> data(static_cast<std::size_t>(hd.h) * static_cast<std::size_t>(hd.w) *
                          static_cast<std::size_t>(channels));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<float>(buf[hd.payload + i]) * inv;
  }
  return Tensor(Shape{hd.h, hd.w, channels}, std::move(data));
}

std::vector<int> load_label_pgm(const std::string& path, int& h, int& w) {
  const auto buf = read_file(path);
  const PnmHeader hd = parse_pnm_header(buf, path);
  if (hd.kind != '5') {
    throw DataError(path + ": label maps must be P5 graymaps, got P" + std::string(1, hd.kind));
  }
  h = hd.h;
  w = hd.w;
  std::vector<int> labels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<int>(buf[hd.payload + i]);
  }
  return labels;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("write_ppm: expected (H,W,3), got " + shape_str(image.shape()));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.numel()));
  auto src = image.data();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(src[i], 0.0f, 1.0f);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path);
}

void write_pgm(const std::string& path, std::span<const int> labels, int h, int w) {
  if (static_cast<std::size_t>(h) * static_cast<std::size_t>(w) != labels.size()) {
    throw ShapeError("write_pgm: label count does not match dims");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int v = labels[i];
    if (v < 0 || v > 255) {
      throw DataError("write_pgm: label " + std::to_string(v) + " does not fit a byte at pixel " +
                      std::to_string(i));
    }
    bytes[i] = static_cast<unsigned char>(v);
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path);
}

std::vector<Sample> synth_dataset(std::uint64_t seed, int n_samples, int h, int w, int n_classes) {
  if (h < 8 || w < 8) {
    throw DataError("synth_dataset: dims " + std::to_string(h) + "x" + std::to_string(w) +
                    " below the 8 px minimum");
  }
  if (n_classes < 2) throw ConfigError("synth_dataset: need at least 2 classes");
  const auto palette = make_palette(n_classes);
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  const int ext = std::min(h, w);
  const int lo = std::max(2, ext / 6);
  const int hi = std::max(lo, ext / 3);

  for (int si = 0; si < n_samples; ++si) {
    Sample s;
    std::vector<float> img(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
    s.label.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0);
    for (std::size_t i = 0; i < img.size(); ++i) {
      const float base = palette[0][i % 3];
      img[i] = std::clamp(base + static_cast<float>(rng.normal(0.0, kPixelNoise)), 0.0f, 1.0f);
    }
    const int n_shapes = static_cast<int>(rng.uniform_int(1, 4));
    for (int k = 0; k < n_shapes; ++k) {
      const bool is_rect = rng.uniform_int(0, 1) == 0;
      const int cls = n_classes == 2 ? 1 : static_cast<int>(rng.uniform_int(1, n_classes - 1));
      const int cy = static_cast<int>(rng.uniform_int(0, h - 1));
      const int cx = static_cast<int>(rng.uniform_int(0, w - 1));
      const auto& col = palette[static_cast<std::size_t>(cls)];
      auto paint = [&](int y, int x) {
        const std::size_t pi = static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
                               static_cast<std::size_t>(x);
        s.label[pi] = cls;
        for (int ch = 0; ch < 3; ++ch) {
          img[pi * 3 + static_cast<std::size_t>(ch)] = std::clamp(
              col[static_cast<std::size_t>(ch)] + static_cast<float>(rng.normal(0.0, kPixelNoise)),
              0.0f, 1.0f);
        }
      };
      if (is_rect) {
        const int hh = static_cast<int>(rng.uniform_int(lo, hi));
        const int hw2 = static_cast<int>(rng.uniform_int(lo, hi));
        for (int y = std::max(0, cy - hh); y <= std::min(h - 1, cy + hh); ++y) {
          for (int x = std::max(0, cx - hw2); x <= std::min(w - 1, cx + hw2); ++x) paint(y, x);
        }
      } else {
        const int r = static_cast<int>(rng.uniform_int(lo, hi));
        for (int y = std::max(0, cy - r); y <= std::min(h - 1, cy + r); ++y) {
          for (int x = std::max(0, cx - r); x <= std::min(w - 1, cx + r); ++x) {
            const int dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx <= r * r) paint(y, x);
          }
        }
      }
    }
    s.image = Tensor(Shape{h, w, 3}, std::move(img));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_dataset_dir(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path rp(root);
  std::ifstream idx(rp / "index.txt");
  if (!idx) throw DataError("cannot open " + (rp / "index.txt").string());
  std::vector<Sample> out;
  std::string id;
  while (std::getline(idx, id)) {
    while (!id.empty() && (id.back() == '\r' || id.back() == ' ')) id.pop_back();
    if (id.empty()) continue;
    Sample s;
    s.image = load_image_pgm_ppm((rp / "images" / (id + ".ppm")).string());
    if (s.image.dim(2) == 1) {
      // grayscale input: replicate to three channels
      s.image = concat({s.image, s.image, s.image}, 2);
    }
    int lh = 0, lw = 0;
    s.label = load_label_pgm((rp / "labels" / (id + ".pgm")).string(), lh, lw);
    if (lh != s.image.dim(0) || lw != s.image.dim(1)) {
      throw DataError(root + ": sample " + id + " image is " + std::to_string(s.image.dim(0)) +
                      "x" + std::to_string(s.image.dim(1)) + " but label is " +
                      std::to_string(lh) + "x" + std::to_string(lw));
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError(root + ": dataset is empty");
  return out;
}

void write_dataset_dir(const std::string& root, const std::vector<Sample>& samples) {
  namespace fs = std::filesystem;
  const fs::path rp(root);
  fs::create_directories(rp / "images");
  fs::create_directories(rp / "labels");
  std::ofstream idx(rp / "index.txt");
  if (!idx) throw DataError("cannot write " + (rp / "index.txt").string());
  char name[16];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "%06zu", i);
    const std::string id(name);
    write_ppm((rp / "images" / (id + ".ppm")).string(), samples[i].image);
    write_pgm((rp / "labels" / (id + ".pgm")).string(), samples[i].label,
              samples[i].image.dim(0), samples[i].image.dim(1));
    idx << id << "\n";
  }
}

}  // namespace ssf
