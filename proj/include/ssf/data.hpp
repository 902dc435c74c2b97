#pragma once

#include <string>
#include <vector>

#include "ssf/tensor.hpp"

namespace ssf {

struct Sample {
  Tensor image;            // (H, W, 3), values in [0,1]
  std::vector<int> label;  // row-major H*W, values in [0, n_classes) or ignore_index
};

// Binary netpbm readers/writers, maxval <= 255. Malformed files raise
// DataError with the offending byte offset.
Tensor load_image_pgm_ppm(const std::string& path);  // P6 -> (H,W,3), P5 -> (H,W,1)
std::vector<int> load_label_pgm(const std::string& path, int& h, int& w);  // byte 255 = ignore

void write_ppm(const std::string& path, const Tensor& image);
void write_pgm(const std::string& path, std::span<const int> labels, int h, int w);

// Deterministic shapes-on-background scenes: 1-4 axis-aligned rectangles and
// circles per image, each painted in its class colour plus N(0, 0.05) pixel
// noise; the label map marks shape interiors with the class id. Class 0 is
// the background.
std::vector<Sample> synth_dataset(std::uint64_t seed, int n_samples, int h, int w, int n_classes);

// Directory layout: {root}/images/{id}.ppm, {root}/labels/{id}.pgm and a
// manifest {root}/index.txt listing ids one per line.
std::vector<Sample> load_dataset_dir(const std::string& root);
void write_dataset_dir(const std::string& root, const std::vector<Sample>& samples);

}  // namespace ssf
