#pragma once

#include <span>

#include "ssf/common.hpp"

namespace ssf {

// counts[gt][pred] = pixels with ground truth gt predicted as pred.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return n_; }
  std::uint64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * static_cast<std::size_t>(n_) +
                   static_cast<std::size_t>(pred)];
  }

  // Pixels whose ground truth equals ignore_index contribute nothing; every
  // other pixel increments exactly one cell.
  void update(std::span<const int> pred, std::span<const int> gt, int ignore_index);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  std::uint64_t total() const;

 private:
  int n_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<double> per_class;  // IoU per class; 0 for absent classes
  std::vector<bool> present;      // class has nonzero union
};

// IoU_c = cm[c][c] / (row_c + col_c - cm[c][c]); classes with zero union are
// excluded from the mean. An all-zero matrix leaves the metric undefined.
IouResult miou(const ConfusionMatrix& cm);

}  // namespace ssf
