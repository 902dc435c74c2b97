#include "ssf/metrics.hpp"

namespace ssf {

ConfusionMatrix::ConfusionMatrix(int num_classes) : n_(num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_), 0);
}

void ConfusionMatrix::update(std::span<const int> pred, std::span<const int> gt,
                             int ignore_index) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion update: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gt.size()) + " labels");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i];
    if (g == ignore_index) continue;
    const int p = pred[i];
    if (g < 0 || g >= n_) {
      throw DataError("confusion update: ground-truth label " + std::to_string(g) +
                      " out of range [0," + std::to_string(n_) + ") at pixel " +
                      std::to_string(i));
    }
    if (p < 0 || p >= n_) {
      throw DataError("confusion update: predicted label " + std::to_string(p) +
                      " out of range [0," + std::to_string(n_) + ") at pixel " +
                      std::to_string(i));
    }
    ++counts_[static_cast<std::size_t>(g) * static_cast<std::size_t>(n_) +
              static_cast<std::size_t>(p)];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeError("confusion merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts_) t += c;
  return t;
}

IouResult miou(const ConfusionMatrix& cm) {
  const int n = cm.num_classes();
  if (cm.total() == 0) {
    throw DataError("miou: empty confusion matrix, metric undefined");
  }
  IouResult res;
  res.per_class.assign(static_cast<std::size_t>(n), 0.0);
  res.present.assign(static_cast<std::size_t>(n), false);
  std::uint64_t trace = 0;
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < n; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t inter = cm.at(c, c);
    trace += inter;
    const std::uint64_t uni = row + col - inter;
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    res.per_class[static_cast<std::size_t>(c)] = iou;
    res.present[static_cast<std::size_t>(c)] = true;
    sum += iou;
    ++used;
  }
  res.miou = sum / static_cast<double>(used);
  res.pixel_accuracy = static_cast<double>(trace) / static_cast<double>(cm.total());
  return res;
}

}  // namespace ssf
