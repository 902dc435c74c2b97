#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "ssf/metrics.hpp"

using namespace ssf;

namespace {

// brute-force per-pixel double loop, the oracle for update+miou
struct BruteForce {
  int n;
  std::vector<std::vector<std::uint64_t>> cm;

  explicit BruteForce(int classes) : n(classes), cm((std::size_t)classes, std::vector<std::uint64_t>((std::size_t)classes, 0)) {}

  void add(const std::vector<int>& pred, const std::vector<int>& gt, int ignore) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      ++cm[(std::size_t)gt[i]][(std::size_t)pred[i]];
    }
  }

  double miou(std::vector<double>* per_class = nullptr) const {
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < n; ++c) {
      std::uint64_t row = 0, col = 0;
      for (int j = 0; j < n; ++j) {
        row += cm[(std::size_t)c][(std::size_t)j];
        col += cm[(std::size_t)j][(std::size_t)c];
      }
      const std::uint64_t inter = cm[(std::size_t)c][(std::size_t)c];
      const std::uint64_t uni = row + col - inter;
      if (uni == 0) continue;
      const double iou = (double)inter / (double)uni;
      if (per_class) per_class->push_back(iou);
      sum += iou;
      ++used;
    }
    return sum / used;
  }
};

}  // namespace

TEST_CASE("identical prediction gives mIoU 1.0, with or without ignores") {
  Rng rng(1);
  ConfusionMatrix cm(5);
  std::vector<int> gt(256), pred(256);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = rng.uniform(0.0, 1.0) < 0.2 ? 255 : (int)rng.uniform_int(0, 4);
    pred[i] = gt[i] == 255 ? (int)rng.uniform_int(0, 4) : gt[i];
  }
  cm.update(pred, gt, 255);
  const IouResult r = miou(cm);
  CHECK(r.miou == 1.0);
  CHECK(r.pixel_accuracy == 1.0);
}

TEST_CASE("hand-enumerated 2x2 case") {
  // pred [[0,1],[1,1]] vs gt [[0,0],[1,1]]
  ConfusionMatrix cm(2);
  cm.update(std::vector<int>{0, 1, 1, 1}, std::vector<int>{0, 0, 1, 1}, 255);
  const IouResult r = miou(cm);
  CHECK(r.per_class[0] == doctest::Approx(0.5));
  CHECK(r.per_class[1] == doctest::Approx(2.0 / 3.0));
  CHECK(r.miou == doctest::Approx(0.583333).epsilon(1e-5));
}

TEST_CASE("disjoint single-class masks give mIoU 0") {
  ConfusionMatrix cm(2);
  cm.update(std::vector<int>(16, 0), std::vector<int>(16, 1), 255);
  CHECK(miou(cm).miou == 0.0);
}

TEST_CASE("empty confusion matrix leaves the metric undefined") {
  ConfusionMatrix cm(3);
  CHECK_THROWS_AS(miou(cm), DataError);
}

TEST_CASE("all-ignored update leaves the matrix unchanged") {
  ConfusionMatrix cm(3);
  cm.update(std::vector<int>{0, 1, 2}, std::vector<int>{255, 255, 255}, 255);
  CHECK(cm.total() == 0);
}

TEST_CASE("a single pixel increments exactly one cell") {
  ConfusionMatrix cm(8);
  cm.update(std::vector<int>{5}, std::vector<int>{2}, 255);
  CHECK(cm.total() == 1);
  CHECK(cm.at(2, 5) == 1);
}

TEST_CASE("out-of-range labels name the pixel") {
  ConfusionMatrix cm(4);
  CHECK_THROWS_WITH_AS(cm.update(std::vector<int>{0, 9}, std::vector<int>{0, 1}, 255),
                       doctest::Contains("pixel 1"), DataError);
  CHECK_THROWS_AS(cm.update(std::vector<int>{0}, std::vector<int>{-3}, 255), DataError);
}

TEST_CASE("update matches the brute-force oracle on 50 random mask pairs") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = (int)rng.uniform_int(2, 6);
    ConfusionMatrix cm(classes);
    BruteForce bf(classes);
    std::vector<int> pred(16 * 16), gt(16 * 16);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt[i] = rng.uniform(0.0, 1.0) < 0.15 ? 255 : (int)rng.uniform_int(0, classes - 1);
      pred[i] = (int)rng.uniform_int(0, classes - 1);
    }
    cm.update(pred, gt, 255);
    bf.add(pred, gt, 255);
    for (int g = 0; g < classes; ++g) {
      for (int p = 0; p < classes; ++p) {
        CHECK(cm.at(g, p) == bf.cm[(std::size_t)g][(std::size_t)p]);
      }
    }
    if (cm.total() > 0) {
      CHECK(miou(cm).miou == doctest::Approx(bf.miou()).epsilon(1e-12));
    }
  }
}

TEST_CASE("mIoU is invariant under class relabeling") {
  Rng rng(3);
  const int classes = 5;
  std::vector<int> perm(classes);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = classes - 1; i > 0; --i) {
    std::swap(perm[(std::size_t)i], perm[(std::size_t)rng.uniform_int(0, i)]);
  }
  std::vector<int> pred(400), gt(400);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = (int)rng.uniform_int(0, classes - 1);
    pred[i] = (int)rng.uniform_int(0, classes - 1);
  }
  std::vector<int> pred2(400), gt2(400);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    pred2[i] = perm[(std::size_t)pred[i]];
    gt2[i] = perm[(std::size_t)gt[i]];
  }
  ConfusionMatrix a(classes), b(classes);
  a.update(pred, gt, 255);
  b.update(pred2, gt2, 255);
  CHECK(miou(a).miou == doctest::Approx(miou(b).miou).epsilon(1e-12));
}

TEST_CASE("confusion matrices add over disjoint pixel sets") {
  Rng rng(4);
  const int classes = 4;
  std::vector<int> pred(300), gt(300);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = (int)rng.uniform_int(0, classes - 1);
    pred[i] = (int)rng.uniform_int(0, classes - 1);
  }
  ConfusionMatrix whole(classes);
  whole.update(pred, gt, 255);

  ConfusionMatrix first(classes), second(classes);
  first.update(std::span<const int>(pred).subspan(0, 120),
               std::span<const int>(gt).subspan(0, 120), 255);
  second.update(std::span<const int>(pred).subspan(120),
                std::span<const int>(gt).subspan(120), 255);
  first += second;
  for (int g = 0; g < classes; ++g) {
    for (int p = 0; p < classes; ++p) CHECK(first.at(g, p) == whole.at(g, p));
  }
}

TEST_CASE("zero-union classes are excluded from the mean") {
  // class 2 never appears in gt or pred
  ConfusionMatrix cm(3);
  cm.update(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 1, 0}, 255);
  const IouResult r = miou(cm);
  CHECK_FALSE(r.present[2]);
  CHECK(r.present[0]);
  // IoU_0 = 1/3, IoU_1 = 1/3; mean over the two present classes
  CHECK(r.miou == doctest::Approx(1.0 / 3.0));
}
