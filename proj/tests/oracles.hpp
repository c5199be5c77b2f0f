#pragma once

// Independent scalar reference implementations used to check the library.
// Everything here is deliberately written as plain per-pixel loops with no
// shared code with the implementation under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <vector>

#include "scattnet/data.hpp"
#include "scattnet/tensor.hpp"

namespace oracles {

// Zero-padded cross-correlation, one scalar at a time.
inline scattnet::Tensor conv2d_ref(const scattnet::Tensor& x,
                                   const scattnet::Tensor& k,
                                   const std::vector<float>& bias, int stride,
                                   bool same) {
  const int nb = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int ph = same ? (kh - 1) / 2 : 0;
  const int pw = same ? (kw - 1) / 2 : 0;
  const int ho = (h + 2 * ph - kh) / stride + 1;
  const int wo = (w + 2 * pw - kw) / stride + 1;
  scattnet::Tensor out({nb, co, ho, wo});
  for (int n = 0; n < nb; ++n)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < ci; ++c)
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx) {
                const int iy = y * stride - ph + dy;
                const int ix = xx * stride - pw + dx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(x.at(n, c, iy, ix)) *
                       k.at(o, c, dy, dx);
              }
          out.at(n, o, y, xx) = static_cast<float>(acc);
        }
  return out;
}

// Mean cross-entropy through an explicit per-pixel softmax loop.
inline double cross_entropy_ref(const scattnet::Tensor& logits,
                                const std::vector<scattnet::LabelMap>& targets,
                                int ignore_class = -1) {
  const int nb = logits.dim(0), k = logits.dim(1), h = logits.dim(2),
            w = logits.dim(3);
  double sum = 0.0;
  long scored = 0;
  for (int n = 0; n < nb; ++n)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int t = targets[static_cast<std::size_t>(n)].at(y, x);
        if (t == ignore_class) continue;
        double z = 0.0;
        for (int c = 0; c < k; ++c)
          z += std::exp(static_cast<double>(logits.at(n, c, y, x)));
        const double p = std::exp(static_cast<double>(logits.at(n, t, y, x))) / z;
        sum += -std::log(p);
        ++scored;
      }
  return sum / scored;
}

struct MetricsRef {
  std::vector<double> iou;
  std::vector<double> f1;
  double miou = 0.0;
  double af = 0.0;
  double oa = 0.0;
};

// Per-pixel counting of TP/FP/FN per class, no confusion matrix.
inline MetricsRef metrics_ref(const std::vector<scattnet::LabelMap>& preds,
                              const std::vector<scattnet::LabelMap>& gts,
                              int k, const std::set<int>& excluded) {
  std::vector<long> tp(static_cast<std::size_t>(k), 0),
      fp(static_cast<std::size_t>(k), 0), fn(static_cast<std::size_t>(k), 0);
  long correct = 0, total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int y = 0; y < gts[i].height; ++y)
      for (int x = 0; x < gts[i].width; ++x) {
        const int p = preds[i].at(y, x);
        const int g = gts[i].at(y, x);
        ++total;
        if (p == g) {
          ++correct;
          ++tp[static_cast<std::size_t>(g)];
        } else {
          ++fp[static_cast<std::size_t>(p)];
          ++fn[static_cast<std::size_t>(g)];
        }
      }
  }
  MetricsRef r;
  r.iou.resize(static_cast<std::size_t>(k));
  r.f1.resize(static_cast<std::size_t>(k));
  double iou_sum = 0.0, f1_sum = 0.0;
  int included = 0;
  for (int c = 0; c < k; ++c) {
    const std::size_t ci = static_cast<std::size_t>(c);
    const long denom = tp[ci] + fp[ci] + fn[ci];
    r.iou[ci] = denom > 0 ? static_cast<double>(tp[ci]) / denom : 0.0;
    const long fd = 2 * tp[ci] + fp[ci] + fn[ci];
    r.f1[ci] = fd > 0 ? 2.0 * tp[ci] / fd : 0.0;
    if (!excluded.count(c)) {
      iou_sum += r.iou[ci];
      f1_sum += r.f1[ci];
      ++included;
    }
  }
  r.miou = iou_sum / included;
  r.af = f1_sum / included;
  r.oa = static_cast<double>(correct) / total;
  return r;
}

// Plain scalar Adam on a 1-D function, for optimizer cross-checks.
inline double adam_scalar_ref(double w0, int steps, double lr,
                              const std::function<double(double)>& grad_fn,
                              double b1 = 0.9, double b2 = 0.999,
                              double eps = 1e-8) {
  double w = w0, m = 0.0, v = 0.0;
  for (int t = 1; t <= steps; ++t) {
    const double g = grad_fn(w);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
  }
  return w;
}

inline scattnet::Tensor random_tensor(std::vector<int> shape,
                                      std::mt19937_64& rng, float lo = -2.0f,
                                      float hi = 2.0f) {
  scattnet::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double u = static_cast<double>(rng() >> 11) / 9007199254740992.0;
    t[i] = lo + static_cast<float>(u) * (hi - lo);
  }
  return t;
}

// Element of a rank-3 [C,H,W] tensor.
inline float at3(const scattnet::Tensor& t, int c, int y, int x) {
  return t[(static_cast<std::size_t>(c) * t.dim(1) + y) * t.dim(2) + x];
}

// Shuffled evenly spaced values: every element is distinct with a known
// minimum gap of (hi-lo)/(numel-1), so max-pool style argmaxes cannot flip
// under small finite-difference probes.
inline scattnet::Tensor spread_tensor(std::vector<int> shape,
                                      std::mt19937_64& rng, float lo = -2.0f,
                                      float hi = 2.0f) {
  scattnet::Tensor t(std::move(shape));
  const std::size_t n = t.numel();
  std::vector<float> vals(n);
  for (std::size_t i = 0; i < n; ++i)
    vals[i] = lo + (hi - lo) * static_cast<float>(i) /
                       static_cast<float>(n > 1 ? n - 1 : 1);
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), t.vec().begin());
  return t;
}

inline scattnet::LabelMap random_labels(int w, int h, int k,
                                        std::mt19937_64& rng) {
  scattnet::LabelMap m(w, h);
  for (auto& v : m.labels)
    v = static_cast<std::uint8_t>(rng() % static_cast<std::uint64_t>(k));
  return m;
}

}  // namespace oracles
