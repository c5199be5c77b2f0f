#include "scattnet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

#include "scattnet/errors.hpp"

namespace scattnet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

float stable_sigmoid(float x) {
  float y;
  if (x >= 0.0f) {
    float e = std::exp(-x);
    y = 1.0f / (1.0f + e);
  } else {
    float e = std::exp(x);
    y = e / (1.0f + e);
  }
  // Keep gate values strictly inside (0,1) even where float32 would
  // round to the endpoints (|x| beyond ~17 and ~88).
  y = std::min(y, std::nextafter(1.0f, 0.0f));
  return std::max(y, std::nextafter(0.0f, 1.0f));
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int pad_total) {
  return (in + pad_total - kernel) / stride + 1;
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractError("invalid tape node id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::NodeId Tape::leaf(Tensor value) {
  return push(std::move(value), {}, nullptr, "leaf");
}

Tape::NodeId Tape::push(Tensor value, std::vector<NodeId> inputs,
                        BackwardFn backward, const char* op_name) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by op '") +
                       op_name + "'");
  }
  for (NodeId in : inputs) node(in);  // validates range
  nodes_.push_back(Node{std::move(value), std::move(inputs),
                        std::move(backward), op_name});
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }

const Tensor& Tape::grad(NodeId id) const {
  node(id);
  std::size_t i = static_cast<std::size_t>(id);
  if (i >= grad_set_.size() || !grad_set_[i]) {
    auto* self = const_cast<Tape*>(this);
    self->zero_grad_scratch_ = Tensor(node(id).value.shape());
    return zero_grad_scratch_;
  }
  return grads_[i];
}

void Tape::accumulate_grad(NodeId id, const Tensor& g) {
  const Node& n = node(id);
  require(g.same_shape(n.value), std::string("gradient shape ") +
                                     g.shape_str() + " does not match value " +
                                     n.value.shape_str());
  std::size_t i = static_cast<std::size_t>(id);
  if (grads_.size() < nodes_.size()) {
    grads_.resize(nodes_.size());
    grad_set_.resize(nodes_.size(), 0);
  }
  if (!grad_set_[i]) {
    grads_[i] = g;
    grad_set_[i] = 1;
  } else {
    float* dst = grads_[i].data();
    const float* src = g.data();
    for (std::size_t k = 0; k < g.numel(); ++k) dst[k] += src[k];
  }
}

void Tape::backward(NodeId loss) {
  const Node& n = node(loss);
  require(n.value.numel() == 1,
          "backward() requires a scalar loss, got " + n.value.shape_str());
  grads_.assign(nodes_.size(), Tensor());
  grad_set_.assign(nodes_.size(), 0);
  accumulate_grad(loss, Tensor::full(n.value.shape(), 1.0f));
  for (NodeId id = loss; id >= 0; --id) {
    std::size_t i = static_cast<std::size_t>(id);
    if (!grad_set_[i] || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, id);
  }
}

// ---------------------------------------------------------------------
// conv2d

Tape::NodeId Tape::conv2d(NodeId input, NodeId kernel, NodeId bias, int stride,
                          Padding padding) {
  const Tensor& x = value(input);
  const Tensor& k = value(kernel);
  require(x.rank() == 4, "conv2d input must be rank 4, got " + x.shape_str());
  require(k.rank() == 4, "conv2d kernel must be rank 4, got " + k.shape_str());
  require(stride >= 1, "conv2d stride must be >= 1");
  const int n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  require(k.dim(1) == cin, "conv2d channel mismatch: input " + x.shape_str() +
                               " vs kernel " + k.shape_str());
  int ph = 0, pw = 0;
  if (padding == Padding::Same) {
    require(stride == 1, "conv2d 'same' padding requires stride 1");
    require(kh % 2 == 1 && kw % 2 == 1,
            "conv2d 'same' padding requires odd kernel dims, got " +
                k.shape_str());
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
  }
  require(kh <= h + 2 * ph && kw <= w + 2 * pw,
          "conv2d kernel " + k.shape_str() + " exceeds padded input " +
              x.shape_str());
  if (bias != kNone) {
    const Tensor& b = value(bias);
    require(b.rank() == 1 && b.dim(0) == cout,
            "conv2d bias must be [Cout], got " + b.shape_str());
  }
  const int ho = conv_out_extent(h, kh, stride, 2 * ph);
  const int wo = conv_out_extent(w, kw, stride, 2 * pw);

  Tensor out({n_batch, cout, ho, wo});
  const float* bias_data = bias != kNone ? value(bias).data() : nullptr;
  for (int n = 0; n < n_batch; ++n) {
    for (int co = 0; co < cout; ++co) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias_data ? bias_data[co] : 0.0;
          const int iy0 = oy * stride - ph;
          const int ix0 = ox * stride - pw;
          for (int ci = 0; ci < cin; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = iy0 + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= w) continue;
                acc += static_cast<double>(x.at(n, ci, iy, ix)) *
                       k.at(co, ci, ky, kx);
              }
            }
          }
          out.at(n, co, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }

  std::vector<NodeId> inputs = {input, kernel};
  if (bias != kNone) inputs.push_back(bias);
  auto bw = [input, kernel, bias, stride, ph, pw](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(input);
    const Tensor& k = t.value(kernel);
    const int n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const int ho = g.dim(2), wo = g.dim(3);
    Tensor gx(x.shape());
    Tensor gk(k.shape());
    for (int n = 0; n < n_batch; ++n) {
      for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            const float go = g.at(n, co, oy, ox);
            if (go == 0.0f) continue;
            const int iy0 = oy * stride - ph;
            const int ix0 = ox * stride - pw;
            for (int ci = 0; ci < cin; ++ci) {
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ix0 + kx;
                  if (ix < 0 || ix >= w) continue;
                  gx.at(n, ci, iy, ix) += k.at(co, ci, ky, kx) * go;
                  gk.at(co, ci, ky, kx) += x.at(n, ci, iy, ix) * go;
                }
              }
            }
          }
        }
      }
    }
    t.accumulate_grad(input, gx);
    t.accumulate_grad(kernel, gk);
    if (bias != kNone) {
      Tensor gb({cout});
      for (int n = 0; n < n_batch; ++n)
        for (int co = 0; co < cout; ++co)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
              gb[static_cast<std::size_t>(co)] += g.at(n, co, oy, ox);
      t.accumulate_grad(bias, gb);
    }
  };
  return push(std::move(out), std::move(inputs), bw, "conv2d");
}

// ---------------------------------------------------------------------
// pool2d

Tape::NodeId Tape::pool2d(NodeId input, PoolMode mode, PoolScope scope,
                          int window, int stride) {
  const Tensor& x = value(input);
  require(x.rank() == 4, "pool2d input must be rank 4, got " + x.shape_str());
  const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);

  if (scope == PoolScope::Windowed) {
    require(window >= 1, "pool2d window must be >= 1");
    if (stride == 0) stride = window;
    require(window <= h && window <= w,
            "pool2d window " + std::to_string(window) + " exceeds input " +
                x.shape_str());
    const int ho = (h - window) / stride + 1;
    const int wo = (w - window) / stride + 1;
    Tensor out({n_batch, c, ho, wo});
    std::vector<std::size_t> argmax;
    if (mode == PoolMode::Max) argmax.resize(out.numel());
    const double inv_area = 1.0 / (static_cast<double>(window) * window);
    for (int n = 0; n < n_batch; ++n) {
      for (int ci = 0; ci < c; ++ci) {
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            if (mode == PoolMode::Max) {
              float best = x.at(n, ci, oy * stride, ox * stride);
              std::size_t best_idx = x.idx4(n, ci, oy * stride, ox * stride);
              for (int dy = 0; dy < window; ++dy) {
                for (int dx = 0; dx < window; ++dx) {
                  float v = x.at(n, ci, oy * stride + dy, ox * stride + dx);
                  if (v > best) {  // first occurrence wins ties
                    best = v;
                    best_idx = x.idx4(n, ci, oy * stride + dy, ox * stride + dx);
                  }
                }
              }
              out.at(n, ci, oy, ox) = best;
              argmax[out.idx4(n, ci, oy, ox)] = best_idx;
            } else {
              double acc = 0.0;
              for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx)
                  acc += x.at(n, ci, oy * stride + dy, ox * stride + dx);
              out.at(n, ci, oy, ox) = static_cast<float>(acc * inv_area);
            }
          }
        }
      }
    }
    BackwardFn bw;
    if (mode == PoolMode::Max) {
      bw = [input, argmax = std::move(argmax)](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        Tensor gx(t.value(input).shape());
        for (std::size_t i = 0; i < g.numel(); ++i) gx[argmax[i]] += g[i];
        t.accumulate_grad(input, gx);
      };
    } else {
      const float share = static_cast<float>(inv_area);
      bw = [input, window, stride, share](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        Tensor gx(t.value(input).shape());
        for (int n = 0; n < g.dim(0); ++n)
          for (int ci = 0; ci < g.dim(1); ++ci)
            for (int oy = 0; oy < g.dim(2); ++oy)
              for (int ox = 0; ox < g.dim(3); ++ox) {
                const float go = g.at(n, ci, oy, ox) * share;
                for (int dy = 0; dy < window; ++dy)
                  for (int dx = 0; dx < window; ++dx)
                    gx.at(n, ci, oy * stride + dy, ox * stride + dx) += go;
              }
        t.accumulate_grad(input, gx);
      };
    }
    return push(std::move(out), {input}, std::move(bw), "pool2d");
  }

  if (scope == PoolScope::GlobalSpatial) {
    require(h >= 1 && w >= 1, "pool2d: empty spatial extent");
    Tensor out({n_batch, c, 1, 1});
    std::vector<std::size_t> argmax;
    if (mode == PoolMode::Max) argmax.resize(out.numel());
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int n = 0; n < n_batch; ++n) {
      for (int ci = 0; ci < c; ++ci) {
        if (mode == PoolMode::Max) {
          float best = x.at(n, ci, 0, 0);
          std::size_t best_idx = x.idx4(n, ci, 0, 0);
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              if (x.at(n, ci, y, xx) > best) {
                best = x.at(n, ci, y, xx);
                best_idx = x.idx4(n, ci, y, xx);
              }
          out.at(n, ci, 0, 0) = best;
          argmax[out.idx4(n, ci, 0, 0)] = best_idx;
        } else {
          double acc = 0.0;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) acc += x.at(n, ci, y, xx);
          out.at(n, ci, 0, 0) = static_cast<float>(acc * inv);
        }
      }
    }
    BackwardFn bw;
    if (mode == PoolMode::Max) {
      bw = [input, argmax = std::move(argmax)](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        Tensor gx(t.value(input).shape());
        for (std::size_t i = 0; i < g.numel(); ++i) gx[argmax[i]] += g[i];
        t.accumulate_grad(input, gx);
      };
    } else {
      const float share = static_cast<float>(inv);
      bw = [input, share](Tape& t, NodeId self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(input);
        Tensor gx(x.shape());
        for (int n = 0; n < x.dim(0); ++n)
          for (int ci = 0; ci < x.dim(1); ++ci) {
            const float go = g.at(n, ci, 0, 0) * share;
            for (int y = 0; y < x.dim(2); ++y)
              for (int xx = 0; xx < x.dim(3); ++xx)
                gx.at(n, ci, y, xx) += go;
          }
        t.accumulate_grad(input, gx);
      };
    }
    return push(std::move(out), {input}, std::move(bw), "pool2d");
  }

  // GlobalChannel: reduce over C per spatial position.
  require(c >= 1, "pool2d: empty channel extent");
  Tensor out({n_batch, 1, h, w});
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::Max) argmax.resize(out.numel());
  const double inv_c = 1.0 / c;
  for (int n = 0; n < n_batch; ++n) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        if (mode == PoolMode::Max) {
          float best = x.at(n, 0, y, xx);
          std::size_t best_idx = x.idx4(n, 0, y, xx);
          for (int ci = 1; ci < c; ++ci)
            if (x.at(n, ci, y, xx) > best) {
              best = x.at(n, ci, y, xx);
              best_idx = x.idx4(n, ci, y, xx);
            }
          out.at(n, 0, y, xx) = best;
          argmax[out.idx4(n, 0, y, xx)] = best_idx;
        } else {
          double acc = 0.0;
          for (int ci = 0; ci < c; ++ci) acc += x.at(n, ci, y, xx);
          out.at(n, 0, y, xx) = static_cast<float>(acc * inv_c);
        }
      }
    }
  }
  BackwardFn bw;
  if (mode == PoolMode::Max) {
    bw = [input, argmax = std::move(argmax)](Tape& t, NodeId self) {
      const Tensor& g = t.grad(self);
      Tensor gx(t.value(input).shape());
      for (std::size_t i = 0; i < g.numel(); ++i) gx[argmax[i]] += g[i];
      t.accumulate_grad(input, gx);
    };
  } else {
    const float share = static_cast<float>(inv_c);
    bw = [input, share](Tape& t, NodeId self) {
      const Tensor& g = t.grad(self);
      const Tensor& x = t.value(input);
      Tensor gx(x.shape());
      for (int n = 0; n < x.dim(0); ++n)
        for (int ci = 0; ci < x.dim(1); ++ci)
          for (int y = 0; y < x.dim(2); ++y)
            for (int xx = 0; xx < x.dim(3); ++xx)
              gx.at(n, ci, y, xx) += g.at(n, 0, y, xx) * share;
      t.accumulate_grad(input, gx);
    };
  }
  return push(std::move(out), {input}, std::move(bw), "pool2d");
}

// ---------------------------------------------------------------------
// dense

Tape::NodeId Tape::dense(NodeId input, NodeId weights, NodeId bias) {
  const Tensor& x = value(input);
  const Tensor& wt = value(weights);
  require(x.rank() >= 1, "dense input must have rank >= 1");
  require(wt.rank() == 2, "dense weights must be [K,M], got " + wt.shape_str());
  const int k = wt.dim(0), m = wt.dim(1);
  require(x.dim(x.rank() - 1) == k,
          "dense inner-dim mismatch: input " + x.shape_str() + " vs weights " +
              wt.shape_str());
  if (bias != kNone) {
    const Tensor& b = value(bias);
    require(b.rank() == 1 && b.dim(0) == m,
            "dense bias must be [M], got " + b.shape_str());
  }
  const std::size_t lead = x.numel() / static_cast<std::size_t>(k);
  std::vector<int> out_shape = x.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  const float* bias_data = bias != kNone ? value(bias).data() : nullptr;
  for (std::size_t r = 0; r < lead; ++r) {
    for (int j = 0; j < m; ++j) {
      double acc = bias_data ? bias_data[j] : 0.0;
      for (int i = 0; i < k; ++i)
        acc += static_cast<double>(x[r * k + i]) * wt[i * m + j];
      out[r * m + j] = static_cast<float>(acc);
    }
  }
  std::vector<NodeId> inputs = {input, weights};
  if (bias != kNone) inputs.push_back(bias);
  auto bw = [input, weights, bias, k, m, lead](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(input);
    const Tensor& wt = t.value(weights);
    Tensor gx(x.shape());
    Tensor gw(wt.shape());
    for (std::size_t r = 0; r < lead; ++r) {
      for (int i = 0; i < k; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) {
          acc += static_cast<double>(g[r * m + j]) * wt[i * m + j];
          gw[static_cast<std::size_t>(i) * m + j] += x[r * k + i] * g[r * m + j];
        }
        gx[r * k + i] = static_cast<float>(acc);
      }
    }
    t.accumulate_grad(input, gx);
    t.accumulate_grad(weights, gw);
    if (bias != kNone) {
      Tensor gb({m});
      for (std::size_t r = 0; r < lead; ++r)
        for (int j = 0; j < m; ++j)
          gb[static_cast<std::size_t>(j)] += g[r * m + j];
      t.accumulate_grad(bias, gb);
    }
  };
  return push(std::move(out), std::move(inputs), bw, "dense");
}

// ---------------------------------------------------------------------
// elementwise

Tape::NodeId Tape::activation(NodeId input, Activation kind) {
  const Tensor& x = value(input);
  Tensor out(x.shape());
  if (kind == Activation::Sigmoid) {
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = stable_sigmoid(x[i]);
    auto bw = [input](Tape& t, NodeId self) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.value(self);
      Tensor gx(y.shape());
      for (std::size_t i = 0; i < y.numel(); ++i)
        gx[i] = g[i] * y[i] * (1.0f - y[i]);
      t.accumulate_grad(input, gx);
    };
    return push(std::move(out), {input}, bw, "sigmoid");
  }
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  auto bw = [input](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(input);
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      gx[i] = x[i] > 0.0f ? g[i] : 0.0f;
    t.accumulate_grad(input, gx);
  };
  return push(std::move(out), {input}, bw, "relu");
}

Tape::NodeId Tape::softmax_channels(NodeId logits) {
  const Tensor& x = value(logits);
  require(x.rank() == 4, "softmax_channels input must be rank 4, got " +
                             x.shape_str());
  const int n_batch = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(k >= 2, "softmax_channels needs K >= 2 classes");
  Tensor out(x.shape());
  for (int n = 0; n < n_batch; ++n) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        float mx = x.at(n, 0, y, xx);
        for (int c = 1; c < k; ++c) mx = std::max(mx, x.at(n, c, y, xx));
        double z = 0.0;
        for (int c = 0; c < k; ++c) z += std::exp(static_cast<double>(x.at(n, c, y, xx)) - mx);
        for (int c = 0; c < k; ++c)
          out.at(n, c, y, xx) = static_cast<float>(
              std::exp(static_cast<double>(x.at(n, c, y, xx)) - mx) / z);
      }
    }
  }
  auto bw = [logits, k](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor gx(y.shape());
    for (int n = 0; n < y.dim(0); ++n)
      for (int yy = 0; yy < y.dim(2); ++yy)
        for (int xx = 0; xx < y.dim(3); ++xx) {
          double dot = 0.0;
          for (int c = 0; c < k; ++c)
            dot += static_cast<double>(g.at(n, c, yy, xx)) * y.at(n, c, yy, xx);
          for (int c = 0; c < k; ++c)
            gx.at(n, c, yy, xx) = static_cast<float>(
                y.at(n, c, yy, xx) * (g.at(n, c, yy, xx) - dot));
        }
    t.accumulate_grad(logits, gx);
  };
  return push(std::move(out), {logits}, bw, "softmax_channels");
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& xa = value(a);
  const Tensor& xb = value(b);
  require(xa.same_shape(xb), "add shape mismatch: " + xa.shape_str() + " vs " +
                                 xb.shape_str());
  Tensor out(xa.shape());
  for (std::size_t i = 0; i < xa.numel(); ++i) out[i] = xa[i] + xb[i];
  auto bw = [a, b](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    t.accumulate_grad(a, g);
    t.accumulate_grad(b, g);
  };
  return push(std::move(out), {a, b}, bw, "add");
}

Tape::NodeId Tape::mul_broadcast(NodeId a, NodeId w) {
  const Tensor& xa = value(a);
  const Tensor& xw = value(w);
  require(xa.rank() == 4 && xw.rank() == 4,
          "mul_broadcast operands must be rank 4");
  const int n_batch = xa.dim(0), c = xa.dim(1), h = xa.dim(2), wd = xa.dim(3);
  enum class Mode { Full, PerChannel, PerPosition };
  Mode mode;
  if (xw.same_shape(xa)) {
    mode = Mode::Full;
  } else if (xw.dim(0) == n_batch && xw.dim(1) == c && xw.dim(2) == 1 &&
             xw.dim(3) == 1) {
    mode = Mode::PerChannel;
  } else if (xw.dim(0) == n_batch && xw.dim(1) == 1 && xw.dim(2) == h &&
             xw.dim(3) == wd) {
    mode = Mode::PerPosition;
  } else {
    throw ContractError("mul_broadcast: weight shape " + xw.shape_str() +
                        " incompatible with input " + xa.shape_str());
  }
  Tensor out(xa.shape());
  for (int n = 0; n < n_batch; ++n)
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          float wv = mode == Mode::Full        ? xw.at(n, ci, y, xx)
                     : mode == Mode::PerChannel ? xw.at(n, ci, 0, 0)
                                                : xw.at(n, 0, y, xx);
          out.at(n, ci, y, xx) = xa.at(n, ci, y, xx) * wv;
        }
  auto bw = [a, w, mode](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& xa = t.value(a);
    const Tensor& xw = t.value(w);
    Tensor ga(xa.shape());
    Tensor gw(xw.shape());
    for (int n = 0; n < xa.dim(0); ++n)
      for (int ci = 0; ci < xa.dim(1); ++ci)
        for (int y = 0; y < xa.dim(2); ++y)
          for (int xx = 0; xx < xa.dim(3); ++xx) {
            const float go = g.at(n, ci, y, xx);
            const float av = xa.at(n, ci, y, xx);
            switch (mode) {
              case Mode::Full:
                ga.at(n, ci, y, xx) = go * xw.at(n, ci, y, xx);
                gw.at(n, ci, y, xx) += go * av;
                break;
              case Mode::PerChannel:
                ga.at(n, ci, y, xx) = go * xw.at(n, ci, 0, 0);
                gw.at(n, ci, 0, 0) += go * av;
                break;
              case Mode::PerPosition:
                ga.at(n, ci, y, xx) = go * xw.at(n, 0, y, xx);
                gw.at(n, 0, y, xx) += go * av;
                break;
            }
          }
    t.accumulate_grad(a, ga);
    t.accumulate_grad(w, gw);
  };
  return push(std::move(out), {a, w}, bw, "mul_broadcast");
}

Tape::NodeId Tape::scale(NodeId a, float factor) {
  const Tensor& x = value(a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;
  auto bw = [a, factor](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * factor;
    t.accumulate_grad(a, gx);
  };
  return push(std::move(out), {a}, bw, "scale");
}

Tape::NodeId Tape::reshape(NodeId a, std::vector<int> new_shape) {
  const Tensor& x = value(a);
  Tensor out(std::move(new_shape), x.vec());
  require(out.numel() == x.numel(), "reshape numel mismatch: " + x.shape_str() +
                                        " -> " + out.shape_str());
  auto bw = [a](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    t.accumulate_grad(a, Tensor(t.value(a).shape(), g.vec()));
  };
  return push(std::move(out), {a}, bw, "reshape");
}

Tape::NodeId Tape::concat_channels(NodeId a, NodeId b) {
  const Tensor& xa = value(a);
  const Tensor& xb = value(b);
  require(xa.rank() == 4 && xb.rank() == 4, "concat_channels needs rank 4");
  require(xa.dim(0) == xb.dim(0) && xa.dim(2) == xb.dim(2) &&
              xa.dim(3) == xb.dim(3),
          "concat_channels non-channel dims differ: " + xa.shape_str() +
              " vs " + xb.shape_str());
  const int n_batch = xa.dim(0), ca = xa.dim(1), cb = xb.dim(1);
  const int h = xa.dim(2), w = xa.dim(3);
  Tensor out({n_batch, ca + cb, h, w});
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < ca; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          out.at(n, c, y, xx) = xa.at(n, c, y, xx);
    for (int c = 0; c < cb; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          out.at(n, ca + c, y, xx) = xb.at(n, c, y, xx);
  }
  auto bw = [a, b, ca, cb](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor ga(t.value(a).shape());
    Tensor gb(t.value(b).shape());
    for (int n = 0; n < g.dim(0); ++n)
      for (int y = 0; y < g.dim(2); ++y)
        for (int xx = 0; xx < g.dim(3); ++xx) {
          for (int c = 0; c < ca; ++c) ga.at(n, c, y, xx) = g.at(n, c, y, xx);
          for (int c = 0; c < cb; ++c)
            gb.at(n, c, y, xx) = g.at(n, ca + c, y, xx);
        }
    t.accumulate_grad(a, ga);
    t.accumulate_grad(b, gb);
  };
  return push(std::move(out), {a, b}, bw, "concat_channels");
}

Tape::NodeId Tape::upsample2x_nearest(NodeId input) {
  const Tensor& x = value(input);
  require(x.rank() == 4, "upsample2x input must be rank 4");
  const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n_batch, c, 2 * h, 2 * w});
  for (int n = 0; n < n_batch; ++n)
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          out.at(n, ci, y, xx) = x.at(n, ci, y / 2, xx / 2);
  auto bw = [input](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(input);
    Tensor gx(x.shape());
    for (int n = 0; n < g.dim(0); ++n)
      for (int ci = 0; ci < g.dim(1); ++ci)
        for (int y = 0; y < g.dim(2); ++y)
          for (int xx = 0; xx < g.dim(3); ++xx)
            gx.at(n, ci, y / 2, xx / 2) += g.at(n, ci, y, xx);
    t.accumulate_grad(input, gx);
  };
  return push(std::move(out), {input}, bw, "upsample2x_nearest");
}

Tape::NodeId Tape::sum_all(NodeId a) {
  const Tensor& x = value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  Tensor out({1});
  out[0] = static_cast<float>(acc);
  auto bw = [a](Tape& t, NodeId self) {
    const float go = t.grad(self)[0];
    t.accumulate_grad(a, Tensor::full(t.value(a).shape(), go));
  };
  return push(std::move(out), {a}, bw, "sum_all");
}

// ---------------------------------------------------------------------
// finite differences

GradCheckResult finite_diff_check(
    const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& f,
    const Tensor& at, float eps, double denom_floor) {
  if (!(eps > 0.0f)) throw ContractError("finite_diff_check: eps must be > 0");

  Tape tape;
  Tape::NodeId x = tape.leaf(at);
  Tape::NodeId loss = f(tape, x);
  if (tape.value(loss).numel() != 1) {
    throw ContractError("finite_diff_check: f must produce a scalar");
  }
  tape.backward(loss);
  const Tensor analytic = tape.grad(x);

  auto eval = [&](const Tensor& point) -> double {
    Tape t;
    Tape::NodeId xx = t.leaf(point);
    Tape::NodeId l = f(t, xx);
    const float v = t.value(l)[0];
    if (!std::isfinite(v)) {
      throw NumericError("finite_diff_check: non-finite function value");
    }
    return static_cast<double>(v);
  };

  GradCheckResult r;
  r.coords = at.numel();
  Tensor probe = at;
  for (std::size_t i = 0; i < at.numel(); ++i) {
    const float orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[i]);
    const double abs_err = std::abs(a - numeric);
    const double denom =
        std::max({std::abs(a), std::abs(numeric), denom_floor});
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
  }
  return r;
}

}  // namespace scattnet
