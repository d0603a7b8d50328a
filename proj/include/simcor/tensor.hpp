#pragma once

#include "simcor/core.hpp"

#include <functional>
#include <map>
#include <memory>
#include <unordered_set>

namespace simcor {

// Minimal dense-tensor autodiff: channels-first layout, double precision,
// define-by-run tape. Shapes are {C, H, W} or {C, D, H, W}; convolutions are
// stride 1 with odd kernels and same-size zero padding, pooling is kernel 2.

struct TensorNode;
using TensorNodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<TensorNodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  int numel() const {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorNodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto node = std::make_shared<TensorNode>();
    int n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor dims must be positive");
      n *= d;
    }
    node->shape = std::move(shape);
    node->data.assign(n, 0.0);
    node->requires_grad = requires_grad;
    return Tensor(node);
  }

  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (data.size() != t.node_->data.size())
      throw ShapeError("data length does not match shape");
    t.node_->data = std::move(data);
    t.check_finite("from_data");
    return t;
  }

  // custom-op factory; backward_fn sees the finished node (grad filled) and
  // must accumulate into its parents' grad buffers
  static Tensor make_op(std::vector<int> shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backward_fn) {
    Tensor t = zeros(std::move(shape));
    t.node_->data = std::move(data);
    if (t.node_->data.size() != static_cast<std::size_t>(t.node_->numel()))
      throw ShapeError("op data length does not match shape");
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      t.node_->requires_grad = true;
      for (auto& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backward_fn = std::move(backward_fn);
    }
    t.check_finite("op");
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int numel() const { return node_->numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& grad() const {
    static const std::vector<double> empty;
    return node_->grad.empty() ? empty : node_->grad;
  }
  std::vector<double>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() needs a scalar tensor");
    return node_->data[0];
  }

  TensorNodePtr node() const { return node_; }

  void check_finite(const char* where) const {
    for (double v : node_->data)
      if (!std::isfinite(v))
        throw NumericsError(std::string("non-finite value after ") + where);
  }

  // reverse-mode sweep from a scalar
  void backward() {
    if (numel() != 1) throw ShapeError("backward() starts from a scalar");
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::function<void(TensorNode*)> dfs = [&](TensorNode* n) {
      if (!n->requires_grad || visited.count(n)) return;
      visited.insert(n);
      for (const auto& p : n->parents) dfs(p.get());
      order.push_back(n);
    };
    dfs(node_.get());
    node_->grad_buffer()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode* n = *it;
      if (n->backward_fn) {
        n->grad_buffer();  // ensure allocated even if untouched
        n->backward_fn(*n);
      }
    }
  }

 private:
  TensorNodePtr node_;
};

namespace detail {

inline bool any_requires(const std::initializer_list<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

inline int spatial_rank(const Tensor& t) {
  int r = static_cast<int>(t.shape().size()) - 1;
  if (r != 2 && r != 3)
    throw ShapeError("expected a {C,H,W} or {C,D,H,W} tensor");
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), stride 1, zero padding of k/2: output
// spatial size equals input spatial size. Weight layout {O, C, k...}.

inline Tensor conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  int rank = detail::spatial_rank(x);
  if (static_cast<int>(w.shape().size()) != rank + 2)
    throw ShapeError("conv weight rank does not match input");
  if (w.shape()[1] != x.shape()[0])
    throw ShapeError("conv in_channels mismatch");
  if (b.shape() != std::vector<int>{w.shape()[0]})
    throw ShapeError("conv bias must be {out_channels}");
  for (std::size_t i = 2; i < w.shape().size(); ++i)
    if (w.shape()[i] % 2 == 0) throw ShapeError("conv kernels must be odd");

  const int out_c = w.shape()[0];
  const int in_c = x.shape()[0];

  // promote 2D to a depth-1 3D problem with a depth-1 kernel
  const bool is2d = (rank == 2);
  const int D = is2d ? 1 : x.shape()[1];
  const int H = x.shape()[is2d ? 1 : 2];
  const int W = x.shape()[is2d ? 2 : 3];
  const int KD = is2d ? 1 : w.shape()[2];
  const int KH = w.shape()[is2d ? 2 : 3];
  const int KW = w.shape()[is2d ? 3 : 4];
  const int PD = KD / 2, PH = KH / 2, PW = KW / 2;

  std::vector<int> out_shape = x.shape();
  out_shape[0] = out_c;
  std::vector<double> out(static_cast<std::size_t>(out_c) * D * H * W);

  const double* xd = x.data().data();
  const double* wd = w.data().data();
  const double* bd = b.data().data();

  auto run = [&](const double* in_base, const double* w_base, double* out_base,
                 bool add_into) {
    // generic shift-and-accumulate: out[o,z,y,x] += w * in[c,z+dz,y+dy,x+dx]
    for (int o = 0; o < out_c; ++o) {
      double* out_o = out_base + static_cast<std::size_t>(o) * D * H * W;
      if (!add_into)
        for (int i = 0; i < D * H * W; ++i) out_o[i] = bd[o];
      for (int c = 0; c < in_c; ++c) {
        const double* in_cb = in_base + static_cast<std::size_t>(c) * D * H * W;
        const double* w_oc =
            w_base + (static_cast<std::size_t>(o) * in_c + c) * KD * KH * KW;
        for (int kz = 0; kz < KD; ++kz)
          for (int ky = 0; ky < KH; ++ky)
            for (int kx = 0; kx < KW; ++kx) {
              double wv = w_oc[(kz * KH + ky) * KW + kx];
              if (wv == 0.0) continue;
              int dz = kz - PD, dy = ky - PH, dx = kx - PW;
              int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
              int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
              int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
              for (int z = z0; z < z1; ++z)
                for (int y = y0; y < y1; ++y) {
                  double* orow = out_o + (z * H + y) * W;
                  const double* irow =
                      in_cb + ((z + dz) * H + (y + dy)) * W + dx;
                  for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                }
            }
      }
    }
  };
  run(xd, wd, out.data(), false);

  auto backward = [=](TensorNode& self) {
    TensorNode& xn = *self.parents[0];
    TensorNode& wn = *self.parents[1];
    TensorNode& bn = *self.parents[2];
    const double* go = self.grad.data();

    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer();
      for (int o = 0; o < out_c; ++o) {
        const double* go_o = go + static_cast<std::size_t>(o) * D * H * W;
        double sum = 0.0;
        for (int i = 0; i < D * H * W; ++i) sum += go_o[i];
        gb[o] += sum;
      }
    }
    if (wn.requires_grad) {
      auto& gw = wn.grad_buffer();
      const double* in_base = xn.data.data();
      for (int o = 0; o < out_c; ++o) {
        const double* go_o = go + static_cast<std::size_t>(o) * D * H * W;
        for (int c = 0; c < in_c; ++c) {
          const double* in_cb =
              in_base + static_cast<std::size_t>(c) * D * H * W;
          double* gw_oc =
              gw.data() + (static_cast<std::size_t>(o) * in_c + c) * KD * KH * KW;
          for (int kz = 0; kz < KD; ++kz)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                int dz = kz - PD, dy = ky - PH, dx = kx - PW;
                int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                double sum = 0.0;
                for (int z = z0; z < z1; ++z)
                  for (int y = y0; y < y1; ++y) {
                    const double* grow = go_o + (z * H + y) * W;
                    const double* irow =
                        in_cb + ((z + dz) * H + (y + dy)) * W + dx;
                    for (int x = x0; x < x1; ++x) sum += grow[x] * irow[x];
                  }
                gw_oc[(kz * KH + ky) * KW + kx] += sum;
              }
        }
      }
    }
    if (xn.requires_grad) {
      auto& gx = xn.grad_buffer();
      const double* w_base = wn.data.data();
      for (int o = 0; o < out_c; ++o) {
        const double* go_o = go + static_cast<std::size_t>(o) * D * H * W;
        for (int c = 0; c < in_c; ++c) {
          double* gx_cb = gx.data() + static_cast<std::size_t>(c) * D * H * W;
          const double* w_oc =
              w_base + (static_cast<std::size_t>(o) * in_c + c) * KD * KH * KW;
          for (int kz = 0; kz < KD; ++kz)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                double wv = w_oc[(kz * KH + ky) * KW + kx];
                if (wv == 0.0) continue;
                int dz = kz - PD, dy = ky - PH, dx = kx - PW;
                int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                for (int z = z0; z < z1; ++z)
                  for (int y = y0; y < y1; ++y) {
                    const double* grow = go_o + (z * H + y) * W;
                    double* xrow = gx_cb + ((z + dz) * H + (y + dy)) * W + dx;
                    for (int x = x0; x < x1; ++x) xrow[x] += wv * grow[x];
                  }
              }
        }
      }
    }
  };
  return Tensor::make_op(std::move(out_shape), std::move(out), {x, w, b},
                         backward);
}

// ---------------------------------------------------------------------------
// Max pooling, kernel 2, non-overlapping; odd trailing dims get a final
// window of one. Backward routes to the argmax, first index on ties.

inline Tensor maxpool(const Tensor& x) {
  int rank = detail::spatial_rank(x);
  const bool is2d = (rank == 2);
  const int C = x.shape()[0];
  const int D = is2d ? 1 : x.shape()[1];
  const int H = x.shape()[is2d ? 1 : 2];
  const int W = x.shape()[is2d ? 2 : 3];
  const int OD = is2d ? 1 : (D + 1) / 2;
  const int OH = (H + 1) / 2;
  const int OW = (W + 1) / 2;

  std::vector<int> out_shape =
      is2d ? std::vector<int>{C, OH, OW} : std::vector<int>{C, OD, OH, OW};
  std::vector<double> out(static_cast<std::size_t>(C) * OD * OH * OW);
  auto argmax = std::make_shared<std::vector<int>>(out.size());

  const double* xd = x.data().data();
  for (int c = 0; c < C; ++c)
    for (int oz = 0; oz < OD; ++oz)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          int best_idx = -1;
          for (int dz = 0; dz < (is2d ? 1 : 2); ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                int z = 2 * oz + dz, y = 2 * oy + dy, xx = 2 * ox + dx;
                if (z >= D || y >= H || xx >= W) continue;
                int idx = ((c * D + z) * H + y) * W + xx;
                if (xd[idx] > best) {
                  best = xd[idx];
                  best_idx = idx;
                }
              }
          int oidx = ((c * OD + oz) * OH + oy) * OW + ox;
          out[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }

  auto backward = [argmax](TensorNode& self) {
    TensorNode& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      gx[(*argmax)[i]] += self.grad[i];
  };
  return Tensor::make_op(std::move(out_shape), std::move(out), {x}, backward);
}

// Nearest-neighbor upsampling by 2 on every spatial dim.
inline Tensor upsample_nearest(const Tensor& x) {
  int rank = detail::spatial_rank(x);
  const bool is2d = (rank == 2);
  const int C = x.shape()[0];
  const int D = is2d ? 1 : x.shape()[1];
  const int H = x.shape()[is2d ? 1 : 2];
  const int W = x.shape()[is2d ? 2 : 3];
  const int OD = is2d ? 1 : 2 * D, OH = 2 * H, OW = 2 * W;

  std::vector<int> out_shape =
      is2d ? std::vector<int>{C, OH, OW} : std::vector<int>{C, OD, OH, OW};
  std::vector<double> out(static_cast<std::size_t>(C) * OD * OH * OW);
  const double* xd = x.data().data();
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < OD; ++z)
      for (int y = 0; y < OH; ++y)
        for (int xx = 0; xx < OW; ++xx)
          out[((c * OD + z) * OH + y) * OW + xx] =
              xd[((c * D + (is2d ? 0 : z / 2)) * H + y / 2) * W + xx / 2];

  auto backward = [=](TensorNode& self) {
    TensorNode& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int z = 0; z < OD; ++z)
        for (int y = 0; y < OH; ++y)
          for (int xx = 0; xx < OW; ++xx)
            gx[((c * D + (is2d ? 0 : z / 2)) * H + y / 2) * W + xx / 2] +=
                self.grad[((c * OD + z) * OH + y) * OW + xx];
  };
  return Tensor::make_op(std::move(out_shape), std::move(out), {x}, backward);
}

// ---------------------------------------------------------------------------
// Elementwise and channel ops

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto backward = [](TensorNode& self) {
    TensorNode& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn.data[i] > 0.0) gx[i] += self.grad[i];
  };
  return Tensor::make_op(x.shape(), std::move(out), {x}, backward);
}

inline Tensor tanh_activation(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  auto backward = [](TensorNode& self) {
    TensorNode& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      gx[i] += (1.0 - self.data[i] * self.data[i]) * self.grad[i];
  };
  return Tensor::make_op(x.shape(), std::move(out), {x}, backward);
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] + b.data()[i];
  auto backward = [](TensorNode& self) {
    for (int p = 0; p < 2; ++p) {
      TensorNode& n = *self.parents[p];
      if (!n.requires_grad) continue;
      auto& g = n.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  };
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, backward);
}

// out[c,...] = x[c,...] * s[c]; s is a constant per-channel scale
inline Tensor scale_per_channel(const Tensor& x, std::vector<double> scales) {
  if (static_cast<int>(scales.size()) != x.shape()[0])
    throw ShapeError("scale_per_channel: one scale per channel");
  const int C = x.shape()[0];
  const int spatial = x.numel() / C;
  std::vector<double> out(x.data().size());
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < spatial; ++i)
      out[c * spatial + i] = x.data()[c * spatial + i] * scales[c];
  auto scales_copy = std::make_shared<std::vector<double>>(std::move(scales));
  auto backward = [scales_copy, C, spatial](TensorNode& self) {
    TensorNode& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& gx = xn.grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < spatial; ++i)
        gx[c * spatial + i] += self.grad[c * spatial + i] * (*scales_copy)[c];
  };
  return Tensor::make_op(x.shape(), std::move(out), {x}, backward);
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != b.shape().size())
    throw ShapeError("concat: rank mismatch");
  for (std::size_t i = 1; i < a.shape().size(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw ShapeError("concat: spatial dims mismatch");
  std::vector<int> out_shape = a.shape();
  out_shape[0] += b.shape()[0];
  std::vector<double> out;
  out.reserve(a.data().size() + b.data().size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  std::size_t split = a.data().size();
  auto backward = [split](TensorNode& self) {
    TensorNode& an = *self.parents[0];
    TensorNode& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& ga = an.grad_buffer();
      for (std::size_t i = 0; i < split; ++i) ga[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer();
      for (std::size_t i = split; i < self.grad.size(); ++i)
        gb[i - split] += self.grad[i];
    }
  };
  return Tensor::make_op(std::move(out_shape), std::move(out), {a, b},
                         backward);
}

// Constant tensor broadcasting per-channel values across the spatial dims of
// a reference tensor (the bottleneck kinematics insertion).
inline Tensor broadcast_channels(const std::vector<double>& values,
                                 const Tensor& reference) {
  std::vector<int> shape = reference.shape();
  shape[0] = static_cast<int>(values.size());
  int spatial = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) spatial *= shape[i];
  std::vector<double> data(values.size() * spatial);
  for (std::size_t c = 0; c < values.size(); ++c)
    std::fill(data.begin() + c * spatial, data.begin() + (c + 1) * spatial,
              values[c]);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// Parameters and Adam

struct ParamSet {
  std::map<std::string, Tensor> tensors;  // ordered: deterministic walks

  void zero_grad() {
    for (auto& [name, t] : tensors) t.zero_grad();
  }
};

inline Tensor glorot_conv_weight(std::vector<int> shape, RngStream& rng) {
  int fan_in = 1, fan_out = 1;
  int kernel = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) kernel *= shape[i];
  fan_out = shape[0] * kernel;
  fan_in = shape[1] * kernel;
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(shape, true);
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  long t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

inline void adam_step(ParamSet& params, AdamState& state,
                      const AdamConfig& cfg) {
  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, tensor] : params.tensors) {
    if (tensor.grad().empty()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(tensor.data().size(), 0.0);
    if (v.empty()) v.assign(tensor.data().size(), 0.0);
    const auto& g = tensor.grad();
    auto& x = tensor.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      x[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Weight file: magic SCNN1, per-parameter records of
// (u32 name length, name bytes, u32 rank, u32 dims..., f64 data...), all
// little-endian.

inline void save_weights(const ParamSet& params,
                         const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open weights file: " + path.string());
  out.write("SCNN1", 5);
  auto write_u32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  for (const auto& [name, tensor] : params.tensors) {
    write_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(static_cast<std::uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape()) write_u32(static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.data().size() * 8));
  }
}

inline ParamSet load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights file: " + path.string());
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::string(magic, 5) != "SCNN1")
    throw IoError("bad magic; not a SCNN1 weights file: " + path.string());
  auto read_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  ParamSet params;
  while (true) {
    std::uint32_t name_len = read_u32();
    if (in.eof()) break;
    if (!in || name_len > 4096)
      throw IoError("corrupt weights file: " + path.string());
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rank = read_u32();
    if (rank > 8) throw IoError("corrupt weights file: " + path.string());
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(read_u32());
      n *= static_cast<std::size_t>(d);
    }
    std::vector<double> data(n);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * 8));
    if (!in) throw IoError("weights file truncated: " + path.string());
    params.tensors.emplace(name,
                           Tensor::from_data(shape, std::move(data), true));
  }
  return params;
}

}  // namespace simcor
