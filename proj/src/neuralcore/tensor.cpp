#include "etiobench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace etio::nn {

using detail::Node;

namespace {

thread_local bool t_grad_enabled = true;
thread_local KinkTrace* t_kink_trace = nullptr;

void trace_kink(bool positive_side) {
  if (t_kink_trace) t_kink_trace->record(positive_side);
}

std::shared_ptr<Node> make_node(Shape shape) {
  auto n = std::make_shared<Node>();
  n->value.assign(shape_size(shape), 0.0);
  n->shape = std::move(shape);
  return n;
}

// Attaches inputs and a backprop rule when any input needs a gradient.
Tensor record(std::shared_ptr<Node> out, std::vector<std::shared_ptr<Node>> inputs,
              std::function<void(Node&)> rule) {
  const bool needs = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const auto& n) {
                       return n && (n->requires_grad || n->backprop);
                     });
  if (needs) {
    out->inputs = std::move(inputs);
    out->backprop = std::move(rule);
  }
  return Tensor(std::move(out));
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && (n->requires_grad || n->backprop); }

void require(bool ok, const std::string& what) {
  if (!ok) throw NnError(what);
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw NnError("tensor extents must be positive");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_size(shape))
    throw NnError("tensor value count " + std::to_string(values.size()) + " does not match shape " + shape_string(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (size() != 1) throw NnError("item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

KinkTrace::KinkTrace() : previous_(t_kink_trace) { t_kink_trace = this; }
KinkTrace::~KinkTrace() { t_kink_trace = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.has_graph())
    throw NnError("backward without forward: tensor has no recorded graph");
  if (loss.size() != 1) throw NnError("backward needs a scalar loss, got " + shape_string(loss.shape()));

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->backprop && visited.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (!n.grad.empty()) n.backprop(n);
  }
  for (Node* n : order) {
    n->backprop = nullptr;
    n->inputs.clear();
  }
}

namespace {

// AVX2 clones with runtime dispatch. No FMA, so every clone rounds identically.
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define ETIO_KERNEL __attribute__((target_clones("avx2", "default")))
#else
#define ETIO_KERNEL
#endif

// y += a * x over n contiguous entries.
ETIO_KERNEL void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Four fixed interleaved partial sums: vectorizes and stays deterministic.
ETIO_KERNEL double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Four rows of y += a[r] * x, sharing each load of x.
ETIO_KERNEL void axpy4(const double* a, const double* __restrict x, double* __restrict y0,
                       double* __restrict y1, double* __restrict y2, double* __restrict y3, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y0[i] += a[0] * x[i];
    y1[i] += a[1] * x[i];
    y2[i] += a[2] * x[i];
    y3[i] += a[3] * x[i];
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, Triple stride, Triple pad) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require(is.size() == 4, "conv3d: input must be [C,Z,Y,X], got " + shape_string(is));
  require(ws.size() == 5, "conv3d: weight must be [Co,Ci,Kz,Ky,Kx], got " + shape_string(ws));
  require(ws[1] == is[0], "conv3d: channel mismatch " + shape_string(is) + " vs " + shape_string(ws));
  require(!bias.defined() || (bias.shape().size() == 1 && bias.dim(0) == ws[0]), "conv3d: bias shape mismatch");

  const int ci_n = is[0], z_n = is[1], y_n = is[2], x_n = is[3];
  const int co_n = ws[0], kz_n = ws[2], ky_n = ws[3], kx_n = ws[4];
  const int oz_n = (z_n + 2 * pad[0] - kz_n) / stride[0] + 1;
  const int oy_n = (y_n + 2 * pad[1] - ky_n) / stride[1] + 1;
  const int ox_n = (x_n + 2 * pad[2] - kx_n) / stride[2] + 1;
  require(oz_n > 0 && oy_n > 0 && ox_n > 0, "conv3d: kernel larger than padded input");

  auto out = make_node({co_n, oz_n, oy_n, ox_n});
  const std::size_t taps = static_cast<std::size_t>(kz_n) * ky_n * kx_n;
  const std::size_t k_n = ci_n * taps;
  const std::size_t p_n = static_cast<std::size_t>(oz_n) * oy_n * ox_n;

  // Column matrix [k_n, p_n]: row k holds input tap k for every output position,
  // zero where the tap falls into padding. `runs` visits the contiguous-in-output
  // segments of each row that read real input.
  auto runs = [=](auto&& fn) {
    for (int ci = 0; ci < ci_n; ++ci)
      for (int kz = 0; kz < kz_n; ++kz)
        for (int ky = 0; ky < ky_n; ++ky)
          for (int kx = 0; kx < kx_n; ++kx) {
            const std::size_t k = ((static_cast<std::size_t>(ci) * kz_n + kz) * ky_n + ky) * kx_n + kx;
            int ox_lo = 0;
            while (ox_lo < ox_n && ox_lo * stride[2] - pad[2] + kx < 0) ++ox_lo;
            int ox_hi = ox_n;
            while (ox_hi > ox_lo && (ox_hi - 1) * stride[2] - pad[2] + kx >= x_n) --ox_hi;
            if (ox_lo >= ox_hi) continue;
            for (int oz = 0; oz < oz_n; ++oz) {
              const int iz = oz * stride[0] - pad[0] + kz;
              if (iz < 0 || iz >= z_n) continue;
              for (int oy = 0; oy < oy_n; ++oy) {
                const int iy = oy * stride[1] - pad[1] + ky;
                if (iy < 0 || iy >= y_n) continue;
                const std::size_t src = ((static_cast<std::size_t>(ci) * z_n + iz) * y_n + iy) * x_n +
                                        (ox_lo * stride[2] - pad[2] + kx);
                const std::size_t dst = k * p_n + (static_cast<std::size_t>(oz) * oy_n + oy) * ox_n + ox_lo;
                fn(dst, src, ox_hi - ox_lo);
              }
            }
          }
  };
  const int sx = stride[2];

  std::vector<double> col(k_n * p_n, 0.0);
  {
    const double* x = input.values().data();
    runs([&](std::size_t dst, std::size_t src, int len) {
      for (int i = 0; i < len; ++i) col[dst + i] = x[src + static_cast<std::size_t>(i) * sx];
    });
    const double* w = weight.values().data();
    double* y = out->value.data();
    for (int co = 0; co < co_n; ++co) std::fill_n(y + co * p_n, p_n, bias.defined() ? bias.values()[co] : 0.0);
    int co = 0;
    for (; co + 4 <= co_n; co += 4)
      for (std::size_t k = 0; k < k_n; ++k) {
        const double a[4] = {w[co * k_n + k], w[(co + 1) * k_n + k], w[(co + 2) * k_n + k], w[(co + 3) * k_n + k]};
        axpy4(a, col.data() + k * p_n, y + co * p_n, y + (co + 1) * p_n, y + (co + 2) * p_n, y + (co + 3) * p_n, p_n);
      }
    for (; co < co_n; ++co)
      for (std::size_t k = 0; k < k_n; ++k) axpy(w[co * k_n + k], col.data() + k * p_n, y + co * p_n, p_n);
  }

  std::vector<std::shared_ptr<Node>> inputs{input.node(), weight.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  return record(out, inputs,
                [=, col = std::make_shared<std::vector<double>>(std::move(col))](Node& self) {
    const auto& xin = self.inputs[0];
    const auto& win = self.inputs[1];
    const double* gy = self.grad.data();
    const double* w = win->value.data();
    if (wants_grad(win)) {
      double* gw = win->grad_buffer().data();
      for (std::size_t k = 0; k < k_n; ++k) {
        const double* ck = col->data() + k * p_n;
        for (int co = 0; co < co_n; ++co) gw[co * k_n + k] += dot(ck, gy + co * p_n, p_n);
      }
    }
    if (wants_grad(xin)) {
      std::vector<double> gcol(k_n * p_n, 0.0);
      for (std::size_t k = 0; k < k_n; ++k)
        for (int co = 0; co < co_n; ++co) axpy(w[co * k_n + k], gy + co * p_n, gcol.data() + k * p_n, p_n);
      double* gx = xin->grad_buffer().data();
      runs([&](std::size_t dst, std::size_t src, int len) {
        for (int i = 0; i < len; ++i) gx[src + static_cast<std::size_t>(i) * sx] += gcol[dst + i];
      });
    }
    if (self.inputs.size() > 2 && wants_grad(self.inputs[2])) {
      double* gb = self.inputs[2]->grad_buffer().data();
      for (int co = 0; co < co_n; ++co) {
        double acc = 0.0;
        for (std::size_t i = 0; i < p_n; ++i) acc += gy[co * p_n + i];
        gb[co] += acc;
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  auto out = make_node(x.shape());
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out->value[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    trace_kink(xv[i] > 0.0);
  }
  return record(out, {x.node()}, [](Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.shape().size() >= 2, "global_avg_pool: need [C, ...] input");
  const int c_n = x.dim(0);
  const std::size_t plane = x.size() / c_n;
  auto out = make_node({c_n});
  const auto xv = x.values();
  for (int c = 0; c < c_n; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[c * plane + i];
    out->value[c] = acc / plane;
  }
  return record(out, {x.node()}, [c_n, plane](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int c = 0; c < c_n; ++c) {
      const double share = self.grad[c] / plane;
      for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] += share;
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == b.shape().size() &&
              std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1),
          "concat: trailing extents differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Shape s = a.shape();
  s[0] += b.dim(0);
  auto out = make_node(s);
  std::copy(a.values().begin(), a.values().end(), out->value.begin());
  std::copy(b.values().begin(), b.values().end(), out->value.begin() + static_cast<std::ptrdiff_t>(a.size()));
  const std::size_t split = a.size();
  return record(out, {a.node(), b.node()}, [split](Node& self) {
    if (wants_grad(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < split; ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
    }
  });
}

Tensor take_slices(const Tensor& x, int start, int step) {
  require(x.shape().size() == 4, "take_slices: need [C,Z,Y,X] input");
  require(step >= 1 && start >= 0 && start < x.dim(1), "take_slices: bad start/step");
  const int c_n = x.dim(0), z_n = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const int oz_n = (z_n - start + step - 1) / step;
  auto out = make_node({c_n, oz_n, x.dim(2), x.dim(3)});
  auto map = [=](int c, int oz) { return std::pair{(static_cast<std::size_t>(c) * z_n + start + oz * step) * plane,
                                                   (static_cast<std::size_t>(c) * oz_n + oz) * plane}; };
  const auto xv = x.values();
  for (int c = 0; c < c_n; ++c)
    for (int oz = 0; oz < oz_n; ++oz) {
      const auto [src, dst] = map(c, oz);
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(src), plane, out->value.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  return record(out, {x.node()}, [=](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int c = 0; c < c_n; ++c)
      for (int oz = 0; oz < oz_n; ++oz) {
        const auto [src, dst] = map(c, oz);
        for (std::size_t i = 0; i < plane; ++i) g[src + i] += self.grad[dst + i];
      }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.shape().size() == 1 && weight.shape().size() == 2 && weight.dim(1) == x.dim(0),
          "linear: shape mismatch " + shape_string(x.shape()) + " x " + shape_string(weight.shape()));
  require(bias.shape().size() == 1 && bias.dim(0) == weight.dim(0), "linear: bias shape mismatch");
  const int out_n = weight.dim(0), in_n = weight.dim(1);
  auto out = make_node({out_n});
  const auto xv = x.values(), wv = weight.values(), bv = bias.values();
  for (int o = 0; o < out_n; ++o) {
    double acc = bv[o];
    for (int i = 0; i < in_n; ++i) acc += wv[static_cast<std::size_t>(o) * in_n + i] * xv[i];
    out->value[o] = acc;
  }
  return record(out, {x.node(), weight.node(), bias.node()}, [out_n, in_n](Node& self) {
    const auto& xn = self.inputs[0];
    const auto& wn = self.inputs[1];
    const auto& bn = self.inputs[2];
    if (wants_grad(xn)) {
      auto& g = xn->grad_buffer();
      for (int o = 0; o < out_n; ++o)
        for (int i = 0; i < in_n; ++i) g[i] += wn->value[static_cast<std::size_t>(o) * in_n + i] * self.grad[o];
    }
    if (wants_grad(wn)) {
      auto& g = wn->grad_buffer();
      for (int o = 0; o < out_n; ++o)
        for (int i = 0; i < in_n; ++i) g[static_cast<std::size_t>(o) * in_n + i] += xn->value[i] * self.grad[o];
    }
    if (wants_grad(bn)) {
      auto& g = bn->grad_buffer();
      for (int o = 0; o < out_n; ++o) g[o] += self.grad[o];
    }
  });
}

Tensor softmax(const Tensor& logits) {
  require(logits.shape().size() == 1, "softmax: need a vector");
  const auto z = logits.values();
  auto out = make_node(logits.shape());
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i] - m);
  for (std::size_t i = 0; i < z.size(); ++i)
    out->value[i] = std::exp(z[i] - m) / total;
  return record(out, {logits.node()}, [](Node& self) {
    // dL/dz_i = p_i (g_i - sum_j p_j g_j)
    double dot = 0.0;
    for (std::size_t j = 0; j < self.value.size(); ++j) dot += self.value[j] * self.grad[j];
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.value[i] * (self.grad[i] - dot);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch");
  auto out = make_node(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out->value[i] = a.values()[i] + b.values()[i];
  return record(out, {a.node(), b.node()}, [](Node& self) {
    for (const auto& in : self.inputs) {
      if (!wants_grad(in)) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto out = make_node(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out->value[i] = a.values()[i] * factor;
  return record(out, {a.node()}, [factor](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor sum(std::span<const Tensor> scalars) {
  auto out = make_node({1});
  double acc = 0.0;
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& s : scalars) {
    require(s.size() == 1, "sum: expects scalar tensors");
    acc += s.values()[0];
    inputs.push_back(s.node());
  }
  out->value[0] = acc;
  return record(out, std::move(inputs), [](Node& self) {
    for (const auto& in : self.inputs)
      if (wants_grad(in)) in->grad_buffer()[0] += self.grad[0];
  });
}

Tensor weighted_neg_log(const Tensor& probs, int index, double weight, double floor) {
  require(probs.shape().size() == 1 && index >= 0 && index < probs.dim(0), "weighted_neg_log: bad index");
  const double p = probs.values()[index];
  const bool clamped = !(p > floor);
  auto out = make_node({1});
  out->value[0] = -weight * std::log(clamped ? floor : p);
  return record(out, {probs.node()}, [index, weight, clamped](Node& self) {
    if (clamped) return;
    auto& in = *self.inputs[0];
    in.grad_buffer()[index] += -weight / in.value[index] * self.grad[0];
  });
}

Tensor triplet_hinge(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin) {
  require(anchor.shape().size() == 1 && anchor.shape() == positive.shape() && anchor.shape() == negative.shape(),
          "triplet: embedding length mismatch");
  const auto a = anchor.values(), p = positive.values(), n = negative.values();
  double dap = 0.0, dan = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dap += (a[i] - p[i]) * (a[i] - p[i]);
    dan += (a[i] - n[i]) * (a[i] - n[i]);
  }
  const double hinge = dap - dan + margin;
  auto out = make_node({1});
  out->value[0] = hinge > 0.0 ? hinge : 0.0;
  const bool active = hinge > 0.0;
  trace_kink(active);
  return record(out, {anchor.node(), positive.node(), negative.node()}, [active](Node& self) {
    if (!active) return;
    const double g = self.grad[0];
    const auto& an = self.inputs[0]->value;
    const auto& pn = self.inputs[1]->value;
    const auto& nn = self.inputs[2]->value;
    // d/da = 2(n - p), d/dp = 2(p - a), d/dn = 2(a - n)
    if (wants_grad(self.inputs[0])) {
      auto& ga = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g * (nn[i] - pn[i]);
    }
    if (wants_grad(self.inputs[1])) {
      auto& gp = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += 2.0 * g * (pn[i] - an[i]);
    }
    if (wants_grad(self.inputs[2])) {
      auto& gn = self.inputs[2]->grad_buffer();
      for (std::size_t i = 0; i < gn.size(); ++i) gn[i] += 2.0 * g * (an[i] - nn[i]);
    }
  });
}

}  // namespace etio::nn
