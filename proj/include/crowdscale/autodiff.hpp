#pragma once

// Tape-based reverse-mode automatic differentiation over Tensor4.
//
// A Graph records every executed op as a node holding its output value, the
// indices of its inputs, a forward closure (so the tape can be replayed after
// parameters change) and a backward closure that pushes the node's gradient
// into its inputs. Node indices are a topological order by construction;
// backward walks them in reverse.

#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crowdscale/error.hpp"
#include "crowdscale/kernels.hpp"
#include "crowdscale/tensor.hpp"

namespace crowdscale {

template <typename T>
class Graph;

// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor4<T>& value() const;
  const std::vector<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph != nullptr; }
};

template <typename T>
class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor4<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Tensor4<T>* param = nullptr;
    std::function<void(Graph&, Node&)> forward;
    std::function<void(Graph&, Node&)> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Input that never receives gradients.
  Var<T> constant(Tensor4<T> value) { return leaf("constant", std::move(value), false); }

  // Input whose gradient is kept on the node (read back with Var::grad).
  Var<T> input(Tensor4<T> value, bool requires_grad = true) { return leaf("input", std::move(value), requires_grad); }

  // Binds an external parameter tensor. The value is re-read on replay and
  // backward accumulates into param.grad().
  Var<T> parameter(Tensor4<T>& param) {
    Node node;
    node.op = "parameter";
    node.value = param;
    node.value.drop_grad();
    node.requires_grad = true;
    node.param = &param;
    node.forward = [](Graph&, Node& self) {
      self.value = *self.param;
      self.value.drop_grad();
    };
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  // Appends an op node. `forward` is run immediately to produce the value.
  Var<T> record(std::string op, std::vector<Var<T>> inputs, std::function<void(Graph&, Node&)> forward,
                std::function<void(Graph&, Node&)> backward) {
    Node node;
    node.op = std::move(op);
    for (const Var<T>& v : inputs) {
      if (v.graph != this) throw UsageError("op '" + node.op + "' mixes variables from different graphs");
      node.inputs.push_back(v.id);
      node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
    }
    node.forward = std::move(forward);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    Node& added = nodes_.back();
    added.forward(*this, added);
    return Var<T>{this, nodes_.size() - 1};
  }

  Node& node(std::size_t id) { return nodes_.at(id); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const Tensor4<T>& value(std::size_t id) const { return nodes_[id].value; }

  // Gradient buffer of node `id`, allocated on first access.
  std::vector<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
    return n.grad;
  }

  // Populates gradients of every requires_grad node reachable from `loss`.
  void backward(Var<T> loss) {
    if (loss.graph != this) throw UsageError("backward: loss belongs to another graph");
    if (nodes_[loss.id].value.size() != 1) {
      throw UsageError("backward needs a scalar loss, got shape " + to_string(nodes_[loss.id].value.shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    grad_buffer(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n);
      if (n.param != nullptr) {
        std::vector<T>& pg = n.param->grad();
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  // Re-executes every node in order.
  void replay() {
    for (Node& n : nodes_) {
      if (n.forward) n.forward(*this, n);
    }
  }

  // Description of the first node holding a non-finite value, if any.
  std::optional<std::string> first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].value.all_finite()) {
        return "node " + std::to_string(i) + " (" + nodes_[i].op + ", shape " + to_string(nodes_[i].value.shape()) +
               ")";
      }
    }
    return std::nullopt;
  }

 private:
  Var<T> leaf(std::string op, Tensor4<T> value, bool requires_grad) {
    Node node;
    node.op = std::move(op);
    node.value = std::move(value);
    node.value.drop_grad();
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable addresses for Var::value() references
};

template <typename T>
const Tensor4<T>& Var<T>::value() const {
  return graph->value(id);
}

template <typename T>
const std::vector<T>& Var<T>::grad() const {
  return graph->node(id).grad;
}

// ---------------------------------------------------------------------------
// Differentiable ops

namespace ad {

namespace detail {

template <typename T>
bool wants_grad(Graph<T>& g, std::size_t id) {
  return g.node(id).requires_grad;
}

}  // namespace detail

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t dilation, std::size_t padding) {
  return x.graph->record(
      "conv2d", {x, weight, bias},
      [dilation, padding](Graph<T>& g, typename Graph<T>::Node& self) {
        self.value = kernels::conv2d_forward(g.value(self.inputs[0]), g.value(self.inputs[1]),
                                             g.value(self.inputs[2]), dilation, padding);
      },
      [dilation, padding](Graph<T>& g, typename Graph<T>::Node& self) {
        const auto [xi, wi, bi] = std::tuple{self.inputs[0], self.inputs[1], self.inputs[2]};
        std::vector<T>* gx = detail::wants_grad(g, xi) ? &g.grad_buffer(xi) : nullptr;
        std::vector<T>* gw = detail::wants_grad(g, wi) ? &g.grad_buffer(wi) : nullptr;
        std::vector<T>* gb = detail::wants_grad(g, bi) ? &g.grad_buffer(bi) : nullptr;
        Tensor4<T> gy(self.value.shape(), self.grad);
        kernels::conv2d_backward(g.value(xi), g.value(wi), gy, dilation, padding, gx, gw, gb);
      });
}

// Convolution with dilation*(k-1)/2 zero padding; spatial dims preserved.
template <typename T>
Var<T> conv2d_same(Var<T> x, Var<T> weight, Var<T> bias, std::size_t dilation) {
  return conv2d(x, weight, bias, dilation, kernels::same_padding(weight.value().h(), dilation));
}

template <typename T>
Var<T> max_pool2(Var<T> x) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  return x.graph->record(
      "max_pool2", {x},
      [argmax](Graph<T>& g, typename Graph<T>::Node& self) {
        self.value = kernels::max_pool2_forward(g.value(self.inputs[0]), *argmax);
      },
      [argmax](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t xi = self.inputs[0];
        if (!detail::wants_grad(g, xi)) return;
        kernels::max_pool2_backward(g.value(xi).shape(), *argmax, self.grad, g.grad_buffer(xi));
      });
}

template <typename T>
Var<T> adaptive_avg_pool(Var<T> x, std::size_t k) {
  return x.graph->record(
      "adaptive_avg_pool", {x},
      [k](Graph<T>& g, typename Graph<T>::Node& self) {
        self.value = kernels::adaptive_avg_pool_forward(g.value(self.inputs[0]), k);
      },
      [k](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t xi = self.inputs[0];
        if (!detail::wants_grad(g, xi)) return;
        kernels::adaptive_avg_pool_backward(g.value(xi).shape(), k, self.grad, g.grad_buffer(xi));
      });
}

template <typename T>
Var<T> bilinear_upsample(Var<T> x, std::size_t out_h, std::size_t out_w) {
  return x.graph->record(
      "bilinear_upsample", {x},
      [out_h, out_w](Graph<T>& g, typename Graph<T>::Node& self) {
        self.value = kernels::bilinear_upsample_forward(g.value(self.inputs[0]), out_h, out_w);
      },
      [out_h, out_w](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t xi = self.inputs[0];
        if (!detail::wants_grad(g, xi)) return;
        kernels::bilinear_upsample_backward(g.value(xi).shape(), out_h, out_w, self.grad, g.grad_buffer(xi));
      });
}

template <typename T>
Var<T> activation(Var<T> x, kernels::Activation kind) {
  const bool is_relu = kind == kernels::Activation::relu;
  return x.graph->record(
      is_relu ? "relu" : "sigmoid", {x},
      [is_relu](Graph<T>& g, typename Graph<T>::Node& self) {
        const Tensor4<T>& in = g.value(self.inputs[0]);
        self.value = Tensor4<T>(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) {
          self.value[i] = is_relu ? (in[i] < T{0} ? T{0} : in[i]) : kernels::sigmoid(in[i]);
        }
      },
      [is_relu](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t xi = self.inputs[0];
        if (!detail::wants_grad(g, xi)) return;
        std::vector<T>& gx = g.grad_buffer(xi);
        const Tensor4<T>& in = g.value(xi);
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (is_relu) {
            if (in[i] > T{0}) gx[i] += self.grad[i];
          } else {
            const T s = self.value[i];
            gx[i] += self.grad[i] * s * (T{1} - s);
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return activation(x, kernels::Activation::relu);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return activation(x, kernels::Activation::sigmoid);
}

// a (op) b with b either the same shape as a or a single-channel map
// broadcast over a's channels. Division computes a / (b + 1e-8).
template <typename T>
Var<T> elementwise(Var<T> a, Var<T> b, kernels::Binary kind) {
  if (!kernels::broadcastable(a.shape(), b.shape())) {
    throw DimensionError("elementwise: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " are not broadcastable");
  }
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  const T eps = static_cast<T>(kernels::kDivEpsilon);
  // b index for flat a index i.
  auto b_index = [](const Shape& as, const Shape& bs, std::size_t i) {
    if (bs.c == as.c) return i;
    const std::size_t plane = as.plane();
    const std::size_t b = i / (as.c * plane);
    return b * plane + i % plane;
  };
  return a.graph->record(
      names[static_cast<int>(kind)], {a, b},
      [kind, eps, b_index](Graph<T>& g, typename Graph<T>::Node& self) {
        const Tensor4<T>& va = g.value(self.inputs[0]);
        const Tensor4<T>& vb = g.value(self.inputs[1]);
        self.value = Tensor4<T>(va.shape());
        for (std::size_t i = 0; i < va.size(); ++i) {
          const T x = va[i];
          const T y = vb[b_index(va.shape(), vb.shape(), i)];
          switch (kind) {
            case kernels::Binary::add: self.value[i] = x + y; break;
            case kernels::Binary::sub: self.value[i] = x - y; break;
            case kernels::Binary::mul: self.value[i] = x * y; break;
            case kernels::Binary::div: self.value[i] = x / (y + eps); break;
          }
        }
      },
      [kind, eps, b_index](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t ai = self.inputs[0];
        const std::size_t bi = self.inputs[1];
        const Tensor4<T>& va = g.value(ai);
        const Tensor4<T>& vb = g.value(bi);
        std::vector<T>* ga = detail::wants_grad(g, ai) ? &g.grad_buffer(ai) : nullptr;
        std::vector<T>* gb = detail::wants_grad(g, bi) ? &g.grad_buffer(bi) : nullptr;
        for (std::size_t i = 0; i < va.size(); ++i) {
          const std::size_t j = b_index(va.shape(), vb.shape(), i);
          const T gy = self.grad[i];
          T da{0}, db{0};
          switch (kind) {
            case kernels::Binary::add: da = gy; db = gy; break;
            case kernels::Binary::sub: da = gy; db = -gy; break;
            case kernels::Binary::mul: da = gy * vb[j]; db = gy * va[i]; break;
            case kernels::Binary::div: {
              const T den = vb[j] + eps;
              da = gy / den;
              db = -gy * va[i] / (den * den);
              break;
            }
          }
          if (ga != nullptr) (*ga)[i] += da;
          if (gb != nullptr) (*gb)[j] += db;
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return elementwise(a, b, kernels::Binary::add);
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return elementwise(a, b, kernels::Binary::sub);
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return elementwise(a, b, kernels::Binary::mul);
}
template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  return elementwise(a, b, kernels::Binary::div);
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  for (const Var<T>& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw DimensionError("concat_channels: " + to_string(s) + " does not match " + to_string(s0));
    }
  }
  return parts.front().graph->record(
      "concat_channels", parts,
      [](Graph<T>& g, typename Graph<T>::Node& self) {
        const Shape& s0 = g.value(self.inputs[0]).shape();
        std::size_t channels = 0;
        for (std::size_t id : self.inputs) channels += g.value(id).c();
        self.value = Tensor4<T>(s0.n, channels, s0.h, s0.w);
        for (std::size_t b = 0; b < s0.n; ++b) {
          std::size_t offset = 0;
          for (std::size_t id : self.inputs) {
            const Tensor4<T>& part = g.value(id);
            std::copy(part.plane(b, 0), part.plane(b, 0) + part.c() * s0.plane(), self.value.plane(b, offset));
            offset += part.c();
          }
        }
      },
      [](Graph<T>& g, typename Graph<T>::Node& self) {
        const Shape& s = self.value.shape();
        for (std::size_t b = 0; b < s.n; ++b) {
          std::size_t offset = 0;
          for (std::size_t id : self.inputs) {
            const Tensor4<T>& part = g.value(id);
            if (detail::wants_grad(g, id)) {
              std::vector<T>& gp = g.grad_buffer(id);
              const T* src = self.grad.data() + (b * s.c + offset) * s.plane();
              T* dst = gp.data() + b * part.c() * s.plane();
              for (std::size_t i = 0; i < part.c() * s.plane(); ++i) dst[i] += src[i];
            }
            offset += part.c();
          }
        }
      });
}

// Sum of all elements, as a 1x1x1x1 tensor.
template <typename T>
Var<T> sum(Var<T> x) {
  return x.graph->record(
      "sum", {x},
      [](Graph<T>& g, typename Graph<T>::Node& self) {
        self.value = Tensor4<T>(1, 1, 1, 1, g.value(self.inputs[0]).sum());
      },
      [](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t xi = self.inputs[0];
        if (!detail::wants_grad(g, xi)) return;
        std::vector<T>& gx = g.grad_buffer(xi);
        for (T& v : gx) v += self.grad[0];
      });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return x.graph->record(
      "scale", {x},
      [factor](Graph<T>& g, typename Graph<T>::Node& self) {
        const Tensor4<T>& in = g.value(self.inputs[0]);
        self.value = Tensor4<T>(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) self.value[i] = in[i] * factor;
      },
      [factor](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t xi = self.inputs[0];
        if (!detail::wants_grad(g, xi)) return;
        std::vector<T>& gx = g.grad_buffer(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
      });
}

// sum((est - target)^2) / (2 * divisor). With divisor = batch size this is the
// batch-averaged half squared L2 distance.
template <typename T>
Var<T> squared_error(Var<T> est, const Tensor4<T>& target, std::size_t divisor) {
  if (est.shape() != target.shape()) {
    throw DimensionError("l2_loss: estimate " + to_string(est.shape()) + " vs target " + to_string(target.shape()));
  }
  if (divisor == 0) throw UsageError("l2_loss: batch size must be >= 1");
  const T inv = T{1} / static_cast<T>(divisor);
  auto tgt = std::make_shared<Tensor4<T>>(target);
  return est.graph->record(
      "l2_loss", {est},
      [tgt, inv](Graph<T>& g, typename Graph<T>::Node& self) {
        const Tensor4<T>& e = g.value(self.inputs[0]);
        T acc{0};
        for (std::size_t i = 0; i < e.size(); ++i) {
          const T d = e[i] - (*tgt)[i];
          acc += d * d;
        }
        self.value = Tensor4<T>(1, 1, 1, 1, acc * inv / T{2});
      },
      [tgt, inv](Graph<T>& g, typename Graph<T>::Node& self) {
        const std::size_t ei = self.inputs[0];
        if (!detail::wants_grad(g, ei)) return;
        const Tensor4<T>& e = g.value(ei);
        std::vector<T>& ge = g.grad_buffer(ei);
        for (std::size_t i = 0; i < e.size(); ++i) ge[i] += self.grad[0] * (e[i] - (*tgt)[i]) * inv;
      });
}

// (1/2B) * sum_i ||gt_i - est_i||^2 with B = est.n().
template <typename T>
Var<T> l2_loss(Var<T> est, const Tensor4<T>& gt) {
  return squared_error(est, gt, est.shape().n);
}

}  // namespace ad
}  // namespace crowdscale
