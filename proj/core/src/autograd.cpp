#include "mseg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "mseg/errors.hpp"

namespace mseg::ag {

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->needs_grad = false;
  return n;
}

Var leaf(Tensor v, bool needs_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->needs_grad = needs_grad;
  n->name = std::move(name);
  return n;
}

Var make_node(Tensor v, std::vector<Var> parents, std::function<void(Node&)> bp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  for (const auto& p : parents)
    if (p && p->needs_grad) {
      n->needs_grad = true;
      break;
    }
  if (n->needs_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

void backward(const Var& root) {
  if (!root) throw ArgumentError("backward: null root");
  if (root->value.size() != 1) throw ArgumentError("backward: root must be scalar");
  if (!root->needs_grad) return;

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->needs_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->g()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad_allocated) n->backprop(*n);
  }
}

// ---- elementwise -------------------------------------------------------------

static void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw ArgumentError(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                        " vs " + b->value.shape_str());
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  out.add_scaled(b->value, 1.0);
  return make_node(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->g().add_scaled(n.grad, 1.0);
    if (n.parents[1]->needs_grad) n.parents[1]->g().add_scaled(n.grad, 1.0);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  out.add_scaled(b->value, -1.0);
  return make_node(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->g().add_scaled(n.grad, 1.0);
    if (n.parents[1]->needs_grad) n.parents[1]->g().add_scaled(n.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& nd) {
    const std::int64_t m = nd.value.size();
    if (nd.parents[0]->needs_grad) {
      Tensor& ga = nd.parents[0]->g();
      const Tensor& bv = nd.parents[1]->value;
      for (std::int64_t i = 0; i < m; ++i) ga[i] += nd.grad[i] * bv[i];
    }
    if (nd.parents[1]->needs_grad) {
      Tensor& gb = nd.parents[1]->g();
      const Tensor& av = nd.parents[0]->value;
      for (std::int64_t i = 0; i < m; ++i) gb[i] += nd.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_node(std::move(out), {a}, [s](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->g().add_scaled(n.grad, s);
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = a->value[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Tensor saved = out;
  return make_node(std::move(out), {a}, [saved = std::move(saved)](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    const std::int64_t m = saved.size();
    for (std::int64_t i = 0; i < m; ++i) g[i] += n.grad[i] * saved[i] * (1.0 - saved[i]);
  });
}

Var tanh_op(const Var& a) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(a->value[i]);
  Tensor saved = out;
  return make_node(std::move(out), {a}, [saved = std::move(saved)](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    const std::int64_t m = saved.size();
    for (std::int64_t i = 0; i < m; ++i) g[i] += n.grad[i] * (1.0 - saved[i] * saved[i]);
  });
}

Var relu(const Var& a) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  return make_node(std::move(out), {a}, [](Node& nd) {
    if (!nd.parents[0]->needs_grad) return;
    Tensor& g = nd.parents[0]->g();
    const Tensor& x = nd.parents[0]->value;
    const std::int64_t m = x.size();
    for (std::int64_t i = 0; i < m; ++i)
      if (x[i] > 0.0) g[i] += nd.grad[i];
  });
}

// ---- shape / channel ops ------------------------------------------------------

Var concat_c(const std::vector<Var>& xs) {
  if (xs.empty()) throw ArgumentError("concat_c: empty input list");
  const int h = xs[0]->value.dim(1), w = xs[0]->value.dim(2);
  int c_total = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != 3 || x->value.dim(1) != h || x->value.dim(2) != w)
      throw ArgumentError("concat_c: spatial dims mismatch");
    c_total += x->value.dim(0);
  }
  Tensor out({c_total, h, w});
  std::int64_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->value.data(), x->value.data() + x->value.size(), out.data() + off);
    off += x->value.size();
  }
  return make_node(std::move(out), xs, [](Node& n) {
    std::int64_t off2 = 0;
    for (auto& p : n.parents) {
      const std::int64_t sz = p->value.size();
      if (p->needs_grad) {
        Tensor& g = p->g();
        for (std::int64_t i = 0; i < sz; ++i) g[i] += n.grad[off2 + i];
      }
      off2 += sz;
    }
  });
}

Var slice_c(const Var& x, int c0, int c1) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (c0 < 0 || c1 > c || c0 >= c1) throw ArgumentError("slice_c: bad channel range");
  Tensor out({c1 - c0, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::copy(x->value.data() + c0 * plane, x->value.data() + c1 * plane, out.data());
  return make_node(std::move(out), {x}, [c0, plane](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    const std::int64_t sz = n.value.size();
    double* dst = g.data() + c0 * plane;
    for (std::int64_t i = 0; i < sz; ++i) dst[i] += n.grad[i];
  });
}

// Reshape channels to (groups, C/groups), transpose, flatten. A fixed
// permutation; groups must divide C.
Var channel_shuffle(const Var& x, int groups) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (groups < 1 || c % groups != 0)
    throw ArgumentError("channel_shuffle: groups must divide channel count");
  const int per = c / groups;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({c, h, w});
  for (int j = 0; j < c; ++j) {
    const int src = (j % groups) * per + j / groups;
    std::copy(x->value.data() + src * plane, x->value.data() + (src + 1) * plane,
              out.data() + j * plane);
  }
  return make_node(std::move(out), {x}, [groups, per, plane, c](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    for (int j = 0; j < c; ++j) {
      const int src = (j % groups) * per + j / groups;
      double* dst = g.data() + src * plane;
      const double* s = n.grad.data() + j * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += s[i];
    }
  });
}

Var add_channel_bias(const Var& x, const Var& b) {
  const int c = x->value.dim(0);
  if (b->value.rank() != 1 || b->value.dim(0) != c)
    throw ArgumentError("add_channel_bias: bias/channel mismatch");
  const std::int64_t plane = x->value.size() / c;
  Tensor out = x->value;
  for (int ch = 0; ch < c; ++ch) {
    double* dst = out.data() + ch * plane;
    const double bv = b->value[ch];
    for (std::int64_t i = 0; i < plane; ++i) dst[i] += bv;
  }
  return make_node(std::move(out), {x, b}, [c, plane](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->g().add_scaled(n.grad, 1.0);
    if (n.parents[1]->needs_grad) {
      Tensor& gb = n.parents[1]->g();
      for (int ch = 0; ch < c; ++ch) {
        const double* s = n.grad.data() + ch * plane;
        double acc = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) acc += s[i];
        gb[ch] += acc;
      }
    }
  });
}

Var spatial_crop(const Var& x, int out_h, int out_w) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (out_h > h || out_w > w || out_h < 1 || out_w < 1)
    throw ArgumentError("spatial_crop: target exceeds input");
  if (out_h == h && out_w == w) return x;
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < out_h; ++i) {
      const double* src = x->value.data() + (static_cast<std::int64_t>(ch) * h + i) * w;
      double* dst = out.data() + (static_cast<std::int64_t>(ch) * out_h + i) * out_w;
      std::copy(src, src + out_w, dst);
    }
  return make_node(std::move(out), {x}, [c, h, w, out_h, out_w](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < out_h; ++i) {
        double* dst = g.data() + (static_cast<std::int64_t>(ch) * h + i) * w;
        const double* src = n.grad.data() + (static_cast<std::int64_t>(ch) * out_h + i) * out_w;
        for (int j = 0; j < out_w; ++j) dst[j] += src[j];
      }
  });
}

Var temporal_mean(const Var& x) {
  if (x->value.rank() != 4) throw ArgumentError("temporal_mean: expects (C,T,H,W)");
  const int c = x->value.dim(0), t = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({c, h, w});
  const double inv = 1.0 / t;
  for (int ch = 0; ch < c; ++ch)
    for (int k = 0; k < t; ++k) {
      const double* src = x->value.data() + (static_cast<std::int64_t>(ch) * t + k) * plane;
      double* dst = out.data() + ch * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i] * inv;
    }
  return make_node(std::move(out), {x}, [c, t, plane, inv](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < t; ++k) {
        double* dst = g.data() + (static_cast<std::int64_t>(ch) * t + k) * plane;
        const double* src = n.grad.data() + ch * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i] * inv;
      }
  });
}

Var stack_time(const std::vector<Var>& frames) {
  if (frames.empty()) throw ArgumentError("stack_time: empty frame list");
  const int c = frames[0]->value.dim(0), h = frames[0]->value.dim(1), w = frames[0]->value.dim(2);
  const int t = static_cast<int>(frames.size());
  for (const auto& f : frames)
    if (f->value.rank() != 3 || !f->value.same_shape(frames[0]->value))
      throw ArgumentError("stack_time: frame shape mismatch");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({c, t, h, w});
  for (int k = 0; k < t; ++k)
    for (int ch = 0; ch < c; ++ch)
      std::copy(frames[k]->value.data() + ch * plane, frames[k]->value.data() + (ch + 1) * plane,
                out.data() + (static_cast<std::int64_t>(ch) * t + k) * plane);
  return make_node(std::move(out), frames, [c, t, plane](Node& n) {
    for (int k = 0; k < t; ++k) {
      if (!n.parents[k]->needs_grad) continue;
      Tensor& g = n.parents[k]->g();
      for (int ch = 0; ch < c; ++ch) {
        const double* src = n.grad.data() + (static_cast<std::int64_t>(ch) * t + k) * plane;
        double* dst = g.data() + ch * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
      }
    }
  });
}

// ---- reductions ---------------------------------------------------------------

Var sum_all(const Var& x) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
  Tensor out({1});
  out[0] = acc;
  return make_node(std::move(out), {x}, [](Node& n) {
    if (!n.parents[0]->needs_grad) return;
    Tensor& g = n.parents[0]->g();
    const double gv = n.grad[0];
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gv;
  });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x->value.size())); }

// ---- batch normalization --------------------------------------------------------

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                    Tensor* batch_mean, Tensor* batch_var) {
  const int c = x->value.dim(0);
  const std::int64_t plane = x->value.size() / c;
  if (gamma->value.dim(0) != c || beta->value.dim(0) != c)
    throw ArgumentError("batchnorm: parameter/channel mismatch");
  Tensor mean({c}), var({c}), invstd({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = x->value.data() + ch * plane;
    double m = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) m += src[i];
    m /= static_cast<double>(plane);
    double v = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d = src[i] - m;
      v += d * d;
    }
    v /= static_cast<double>(plane);
    mean[ch] = m;
    var[ch] = v;
    invstd[ch] = 1.0 / std::sqrt(v + eps);
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  Tensor xhat(x->value.shape());
  Tensor out(x->value.shape());
  for (int ch = 0; ch < c; ++ch) {
    const double* src = x->value.data() + ch * plane;
    double* xh = xhat.data() + ch * plane;
    double* o = out.data() + ch * plane;
    const double m = mean[ch], is = invstd[ch], gm = gamma->value[ch], bt = beta->value[ch];
    for (std::int64_t i = 0; i < plane; ++i) {
      xh[i] = (src[i] - m) * is;
      o[i] = gm * xh[i] + bt;
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [c, plane, xhat = std::move(xhat), invstd = std::move(invstd)](Node& n) {
                     const Tensor& gamma_v = n.parents[1]->value;
                     for (int ch = 0; ch < c; ++ch) {
                       const double* dy = n.grad.data() + ch * plane;
                       const double* xh = xhat.data() + ch * plane;
                       double sum_dy = 0.0, sum_dy_xh = 0.0;
                       for (std::int64_t i = 0; i < plane; ++i) {
                         sum_dy += dy[i];
                         sum_dy_xh += dy[i] * xh[i];
                       }
                       if (n.parents[1]->needs_grad) n.parents[1]->g()[ch] += sum_dy_xh;
                       if (n.parents[2]->needs_grad) n.parents[2]->g()[ch] += sum_dy;
                       if (n.parents[0]->needs_grad) {
                         Tensor& gx = n.parents[0]->g();
                         double* dst = gx.data() + ch * plane;
                         const double k = gamma_v[ch] * invstd[ch];
                         const double npx = static_cast<double>(plane);
                         for (std::int64_t i = 0; i < plane; ++i)
                           dst[i] += k * (dy[i] - sum_dy / npx - xh[i] * sum_dy_xh / npx);
                       }
                     }
                   });
}

Var batchnorm_infer(const Var& x, const Var& gamma, const Var& beta,
                    const Tensor& running_mean, const Tensor& running_var, double eps) {
  const int c = x->value.dim(0);
  const std::int64_t plane = x->value.size() / c;
  Tensor scale_c({c}), shift_c({c});
  for (int ch = 0; ch < c; ++ch) {
    const double is = 1.0 / std::sqrt(running_var[ch] + eps);
    scale_c[ch] = gamma->value[ch] * is;
    shift_c[ch] = beta->value[ch] - running_mean[ch] * scale_c[ch];
  }
  Tensor out(x->value.shape());
  for (int ch = 0; ch < c; ++ch) {
    const double* src = x->value.data() + ch * plane;
    double* o = out.data() + ch * plane;
    for (std::int64_t i = 0; i < plane; ++i) o[i] = scale_c[ch] * src[i] + shift_c[ch];
  }
  Tensor rm = running_mean, rv = running_var;
  return make_node(
      std::move(out), {x, gamma, beta},
      [c, plane, scale_c = std::move(scale_c), rm = std::move(rm), rv = std::move(rv),
       eps](Node& n) {
        for (int ch = 0; ch < c; ++ch) {
          const double* dy = n.grad.data() + ch * plane;
          if (n.parents[0]->needs_grad) {
            double* dst = n.parents[0]->g().data() + ch * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] += dy[i] * scale_c[ch];
          }
          const double is = 1.0 / std::sqrt(rv[ch] + eps);
          if (n.parents[1]->needs_grad) {
            const double* xv = n.parents[0]->value.data() + ch * plane;
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) acc += dy[i] * (xv[i] - rm[ch]) * is;
            n.parents[1]->g()[ch] += acc;
          }
          if (n.parents[2]->needs_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) acc += dy[i];
            n.parents[2]->g()[ch] += acc;
          }
        }
      });
}

// ---- classification loss ---------------------------------------------------------

CeLoss weighted_softmax_ce(const Var& logits, const std::vector<std::uint8_t>& labels,
                           const std::vector<double>& class_weights,
                           std::uint8_t ignore_label) {
  if (logits->value.rank() != 3) throw ArgumentError("weighted_softmax_ce: logits must be (K,H,W)");
  const int k = logits->value.dim(0);
  const std::int64_t npx = logits->value.size() / k;
  if (static_cast<std::int64_t>(labels.size()) != npx)
    throw ArgumentError("weighted_softmax_ce: label/logit pixel count mismatch");
  if (static_cast<int>(class_weights.size()) != k)
    throw ArgumentError("weighted_softmax_ce: needs one weight per class");
  for (double w : class_weights)
    if (!(w >= 0.0)) throw ArgumentError("weighted_softmax_ce: weights must be >= 0");

  std::int64_t valid = 0;
  for (std::int64_t p = 0; p < npx; ++p) {
    const std::uint8_t y = labels[p];
    if (y == ignore_label) continue;
    if (y >= k) throw ArgumentError("weighted_softmax_ce: label out of range");
    ++valid;
  }

  CeLoss result;
  result.valid_pixels = valid;
  if (valid == 0) {
    result.all_ignored = true;
    result.loss = constant(Tensor::zeros({1}));
    return result;
  }

  // Saved per-pixel softmax for the backward pass.
  Tensor probs(logits->value.shape());
  double acc = 0.0;
  const double inv_n = 1.0 / static_cast<double>(valid);
  for (std::int64_t p = 0; p < npx; ++p) {
    double mx = logits->value[p];
    for (int c = 1; c < k; ++c) mx = std::max(mx, logits->value[c * npx + p]);
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(logits->value[c * npx + p] - mx);
    const double lse = mx + std::log(denom);
    for (int c = 0; c < k; ++c) probs[c * npx + p] = std::exp(logits->value[c * npx + p] - lse);
    const std::uint8_t y = labels[p];
    if (y == ignore_label) continue;
    acc += class_weights[y] * (lse - logits->value[y * npx + p]);
  }
  Tensor out({1});
  out[0] = acc * inv_n;

  std::vector<std::uint8_t> labels_copy = labels;
  std::vector<double> weights_copy = class_weights;
  result.loss = make_node(
      std::move(out), {logits},
      [k, npx, inv_n, ignore_label, probs = std::move(probs), labels_copy = std::move(labels_copy),
       weights_copy = std::move(weights_copy)](Node& n) {
        if (!n.parents[0]->needs_grad) return;
        Tensor& g = n.parents[0]->g();
        const double gv = n.grad[0] * inv_n;
        for (std::int64_t p = 0; p < npx; ++p) {
          const std::uint8_t y = labels_copy[p];
          if (y == ignore_label) continue;
          const double w = weights_copy[y] * gv;
          for (int c = 0; c < k; ++c) {
            const double onehot = (c == y) ? 1.0 : 0.0;
            g[c * npx + p] += w * (probs[c * npx + p] - onehot);
          }
        }
      });
  return result;
}

}  // namespace mseg::ag
