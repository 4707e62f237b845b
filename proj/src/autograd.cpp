#include "tocoad/autograd.hpp"

#include "tocoad/common.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace tocoad {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) throw ArgumentError("tensor data size does not match shape " + shape_.str());
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() != size()) throw ArgumentError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor(shape, data_);
}

}  // namespace tocoad

namespace tocoad::ag {

void Node::accumulate(const Eigen::ArrayXd& g) {
  if (grad.empty()) {
    grad = Tensor(value.shape(), g);
  } else {
    grad.data() += g;
  }
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var parameter(Tensor value, bool trainable) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = trainable;
  return node;
}

Var detach(const Var& v) { return constant(v->value); }

Scalar item(const Var& v) {
  if (v->value.size() != 1) throw ArgumentError("item() on non-scalar " + v->value.shape().str());
  return v->value.data()[0];
}

void backward(const Var& root) {
  if (root->value.size() != 1) throw ArgumentError("backward() needs a scalar root");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, bool>> stack{{root.get(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node).second) continue;
    stack.emplace_back(node, true);
    for (const auto& in : node->inputs)
      if (in->requires_grad && !seen.count(in.get())) stack.emplace_back(in.get(), false);
  }

  root->accumulate(Eigen::ArrayXd::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Interior gradients are transient; only leaves keep theirs.
  for (Node* node : order)
    if (node->backward_fn) node->grad = Tensor();
}

namespace {

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs)
    if (in && in->requires_grad) needs = true;
  if (needs) {
    node->requires_grad = true;
    for (auto& in : inputs)
      if (in) node->inputs.push_back(std::move(in));
    node->backward_fn = std::move(fn);
  }
  return node;
}

struct ConvGeometry {
  Index in_c, in_h, in_w, k, stride, pad, out_h, out_w;
};

void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.setZero(g.in_c * g.k * g.k, g.out_h * g.out_w);
  for (Index c = 0; c < g.in_c; ++c) {
    const Scalar* plane = x + c * g.in_h * g.in_w;
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        Scalar* row = cols.data() + ((c * g.k + ky) * g.k + kx) * cols.cols();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            row[oy * g.out_w + ox] = plane[iy * g.in_w + ix];
          }
        }
      }
    }
  }
}

void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  for (Index c = 0; c < g.in_c; ++c) {
    Scalar* plane = dx + c * g.in_h * g.in_w;
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        const Scalar* row = cols.data() + ((c * g.k + ky) * g.k + kx) * cols.cols();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            plane[iy * g.in_w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

// Source taps for one axis of a half-pixel bilinear resample.
struct Taps {
  std::vector<Index> lo, hi;
  std::vector<Scalar> frac;
};

Taps bilinear_taps(Index in, Index out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const Scalar ratio = static_cast<Scalar>(in) / static_cast<Scalar>(out);
  for (Index o = 0; o < out; ++o) {
    Scalar src = (static_cast<Scalar>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[o] = lo;
    t.hi[o] = std::min<Index>(lo + 1, in - 1);
    t.frac[o] = src - static_cast<Scalar>(lo);
  }
  return t;
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  if (ws.c != xs.c || ws.h != ws.w) throw ArgumentError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, padding, 0, 0};
  g.out_h = (xs.h + 2 * padding - ws.h) / stride + 1;
  g.out_w = (xs.w + 2 * padding - ws.w) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ArgumentError("conv2d: input " + xs.str() + " too small");

  const Index out_c = ws.n;
  const Index patch = xs.c * ws.h * ws.w;
  Eigen::Map<const RowMatrix<Scalar>> wmat(weight->value.data().data(), out_c, patch);

  const bool keep_cols = weight->requires_grad;
  auto cols_cache = std::make_shared<std::vector<RowMatrix<Scalar>>>();
  if (keep_cols) cols_cache->resize(xs.n);

  Tensor out(Shape{xs.n, out_c, g.out_h, g.out_w});
  RowMatrix<Scalar> cols;
  for (Index n = 0; n < xs.n; ++n) {
    im2col(x->value.data().data() + n * xs.c * xs.plane(), g, cols);
    auto o = out.sample(n);
    o.noalias() = wmat * cols;
    if (bias) o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias->value.data().data(), out_c);
    if (keep_cols) (*cols_cache)[n] = cols;
  }

  return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, g, xs, out_c, patch, cols_cache](Node& self) {
    Eigen::Map<const RowMatrix<Scalar>> wmat(weight->value.data().data(), out_c, patch);
    if (weight->requires_grad) {
      RowMatrix<Scalar> dw = RowMatrix<Scalar>::Zero(out_c, patch);
      for (Index n = 0; n < xs.n; ++n) dw.noalias() += self.grad.sample(n) * (*cols_cache)[n].transpose();
      weight->accumulate(Eigen::Map<const Eigen::ArrayXd>(dw.data(), dw.size()));
    }
    if (bias && bias->requires_grad) {
      Eigen::VectorXd db = Eigen::VectorXd::Zero(out_c);
      for (Index n = 0; n < xs.n; ++n) db += self.grad.sample(n).rowwise().sum();
      bias->accumulate(db.array());
    }
    if (x->requires_grad) {
      Eigen::ArrayXd dx = Eigen::ArrayXd::Zero(xs.size());
      RowMatrix<Scalar> dcols;
      for (Index n = 0; n < xs.n; ++n) {
        dcols.noalias() = wmat.transpose() * self.grad.sample(n);
        col2im(dcols, g, dx.data() + n * xs.c * xs.plane());
      }
      x->accumulate(dx);
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x->value.shape(), x->value.data().max(0.0));
  return make_result(std::move(out), {x}, [x](Node& self) {
    x->accumulate((x->value.data() > 0).select(self.grad.data(), 0.0));
  });
}

Var add(const Var& a, const Var& b) {
  if (!(a->value.shape() == b->value.shape()))
    throw ArgumentError("add: shape mismatch " + a->value.shape().str() + " vs " + b->value.shape().str());
  Tensor out(a->value.shape(), a->value.data() + b->value.data());
  return make_result(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad.data());
    if (b->requires_grad) b->accumulate(self.grad.data());
  });
}

Var scale(const Var& a, Scalar s) {
  Tensor out(a->value.shape(), a->value.data() * s);
  return make_result(std::move(out), {a}, [a, s](Node& self) { a->accumulate(self.grad.data() * s); });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
  Shape s = parts.front()->value.shape();
  Index total_c = 0;
  for (const auto& p : parts) {
    const Shape ps = p->value.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w)
      throw ArgumentError("concat_channels: spatial mismatch " + ps.str() + " vs " + s.str());
    total_c += ps.c;
  }
  Tensor out(Shape{s.n, total_c, s.h, s.w});
  for (Index n = 0; n < s.n; ++n) {
    Index c0 = 0;
    for (const auto& p : parts) {
      const Index pc = p->value.shape().c;
      out.sample(n).middleRows(c0, pc) = p->value.sample(n);
      c0 += pc;
    }
  }
  return make_result(std::move(out), parts, [parts, s](Node& self) {
    Index c0 = 0;
    for (const auto& p : parts) {
      const Index pc = p->value.shape().c;
      if (p->requires_grad) {
        Tensor g(p->value.shape());
        for (Index n = 0; n < s.n; ++n) g.sample(n) = self.grad.sample(n).middleRows(c0, pc);
        p->accumulate(g.data());
      }
      c0 += pc;
    }
  });
}

Var resize_bilinear(const Var& x, Index out_h, Index out_w) {
  const Shape xs = x->value.shape();
  if (out_h <= 0 || out_w <= 0) throw ArgumentError("resize_bilinear: nonpositive output size");
  auto ty = std::make_shared<Taps>(bilinear_taps(xs.h, out_h));
  auto tx = std::make_shared<Taps>(bilinear_taps(xs.w, out_w));
  Tensor out(Shape{xs.n, xs.c, out_h, out_w});
  for (Index n = 0; n < xs.n; ++n) {
    for (Index c = 0; c < xs.c; ++c) {
      auto src = x->value.plane(n, c);
      auto dst = out.plane(n, c);
      for (Index oy = 0; oy < out_h; ++oy) {
        const Scalar fy = ty->frac[oy];
        for (Index ox = 0; ox < out_w; ++ox) {
          const Scalar fx = tx->frac[ox];
          const Scalar top = (1 - fx) * src(ty->lo[oy], tx->lo[ox]) + fx * src(ty->lo[oy], tx->hi[ox]);
          const Scalar bot = (1 - fx) * src(ty->hi[oy], tx->lo[ox]) + fx * src(ty->hi[oy], tx->hi[ox]);
          dst(oy, ox) = (1 - fy) * top + fy * bot;
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [x, ty, tx, xs, out_h, out_w](Node& self) {
    Tensor g(xs);
    for (Index n = 0; n < xs.n; ++n) {
      for (Index c = 0; c < xs.c; ++c) {
        auto up = self.grad.plane(n, c);
        auto dst = g.plane(n, c);
        for (Index oy = 0; oy < out_h; ++oy) {
          const Scalar fy = ty->frac[oy];
          for (Index ox = 0; ox < out_w; ++ox) {
            const Scalar fx = tx->frac[ox];
            const Scalar v = up(oy, ox);
            dst(ty->lo[oy], tx->lo[ox]) += (1 - fy) * (1 - fx) * v;
            dst(ty->lo[oy], tx->hi[ox]) += (1 - fy) * fx * v;
            dst(ty->hi[oy], tx->lo[ox]) += fy * (1 - fx) * v;
            dst(ty->hi[oy], tx->hi[ox]) += fy * fx * v;
          }
        }
      }
    }
    x->accumulate(g.data());
  });
}

Var global_avg_pool(const Var& x) {
  const Shape xs = x->value.shape();
  Tensor out(Shape{xs.n, xs.c, 1, 1});
  for (Index n = 0; n < xs.n; ++n) out.sample(n) = x->value.sample(n).rowwise().mean();
  return make_result(std::move(out), {x}, [x, xs](Node& self) {
    Tensor g(xs);
    const Scalar inv = 1.0 / static_cast<Scalar>(xs.plane());
    for (Index n = 0; n < xs.n; ++n)
      g.sample(n).colwise() = self.grad.sample(n).col(0) * inv;
    x->accumulate(g.data());
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  const Index in = xs.c * xs.plane();
  if (ws.c * ws.plane() != in) throw ArgumentError("linear: weight " + ws.str() + " vs input " + xs.str());
  const Index out_d = ws.n;
  Eigen::Map<const RowMatrix<Scalar>> wmat(weight->value.data().data(), out_d, in);
  Tensor out(Shape{xs.n, out_d, 1, 1});
  out.rows().noalias() = x->value.rows() * wmat.transpose();
  if (bias) out.rows().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->value.data().data(), out_d);
  return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, in, out_d](Node& self) {
    Eigen::Map<const RowMatrix<Scalar>> wmat(weight->value.data().data(), out_d, in);
    const auto dy = self.grad.rows();
    if (weight->requires_grad) {
      RowMatrix<Scalar> dw = dy.transpose() * x->value.rows();
      weight->accumulate(Eigen::Map<const Eigen::ArrayXd>(dw.data(), dw.size()));
    }
    if (bias && bias->requires_grad) {
      Eigen::RowVectorXd db = dy.colwise().sum();
      bias->accumulate(db.transpose().array());
    }
    if (x->requires_grad) {
      RowMatrix<Scalar> dx = dy * wmat;
      x->accumulate(Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Scalar eps) {
  const Shape xs = x->value.shape();
  const Index n = xs.n;
  const Index d = xs.c * xs.plane();
  const auto xm = x->value.rows();
  const Eigen::RowVectorXd mean = xm.colwise().mean();
  RowMatrix<Scalar> centered = xm.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  auto inv_std = std::make_shared<Eigen::RowVectorXd>((var.array() + eps).rsqrt());
  auto xhat = std::make_shared<RowMatrix<Scalar>>(centered.array().rowwise() * inv_std->array());

  Tensor out(xs);
  out.rows() = *xhat;
  if (gamma) out.rows().array().rowwise() *= Eigen::Map<const Eigen::RowVectorXd>(gamma->value.data().data(), d).array();
  if (beta) out.rows().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(beta->value.data().data(), d);

  return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, inv_std, xhat, n, d](Node& self) {
    const auto dy = self.grad.rows();
    if (gamma && gamma->requires_grad) {
      Eigen::RowVectorXd dg = (dy.array() * xhat->array()).colwise().sum();
      gamma->accumulate(dg.transpose().array());
    }
    if (beta && beta->requires_grad) {
      Eigen::RowVectorXd db = dy.colwise().sum();
      beta->accumulate(db.transpose().array());
    }
    if (x->requires_grad) {
      RowMatrix<Scalar> dxhat = dy;
      if (gamma) dxhat.array().rowwise() *= Eigen::Map<const Eigen::RowVectorXd>(gamma->value.data().data(), d).array();
      const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
      const Eigen::RowVectorXd sum_dx = (dxhat.array() * xhat->array()).colwise().sum();
      RowMatrix<Scalar> dx = static_cast<Scalar>(n) * dxhat;
      dx.rowwise() -= sum_d;
      dx.array() -= xhat->array().rowwise() * sum_dx.array();
      dx.array().rowwise() *= inv_std->array() / static_cast<Scalar>(n);
      x->accumulate(Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
    }
  });
}

Var focal_loss(const Var& logits, const Tensor& target, const FocalSpec& spec) {
  const Shape ls = logits->value.shape();
  const Shape ts = target.shape();
  if (ls.c != 2) throw ArgumentError("focal_loss: logits need 2 channels, got " + ls.str());
  if (ts.n != ls.n || ts.c != 1 || ts.h != ls.h || ts.w != ls.w)
    throw ArgumentError("focal_loss: target " + ts.str() + " does not match logits " + ls.str());
  if (((target.data() != 0.0) && (target.data() != 1.0)).any()) throw ArgumentError("focal_loss: target is not binary");

  const Index pixels = ls.n * ls.plane();
  auto dloss_ddiff = std::make_shared<Eigen::ArrayXd>(pixels);
  Scalar total = 0;
  for (Index n = 0; n < ls.n; ++n) {
    const auto l0 = logits->value.plane(n, 0);
    const auto l1 = logits->value.plane(n, 1);
    const auto t = target.plane(n, 0);
    for (Index i = 0; i < ls.plane(); ++i) {
      const Scalar diff = l1.data()[i] - l0.data()[i];
      const Scalar p1 = 1.0 / (1.0 + std::exp(-diff));
      const bool positive = t.data()[i] == 1.0;
      const Scalar pt = positive ? p1 : 1.0 - p1;
      const Scalar alpha = spec.unit_alpha ? 1.0 : (positive ? spec.alpha_anomalous : 1.0 - spec.alpha_anomalous);
      const Scalar clamped = std::max(pt, spec.prob_floor);
      const Scalar log_pt = std::log(clamped);
      const Scalar one_minus = 1.0 - pt;
      const Scalar modulator = spec.gamma == 0 ? 1.0 : std::pow(one_minus, spec.gamma);
      total += -alpha * modulator * log_pt;

      // d loss / d p_t, then chain through p_t = sigmoid(+-diff).
      Scalar dmod = 0;
      if (spec.gamma != 0 && one_minus > 0) dmod = -spec.gamma * std::pow(one_minus, spec.gamma - 1);
      const Scalar dlog = pt > spec.prob_floor ? 1.0 / pt : 0.0;
      const Scalar dl_dpt = -alpha * (dmod * log_pt + modulator * dlog);
      const Scalar dpt_ddiff = (positive ? 1.0 : -1.0) * p1 * (1.0 - p1);
      (*dloss_ddiff)[n * ls.plane() + i] = dl_dpt * dpt_ddiff;
    }
  }
  const Scalar inv = 1.0 / static_cast<Scalar>(pixels);
  Tensor out(Shape{1, 1, 1, 1}, total * inv);
  return make_result(std::move(out), {logits}, [logits, dloss_ddiff, ls, inv](Node& self) {
    const Scalar g = self.grad.data()[0] * inv;
    Tensor dl(ls);
    for (Index n = 0; n < ls.n; ++n) {
      const Eigen::Map<const Eigen::ArrayXd> dd(dloss_ddiff->data() + n * ls.plane(), ls.plane());
      Eigen::Map<Eigen::ArrayXd>(dl.plane(n, 1).data(), ls.plane()) = g * dd;
      Eigen::Map<Eigen::ArrayXd>(dl.plane(n, 0).data(), ls.plane()) = -g * dd;
    }
    logits->accumulate(dl.data());
  });
}

Var negative_cosine(const Var& p, const Var& z) {
  const Shape ps = p->value.shape();
  if (!(ps == z->value.shape())) throw ArgumentError("negative_cosine: shape mismatch " + ps.str() + " vs " + z->value.shape().str());
  const auto pm = p->value.rows();
  const auto zm = z->value.rows();
  const Eigen::VectorXd pn = pm.rowwise().norm();
  const Eigen::VectorXd zn = zm.rowwise().norm();
  if ((pn.array() == 0).any() || (zn.array() == 0).any()) throw NumericError("negative_cosine: zero-norm input");
  const Eigen::VectorXd cos = (pm.cwiseProduct(zm)).rowwise().sum().cwiseQuotient(pn.cwiseProduct(zn));
  const Index n = ps.n;
  Tensor out(Shape{1, 1, 1, 1}, -cos.mean());
  return make_result(std::move(out), {p, z}, [p, z, pn, zn, cos, n](Node& self) {
    const Scalar g = -self.grad.data()[0] / static_cast<Scalar>(n);
    const auto pm = p->value.rows();
    const auto zm = z->value.rows();
    if (p->requires_grad) {
      RowMatrix<Scalar> dp(pm.rows(), pm.cols());
      for (Index i = 0; i < n; ++i)
        dp.row(i) = g * (zm.row(i) / (pn[i] * zn[i]) - cos[i] * pm.row(i) / (pn[i] * pn[i]));
      p->accumulate(Eigen::Map<const Eigen::ArrayXd>(dp.data(), dp.size()));
    }
    if (z->requires_grad) {
      RowMatrix<Scalar> dz(zm.rows(), zm.cols());
      for (Index i = 0; i < n; ++i)
        dz.row(i) = g * (pm.row(i) / (pn[i] * zn[i]) - cos[i] * zm.row(i) / (zn[i] * zn[i]));
      z->accumulate(Eigen::Map<const Eigen::ArrayXd>(dz.data(), dz.size()));
    }
  });
}

}  // namespace tocoad::ag
