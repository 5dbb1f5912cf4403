#include "idnanet/ops.hpp"

#include <algorithm>
#include <limits>

namespace idna {

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw InputShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw InputShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
}

template <typename S>
using MapR = Eigen::Map<MatrixR<S>>;
template <typename S>
using CMapR = Eigen::Map<const MatrixR<S>>;

template <typename S>
CMapR<S> as_matrix(const ArrayX<S>& a, Index rows, Index cols) {
  return CMapR<S>(a.data(), rows, cols);
}
template <typename S>
MapR<S> as_matrix(ArrayX<S>& a, Index rows, Index cols) {
  return MapR<S>(a.data(), rows, cols);
}

}  // namespace

// ---- element-wise -------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<S> out(a.shape(), a.data() + b.data());
  return make_result(std::move(out), {a, b}, [a, b](const ArrayX<S>& g) {
    a.accumulate(g);
    b.accumulate(g);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<S> out(a.shape(), a.data() - b.data());
  return make_result(std::move(out), {a, b}, [a, b](const ArrayX<S>& g) {
    a.accumulate(g);
    b.accumulate(-g);
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<S> out(a.shape(), a.data() * b.data());
  return make_result(std::move(out), {a, b}, [a, b](const ArrayX<S>& g) {
    a.accumulate(g * b.data());
    b.accumulate(g * a.data());
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape(), a.data() * factor);
  return make_result(std::move(out), {a}, [a, factor](const ArrayX<S>& g) { a.accumulate(g * factor); });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.data().max(S(0)));
  return make_result(std::move(out), {a}, [a](const ArrayX<S>& g) {
    a.accumulate((a.data() > S(0)).select(g, S(0)));
  });
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
  const S inv_sqrt2 = S(1.0 / std::sqrt(2.0));
  const ArrayX<S>& x = a.data();
  ArrayX<S> cdf = S(0.5) * (S(1) + (x * inv_sqrt2).unaryExpr([](S v) { return std::erf(v); }));
  Tensor<S> out(a.shape(), x * cdf);
  return make_result(std::move(out), {a}, [a, cdf](const ArrayX<S>& g) {
    const S inv_sqrt_2pi = S(1.0 / std::sqrt(2.0 * M_PI));
    const ArrayX<S>& x = a.data();
    ArrayX<S> pdf = inv_sqrt_2pi * (S(-0.5) * x.square()).exp();
    a.accumulate(g * (cdf + x * pdf));
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  ArrayX<S> y = a.data().unaryExpr([](S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    const S e = std::exp(v);
    return e / (S(1) + e);
  });
  Tensor<S> out(a.shape(), y);
  return make_result(std::move(out), {a}, [a, y](const ArrayX<S>& g) { a.accumulate(g * y * (S(1) - y)); });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out({1});
  out.data(0) = a.data().sum();
  return make_result(std::move(out), {a}, [a](const ArrayX<S>& g) {
    a.accumulate(ArrayX<S>::Constant(a.size(), g(0)));
  });
}

// ---- shape / layout -----------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw InputShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  Tensor<S> out(std::move(shape), a.data());
  return make_result(std::move(out), {a}, [a](const ArrayX<S>& g) { a.accumulate(g); });
}

template <typename S>
Var<S> transpose(const Var<S>& a, Index rows) {
  const Index cols = a.size() / rows;
  if (rows * cols != a.size()) throw InputShapeError("transpose: rows do not divide size");
  Tensor<S> out({cols, rows});
  out.matrix(cols, rows) = as_matrix(a.data(), rows, cols).transpose();
  return make_result(std::move(out), {a}, [a, rows, cols](const ArrayX<S>& g) {
    ArrayX<S> ga(a.size());
    as_matrix(ga, rows, cols) = as_matrix(g, cols, rows).transpose();
    a.accumulate(ga);
  });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  Index lead = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw InputShapeError("concat: trailing shape mismatch " + to_string(p.shape()));
    lead += p.dim(0);
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<S> out(shape);
  Index offset = 0;
  for (const auto& p : parts) {
    out.data.segment(offset, p.size()) = p.data();
    offset += p.size();
  }
  return make_result(std::move(out), parts, [parts](const ArrayX<S>& g) {
    Index off = 0;
    for (const auto& p : parts) {
      p.accumulate(g.segment(off, p.size()));
      off += p.size();
    }
  });
}

template <typename S>
Var<S> slice(const Var<S>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.dim(0)) throw InputShapeError("slice: range out of bounds");
  const Index stride = a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = count;
  Tensor<S> out(shape, a.data().segment(begin * stride, count * stride));
  return make_result(std::move(out), {a}, [a, begin, count, stride](const ArrayX<S>& g) {
    if (!a.requires_grad()) return;
    a.node()->grad_buffer().segment(begin * stride, count * stride) += g;
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, Index begin, Index count) {
  require_rank(a.shape(), 2, "slice_cols");
  const Index rows = a.dim(0), cols = a.dim(1);
  if (begin < 0 || count < 0 || begin + count > cols) throw InputShapeError("slice_cols: range out of bounds");
  Tensor<S> out({rows, count});
  out.matrix(rows, count) = as_matrix(a.data(), rows, cols).middleCols(begin, count);
  return make_result(std::move(out), {a}, [a, rows, cols, begin, count](const ArrayX<S>& g) {
    if (!a.requires_grad()) return;
    as_matrix(a.node()->grad_buffer(), rows, cols).middleCols(begin, count) += as_matrix(g, rows, count);
  });
}

template <typename S>
Var<S> gather(const Var<S>& a, const std::vector<Index>& index, Shape out_shape) {
  if (static_cast<Index>(index.size()) != numel(out_shape)) throw InputShapeError("gather: index/shape size mismatch");
  Tensor<S> out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.size()) throw InputShapeError("gather: index out of range");
    out.data(static_cast<Index>(i)) = index[i] >= 0 ? a.data()(index[i]) : S(0);
  }
  return make_result(std::move(out), {a}, [a, index](const ArrayX<S>& g) {
    if (!a.requires_grad()) return;
    auto& ga = a.node()->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) ga(index[i]) += g(static_cast<Index>(i));
  });
}

// ---- linear maps --------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const Index n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) throw InputShapeError("matmul: inner dimension mismatch");
  Tensor<S> out({n, m});
  out.matrix(n, m).noalias() = as_matrix(a.data(), n, k) * as_matrix(b.data(), k, m);
  return make_result(std::move(out), {a, b}, [a, b, n, k, m](const ArrayX<S>& g) {
    auto G = as_matrix(g, n, m);
    if (a.requires_grad()) as_matrix(a.node()->grad_buffer(), n, k).noalias() += G * as_matrix(b.data(), k, m).transpose();
    if (b.requires_grad()) as_matrix(b.node()->grad_buffer(), k, m).noalias() += as_matrix(a.data(), n, k).transpose() * G;
  });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  require_rank(x.shape(), 2, "linear");
  const Index n = x.dim(0), in = x.dim(1), outc = weight.dim(0);
  if (weight.size() != outc * in) throw InputShapeError("linear: weight shape " + to_string(weight.shape()));
  Tensor<S> out({n, outc});
  auto Y = out.matrix(n, outc);
  Y.noalias() = as_matrix(x.data(), n, in) * as_matrix(weight.data(), outc, in).transpose();
  if (bias.defined()) Y.rowwise() += bias.data().matrix().transpose();
  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [x, weight, bias, n, in, outc](const ArrayX<S>& g) {
    auto G = as_matrix(g, n, outc);
    if (x.requires_grad()) as_matrix(x.node()->grad_buffer(), n, in).noalias() += G * as_matrix(weight.data(), outc, in);
    if (weight.requires_grad())
      as_matrix(weight.node()->grad_buffer(), outc, in).noalias() += G.transpose() * as_matrix(x.data(), n, in);
    if (bias.defined() && bias.requires_grad()) bias.node()->grad_buffer() += G.colwise().sum().transpose().array();
  });
}

namespace {

template <typename S>
MatrixR<S> im2col(const ArrayX<S>& x, Index c, Index h, Index w, Index k, Index stride, Index pad, Index oh, Index ow) {
  MatrixR<S> cols = MatrixR<S>::Zero(c * k * k, oh * ow);
  for (Index ci = 0; ci < c; ++ci)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (ci * k + ky) * k + kx;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * ow + ox) = x((ci * h + iy) * w + ix);
          }
        }
      }
  return cols;
}

template <typename S>
void col2im_add(const MatrixR<S>& cols, ArrayX<S>& gx, Index c, Index h, Index w, Index k, Index stride, Index pad,
                Index oh, Index ow) {
  for (Index ci = 0; ci < c; ++ci)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (ci * k + ky) * k + kx;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            gx((ci * h + iy) * w + ix) += cols(row, oy * ow + ox);
          }
        }
      }
}

}  // namespace

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, Index stride, Index padding) {
  require_rank(x.shape(), 3, "conv2d");
  require_rank(weight.shape(), 4, "conv2d weight");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k)
    throw InputShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  const Index oh = (h + 2 * padding - k) / stride + 1;
  const Index ow = (w + 2 * padding - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw InputShapeError("conv2d: empty output");
  const bool pointwise = k == 1 && stride == 1 && padding == 0;
  const Index ckk = c * k * k;

  MatrixR<S> cols;
  if (!pointwise) cols = im2col(x.data(), c, h, w, k, stride, padding, oh, ow);

  Tensor<S> out({o, oh, ow});
  auto Y = out.matrix(o, oh * ow);
  auto W = as_matrix(weight.data(), o, ckk);
  if (pointwise)
    Y.noalias() = W * as_matrix(x.data(), c, h * w);
  else
    Y.noalias() = W * cols;
  if (bias.defined()) Y.colwise() += bias.data().matrix();

  std::vector<Var<S>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs,
                     [x, weight, bias, cols = std::move(cols), pointwise, c, h, w, o, k, stride, padding, oh, ow,
                      ckk](const ArrayX<S>& g) {
                       auto G = as_matrix(g, o, oh * ow);
                       auto W = as_matrix(weight.data(), o, ckk);
                       if (weight.requires_grad()) {
                         auto gw = as_matrix(weight.node()->grad_buffer(), o, ckk);
                         if (pointwise)
                           gw.noalias() += G * as_matrix(x.data(), c, h * w).transpose();
                         else
                           gw.noalias() += G * cols.transpose();
                       }
                       if (bias.defined() && bias.requires_grad())
                         bias.node()->grad_buffer() += G.rowwise().sum().array();
                       if (x.requires_grad()) {
                         if (pointwise) {
                           as_matrix(x.node()->grad_buffer(), c, h * w).noalias() += W.transpose() * G;
                         } else {
                           MatrixR<S> gcols = W.transpose() * G;
                           col2im_add(gcols, x.node()->grad_buffer(), c, h, w, k, stride, padding, oh, ow);
                         }
                       }
                     });
}

// ---- normalization / pooling / resampling -------------------------------------

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  require_rank(x.shape(), 2, "layer_norm");
  const Index n = x.dim(0), c = x.dim(1);
  if (gamma.size() != c || beta.size() != c) throw InputShapeError("layer_norm: affine size mismatch");
  auto X = as_matrix(x.data(), n, c);
  MatrixR<S> xhat(n, c);
  ArrayX<S> inv_std(n);
  for (Index r = 0; r < n; ++r) {
    const S mean = X.row(r).mean();
    const S var = (X.row(r).array() - mean).square().mean();
    inv_std(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mean) * inv_std(r);
  }
  Tensor<S> out({n, c});
  out.matrix(n, c) = (xhat.array().rowwise() * gamma.data().transpose()).rowwise() + beta.data().transpose();
  return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, n, c](const ArrayX<S>& g) {
    auto G = as_matrix(g, n, c);
    if (gamma.requires_grad()) gamma.node()->grad_buffer() += (G.array() * xhat.array()).colwise().sum().transpose();
    if (beta.requires_grad()) beta.node()->grad_buffer() += G.colwise().sum().transpose().array();
    if (x.requires_grad()) {
      auto gx = as_matrix(x.node()->grad_buffer(), n, c);
      for (Index r = 0; r < n; ++r) {
        Eigen::Array<S, 1, Eigen::Dynamic> dxhat = G.row(r).array() * gamma.data().transpose();
        const S m1 = dxhat.mean();
        const S m2 = (dxhat * xhat.row(r).array()).mean();
        gx.row(r).array() += inv_std(r) * (dxhat - m1 - xhat.row(r).array() * m2);
      }
    }
  });
}

template <typename S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, Index groups, S eps) {
  require_rank(x.shape(), 3, "group_norm");
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (groups < 1 || c % groups) throw InputShapeError("group_norm: groups must divide the channel count");
  if (gamma.size() != c || beta.size() != c) throw InputShapeError("group_norm: affine size mismatch");
  const Index len = c / groups * hw;
  ArrayX<S> xhat(x.size());
  ArrayX<S> inv_std(groups);
  for (Index g = 0; g < groups; ++g) {
    const auto seg = x.data().segment(g * len, len);
    const S mean = seg.mean();
    const S var = (seg - mean).square().mean();
    inv_std(g) = S(1) / std::sqrt(var + eps);
    xhat.segment(g * len, len) = (seg - mean) * inv_std(g);
  }
  Tensor<S> out(x.shape());
  out.matrix(c, hw) = (as_matrix(xhat, c, hw).array().colwise() * gamma.data()).colwise() + beta.data();
  return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, c, hw, groups, len](const ArrayX<S>& g) {
    auto G = as_matrix(g, c, hw).array();
    auto Xh = as_matrix(xhat, c, hw).array();
    if (gamma.requires_grad()) gamma.node()->grad_buffer() += (G * Xh).rowwise().sum();
    if (beta.requires_grad()) beta.node()->grad_buffer() += G.rowwise().sum();
    if (!x.requires_grad()) return;
    ArrayX<S> dxhat(x.size());
    as_matrix(dxhat, c, hw).array() = G.colwise() * gamma.data();
    auto& gx = x.node()->grad_buffer();
    for (Index k = 0; k < groups; ++k) {
      const auto d = dxhat.segment(k * len, len);
      const auto xh = xhat.segment(k * len, len);
      const S m1 = d.mean(), m2 = (d * xh).mean();
      gx.segment(k * len, len) += inv_std(k) * (d - m1 - xh * m2);
    }
  });
}

template <typename S>
Var<S> max_pool2(const Var<S>& x) {
  require_rank(x.shape(), 3, "max_pool2");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw InputShapeError("max_pool2: odd spatial size " + to_string(x.shape()));
  const Index oh = h / 2, ow = w / 2;
  Tensor<S> out({c, oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  for (Index ci = 0; ci < c; ++ci)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        Index best = (ci * h + 2 * oy) * w + 2 * ox;
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = (ci * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (x.data()(idx) > x.data()(best)) best = idx;
          }
        const Index o = (ci * oh + oy) * ow + ox;
        out.data(o) = x.data()(best);
        argmax[static_cast<std::size_t>(o)] = best;
      }
  return make_result(std::move(out), {x}, [x, argmax](const ArrayX<S>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx(argmax[i]) += g(static_cast<Index>(i));
  });
}

template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
  require_rank(x.shape(), 3, "global_avg_pool");
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<S> out({c}, as_matrix(x.data(), c, hw).rowwise().mean().array());
  return make_result(std::move(out), {x}, [x, c, hw](const ArrayX<S>& g) {
    if (!x.requires_grad()) return;
    as_matrix(x.node()->grad_buffer(), c, hw).colwise() += (g / S(hw)).matrix();
  });
}

template <typename S>
Var<S> global_max_pool(const Var<S>& x) {
  require_rank(x.shape(), 3, "global_max_pool");
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<S> out({c});
  std::vector<Index> argmax(static_cast<std::size_t>(c));
  auto X = as_matrix(x.data(), c, hw);
  for (Index ci = 0; ci < c; ++ci) {
    Index j;
    out.data(ci) = X.row(ci).maxCoeff(&j);
    argmax[static_cast<std::size_t>(ci)] = ci * hw + j;
  }
  return make_result(std::move(out), {x}, [x, argmax](const ArrayX<S>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx(argmax[i]) += g(static_cast<Index>(i));
  });
}

template <typename S>
Var<S> channel_mean(const Var<S>& x) {
  require_rank(x.shape(), 3, "channel_mean");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<S> out({1, h, w}, as_matrix(x.data(), c, h * w).colwise().mean().transpose().array());
  return make_result(std::move(out), {x}, [x, c, h, w](const ArrayX<S>& g) {
    if (!x.requires_grad()) return;
    as_matrix(x.node()->grad_buffer(), c, h * w).rowwise() += (g / S(c)).matrix().transpose();
  });
}

template <typename S>
Var<S> channel_max(const Var<S>& x) {
  require_rank(x.shape(), 3, "channel_max");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  Tensor<S> out({1, h, w});
  std::vector<Index> argmax(static_cast<std::size_t>(hw));
  auto X = as_matrix(x.data(), c, hw);
  for (Index p = 0; p < hw; ++p) {
    Index j;
    out.data(p) = X.col(p).maxCoeff(&j);
    argmax[static_cast<std::size_t>(p)] = j * hw + p;
  }
  return make_result(std::move(out), {x}, [x, argmax](const ArrayX<S>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx(argmax[i]) += g(static_cast<Index>(i));
  });
}

template <typename S>
Var<S> channel_gate(const Var<S>& x, const Var<S>& gate) {
  require_rank(x.shape(), 3, "channel_gate");
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (gate.size() != c) throw InputShapeError("channel_gate: gate size mismatch");
  Tensor<S> out(x.shape());
  out.matrix(c, hw) = as_matrix(x.data(), c, hw).array().colwise() * gate.data();
  return make_result(std::move(out), {x, gate}, [x, gate, c, hw](const ArrayX<S>& g) {
    auto G = as_matrix(g, c, hw).array();
    if (x.requires_grad()) as_matrix(x.node()->grad_buffer(), c, hw).array() += G.colwise() * gate.data();
    if (gate.requires_grad())
      gate.node()->grad_buffer() += (G * as_matrix(x.data(), c, hw).array()).rowwise().sum();
  });
}

template <typename S>
Var<S> spatial_gate(const Var<S>& x, const Var<S>& gate) {
  require_rank(x.shape(), 3, "spatial_gate");
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (gate.size() != hw) throw InputShapeError("spatial_gate: gate size mismatch");
  Tensor<S> out(x.shape());
  out.matrix(c, hw) = as_matrix(x.data(), c, hw).array().rowwise() * gate.data().transpose();
  return make_result(std::move(out), {x, gate}, [x, gate, c, hw](const ArrayX<S>& g) {
    auto G = as_matrix(g, c, hw).array();
    if (x.requires_grad()) as_matrix(x.node()->grad_buffer(), c, hw).array() += G.rowwise() * gate.data().transpose();
    if (gate.requires_grad())
      gate.node()->grad_buffer() += (G * as_matrix(x.data(), c, hw).array()).colwise().sum().transpose();
  });
}

template <typename S>
MatrixR<S> bilinear_matrix(Index in, Index out) {
  MatrixR<S> r = MatrixR<S>::Zero(out, in);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    r(o, i0) += S(1.0 - frac);
    r(o, i1) += S(frac);
  }
  return r;
}

template <typename S>
Var<S> resize_bilinear(const Var<S>& x, Index out_h, Index out_w) {
  require_rank(x.shape(), 3, "resize_bilinear");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  MatrixR<S> ry = bilinear_matrix<S>(h, out_h);
  MatrixR<S> rx = bilinear_matrix<S>(w, out_w);
  Tensor<S> out({c, out_h, out_w});
  for (Index ci = 0; ci < c; ++ci) {
    Eigen::Map<MatrixR<S>> dst(out.data.data() + ci * out_h * out_w, out_h, out_w);
    CMapR<S> src(x.data().data() + ci * h * w, h, w);
    dst.noalias() = ry * src * rx.transpose();
  }
  return make_result(std::move(out), {x}, [x, ry, rx, c, h, w, out_h, out_w](const ArrayX<S>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->grad_buffer();
    for (Index ci = 0; ci < c; ++ci) {
      Eigen::Map<MatrixR<S>> dst(gx.data() + ci * h * w, h, w);
      CMapR<S> src(g.data() + ci * out_h * out_w, out_h, out_w);
      dst.noalias() += ry.transpose() * src * rx;
    }
  });
}

// ---- attention ----------------------------------------------------------------

namespace {

template <typename S>
struct AttentionGeometry {
  Index groups, heads, tokens, head_dim;
};

template <typename S>
AttentionGeometry<S> check_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const AttentionOptions<S>& o) {
  require_rank(q.shape(), 2, "attention q");
  require_same_shape(q.shape(), k.shape(), "attention q/k");
  require_same_shape(q.shape(), v.shape(), "attention q/v");
  if (o.groups < 1 || o.heads < 1) throw InputShapeError("attention: groups and heads must be positive");
  if (q.dim(0) % o.groups) throw InputShapeError("attention: token count not divisible by groups");
  if (q.dim(1) % o.heads) throw InputShapeError("attention: channels not divisible by heads");
  AttentionGeometry<S> geo{o.groups, o.heads, q.dim(0) / o.groups, q.dim(1) / o.heads};
  const Index a = geo.tokens;
  if (o.cosine && (!o.logit_scale.defined() || o.logit_scale.size() != o.heads))
    throw InputShapeError("attention: cosine mode needs one logit scale per head");
  if (o.bias.defined() && o.bias.size() != o.heads * a * a) throw InputShapeError("attention: bias shape mismatch");
  if (o.mask && o.mask->size() != o.groups * a * a) throw InputShapeError("attention: mask shape mismatch");
  return geo;
}

// Logits for one (group, head) block. Fills `cos` with the raw cosine matrix in cosine mode.
template <typename S>
MatrixR<S> attention_logits(const MatrixR<S>& Q, const MatrixR<S>& K, Index g, Index h, const AttentionOptions<S>& o,
                            MatrixR<S>* cos, MatrixR<S>* denom) {
  const Index a = Q.rows();
  MatrixR<S> logits;
  if (o.cosine) {
    ArrayX<S> qn = Q.rowwise().norm().array();
    ArrayX<S> kn = K.rowwise().norm().array();
    MatrixR<S> d = (qn.matrix() * kn.matrix().transpose()).array().max(o.eps).matrix();
    MatrixR<S> c = (Q * K.transpose()).array() / d.array();
    const S sc = std::exp(std::min(o.logit_scale.data()(h), o.max_logit_scale));
    logits = c * sc;
    if (cos) *cos = std::move(c);
    if (denom) *denom = std::move(d);
  } else {
    logits = (Q * K.transpose()) / std::sqrt(S(Q.cols()));
  }
  if (o.bias.defined()) logits += CMapR<S>(o.bias.data().data() + h * a * a, a, a);
  if (o.mask) logits += CMapR<S>(o.mask->data.data() + g * a * a, a, a);
  return logits;
}

template <typename S>
void softmax_rows(MatrixR<S>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const S mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace

template <typename S>
Tensor<S> attention_weights(const Var<S>& q, const Var<S>& k, const AttentionOptions<S>& options) {
  const auto geo = check_attention(q, k, q, options);
  const Index a = geo.tokens, d = geo.head_dim, cols = q.dim(1);
  auto Qa = as_matrix(q.data(), q.dim(0), cols);
  auto Ka = as_matrix(k.data(), k.dim(0), cols);
  Tensor<S> out({geo.groups, geo.heads, a, a});
  for (Index g = 0; g < geo.groups; ++g)
    for (Index h = 0; h < geo.heads; ++h) {
      MatrixR<S> Q = Qa.block(g * a, h * d, a, d);
      MatrixR<S> K = Ka.block(g * a, h * d, a, d);
      MatrixR<S> p = attention_logits(Q, K, g, h, options, static_cast<MatrixR<S>*>(nullptr), static_cast<MatrixR<S>*>(nullptr));
      softmax_rows(p);
      Eigen::Map<MatrixR<S>>(out.data.data() + (g * geo.heads + h) * a * a, a, a) = p;
    }
  return out;
}

template <typename S>
Var<S> attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const AttentionOptions<S>& options) {
  const auto geo = check_attention(q, k, v, options);
  const Index a = geo.tokens, d = geo.head_dim, rows = q.dim(0), cols = q.dim(1);
  const Index blocks = geo.groups * geo.heads;
  auto Qa = as_matrix(q.data(), rows, cols);
  auto Ka = as_matrix(k.data(), rows, cols);
  auto Va = as_matrix(v.data(), rows, cols);

  std::vector<MatrixR<S>> probs(static_cast<std::size_t>(blocks));
  std::vector<MatrixR<S>> cosines(options.cosine ? static_cast<std::size_t>(blocks) : 0);
  std::vector<MatrixR<S>> denoms(options.cosine ? static_cast<std::size_t>(blocks) : 0);
  Tensor<S> out({rows, cols});
  auto O = out.matrix(rows, cols);
  for (Index g = 0; g < geo.groups; ++g)
    for (Index h = 0; h < geo.heads; ++h) {
      const auto b = static_cast<std::size_t>(g * geo.heads + h);
      MatrixR<S> Q = Qa.block(g * a, h * d, a, d);
      MatrixR<S> K = Ka.block(g * a, h * d, a, d);
      MatrixR<S> p = attention_logits(Q, K, g, h, options, options.cosine ? &cosines[b] : nullptr,
                                      options.cosine ? &denoms[b] : nullptr);
      softmax_rows(p);
      O.block(g * a, h * d, a, d).noalias() = p * Va.block(g * a, h * d, a, d);
      probs[b] = std::move(p);
    }

  std::vector<Var<S>> inputs{q, k, v};
  if (options.cosine) inputs.push_back(options.logit_scale);
  if (options.bias.defined()) inputs.push_back(options.bias);
  return make_result(
      std::move(out), inputs,
      [q, k, v, options, geo, probs = std::move(probs), cosines = std::move(cosines), denoms = std::move(denoms), rows,
       cols](const ArrayX<S>& grad) {
        const Index a = geo.tokens, d = geo.head_dim;
        auto G = as_matrix(grad, rows, cols);
        auto Qa = as_matrix(q.data(), rows, cols);
        auto Ka = as_matrix(k.data(), rows, cols);
        auto Va = as_matrix(v.data(), rows, cols);
        MatrixR<S> gq = MatrixR<S>::Zero(rows, cols), gk = MatrixR<S>::Zero(rows, cols), gv = MatrixR<S>::Zero(rows, cols);
        ArrayX<S> gscale = ArrayX<S>::Zero(geo.heads);
        ArrayX<S> gbias = options.bias.defined() ? ArrayX<S>::Zero(options.bias.size()) : ArrayX<S>();
        for (Index g = 0; g < geo.groups; ++g)
          for (Index h = 0; h < geo.heads; ++h) {
            const auto b = static_cast<std::size_t>(g * geo.heads + h);
            const MatrixR<S>& P = probs[b];
            MatrixR<S> dO = G.block(g * a, h * d, a, d);
            MatrixR<S> V = Va.block(g * a, h * d, a, d);
            gv.block(g * a, h * d, a, d).noalias() += P.transpose() * dO;
            MatrixR<S> dP = dO * V.transpose();
            ArrayX<S> rowdot = (dP.array() * P.array()).rowwise().sum();
            MatrixR<S> dL = (P.array() * (dP.array().colwise() - rowdot)).matrix();
            if (options.bias.defined()) Eigen::Map<MatrixR<S>>(gbias.data() + h * a * a, a, a) += dL;
            MatrixR<S> Q = Qa.block(g * a, h * d, a, d);
            MatrixR<S> K = Ka.block(g * a, h * d, a, d);
            if (options.cosine) {
              const S raw = options.logit_scale.data()(h);
              const S sc = std::exp(std::min(raw, options.max_logit_scale));
              const MatrixR<S>& C = cosines[b];
              const MatrixR<S>& D = denoms[b];
              if (raw < options.max_logit_scale) gscale(h) += sc * (dL.array() * C.array()).sum();
              MatrixR<S> dC = dL * sc;
              ArrayX<S> qn2 = Q.rowwise().squaredNorm().array();
              ArrayX<S> kn2 = K.rowwise().squaredNorm().array();
              // Entries whose norm product hit the eps floor have a constant denominator.
              MatrixR<S> live = (D.array() > options.eps).template cast<S>().matrix();
              MatrixR<S> U = dC.array() / D.array();
              MatrixR<S> W = (dC.array() * C.array() * live.array()).matrix();
              ArrayX<S> rq = W.rowwise().sum().array() / qn2.max(std::numeric_limits<S>::min());
              ArrayX<S> rk = W.colwise().sum().transpose().array() / kn2.max(std::numeric_limits<S>::min());
              gq.block(g * a, h * d, a, d) += U * K - (Q.array().colwise() * rq).matrix();
              gk.block(g * a, h * d, a, d) += U.transpose() * Q - (K.array().colwise() * rk).matrix();
            } else {
              const S inv = S(1) / std::sqrt(S(d));
              gq.block(g * a, h * d, a, d) += (dL * K) * inv;
              gk.block(g * a, h * d, a, d) += (dL.transpose() * Q) * inv;
            }
          }
        q.accumulate(Eigen::Map<const ArrayX<S>>(gq.data(), gq.size()));
        k.accumulate(Eigen::Map<const ArrayX<S>>(gk.data(), gk.size()));
        v.accumulate(Eigen::Map<const ArrayX<S>>(gv.data(), gv.size()));
        if (options.cosine) options.logit_scale.accumulate(gscale);
        if (options.bias.defined()) options.bias.accumulate(gbias);
      });
}

template <typename S>
Var<S> shift_aggregate(const Var<S>& q, const Var<S>& k, const Var<S>& v, const Var<S>& mix, const Var<S>& kernel) {
  require_rank(q.shape(), 3, "shift_aggregate");
  require_same_shape(q.shape(), k.shape(), "shift_aggregate q/k");
  require_same_shape(q.shape(), v.shape(), "shift_aggregate q/v");
  const Index c = q.dim(0), h = q.dim(1), w = q.dim(2), hw = h * w;
  if (mix.size() != 27) throw InputShapeError("shift_aggregate: mix must be 9x3");
  if (kernel.size() != c * 9) throw InputShapeError("shift_aggregate: kernel must be Cx9");
  const std::array<const ArrayX<S>*, 3> groups{&q.data(), &k.data(), &v.data()};
  auto A = as_matrix(mix.data(), 9, 3);
  auto K = as_matrix(kernel.data(), c, 9);

  // m[s] = Σ_g A[s,g]·P_g, one C×HW map per shift.
  std::vector<ArrayX<S>> m(9);
  for (Index s = 0; s < 9; ++s)
    m[static_cast<std::size_t>(s)] = A(s, 0) * *groups[0] + A(s, 1) * *groups[1] + A(s, 2) * *groups[2];

  Tensor<S> out({c, h, w});
  for (Index s = 0; s < 9; ++s) {
    const Index dy = s / 3 - 1, dx = s % 3 - 1;
    const ArrayX<S>& ms = m[static_cast<std::size_t>(s)];
    for (Index ci = 0; ci < c; ++ci) {
      const S kw = K(ci, s);
      if (kw == S(0)) continue;
      for (Index y = 0; y < h; ++y) {
        const Index sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (Index x = 0; x < w; ++x) {
          const Index sx = x + dx;
          if (sx < 0 || sx >= w) continue;
          out.data(ci * hw + y * w + x) += kw * ms(ci * hw + sy * w + sx);
        }
      }
    }
  }
  return make_result(std::move(out), {q, k, v, mix, kernel},
                     [q, k, v, mix, kernel, m = std::move(m), c, h, w, hw](const ArrayX<S>& g) {
                       auto A = as_matrix(mix.data(), 9, 3);
                       auto K = as_matrix(kernel.data(), c, 9);
                       ArrayX<S> gk = ArrayX<S>::Zero(c * 9);
                       std::array<ArrayX<S>, 3> gp{ArrayX<S>::Zero(c * hw), ArrayX<S>::Zero(c * hw),
                                                   ArrayX<S>::Zero(c * hw)};
                       ArrayX<S> gmix = ArrayX<S>::Zero(27);
                       const std::array<const ArrayX<S>*, 3> groups{&q.data(), &k.data(), &v.data()};
                       for (Index s = 0; s < 9; ++s) {
                         const Index dy = s / 3 - 1, dx = s % 3 - 1;
                         const ArrayX<S>& ms = m[static_cast<std::size_t>(s)];
                         ArrayX<S> dm = ArrayX<S>::Zero(c * hw);
                         for (Index ci = 0; ci < c; ++ci) {
                           const S kw = K(ci, s);
                           S acc = 0;
                           for (Index y = 0; y < h; ++y) {
                             const Index sy = y + dy;
                             if (sy < 0 || sy >= h) continue;
                             for (Index x = 0; x < w; ++x) {
                               const Index sx = x + dx;
                               if (sx < 0 || sx >= w) continue;
                               const S go = g(ci * hw + y * w + x);
                               acc += go * ms(ci * hw + sy * w + sx);
                               dm(ci * hw + sy * w + sx) += kw * go;
                             }
                           }
                           gk(ci * 9 + s) += acc;
                         }
                         for (Index gi = 0; gi < 3; ++gi) {
                           gmix(s * 3 + gi) += (dm * *groups[static_cast<std::size_t>(gi)]).sum();
                           gp[static_cast<std::size_t>(gi)] += A(s, gi) * dm;
                         }
                       }
                       q.accumulate(gp[0]);
                       k.accumulate(gp[1]);
                       v.accumulate(gp[2]);
                       mix.accumulate(gmix);
                       kernel.accumulate(gk);
                     });
}

#define IDNA_INSTANTIATE_OPS(S)                                                                                 \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                           \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                           \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                           \
  template Var<S> scale(const Var<S>&, S);                                                                     \
  template Var<S> relu(const Var<S>&);                                                                         \
  template Var<S> gelu(const Var<S>&);                                                                         \
  template Var<S> sigmoid(const Var<S>&);                                                                      \
  template Var<S> sum(const Var<S>&);                                                                          \
  template Var<S> reshape(const Var<S>&, Shape);                                                               \
  template Var<S> transpose(const Var<S>&, Index);                                                             \
  template Var<S> concat(const std::vector<Var<S>>&);                                                          \
  template Var<S> slice(const Var<S>&, Index, Index);                                                          \
  template Var<S> slice_cols(const Var<S>&, Index, Index);                                                     \
  template Var<S> gather(const Var<S>&, const std::vector<Index>&, Shape);                                     \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                                        \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                         \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, Index, Index);                           \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                                  \
  template Var<S> group_norm(const Var<S>&, const Var<S>&, const Var<S>&, Index, S);                           \
  template Var<S> max_pool2(const Var<S>&);                                                                    \
  template Var<S> global_avg_pool(const Var<S>&);                                                              \
  template Var<S> global_max_pool(const Var<S>&);                                                              \
  template Var<S> channel_mean(const Var<S>&);                                                                 \
  template Var<S> channel_max(const Var<S>&);                                                                  \
  template Var<S> channel_gate(const Var<S>&, const Var<S>&);                                                  \
  template Var<S> spatial_gate(const Var<S>&, const Var<S>&);                                                  \
  template MatrixR<S> bilinear_matrix<S>(Index, Index);                                                        \
  template Var<S> resize_bilinear(const Var<S>&, Index, Index);                                                \
  template Var<S> attention(const Var<S>&, const Var<S>&, const Var<S>&, const AttentionOptions<S>&);          \
  template Tensor<S> attention_weights(const Var<S>&, const Var<S>&, const AttentionOptions<S>&);              \
  template Var<S> shift_aggregate(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&);

IDNA_INSTANTIATE_OPS(float)
IDNA_INSTANTIATE_OPS(double)

}  // namespace idna
