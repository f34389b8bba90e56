#include "volimp/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

namespace volimp::nd {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

Var Tape::input(Tensor value) {
  ensure_finite(value, "tape input");
  nodes_.push_back(Node{std::move(value), Tensor(), BackFn()});
  return static_cast<Var>(nodes_.size() - 1);
}

Var Tape::emit(Tensor value, const char* op, BackFn back) {
  ensure_finite(value, op);
  nodes_.push_back(Node{std::move(value), Tensor(), std::move(back)});
  return static_cast<Var>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v)];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::add_grad(Var v, const Tensor& g) {
  Tensor& buf = grad_buf(v);
  require_same_shape(buf, g, "gradient accumulation");
  double* d = buf.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < buf.size(); ++i) d[i] += s[i];
}

const Tensor& Tape::grad(Var v) { return grad_buf(v); }

void Tape::backward(Var output) {
  const Tensor& out = nodes_[static_cast<std::size_t>(output)].value;
  if (out.size() != 1) {
    throw DimensionError("backward() requires a scalar output, got " + shape_str(out.shape()));
  }
  for (auto& n : nodes_) {
    if (!n.grad.empty()) std::fill(n.grad.raw().begin(), n.grad.raw().end(), 0.0);
  }
  grad_buf(output)[0] = 1.0;
  for (Var v = output; v >= 0; --v) {
    Node& n = nodes_[static_cast<std::size_t>(v)];
    if (n.back && !n.grad.empty()) n.back(*this, v);
  }
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Var elementwise_binary(Tape& t, Var a, Var b, const char* op, Fwd fwd, Bwd bwd) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  require_same_shape(A, B, op);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(A[i], B[i]);
  return t.emit(std::move(out), op, [a, b, bwd](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    const Tensor& Y = t.val(self);
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto [da, db] = bwd(A[i], B[i], Y[i]);
      ga[i] += g[i] * da;
      gb[i] += g[i] * db;
    }
  });
}

template <typename Fwd, typename Bwd>
Var elementwise_unary(Tape& t, Var a, const char* op, Fwd fwd, Bwd bwd) {
  const Tensor& A = t.val(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(A[i]);
  return t.emit(std::move(out), op, [a, bwd](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.val(a);
    const Tensor& Y = t.val(self);
    Tensor& ga = t.grad_buf(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(A[i], Y[i]);
  });
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  return elementwise_binary(
      t, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Tape& t, Var a, Var b) {
  return elementwise_binary(
      t, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Tape& t, Var a, Var b) {
  return elementwise_binary(
      t, a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double) { return std::pair{y, x}; });
}

Var div(Tape& t, Var a, Var b) {
  return elementwise_binary(
      t, a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var scale(Tape& t, Var a, double c) {
  return elementwise_unary(
      t, a, "scale", [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

Var add_const(Tape& t, Var a, double c) {
  return elementwise_unary(
      t, a, "add_const", [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Var square(Tape& t, Var a) {
  return elementwise_unary(
      t, a, "square", [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var log_e(Tape& t, Var a) {
  return elementwise_unary(
      t, a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var exp_e(Tape& t, Var a) {
  return elementwise_unary(
      t, a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var sigmoid(Tape& t, Var a) {
  return elementwise_unary(
      t, a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var swish(Tape& t, Var a) {
  return elementwise_unary(
      t, a, "swish", [](double x) { return x * stable_sigmoid(x); },
      [](double x, double) {
        double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var softplus(Tape& t, Var a) {
  return elementwise_unary(
      t, a, "softplus", [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var mul_mask(Tape& t, Var a, const Tensor& mask) {
  const Tensor& A = t.val(a);
  require_same_shape(A, mask, "mul_mask");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * mask[i];
  return t.emit(std::move(out), "mul_mask", [a, mask](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buf(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var matmul_nt(Tape& t, Var x, Var w) {
  const Tensor& X = t.val(x);
  const Tensor& W = t.val(w);
  if (X.ndim() != 2 || W.ndim() != 2 || X.cols() != W.cols()) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(X.shape()) + " and " +
                         shape_str(W.shape()));
  }
  const int n = X.rows(), d = X.cols(), o = W.rows();
  Tensor out({n, o});
  for (int i = 0; i < n; ++i) {
    const double* xi = X.data() + static_cast<std::size_t>(i) * d;
    double* oi = out.data() + static_cast<std::size_t>(i) * o;
    for (int j = 0; j < o; ++j) {
      const double* wj = W.data() + static_cast<std::size_t>(j) * d;
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += xi[k] * wj[k];
      oi[j] = acc;
    }
  }
  return t.emit(std::move(out), "matmul_nt", [x, w, n, d, o](Tape& t, Var self) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.val(x);
    const Tensor& W = t.val(w);
    Tensor& gx = t.grad_buf(x);
    Tensor& gw = t.grad_buf(w);
    for (int i = 0; i < n; ++i) {
      const double* gi = G.data() + static_cast<std::size_t>(i) * o;
      const double* xi = X.data() + static_cast<std::size_t>(i) * d;
      double* gxi = gx.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < o; ++j) {
        const double g = gi[j];
        if (g == 0.0) continue;
        const double* wj = W.data() + static_cast<std::size_t>(j) * d;
        double* gwj = gw.data() + static_cast<std::size_t>(j) * d;
        for (int k = 0; k < d; ++k) {
          gxi[k] += g * wj[k];
          gwj[k] += g * xi[k];
        }
      }
    }
  });
}

Var add_rowvec(Tape& t, Var x, Var b) {
  const Tensor& X = t.val(x);
  const Tensor& B = t.val(b);
  if (X.ndim() != 2 || B.ndim() != 1 || B.dim(0) != X.cols()) {
    throw DimensionError("add_rowvec: incompatible shapes " + shape_str(X.shape()) + " and " +
                         shape_str(B.shape()));
  }
  const int n = X.rows(), o = X.cols();
  Tensor out({n, o});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) out.at(i, j) = X.at(i, j) + B[static_cast<std::size_t>(j)];
  return t.emit(std::move(out), "add_rowvec", [x, b, n, o](Tape& t, Var self) {
    const Tensor& G = t.grad(self);
    Tensor& gx = t.grad_buf(x);
    Tensor& gb = t.grad_buf(b);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < o; ++j) {
        double g = G.at(i, j);
        gx.at(i, j) += g;
        gb[static_cast<std::size_t>(j)] += g;
      }
  });
}

Var affine(Tape& t, Var x, Var w, Var b) { return add_rowvec(t, matmul_nt(t, x, w), b); }

Var layer_norm(Tape& t, Var x, Var gain, Var shift) {
  const Tensor& X = t.val(x);
  if (X.ndim() != 2 || X.cols() < 2) {
    throw DimensionError("layer_norm: need [n×h] input with h >= 2, got " +
                         shape_str(X.shape()));
  }
  const int n = X.rows(), h = X.cols();
  const Tensor& G = t.val(gain);
  const Tensor& S = t.val(shift);
  if (G.ndim() != 1 || G.dim(0) != h || S.ndim() != 1 || S.dim(0) != h) {
    throw DimensionError("layer_norm: gain/shift must be [h]");
  }
  Tensor out({n, h});
  Tensor xhat({n, h});
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int j = 0; j < h; ++j) mean += X.at(i, j);
    mean /= h;
    double var = 0.0;
    for (int j = 0; j < h; ++j) {
      double d = X.at(i, j) - mean;
      var += d * d;
    }
    var /= h;
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[static_cast<std::size_t>(i)] = inv;
    for (int j = 0; j < h; ++j) {
      double xh = (X.at(i, j) - mean) * inv;
      xhat.at(i, j) = xh;
      out.at(i, j) = xh * G[static_cast<std::size_t>(j)] + S[static_cast<std::size_t>(j)];
    }
  }
  return t.emit(std::move(out), "layer_norm",
                [x, gain, shift, n, h, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& t, Var self) {
    const Tensor& Gy = t.grad(self);
    const Tensor& G = t.val(gain);
    Tensor& gx = t.grad_buf(x);
    Tensor& gg = t.grad_buf(gain);
    Tensor& gs = t.grad_buf(shift);
    for (int i = 0; i < n; ++i) {
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (int j = 0; j < h; ++j) {
        double gy = Gy.at(i, j);
        double xh = xhat.at(i, j);
        gg[static_cast<std::size_t>(j)] += gy * xh;
        gs[static_cast<std::size_t>(j)] += gy;
        double dxh = gy * G[static_cast<std::size_t>(j)];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xh;
      }
      mean_dxhat /= h;
      mean_dxhat_xhat /= h;
      double inv = inv_std[static_cast<std::size_t>(i)];
      for (int j = 0; j < h; ++j) {
        double dxh = Gy.at(i, j) * G[static_cast<std::size_t>(j)];
        gx.at(i, j) += inv * (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
      }
    }
  });
}

Var dropout(Tape& t, Var x, double rate, bool training, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ParameterError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  const Tensor& X = t.val(x);
  if (!training || rate == 0.0) {
    // Identity; still a node so gradients flow.
    Tensor out = X;
    return t.emit(std::move(out), "dropout", [x](Tape& t, Var self) {
      t.add_grad(x, t.grad(self));
    });
  }
  Tensor keep(X.shape());
  const double inv_keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    keep[i] = rng.uniform() < rate ? 0.0 : inv_keep;
  }
  Tensor out(X.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * keep[i];
  return t.emit(std::move(out), "dropout", [x, keep = std::move(keep)](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
  });
}

Var sum_all(Tape& t, Var a) {
  const Tensor& A = t.val(a);
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
  return t.emit(Tensor::scalar(s), "sum_all", [a](Tape& t, Var self) {
    double g = t.grad(self)[0];
    Tensor& ga = t.grad_buf(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean_all(Tape& t, Var a) {
  const std::size_t n = t.val(a).size();
  return scale(t, sum_all(t, a), 1.0 / static_cast<double>(n));
}

Var row_sum(Tape& t, Var a) {
  const Tensor& A = t.val(a);
  if (A.ndim() != 2) throw DimensionError("row_sum: need matrix, got " + shape_str(A.shape()));
  const int n = A.rows(), p = A.cols();
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < p; ++j) s += A.at(i, j);
    out[static_cast<std::size_t>(i)] = s;
  }
  return t.emit(std::move(out), "row_sum", [a, n, p](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buf(a);
    for (int i = 0; i < n; ++i) {
      double gi = g[static_cast<std::size_t>(i)];
      for (int j = 0; j < p; ++j) ga.at(i, j) += gi;
    }
  });
}

Var logsumexp_rows(Tape& t, Var a) {
  const Tensor& A = t.val(a);
  if (A.ndim() != 2) {
    throw DimensionError("logsumexp_rows: need matrix, got " + shape_str(A.shape()));
  }
  const int n = A.rows(), k = A.cols();
  Tensor out({n});
  Tensor softmax({n, k});
  for (int i = 0; i < n; ++i) {
    double m = A.at(i, 0);
    for (int j = 1; j < k; ++j) m = std::max(m, A.at(i, j));
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(A.at(i, j) - m);
    out[static_cast<std::size_t>(i)] = m + std::log(s);
    for (int j = 0; j < k; ++j) softmax.at(i, j) = std::exp(A.at(i, j) - m) / s;
  }
  return t.emit(std::move(out), "logsumexp_rows",
                [a, n, k, softmax = std::move(softmax)](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buf(a);
    for (int i = 0; i < n; ++i) {
      double gi = g[static_cast<std::size_t>(i)];
      for (int j = 0; j < k; ++j) ga.at(i, j) += gi * softmax.at(i, j);
    }
  });
}

Var tile_rows(Tape& t, Var a, int k) {
  const Tensor& A = t.val(a);
  if (A.ndim() != 2 || k < 1) {
    throw DimensionError("tile_rows: need matrix and k >= 1");
  }
  const int n = A.rows(), p = A.cols();
  Tensor out({n * k, p});
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < k; ++r)
      for (int j = 0; j < p; ++j) out.at(i * k + r, j) = A.at(i, j);
  return t.emit(std::move(out), "tile_rows", [a, n, p, k](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buf(a);
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < k; ++r)
        for (int j = 0; j < p; ++j) ga.at(i, j) += g.at(i * k + r, j);
  });
}

Var reshape(Tape& t, Var a, std::vector<int> shape) {
  const Tensor& A = t.val(a);
  if (shape_product(shape) != A.size()) {
    throw DimensionError("reshape: size mismatch " + shape_str(A.shape()) + " -> " +
                         shape_str(shape));
  }
  Tensor out(std::move(shape), A.raw());
  return t.emit(std::move(out), "reshape", [a](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buf(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var broadcast_rowvec(Tape& t, Var v, int n) {
  const Tensor& V = t.val(v);
  if (V.ndim() != 1) throw DimensionError("broadcast_rowvec: need vector");
  const int p = V.dim(0);
  Tensor out({n, p});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) out.at(i, j) = V[static_cast<std::size_t>(j)];
  return t.emit(std::move(out), "broadcast_rowvec", [v, n, p](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    Tensor& gv = t.grad_buf(v);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) gv[static_cast<std::size_t>(j)] += g.at(i, j);
  });
}

Var broadcast_scalar(Tape& t, Var s, std::vector<int> shape) {
  const Tensor& S = t.val(s);
  if (S.size() != 1) throw DimensionError("broadcast_scalar: need size-1 tensor");
  Tensor out = Tensor::full(std::move(shape), S[0]);
  return t.emit(std::move(out), "broadcast_scalar", [s](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
    Tensor& gs = t.grad_buf(s);
    gs[0] += acc;
  });
}

double gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  std::vector<Tensor> xs{x};
  return gradcheck_multi(
      [&f](Tape& t, const std::vector<Var>& vs) { return f(t, vs[0]); }, xs, h);
}

double gradcheck_multi(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                       const std::vector<Tensor>& xs, double h) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(xs.size());
  for (const Tensor& x : xs) vars.push_back(tape.input(x));
  Var y = f(tape, vars);
  tape.backward(y);
  std::vector<Tensor> analytic;
  analytic.reserve(xs.size());
  for (Var v : vars) analytic.push_back(tape.grad(v));

  auto eval = [&f](const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<Var> vs;
    vs.reserve(inputs.size());
    for (const Tensor& in : inputs) vs.push_back(t.input(in));
    return t.val(f(t, vs)).item();
  };

  double worst = 0.0;
  std::vector<Tensor> work = xs;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    for (std::size_t i = 0; i < xs[t].size(); ++i) {
      const double orig = work[t][i];
      work[t][i] = orig + h;
      double fp = eval(work);
      work[t][i] = orig - h;
      double fm = eval(work);
      work[t][i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[t][i];
      double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace volimp::nd
