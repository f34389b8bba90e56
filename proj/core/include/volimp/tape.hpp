#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "volimp/rng.hpp"
#include "volimp/tensor.hpp"

namespace volimp::nd {

using Var = std::int32_t;

/// Reverse-mode tape over Tensor values. Build a forward computation with the
/// free functions below, call backward() on a scalar output, then read
/// gradients back per recorded node. The tape is single-owner and cleared (or
/// discarded) between training steps. Every op validates that its output is
/// finite; NaN/Inf surfaces as NumericError instead of propagating silently.
class Tape {
 public:
  /// Record a leaf whose gradient will be tracked.
  Var input(Tensor value);
  /// Alias of input(); used for values that are data rather than parameters.
  Var constant(Tensor value) { return input(std::move(value)); }

  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
  /// Gradient of the last backward() output with respect to node v.
  /// Zero-filled if v did not contribute.
  const Tensor& grad(Var v);

  /// Run reverse accumulation from a scalar (size-1) output. Resets any
  /// gradients from a previous call, so multiple backward passes over one
  /// forward graph are allowed.
  void backward(Var output);

  void clear();
  std::size_t node_count() const { return nodes_.size(); }

  // --- op plumbing ---
  using BackFn = std::function<void(Tape&, Var)>;
  Var emit(Tensor value, const char* op, BackFn back);
  void add_grad(Var v, const Tensor& g);
  Tensor& grad_buf(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    BackFn back;  // empty for leaves
  };
  std::vector<Node> nodes_;
};

// ---- elementwise ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var div(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var scale(Tape& t, Var a, double c);
Var add_const(Tape& t, Var a, double c);
Var square(Tape& t, Var a);
Var log_e(Tape& t, Var a);
Var exp_e(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var swish(Tape& t, Var a);
Var softplus(Tape& t, Var a);
/// Elementwise product with a constant 0/1 mask (not differentiated through).
Var mul_mask(Tape& t, Var a, const Tensor& mask);

// ---- linear algebra ----
/// x:[n×d] times w:[o×d] transposed -> [n×o]; row i equals w · x_i.
Var matmul_nt(Tape& t, Var x, Var w);
/// x:[n×o] plus row vector b:[o].
Var add_rowvec(Tape& t, Var x, Var b);
Var affine(Tape& t, Var x, Var w, Var b);

// ---- normalization / regularization ----
inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Tape& t, Var x, Var gain, Var shift);
/// Inverted dropout: identity when !training; otherwise zeroes entries with
/// probability rate and scales survivors by 1/(1-rate).
Var dropout(Tape& t, Var x, double rate, bool training, RngStream& rng);

// ---- reductions / shape ----
Var sum_all(Tape& t, Var a);   // -> [1]
Var mean_all(Tape& t, Var a);  // -> [1]
Var row_sum(Tape& t, Var a);   // [n×p] -> [n]
/// Stable log-sum-exp along each row: [n×k] -> [n].
Var logsumexp_rows(Tape& t, Var a);
/// Repeat each row k consecutive times: [n×p] -> [n*k×p].
Var tile_rows(Tape& t, Var a, int k);
Var reshape(Tape& t, Var a, std::vector<int> shape);
Var broadcast_rowvec(Tape& t, Var v, int n);                   // [p] -> [n×p]
Var broadcast_scalar(Tape& t, Var s, std::vector<int> shape);  // [1] -> shape

// ---- gradient checking ----
/// Compares the tape gradient of a scalar function against central
/// differences; returns max over coordinates of |a-n| / max(1, |a|, |n|).
double gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h);
/// Same over a list of inputs perturbed jointly (one coordinate at a time).
double gradcheck_multi(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                       const std::vector<Tensor>& xs, double h);

}  // namespace volimp::nd
