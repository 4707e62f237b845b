#pragma once

#include "tocoad/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace tocoad::ag {

// Reverse-mode tape. Every op result keeps its inputs alive only when at
// least one of them requires a gradient; otherwise the result is a constant
// leaf and no graph is recorded.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Accumulates into grad, allocating on first use.
  void accumulate(const Eigen::ArrayXd& g);
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value, bool trainable = true);
// Stop-gradient: same value, no path back to the producer.
Var detach(const Var& v);

// Seeds d(root)/d(root) = 1 (root must be a scalar) and runs the tape.
void backward(const Var& root);

Scalar item(const Var& v);

// --- ops -----------------------------------------------------------------

// weight: (out, in, k, k); bias: (1, out, 1, 1) or null.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& a, Scalar s);
Var concat_channels(const std::vector<Var>& parts);
// Bilinear resampling with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, Index out_h, Index out_w);
// (n, c, h, w) -> (n, c, 1, 1)
Var global_avg_pool(const Var& x);
// x: (n, in, 1, 1); weight: (out, in, 1, 1); bias: (1, out, 1, 1) or null.
Var linear(const Var& x, const Var& weight, const Var& bias);
// Batch-statistics normalization per feature of a (n, d, 1, 1) input.
// gamma/beta may be null for a non-affine layer.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Scalar eps = 1e-5);

// Mean over pixels of -alpha_t (1 - p_t)^gamma log(max(p_t, floor)).
// logits: (n, 2, h, w); target: (n, 1, h, w) with values in {0, 1}.
// alpha_anomalous weights class 1; class 0 gets 1 - alpha_anomalous unless
// unit_alpha is set, in which case alpha_t = 1 for both classes.
struct FocalSpec {
  Scalar alpha_anomalous = 0.75;
  Scalar gamma = 2.0;
  bool unit_alpha = false;
  Scalar prob_floor = 1e-7;
};
Var focal_loss(const Var& logits, const Tensor& target, const FocalSpec& spec);

// Mean over the batch of -(p/|p|).(z/|z|), rows of (n, d, 1, 1) inputs.
// Throws NumericError if any row has zero norm.
Var negative_cosine(const Var& p, const Var& z);

}  // namespace tocoad::ag
