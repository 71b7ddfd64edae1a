// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "temf/kernels.hpp"
#include "temf/tensor.hpp"

namespace temf {

/// Boolean position mask; true marks a real (non-padding) position.
using Mask = std::vector<bool>;

/// Records differentiable operations and replays their backward rules.
///
/// Every op is a Tape member so the graph lives in one place. An output
/// requires a gradient when the tape is recording and at least one input
/// does; only such ops are recorded. A non-recording tape is a plain
/// forward evaluator (inference, finite differences).
///
/// Conventions:
///   - "leading-axis broadcast": the second operand of add/sub/mul may have
///     the trailing shape of the first and is repeated along leading axes.
///   - relu'(0) = 0.
///   - max_pool routes the gradient to the first maximal position.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = seed and runs every recorded backward rule
  /// once, newest first. Returns the number of rules executed.
  std::size_t backward(const Tensor& loss, double seed = 1.0);

  // Linear algebra.
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor reshape(const Tensor& a, Shape shape);

  // Elementwise.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor tanh(const Tensor& a);
  Tensor relu(const Tensor& a);

  // Normalization.
  Tensor softmax(const Tensor& x, std::size_t axis);
  /// Softmax over the last axis; masked entries are exactly 0.
  Tensor masked_softmax(const Tensor& x, const Mask& mask);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

  // Reductions. The reduced axis is removed; a full reduction yields shape [1].
  Tensor sum(const Tensor& x, std::size_t axis);
  Tensor sum_all(const Tensor& x);
  Tensor mean(const Tensor& x, std::size_t axis, const Mask* mask = nullptr);
  Tensor max_pool(const Tensor& x, std::size_t axis, const Mask* mask = nullptr);

  // Structure.
  Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
  Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
  /// Rows of `table` [V x D]; index -1 selects `fallback` [D].
  Tensor gather_rows(const Tensor& table, std::span<const long> indices, const Tensor& fallback);
  /// Inverted dropout; identity when rate == 0.
  Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

  // Losses. Both return shape [1].
  /// -log(max(probs[target], 1e-12)); probs must sum to 1 within 1e-6.
  Tensor cross_entropy(const Tensor& probs, std::size_t target);
  /// Sum of squared differences.
  Tensor squared_error(const Tensor& a, const Tensor& b);
  /// Mean of squared differences.
  Tensor mean_squared_error(const Tensor& a, const Tensor& b);

  /// Appends a backward rule for an op computed outside the tape.
  void record(std::string op, std::function<void()> backward);
  bool needs_grad(std::initializer_list<const Tensor*> inputs) const;

 private:
  struct Node {
    std::string op;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool recording_;
};

}  // namespace temf
