// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "temf/rng.hpp"
#include "temf/tape.hpp"

namespace temf {

/// Named trainable tensors in registration order. The order is part of the
/// checkpoint format and of the optimizer state layout.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor add(std::string name, Tensor tensor);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::optional<Tensor> find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grads();
  std::vector<Tensor> tensors() const;

 private:
  std::vector<Entry> entries_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)). A rank-1 shape [d] is treated
/// as [1 x d].
Tensor xavier_uniform(const Shape& shape, Rng& rng);

/// PE[pos, 2k] = sin(pos / 10000^(2k/D)), PE[pos, 2k+1] = cos(same).
Tensor sinusoidal_pe(std::size_t length, std::size_t dim);

/// Training-time switches shared by every layer in a forward pass.
struct LayerContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  bool dropout_active() const { return training && dropout > 0.0 && rng != nullptr; }
};

enum class Activation { none, relu, softmax };

struct Dense {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Dense create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  /// activation(x W + b). Rank-1 x is treated as a single row and the
  /// result is rank-1 as well.
  Tensor forward(Tape& tape, const Tensor& x, Activation act = Activation::none) const;
};

/// Pre-norm transformer encoder block:
///   X' = X + MHA(LN1(X));  out = X' + FFN(LN2(X'))
/// Scaled dot-product heads (scale 1/sqrt(D/h)); padding keys get weight 0.
struct TransformerBlock {
  std::vector<Tensor> wq, wk, wv;  // per head [D x D/h]
  Tensor wo;                       // [D x D]
  Dense ffn_in;                    // D -> F
  Dense ffn_out;                   // F -> D
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::size_t heads = 1;

  static constexpr double kLayerNormEps = 1e-5;

  static TransformerBlock create(ParameterSet& params, const std::string& name, std::size_t dim,
                                 std::size_t heads, std::size_t ffn_dim, Rng& rng);

  /// `attention` receives one [c x c] weight matrix per head when non-null.
  Tensor forward(Tape& tape, const Tensor& x, const Mask& mask, const LayerContext& ctx,
                 std::vector<Tensor>* attention = nullptr) const;

  std::size_t dim() const { return wo.dim(0); }
};

/// Blocks applied in sequence, then a final layer norm: the pre-norm
/// residual stream is otherwise never normalised. No blocks, no norm.
struct TransformerStack {
  std::vector<TransformerBlock> blocks;
  Tensor final_gain, final_bias;

  static TransformerStack create(ParameterSet& params, const std::string& name, std::size_t layers, std::size_t dim,
                                 std::size_t heads, std::size_t ffn_dim, Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x, const Mask& mask, const LayerContext& ctx) const;
};

/// gamma_i = W3 . tanh(W1 q + W2 k_i); alpha = softmax over real positions;
/// context = sum_i alpha_i k_i.
struct AdditiveAttention {
  Tensor w1;  // [A x Dq]
  Tensor w2;  // [A x Dk]
  Tensor w3;  // [A]

  struct Output {
    Tensor weights;  // [c]
    Tensor context;  // [Dk]
  };

  static AdditiveAttention create(ParameterSet& params, const std::string& name, std::size_t query_dim,
                                  std::size_t key_dim, std::size_t attention_dim, Rng& rng);

  Output forward(Tape& tape, const Tensor& query, const Tensor& keys, const Mask& mask) const;
};

struct AdamConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a ParameterSet. Parameters without an
/// accumulated gradient are updated as if their gradient were zero.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update from the parameters' current gradient slots.
  /// Throws NumericError naming the first parameter with a non-finite
  /// gradient; no parameter is modified in that case.
  void step(ParameterSet& params);

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace temf
