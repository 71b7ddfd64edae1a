// SPDX-License-Identifier: Apache-2.0
#include "temf/layers.hpp"

#include <algorithm>
#include <cmath>

#include "temf/errors.hpp"

namespace temf {

Tensor ParameterSet::add(std::string name, Tensor tensor) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  tensor.set_requires_grad(true);
  entries_.push_back({std::move(name), tensor});
  return tensor;
}

std::optional<Tensor> ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  return std::nullopt;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParameterSet::zero_grads() {
  for (auto& e : entries_) e.tensor.drop_grad();
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

Tensor xavier_uniform(const Shape& shape, Rng& rng) {
  const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[0]) : 1.0;
  const double fan_out = static_cast<double>(shape.back());
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = u(rng);
  return t;
}

Tensor sinusoidal_pe(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0) throw ContractError("sinusoidal_pe: dimension must be even, got " + std::to_string(dim));
  Tensor pe({length, dim});
  auto out = pe.mutable_data();
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t k = 0; k < dim / 2; ++k) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(dim));
      out[pos * dim + 2 * k] = std::sin(angle);
      out[pos * dim + 2 * k + 1] = std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------- Dense

Dense Dense::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Dense d;
  d.weight = params.add(name + ".weight", xavier_uniform({in, out}, rng));
  d.bias = params.add(name + ".bias", Tensor::zeros({out}));
  return d;
}

Tensor Dense::forward(Tape& tape, const Tensor& x, Activation act) const {
  const bool vector_in = x.rank() == 1;
  Tensor rows = vector_in ? tape.reshape(x, {1, x.size()}) : x;
  Tensor y = tape.add(tape.matmul(rows, weight), bias);
  switch (act) {
    case Activation::relu:
      y = tape.relu(y);
      break;
    case Activation::softmax:
      y = tape.softmax(y, y.rank() - 1);
      break;
    case Activation::none:
      break;
  }
  return vector_in ? tape.reshape(y, {y.size()}) : y;
}

// ---------------------------------------------------------------- TransformerBlock

TransformerBlock TransformerBlock::create(ParameterSet& params, const std::string& name, std::size_t dim,
                                          std::size_t heads, std::size_t ffn_dim, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ContractError("transformer: dimension " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = dim / heads;
  TransformerBlock b;
  b.heads = heads;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string hp = name + ".attn.head" + std::to_string(h);
    b.wq.push_back(params.add(hp + ".wq", xavier_uniform({dim, head_dim}, rng)));
    b.wk.push_back(params.add(hp + ".wk", xavier_uniform({dim, head_dim}, rng)));
    b.wv.push_back(params.add(hp + ".wv", xavier_uniform({dim, head_dim}, rng)));
  }
  b.wo = params.add(name + ".attn.wo", xavier_uniform({dim, dim}, rng));
  b.ffn_in = Dense::create(params, name + ".ffn.in", dim, ffn_dim, rng);
  b.ffn_out = Dense::create(params, name + ".ffn.out", ffn_dim, dim, rng);
  b.ln1_gain = params.add(name + ".ln1.gain", Tensor::filled({dim}, 1.0));
  b.ln1_bias = params.add(name + ".ln1.bias", Tensor::zeros({dim}));
  b.ln2_gain = params.add(name + ".ln2.gain", Tensor::filled({dim}, 1.0));
  b.ln2_bias = params.add(name + ".ln2.bias", Tensor::zeros({dim}));
  return b;
}

Tensor TransformerBlock::forward(Tape& tape, const Tensor& x, const Mask& mask, const LayerContext& ctx,
                                 std::vector<Tensor>* attention) const {
  if (x.rank() != 2 || x.dim(1) != dim()) {
    throw DimensionError("transformer: input " + shape_string(x.shape()) + " does not have width " +
                         std::to_string(dim()));
  }
  if (mask.size() != x.dim(0)) throw DimensionError("transformer: mask length does not match sequence length");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw ContractError("transformer: input is all padding");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim() / heads));

  const Tensor h = tape.layer_norm(x, ln1_gain, ln1_bias, kLayerNormEps);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor q = tape.matmul(h, wq[i]);
    const Tensor k = tape.matmul(h, wk[i]);
    const Tensor v = tape.matmul(h, wv[i]);
    const Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)), scale);
    Tensor weights = tape.masked_softmax(scores, mask);
    if (attention) attention->push_back(weights);
    if (ctx.dropout_active()) weights = tape.dropout(weights, ctx.dropout, *ctx.rng);
    head_out.push_back(tape.matmul(weights, v));
  }
  const Tensor heads_cat = heads == 1 ? head_out.front() : tape.concat(head_out, 1);
  const Tensor attended = tape.add(x, tape.matmul(heads_cat, wo));

  const Tensor h2 = tape.layer_norm(attended, ln2_gain, ln2_bias, kLayerNormEps);
  Tensor ff = ffn_out.forward(tape, ffn_in.forward(tape, h2, Activation::relu));
  if (ctx.dropout_active()) ff = tape.dropout(ff, ctx.dropout, *ctx.rng);
  return tape.add(attended, ff);
}

TransformerStack TransformerStack::create(ParameterSet& params, const std::string& name, std::size_t layers,
                                          std::size_t dim, std::size_t heads, std::size_t ffn_dim, Rng& rng) {
  TransformerStack s;
  for (std::size_t l = 0; l < layers; ++l)
    s.blocks.push_back(TransformerBlock::create(params, name + ".block" + std::to_string(l), dim, heads, ffn_dim, rng));
  if (layers > 0) {
    s.final_gain = params.add(name + ".final_ln.gain", Tensor::filled({dim}, 1.0));
    s.final_bias = params.add(name + ".final_ln.bias", Tensor::zeros({dim}));
  }
  return s;
}

Tensor TransformerStack::forward(Tape& tape, const Tensor& x, const Mask& mask, const LayerContext& ctx) const {
  if (blocks.empty()) return x;
  Tensor h = x;
  for (const auto& b : blocks) h = b.forward(tape, h, mask, ctx);
  return tape.layer_norm(h, final_gain, final_bias, TransformerBlock::kLayerNormEps);
}

// ---------------------------------------------------------------- AdditiveAttention

AdditiveAttention AdditiveAttention::create(ParameterSet& params, const std::string& name, std::size_t query_dim,
                                            std::size_t key_dim, std::size_t attention_dim, Rng& rng) {
  AdditiveAttention a;
  a.w1 = params.add(name + ".w1", xavier_uniform({attention_dim, query_dim}, rng));
  a.w2 = params.add(name + ".w2", xavier_uniform({attention_dim, key_dim}, rng));
  a.w3 = params.add(name + ".w3", xavier_uniform({attention_dim}, rng));
  return a;
}

AdditiveAttention::Output AdditiveAttention::forward(Tape& tape, const Tensor& query, const Tensor& keys,
                                                     const Mask& mask) const {
  const std::size_t att = w3.size();
  if (query.rank() != 1 || query.size() != w1.dim(1)) {
    throw DimensionError("additive attention: query " + shape_string(query.shape()) + " does not match W1 " +
                         shape_string(w1.shape()));
  }
  if (keys.rank() != 2 || keys.dim(1) != w2.dim(1)) {
    throw DimensionError("additive attention: keys " + shape_string(keys.shape()) + " do not match W2 " +
                         shape_string(w2.shape()));
  }
  const std::size_t c = keys.dim(0);
  if (mask.size() != c) throw DimensionError("additive attention: mask length does not match key count");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw ContractError("additive attention: every key is masked");
  }

  const Tensor q_proj = tape.reshape(tape.matmul(w1, tape.reshape(query, {query.size(), 1})), {att});
  const Tensor k_proj = tape.matmul(keys, tape.transpose(w2));  // [c x A]
  const Tensor hidden = tape.tanh(tape.add(k_proj, q_proj));
  const Tensor gamma = tape.reshape(tape.matmul(hidden, tape.reshape(w3, {att, 1})), {c});
  const Tensor weights = tape.masked_softmax(gamma, mask);
  const Tensor context = tape.reshape(tape.matmul(tape.reshape(weights, {1, c}), keys), {keys.dim(1)});
  return {weights, context};
}

// ---------------------------------------------------------------- Adam

void Adam::step(ParameterSet& params) {
  auto& entries = params.entries();
  if (m_.size() != entries.size()) {
    m_.assign(entries.size(), {});
    v_.assign(entries.size(), {});
    for (std::size_t i = 0; i < entries.size(); ++i) {
      m_[i].assign(entries[i].tensor.size(), 0.0);
      v_[i].assign(entries[i].tensor.size(), 0.0);
    }
  }
  for (const auto& e : entries) {
    for (double g : e.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].tensor;
    auto values = p.mutable_data();
    auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      values[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace temf
