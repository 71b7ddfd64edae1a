// SPDX-License-Identifier: Apache-2.0
#include "temf/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "temf/errors.hpp"

namespace temf {

namespace {

constexpr double kProbFloor = 1e-12;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

void require_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                         shape_string(t.shape()));
  }
}

// Number of times b repeats to cover a. 1 for equal shapes.
std::size_t broadcast_repeats(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return 1;
  if (sb.size() < sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<long>(sb.size()))) {
    return a.size() / b.size();
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(sa) + " and " +
                       shape_string(sb));
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

void check_mask(const Mask* mask, std::size_t n, const char* op) {
  if (mask && mask->size() != n) {
    throw DimensionError(std::string(op) + ": mask length " + std::to_string(mask->size()) +
                         " does not match axis length " + std::to_string(n));
  }
}

bool any_set(const Mask* mask, std::size_t n) {
  if (!mask) return n > 0;
  return std::any_of(mask->begin(), mask->end(), [](bool b) { return b; });
}

}  // namespace

bool Tape::needs_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(std::string op, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(op), std::move(backward)});
}

std::size_t Tape::backward(const Tensor& loss, double seed) {
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got " + shape_string(loss.shape()));
  }
  Tensor l = loss;
  if (!l.requires_grad()) return 0;
  l.mutable_grad()[0] += seed;
  std::size_t executed = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
    ++executed;
  }
  return executed;
}

// ---------------------------------------------------------------- linear algebra

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool grad = needs_grad({&a, &b});
  Tensor out({m, p}, grad);
  kernels::matmul(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, p);
  if (grad) {
    record("matmul", [a, b, out, m, k, p]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad().data();
      if (a.requires_grad()) kernels::matmul_acc_a_bt(g, b.data().data(), a.mutable_grad().data(), m, k, p);
      if (b.requires_grad()) kernels::matmul_acc_at_b(a.data().data(), g, b.mutable_grad().data(), m, k, p);
    });
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const bool grad = needs_grad({&a});
  Tensor out({c, r}, grad);
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  if (grad) {
    record("transpose", [a, out, r, c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  const bool grad = needs_grad({&a});
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), grad);
  if (grad) {
    record("reshape", [a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------- elementwise

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_repeats(a, b, "add");
  const bool grad = needs_grad({&a, &b});
  Tensor out(a.shape(), grad);
  auto x = a.data(), y = b.data();
  auto o = out.mutable_data();
  const std::size_t nb = b.size();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) o[r * nb + j] = x[r * nb + j] + y[j];
  if (grad) {
    record("add", [a, b, out, reps, nb]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j];
      }
    });
  }
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_repeats(a, b, "sub");
  const bool grad = needs_grad({&a, &b});
  Tensor out(a.shape(), grad);
  auto x = a.data(), y = b.data();
  auto o = out.mutable_data();
  const std::size_t nb = b.size();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) o[r * nb + j] = x[r * nb + j] - y[j];
  if (grad) {
    record("sub", [a, b, out, reps, nb]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < nb; ++j) gb[j] -= g[r * nb + j];
      }
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_repeats(a, b, "mul");
  const bool grad = needs_grad({&a, &b});
  Tensor out(a.shape(), grad);
  auto x = a.data(), y = b.data();
  auto o = out.mutable_data();
  const std::size_t nb = b.size();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) o[r * nb + j] = x[r * nb + j] * y[j];
  if (grad) {
    record("mul", [a, b, out, reps, nb]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < nb; ++j) ga[r * nb + j] += g[r * nb + j] * y[j];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j] * x[r * nb + j];
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double factor) {
  const bool grad = needs_grad({&a});
  Tensor out(a.shape(), grad);
  auto x = a.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = factor * x[i];
  if (grad) {
    record("scale", [a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
  }
  return out;
}

Tensor Tape::tanh(const Tensor& a) {
  const bool grad = needs_grad({&a});
  Tensor out(a.shape(), grad);
  auto x = a.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = std::tanh(x[i]);
  if (grad) {
    record("tanh", [a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  }
  return out;
}

Tensor Tape::relu(const Tensor& a) {
  const bool grad = needs_grad({&a});
  Tensor out(a.shape(), grad);
  auto x = a.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (grad) {
    record("relu", [a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto x = a.data();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------- normalization

Tensor Tape::softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "softmax");
  const auto s = split_axis(x.shape(), axis);
  const bool grad = needs_grad({&x});
  Tensor out(x.shape(), grad);
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t c = 0; c < s.inner; ++c) {
      const std::size_t base = a * s.n * s.inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, in[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double e = std::exp(in[base + i * s.inner] - mx);
        o[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) o[base + i * s.inner] /= total;
    }
  }
  if (grad) {
    record("softmax", [x, out, s]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t a = 0; a < s.outer; ++a) {
        for (std::size_t c = 0; c < s.inner; ++c) {
          const std::size_t base = a * s.n * s.inner + c;
          double dot = 0.0;
          for (std::size_t i = 0; i < s.n; ++i) dot += g[base + i * s.inner] * y[base + i * s.inner];
          for (std::size_t i = 0; i < s.n; ++i) {
            const std::size_t idx = base + i * s.inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::masked_softmax(const Tensor& x, const Mask& mask) {
  const std::size_t n = x.shape().back();
  check_mask(&mask, n, "masked_softmax");
  if (!any_set(&mask, n)) throw ContractError("masked_softmax: every position is masked");
  const std::size_t rows = x.size() / n;
  const bool grad = needs_grad({&x});
  Tensor out(x.shape(), grad);
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double* orow = o.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) mx = std::max(mx, row[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      orow[i] = mask[i] ? std::exp(row[i] - mx) : 0.0;
      total += orow[i];
    }
    for (std::size_t i = 0; i < n; ++i) orow[i] /= total;
  }
  if (grad) {
    record("masked_softmax", [x, out, rows, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
        for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
      }
    });
  }
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match feature dim of " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  const bool grad = needs_grad({&x, &gain, &bias});
  Tensor out(x.shape(), grad);
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  auto in = x.data();
  auto o = out.mutable_data();
  auto gn = gain.data(), bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      o[r * d + j] = gn[j] * h + bs[j];
    }
  }
  if (grad) {
    record("layer_norm", [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                          d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gn = gain.data();
      if (gain.requires_grad()) {
        auto gg = gain.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gn[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gn[j];
            gx[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- reductions

Tensor Tape::sum(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "sum");
  const auto s = split_axis(x.shape(), axis);
  const bool grad = needs_grad({&x});
  Tensor out(drop_axis(x.shape(), axis), grad);
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t c = 0; c < s.inner; ++c) o[a * s.inner + c] += in[(a * s.n + i) * s.inner + c];
  if (grad) {
    record("sum", [x, out, s]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t i = 0; i < s.n; ++i)
          for (std::size_t c = 0; c < s.inner; ++c) gx[(a * s.n + i) * s.inner + c] += g[a * s.inner + c];
    });
  }
  return out;
}

Tensor Tape::sum_all(const Tensor& x) {
  const bool grad = needs_grad({&x});
  Tensor out({1}, grad);
  double total = 0.0;
  for (double v : x.data()) total += v;
  out.mutable_data()[0] = total;
  if (grad) {
    record("sum_all", [x, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (double& v : x.mutable_grad()) v += g;
    });
  }
  return out;
}

Tensor Tape::mean(const Tensor& x, std::size_t axis, const Mask* mask) {
  require_axis(x, axis, "mean");
  const auto s = split_axis(x.shape(), axis);
  check_mask(mask, s.n, "mean");
  if (!any_set(mask, s.n)) throw ContractError("mean: every position is masked");
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.n; ++i)
    if (!mask || (*mask)[i]) ++count;
  const double inv = 1.0 / static_cast<double>(count);
  Mask keep = mask ? *mask : Mask(s.n, true);
  const bool grad = needs_grad({&x});
  Tensor out(drop_axis(x.shape(), axis), grad);
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t c = 0; c < s.inner; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i)
        if (keep[i]) total += in[(a * s.n + i) * s.inner + c];
      o[a * s.inner + c] = total * inv;
    }
  if (grad) {
    record("mean", [x, out, s, keep = std::move(keep), inv]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t i = 0; i < s.n; ++i) {
          if (!keep[i]) continue;
          for (std::size_t c = 0; c < s.inner; ++c) gx[(a * s.n + i) * s.inner + c] += g[a * s.inner + c] * inv;
        }
    });
  }
  return out;
}

Tensor Tape::max_pool(const Tensor& x, std::size_t axis, const Mask* mask) {
  require_axis(x, axis, "max_pool");
  const auto s = split_axis(x.shape(), axis);
  check_mask(mask, s.n, "max_pool");
  if (!any_set(mask, s.n)) throw ContractError("max_pool: every position is masked");
  const bool grad = needs_grad({&x});
  Tensor out(drop_axis(x.shape(), axis), grad);
  std::vector<std::size_t> argmax(s.outer * s.inner);
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t c = 0; c < s.inner; ++c) {
      bool found = false;
      double best = 0.0;
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < s.n; ++i) {
        if (mask && !(*mask)[i]) continue;
        const double v = in[(a * s.n + i) * s.inner + c];
        if (!found || v > best) {
          best = v;
          best_i = i;
          found = true;
        }
      }
      o[a * s.inner + c] = best;
      argmax[a * s.inner + c] = best_i;
    }
  if (grad) {
    record("max_pool", [x, out, s, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t c = 0; c < s.inner; ++c)
          gx[(a * s.n + argmax[a * s.inner + c]) * s.inner + c] += g[a * s.inner + c];
    });
  }
  return out;
}

// ---------------------------------------------------------------- structure

Tensor Tape::concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no tensors given");
  const Shape& first = parts.front().shape();
  require_axis(parts.front(), axis, "concat");
  Shape shape = first;
  shape[axis] = 0;
  bool grad = false;
  for (const auto& t : parts) {
    const Shape& sh = t.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i)
      if (i != axis && sh[i] != first[i]) ok = false;
    if (!ok) {
      throw DimensionError("concat: " + shape_string(sh) + " does not match " + shape_string(first) +
                           " off axis " + std::to_string(axis));
    }
    shape[axis] += sh[axis];
    grad = grad || (recording_ && t.requires_grad());
  }
  const auto s = split_axis(shape, axis);
  Tensor out(shape, grad);
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& t : parts) {
    const std::size_t n = t.dim(axis);
    auto in = t.data();
    for (std::size_t a = 0; a < s.outer; ++a)
      std::copy_n(in.data() + a * n * s.inner, n * s.inner, o.data() + (a * s.n + offset) * s.inner);
    offset += n;
  }
  if (grad) {
    record("concat", [parts, out, s, axis]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& t : parts) {
        const std::size_t n = t.dim(axis);
        if (t.requires_grad()) {
          auto gt = t.mutable_grad();
          for (std::size_t a = 0; a < s.outer; ++a)
            for (std::size_t k = 0; k < n * s.inner; ++k) gt[a * n * s.inner + k] += g[(a * s.n + offset) * s.inner + k];
        }
        offset += n;
      }
    });
  }
  return out;
}

Tensor Tape::slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis(x, axis, "slice");
  if (begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis of length " + std::to_string(x.dim(axis)));
  }
  const auto s = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t n = end - begin;
  const bool grad = needs_grad({&x});
  Tensor out(shape, grad);
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.outer; ++a)
    std::copy_n(in.data() + (a * s.n + begin) * s.inner, n * s.inner, o.data() + a * n * s.inner);
  if (grad) {
    record("slice", [x, out, s, begin, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t k = 0; k < n * s.inner; ++k) gx[(a * s.n + begin) * s.inner + k] += g[a * n * s.inner + k];
    });
  }
  return out;
}

Tensor Tape::gather_rows(const Tensor& table, std::span<const long> indices, const Tensor& fallback) {
  require_rank(table, 2, "gather_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  if (fallback.size() != d) {
    throw DimensionError("gather_rows: fallback " + shape_string(fallback.shape()) + " does not match row width " +
                         std::to_string(d));
  }
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  std::vector<long> idx(indices.begin(), indices.end());
  for (long i : idx) {
    if (i < -1 || i >= static_cast<long>(v)) {
      throw ContractError("gather_rows: index " + std::to_string(i) + " outside table of " + std::to_string(v) +
                          " rows");
    }
  }
  const bool grad = needs_grad({&table, &fallback});
  Tensor out({idx.size(), d}, grad);
  auto o = out.mutable_data();
  auto t = table.data();
  auto f = fallback.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double* src = idx[r] >= 0 ? t.data() + static_cast<std::size_t>(idx[r]) * d : f.data();
    std::copy_n(src, d, o.data() + r * d);
  }
  if (grad) {
    record("gather_rows", [table, fallback, out, idx = std::move(idx), d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const Tensor& target = idx[r] >= 0 ? table : fallback;
        if (!target.requires_grad()) continue;
        double* dst = target.mutable_grad().data() + (idx[r] >= 0 ? static_cast<std::size_t>(idx[r]) * d : 0);
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
      }
    });
  }
  return out;
}

Tensor Tape::dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> keep(x.size());
  std::bernoulli_distribution keep_draw(1.0 - rate);
  for (auto& k : keep) k = keep_draw(rng) ? keep_scale : 0.0;
  const bool grad = needs_grad({&x});
  Tensor out(x.shape(), grad);
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * keep[i];
  if (grad) {
    record("dropout", [x, out, keep = std::move(keep)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------- losses

Tensor Tape::cross_entropy(const Tensor& probs, std::size_t target) {
  if (target >= probs.size()) {
    throw ContractError("cross_entropy: target class " + std::to_string(target) + " outside " +
                        std::to_string(probs.size()) + " classes");
  }
  double total = 0.0;
  for (double p : probs.data()) total += p;
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("cross_entropy: probabilities sum to " + std::to_string(total) + ", not 1");
  }
  const double p = probs[target];
  const bool clamped = p < kProbFloor;
  const bool grad = needs_grad({&probs});
  Tensor out({1}, grad);
  out.mutable_data()[0] = -std::log(clamped ? kProbFloor : p);
  if (grad) {
    record("cross_entropy", [probs, out, target, clamped]() mutable {
      if (!out.has_grad() || clamped) return;
      probs.mutable_grad()[target] += -out.grad()[0] / probs[target];
    });
  }
  return out;
}

Tensor Tape::squared_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("squared_error: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " differ");
  }
  const bool grad = needs_grad({&a, &b});
  Tensor out({1}, grad);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  out.mutable_data()[0] = total;
  if (grad) {
    record("squared_error", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = 2.0 * (a[i] - b[i]) * g;
        if (a.requires_grad()) a.mutable_grad()[i] += d;
        if (b.requires_grad()) b.mutable_grad()[i] -= d;
      }
    });
  }
  return out;
}

Tensor Tape::mean_squared_error(const Tensor& a, const Tensor& b) {
  return scale(squared_error(a, b), 1.0 / static_cast<double>(a.size()));
}

}  // namespace temf
