// SPDX-License-Identifier: Apache-2.0
#include "temf/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>

#include "temf/embedding.hpp"
#include "temf/layers.hpp"
#include "temf/model.hpp"
#include "temf/rng.hpp"

namespace temf {

namespace {

constexpr std::size_t kOpSeeds = 100;
constexpr std::size_t kLayerSeeds = 20;
constexpr std::size_t kModelSeeds = 3;

std::size_t pick_dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 5) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor uniform(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape, grad);
  for (auto& v : t.mutable_data()) v = u(rng);
  return t;
}

// Magnitudes in [0.2, 2] so that central differences never straddle a kink at 0.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.2, 2.0);
  std::bernoulli_distribution neg(0.5);
  Tensor t(shape, true);
  for (auto& v : t.mutable_data()) v = neg(rng) ? -mag(rng) : mag(rng);
  return t;
}

// Pairwise gaps of at least 0.1, so the argmax is stable under perturbation.
Tensor distinct(const Shape& shape, Rng& rng) {
  Tensor t(shape, true);
  auto d = t.mutable_data();
  std::vector<double> grid(d.size());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -2.0 + 0.15 * static_cast<double>(i);
  std::shuffle(grid.begin(), grid.end(), rng);
  std::copy(grid.begin(), grid.end(), d.begin());
  return t;
}

Mask random_mask(std::size_t n, Rng& rng) {
  std::bernoulli_distribution keep(0.6);
  Mask m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = keep(rng);
  m[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = true;
  return m;
}

// Random linear functional of `out`, so every output coordinate matters.
Tensor project(Tape& tape, const Tensor& out, const Tensor& weights) { return tape.sum_all(tape.mul(out, weights)); }

using Builder = std::function<GradCheckResult(Rng&, const GradCheckSettings&)>;

GradCheckCase make_case(std::string name, std::string kind, double threshold, std::size_t seeds,
                        const GradCheckSettings& settings, Builder build) {
  GradCheckCase c;
  c.name = std::move(name);
  c.kind = std::move(kind);
  c.threshold = threshold;
  c.seeds = seeds;
  c.run = [build = std::move(build), settings](std::uint64_t seed) {
    Rng rng(seed);
    return build(rng, settings);
  };
  return c;
}

// Output shape is known only after one forward pass; weights are drawn then.
GradCheckResult check_projected(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params, Rng& rng,
                                const GradCheckSettings& st) {
  Tape probe = Tape::inference();
  const Shape shape = f(probe).shape();
  const Tensor w = uniform(shape, rng, -1.0, 1.0, false);
  return grad_check([&](Tape& t) { return project(t, f(t), w); }, std::move(params), st.eps, st.stencil);
}

void add_op_cases(std::vector<GradCheckCase>& cases, const GradCheckSettings& settings) {
  const auto op = [&](std::string name, Builder b) {
    cases.push_back(make_case(std::move(name), "op", 1e-6, kOpSeeds, settings, std::move(b)));
  };
  op("matmul", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t m = pick_dim(rng), k = pick_dim(rng), p = pick_dim(rng);
    Tensor a = uniform({m, k}, rng), b = uniform({k, p}, rng);
    return check_projected([=](Tape& t) { return t.matmul(a, b); }, {a, b}, rng, st);
  });
  op("transpose", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = uniform({pick_dim(rng), pick_dim(rng)}, rng);
    return check_projected([=](Tape& t) { return t.transpose(a); }, {a}, rng, st);
  });
  op("reshape", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t m = pick_dim(rng), p = pick_dim(rng);
    Tensor a = uniform({m, p}, rng);
    return check_projected([=](Tape& t) { return t.reshape(a, {p * m}); }, {a}, rng, st);
  });
  op("add", [](Rng& rng, const GradCheckSettings& st) {
    const Shape s{pick_dim(rng), pick_dim(rng)};
    Tensor a = uniform(s, rng), b = uniform(s, rng);
    return check_projected([=](Tape& t) { return t.add(a, b); }, {a, b}, rng, st);
  });
  op("add_broadcast", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t m = pick_dim(rng), p = pick_dim(rng);
    Tensor a = uniform({m, p}, rng), b = uniform({p}, rng);
    return check_projected([=](Tape& t) { return t.add(a, b); }, {a, b}, rng, st);
  });
  op("sub", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t m = pick_dim(rng), p = pick_dim(rng);
    Tensor a = uniform({m, p}, rng), b = uniform({p}, rng);
    return check_projected([=](Tape& t) { return t.sub(a, b); }, {a, b}, rng, st);
  });
  op("mul", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t m = pick_dim(rng), p = pick_dim(rng);
    Tensor a = uniform({m, p}, rng), b = uniform({m, p}, rng), c = uniform({p}, rng);
    return check_projected([=](Tape& t) { return t.mul(t.mul(a, b), c); }, {a, b, c}, rng, st);
  });
  op("scale", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = uniform({pick_dim(rng), pick_dim(rng)}, rng);
    const double f = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    return check_projected([=](Tape& t) { return t.scale(a, f); }, {a}, rng, st);
  });
  op("tanh", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = uniform({pick_dim(rng), pick_dim(rng)}, rng);
    return check_projected([=](Tape& t) { return t.tanh(a); }, {a}, rng, st);
  });
  op("relu", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = away_from_zero({pick_dim(rng), pick_dim(rng)}, rng);
    return check_projected([=](Tape& t) { return t.relu(a); }, {a}, rng, st);
  });
  op("softmax", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = uniform({pick_dim(rng), pick_dim(rng, 2)}, rng);
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, 1)(rng);
    return check_projected([=](Tape& t) { return t.softmax(a, axis); }, {a}, rng, st);
  });
  op("masked_softmax", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t c = pick_dim(rng, 2);
    Tensor a = uniform({pick_dim(rng), c}, rng);
    const Mask m = random_mask(c, rng);
    return check_projected([=](Tape& t) { return t.masked_softmax(a, m); }, {a}, rng, st);
  });
  op("layer_norm", [](Rng& rng, const GradCheckSettings& st) {
    // Over two features the normalised output is +-1 whatever the input, so
    // the input gradient is pure eps-noise; start at three.
    const std::size_t d = pick_dim(rng, 3);
    Tensor x = uniform({pick_dim(rng), d}, rng), g = uniform({d}, rng), b = uniform({d}, rng);
    return check_projected([=](Tape& t) { return t.layer_norm(x, g, b, 1e-5); }, {x, g, b}, rng, st);
  });
  op("sum", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = uniform({pick_dim(rng), pick_dim(rng)}, rng);
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, 1)(rng);
    return check_projected([=](Tape& t) { return t.sum(a, axis); }, {a}, rng, st);
  });
  op("sum_all", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = uniform({pick_dim(rng), pick_dim(rng)}, rng);
    return check_projected([=](Tape& t) { return t.sum_all(a); }, {a}, rng, st);
  });
  op("mean", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t n = pick_dim(rng);
    Tensor a = uniform({n, pick_dim(rng)}, rng);
    const Mask m = random_mask(n, rng);
    return check_projected([=](Tape& t) { return t.mean(a, 0, &m); }, {a}, rng, st);
  });
  op("max_pool", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t n = pick_dim(rng);
    Tensor a = distinct({n, pick_dim(rng)}, rng);
    const Mask m = random_mask(n, rng);
    return check_projected([=](Tape& t) { return t.max_pool(a, 0, &m); }, {a}, rng, st);
  });
  op("concat", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, 1)(rng);
    const std::size_t shared = pick_dim(rng);
    std::vector<Tensor> parts;
    const std::size_t count = pick_dim(rng, 1, 3);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t own = pick_dim(rng);
      parts.push_back(uniform(axis == 0 ? Shape{own, shared} : Shape{shared, own}, rng));
    }
    return check_projected([=](Tape& t) { return t.concat(parts, axis); }, parts, rng, st);
  });
  op("slice", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t n = pick_dim(rng, 2);
    Tensor a = uniform({n, pick_dim(rng)}, rng);
    const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const std::size_t end = std::uniform_int_distribution<std::size_t>(begin + 1, n)(rng);
    return check_projected([=](Tape& t) { return t.slice(a, 0, begin, end); }, {a}, rng, st);
  });
  op("gather_rows", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t v = pick_dim(rng), d = pick_dim(rng);
    Tensor table = uniform({v, d}, rng), fallback = uniform({d}, rng);
    std::vector<long> idx(pick_dim(rng));
    for (auto& i : idx) i = std::uniform_int_distribution<long>(-1, static_cast<long>(v) - 1)(rng);
    return check_projected([=](Tape& t) { return t.gather_rows(table, idx, fallback); }, {table, fallback}, rng, st);
  });
  op("dropout", [](Rng& rng, const GradCheckSettings& st) {
    Tensor a = uniform({pick_dim(rng), pick_dim(rng)}, rng);
    const std::uint64_t mask_seed = rng();
    return check_projected(
        [=](Tape& t) {
          Rng r(mask_seed);
          return t.dropout(a, 0.3, r);
        },
        {a}, rng, st);
  });
  op("cross_entropy", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t k = pick_dim(rng, 2);
    Tensor logits = uniform({k}, rng);
    const std::size_t target = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
    return grad_check([=](Tape& t) { return t.cross_entropy(t.softmax(logits, 0), target); }, {logits}, st.eps,
                      st.stencil);
  });
  op("squared_error", [](Rng& rng, const GradCheckSettings& st) {
    const Shape s{pick_dim(rng)};
    Tensor a = uniform(s, rng), b = uniform(s, rng);
    return grad_check([=](Tape& t) { return t.squared_error(a, b); }, {a, b}, st.eps, st.stencil);
  });
  op("mean_squared_error", [](Rng& rng, const GradCheckSettings& st) {
    const Shape s{pick_dim(rng), pick_dim(rng)};
    Tensor a = uniform(s, rng), b = uniform(s, rng);
    return grad_check([=](Tape& t) { return t.mean_squared_error(a, b); }, {a, b}, st.eps, st.stencil);
  });
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParameterSet& params) {
  for (const auto& t : params.tensors()) inputs.push_back(t);
  return inputs;
}

void add_layer_cases(std::vector<GradCheckCase>& cases, const GradCheckSettings& settings) {
  const auto layer = [&](std::string name, Builder b) {
    cases.push_back(make_case(std::move(name), "layer", 1e-6, kLayerSeeds, settings, std::move(b)));
  };
  for (Activation act : {Activation::none, Activation::relu, Activation::softmax}) {
    const char* suffix = act == Activation::none ? "" : (act == Activation::relu ? "_relu" : "_softmax");
    layer(std::string("dense") + suffix, [act](Rng& rng, const GradCheckSettings& st) {
      ParameterSet ps;
      const std::size_t in = pick_dim(rng), out = pick_dim(rng, 2);
      Dense d = Dense::create(ps, "d", in, out, rng);
      for (auto& v : d.bias.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      Tensor x = uniform({pick_dim(rng), in}, rng);
      return check_projected([=](Tape& t) { return d.forward(t, x, act); }, with_params({x}, ps), rng, st);
    });
  }
  layer("transformer_block", [](Rng& rng, const GradCheckSettings& st) {
    ParameterSet ps;
    const std::size_t heads = pick_dim(rng, 1, 2);
    const std::size_t dim = 2 * heads * pick_dim(rng, 2 / heads, 2);
    TransformerBlock b = TransformerBlock::create(ps, "tb", dim, heads, pick_dim(rng, 2, 6), rng);
    for (auto* t : {&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias})
      for (auto& v : t->mutable_data()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    const std::size_t c = pick_dim(rng, 1, 4);
    Tensor x = uniform({c, dim}, rng);
    const Mask m = random_mask(c, rng);
    return check_projected([=](Tape& t) { return b.forward(t, x, m, LayerContext{}); }, with_params({x}, ps), rng, st);
  });
  layer("additive_attention", [](Rng& rng, const GradCheckSettings& st) {
    ParameterSet ps;
    const std::size_t dq = pick_dim(rng), dk = pick_dim(rng), a = pick_dim(rng), c = pick_dim(rng);
    AdditiveAttention att = AdditiveAttention::create(ps, "att", dq, dk, a, rng);
    Tensor q = uniform({dq}, rng), keys = uniform({c, dk}, rng);
    const Mask m = random_mask(c, rng);
    return check_projected([=](Tape& t) { return att.forward(t, q, keys, m).context; }, with_params({q, keys}, ps),
                           rng, st);
  });
  layer("fused_embedding", [](Rng& rng, const GradCheckSettings& st) {
    const std::size_t d = pick_dim(rng);
    const std::vector<std::string> vocab{"a", "b", "c", "d"};
    EmbeddingTable ta = EmbeddingTable::random(vocab, d, rng(), true);
    EmbeddingTable tb = EmbeddingTable::random({"b", "c", "e"}, d, rng(), true);
    std::vector<std::string> tokens(pick_dim(rng));
    const std::vector<std::string> pool{"a", "b", "c", "d", "e", "zz"};
    for (auto& tok : tokens) tok = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    const std::size_t length = pick_dim(rng);
    return check_projected([=](Tape& t) { return fused_embed(t, tokens, ta, &tb, length).rows; },
                           {ta.matrix(), tb.matrix()}, rng, st);
  });
}

Note tiny_note(Rng& rng, const std::vector<std::string>& emotions) {
  const std::vector<std::string> pool{"w0", "w1", "w2", "w3", "w4", "w5", "oov"};
  Note note;
  note.id = "gc";
  note.pb = static_cast<int>(rng() % 2);
  note.tb = static_cast<int>(rng() % 2);
  for (int s = 0; s < 2; ++s) {
    Sentence sent;
    for (int i = 0; i < 3; ++i) sent.tokens.push_back(pool[rng() % pool.size()]);
    sent.emotion = emotions[rng() % emotions.size()];
    sent.temporal = static_cast<Temporal>(rng() % kTemporalCount);
    note.sentences.push_back(sent);
  }
  return note;
}

void add_model_cases(std::vector<GradCheckCase>& cases, const GradCheckSettings& settings) {
  for (Ablation mode : {Ablation::full, Ablation::no_temporal, Ablation::no_emotion}) {
    const std::string name = std::string("model_loss_") + std::string(to_string(mode));
    cases.push_back(make_case(name, "model", 1e-4, kModelSeeds, settings, [mode](Rng& rng, const GradCheckSettings& st) {
      ModelConfig cfg;
      cfg.dim = 8;
      cfg.heads = 2;
      cfg.ffn_dim = 16;
      cfg.max_tokens = 4;
      cfg.max_sentences = 3;
      cfg.head_hidden = 8;
      cfg.attention_dim = 8;
      cfg.dropout = 0.0;
      cfg.dual_embeddings = true;
      cfg.ablation = mode;
      cfg.emotion_labels = {"calm", "fear", "hope"};
      cfg.seed = rng();
      const Note note = tiny_note(rng, cfg.emotion_labels);
      const std::vector<std::string> vocab{"w0", "w1", "w2", "w3", "w4", "w5", "past"};
      auto a = EmbeddingTable::random(vocab, cfg.dim, rng(), true);
      auto b = EmbeddingTable::random({"w1", "w3", "w5"}, cfg.dim, rng(), true);
      auto model = std::make_shared<TemfModel>(cfg, a, b);
      const EncodedNote enc = model->encode(note);
      return grad_check(
          [model, enc](Tape& t) {
            const ForwardTrace tr = model->forward(t, enc);
            return model->loss(t, tr, enc.pb, enc.tb).total;
          },
          model->optimizer_parameters().tensors(), st.eps, st.stencil);
    }));
  }
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.passed; });
}

std::vector<GradCheckCase> default_gradcheck_cases(const GradCheckSettings& settings) {
  std::vector<GradCheckCase> cases;
  add_op_cases(cases, settings);
  add_layer_cases(cases, settings);
  add_model_cases(cases, settings);
  return cases;
}

GradCheckReport run_gradcheck_suite(const std::vector<GradCheckCase>& cases) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  for (const auto& c : cases) {
    GradCheckOutcome o;
    o.name = c.name;
    o.kind = c.kind;
    o.threshold = c.threshold;
    try {
      for (std::size_t s = 0; s < c.seeds; ++s) {
        const std::uint64_t seed = derive_seed(0x6772616463686bULL, s);
        const GradCheckResult r = c.run(seed);
        ++o.seeds;
        if (r.max_relative_error > o.max_relative_error || o.seeds == 1) {
          o.max_relative_error = r.max_relative_error;
          o.worst_seed = seed;
        }
      }
      o.passed = o.max_relative_error < c.threshold;
    } catch (const std::exception& e) {
      o.error = e.what();
      o.passed = false;
    }
    report.outcomes.push_back(std::move(o));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::string out;
  char line[256];
  for (const auto& o : report.outcomes) {
    if (!o.error.empty()) {
      out += "FAIL " + o.name + " (" + o.kind + "): " + o.error + "\n";
      continue;
    }
    std::snprintf(line, sizeof line, "%s %-22s %-6s max_rel_err=%.3e threshold=%.0e seeds=%zu\n",
                  o.passed ? "PASS" : "FAIL", o.name.c_str(), o.kind.c_str(), o.max_relative_error, o.threshold,
                  o.seeds);
    out += line;
  }
  const auto failed = static_cast<std::size_t>(
      std::count_if(report.outcomes.begin(), report.outcomes.end(), [](const auto& o) { return !o.passed; }));
  std::snprintf(line, sizeof line, "%zu checks, %zu failed, %.1f s\n", report.outcomes.size(), failed, report.seconds);
  out += line;
  return out;
}

}  // namespace temf
