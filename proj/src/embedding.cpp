// SPDX-License-Identifier: Apache-2.0
#include "temf/embedding.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "temf/errors.hpp"
#include "temf/rng.hpp"

namespace temf {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string field;
  while (is >> field) out.push_back(field);
  return out;
}

bool parse_double(const std::string& s, double& v) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && ptr == end;
}

bool is_integer(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (ch < '0' || ch > '9') return false;
  return true;
}

}  // namespace

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, Tensor matrix, bool trainable)
    : tokens_(std::move(tokens)), matrix_(std::move(matrix)), trainable_(trainable) {
  if (matrix_.rank() != 2 || matrix_.dim(0) != tokens_.size()) {
    throw DimensionError("embedding matrix " + shape_string(matrix_.shape()) + " does not match " +
                         std::to_string(tokens_.size()) + " tokens");
  }
  dim_ = matrix_.dim(1);
  oov_ = Tensor::zeros({dim_});
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<long>(i)).second) {
      throw ContractError("duplicate embedding token '" + tokens_[i] + "'");
    }
  }
  matrix_.set_requires_grad(trainable_);
}

EmbeddingTable EmbeddingTable::load_text(const std::filesystem::path& path,
                                         const std::unordered_set<std::string>* keep, bool trainable) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embedding file " + path.string());
  std::vector<std::string> tokens;
  std::unordered_set<std::string> seen;
  std::vector<double> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2 && is_integer(fields[0]) && is_integer(fields[1])) {
      dim = std::stoul(fields[1]);
      continue;
    }
    if (fields.size() < 2) throw ParseError("embedding line has no vector", line_no);
    const std::size_t width = fields.size() - 1;
    if (dim == 0) dim = width;
    if (width != dim) {
      throw ParseError("expected " + std::to_string(dim) + " values, found " + std::to_string(width), line_no);
    }
    const std::string& token = fields[0];
    if ((keep && !keep->count(token)) || seen.count(token)) continue;
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0.0;
      if (!parse_double(fields[j], v)) throw ParseError("bad number '" + fields[j] + "'", line_no);
      values.push_back(v);
    }
    seen.insert(token);
    tokens.push_back(token);
  }
  if (tokens.empty()) throw ParseError("embedding file " + path.string() + " has no vectors", line_no);
  const std::size_t n = tokens.size();
  return EmbeddingTable(std::move(tokens), Tensor({n, dim}, std::move(values)), trainable);
}

void EmbeddingTable::save_text(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write embedding file " + path.string());
  out << tokens_.size() << ' ' << dim_ << '\n';
  out << std::setprecision(17);
  auto m = matrix_.data();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i];
    for (std::size_t j = 0; j < dim_; ++j) out << ' ' << m[i * dim_ + j];
    out << '\n';
  }
}

EmbeddingTable EmbeddingTable::random(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed,
                                      bool trainable) {
  if (tokens.empty()) throw ContractError("random embedding table needs at least one token");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> values(tokens.size() * dim);
  for (auto& v : values) v = u(rng);
  return EmbeddingTable(tokens, Tensor({tokens.size(), dim}, std::move(values)), trainable);
}

long EmbeddingTable::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

std::span<const double> EmbeddingTable::vector(const std::string& token) const {
  const long i = index(token);
  if (i < 0) return oov_.data();
  return matrix_.data().subspan(static_cast<std::size_t>(i) * dim_, dim_);
}

void EmbeddingTable::set_trainable(bool on) {
  trainable_ = on;
  matrix_.set_requires_grad(on);
}

FusedEmbedding fused_embed_indices(Tape& tape, std::span<const long> idx_a, std::span<const long> idx_b,
                                   const EmbeddingTable& table_a, const EmbeddingTable* table_b,
                                   std::size_t length) {
  if (length == 0) throw ContractError("fused_embed: sequence length must be positive");
  if (idx_a.empty()) throw ContractError("fused_embed: empty token sequence");
  if (table_b && table_b->dim() != table_a.dim()) {
    throw ContractError("fused_embed: table dimensions differ (" + std::to_string(table_a.dim()) + " vs " +
                        std::to_string(table_b->dim()) + ")");
  }
  if (table_b && idx_b.size() != idx_a.size()) throw ContractError("fused_embed: index lists differ in length");
  const std::size_t real = std::min(idx_a.size(), length);
  const std::size_t d = table_a.dim();

  Tensor rows = tape.gather_rows(table_a.matrix(), idx_a.first(real), table_a.oov());
  if (table_b) {
    Tensor rows_b = tape.gather_rows(table_b->matrix(), idx_b.first(real), table_b->oov());
    rows = tape.scale(tape.add(rows, rows_b), 0.5);
  }
  if (real < length) rows = tape.concat({rows, Tensor::zeros({length - real, d})}, 0);

  Mask mask(length, false);
  std::fill(mask.begin(), mask.begin() + static_cast<long>(real), true);
  return {rows, std::move(mask)};
}

FusedEmbedding fused_embed(Tape& tape, std::span<const std::string> tokens, const EmbeddingTable& table_a,
                           const EmbeddingTable* table_b, std::size_t length) {
  std::vector<long> a, b;
  for (const auto& t : tokens) {
    a.push_back(table_a.index(t));
    if (table_b) b.push_back(table_b->index(t));
  }
  return fused_embed_indices(tape, a, b, table_a, table_b, length);
}

}  // namespace temf
