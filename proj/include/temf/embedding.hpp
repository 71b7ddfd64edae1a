// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "temf/tape.hpp"

namespace temf {

/// Vocabulary -> vector map. Unknown tokens resolve to the OOV vector
/// (zeros unless replaced), never to an error.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> tokens, Tensor matrix, bool trainable = false);

  /// Reads `token v1 ... vD` lines. A leading `V D` line is recognised as a
  /// header by its column count. With `keep`, only listed tokens are kept.
  static EmbeddingTable load_text(const std::filesystem::path& path,
                                  const std::unordered_set<std::string>* keep = nullptr, bool trainable = false);
  void save_text(const std::filesystem::path& path) const;

  /// Seeded uniform(-0.5, 0.5) vectors for `tokens`; stands in for a
  /// pretrained table on synthetic corpora.
  static EmbeddingTable random(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed,
                               bool trainable = true);

  /// Independent copy; the plain copy constructor shares the matrix.
  EmbeddingTable clone() const { return EmbeddingTable(tokens_, matrix_.clone(), trainable_); }

  /// Row index of `token`, or -1 when it is out of vocabulary.
  long index(const std::string& token) const;
  bool contains(const std::string& token) const { return index(token) >= 0; }
  std::span<const double> vector(const std::string& token) const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const Tensor& matrix() const { return matrix_; }
  Tensor& matrix() { return matrix_; }
  const Tensor& oov() const { return oov_; }
  bool trainable() const { return trainable_; }
  void set_trainable(bool on);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, long> index_;
  Tensor matrix_;
  Tensor oov_;
  std::size_t dim_ = 0;
  bool trainable_ = false;
};

struct FusedEmbedding {
  Tensor rows;  // [c x D]
  Mask mask;    // c entries; true at real positions
};

/// Mean of the two tables' vectors per token, zero-padded or truncated to
/// `length` rows. With `table_b` null the rows are table A's vectors.
FusedEmbedding fused_embed(Tape& tape, std::span<const std::string> tokens, const EmbeddingTable& table_a,
                           const EmbeddingTable* table_b, std::size_t length);

/// Same as fused_embed with pre-resolved row indices (-1 = OOV). `idx_b` is
/// ignored when `table_b` is null.
FusedEmbedding fused_embed_indices(Tape& tape, std::span<const long> idx_a, std::span<const long> idx_b,
                                   const EmbeddingTable& table_a, const EmbeddingTable* table_b,
                                   std::size_t length);

}  // namespace temf
