// SPDX-License-Identifier: Apache-2.0
#pragma once

// Cross-validation protocol: stratified folds, repeated runs, ablation and
// context-length comparisons, and the comma-separated results format.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "temf/corpus.hpp"
#include "temf/model.hpp"

namespace temf {

struct FoldAssignment {
  std::vector<std::vector<std::size_t>> folds;  // note indices, ascending within a fold
  /// True when some (pb, tb) stratum had fewer than k notes and the split
  /// fell back to stratifying on pb alone.
  bool degraded = false;
  std::string warning;
};

/// Deals each stratum's shuffled notes round-robin over the folds, the fold
/// pointer carrying over between strata, so fold sizes and per-stratum
/// counts each differ by at most one.
FoldAssignment stratified_kfold(const Corpus& corpus, std::size_t k, std::uint64_t seed);

struct FoldScore {
  std::size_t run = 0;
  std::size_t fold = 0;
  double f1_pb = 0.0;
  double f1_tb = 0.0;
  // Majority-class macro-F1 on the same test fold.
  double baseline_pb = 0.0;
  double baseline_tb = 0.0;
  std::size_t best_epoch = 0;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single score
  std::size_t count = 0;
};

struct CvResult {
  std::size_t k = 0;
  std::size_t runs = 0;
  std::vector<FoldScore> scores;  // run-major, fold-minor
  Summary pb, tb;
  Summary baseline_pb, baseline_tb;
  bool degraded = false;
};

struct CvOptions {
  std::size_t k = 10;
  std::size_t runs = 5;
  std::uint64_t seed = 0;
  /// Worker threads for fold jobs; 0 uses every available core.
  std::size_t jobs = 0;
  /// Tables shared by every job (cloned per job). Without them each job
  /// draws synthetic tables from its own seed.
  std::optional<EmbeddingTable> table_a, table_b;
  std::function<void(const std::string&)> warn;
};

/// Seeds: folds of run r come from seed + r; the model of (run r, fold f)
/// uses derive_seed(seed + r, f). With k > 2, fold (f + 1) mod k is held
/// out of training as the validation fold for best-epoch selection.
CvResult run_cv(const Corpus& corpus, const ModelConfig& config, const CvOptions& options);

struct LabeledResult {
  std::string label;  // ablation mode or context length
  CvResult result;
};

std::vector<LabeledResult> ablation_compare(const Corpus& corpus, const ModelConfig& config, const CvOptions& options);

inline const std::vector<std::size_t> kDefaultSweep = {5, 10, 13, 15, 20};

/// run_cv per length n, with notes truncated to their first n sentences.
std::vector<LabeledResult> context_sweep(const Corpus& corpus, const ModelConfig& config,
                                         const std::vector<std::size_t>& lengths, const CvOptions& options);

/// `# config: <json>` lines, a `run,fold,task,f1` table, then a `# summary`
/// block of `task,mean,stddev,count` rows. With `label_column` set, every
/// table row and summary row gets that leading column.
void write_results(std::ostream& out, const std::vector<LabeledResult>& results, const std::string& label_column,
                   const std::vector<std::string>& config_lines);

}  // namespace temf
