// SPDX-License-Identifier: Apache-2.0
#include "temf/evaluation.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>

#include "temf/errors.hpp"
#include "temf/metrics.hpp"
#include "temf/rng.hpp"

namespace temf {

namespace {

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Job {
  std::size_t run = 0;
  std::size_t fold = 0;
  const FoldAssignment* split = nullptr;
};

}  // namespace

FoldAssignment stratified_kfold(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ContractError("stratified_kfold: k must be at least 2");
  if (corpus.size() < k) {
    throw ContractError("stratified_kfold: " + std::to_string(corpus.size()) + " notes cannot fill " +
                        std::to_string(k) + " folds");
  }
  FoldAssignment out;
  std::array<std::vector<std::size_t>, 4> strata;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    strata[static_cast<std::size_t>(corpus.notes[i].pb * 2 + corpus.notes[i].tb)].push_back(i);
  const bool thin = std::any_of(strata.begin(), strata.end(), [k](const auto& s) { return !s.empty() && s.size() < k; });
  if (thin) {
    out.degraded = true;
    out.warning = "a (pb, tb) stratum has fewer than " + std::to_string(k) +
                  " notes; stratifying on pb only";
    std::array<std::vector<std::size_t>, 4> merged;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      merged[static_cast<std::size_t>(corpus.notes[i].pb * 2)].push_back(i);
    strata = std::move(merged);
  }

  Rng rng(seed);
  out.folds.assign(k, {});
  std::size_t next = 0;
  for (auto& stratum : strata) {
    std::shuffle(stratum.begin(), stratum.end(), rng);
    for (std::size_t idx : stratum) {
      out.folds[next].push_back(idx);
      next = (next + 1) % k;
    }
  }
  for (auto& f : out.folds) std::sort(f.begin(), f.end());
  return out;
}

CvResult run_cv(const Corpus& corpus, const ModelConfig& config, const CvOptions& options) {
  config.validate();
  if (options.runs == 0) throw ContractError("run_cv: runs must be positive");
  const std::size_t k = options.k;

  std::vector<FoldAssignment> splits;
  for (std::size_t r = 0; r < options.runs; ++r) {
    splits.push_back(stratified_kfold(corpus, k, options.seed + r));
    if (splits.back().degraded && options.warn) options.warn("run " + std::to_string(r) + ": " + splits.back().warning);
  }

  std::vector<Job> jobs;
  for (std::size_t r = 0; r < options.runs; ++r)
    for (std::size_t f = 0; f < k; ++f) jobs.push_back({r, f, &splits[r]});

  std::vector<FoldScore> scores(jobs.size());
  std::vector<std::exception_ptr> failures(jobs.size());
  const int threads = options.jobs == 0 ? omp_get_max_threads() : static_cast<int>(options.jobs);

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    try {
      const Job& job = jobs[j];
      const auto& folds = job.split->folds;
      const std::size_t val_fold = k > 2 ? (job.fold + 1) % k : k;
      Corpus train_set, val_set, test_set;
      train_set.emotion_labels = val_set.emotion_labels = test_set.emotion_labels = corpus.emotion_labels;
      for (std::size_t f = 0; f < k; ++f) {
        Corpus& dest = f == job.fold ? test_set : (f == val_fold ? val_set : train_set);
        for (std::size_t idx : folds[f]) dest.notes.push_back(corpus.notes[idx]);
      }

      ModelConfig cfg = config;
      cfg.seed = derive_seed(options.seed + job.run, job.fold);
      cfg.emotion_labels = corpus.emotion_labels;
      const Corpus* validation = val_set.empty() ? nullptr : &val_set;
      TrainResult trained = [&] {
        if (options.table_a) {
          std::optional<EmbeddingTable> b;
          if (options.table_b) b = options.table_b->clone();
          return train(train_set, cfg, options.table_a->clone(), std::move(b), validation);
        }
        auto [a, b] = synthetic_embeddings(corpus, cfg);
        return train(train_set, cfg, std::move(a), std::move(b), validation);
      }();
      const Evaluation ev = evaluate(trained.model, test_set);

      std::vector<int> y_pb, y_tb;
      for (const auto& note : test_set.notes) {
        y_pb.push_back(note.pb);
        y_tb.push_back(note.tb);
      }
      FoldScore& s = scores[j];
      s.run = job.run;
      s.fold = job.fold;
      s.f1_pb = ev.f1_pb;
      s.f1_tb = ev.f1_tb;
      s.baseline_pb = majority_baseline_f1(y_pb);
      s.baseline_tb = majority_baseline_f1(y_tb);
      s.best_epoch = trained.best_epoch;
    } catch (...) {
      failures[j] = std::current_exception();
    }
  }

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (!failures[j]) continue;
    const std::string where = "run " + std::to_string(jobs[j].run) + ", fold " + std::to_string(jobs[j].fold) + ": ";
    try {
      std::rethrow_exception(failures[j]);
    } catch (const NumericError& e) {
      throw NumericError(where + e.what());
    } catch (const std::exception& e) {
      throw Error(where + e.what());
    }
  }

  CvResult result;
  result.k = k;
  result.runs = options.runs;
  result.scores = std::move(scores);
  result.degraded = std::any_of(splits.begin(), splits.end(), [](const auto& s) { return s.degraded; });
  std::vector<double> pb, tb, bpb, btb;
  for (const auto& s : result.scores) {
    pb.push_back(s.f1_pb);
    tb.push_back(s.f1_tb);
    bpb.push_back(s.baseline_pb);
    btb.push_back(s.baseline_tb);
  }
  result.pb = summarize(pb);
  result.tb = summarize(tb);
  result.baseline_pb = summarize(bpb);
  result.baseline_tb = summarize(btb);
  return result;
}

std::vector<LabeledResult> ablation_compare(const Corpus& corpus, const ModelConfig& config, const CvOptions& options) {
  std::vector<LabeledResult> out;
  for (Ablation mode : {Ablation::full, Ablation::no_temporal, Ablation::no_emotion}) {
    ModelConfig cfg = config;
    cfg.ablation = mode;
    out.push_back({std::string(to_string(mode)), run_cv(corpus, cfg, options)});
  }
  return out;
}

std::vector<LabeledResult> context_sweep(const Corpus& corpus, const ModelConfig& config,
                                         const std::vector<std::size_t>& lengths, const CvOptions& options) {
  std::vector<LabeledResult> out;
  for (std::size_t n : lengths) {
    if (n == 0) throw ContractError("context_sweep: lengths must be positive");
    ModelConfig cfg = config;
    cfg.max_sentences = n;
    out.push_back({std::to_string(n), run_cv(corpus.truncated(n), cfg, options)});
  }
  return out;
}

void write_results(std::ostream& out, const std::vector<LabeledResult>& results, const std::string& label_column,
                   const std::vector<std::string>& config_lines) {
  const bool labeled = !label_column.empty();
  const auto lead = [&](const LabeledResult& r) { return labeled ? r.label + "," : std::string(); };
  for (const auto& line : config_lines) out << "# config: " << line << '\n';
  out << (labeled ? label_column + "," : "") << "run,fold,task,f1\n";
  for (const auto& r : results) {
    for (const auto& s : r.result.scores) {
      out << lead(r) << s.run << ',' << s.fold << ",pb," << format_double(s.f1_pb) << '\n';
      out << lead(r) << s.run << ',' << s.fold << ",tb," << format_double(s.f1_tb) << '\n';
    }
  }
  out << "# summary\n" << (labeled ? label_column + "," : "") << "task,mean,stddev,count\n";
  for (const auto& r : results) {
    const auto row = [&](const char* task, const Summary& s) {
      out << lead(r) << task << ',' << format_double(s.mean) << ',' << format_double(s.stddev) << ',' << s.count
          << '\n';
    };
    row("pb", r.result.pb);
    row("tb", r.result.tb);
  }
}

}  // namespace temf
