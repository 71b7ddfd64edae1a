// SPDX-License-Identifier: Apache-2.0
#pragma once

// Temporal- and emotion-assisted multitask classifier over multi-sentence
// notes. Data flow for one note:
//
//   tokens --fused embed--> doc encoder (CLS transformer)      -> rho [D]
//   each sentence --fused embed + PE--> shared encoder stack  -> te  [c x D]
//   te + attend(rho over te)                                  -> te_c
//   attend(temporal label over te_c) ++ attend(emotion label) -> dense -> s [D]
//   sentence vectors + sentence PE -> abstraction transformer -> delta [n x D]
//   max over real sentences                                   -> Delta [D]
//   per task: relu(dense(Delta)) + proj(rho) -> dense -> softmax
//   loss = alpha * CE_pb + beta * CE_tb + sum((Delta - proj(rho))^2)

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "temf/corpus.hpp"
#include "temf/embedding.hpp"
#include "temf/layers.hpp"

namespace temf {

enum class Ablation { full, no_temporal, no_emotion };

std::string_view to_string(Ablation a);
Ablation parse_ablation(std::string_view name);

struct ModelConfig {
  std::size_t max_sentences = 13;  // n
  std::size_t max_tokens = 15;     // c; 17 for code-mixed corpora
  std::size_t dim = 300;
  std::size_t ffn_dim = 600;
  std::size_t heads = 5;
  std::size_t sentence_layers = 2;
  std::size_t abstract_layers = 1;
  std::size_t doc_encoder_layers = 2;
  std::size_t head_hidden = 128;
  std::size_t attention_dim = 300;
  std::size_t num_classes = 2;
  double alpha = 1.0;
  double beta = 1.0;
  bool diff_loss_enabled = true;
  bool diff_loss_normalize = false;
  Ablation ablation = Ablation::full;
  double dropout = 0.1;
  double learning_rate = 2e-5;
  std::size_t batch_size = 4;
  std::size_t epochs = 6;
  std::uint64_t seed = 0;
  bool dual_embeddings = false;
  bool train_embeddings = true;
  std::vector<std::string> emotion_labels = default_emotion_labels();
  /// Optional `note_id v1 ... vD` file of document vectors that replace the
  /// trainable document encoder's output for the listed notes.
  std::string rho_file;

  /// Throws ContractError on inconsistent settings.
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

std::size_t default_max_tokens(LanguageMode mode);

/// A note resolved against the model's vocabularies and truncated to n
/// sentences of at most c tokens each.
struct EncodedNote {
  std::string id;
  std::vector<long> doc_a, doc_b;  // flattened note tokens, at most n*c
  std::size_t doc_padding = 0;     // extra masked positions appended to the doc sequence
  std::vector<std::vector<long>> sent_a, sent_b;
  std::vector<std::size_t> temporal;
  std::vector<std::size_t> emotion;
  int pb = 0;
  int tb = 0;
  std::optional<std::vector<double>> external_rho;
};

struct ForwardTrace {
  Tensor rho;                      // [D]
  std::vector<Tensor> te;          // per real sentence [c x D]
  std::vector<Tensor> te_context;  // per real sentence [c x D]
  std::vector<Tensor> context_weights;
  std::vector<Tensor> phi_temporal;  // per real sentence [D]
  std::vector<Tensor> phi_emotion;
  std::vector<Tensor> temporal_weights, emotion_weights;  // empty under the matching ablation
  Tensor sentence_vectors;  // [n x D], zero rows for padding
  Tensor delta;             // [n x D]
  Tensor pooled;            // Delta [D]
  Tensor logits_pb, logits_tb;
  Tensor probs_pb, probs_tb;
  Mask note_mask;
  std::vector<Mask> token_masks;
};

struct LossTerms {
  Tensor total;
  double pb = 0.0;
  double tb = 0.0;
  double diff = 0.0;
};

struct Prediction {
  int pb = 0;
  double pb_prob = 0.0;  // probability of the positive class
  int tb = 0;
  double tb_prob = 0.0;
};

/// Model parameters plus the embedding tables they read from. Movable,
/// not copyable (parameters are shared tensor handles).
class TemfModel {
 public:
  TemfModel(ModelConfig config, EmbeddingTable table_a, std::optional<EmbeddingTable> table_b = std::nullopt);
  TemfModel(const TemfModel&) = delete;
  TemfModel& operator=(const TemfModel&) = delete;
  TemfModel(TemfModel&&) = default;
  TemfModel& operator=(TemfModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const EmbeddingTable& table_a() const { return table_a_; }
  const EmbeddingTable* table_b() const { return table_b_ ? &*table_b_ : nullptr; }

  /// Architecture parameters (embedding tables excluded); a pure function
  /// of the config.
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }
  /// Architecture parameters plus trainable embedding tables.
  ParameterSet optimizer_parameters() const;
  /// Every tensor that a checkpoint stores, embedding tables included.
  std::vector<ParameterSet::Entry> checkpoint_tensors() const;

  /// Throws ContractError for empty notes or sentences and VocabularyError
  /// for labels outside the model's vocabularies.
  EncodedNote encode(const Note& note) const;

  ForwardTrace forward(Tape& tape, const EncodedNote& note, const LayerContext& ctx = {}) const;
  LossTerms loss(Tape& tape, const ForwardTrace& trace, int y_pb, int y_tb) const;
  Prediction predict(const EncodedNote& note) const;
  Prediction predict(const Note& note) const { return predict(encode(note)); }

  // Stages of the forward pass, exposed for testing.
  Tensor encode_document(Tape& tape, const EncodedNote& note, const LayerContext& ctx) const;
  Tensor encode_sentence(Tape& tape, std::span<const long> idx_a, std::span<const long> idx_b,
                         const LayerContext& ctx, Mask* mask_out = nullptr) const;
  Tensor context_infuse(Tape& tape, const Tensor& rho, const Tensor& te, const Mask& mask,
                        Tensor* weights_out = nullptr) const;
  Tensor sentence_abstract(Tape& tape, const Tensor& phi_temporal, const Tensor& phi_emotion) const;
  std::pair<Tensor, Tensor> doc_abstract(Tape& tape, const Tensor& sentence_vectors, const Mask& note_mask,
                                         const LayerContext& ctx) const;
  std::pair<Tensor, Tensor> task_heads(Tape& tape, const Tensor& pooled, const Tensor& rho) const;

  struct Head {
    Dense hidden;      // D -> H, relu
    Dense rho_proj;    // D -> H
    Dense out;         // H -> classes
  };

  // Components; absent ablation paths leave their members default-constructed.
  Tensor doc_cls;
  TransformerStack doc_encoder;
  TransformerStack sentence_encoder;
  AdditiveAttention context_attention;
  AdditiveAttention temporal_attention;
  AdditiveAttention emotion_attention;
  Tensor temporal_labels;  // [3 x D]
  Tensor emotion_labels;   // [E x D]
  Dense sentence_dense;
  TransformerStack abstract_encoder;
  Dense diff_proj;
  Head pb_head, tb_head;

 private:
  Tensor label_attend(Tape& tape, const Tensor& te_context, const Mask& mask, const Tensor& labels,
                      std::size_t label, const AdditiveAttention& attention, Tensor* weights_out) const;

  ModelConfig config_;
  std::unordered_map<std::string, std::vector<double>> external_rho_;
  EmbeddingTable table_a_;
  std::optional<EmbeddingTable> table_b_;
  ParameterSet params_;
  Tensor token_pe_;     // [c x D]
  Tensor doc_pe_;       // [(1 + n*c) x D]
  Tensor sentence_pe_;  // [n x D]
};

/// Random (seeded) tables over the corpus vocabulary; table B only when the
/// config asks for dual embeddings.
std::pair<EmbeddingTable, std::optional<EmbeddingTable>> synthetic_embeddings(const Corpus& corpus,
                                                                              const ModelConfig& config);

/// `note_id v1 ... vD` lines; used to inject externally computed document
/// vectors in place of the trainable document encoder.
std::unordered_map<std::string, std::vector<double>> load_rho_file(const std::filesystem::path& path,
                                                                   std::size_t dim);

// ---------------------------------------------------------------- training

struct EpochLog {
  double pb = 0.0;
  double tb = 0.0;
  double diff = 0.0;
  double total = 0.0;
  std::optional<double> validation_f1;  // mean of PB and TB macro-F1
};

struct TrainResult {
  TemfModel model;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;  // 0-based epoch whose parameters were kept
};

/// Mini-batch Adam on the mean per-note loss. With a validation corpus the
/// parameters of the best validation epoch are returned (ties keep the
/// earlier epoch), otherwise those of the last epoch. Throws NumericError
/// with epoch/batch context on a non-finite loss.
TrainResult train(const Corpus& corpus, const ModelConfig& config, EmbeddingTable table_a,
                  std::optional<EmbeddingTable> table_b = std::nullopt, const Corpus* validation = nullptr);

/// train() with synthetic_embeddings() over the union of both corpora.
TrainResult train(const Corpus& corpus, const ModelConfig& config, const Corpus* validation = nullptr);

struct Evaluation {
  double f1_pb = 0.0;
  double f1_tb = 0.0;
  std::vector<Prediction> predictions;
};

Evaluation evaluate(const TemfModel& model, const Corpus& corpus);

// ---------------------------------------------------------------- checkpoints

inline constexpr std::string_view kCheckpointMagic = "TEMF-CKPT-1";

/// Layout: magic line, one JSON header line (config echo, table vocabularies,
/// tensor directory, caller metadata), then raw little-endian float64 data.
void save_checkpoint(const TemfModel& model, const std::filesystem::path& path, const std::string& metadata_json = "{}");
TemfModel load_checkpoint(const std::filesystem::path& path);

}  // namespace temf
