// SPDX-License-Identifier: Apache-2.0
#include "temf/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "temf/errors.hpp"
#include "temf/metrics.hpp"
#include "temf/rng.hpp"

namespace temf {

namespace {

// Init streams, one per component, so that dropping a component under an
// ablation leaves every other component's initial values unchanged.
enum Stream : std::uint64_t {
  kDocStream = 1,
  kSentenceStream,
  kContextStream,
  kTemporalStream,
  kEmotionStream,
  kSentenceDenseStream,
  kAbstractStream,
  kDiffStream,
  kPbHeadStream,
  kTbHeadStream,
  kShuffleStream = 101,
  kDropoutStream,
  kTableAStream = 201,
  kTableBStream,
};

Tensor label_init(const std::vector<std::string>& labels, const EmbeddingTable& table, std::size_t dim, Rng& rng) {
  Tensor out = xavier_uniform({labels.size(), dim}, rng);
  double* data = out.mutable_data().data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!table.contains(labels[i])) continue;
    const auto v = table.vector(labels[i]);
    std::copy(v.begin(), v.end(), data + i * dim);
  }
  return out;
}

Mask real_prefix(std::size_t real, std::size_t total) {
  Mask m(total, false);
  std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(std::min(real, total)), true);
  return m;
}

// Constant [rows x cols] matrix with ones on rows where mask is set.
Tensor row_mask_matrix(const Mask& mask, std::size_t cols) {
  Tensor m({mask.size(), cols});
  double* d = m.mutable_data().data();
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) std::fill(d + r * cols, d + (r + 1) * cols, 1.0);
  return m;
}

bool all_set(const Mask& m) { return std::all_of(m.begin(), m.end(), [](bool b) { return b; }); }

int argmax2(const Tensor& probs) { return probs[1] > probs[0] ? 1 : 0; }

Tensor pe_rows(const Tensor& table, std::size_t rows, std::size_t dim) {
  if (rows <= table.dim(0)) {
    if (rows == table.dim(0)) return table;
    Tape constant = Tape::inference();
    return constant.slice(table, 0, 0, rows);
  }
  return sinusoidal_pe(rows, dim);
}

}  // namespace

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::full:
      return "full";
    case Ablation::no_temporal:
      return "no_temporal";
    case Ablation::no_emotion:
      return "no_emotion";
  }
  return "full";
}

Ablation parse_ablation(std::string_view name) {
  if (name == "full") return Ablation::full;
  if (name == "no_temporal") return Ablation::no_temporal;
  if (name == "no_emotion") return Ablation::no_emotion;
  throw VocabularyError("unknown ablation '" + std::string(name) + "' (valid: full, no_temporal, no_emotion)");
}

std::size_t default_max_tokens(LanguageMode mode) { return mode == LanguageMode::code_mixed ? 17 : 15; }

// ---------------------------------------------------------------- ModelConfig

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("model config: ") + name + " must be positive");
  };
  positive(max_sentences, "max_sentences");
  positive(max_tokens, "max_tokens");
  positive(dim, "dim");
  positive(ffn_dim, "ffn_dim");
  positive(heads, "heads");
  positive(sentence_layers, "sentence_layers");
  positive(head_hidden, "head_hidden");
  positive(attention_dim, "attention_dim");
  positive(batch_size, "batch_size");
  if (dim % heads != 0) {
    throw ContractError("model config: dim " + std::to_string(dim) + " is not divisible by heads " +
                        std::to_string(heads));
  }
  if (dim % 2 != 0) throw ContractError("model config: dim must be even for sinusoidal positions");
  if (num_classes != 2) throw ContractError("model config: num_classes must be 2");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ContractError("model config: alpha and beta must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("model config: dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw ContractError("model config: learning_rate must be positive");
  if (emotion_labels.empty()) throw ContractError("model config: emotion vocabulary is empty");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["max_sentences"] = max_sentences;
  j["max_tokens"] = max_tokens;
  j["dim"] = dim;
  j["ffn_dim"] = ffn_dim;
  j["heads"] = heads;
  j["sentence_layers"] = sentence_layers;
  j["abstract_layers"] = abstract_layers;
  j["doc_encoder_layers"] = doc_encoder_layers;
  j["head_hidden"] = head_hidden;
  j["attention_dim"] = attention_dim;
  j["num_classes"] = num_classes;
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["diff_loss_enabled"] = diff_loss_enabled;
  j["diff_loss_normalize"] = diff_loss_normalize;
  j["ablation"] = std::string(to_string(ablation));
  j["dropout"] = dropout;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["dual_embeddings"] = dual_embeddings;
  j["train_embeddings"] = train_embeddings;
  j["emotion_labels"] = emotion_labels;
  j["rho_file"] = rho_file;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("model config is not a JSON object", 1);
  ModelConfig c;
  try {
    c.max_sentences = j.at("max_sentences").get<std::size_t>();
    c.max_tokens = j.at("max_tokens").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.sentence_layers = j.at("sentence_layers").get<std::size_t>();
    c.abstract_layers = j.at("abstract_layers").get<std::size_t>();
    c.doc_encoder_layers = j.at("doc_encoder_layers").get<std::size_t>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    c.attention_dim = j.at("attention_dim").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    c.diff_loss_enabled = j.at("diff_loss_enabled").get<bool>();
    c.diff_loss_normalize = j.at("diff_loss_normalize").get<bool>();
    c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    c.dropout = j.at("dropout").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dual_embeddings = j.at("dual_embeddings").get<bool>();
    c.train_embeddings = j.at("train_embeddings").get<bool>();
    c.emotion_labels = j.at("emotion_labels").get<std::vector<std::string>>();
    c.rho_file = j.value("rho_file", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what(), 1);
  }
  return c;
}

// ---------------------------------------------------------------- TemfModel

TemfModel::TemfModel(ModelConfig config, EmbeddingTable table_a, std::optional<EmbeddingTable> table_b)
    : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.dim;
  if (table_a.dim() != d) {
    throw DimensionError("embedding table A has dimension " + std::to_string(table_a.dim()) + ", model expects " +
                         std::to_string(d));
  }
  if (config_.dual_embeddings != table_b.has_value()) {
    throw ContractError(config_.dual_embeddings ? "dual_embeddings set but no second table given"
                                                : "second embedding table given without dual_embeddings");
  }
  if (table_b && table_b->dim() != d) {
    throw DimensionError("embedding table B has dimension " + std::to_string(table_b->dim()) + ", model expects " +
                         std::to_string(d));
  }
  table_a_ = table_a.clone();
  table_a_.set_trainable(config_.train_embeddings);
  if (table_b) {
    table_b_ = table_b->clone();
    table_b_->set_trainable(config_.train_embeddings);
  }
  if (!config_.rho_file.empty()) external_rho_ = load_rho_file(config_.rho_file, d);

  const auto stream = [&](Stream s) { return Rng(derive_seed(config_.seed, s)); };
  {
    Rng rng = stream(kDocStream);
    doc_cls = params_.add("doc.cls", xavier_uniform({d}, rng));
    doc_encoder = TransformerStack::create(params_, "doc", config_.doc_encoder_layers, d, config_.heads,
                                           config_.ffn_dim, rng);
  }
  {
    Rng rng = stream(kSentenceStream);
    sentence_encoder = TransformerStack::create(params_, "sentence", config_.sentence_layers, d, config_.heads,
                                                config_.ffn_dim, rng);
  }
  {
    Rng rng = stream(kContextStream);
    context_attention = AdditiveAttention::create(params_, "context_attention", d, d, config_.attention_dim, rng);
  }
  if (config_.ablation != Ablation::no_temporal) {
    Rng rng = stream(kTemporalStream);
    temporal_attention = AdditiveAttention::create(params_, "temporal_attention", d, d, config_.attention_dim, rng);
    std::vector<std::string> names;
    for (std::size_t t = 0; t < kTemporalCount; ++t) names.emplace_back(to_string(static_cast<Temporal>(t)));
    temporal_labels = params_.add("temporal.labels", label_init(names, table_a_, d, rng));
  }
  if (config_.ablation != Ablation::no_emotion) {
    Rng rng = stream(kEmotionStream);
    emotion_attention = AdditiveAttention::create(params_, "emotion_attention", d, d, config_.attention_dim, rng);
    emotion_labels = params_.add("emotion.labels", label_init(config_.emotion_labels, table_a_, d, rng));
  }
  {
    Rng rng = stream(kSentenceDenseStream);
    sentence_dense = Dense::create(params_, "sentence.dense", 2 * d, d, rng);
  }
  {
    Rng rng = stream(kAbstractStream);
    abstract_encoder = TransformerStack::create(params_, "abstract", config_.abstract_layers, d, config_.heads,
                                                config_.ffn_dim, rng);
  }
  if (config_.diff_loss_enabled) {
    Rng rng = stream(kDiffStream);
    diff_proj = Dense::create(params_, "diff.rho_proj", d, d, rng);
  }
  const auto make_head = [&](const std::string& name, Stream s) {
    Rng rng = stream(s);
    Head h;
    h.hidden = Dense::create(params_, name + ".hidden", d, config_.head_hidden, rng);
    h.rho_proj = Dense::create(params_, name + ".rho_proj", d, config_.head_hidden, rng);
    h.out = Dense::create(params_, name + ".out", config_.head_hidden, config_.num_classes, rng);
    return h;
  };
  pb_head = make_head("pb", kPbHeadStream);
  tb_head = make_head("tb", kTbHeadStream);

  token_pe_ = sinusoidal_pe(config_.max_tokens, d);
  doc_pe_ = sinusoidal_pe(1 + config_.max_sentences * config_.max_tokens, d);
  sentence_pe_ = sinusoidal_pe(config_.max_sentences, d);
}

ParameterSet TemfModel::optimizer_parameters() const {
  ParameterSet set = params_;
  if (table_a_.trainable()) set.add("embedding.a", table_a_.matrix());
  if (table_b_ && table_b_->trainable()) set.add("embedding.b", table_b_->matrix());
  return set;
}

std::vector<ParameterSet::Entry> TemfModel::checkpoint_tensors() const {
  std::vector<ParameterSet::Entry> out = params_.entries();
  out.push_back({"embedding.a", table_a_.matrix()});
  if (table_b_) out.push_back({"embedding.b", table_b_->matrix()});
  return out;
}

EncodedNote TemfModel::encode(const Note& note) const {
  if (note.sentences.empty()) throw ContractError("note '" + note.id + "' has no sentences");
  if ((note.pb != 0 && note.pb != 1) || (note.tb != 0 && note.tb != 1)) {
    throw ContractError("note '" + note.id + "': labels must be 0 or 1");
  }
  const std::size_t n = config_.max_sentences;
  const std::size_t c = config_.max_tokens;
  EncodedNote e;
  e.id = note.id;
  e.pb = note.pb;
  e.tb = note.tb;
  const auto lookup = [](const EmbeddingTable& t, const std::string& tok) { return t.index(tok); };
  for (std::size_t i = 0; i < note.sentences.size(); ++i) {
    const Sentence& s = note.sentences[i];
    if (s.tokens.empty()) throw ContractError("note '" + note.id + "': sentence " + std::to_string(i) + " is empty");
    if (s.emotion.empty()) {
      throw ContractError("note '" + note.id + "': sentence " + std::to_string(i) + " has no emotion label");
    }
    for (const auto& tok : s.tokens) {
      if (e.doc_a.size() == n * c) break;
      e.doc_a.push_back(lookup(table_a_, tok));
      if (table_b_) e.doc_b.push_back(lookup(*table_b_, tok));
    }
    if (i >= n) continue;
    const auto it = std::find(config_.emotion_labels.begin(), config_.emotion_labels.end(), s.emotion);
    if (it == config_.emotion_labels.end()) {
      std::string valid;
      for (const auto& l : config_.emotion_labels) valid += (valid.empty() ? "" : ", ") + l;
      throw VocabularyError("note '" + note.id + "': sentence " + std::to_string(i) + " has unknown emotion '" +
                            s.emotion + "' (valid: " + valid + ")");
    }
    e.emotion.push_back(static_cast<std::size_t>(it - config_.emotion_labels.begin()));
    e.temporal.push_back(static_cast<std::size_t>(s.temporal));
    std::vector<long> a, b;
    for (std::size_t t = 0; t < std::min(c, s.tokens.size()); ++t) {
      a.push_back(lookup(table_a_, s.tokens[t]));
      if (table_b_) b.push_back(lookup(*table_b_, s.tokens[t]));
    }
    e.sent_a.push_back(std::move(a));
    e.sent_b.push_back(std::move(b));
  }
  if (const auto it = external_rho_.find(note.id); it != external_rho_.end()) e.external_rho = it->second;
  return e;
}

Tensor TemfModel::encode_document(Tape& tape, const EncodedNote& note, const LayerContext& ctx) const {
  const std::size_t d = config_.dim;
  if (note.external_rho) {
    if (note.external_rho->size() != d) {
      throw DimensionError("external document vector for '" + note.id + "' has " +
                           std::to_string(note.external_rho->size()) + " values, expected " + std::to_string(d));
    }
    return Tensor({d}, *note.external_rho);
  }
  const std::size_t length = note.doc_a.size();
  if (length == 0) throw ContractError("encode_document: note '" + note.id + "' has no tokens");
  const FusedEmbedding words =
      fused_embed_indices(tape, note.doc_a, note.doc_b, table_a_, table_b_ ? &*table_b_ : nullptr, length);
  std::vector<Tensor> parts{tape.reshape(doc_cls, {1, d}), words.rows};
  if (note.doc_padding > 0) parts.push_back(Tensor::zeros({note.doc_padding, d}));
  const std::size_t total = 1 + length + note.doc_padding;
  Tensor x = tape.add(tape.concat(parts, 0), pe_rows(doc_pe_, total, d));
  const Mask mask = real_prefix(1 + length, total);
  x = doc_encoder.forward(tape, x, mask, ctx);
  return tape.reshape(tape.slice(x, 0, 0, 1), {d});
}

Tensor TemfModel::encode_sentence(Tape& tape, std::span<const long> idx_a, std::span<const long> idx_b,
                                  const LayerContext& ctx, Mask* mask_out) const {
  if (idx_a.empty()) throw ContractError("encode_sentence: empty sentence");
  const FusedEmbedding fe =
      fused_embed_indices(tape, idx_a, idx_b, table_a_, table_b_ ? &*table_b_ : nullptr, config_.max_tokens);
  Tensor x = tape.add(fe.rows, token_pe_);
  x = sentence_encoder.forward(tape, x, fe.mask, ctx);
  // Padding rows carry attention output over real tokens; zero them so that
  // downstream sums over rows see only real positions.
  if (!all_set(fe.mask)) x = tape.mul(x, row_mask_matrix(fe.mask, config_.dim));
  if (mask_out) *mask_out = fe.mask;
  return x;
}

Tensor TemfModel::context_infuse(Tape& tape, const Tensor& rho, const Tensor& te, const Mask& mask,
                                 Tensor* weights_out) const {
  const auto att = context_attention.forward(tape, rho, te, mask);
  if (weights_out) *weights_out = att.weights;
  const Tensor column = row_mask_matrix(mask, 1);  // [c x 1]
  return tape.add(te, tape.matmul(column, tape.reshape(att.context, {1, config_.dim})));
}

Tensor TemfModel::label_attend(Tape& tape, const Tensor& te_context, const Mask& mask, const Tensor& labels,
                               std::size_t label, const AdditiveAttention& attention, Tensor* weights_out) const {
  if (label >= labels.dim(0)) throw ContractError("label index " + std::to_string(label) + " out of range");
  const Tensor query = tape.reshape(tape.slice(labels, 0, label, label + 1), {config_.dim});
  const auto att = attention.forward(tape, query, te_context, mask);
  if (weights_out) *weights_out = att.weights;
  return att.context;
}

Tensor TemfModel::sentence_abstract(Tape& tape, const Tensor& phi_temporal, const Tensor& phi_emotion) const {
  return sentence_dense.forward(tape, tape.concat({phi_temporal, phi_emotion}, 0), Activation::relu);
}

std::pair<Tensor, Tensor> TemfModel::doc_abstract(Tape& tape, const Tensor& sentence_vectors, const Mask& note_mask,
                                                  const LayerContext& ctx) const {
  if (std::none_of(note_mask.begin(), note_mask.end(), [](bool b) { return b; })) {
    throw ContractError("doc_abstract: every sentence position is padding");
  }
  Tensor x = tape.add(sentence_vectors, pe_rows(sentence_pe_, sentence_vectors.dim(0), config_.dim));
  x = abstract_encoder.forward(tape, x, note_mask, ctx);
  const Tensor pooled = tape.max_pool(x, 0, &note_mask);
  return {x, pooled};
}

std::pair<Tensor, Tensor> TemfModel::task_heads(Tape& tape, const Tensor& pooled, const Tensor& rho) const {
  const auto run = [&](const Head& h) {
    const Tensor hidden = tape.add(h.hidden.forward(tape, pooled, Activation::relu), h.rho_proj.forward(tape, rho));
    return tape.softmax(h.out.forward(tape, hidden), 0);
  };
  return {run(pb_head), run(tb_head)};
}

ForwardTrace TemfModel::forward(Tape& tape, const EncodedNote& note, const LayerContext& ctx) const {
  const std::size_t d = config_.dim;
  const std::size_t n = config_.max_sentences;
  const std::size_t real = note.sent_a.size();
  if (real == 0) throw ContractError("forward: note '" + note.id + "' has no sentences");
  if (real > n) throw ContractError("forward: note '" + note.id + "' was encoded for a larger context length");

  ForwardTrace tr;
  tr.rho = encode_document(tape, note, ctx);
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < real; ++i) {
    Mask mask;
    const Tensor te = encode_sentence(tape, note.sent_a[i], note.sent_b[i], ctx, &mask);
    Tensor cw;
    const Tensor te_c = context_infuse(tape, tr.rho, te, mask, &cw);

    Tensor phi_t, phi_e;
    if (config_.ablation == Ablation::no_temporal) {
      phi_t = tape.mean(te_c, 0, &mask);
    } else {
      Tensor w;
      phi_t = label_attend(tape, te_c, mask, temporal_labels, note.temporal[i], temporal_attention, &w);
      tr.temporal_weights.push_back(w);
    }
    if (config_.ablation == Ablation::no_emotion) {
      phi_e = tape.mean(te_c, 0, &mask);
    } else {
      Tensor w;
      phi_e = label_attend(tape, te_c, mask, emotion_labels, note.emotion[i], emotion_attention, &w);
      tr.emotion_weights.push_back(w);
    }
    rows.push_back(tape.reshape(sentence_abstract(tape, phi_t, phi_e), {1, d}));

    tr.te.push_back(te);
    tr.te_context.push_back(te_c);
    tr.context_weights.push_back(cw);
    tr.phi_temporal.push_back(phi_t);
    tr.phi_emotion.push_back(phi_e);
    tr.token_masks.push_back(std::move(mask));
  }
  if (real < n) rows.push_back(Tensor::zeros({n - real, d}));
  tr.sentence_vectors = rows.size() == 1 ? rows.front() : tape.concat(rows, 0);
  tr.note_mask = real_prefix(real, n);

  auto [delta, pooled] = doc_abstract(tape, tr.sentence_vectors, tr.note_mask, ctx);
  tr.delta = delta;
  tr.pooled = pooled;

  const auto head = [&](const Head& h, Tensor& logits, Tensor& probs) {
    const Tensor hidden =
        tape.add(h.hidden.forward(tape, tr.pooled, Activation::relu), h.rho_proj.forward(tape, tr.rho));
    logits = h.out.forward(tape, hidden);
    probs = tape.softmax(logits, 0);
  };
  head(pb_head, tr.logits_pb, tr.probs_pb);
  head(tb_head, tr.logits_tb, tr.probs_tb);
  return tr;
}

LossTerms TemfModel::loss(Tape& tape, const ForwardTrace& trace, int y_pb, int y_tb) const {
  if ((y_pb != 0 && y_pb != 1) || (y_tb != 0 && y_tb != 1)) {
    throw ContractError("loss: labels must be 0 or 1, got pb=" + std::to_string(y_pb) + " tb=" + std::to_string(y_tb));
  }
  const Tensor ce_pb = tape.cross_entropy(trace.probs_pb, static_cast<std::size_t>(y_pb));
  const Tensor ce_tb = tape.cross_entropy(trace.probs_tb, static_cast<std::size_t>(y_tb));
  LossTerms out;
  out.pb = ce_pb.item();
  out.tb = ce_tb.item();
  out.total = tape.add(tape.scale(ce_pb, config_.alpha), tape.scale(ce_tb, config_.beta));
  if (config_.diff_loss_enabled) {
    const Tensor projected = diff_proj.forward(tape, trace.rho);
    const Tensor diff = config_.diff_loss_normalize ? tape.mean_squared_error(trace.pooled, projected)
                                                    : tape.squared_error(trace.pooled, projected);
    out.diff = diff.item();
    out.total = tape.add(out.total, diff);
  }
  return out;
}

Prediction TemfModel::predict(const EncodedNote& note) const {
  Tape tape = Tape::inference();
  const ForwardTrace tr = forward(tape, note, LayerContext{});
  Prediction p;
  p.pb = argmax2(tr.probs_pb);
  p.pb_prob = tr.probs_pb[1];
  p.tb = argmax2(tr.probs_tb);
  p.tb_prob = tr.probs_tb[1];
  return p;
}

// ---------------------------------------------------------------- helpers

std::pair<EmbeddingTable, std::optional<EmbeddingTable>> synthetic_embeddings(const Corpus& corpus,
                                                                              const ModelConfig& config) {
  std::vector<std::string> vocab = corpus.vocabulary();
  if (vocab.empty()) vocab.push_back("<none>");
  EmbeddingTable a = EmbeddingTable::random(vocab, config.dim, derive_seed(config.seed, kTableAStream),
                                            config.train_embeddings);
  std::optional<EmbeddingTable> b;
  if (config.dual_embeddings) {
    b = EmbeddingTable::random(vocab, config.dim, derive_seed(config.seed, kTableBStream), config.train_embeddings);
  }
  return {std::move(a), std::move(b)};
}

std::unordered_map<std::string, std::vector<double>> load_rho_file(const std::filesystem::path& path,
                                                                   std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open document-vector file " + path.string());
  std::unordered_map<std::string, std::vector<double>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string id;
    if (!(fields >> id)) continue;
    std::vector<double> v;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("bad number '" + tok + "'", line_no);
      }
    }
    if (v.size() != dim) {
      throw ParseError("expected " + std::to_string(dim) + " values, found " + std::to_string(v.size()), line_no);
    }
    if (!out.emplace(id, std::move(v)).second) throw ParseError("duplicate note id '" + id + "'", line_no);
  }
  return out;
}

// ---------------------------------------------------------------- training

namespace {

std::vector<std::vector<double>> snapshot(const ParameterSet& params) {
  std::vector<std::vector<double>> out;
  for (const auto& e : params.entries()) {
    const auto d = e.tensor.data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

void restore(ParameterSet& params, const std::vector<std::vector<double>>& values) {
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) std::copy(values[i].begin(), values[i].end(), entries[i].tensor.mutable_data().begin());
}

}  // namespace

TrainResult train(const Corpus& corpus, const ModelConfig& config, EmbeddingTable table_a,
                  std::optional<EmbeddingTable> table_b, const Corpus* validation) {
  config.validate();
  if (corpus.empty()) throw ContractError("train: corpus is empty");
  TemfModel model(config, std::move(table_a), std::move(table_b));

  std::vector<EncodedNote> notes;
  notes.reserve(corpus.size());
  for (const auto& note : corpus.notes) notes.push_back(model.encode(note));

  ParameterSet params = model.optimizer_parameters();
  Adam adam(AdamConfig{.learning_rate = config.learning_rate});
  Rng shuffle_rng(derive_seed(config.seed, kShuffleStream));
  Rng dropout_rng(derive_seed(config.seed, kDropoutStream));
  const LayerContext ctx{.training = true, .dropout = config.dropout, .rng = &dropout_rng};

  std::vector<std::size_t> order(notes.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLog> history;
  std::vector<std::vector<double>> best;
  double best_score = -1.0;
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const EncodedNote& note = notes[order[k]];
        Tape tape;
        const ForwardTrace trace = model.forward(tape, note, ctx);
        const LossTerms terms = model.loss(tape, trace, note.pb, note.tb);
        const double total = terms.total.item();
        if (!std::isfinite(total)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + " (note '" + note.id + "')");
        }
        tape.backward(terms.total, weight);
        log.pb += terms.pb;
        log.tb += terms.tb;
        log.diff += terms.diff;
        log.total += total;
      }
      try {
        adam.step(params);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      params.zero_grads();
    }
    const double count = static_cast<double>(notes.size());
    log.pb /= count;
    log.tb /= count;
    log.diff /= count;
    log.total /= count;
    if (validation && !validation->empty()) {
      const Evaluation ev = evaluate(model, *validation);
      const double score = 0.5 * (ev.f1_pb + ev.f1_tb);
      log.validation_f1 = score;
      if (score > best_score) {
        best_score = score;
        best_epoch = epoch;
        best = snapshot(params);
      }
    } else {
      best_epoch = epoch;
    }
    history.push_back(log);
  }
  if (!best.empty()) restore(params, best);
  return TrainResult{std::move(model), std::move(history), best_epoch};
}

TrainResult train(const Corpus& corpus, const ModelConfig& config, const Corpus* validation) {
  Corpus all = corpus;
  if (validation) all.notes.insert(all.notes.end(), validation->notes.begin(), validation->notes.end());
  auto [a, b] = synthetic_embeddings(all, config);
  return train(corpus, config, std::move(a), std::move(b), validation);
}

Evaluation evaluate(const TemfModel& model, const Corpus& corpus) {
  Evaluation ev;
  std::vector<int> t_pb, t_tb, p_pb, p_tb;
  for (const auto& note : corpus.notes) {
    const Prediction p = model.predict(note);
    t_pb.push_back(note.pb);
    t_tb.push_back(note.tb);
    p_pb.push_back(p.pb);
    p_tb.push_back(p.tb);
    ev.predictions.push_back(p);
  }
  ev.f1_pb = macro_f1(t_pb, p_pb);
  ev.f1_tb = macro_f1(t_tb, p_tb);
  return ev;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const TemfModel& model, const std::filesystem::path& path, const std::string& metadata_json) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  nlohmann::ordered_json header;
  header["format"] = std::string(kCheckpointMagic);
  header["config"] = nlohmann::ordered_json::parse(model.config().to_json());
  header["table_a"] = model.table_a().tokens();
  if (model.table_b()) header["table_b"] = model.table_b()->tokens();
  const auto meta = nlohmann::ordered_json::parse(metadata_json, nullptr, false);
  if (meta.is_discarded()) throw ContractError("checkpoint metadata is not valid JSON");
  header["metadata"] = meta;
  auto& dir = header["tensors"] = nlohmann::ordered_json::array();
  const auto tensors = model.checkpoint_tensors();
  for (const auto& e : tensors) dir.push_back({{"name", e.name}, {"shape", e.tensor.shape()}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto& e : tensors)
    out.write(reinterpret_cast<const char*>(e.tensor.data().data()), static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
  if (!out) throw ConfigError("error writing checkpoint " + path.string());
}

TemfModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw ParseError("not a checkpoint (expected '" + std::string(kCheckpointMagic) + "')", 1);
  std::getline(in, header_line);
  const auto header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded()) throw ParseError("checkpoint header is not valid JSON", 2);

  try {
    const ModelConfig config = ModelConfig::from_json(header.at("config").dump());
    const auto make_table = [&](const char* key) {
      const auto tokens = header.at(key).get<std::vector<std::string>>();
      return EmbeddingTable(tokens, Tensor::zeros({tokens.size(), config.dim}), config.train_embeddings);
    };
    std::optional<EmbeddingTable> b;
    if (header.contains("table_b")) b = make_table("table_b");
    TemfModel model(config, make_table("table_a"), std::move(b));

    const auto tensors = model.checkpoint_tensors();
    const auto& dir = header.at("tensors");
    if (dir.size() != tensors.size()) {
      throw ParseError("checkpoint has " + std::to_string(dir.size()) + " tensors, model expects " +
                       std::to_string(tensors.size()), 2);
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto name = dir[i].at("name").get<std::string>();
      const auto shape = dir[i].at("shape").get<Shape>();
      if (name != tensors[i].name || shape != tensors[i].tensor.shape()) {
        throw ParseError("checkpoint tensor '" + name + "' " + shape_string(shape) + " does not match model tensor '" +
                         tensors[i].name + "' " + shape_string(tensors[i].tensor.shape()), 2);
      }
      Tensor t = tensors[i].tensor;
      in.read(reinterpret_cast<char*>(t.mutable_data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw ParseError("checkpoint truncated in tensor '" + name + "'", 2);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 2);
  }
}

}  // namespace temf
