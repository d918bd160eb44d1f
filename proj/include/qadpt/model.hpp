#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qadpt/corpus.hpp"
#include "qadpt/kernels.hpp"
#include "qadpt/reasoning.hpp"
#include "qadpt/tape.hpp"

namespace qadpt {

enum class ModelKind { qadpt, seq2seq };
std::string to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

struct Hyperparams {
  ModelKind model = ModelKind::qadpt;
  std::size_t hidden = 128;
  std::size_t embedding = 0;  // 0: same as hidden
  std::size_t hops = 6;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  bool teacher_forcing = true;
  bool fine_tune = false;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  double init_scale = 0.08;
  /// Binary s and A, unmasked relation softmax, renormalized k.
  bool binary_chain = false;
  std::size_t max_decode_len = 40;

  std::size_t embedding_dim() const { return embedding ? embedding : hidden; }
  /// Throws UsageError for out-of-range values.
  void validate() const;
  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

/// key=value view of every field, in a fixed order.
std::vector<std::pair<std::string, std::string>> hyper_fields(const Hyperparams& h);
/// Sets one field from text; returns false for an unknown key. Throws
/// UsageError for a malformed value.
bool set_hyper_field(Hyperparams& h, std::string_view key, std::string_view value);

struct ModelParams {
  Tensor embedding;  // vocab x embedding
  GruCellParams encoder;
  GruCellParams decoder;
  Tensor phi_w, phi_b;      // generic softmax (qadpt) or full softmax (seq2seq)
  Tensor theta_w, theta_b;  // |V| * |L'| relation logits; empty for seq2seq

  ParameterList list();
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

class Model {
 public:
  /// Randomly initialised from hyper.seed.
  Model(Hyperparams hyper, Vocabulary vocab, std::vector<std::string> relations);

  const Hyperparams& hyper() const { return hyper_; }
  Hyperparams& mutable_hyper() { return hyper_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Catalog& catalog() const { return catalog_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  ParameterList parameters() { return params_.list(); }
  bool is_qadpt() const { return hyper_.model == ModelKind::qadpt; }

  /// Throws DataError if `catalog` or `vocab` differ from the model's.
  void check_compatible(const Catalog& catalog, const Vocabulary& vocab) const;

 private:
  Hyperparams hyper_;
  Vocabulary vocab_;
  Catalog catalog_;
  ModelParams params_;
};

/// Everything the decoder needs about one turn.
struct TurnInput {
  std::vector<TokenId> encoder;  // scene entities, then the message
  std::vector<EntityId> sources;
  KnowledgeGraph knowledge;
  TurnGraph graph;
  std::vector<double> source;  // over graph.nodes
};

TurnInput make_input(const Model& m, std::span<const Token> message,
                     std::span<const EntityId> scene, const KnowledgeGraph& k);
TurnInput make_input(const Model& m, const DialogueTurn& turn);
/// Same turn against another graph (perturbation experiments).
TurnInput make_input(const Model& m, const DialogueTurn& turn, const KnowledgeGraph& k);
/// Response ids followed by EOS.
std::vector<TokenId> response_targets(const Model& m, const DialogueTurn& turn);

/// Final encoder state. Throws DataError for empty input.
std::vector<double> encode(const Model& m, std::span<const TokenId> tokens);

struct DecoderStep {
  std::vector<double> hidden;
  std::vector<double> generic;  // w_t over specials + words, KB entry = c_t
  double controller = 0.0;
  std::vector<double> entity;  // k_t over V
  std::vector<double> output;  // o_t over the vocabulary; KB gets 0
  std::vector<double> paths;   // R_t over V x L'; rows outside K are a pure self-loop
  std::vector<double> local_paths;  // R_t over the turn graph
};

DecoderStep decode_step(const Model& m, TokenId prev, std::span<const double> state,
                        const TurnInput& in);

struct TurnLoss {
  double nll = 0.0;  // summed over tokens
  std::size_t tokens = 0;
  std::size_t unreachable = 0;
};

inline constexpr double kProbFloor = 1e-12;

/// Sum of -log max(o_t(y_t), floor) over `targets`. With `grads`, runs
/// backward seeded by `seed` (e.g. 1 / batch tokens) into it.
TurnLoss turn_loss(Model& m, const TurnInput& in, std::span<const TokenId> targets,
                   Gradients* grads = nullptr, double seed = 1.0);

struct ScoredStep {
  TokenId gold = 0;
  double gold_prob = 0.0;
  TokenId argmax = 0;
  double argmax_prob = 0.0;
};
/// Teacher-forced probabilities of each target plus the argmax prediction.
std::vector<ScoredStep> score_targets(const Model& m, const TurnInput& in,
                                      std::span<const TokenId> targets);

struct EmittedEntity {
  std::size_t position = 0;
  EntityId entity{};
  std::optional<InferredPath> path;
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // EOS excluded
  std::vector<EmittedEntity> entities;
  std::vector<DecoderStep> steps;  // filled when requested
};

/// Argmax decoding (ties to the smallest id); stops at EOS or max_len.
DecodeResult greedy_decode(const Model& m, const TurnInput& in, std::size_t max_len,
                           bool keep_steps = false);
/// Samples each token from o_t.
DecodeResult sample_decode(const Model& m, const TurnInput& in, std::size_t max_len,
                           std::uint64_t seed);

std::vector<Token> to_tokens(const Model& m, std::span<const TokenId> ids);
std::string render(const Model& m, std::span<const TokenId> ids, TokenizeMode mode);

}  // namespace qadpt
