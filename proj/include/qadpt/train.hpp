#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qadpt/adam.hpp"
#include "qadpt/corpus.hpp"
#include "qadpt/model.hpp"

namespace qadpt {

struct EpochRecord {
  std::string phase;  // "train" or "fine_tune"
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean token NLL
  std::size_t train_tokens = 0;
  std::size_t unreachable = 0;
  double grad_norm = 0.0;  // mean pre-clip norm over batches
  double val_ppl = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

std::string to_json_line(const EpochRecord& r);

struct TrainResult {
  Model model;  // best validation parameters
  std::vector<EpochRecord> log;
  double best_val_ppl = 0.0;  // full validation split, best weights
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// exp(mean token NLL) under teacher forcing.
double perplexity(const Model& m, std::span<const DialogueTurn* const> turns);

/// One epoch count past `patience` non-improving epochs ends a phase (a
/// patience of 0 behaves like 1). With fine_tune a second phase trains on
/// turns whose response has entities, starting from the best weights.
TrainResult train(const Corpus& corpus, const Hyperparams& hyper, const EpochCallback& on_epoch = {});

/// Turns whose response contains an entity (the fine-tuning subset).
std::vector<const DialogueTurn*> entity_turns(std::span<const DialogueTurn* const> turns);

/// Lower-level entry: trains `model` in place on the given turns.
std::vector<EpochRecord> train_phase(Model& model, std::span<const DialogueTurn* const> train_turns,
                                     std::span<const DialogueTurn* const> val_turns,
                                     const std::string& phase, const EpochCallback& on_epoch,
                                     double& best_val_ppl);  // in: score to beat

}  // namespace qadpt
