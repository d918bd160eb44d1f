#include "qadpt/train.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "qadpt/error.hpp"
#include "qadpt/random.hpp"

namespace qadpt {

std::string to_json_line(const EpochRecord& r) {
  nlohmann::json j = {{"phase", r.phase},         {"epoch", r.epoch},
                      {"train_loss", r.train_loss}, {"train_tokens", r.train_tokens},
                      {"unreachable", r.unreachable}, {"grad_norm", r.grad_norm},
                      {"val_ppl", r.val_ppl},       {"improved", r.improved},
                      {"seconds", r.seconds}};
  return j.dump();
}

double perplexity(const Model& m, std::span<const DialogueTurn* const> turns) {
  if (turns.empty()) throw DataError("perplexity over an empty set of turns");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const DialogueTurn* t : turns) {
    const TurnInput in = make_input(m, *t);
    const auto targets = response_targets(m, *t);
    for (const ScoredStep& s : score_targets(m, in, targets)) {
      nll -= std::log(std::max(s.gold_prob, kProbFloor));
      ++tokens;
    }
  }
  return std::exp(nll / static_cast<double>(tokens));
}

std::vector<EpochRecord> train_phase(Model& model, std::span<const DialogueTurn* const> train_turns,
                                     std::span<const DialogueTurn* const> val_turns,
                                     const std::string& phase, const EpochCallback& on_epoch,
                                     double& best_val_ppl) {
  if (train_turns.empty()) throw DataError(phase + ": no training turns");
  if (val_turns.empty()) throw DataError(phase + ": no validation turns");
  const Hyperparams& hp = model.hyper();
  ParameterList params = model.parameters();
  Gradients grads = Gradients::zeros_like(params);
  AdamState adam = AdamState::zeros_like(params);
  AdamConfig adam_cfg;
  adam_cfg.lr = hp.lr;
  Rng rng(hp.seed ^ (phase == "train" ? 0x7261696eULL : 0x66696e65ULL));

  // Inputs (turn graphs, source vectors) depend only on the data.
  std::vector<TurnInput> inputs;
  std::vector<std::vector<TokenId>> targets;
  for (const DialogueTurn* t : train_turns) {
    inputs.push_back(make_input(model, *t));
    targets.push_back(response_targets(model, *t));
  }
  std::vector<std::size_t> order(train_turns.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  ModelParams best = model.params();
  std::vector<EpochRecord> log;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    shuffle(order, rng);
    EpochRecord rec;
    rec.phase = phase;
    rec.epoch = epoch;
    double nll = 0.0, norms = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += hp.batch_size) {
      const std::size_t e = std::min(order.size(), b + hp.batch_size);
      std::size_t tokens = 0;
      for (std::size_t i = b; i < e; ++i) tokens += targets[order[i]].size();
      grads.zero();
      for (std::size_t i = b; i < e; ++i) {
        const TurnLoss l = turn_loss(model, inputs[order[i]], targets[order[i]], &grads,
                                     1.0 / static_cast<double>(tokens));
        nll += l.nll;
        rec.unreachable += l.unreachable;
      }
      rec.train_tokens += tokens;
      norms += clip_global_norm(grads, hp.clip_norm);
      adam_update(params, grads, adam, adam_cfg);
      ++batches;
    }
    rec.train_loss = nll / static_cast<double>(rec.train_tokens);
    rec.grad_norm = norms / static_cast<double>(batches);
    if (!std::isfinite(rec.train_loss))
      throw NumericError(phase + " epoch " + std::to_string(epoch) + ": training loss diverged");
    rec.val_ppl = perplexity(model, val_turns);
    if (!std::isfinite(rec.val_ppl))
      throw NumericError(phase + " epoch " + std::to_string(epoch) + ": validation perplexity is not finite");
    rec.improved = rec.val_ppl < best_val_ppl;
    if (rec.improved) {
      best_val_ppl = rec.val_ppl;
      best = model.params();
      stale = 0;
    } else {
      ++stale;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!rec.improved && stale >= std::max<std::size_t>(1, hp.patience)) break;
  }
  model.params() = best;
  return log;
}

std::vector<const DialogueTurn*> entity_turns(std::span<const DialogueTurn* const> turns) {
  std::vector<const DialogueTurn*> out;
  for (const DialogueTurn* t : turns)
    if (std::any_of(t->response.begin(), t->response.end(), [](const Token& k) { return k.is_entity; }))
      out.push_back(t);
  return out;
}

TrainResult train(const Corpus& corpus, const Hyperparams& hyper, const EpochCallback& on_epoch) {
  hyper.validate();
  TrainResult result{Model(hyper, corpus.vocab, corpus.catalog.relation_names()), {},
                     std::numeric_limits<double>::infinity()};
  auto train_turns = corpus.split(Split::train);
  auto val_turns = corpus.split(Split::validation);
  if (val_turns.empty()) throw DataError("corpus has no validation turns");
  result.log = train_phase(result.model, train_turns, val_turns, "train", on_epoch, result.best_val_ppl);

  if (hyper.fine_tune) {
    auto ft_train = entity_turns(train_turns);
    auto ft_val = entity_turns(val_turns);
    if (ft_val.empty()) ft_val = val_turns;
    if (!ft_train.empty()) {
      // Entity-subset perplexity is a different scale; restart the best score.
      double best = perplexity(result.model, ft_val);
      auto more = train_phase(result.model, ft_train, ft_val, "fine_tune", on_epoch, best);
      result.log.insert(result.log.end(), more.begin(), more.end());
    }
  }
  result.best_val_ppl = perplexity(result.model, val_turns);
  return result;
}

}  // namespace qadpt
