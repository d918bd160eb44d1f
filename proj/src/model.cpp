#include "qadpt/model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>

#include "qadpt/error.hpp"
#include "qadpt/random.hpp"

namespace qadpt {

std::string to_string(ModelKind k) { return k == ModelKind::qadpt ? "qadpt" : "seq2seq"; }

ModelKind parse_model_kind(std::string_view s) {
  if (s == "qadpt") return ModelKind::qadpt;
  if (s == "seq2seq") return ModelKind::seq2seq;
  throw UsageError("unknown model '" + std::string(s) + "' (expected qadpt or seq2seq)");
}

void Hyperparams::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw UsageError(std::string("invalid hyperparameter: ") + what);
  };
  need(hidden >= 1, "hidden must be >= 1");
  need(hops >= 1, "hops must be >= 1");
  need(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(max_epochs >= 1, "max_epochs must be >= 1");
  need(clip_norm > 0.0, "clip_norm must be positive");
  need(init_scale > 0.0, "init_scale must be positive");
  need(max_decode_len >= 1, "max_decode_len must be >= 1");
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_unsigned(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw UsageError("bad value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out))
    throw UsageError("bad value '" + s + "' for " + std::string(key));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("bad value '" + std::string(v) + "' for " + std::string(key));
}

}  // namespace

std::vector<std::pair<std::string, std::string>> hyper_fields(const Hyperparams& h) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"model", to_string(h.model)},
      {"hidden", std::to_string(h.hidden)},
      {"embedding", std::to_string(h.embedding)},
      {"hops", std::to_string(h.hops)},
      {"lr", fmt_double(h.lr)},
      {"batch_size", std::to_string(h.batch_size)},
      {"max_epochs", std::to_string(h.max_epochs)},
      {"patience", std::to_string(h.patience)},
      {"teacher_forcing", b(h.teacher_forcing)},
      {"fine_tune", b(h.fine_tune)},
      {"seed", std::to_string(h.seed)},
      {"clip_norm", fmt_double(h.clip_norm)},
      {"init_scale", fmt_double(h.init_scale)},
      {"binary_chain", b(h.binary_chain)},
      {"max_decode_len", std::to_string(h.max_decode_len)},
  };
}

bool set_hyper_field(Hyperparams& h, std::string_view key, std::string_view v) {
  using sz = std::size_t;
  if (key == "model") h.model = parse_model_kind(v);
  else if (key == "hidden") h.hidden = parse_unsigned<sz>(key, v);
  else if (key == "embedding") h.embedding = parse_unsigned<sz>(key, v);
  else if (key == "hops") h.hops = parse_unsigned<sz>(key, v);
  else if (key == "lr") h.lr = parse_double(key, v);
  else if (key == "batch_size") h.batch_size = parse_unsigned<sz>(key, v);
  else if (key == "max_epochs") h.max_epochs = parse_unsigned<sz>(key, v);
  else if (key == "patience") h.patience = parse_unsigned<sz>(key, v);
  else if (key == "teacher_forcing") h.teacher_forcing = parse_bool(key, v);
  else if (key == "fine_tune") h.fine_tune = parse_bool(key, v);
  else if (key == "seed") h.seed = parse_unsigned<std::uint64_t>(key, v);
  else if (key == "clip_norm") h.clip_norm = parse_double(key, v);
  else if (key == "init_scale") h.init_scale = parse_double(key, v);
  else if (key == "binary_chain") h.binary_chain = parse_bool(key, v);
  else if (key == "max_decode_len") h.max_decode_len = parse_unsigned<sz>(key, v);
  else return false;
  return true;
}

ParameterList ModelParams::list() {
  ParameterList out{{"embedding", &embedding}};
  auto add_gru = [&](const std::string& prefix, GruCellParams& g) {
    out.push_back({prefix + ".w_z", &g.w_z});
    out.push_back({prefix + ".w_r", &g.w_r});
    out.push_back({prefix + ".w_h", &g.w_h});
    out.push_back({prefix + ".u_z", &g.u_z});
    out.push_back({prefix + ".u_r", &g.u_r});
    out.push_back({prefix + ".u_h", &g.u_h});
    out.push_back({prefix + ".b_z", &g.b_z});
    out.push_back({prefix + ".b_r", &g.b_r});
    out.push_back({prefix + ".b_h", &g.b_h});
  };
  add_gru("encoder", encoder);
  add_gru("decoder", decoder);
  out.push_back({"phi.w", &phi_w});
  out.push_back({"phi.b", &phi_b});
  if (theta_w.size() > 0) {
    out.push_back({"theta.w", &theta_w});
    out.push_back({"theta.b", &theta_b});
  }
  return out;
}

Model::Model(Hyperparams hyper, Vocabulary vocab, std::vector<std::string> relations)
    : hyper_(std::move(hyper)), vocab_(std::move(vocab)) {
  hyper_.validate();
  for (const auto& e : vocab_.entity_names()) catalog_.add_entity(e);
  for (const auto& r : relations) catalog_.add_relation(r);
  const std::size_t hid = hyper_.hidden, emb = hyper_.embedding_dim();
  Rng rng(hyper_.seed);
  auto init = [&](Tensor& t) { init_uniform(t, rng, hyper_.init_scale); };
  auto init_gru = [&](GruCellParams& g, std::size_t in) {
    g = GruCellParams::zeros(in, hid);
    for (Tensor* t : {&g.w_z, &g.w_r, &g.w_h, &g.u_z, &g.u_r, &g.u_h}) init(*t);
  };
  params_.embedding = Tensor({vocab_.size(), emb});
  init(params_.embedding);
  init_gru(params_.encoder, emb);
  init_gru(params_.decoder, emb);
  const std::size_t out_rows = is_qadpt() ? vocab_.generic_size() : vocab_.size();
  params_.phi_w = Tensor({out_rows, hid});
  params_.phi_b = Tensor({out_rows});
  init(params_.phi_w);
  if (is_qadpt()) {
    const std::size_t rows = catalog_.num_entities() * catalog_.num_relations_with_self_loop();
    params_.theta_w = Tensor({rows, hid});
    params_.theta_b = Tensor({rows});
    init(params_.theta_w);
  }
}

void Model::check_compatible(const Catalog& catalog, const Vocabulary& vocab) const {
  if (!(catalog == catalog_))
    throw DataError("entity/relation tables differ between the model and the corpus");
  if (!(vocab == vocab_)) throw DataError("vocabulary mismatch between the model and the corpus");
}

// ---- inputs -----------------------------------------------------------------

TurnInput make_input(const Model& m, std::span<const Token> message,
                     std::span<const EntityId> scene, const KnowledgeGraph& k) {
  TurnInput in;
  const Catalog& cat = m.catalog();
  for (EntityId e : scene) in.encoder.push_back(m.vocab().entity_token(e));
  for (const Token& t : message) in.encoder.push_back(m.vocab().id_of(t));
  if (in.encoder.empty()) throw DataError("empty encoder input");
  std::set<EntityId> seen;
  for (const Token& t : message)
    if (t.is_entity && seen.insert(cat.entity(t.text)).second) in.sources.push_back(cat.entity(t.text));
  for (EntityId e : scene)
    if (seen.insert(e).second) in.sources.push_back(e);
  in.knowledge = k;
  const bool strict = m.hyper().binary_chain;
  in.graph = build_turn_graph(k, cat, strict ? AdjacencyMode::binary : AdjacencyMode::normalized,
                              !strict);
  in.source = build_source_vector(in.sources, in.graph, strict);
  return in;
}

TurnInput make_input(const Model& m, const DialogueTurn& turn, const KnowledgeGraph& k) {
  return make_input(m, turn.message, turn.scene, k);
}

TurnInput make_input(const Model& m, const DialogueTurn& turn) {
  return make_input(m, turn, turn.subgraph);
}

std::vector<TokenId> response_targets(const Model& m, const DialogueTurn& turn) {
  std::vector<TokenId> out;
  for (const Token& t : turn.response) out.push_back(m.vocab().id_of(t));
  out.push_back(Vocabulary::EOS);
  return out;
}

// ---- forward pass -----------------------------------------------------------

namespace {

using GruVars = std::array<Tape::Var, 9>;

Tape::Var gru(Tape& tape, const GruVars& p, Tape::Var x, Tape::Var h) {
  auto gate = [&](int w, int u, int b) {
    return tape.sigmoid(tape.add(tape.add(tape.matvec(p[w], x), tape.matvec(p[u], h)), p[b]));
  };
  Tape::Var z = gate(0, 3, 6);
  Tape::Var r = gate(1, 4, 7);
  Tape::Var cand = tape.tanh(
      tape.add(tape.add(tape.matvec(p[2], x), tape.matvec(p[5], tape.mul(r, h))), p[8]));
  return tape.add(tape.mul(tape.one_minus(z), h), tape.mul(z, cand));
}

struct StepVars {
  Tape::Var hidden;
  Tape::Var probs;  // generic w (qadpt) or full output (seq2seq)
  Tape::Var k;      // local k (qadpt, nonempty graph)
  Tape::Var r;      // local R
  bool has_graph = false;
};

// One forward pass over a turn; parameters bound on the tape, with
// gradients when `grads` is given.
class Forward {
 public:
  Forward(const Model& m, const TurnInput& in, Tape& tape, Gradients* grads)
      : m_(m), in_(in), tape_(tape) {
    const ModelParams& p = m.params();
    std::size_t slot = 0;
    auto bind = [&](const Tensor& t) {
      return tape_.parameter(t, grads ? &grads->tensors.at(slot++) : nullptr);
    };
    auto bind_gru = [&](const GruCellParams& g) {
      GruVars v;
      const Tensor* ts[9] = {&g.w_z, &g.w_r, &g.w_h, &g.u_z, &g.u_r, &g.u_h, &g.b_z, &g.b_r, &g.b_h};
      for (int i = 0; i < 9; ++i) v[i] = bind(*ts[i]);
      return v;
    };
    emb_ = bind(p.embedding);
    enc_ = bind_gru(p.encoder);
    dec_ = bind_gru(p.decoder);
    phi_w_ = bind(p.phi_w);
    phi_b_ = bind(p.phi_b);
    if (m.is_qadpt()) {
      theta_w_ = bind(p.theta_w);
      theta_b_ = bind(p.theta_b);
    }
    const std::size_t out_rows = p.phi_w.rows();
    for (std::size_t i = 0; i < out_rows; ++i) out_rows_.push_back(i);
    out_mask_.assign(out_rows, 1);
    if (!m.is_qadpt() || in.graph.empty()) out_mask_[Vocabulary::KB] = 0;
    if (m.is_qadpt()) {
      const std::size_t L = in.graph.relations;
      for (EntityId e : in.graph.nodes)
        for (std::size_t r = 0; r < L; ++r) theta_rows_.push_back(index_of(e) * L + r);
    }
  }

  Tape::Var encode(std::span<const TokenId> ids) {
    if (ids.empty()) throw DataError("cannot encode an empty sequence");
    Tape::Var h = tape_.constant(Tensor({m_.hyper().hidden}));
    for (TokenId id : ids) h = gru(tape_, enc_, tape_.row(emb_, id), h);
    return h;
  }

  StepVars step(TokenId prev, Tape::Var state) {
    StepVars s;
    s.hidden = gru(tape_, dec_, tape_.row(emb_, prev), state);
    s.probs = tape_.masked_softmax(tape_.gather_affine(phi_w_, phi_b_, out_rows_, s.hidden), out_mask_);
    if (m_.is_qadpt() && !in_.graph.empty()) {
      s.has_graph = true;
      s.r = tape_.row_softmax(tape_.gather_affine(theta_w_, theta_b_, theta_rows_, s.hidden),
                              in_.graph.relations, in_.graph.active);
      s.k = propagate(tape_, in_.graph, s.r, in_.source, m_.hyper().hops);
      if (m_.hyper().binary_chain) s.k = tape_.normalize(s.k);
    }
    return s;
  }

  // o_t(y); `reachable` is false for entity targets with no mass.
  Tape::Var prob_of(const StepVars& s, TokenId y, bool& reachable) {
    reachable = true;
    const Vocabulary& v = m_.vocab();
    if (!m_.is_qadpt() || !v.is_entity(y)) return tape_.pick(s.probs, y);
    std::optional<std::size_t> local;
    if (s.has_graph) local = in_.graph.local(v.entity_of(y));
    if (!local || tape_.value(s.k)[*local] == 0.0) {
      reachable = false;
      return tape_.constant(Tensor({1}));
    }
    return tape_.mul(tape_.pick(s.probs, Vocabulary::KB), tape_.pick(s.k, *local));
  }

  std::vector<double> output(const StepVars& s) const {
    const Vocabulary& v = m_.vocab();
    const Tensor& probs = tape_.value(s.probs);
    if (!m_.is_qadpt()) return probs.storage();
    std::vector<double> o(v.size(), 0.0);
    for (std::size_t g = 0; g < v.generic_size(); ++g) o[g] = probs[g];
    o[Vocabulary::KB] = 0.0;
    if (s.has_graph) {
      const double c = probs[Vocabulary::KB];
      const Tensor& k = tape_.value(s.k);
      for (std::size_t l = 0; l < in_.graph.size(); ++l)
        o[v.entity_token(in_.graph.nodes[l])] = c * k[l];
    }
    return o;
  }

  DecoderStep describe(const StepVars& s) const {
    const Vocabulary& v = m_.vocab();
    const Catalog& cat = m_.catalog();
    DecoderStep d;
    d.hidden = tape_.value(s.hidden).storage();
    d.output = output(s);
    const Tensor& probs = tape_.value(s.probs);
    d.generic.assign(probs.values().begin(), probs.values().begin() + static_cast<std::ptrdiff_t>(v.generic_size()));
    if (!m_.is_qadpt()) {
      d.generic[Vocabulary::KB] = 0.0;
      return d;
    }
    d.controller = probs[Vocabulary::KB];
    const std::size_t L = cat.num_relations_with_self_loop();
    d.entity.assign(cat.num_entities(), 0.0);
    d.paths.assign(cat.num_entities() * L, 0.0);
    for (std::size_t e = 0; e < cat.num_entities(); ++e) d.paths[e * L + L - 1] = 1.0;
    if (s.has_graph) {
      const Tensor& k = tape_.value(s.k);
      const Tensor& r = tape_.value(s.r);
      d.local_paths = r.storage();
      for (std::size_t l = 0; l < in_.graph.size(); ++l) {
        const std::size_t e = index_of(in_.graph.nodes[l]);
        d.entity[e] = k[l];
        std::copy_n(r.storage().begin() + static_cast<std::ptrdiff_t>(l * L), L,
                    d.paths.begin() + static_cast<std::ptrdiff_t>(e * L));
      }
    }
    return d;
  }

 private:
  const Model& m_;
  const TurnInput& in_;
  Tape& tape_;
  Tape::Var emb_, phi_w_, phi_b_, theta_w_, theta_b_;
  GruVars enc_, dec_;
  std::vector<std::size_t> out_rows_, theta_rows_;
  std::vector<char> out_mask_;
};

TokenId argmax(std::span<const double> o) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < o.size(); ++i)
    if (o[i] > o[best]) best = i;
  return static_cast<TokenId>(best);
}

}  // namespace

std::vector<double> encode(const Model& m, std::span<const TokenId> tokens) {
  Tape tape;
  TurnInput none;
  Forward f(m, none, tape, nullptr);
  return tape.value(f.encode(tokens)).storage();
}

DecoderStep decode_step(const Model& m, TokenId prev, std::span<const double> state,
                        const TurnInput& in) {
  if (state.size() != m.hyper().hidden) throw NumericError("decoder state has the wrong size");
  Tape tape;
  Forward f(m, in, tape, nullptr);
  auto s = f.step(prev, tape.constant(Tensor::vector({state.begin(), state.end()})));
  return f.describe(s);
}

TurnLoss turn_loss(Model& m, const TurnInput& in, std::span<const TokenId> targets,
                   Gradients* grads, double seed) {
  Tape tape;
  Forward f(m, in, tape, grads);
  TurnLoss out;
  Tape::Var d = f.encode(in.encoder);
  Tape::Var total;
  bool first = true;
  TokenId prev = Vocabulary::BOS;
  for (TokenId y : targets) {
    StepVars s = f.step(prev, d);
    bool reachable = true;
    Tape::Var nll = tape.neg_log(f.prob_of(s, y, reachable), kProbFloor);
    out.unreachable += !reachable;
    total = first ? nll : tape.add(total, nll);
    first = false;
    d = s.hidden;
    prev = m.hyper().teacher_forcing ? y : argmax(f.output(s));
  }
  if (first) throw DataError("turn has no targets");
  out.nll = tape.scalar(total);
  out.tokens = targets.size();
  if (!std::isfinite(out.nll)) throw NumericError("non-finite loss");
  if (grads) tape.backward(total, seed);
  return out;
}

std::vector<ScoredStep> score_targets(const Model& m, const TurnInput& in,
                                      std::span<const TokenId> targets) {
  Tape tape;
  Forward f(m, in, tape, nullptr);
  std::vector<ScoredStep> out;
  Tape::Var d = f.encode(in.encoder);
  TokenId prev = Vocabulary::BOS;
  for (TokenId y : targets) {
    StepVars s = f.step(prev, d);
    const auto o = f.output(s);
    const TokenId best = argmax(o);
    out.push_back({y, o.at(y), best, o[best]});
    d = s.hidden;
    prev = y;
  }
  return out;
}

namespace {

template <class Choose>
DecodeResult run_decode(const Model& m, const TurnInput& in, std::size_t max_len, bool keep_steps,
                        Choose choose) {
  Tape tape;
  Forward f(m, in, tape, nullptr);
  DecodeResult out;
  Tape::Var d = f.encode(in.encoder);
  TokenId prev = Vocabulary::BOS;
  for (std::size_t t = 0; t < max_len; ++t) {
    StepVars s = f.step(prev, d);
    const auto o = f.output(s);
    const TokenId next = choose(o);
    if (keep_steps) out.steps.push_back(f.describe(s));
    if (next == Vocabulary::EOS) break;
    out.tokens.push_back(next);
    if (m.vocab().is_entity(next)) {
      EmittedEntity em{out.tokens.size() - 1, m.vocab().entity_of(next), std::nullopt};
      if (m.is_qadpt() && s.has_graph && o[next] > 0.0)
        em.path = infer_path(in.graph, tape.value(s.r).values(), in.source, em.entity, m.hyper().hops);
      out.entities.push_back(std::move(em));
    }
    d = s.hidden;
    prev = next;
  }
  return out;
}

}  // namespace

DecodeResult greedy_decode(const Model& m, const TurnInput& in, std::size_t max_len,
                           bool keep_steps) {
  return run_decode(m, in, max_len, keep_steps, [](const std::vector<double>& o) { return argmax(o); });
}

DecodeResult sample_decode(const Model& m, const TurnInput& in, std::size_t max_len,
                           std::uint64_t seed) {
  Rng rng(seed);
  return run_decode(m, in, max_len, false, [&](const std::vector<double>& o) {
    const double u = uniform_unit(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      acc += o[i];
      if (u < acc) return static_cast<TokenId>(i);
    }
    return argmax(o);
  });
}

std::vector<Token> to_tokens(const Model& m, std::span<const TokenId> ids) {
  std::vector<Token> out;
  for (TokenId id : ids) {
    const std::string& text = m.vocab().text(id);
    out.push_back({text, text, m.vocab().is_entity(id)});
  }
  return out;
}

std::string render(const Model& m, std::span<const TokenId> ids, TokenizeMode mode) {
  const auto toks = to_tokens(m, ids);
  return detokenize(toks, mode);
}

}  // namespace qadpt
