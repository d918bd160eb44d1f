#include "qadpt/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <set>

#include "json.hpp"
#include "qadpt/error.hpp"
#include "qadpt/io.hpp"
#include "qadpt/random.hpp"

namespace qadpt {

using nlohmann::json;

std::string to_string(TokenizeMode mode) { return mode == TokenizeMode::word ? "word" : "char"; }

TokenizeMode parse_tokenize_mode(std::string_view s) {
  if (s == "word") return TokenizeMode::word;
  if (s == "char" || s == "character") return TokenizeMode::character;
  throw UsageError("unknown tokenize mode '" + std::string(s) + "' (expected word or char)");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "valid" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

// ---- tokenization -----------------------------------------------------------

namespace {

bool is_space(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }

// Bytes that may continue an entity name; non-ASCII bytes count as letters.
bool is_word_byte(unsigned char c) {
  return c >= 0x80 || std::isalnum(c) || c == '_' || c == '-';
}

bool is_detached(unsigned char c) {
  return c < 0x80 && std::ispunct(c) && c != '\'' && c != '_' && c != '-';
}

std::size_t codepoint_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

}  // namespace

Lexicon::Lexicon(const Catalog& catalog, std::span<const Alias> aliases) {
  for (const auto& name : catalog.entity_names()) add(name, name);
  for (const Alias& a : aliases) {
    if (!catalog.find_entity(a.canonical))
      throw DataError("alias '" + a.surface + "' points at unknown entity '" + a.canonical + "'");
    add(a.surface, a.canonical);
  }
}

void Lexicon::add(std::string surface, std::string canonical) {
  if (surface.empty()) throw DataError("empty lexicon surface");
  auto it = surfaces_.find(surface);
  if (it != surfaces_.end() && it->second != canonical)
    throw DataError("surface '" + surface + "' maps to both '" + it->second + "' and '" +
                    canonical + "'");
  const std::size_t len = surface.size();
  surfaces_[std::move(surface)] = std::move(canonical);
  if (std::find(lengths_.begin(), lengths_.end(), len) == lengths_.end()) {
    lengths_.push_back(len);
    std::sort(lengths_.rbegin(), lengths_.rend());
  }
}

std::optional<std::pair<std::size_t, std::string>> Lexicon::longest_match(
    std::string_view text, std::size_t pos, bool word_boundaries) const {
  for (std::size_t len : lengths_) {
    if (pos + len > text.size()) continue;
    const std::size_t end = pos + len;
    if (word_boundaries && end < text.size() && is_word_byte(text[end])) continue;
    auto it = surfaces_.find(text.substr(pos, len));
    if (it != surfaces_.end()) return std::make_pair(len, it->second);
  }
  return std::nullopt;
}

std::optional<std::string> Lexicon::canonical(std::string_view surface) const {
  auto it = surfaces_.find(surface);
  if (it == surfaces_.end()) return std::nullopt;
  return it->second;
}

std::vector<Token> tokenize(std::string_view text, TokenizeMode mode, const Lexicon& lexicon) {
  std::vector<Token> out;
  auto boundary = [&](std::size_t i) { return i == 0 || !is_word_byte(text[i - 1]); };
  const bool words = mode == TokenizeMode::word;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (!words || boundary(i)) {
      if (auto m = lexicon.longest_match(text, i, words)) {
        out.push_back({m->second, std::string(text.substr(i, m->first)), true});
        i += m->first;
        continue;
      }
    }
    std::size_t j = i;
    if (!words) {
      j = std::min(text.size(), i + codepoint_length(c));
    } else if (is_detached(c)) {
      j = i + 1;
    } else {
      while (j < text.size() && !is_space(text[j]) && !is_detached(text[j])) {
        if (j > i && boundary(j) && lexicon.longest_match(text, j, true)) break;
        ++j;
      }
    }
    std::string piece(text.substr(i, j - i));
    out.push_back({piece, piece, false});
    i = j;
  }
  return out;
}

std::string detokenize(std::span<const Token> tokens, TokenizeMode mode) {
  std::string out;
  for (const Token& t : tokens) {
    if (mode == TokenizeMode::word && !out.empty()) out += ' ';
    out += t.surface;
  }
  return out;
}

// ---- vocabulary -------------------------------------------------------------

namespace {
const std::string kSpecialNames[Vocabulary::num_specials] = {"<pad>", "<bos>", "<eos>", "<unk>",
                                                             "<kb>"};
}

Vocabulary::Vocabulary(std::vector<std::pair<std::string, std::size_t>> words,
                       std::vector<std::string> entity_names)
    : words_(std::move(words)), entities_(std::move(entity_names)) {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (!word_ids_.emplace(words_[i].first, static_cast<TokenId>(num_specials + i)).second)
      throw DataError("duplicate vocabulary word '" + words_[i].first + "'");
  for (std::size_t i = 0; i < entities_.size(); ++i)
    if (!entity_ids_.emplace(entities_[i], entity_base() + static_cast<TokenId>(i)).second)
      throw DataError("duplicate vocabulary entity '" + entities_[i] + "'");
}

TokenId Vocabulary::word_id(std::string_view word) const {
  auto it = word_ids_.find(word);
  return it == word_ids_.end() ? UNK : it->second;
}

TokenId Vocabulary::id_of(const Token& t) const {
  if (!t.is_entity) return word_id(t.text);
  auto it = entity_ids_.find(t.text);
  if (it == entity_ids_.end()) throw DataError("entity '" + t.text + "' missing from vocabulary");
  return it->second;
}

EntityId Vocabulary::entity_of(TokenId id) const {
  if (!is_entity(id)) throw DataError("token id " + std::to_string(id) + " is not an entity");
  return entity_at(id - entity_base());
}

const std::string& Vocabulary::text(TokenId id) const {
  if (id < num_specials) return kSpecialNames[id];
  if (id < generic_size()) return words_[id - num_specials].first;
  if (id < size()) return entities_[id - entity_base()];
  throw DataError("token id " + std::to_string(id) + " out of range");
}

Vocabulary build_vocab(std::span<const DialogueTurn> turns, const Catalog& catalog,
                       std::size_t min_count) {
  if (turns.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const DialogueTurn& t : turns)
    for (const auto* side : {&t.message, &t.response})
      for (const Token& tok : *side)
        if (!tok.is_entity) ++counts[tok.text];
  std::vector<std::pair<std::string, std::size_t>> words;
  if (min_count != Vocabulary::no_words)
    for (auto& [w, n] : counts)
      if (n >= min_count) words.emplace_back(w, n);
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return Vocabulary(std::move(words), catalog.entity_names());
}

// ---- turns and splits -------------------------------------------------------


std::vector<EntityId> DialogueTurn::source_entities(const Catalog& catalog) const {
  // scene entities share the source role with message entities
  std::vector<EntityId> out;
  std::set<EntityId> seen;
  for (const Token& t : message)
    if (t.is_entity && seen.insert(catalog.entity(t.text)).second)
      out.push_back(catalog.entity(t.text));
  for (EntityId e : scene)
    if (seen.insert(e).second) out.push_back(e);
  return out;
}

std::vector<EntityId> DialogueTurn::target_entities(const Catalog& catalog) const {
  std::vector<EntityId> out;
  std::set<EntityId> seen;
  for (const Token& t : response)
    if (t.is_entity && seen.insert(catalog.entity(t.text)).second)
      out.push_back(catalog.entity(t.text));
  return out;
}

SplitSpec split_dialogues(std::span<const DialogueTurn> turns, std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::size_t>> speakers;
  for (const DialogueTurn& t : turns) {
    if (!speakers.contains(t.dialogue_id)) order.push_back(t.dialogue_id);
    ++speakers[t.dialogue_id][t.speaker];
  }
  std::map<std::string, std::string> dominant;
  for (const auto& [id, counts] : speakers) {
    const std::string* best = nullptr;
    std::size_t best_n = 0;
    for (const auto& [who, n] : counts)
      if (n > best_n) best = &who, best_n = n;
    dominant[id] = *best;
  }
  Rng rng(seed);
  shuffle(order, rng);
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return dominant[a] < dominant[b];
  });

  // Walk the speaker-sorted list and give each dialogue to the split that is
  // furthest behind its pro-rata quota, so every speaker run is cut ~85/5/10.
  const std::size_t n = order.size();
  const std::size_t val = static_cast<std::size_t>(std::llround(0.05 * static_cast<double>(n)));
  const std::size_t test = static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(n)));
  const std::array<std::size_t, 3> target{n - val - test, val, test};
  std::array<std::size_t, 3> assigned{0, 0, 0};
  SplitSpec spec;
  for (std::size_t i = 0; i < n; ++i) {
    int pick = -1;
    double best = -1e300;
    for (int s = 0; s < 3; ++s) {
      if (assigned[s] >= target[s]) continue;
      const double deficit = static_cast<double>(target[s]) * static_cast<double>(i + 1) /
                                 static_cast<double>(n) -
                             static_cast<double>(assigned[s]);
      if (deficit > best) best = deficit, pick = s;
    }
    ++assigned[pick];
    spec[order[i]] = static_cast<Split>(pick);
  }
  return spec;
}

std::vector<const DialogueTurn*> Corpus::split(Split s) const {
  std::vector<const DialogueTurn*> out;
  for (const DialogueTurn& t : turns)
    if (t.split == s) out.push_back(&t);
  return out;
}

// ---- input files ------------------------------------------------------------

namespace {

[[noreturn]] void line_error(const std::string& origin, std::size_t line, const std::string& msg) {
  throw DataError(origin + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

std::vector<RawTurn> parse_dialogues_jsonl(std::string_view text, const std::string& origin) {
  std::vector<RawTurn> out;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      line_error(origin, line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) line_error(origin, line_no, "expected a JSON object");
    RawTurn t;
    try {
      t.dialogue_id = j.at("dialogue_id").is_string() ? j.at("dialogue_id").get<std::string>()
                                                      : j.at("dialogue_id").dump();
      t.turn = j.at("turn").get<int>();
      t.speaker = j.value("speaker", std::string());
      t.scene_entities = j.value("scene_entities", std::vector<std::string>{});
      t.message = j.at("message").get<std::string>();
      t.response = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      line_error(origin, line_no, std::string("bad turn record: ") + e.what());
    }
    out.push_back(std::move(t));
  });
  return out;
}

std::vector<RawTurn> read_dialogues_jsonl(const std::string& path) {
  return parse_dialogues_jsonl(read_file(path), path);
}

void write_dialogues_jsonl(const std::string& path, std::span<const RawTurn> turns) {
  std::string out;
  for (const RawTurn& t : turns) {
    json j = {{"dialogue_id", t.dialogue_id}, {"turn", t.turn},          {"speaker", t.speaker},
              {"scene_entities", t.scene_entities}, {"message", t.message}, {"response", t.response}};
    out += j.dump() + "\n";
  }
  write_file_atomic(path, out);
}

std::vector<Alias> parse_aliases(std::string_view text, const std::string& origin) {
  std::vector<Alias> out;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty() || line.front() == '#') return;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0 || tab + 1 >= line.size() ||
        line.find('\t', tab + 1) != std::string_view::npos)
      line_error(origin, line_no, "expected surface<TAB>canonical_entity");
    out.push_back({std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))});
  });
  return out;
}

std::vector<Alias> read_aliases(const std::string& path) {
  return parse_aliases(read_file(path), path);
}

void write_aliases(const std::string& path, std::span<const Alias> aliases) {
  std::string out;
  for (const Alias& a : aliases) out += a.surface + "\t" + a.canonical + "\n";
  write_file_atomic(path, out);
}

// ---- corpus assembly --------------------------------------------------------

Corpus build_corpus(std::span<const RawTurn> raw, std::span<const NamedTriple> kg,
                    std::vector<Alias> aliases, const IngestOptions& options) {
  Corpus c;
  c.options = options;
  std::vector<std::string> entities, relations;
  for (const NamedTriple& t : kg) {
    entities.push_back(t.head);
    entities.push_back(t.tail);
    relations.push_back(t.relation);
  }
  c.catalog = Catalog::from_names(std::move(entities), std::move(relations));
  c.graph = to_graph(kg, c.catalog);
  c.aliases = std::move(aliases);
  const Lexicon lexicon = c.lexicon();

  for (std::size_t i = 0; i < raw.size(); ++i) {
    const RawTurn& r = raw[i];
    DialogueTurn t;
    t.dialogue_id = r.dialogue_id;
    t.turn = r.turn;
    t.speaker = r.speaker;
    for (const auto& name : r.scene_entities) {
      auto e = c.catalog.find_entity(name);
      if (!e)
        throw DataError("turn " + r.dialogue_id + "#" + std::to_string(r.turn) +
                        ": unknown scene entity '" + name + "'");
      t.scene.push_back(*e);
    }
    t.message = tokenize(r.message, options.mode, lexicon);
    t.response = tokenize(r.response, options.mode, lexicon);
    if (t.message.empty() || t.response.empty()) {
      c.warnings.push_back("turn " + t.id() + " has an empty message or response; skipped");
      continue;
    }
    c.turns.push_back(std::move(t));
  }
  if (c.turns.empty()) throw DataError("corpus has no usable turns");
  {
    std::set<std::string> ids;
    for (const auto& t : c.turns)
      if (!ids.insert(t.id()).second) throw DataError("duplicate turn id " + t.id());
  }

  const SplitSpec spec = split_dialogues(c.turns, options.split_seed);
  std::vector<DialogueTurn> train;
  for (DialogueTurn& t : c.turns) {
    t.split = spec.at(t.dialogue_id);
    if (t.split == Split::train) train.push_back(t);
  }
  if (train.empty()) train = c.turns;  // tiny corpora: every dialogue landed outside train
  c.vocab = build_vocab(train, c.catalog, options.min_count);

  for (DialogueTurn& t : c.turns) {
    const auto sources = t.source_entities(c.catalog);
    const auto targets = t.target_entities(c.catalog);
    t.subgraph = sample_subgraph(c.graph, sources, targets, options.paths_per_pair);
  }
  return c;
}

Corpus ingest(const std::string& dialogues_path, const std::string& kg_path,
              const std::string& alias_path, const IngestOptions& options) {
  const auto raw = read_dialogues_jsonl(dialogues_path);
  const auto kg = read_triple_names(kg_path);
  std::vector<Alias> aliases;
  std::string warning;
  if (alias_path.empty())
    warning = "no alias file given; entities are matched on canonical names only";
  else if (!std::filesystem::exists(alias_path))
    warning = "alias file " + alias_path + " not found; entities are matched on canonical names only";
  else
    aliases = read_aliases(alias_path);
  Corpus c = build_corpus(raw, kg, std::move(aliases), options);
  if (!warning.empty()) c.warnings.insert(c.warnings.begin(), warning);
  return c;
}

// ---- bundle -----------------------------------------------------------------

namespace {

json tokens_json(std::span<const Token> tokens) {
  json arr = json::array();
  for (const Token& t : tokens) {
    json o = {{"text", t.text}};
    if (t.is_entity) o["entity"] = true;
    if (t.surface != t.text) o["surface"] = t.surface;
    arr.push_back(std::move(o));
  }
  return arr;
}

std::vector<Token> tokens_from(const json& arr) {
  std::vector<Token> out;
  for (const json& o : arr) {
    Token t;
    t.text = o.at("text").get<std::string>();
    t.is_entity = o.value("entity", false);
    t.surface = o.value("surface", t.text);
    out.push_back(std::move(t));
  }
  return out;
}

json graph_json(const KnowledgeGraph& g, const Catalog& c) {
  json triples = json::array(), entities = json::array();
  for (const Triple& t : g.triples())
    triples.push_back({c.entity_name(t.head), c.relation_name(t.relation), c.entity_name(t.tail)});
  for (EntityId e : g.entities()) entities.push_back(c.entity_name(e));
  return {{"triples", triples}, {"entities", entities}};
}

KnowledgeGraph graph_from(const json& j, const Catalog& c) {
  KnowledgeGraph g;
  for (const json& t : j.at("triples"))
    g.add_triple({c.entity(t.at(0).get<std::string>()), c.relation(t.at(1).get<std::string>()),
                  c.entity(t.at(2).get<std::string>())});
  for (const json& e : j.at("entities")) g.add_entity(c.entity(e.get<std::string>()));
  return g;
}

}  // namespace

void save_bundle(const Corpus& c, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  json manifest = {
      {"format", "qadpt-bundle"},
      {"version", 1},
      {"tokenize_mode", to_string(c.options.mode)},
      {"min_count", c.options.min_count == Vocabulary::no_words ? json(nullptr)
                                                                : json(c.options.min_count)},
      {"split_seed", c.options.split_seed},
      {"paths_per_pair", c.options.paths_per_pair},
      {"entities", c.catalog.entity_names()},
      {"relations", c.catalog.relation_names()},
      {"num_turns", c.turns.size()},
      {"warnings", c.warnings},
  };
  write_file_atomic((d / "manifest.json").string(), manifest.dump(2) + "\n");

  std::string kg;
  for (const Triple& t : c.graph.triples()) kg += format_triple(t, c.catalog) + "\n";
  write_file_atomic((d / "kg.tsv").string(), kg);
  write_aliases((d / "aliases.tsv").string(), c.aliases);

  json words = json::array();
  for (const auto& [w, n] : c.vocab.words()) words.push_back({w, n});
  json vocab = {{"words", words}, {"entities", c.vocab.entity_names()}};
  write_file_atomic((d / "vocab.json").string(), vocab.dump() + "\n");

  std::string turns, subgraphs;
  for (const DialogueTurn& t : c.turns) {
    json scene = json::array();
    for (EntityId e : t.scene) scene.push_back(c.catalog.entity_name(e));
    json j = {{"dialogue_id", t.dialogue_id}, {"turn", t.turn},
              {"speaker", t.speaker},         {"split", to_string(t.split)},
              {"scene_entities", scene},      {"message", tokens_json(t.message)},
              {"response", tokens_json(t.response)}};
    turns += j.dump() + "\n";
    json s = graph_json(t.subgraph, c.catalog);
    s["turn_id"] = t.id();
    subgraphs += s.dump() + "\n";
  }
  write_file_atomic((d / "turns.jsonl").string(), turns);
  write_file_atomic((d / "subgraphs.jsonl").string(), subgraphs);
}

Corpus load_bundle(const std::string& dir) {
  const std::filesystem::path d(dir);
  const std::string manifest_path = (d / "manifest.json").string();
  if (!std::filesystem::exists(manifest_path))
    throw DataError(dir + " is not a corpus bundle (manifest.json missing)");
  Corpus c;
  try {
    const json m = json::parse(read_file(manifest_path));
    if (m.value("format", "") != "qadpt-bundle") throw DataError(manifest_path + ": wrong format tag");
    c.options.mode = parse_tokenize_mode(m.at("tokenize_mode").get<std::string>());
    c.options.min_count = m.at("min_count").is_null() ? Vocabulary::no_words
                                                      : m.at("min_count").get<std::size_t>();
    c.options.split_seed = m.at("split_seed").get<std::uint64_t>();
    c.options.paths_per_pair = m.at("paths_per_pair").get<std::size_t>();
    for (const auto& e : m.at("entities")) c.catalog.add_entity(e.get<std::string>());
    for (const auto& r : m.at("relations")) c.catalog.add_relation(r.get<std::string>());
    c.warnings = m.value("warnings", std::vector<std::string>{});

    const auto kg_path = (d / "kg.tsv").string();
    c.graph = to_graph(parse_triple_names(read_file(kg_path), kg_path), c.catalog);
    const auto alias_path = (d / "aliases.tsv").string();
    c.aliases = parse_aliases(read_file(alias_path), alias_path);

    const json v = json::parse(read_file((d / "vocab.json").string()));
    std::vector<std::pair<std::string, std::size_t>> words;
    for (const auto& w : v.at("words")) words.emplace_back(w.at(0).get<std::string>(), w.at(1).get<std::size_t>());
    c.vocab = Vocabulary(std::move(words), v.at("entities").get<std::vector<std::string>>());
    if (c.vocab.entity_names() != c.catalog.entity_names())
      throw DataError(dir + ": vocabulary entities disagree with the manifest");

    std::map<std::string, KnowledgeGraph> subgraphs;
    const auto sub_path = (d / "subgraphs.jsonl").string();
    for_each_line(read_file(sub_path), [&](std::size_t line_no, std::string_view line) {
      if (line.empty()) return;
      try {
        const json s = json::parse(line);
        subgraphs[s.at("turn_id").get<std::string>()] = graph_from(s, c.catalog);
      } catch (const json::exception& e) {
        line_error(sub_path, line_no, e.what());
      }
    });
    const auto turns_path = (d / "turns.jsonl").string();
    for_each_line(read_file(turns_path), [&](std::size_t line_no, std::string_view line) {
      if (line.empty()) return;
      try {
        const json j = json::parse(line);
        DialogueTurn t;
        t.dialogue_id = j.at("dialogue_id").get<std::string>();
        t.turn = j.at("turn").get<int>();
        t.speaker = j.at("speaker").get<std::string>();
        t.split = parse_split(j.at("split").get<std::string>());
        for (const auto& e : j.at("scene_entities")) t.scene.push_back(c.catalog.entity(e.get<std::string>()));
        t.message = tokens_from(j.at("message"));
        t.response = tokens_from(j.at("response"));
        auto it = subgraphs.find(t.id());
        if (it == subgraphs.end()) line_error(turns_path, line_no, "no subgraph for turn " + t.id());
        t.subgraph = it->second;
        c.turns.push_back(std::move(t));
      } catch (const json::exception& e) {
        line_error(turns_path, line_no, e.what());
      }
    });
  } catch (const json::exception& e) {
    throw DataError(dir + ": " + e.what());
  }
  return c;
}

// ---- statistics -------------------------------------------------------------

CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats s;
  s.turns = c.turns.size();
  s.kg_entities = c.catalog.num_entities();
  s.kg_relation_types = c.catalog.num_relations();
  std::set<std::string> dialogues, with_entities, unique;
  std::map<std::string, std::vector<const DialogueTurn*>> by_dialogue;
  const PathIndex index(c.graph);
  std::map<EntityId, std::map<EntityId, std::size_t>> dist_cache;
  for (const DialogueTurn& t : c.turns) {
    dialogues.insert(t.dialogue_id);
    by_dialogue[t.dialogue_id].push_back(&t);
    s.total_tokens += t.response.size();
    std::size_t ents = 0;
    for (const Token& tok : t.message) unique.insert(tok.text);
    for (const Token& tok : t.response) {
      unique.insert(tok.text);
      ents += tok.is_entity;
    }
    s.entity_occurrences += ents;
    if (ents > 0) {
      ++s.turns_with_entities;
      with_entities.insert(t.dialogue_id);
    }
    for (EntityId src : t.source_entities(c.catalog)) {
      auto it = dist_cache.find(src);
      if (it == dist_cache.end()) it = dist_cache.emplace(src, index.distances(src)).first;
      for (EntityId dst : t.target_entities(c.catalog)) {
        auto d = it->second.find(dst);
        if (d == it->second.end())
          ++s.unreachable_pairs;
        else
          ++s.shortest_path_lengths[d->second];
      }
    }
  }
  s.dialogues = dialogues.size();
  s.dialogues_with_entities = with_entities.size();
  s.unique_tokens = unique.size();
  if (s.dialogues) s.avg_turns_per_dialogue = static_cast<double>(s.turns) / static_cast<double>(s.dialogues);
  if (s.turns) s.avg_tokens_per_turn = static_cast<double>(s.total_tokens) / static_cast<double>(s.turns);

  std::vector<double> geds;
  for (auto& [id, list] : by_dialogue) {
    std::stable_sort(list.begin(), list.end(),
                     [](const DialogueTurn* a, const DialogueTurn* b) { return a->turn < b->turn; });
    for (std::size_t i = 1; i < list.size(); ++i)
      geds.push_back(static_cast<double>(graph_edit_distance(list[i - 1]->subgraph, list[i]->subgraph)));
  }
  s.ged_pairs = geds.size();
  if (!geds.empty()) {
    double sum = 0.0;
    for (double g : geds) sum += g;
    s.ged_mean = sum / static_cast<double>(geds.size());
    double var = 0.0;
    for (double g : geds) var += (g - s.ged_mean) * (g - s.ged_mean);
    s.ged_stddev = std::sqrt(var / static_cast<double>(geds.size()));
  }
  return s;
}

std::vector<StatsRow> stats_rows(const CorpusStats& s) {
  auto n = [](std::size_t v) { return static_cast<double>(v); };
  return {
      {"dialogues", n(s.dialogues), true},
      {"total_turns", n(s.turns), true},
      {"total_tokens", n(s.total_tokens), true},
      {"avg_turns_per_dialogue", s.avg_turns_per_dialogue, false},
      {"avg_tokens_per_turn", s.avg_tokens_per_turn, false},
      {"unique_tokens", n(s.unique_tokens), true},
      {"kg_entities", n(s.kg_entities), true},
      {"kg_relation_types", n(s.kg_relation_types), true},
      {"kg_entity_occurrences", n(s.entity_occurrences), true},
      {"dialogues_with_kg_entities", n(s.dialogues_with_entities), true},
      {"turns_with_kg_entities", n(s.turns_with_entities), true},
  };
}

std::vector<StatsRow> reference_profile(std::string_view name) {
  if (name == "hgzhz")
    return {{"dialogues", 1247},
            {"total_turns", 17164},
            {"total_tokens", 462647},
            {"avg_turns_per_dialogue", 13.76, false},
            {"avg_tokens_per_turn", 26.95, false},
            {"unique_tokens", 3624},
            {"kg_entities", 174},
            {"kg_relation_types", 9},
            {"kg_entity_occurrences", 46059},
            {"dialogues_with_kg_entities", 1166},
            {"turns_with_kg_entities", 10110}};
  if (name == "friends")
    return {{"dialogues", 3092},
            {"total_turns", 57757},
            {"total_tokens", 838913},
            {"avg_turns_per_dialogue", 18.68, false},
            {"avg_tokens_per_turn", 14.52, false},
            {"unique_tokens", 19762},
            {"kg_entities", 281},
            {"kg_relation_types", 7},
            {"kg_entity_occurrences", 176550},
            {"dialogues_with_kg_entities", 2373},
            {"turns_with_kg_entities", 9199}};
  throw UsageError("unknown reference profile '" + std::string(name) + "' (expected hgzhz or friends)");
}

std::vector<ReferenceCheck> compare_stats(const CorpusStats& s, std::span<const StatsRow> expected) {
  const auto actual = stats_rows(s);
  std::vector<ReferenceCheck> out;
  for (const StatsRow& e : expected) {
    auto it = std::find_if(actual.begin(), actual.end(), [&](const StatsRow& a) { return a.name == e.name; });
    if (it == actual.end()) throw UsageError("unknown statistic '" + e.name + "'");
    ReferenceCheck c{e.name, e.value, it->value, false};
    // published averages carry two decimals
    c.match = e.integral ? c.actual == c.expected : std::abs(c.actual - c.expected) < 0.005 + 1e-12;
    out.push_back(c);
  }
  return out;
}

}  // namespace qadpt
