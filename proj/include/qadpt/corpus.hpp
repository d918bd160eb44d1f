#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qadpt/kgraph.hpp"

namespace qadpt {

enum class TokenizeMode {
  /// Space/punctuation separated words (Friends style).
  word,
  /// One token per UTF-8 character (HGZHZ style).
  character,
};

std::string to_string(TokenizeMode mode);
TokenizeMode parse_tokenize_mode(std::string_view s);

struct Token {
  /// Canonical entity name for entity tokens, the word itself otherwise.
  std::string text;
  /// Text as it appeared in the input.
  std::string surface;
  bool is_entity = false;
  friend bool operator==(const Token&, const Token&) = default;
};

struct Alias {
  std::string surface;
  std::string canonical;
  friend bool operator==(const Alias&, const Alias&) = default;
};

/// Surface-form table for entity matching: every canonical name plus aliases.
class Lexicon {
 public:
  Lexicon() = default;
  Lexicon(const Catalog& catalog, std::span<const Alias> aliases);

  void add(std::string surface, std::string canonical);
  /// Longest surface starting at byte `pos`; returns (length, canonical).
  /// With `word_boundaries` the match must also end at a word boundary.
  std::optional<std::pair<std::size_t, std::string>> longest_match(std::string_view text,
                                                                   std::size_t pos,
                                                                   bool word_boundaries) const;
  std::optional<std::string> canonical(std::string_view surface) const;
  bool empty() const { return surfaces_.empty(); }
  std::size_t size() const { return surfaces_.size(); }

 private:
  std::map<std::string, std::string, std::less<>> surfaces_;
  std::vector<std::size_t> lengths_;  // distinct surface lengths, descending
};

std::vector<Token> tokenize(std::string_view text, TokenizeMode mode, const Lexicon& lexicon);
std::string detokenize(std::span<const Token> tokens, TokenizeMode mode);

using TokenId = std::uint32_t;

/// Token ids: specials, then generic words by descending count, then every
/// catalog entity in catalog order.
class Vocabulary {
 public:
  static constexpr TokenId PAD = 0;
  static constexpr TokenId BOS = 1;
  static constexpr TokenId EOS = 2;
  static constexpr TokenId UNK = 3;
  static constexpr TokenId KB = 4;
  static constexpr std::size_t num_specials = 5;
  static constexpr std::size_t no_words = std::numeric_limits<std::size_t>::max();

  Vocabulary() = default;
  Vocabulary(std::vector<std::pair<std::string, std::size_t>> words,
             std::vector<std::string> entity_names);

  std::size_t size() const { return generic_size() + entities_.size(); }
  /// Specials plus generic words; the width of the generic softmax.
  std::size_t generic_size() const { return num_specials + words_.size(); }
  std::size_t num_entities() const { return entities_.size(); }
  TokenId entity_base() const { return static_cast<TokenId>(generic_size()); }

  TokenId id_of(const Token& t) const;
  TokenId word_id(std::string_view word) const;
  TokenId entity_token(EntityId e) const { return entity_base() + static_cast<TokenId>(index_of(e)); }
  bool is_entity(TokenId id) const { return id >= entity_base() && id < size(); }
  EntityId entity_of(TokenId id) const;
  const std::string& text(TokenId id) const;

  const std::vector<std::pair<std::string, std::size_t>>& words() const { return words_; }
  const std::vector<std::string>& entity_names() const { return entities_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.entities_ == b.entities_;
  }

 private:
  std::vector<std::pair<std::string, std::size_t>> words_;
  std::vector<std::string> entities_;
  std::map<std::string, TokenId, std::less<>> word_ids_;
  std::map<std::string, TokenId, std::less<>> entity_ids_;
};

enum class Split { train, validation, test };
std::string to_string(Split s);
Split parse_split(std::string_view s);

struct RawTurn {
  std::string dialogue_id;
  int turn = 0;
  std::string speaker;
  std::vector<std::string> scene_entities;
  std::string message;
  std::string response;
};

struct DialogueTurn {
  std::string dialogue_id;
  int turn = 0;
  std::string speaker;
  std::vector<EntityId> scene;
  std::vector<Token> message;
  std::vector<Token> response;
  Split split = Split::train;
  KnowledgeGraph subgraph;

  std::string id() const { return dialogue_id + "#" + std::to_string(turn); }
  /// Distinct message and scene entities in first-appearance order.
  std::vector<EntityId> source_entities(const Catalog& catalog) const;
  /// Distinct response entities in first-appearance order.
  std::vector<EntityId> target_entities(const Catalog& catalog) const;
  friend bool operator==(const DialogueTurn&, const DialogueTurn&) = default;
};

/// Training turns the vocabulary is built from; throws DataError when empty.
Vocabulary build_vocab(std::span<const DialogueTurn> turns, const Catalog& catalog,
                       std::size_t min_count);

using SplitSpec = std::map<std::string, Split>;

/// Whole-dialogue split targeting 85/5/10, balanced on each dialogue's
/// dominant speaker. Deterministic given the seed.
SplitSpec split_dialogues(std::span<const DialogueTurn> turns, std::uint64_t seed);

struct IngestOptions {
  TokenizeMode mode = TokenizeMode::word;
  std::size_t min_count = 1;
  std::uint64_t split_seed = 13;
  std::size_t paths_per_pair = 5;
  friend bool operator==(const IngestOptions&, const IngestOptions&) = default;
};

struct Corpus {
  IngestOptions options;
  Catalog catalog;
  KnowledgeGraph graph;
  std::vector<Alias> aliases;
  Vocabulary vocab;
  std::vector<DialogueTurn> turns;
  std::vector<std::string> warnings;

  std::vector<const DialogueTurn*> split(Split s) const;
  Lexicon lexicon() const { return Lexicon(catalog, aliases); }
  bool operator==(const Corpus& o) const {
    return options == o.options && catalog == o.catalog && graph == o.graph &&
           aliases == o.aliases && vocab == o.vocab && turns == o.turns;
  }
};

std::vector<RawTurn> parse_dialogues_jsonl(std::string_view text, const std::string& origin);
std::vector<RawTurn> read_dialogues_jsonl(const std::string& path);
void write_dialogues_jsonl(const std::string& path, std::span<const RawTurn> turns);
std::vector<Alias> parse_aliases(std::string_view text, const std::string& origin);
std::vector<Alias> read_aliases(const std::string& path);
void write_aliases(const std::string& path, std::span<const Alias> aliases);

/// Tokenizes, splits, builds the vocabulary and samples every turn's subgraph.
Corpus build_corpus(std::span<const RawTurn> raw, std::span<const NamedTriple> kg,
                    std::vector<Alias> aliases, const IngestOptions& options);

/// Reads the three input files. An empty alias path, or a missing alias file,
/// matches canonical names only and records a warning.
Corpus ingest(const std::string& dialogues_path, const std::string& kg_path,
              const std::string& alias_path, const IngestOptions& options);

void save_bundle(const Corpus& corpus, const std::string& dir);
Corpus load_bundle(const std::string& dir);

struct CorpusStats {
  std::size_t dialogues = 0;
  std::size_t turns = 0;
  std::size_t total_tokens = 0;
  double avg_turns_per_dialogue = 0.0;
  double avg_tokens_per_turn = 0.0;
  std::size_t unique_tokens = 0;
  std::size_t kg_entities = 0;
  std::size_t kg_relation_types = 0;
  std::size_t entity_occurrences = 0;
  std::size_t dialogues_with_entities = 0;
  std::size_t turns_with_entities = 0;
  /// hop count -> number of (source, target) pairs over the global graph
  std::map<std::size_t, std::size_t> shortest_path_lengths;
  std::size_t unreachable_pairs = 0;
  /// consecutive-turn subgraph edit distances within each dialogue
  std::size_t ged_pairs = 0;
  double ged_mean = 0.0;
  double ged_stddev = 0.0;
};

CorpusStats corpus_stats(const Corpus& corpus);

struct StatsRow {
  std::string name;
  double value = 0.0;
  bool integral = true;
};
std::vector<StatsRow> stats_rows(const CorpusStats& s);

struct ReferenceCheck {
  std::string name;
  double expected = 0.0;
  double actual = 0.0;
  bool match = false;
};
/// Published counts for the released corpora: "hgzhz" or "friends".
std::vector<StatsRow> reference_profile(std::string_view name);
std::vector<ReferenceCheck> compare_stats(const CorpusStats& s, std::span<const StatsRow> expected);

}  // namespace qadpt
