#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qadpt/corpus.hpp"

namespace qadpt {

/// A question/answer pattern over the synthetic world. `hops` lists the
/// path length from the subject to each response entity.
struct SyntheticTemplate {
  std::string name;
  std::string subject_type;  // person, org or city
  std::string message;       // "{X}" marks the subject
  std::string response;      // "{X}", "{O}", "{C}", "{R}" mark entities
  std::vector<std::size_t> hops;
};

/// Built-in templates, 1 to 3 hops deep.
const std::vector<SyntheticTemplate>& synthetic_templates();

/// World: persons WorksAt orgs, orgs LocatedIn cities, cities PartOf regions.
/// Employment changes between periods; each dialogue lives in one period, so
/// the same question can have different answers and only the turn's graph
/// tells them apart. A person's employers lie in different regions, which
/// keeps every subject-to-answer shortest path unique.
struct SyntheticConfig {
  std::size_t periods = 2;
  std::size_t persons = 20;
  std::size_t orgs = 15;
  std::size_t cities = 10;
  std::size_t regions = 5;
  std::size_t turns = 2000;
  std::size_t turns_per_dialogue = 8;
  std::size_t speakers = 4;
  double chitchat_fraction = 0.15;
  double alias_fraction = 0.2;
  double alias_use = 0.3;
  double scene_fraction = 0.0;
  std::vector<std::string> templates;  // empty selects all built-ins
};

struct OraclePath {
  std::string turn_id;
  std::string source;
  std::string target;
  std::vector<NamedTriple> triples;
};

/// Counts tracked while generating, for checking corpus_stats.
struct SyntheticBookkeeping {
  std::size_t dialogues = 0;
  std::size_t turns = 0;
  std::size_t total_tokens = 0;
  std::size_t unique_tokens = 0;
  std::size_t entities = 0;
  std::size_t relation_types = 0;
  std::size_t entity_occurrences = 0;
  std::size_t turns_with_entities = 0;
  std::size_t dialogues_with_entities = 0;
  /// hop count -> (subject, response entity) pairs
  std::map<std::size_t, std::size_t> path_lengths;
};

struct SyntheticCorpus {
  std::vector<RawTurn> turns;
  std::vector<NamedTriple> kg;
  std::vector<Alias> aliases;
  std::vector<OraclePath> oracle;
  SyntheticBookkeeping books;
};

/// Throws UsageError for unknown or zero templates and inconsistent sizes.
SyntheticCorpus generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// Ingest settings for synthetic bundles: one shortest path per pair, since
/// further paths would pull other periods' employment edges into the graph.
IngestOptions synthetic_ingest_options();

/// Writes dialogues.jsonl, kg.tsv, aliases.tsv and oracle_paths.jsonl into
/// `dir`, then ingests them into dir/bundle. Returns the ingested corpus.
Corpus write_synthetic(const SyntheticCorpus& corpus, const std::string& dir,
                       const IngestOptions& options);

std::vector<OraclePath> read_oracle_paths(const std::string& path);

}  // namespace qadpt
