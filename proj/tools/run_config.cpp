#include "run_config.hpp"

#include <charconv>
#include <sstream>

#include "qadpt/error.hpp"
#include "qadpt/io.hpp"
#include "qadpt/metrics.hpp"

namespace qadpt {

namespace {

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  for (const auto& [name, value] : hyper_fields(Hyperparams{})) k.push_back({name, value, "model hyperparameter"});
  const SyntheticConfig s;
  const IngestOptions io;
  const std::vector<ConfigKey> extra{
      {"dialogues", "", "dialogues JSONL file (ingest)"},
      {"kg", "", "knowledge graph TSV (ingest, chat)"},
      {"aliases", "", "alias TSV (ingest, chat)"},
      {"bundle", "", "preprocessed corpus directory"},
      {"checkpoint", "", "model checkpoint file"},
      {"out", "", "output file or directory"},
      {"tokenize", to_string(io.mode), "word or character"},
      {"min_count", std::to_string(io.min_count), "minimum word count for the vocabulary"},
      {"split_seed", std::to_string(io.split_seed), "seed of the dialogue split"},
      {"paths_per_pair", std::to_string(io.paths_per_pair), "shortest paths kept per source/target pair"},
      {"split", "test", "split evaluated by eval and perturb"},
      {"metrics", "all", "comma list of metrics, or all"},
      {"sample_seed", "", "decode by sampling with this seed instead of greedily"},
      {"workers", "1", "threads for per-turn evaluation"},
      {"perturb_mode", "last1", "all, last1 or last2"},
      {"perturb_seed", "1", "seed of the perturbation"},
      {"perturb_batch", "32", "batch size within which `all` reassigns graphs"},
      {"reference", "", "published profile to compare stats against: hgzhz or friends"},
      {"synth_seed", "1", "seed of the synthetic world"},
      {"synth_periods", std::to_string(s.periods), "employment periods"},
      {"synth_persons", std::to_string(s.persons), "persons in the world"},
      {"synth_orgs", std::to_string(s.orgs), "organisations in the world"},
      {"synth_cities", std::to_string(s.cities), "cities in the world"},
      {"synth_regions", std::to_string(s.regions), "regions in the world"},
      {"synth_turns", std::to_string(s.turns), "turns to generate"},
      {"synth_turns_per_dialogue", std::to_string(s.turns_per_dialogue), "turns per dialogue"},
      {"synth_speakers", std::to_string(s.speakers), "distinct speakers"},
      {"synth_chitchat_fraction", "0.15", "fraction of entity-free turns"},
      {"synth_alias_fraction", "0.2", "fraction of entities with an alias"},
      {"synth_alias_use", "0.3", "probability an aliased mention uses the alias"},
      {"synth_scene_fraction", "0", "fraction of turns with scene entities"},
      {"synth_templates", "", "comma list of templates; empty selects all"},
  };
  k.insert(k.end(), extra.begin(), extra.end());
  return k;
}

template <class T>
T parse_integer(std::string_view key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw UsageError("config key '" + std::string(key) + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::vector<ConfigKey>& RunConfig::keys() {
  static const std::vector<ConfigKey> k = build_keys();
  return k;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + std::string(key) + "'");
  if (!set_hyper_field(hyper_, key, value)) {
    // not a hyperparameter; checked when read, except the enumerations
    if (key == "tokenize") parse_tokenize_mode(value);
    if (key == "perturb_mode") parse_perturb_mode(value);
  }
  it->second = std::string(value);
  set_.insert(it->first);
}

void RunConfig::load_text(std::string_view text, const std::string& origin) {
  for_each_line(text, [&](std::size_t n, std::string_view raw) {
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') return;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  });
}

void RunConfig::load_file(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  load_text(text, path);
}

std::string RunConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::string RunConfig::require(std::string_view key) const {
  std::string v = get(key);
  if (v.empty()) throw UsageError("missing required setting --" + std::string(key));
  return v;
}

std::size_t RunConfig::get_size(std::string_view key) const { return parse_integer<std::size_t>(key, get(key)); }
std::uint64_t RunConfig::get_u64(std::string_view key) const { return parse_integer<std::uint64_t>(key, get(key)); }

std::optional<std::uint64_t> RunConfig::get_optional_u64(std::string_view key) const {
  if (get(key).empty()) return std::nullopt;
  return get_u64(key);
}

double RunConfig::get_double(std::string_view key) const {
  const std::string v = get(key);
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw UsageError("config key '" + std::string(key) + "' expects a number, got '" + v + "'");
  return out;
}

IngestOptions RunConfig::ingest_options() const {
  IngestOptions o;
  o.mode = parse_tokenize_mode(get("tokenize"));
  o.min_count = get_size("min_count");
  o.split_seed = get_u64("split_seed");
  o.paths_per_pair = get_size("paths_per_pair");
  return o;
}

SyntheticConfig RunConfig::synthetic_config() const {
  SyntheticConfig s;
  s.periods = get_size("synth_periods");
  s.persons = get_size("synth_persons");
  s.orgs = get_size("synth_orgs");
  s.cities = get_size("synth_cities");
  s.regions = get_size("synth_regions");
  s.turns = get_size("synth_turns");
  s.turns_per_dialogue = get_size("synth_turns_per_dialogue");
  s.speakers = get_size("synth_speakers");
  s.chitchat_fraction = get_double("synth_chitchat_fraction");
  s.alias_fraction = get_double("synth_alias_fraction");
  s.alias_use = get_double("synth_alias_use");
  s.scene_fraction = get_double("synth_scene_fraction");
  std::stringstream list(get("synth_templates"));
  for (std::string t; std::getline(list, t, ',');)
    if (!t.empty()) s.templates.push_back(t);
  return s;
}

std::map<std::string, std::string> RunConfig::resolved() const {
  return {values_.begin(), values_.end()};
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + "=" + get(k.name) + "\n";
  return out;
}

}  // namespace qadpt
