#include "qadpt/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "json.hpp"
#include "qadpt/error.hpp"
#include "qadpt/io.hpp"
#include "qadpt/random.hpp"

namespace qadpt {

using nlohmann::json;

const std::vector<SyntheticTemplate>& synthetic_templates() {
  static const std::vector<SyntheticTemplate> all = {
      {"employer_short", "person", "who employs {X} ?", "{O} , i think .", {1}},
      {"employer", "person", "where does {X} work ?", "{X} works at {O} .", {0, 1}},
      {"city", "person", "which city does {X} work in ?", "they work in {C} .", {2}},
      {"region", "person", "what region is {X} based in ?", "that is in {R} .", {3}},
      {"org_city", "org", "where is {X} located ?", "{X} is located in {C} .", {0, 1}},
      {"org_region", "org", "which region is {X} in ?", "it is in {R} .", {2}},
      {"city_region", "city", "what is {X} part of ?", "{X} is part of {R} .", {0, 1}},
      {"full", "person", "tell me about {X} .", "{X} works at {O} in {C} .", {0, 1, 2}},
  };
  return all;
}

namespace {

const char* const kPersons[] = {"Anna", "Ben",  "Clara", "Dylan", "Ella",  "Felix", "Grace",
                                "Hugo", "Iris", "Jonas", "Kara",  "Leo",   "Mila",  "Nolan",
                                "Olive", "Paul", "Quinn", "Rosa", "Simon", "Tara"};
const char* const kPersonAliases[] = {"Annie", "Benny", "Clary", "Dyl",   "Ellie", "Fee",  "Gracie",
                                      "Hughie", "Izzy", "Jo",    "Kaz",   "Lee",   "Milly", "Nol",
                                      "Liv",   "Pauly", "Q",     "Rosie", "Si",    "Tee"};
const char* const kOrgs[] = {"Acme_Corp",  "Blue_Lake_Inc", "Cobalt_Labs", "Delta_Works",
                             "Echo_Media", "Fern_Bank",     "Granite_Co",  "Harbor_Tech",
                             "Iron_Mill",  "Jade_Foods",    "Kite_Air",    "Lumen_Soft",
                             "Maple_Press", "Nova_Motors",  "Orbit_Post"};
const char* const kCities[] = {"Arden", "Brill",  "Corrin",   "Dunmore", "Eastby",
                               "Fallow", "Glenrock", "Hollis", "Ivesby",  "Juniper"};
const char* const kRegions[] = {"North_Reach", "South_Vale", "East_March", "West_Shore",
                                "High_Moor"};
const char* const kSpeakers[] = {"alex", "blair", "casey", "drew", "emery", "finley"};

const std::pair<const char*, const char*> kChitchat[] = {
    {"hello there .", "hi , how are you ?"},
    {"how is it going ?", "pretty good , thanks ."},
    {"what do you think ?", "i am not sure ."},
    {"see you later .", "bye for now ."},
    {"are you busy today ?", "a little bit ."},
    {"thank you .", "you are welcome ."},
};

template <std::size_t N>
std::vector<std::string> names(const char* const (&fixed)[N], std::size_t n, const char* stem) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i < N ? std::string(fixed[i]) : std::string(stem) + std::to_string(i + 1));
  return out;
}

// Functional edges from every child to a parent, covering every parent.
std::vector<std::size_t> surjective_parents(std::size_t children, std::size_t parents, Rng& rng) {
  std::vector<std::size_t> order(children);
  for (std::size_t i = 0; i < children; ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<std::size_t> parent(children);
  for (std::size_t i = 0; i < children; ++i)
    parent[order[i]] = i < parents ? i : uniform_index(rng, parents);
  return parent;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t end = s.find(' ', pos);
    if (end == std::string::npos) end = s.size();
    if (end > pos) out.push_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.regions == 0 || cfg.cities < cfg.regions || cfg.orgs < cfg.cities ||
      cfg.persons < cfg.orgs)
    throw UsageError("synthetic sizes need persons >= orgs >= cities >= regions >= 1");
  if (cfg.periods == 0 || cfg.periods > cfg.regions)
    throw UsageError("synthetic periods must be between 1 and the number of regions");
  if (cfg.turns == 0 || cfg.turns_per_dialogue == 0 || cfg.speakers == 0)
    throw UsageError("synthetic turns, turns_per_dialogue and speakers must be positive");
  if (cfg.speakers > std::size(kSpeakers))
    throw UsageError("at most " + std::to_string(std::size(kSpeakers)) + " synthetic speakers");

  std::vector<const SyntheticTemplate*> templates;
  for (const auto& t : synthetic_templates())
    if (cfg.templates.empty() ||
        std::find(cfg.templates.begin(), cfg.templates.end(), t.name) != cfg.templates.end())
      templates.push_back(&t);
  for (const auto& name : cfg.templates)
    if (std::none_of(synthetic_templates().begin(), synthetic_templates().end(),
                     [&](const SyntheticTemplate& t) { return t.name == name; }))
      throw UsageError("unknown synthetic template '" + name + "'");
  if (templates.empty()) throw UsageError("synthetic config selects no templates");

  Rng rng(seed);
  SyntheticCorpus out;
  const auto persons = names(kPersons, cfg.persons, "Person");
  const auto orgs = names(kOrgs, cfg.orgs, "Org");
  const auto cities = names(kCities, cfg.cities, "City");
  const auto regions = names(kRegions, cfg.regions, "Region");
  const auto located_in = surjective_parents(cfg.orgs, cfg.cities, rng);
  const auto part_of = surjective_parents(cfg.cities, cfg.regions, rng);
  std::vector<std::vector<std::size_t>> employer(cfg.periods);
  employer[0] = surjective_parents(cfg.persons, cfg.orgs, rng);
  for (std::size_t p = 1; p < cfg.periods; ++p) {
    employer[p].resize(cfg.persons);
    for (std::size_t i = 0; i < cfg.persons; ++i) {
      std::vector<std::size_t> options;
      for (std::size_t o = 0; o < cfg.orgs; ++o) {
        bool clash = false;
        for (std::size_t q = 0; q < p; ++q)
          clash = clash || part_of[located_in[o]] == part_of[located_in[employer[q][i]]];
        if (!clash) options.push_back(o);
      }
      if (options.empty())
        throw UsageError("synthetic world too small for " + std::to_string(cfg.periods) + " periods");
      employer[p][i] = options[uniform_index(rng, options.size())];
    }
  }
  for (std::size_t p = 0; p < cfg.periods; ++p)
    for (std::size_t i = 0; i < cfg.persons; ++i)
      out.kg.push_back({persons[i], "WorksAt", orgs[employer[p][i]]});
  for (std::size_t i = 0; i < cfg.orgs; ++i) out.kg.push_back({orgs[i], "LocatedIn", cities[located_in[i]]});
  for (std::size_t i = 0; i < cfg.cities; ++i) out.kg.push_back({cities[i], "PartOf", regions[part_of[i]]});

  std::map<std::string, std::string> alias_of;
  for (std::size_t i = 0; i < cfg.persons; ++i)
    if (uniform_unit(rng) < cfg.alias_fraction) {
      const std::string alias = i < std::size(kPersonAliases) ? kPersonAliases[i]
                                                              : "P" + std::to_string(i + 1);
      alias_of[persons[i]] = alias;
      out.aliases.push_back({alias, persons[i]});
    }

  SyntheticBookkeeping& books = out.books;
  books.entities = cfg.persons + cfg.orgs + cfg.cities + cfg.regions;
  books.relation_types = 3;
  std::set<std::string> unique;
  std::set<std::string> dialogues_with_entities;

  const std::size_t num_dialogues = (cfg.turns + cfg.turns_per_dialogue - 1) / cfg.turns_per_dialogue;
  books.dialogues = num_dialogues;
  books.turns = cfg.turns;
  std::size_t produced = 0;
  for (std::size_t d = 0; d < num_dialogues; ++d) {
    const std::string dialogue_id = "d" + std::to_string(d);
    const std::size_t speaker = uniform_index(rng, cfg.speakers);
    const auto& works_at = employer[uniform_index(rng, cfg.periods)];
    for (std::size_t t = 0; t < cfg.turns_per_dialogue && produced < cfg.turns; ++t, ++produced) {
      RawTurn turn;
      turn.dialogue_id = dialogue_id;
      turn.turn = static_cast<int>(t);
      turn.speaker = kSpeakers[uniform_unit(rng) < 0.75 ? speaker : uniform_index(rng, cfg.speakers)];
      const std::string turn_id = dialogue_id + "#" + std::to_string(t);

      std::vector<std::string> message_words, response_words;
      std::size_t response_entities = 0;
      if (uniform_unit(rng) < cfg.chitchat_fraction) {
        const auto& [m, r] = kChitchat[uniform_index(rng, std::size(kChitchat))];
        message_words = split_words(m);
        response_words = split_words(r);
      } else {
        const SyntheticTemplate& tpl = *templates[uniform_index(rng, templates.size())];
        // Resolve the chain subject -> org -> city -> region.
        std::map<char, std::string> slot;
        std::map<char, std::vector<NamedTriple>> path;
        std::string subject;
        if (tpl.subject_type == "person") {
          const std::size_t p = uniform_index(rng, cfg.persons);
          const std::size_t o = works_at[p], c = located_in[o];
          subject = persons[p];
          slot['O'] = orgs[o];
          slot['C'] = cities[c];
          slot['R'] = regions[part_of[c]];
          path['O'] = {{persons[p], "WorksAt", orgs[o]}};
          path['C'] = path['O'];
          path['C'].push_back({orgs[o], "LocatedIn", cities[c]});
          path['R'] = path['C'];
          path['R'].push_back({cities[c], "PartOf", regions[part_of[c]]});
        } else if (tpl.subject_type == "org") {
          const std::size_t o = uniform_index(rng, cfg.orgs), c = located_in[o];
          subject = orgs[o];
          slot['C'] = cities[c];
          slot['R'] = regions[part_of[c]];
          path['C'] = {{orgs[o], "LocatedIn", cities[c]}};
          path['R'] = path['C'];
          path['R'].push_back({cities[c], "PartOf", regions[part_of[c]]});
        } else {
          const std::size_t c = uniform_index(rng, cfg.cities);
          subject = cities[c];
          slot['R'] = regions[part_of[c]];
          path['R'] = {{cities[c], "PartOf", regions[part_of[c]]}};
        }
        slot['X'] = subject;
        path['X'] = {};

        auto alias = alias_of.find(subject);
        const bool use_alias = alias != alias_of.end() && uniform_unit(rng) < cfg.alias_use;
        for (const auto& w : split_words(tpl.message))
          message_words.push_back(w == "{X}" ? (use_alias ? alias->second : subject) : w);
        for (const auto& w : split_words(tpl.response)) {
          if (w.size() == 3 && w.front() == '{') {
            const char key = w[1];
            unique.insert(slot.at(key));
            response_words.push_back(slot.at(key));
            ++response_entities;
            out.oracle.push_back({turn_id, subject, slot.at(key), path.at(key)});
            ++books.path_lengths[path.at(key).size()];
          } else {
            response_words.push_back(w);
          }
        }
        unique.insert(subject);  // the alias surface maps back to the subject
        if (uniform_unit(rng) < cfg.scene_fraction) {
          std::string other = persons[uniform_index(rng, cfg.persons)];
          if (other != subject) turn.scene_entities.push_back(other);
        }
      }
      for (const auto& w : message_words)
        unique.insert(w);
      for (const auto& w : response_words) unique.insert(w);
      // alias surfaces are entity tokens, never generic words
      for (const auto& [canon, a] : alias_of) unique.erase(a);

      books.total_tokens += response_words.size();
      books.entity_occurrences += response_entities;
      if (response_entities > 0) {
        ++books.turns_with_entities;
        dialogues_with_entities.insert(dialogue_id);
      }
      auto join = [](const std::vector<std::string>& ws) {
        std::string s;
        for (const auto& w : ws) s += (s.empty() ? "" : " ") + w;
        return s;
      };
      turn.message = join(message_words);
      turn.response = join(response_words);
      out.turns.push_back(std::move(turn));
    }
  }
  books.unique_tokens = unique.size();
  books.dialogues_with_entities = dialogues_with_entities.size();
  return out;
}

IngestOptions synthetic_ingest_options() {
  IngestOptions o;
  o.paths_per_pair = 1;
  return o;
}

Corpus write_synthetic(const SyntheticCorpus& c, const std::string& dir,
                       const IngestOptions& options) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_dialogues_jsonl((d / "dialogues.jsonl").string(), c.turns);
  std::string kg;
  for (const auto& t : c.kg) kg += t.head + "\t" + t.relation + "\t" + t.tail + "\n";
  write_file_atomic((d / "kg.tsv").string(), kg);
  write_aliases((d / "aliases.tsv").string(), c.aliases);
  std::string oracle;
  for (const auto& p : c.oracle) {
    json triples = json::array();
    for (const auto& t : p.triples) triples.push_back({t.head, t.relation, t.tail});
    oracle += json{{"turn_id", p.turn_id}, {"source", p.source}, {"target", p.target},
                   {"triples", triples}}
                  .dump() +
              "\n";
  }
  write_file_atomic((d / "oracle_paths.jsonl").string(), oracle);
  Corpus corpus = ingest((d / "dialogues.jsonl").string(), (d / "kg.tsv").string(),
                         (d / "aliases.tsv").string(), options);
  save_bundle(corpus, (d / "bundle").string());
  return corpus;
}

std::vector<OraclePath> read_oracle_paths(const std::string& path) {
  std::vector<OraclePath> out;
  for_each_line(read_file(path), [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    try {
      const json j = json::parse(line);
      OraclePath p{j.at("turn_id").get<std::string>(), j.at("source").get<std::string>(),
                   j.at("target").get<std::string>(), {}};
      for (const auto& t : j.at("triples"))
        p.triples.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>(),
                             t.at(2).get<std::string>()});
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace qadpt
