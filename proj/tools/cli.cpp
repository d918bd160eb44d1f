#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <istream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qadpt/checkpoint.hpp"
#include "qadpt/error.hpp"
#include "qadpt/evaluation.hpp"
#include "qadpt/io.hpp"
#include "qadpt/synthetic.hpp"
#include "qadpt/train.hpp"
#include "run_config.hpp"

namespace qadpt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Io {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
  bool interactive;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string maybe(const std::optional<double>& v) { return v ? num(*v) : std::string("n/a"); }

fs::path out_dir(const RunConfig& cfg) {
  fs::path d = cfg.require("out");
  fs::create_directories(d);
  return d;
}

void write_config(const RunConfig& cfg, const fs::path& path) { write_file_atomic(path.string(), cfg.dump()); }

void print_corpus_summary(const Corpus& c, std::ostream& out) {
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& t : c.turns) ++counts[static_cast<int>(t.split)];
  out << "turns " << c.turns.size() << " (train " << counts[0] << ", validation " << counts[1] << ", test "
      << counts[2] << ")\n";
  out << "vocabulary " << c.vocab.size() << " (words " << c.vocab.words().size() << ", entities "
      << c.vocab.num_entities() << "), relations " << c.catalog.num_relations() << ", triples "
      << c.graph.triples().size() << "\n";
}

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

int cmd_ingest(const RunConfig& cfg, Io& io) {
  Corpus c = ingest(cfg.require("dialogues"), cfg.require("kg"), cfg.get("aliases"), cfg.ingest_options());
  const fs::path d = out_dir(cfg);
  save_bundle(c, d.string());
  write_config(cfg, d / "run_config.txt");
  print_warnings(c.warnings, io.err);
  print_corpus_summary(c, io.out);
  io.out << "bundle written to " << d.string() << "\n";
  return 0;
}

int cmd_synth(const RunConfig& cfg, Io& io) {
  IngestOptions opts = synthetic_ingest_options();
  const IngestOptions given = cfg.ingest_options();
  if (cfg.is_set("tokenize")) opts.mode = given.mode;
  if (cfg.is_set("min_count")) opts.min_count = given.min_count;
  if (cfg.is_set("split_seed")) opts.split_seed = given.split_seed;
  if (cfg.is_set("paths_per_pair")) opts.paths_per_pair = given.paths_per_pair;
  const SyntheticCorpus s = generate_synthetic(cfg.synthetic_config(), cfg.get_u64("synth_seed"));
  const fs::path d = out_dir(cfg);
  Corpus c = write_synthetic(s, d.string(), opts);
  write_config(cfg, d / "run_config.txt");
  print_warnings(c.warnings, io.err);
  print_corpus_summary(c, io.out);
  io.out << "synthetic world written to " << d.string() << " (bundle in " << (d / "bundle").string() << ")\n";
  return 0;
}

int cmd_stats(const RunConfig& cfg, Io& io) {
  const std::string bundle = cfg.require("bundle");
  const Corpus c = load_bundle(bundle);
  const CorpusStats s = corpus_stats(c);
  const fs::path d = cfg.get("out").empty() ? fs::path(bundle) : out_dir(cfg);

  json j;
  j["config"] = cfg.resolved();
  std::string csv = "name,value\n";
  for (const StatsRow& r : stats_rows(s)) {
    const std::string v = r.integral ? std::to_string(static_cast<long long>(r.value)) : num(r.value);
    io.out << r.name << std::string(r.name.size() < 30 ? 30 - r.name.size() : 1, ' ') << v << "\n";
    csv += r.name + "," + v + "\n";
    j["table"][r.name] = r.value;
  }
  std::string hist = "hops,pairs\n";
  io.out << "shortest path lengths:\n";
  for (const auto& [hops, pairs] : s.shortest_path_lengths) {
    io.out << "  " << hops << " hops: " << pairs << "\n";
    hist += std::to_string(hops) + "," + std::to_string(pairs) + "\n";
    j["shortest_path_lengths"][std::to_string(hops)] = pairs;
  }
  if (s.shortest_path_lengths.empty()) j["shortest_path_lengths"] = json::object();
  hist += "unreachable," + std::to_string(s.unreachable_pairs) + "\n";
  j["unreachable_pairs"] = s.unreachable_pairs;
  j["graph_edit_distance"] = {{"pairs", s.ged_pairs}, {"mean", s.ged_mean}, {"stddev", s.ged_stddev}};
  io.out << "  unreachable: " << s.unreachable_pairs << "\n";
  io.out << "subgraph edit distance: " << num(s.ged_mean) << " +- " << num(s.ged_stddev) << " over " << s.ged_pairs
         << " consecutive pairs\n";

  if (const std::string ref = cfg.get("reference"); !ref.empty()) {
    const auto profile = reference_profile(ref);
    json checks = json::array();
    for (const auto& k : compare_stats(s, profile)) {
      io.out << (k.match ? "match    " : "MISMATCH ") << k.name << ": expected " << num(k.expected, 2) << ", got "
             << num(k.actual, 2) << "\n";
      checks.push_back({{"name", k.name}, {"expected", k.expected}, {"actual", k.actual}, {"match", k.match}});
    }
    j["reference"] = {{"profile", ref}, {"checks", checks}};
  }
  write_file_atomic((d / "stats.csv").string(), csv);
  write_file_atomic((d / "shortest_paths.csv").string(), hist);
  write_file_atomic((d / "stats.json").string(), j.dump(1) + "\n");
  return 0;
}

int cmd_train(const RunConfig& cfg, Io& io) {
  const std::string ckpt = cfg.require("checkpoint");
  cfg.hyper().validate();
  const Corpus c = load_bundle(cfg.require("bundle"));
  if (const fs::path parent = fs::path(ckpt).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::string log = json{{"config", cfg.resolved()}}.dump() + "\n";
  TrainResult r = train(c, cfg.hyper(), [&](const EpochRecord& e) {
    const std::string line = to_json_line(e);
    log += line + "\n";
    io.out << line << "\n";
  });
  auto meta = cfg.resolved();
  meta["best_val_ppl"] = num(r.best_val_ppl, 6);
  save_checkpoint(r.model, ckpt, meta);
  write_file_atomic(ckpt + ".log.jsonl", log);
  io.out << "best validation perplexity " << num(r.best_val_ppl) << "; checkpoint written to " << ckpt << "\n";
  return 0;
}

struct Loaded {
  Corpus corpus;
  Model model;
  std::vector<const DialogueTurn*> turns;
};

Loaded load_for_eval(const RunConfig& cfg) {
  Corpus c = load_bundle(cfg.require("bundle"));
  Model m = load_checkpoint(cfg.require("checkpoint"));
  m.check_compatible(c.catalog, c.vocab);
  auto turns = c.split(parse_split(cfg.get("split")));
  if (turns.empty()) throw DataError("split '" + cfg.get("split") + "' has no turns");
  return {std::move(c), std::move(m), std::move(turns)};
}

int cmd_eval(const RunConfig& cfg, Io& io) {
  EvalOptions o;
  o.metrics = parse_metric_list(cfg.get("metrics"));
  o.workers = cfg.get_size("workers");
  o.sample_seed = cfg.get_optional_u64("sample_seed");
  const fs::path d = out_dir(cfg);
  const Loaded l = load_for_eval(cfg);
  o.max_len = l.model.hyper().max_decode_len;
  const EvalReport r = evaluate(l.model, l.turns, o, cfg.resolved());
  const std::string label = to_string(l.model.hyper().model);
  write_file_atomic((d / "eval.json").string(), report_json(r));
  write_file_atomic((d / "eval.csv").string(), report_csv(r, label));
  io.out << label << " on " << l.turns.size() << " " << cfg.get("split") << " turns\n";
  for (const auto& [k, v] : r.scalars) io.out << "  " << k << " " << maybe(v) << "\n";
  return 0;
}

int cmd_perturb(const RunConfig& cfg, Io& io) {
  PerturbOptions o;
  o.mode = parse_perturb_mode(cfg.get("perturb_mode"));
  o.seed = cfg.get_u64("perturb_seed");
  o.batch_size = cfg.get_size("perturb_batch");
  o.workers = cfg.get_size("workers");
  const fs::path d = out_dir(cfg);
  const Loaded l = load_for_eval(cfg);
  o.max_len = l.model.hyper().max_decode_len;
  const PerturbReport r = perturb_eval(l.model, l.turns, o, cfg.resolved());
  const std::string label = to_string(l.model.hyper().model), mode = to_string(o.mode);
  write_file_atomic((d / ("perturb_" + mode + ".json")).string(), perturb_json(r));
  write_file_atomic((d / ("perturb_" + mode + ".csv")).string(), perturb_csv(r, label));
  print_warnings(r.warnings, io.err);
  io.out << label << " " << mode << " on " << r.turns.size() << " turns\n";
  io.out << "  change_rate " << num(r.change_rate) << "\n";
  io.out << "  accurate_change_rate " << maybe(r.accurate.rate()) << " (" << r.accurate.accurate << "/"
         << r.accurate.denominator << ")\n";
  if (r.accurate.denominator == 0) io.err << "warning: no turn qualifies for the accurate change rate\n";
  return 0;
}

// ---- chat ---------------------------------------------------------------------

std::vector<std::string> words_of(const std::string& line) {
  std::istringstream s(line);
  std::vector<std::string> out;
  for (std::string w; s >> w;) out.push_back(w);
  return out;
}

std::string path_text(const InferredPath& p, const Catalog& c) {
  std::string s = c.entity_name(p.start);
  for (const Triple& t : p.triples()) s += " -" + c.relation_name(t.relation) + "-> " + c.entity_name(t.tail);
  return s;
}

void swap_tail(const std::vector<std::string>& w, KnowledgeGraph& kg, const Catalog& c, std::ostream& out) {
  if (w.size() != 5) {
    out << "usage: /swap <head> <relation> <old_tail> <new_tail>\n";
    return;
  }
  const auto h = c.find_entity(w[1]), t = c.find_entity(w[3]), t2 = c.find_entity(w[4]);
  const auto r = c.find_relation(w[2]);
  for (std::size_t i : {1, 3, 4})
    if (!c.find_entity(w[i])) {
      out << "error: unknown entity '" << w[i] << "'\n";
      return;
    }
  if (!r) {
    out << "error: unknown relation '" << w[2] << "'\n";
    return;
  }
  const Triple old{*h, *r, *t}, now{*h, *r, *t2};
  if (!kg.contains(old)) {
    out << "error: no triple " << w[1] << " " << w[2] << " " << w[3] << "\n";
    return;
  }
  if (kg.contains(now)) {
    out << "error: triple " << w[1] << " " << w[2] << " " << w[4] << " already present\n";
    return;
  }
  kg.remove_triple(old);
  kg.add_triple(now);
  out << "swapped " << w[1] << " " << w[2] << " " << w[3] << " -> " << w[4] << "\n";
}

int cmd_chat(const RunConfig& cfg, Io& io) {
  const Model m = load_checkpoint(cfg.require("checkpoint"));
  const Catalog& cat = m.catalog();
  KnowledgeGraph kg;
  std::vector<Alias> aliases;
  if (!cfg.get("kg").empty()) {
    kg = to_graph(read_triple_names(cfg.get("kg")), cat);
  } else if (!cfg.get("bundle").empty()) {
    Corpus c = load_bundle(cfg.get("bundle"));
    m.check_compatible(c.catalog, c.vocab);
    kg = c.graph;
    aliases = c.aliases;
  } else {
    throw UsageError("chat needs --kg or --bundle for the live knowledge graph");
  }
  if (!cfg.get("aliases").empty()) aliases = read_aliases(cfg.get("aliases"));
  const Lexicon lexicon(cat, aliases);
  const TokenizeMode mode = parse_tokenize_mode(cfg.get("tokenize"));

  if (io.interactive) io.out << "type a message, /swap <head> <relation> <old_tail> <new_tail>, /kg or /quit\n";
  for (std::string line;;) {
    if (io.interactive) io.out << "> " << std::flush;
    if (!std::getline(io.in, line)) break;
    const auto w = words_of(line);
    if (w.empty()) continue;
    if (w[0] == "/quit") break;
    if (w[0] == "/kg") {
      for (const Triple& t : kg.triples())
        io.out << cat.entity_name(t.head) << " " << cat.relation_name(t.relation) << " " << cat.entity_name(t.tail)
               << "\n";
      continue;
    }
    if (w[0] == "/swap") {
      swap_tail(w, kg, cat, io.out);
      continue;
    }
    if (w[0][0] == '/') {
      io.out << "unknown command " << w[0] << "; try /swap, /kg or /quit\n";
      continue;
    }
    const std::vector<Token> message = tokenize(line, mode, lexicon);
    const TurnInput in = make_input(m, message, {}, kg);
    const DecodeResult d = greedy_decode(m, in, m.hyper().max_decode_len);
    io.out << "bot: " << render(m, d.tokens, mode) << "\n";
    for (const EmittedEntity& e : d.entities)
      if (e.path) io.out << "  " << cat.entity_name(e.entity) << ": " << path_text(*e.path, cat) << "\n";
  }
  return 0;
}

using Command = int (*)(const RunConfig&, Io&);

struct CommandSpec {
  const char* name;
  const char* help;
  Command run;
};

const CommandSpec kCommands[] = {
    {"ingest", "tokenize dialogues, split, sample subgraphs and write a bundle", cmd_ingest},
    {"stats", "corpus statistics, shortest-path histogram and subgraph edit distances", cmd_stats},
    {"synth", "generate a synthetic world and ingest it", cmd_synth},
    {"train", "train a model on a bundle and write a checkpoint", cmd_train},
    {"eval", "score a checkpoint on a split", cmd_eval},
    {"perturb", "perturb the knowledge graphs and measure how responses change", cmd_perturb},
    {"chat", "talk to a checkpoint over a live, editable knowledge graph", cmd_chat},
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err,
            bool interactive) {
  CLI::App app{"knowledge-graph grounded dialogue with multi-hop reasoning"};
  app.name("qadpt");
  app.require_subcommand(1, 1);
  std::string config_path;
  std::map<std::string, std::string> storage;
  std::vector<std::pair<CLI::App*, std::vector<std::pair<std::string, CLI::Option*>>>> subs;
  for (const CommandSpec& spec : kCommands) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    sub->add_option("--config", config_path, "key=value settings file; flags override it");
    std::vector<std::pair<std::string, CLI::Option*>> opts;
    for (const ConfigKey& k : RunConfig::keys()) {
      std::string help = k.help;
      if (!k.default_value.empty()) help += " [" + k.default_value + "]";
      opts.emplace_back(k.name, sub->add_option("--" + k.name, storage[k.name], help));
    }
    subs.emplace_back(sub, std::move(opts));
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i].first->parsed()) continue;
      RunConfig cfg;
      if (!config_path.empty()) cfg.load_file(config_path);
      for (const auto& [key, opt] : subs[i].second)
        if (opt->count() > 0) cfg.set(key, storage[key]);
      Io io{in, out, err, interactive};
      return kCommands[i].run(cfg, io);
    }
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace qadpt
