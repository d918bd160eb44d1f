#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "qadpt/checkpoint.hpp"
#include "qadpt/error.hpp"
#include "qadpt/evaluation.hpp"
#include "qadpt/synthetic.hpp"
#include "qadpt/train.hpp"

namespace py = pybind11;
using namespace qadpt;

namespace {

using NameTriple = std::tuple<std::string, std::string, std::string>;

Hyperparams hyper_from(const py::dict& kw) {
  Hyperparams h;
  for (auto [k, v] : kw) {
    const std::string key = py::str(k);
    std::string value = py::str(v);
    if (py::isinstance<py::bool_>(v)) value = v.cast<bool>() ? "true" : "false";
    if (!set_hyper_field(h, key, value)) throw UsageError("unknown hyperparameter '" + key + "'");
  }
  h.validate();
  return h;
}

KnowledgeGraph graph_from(const std::vector<NameTriple>& triples, const Catalog& c) {
  std::vector<NamedTriple> named;
  for (const auto& [h, r, t] : triples) named.push_back({h, r, t});
  return to_graph(named, c);
}

std::vector<NameTriple> graph_names(const KnowledgeGraph& g, const Catalog& c) {
  std::vector<NameTriple> out;
  for (const Triple& t : g.triples())
    out.emplace_back(c.entity_name(t.head), c.relation_name(t.relation), c.entity_name(t.tail));
  return out;
}

py::dict respond(const Model& m, const std::string& message, const std::vector<NameTriple>& kg,
                 const std::string& tokenize_mode) {
  const Catalog& cat = m.catalog();
  const TokenizeMode mode = parse_tokenize_mode(tokenize_mode);
  const auto tokens = tokenize(message, mode, Lexicon(cat, {}));
  const KnowledgeGraph k = graph_from(kg, cat);
  DecodeResult d;
  {
    py::gil_scoped_release release;
    d = greedy_decode(m, make_input(m, tokens, {}, k), m.hyper().max_decode_len);
  }
  py::list paths;
  for (const auto& e : d.entities) {
    py::list triples;
    if (e.path)
      for (const Triple& t : e.path->triples())
        triples.append(py::make_tuple(cat.entity_name(t.head), cat.relation_name(t.relation), cat.entity_name(t.tail)));
    paths.append(py::dict(py::arg("entity") = cat.entity_name(e.entity), py::arg("path") = triples,
                          py::arg("probability") = e.path ? e.path->probability : 0.0));
  }
  py::dict out;
  out["text"] = render(m, d.tokens, mode);
  out["entities"] = paths;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Knowledge-graph grounded dialogue generation with multi-hop reasoning.";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Corpus>(m, "Corpus")
      .def_property_readonly("num_turns", [](const Corpus& c) { return c.turns.size(); })
      .def_property_readonly("vocab_size", [](const Corpus& c) { return c.vocab.size(); })
      .def_property_readonly("entities", [](const Corpus& c) { return c.catalog.entity_names(); })
      .def_property_readonly("relations", [](const Corpus& c) { return c.catalog.relation_names(); })
      .def_property_readonly("warnings", [](const Corpus& c) { return c.warnings; })
      .def("graph", [](const Corpus& c) { return graph_names(c.graph, c.catalog); })
      .def(
          "split_size", [](const Corpus& c, const std::string& s) { return c.split(parse_split(s)).size(); },
          py::arg("split"))
      .def("stats", [](const Corpus& c) {
        const CorpusStats s = corpus_stats(c);
        py::dict d;
        for (const StatsRow& r : stats_rows(s)) d[py::str(r.name)] = r.value;
        d["shortest_path_lengths"] = s.shortest_path_lengths;
        d["unreachable_pairs"] = s.unreachable_pairs;
        d["ged_mean"] = s.ged_mean;
        d["ged_stddev"] = s.ged_stddev;
        return d;
      })
      .def("save", [](const Corpus& c, const std::string& dir) { save_bundle(c, dir); }, py::arg("dir"));

  m.def("load_bundle", &load_bundle, py::arg("dir"));
  m.def(
      "ingest",
      [](const std::string& dialogues, const std::string& kg, const std::string& aliases, const std::string& tokenize,
         std::size_t paths_per_pair) {
        IngestOptions o;
        o.mode = parse_tokenize_mode(tokenize);
        o.paths_per_pair = paths_per_pair;
        return ingest(dialogues, kg, aliases, o);
      },
      py::arg("dialogues"), py::arg("kg"), py::arg("aliases") = "", py::arg("tokenize") = "word",
      py::arg("paths_per_pair") = 5);
  m.def(
      "synthetic",
      [](std::size_t turns, std::uint64_t seed, std::vector<std::string> templates, std::size_t periods,
         double chitchat_fraction) {
        SyntheticConfig cfg;
        cfg.turns = turns;
        cfg.templates = std::move(templates);
        cfg.periods = periods;
        cfg.chitchat_fraction = chitchat_fraction;
        const SyntheticCorpus s = generate_synthetic(cfg, seed);
        return build_corpus(s.turns, s.kg, s.aliases, synthetic_ingest_options());
      },
      py::arg("turns") = 2000, py::arg("seed") = 1, py::arg("templates") = std::vector<std::string>{},
      py::arg("periods") = 2, py::arg("chitchat_fraction") = 0.15);

  py::class_<Model>(m, "Model")
      .def_property_readonly("hyperparameters",
                             [](const Model& mdl) {
                               std::map<std::string, std::string> out;
                               for (const auto& [k, v] : hyper_fields(mdl.hyper())) out[k] = v;
                               return out;
                             })
      .def_property_readonly("kind", [](const Model& mdl) { return to_string(mdl.hyper().model); })
      .def("save", [](const Model& mdl, const std::string& path) { save_checkpoint(mdl, path); }, py::arg("path"))
      .def("respond", &respond, py::arg("message"), py::arg("kg"), py::arg("tokenize") = "word",
           "Greedy reply to `message` over the (head, relation, tail) triples in `kg`.");

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def(
      "train",
      [](const Corpus& c, const py::kwargs& kw) {
        const Hyperparams h = hyper_from(kw);
        py::gil_scoped_release release;
        return train(c, h).model;
      },
      py::arg("corpus"), "Train with hyperparameters given as keywords (hidden=64, model='seq2seq', ...).");
  m.def(
      "evaluate",
      [](const Model& mdl, const Corpus& c, const std::string& split, const std::string& metrics,
         std::size_t workers) {
        mdl.check_compatible(c.catalog, c.vocab);
        EvalOptions o;
        o.metrics = parse_metric_list(metrics);
        o.workers = workers;
        o.max_len = mdl.hyper().max_decode_len;
        py::gil_scoped_release release;
        return report_json(evaluate(mdl, c.split(parse_split(split)), o));
      },
      py::arg("model"), py::arg("corpus"), py::arg("split") = "test", py::arg("metrics") = "all",
      py::arg("workers") = 1, "Evaluation report as JSON text.");
  m.def(
      "perturb",
      [](const Model& mdl, const Corpus& c, const std::string& mode, std::uint64_t seed, const std::string& split) {
        mdl.check_compatible(c.catalog, c.vocab);
        PerturbOptions o;
        o.mode = parse_perturb_mode(mode);
        o.seed = seed;
        o.max_len = mdl.hyper().max_decode_len;
        py::gil_scoped_release release;
        return perturb_json(perturb_eval(mdl, c.split(parse_split(split)), o));
      },
      py::arg("model"), py::arg("corpus"), py::arg("mode") = "last1", py::arg("seed") = 1,
      py::arg("split") = "test", "Perturbation report as JSON text.");
  m.def(
      "replay_report", [](const std::string& text) { return report_json(replay_report_json(text)); },
      py::arg("text"), "Recompute every scalar from the per-turn records; raises DataError on disagreement.");

  m.def(
      "bleu2", [](const std::vector<std::string>& h, const std::vector<std::string>& r) { return bleu2_sentence(h, r); },
      py::arg("hypothesis"), py::arg("reference"));
  m.def(
      "distinct_n",
      [](const std::vector<std::vector<std::string>>& outputs, std::size_t n) { return distinct_n(outputs, n); },
      py::arg("outputs"), py::arg("n"));
  m.def(
      "generated_kw",
      [](const std::vector<std::string>& ref, const std::vector<std::string>& gen) {
        const auto c = generated_kw_counts(ref, gen);
        return py::make_tuple(c.precision(), c.recall(), c.f1());
      },
      py::arg("reference_entities"), py::arg("generated_entities"), "(precision, recall, f1)");
  m.def(
      "change_rate",
      [](const std::vector<std::vector<std::string>>& a, const std::vector<std::vector<std::string>>& b) {
        return change_rate(a, b);
      },
      py::arg("original"), py::arg("perturbed"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args, const std::string& input) {
        std::istringstream in(input);
        std::ostringstream out, err;
        const int code = run_cli(args, in, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), py::arg("input") = "", "Run a qadpt subcommand in-process: (exit_code, stdout, stderr).");
}
