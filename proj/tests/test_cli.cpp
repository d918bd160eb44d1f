#include <unistd.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "qadpt/checkpoint.hpp"
#include "qadpt/error.hpp"
#include "qadpt/evaluation.hpp"
#include "qadpt/io.hpp"
#include "run_config.hpp"

using namespace qadpt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

// One scratch directory per test binary run.
struct Scratch {
  fs::path root = fs::temp_directory_path() / ("qadpt_cli_" + std::to_string(::getpid()));
  Scratch() { fs::create_directories(root); }
  ~Scratch() { fs::remove_all(root); }
  std::string operator/(const std::string& p) const { return (root / p).string(); }
};

Scratch& scratch() {
  static Scratch s;
  return s;
}

// Small single-period world the golden chat transcript was recorded against.
const std::string& chat_world() {
  static const std::string dir = [] {
    const std::string d = scratch() / "chat_world";
    REQUIRE(cli({"synth", "--out", d, "--synth_turns", "600", "--synth_templates", "employer_short",
                 "--synth_periods", "1", "--synth_chitchat_fraction", "0"})
                .code == 0);
    return d;
  }();
  return dir;
}

const std::string& chat_checkpoint() {
  static const std::string path = [] {
    const std::string p = scratch() / "chat.ckpt";
    const Run r = cli({"train", "--bundle", chat_world() + "/bundle", "--checkpoint", p, "--hidden", "16",
                       "--max_epochs", "15", "--hops", "3", "--lr", "0.01"});
    REQUIRE(r.code == 0);
    return p;
  }();
  return path;
}

const std::string& world() {
  static const std::string dir = [] {
    const std::string d = scratch() / "world";
    REQUIRE(cli({"synth", "--out", d, "--synth_turns", "300", "--synth_seed", "4"}).code == 0);
    return d;
  }();
  return dir;
}

const std::string golden(const std::string& name) { return std::string(QADPT_TEST_DATA_DIR) + "/golden/" + name; }

}  // namespace

TEST_CASE("run config files and overrides") {
  RunConfig c;
  c.load_text("# comment\n\nhidden = 12\nmetrics=ppl\n", "cfg");
  CHECK(c.hyper().hidden == 12);
  CHECK(c.get("metrics") == "ppl");
  CHECK(c.is_set("hidden"));
  CHECK_FALSE(c.is_set("hops"));
  CHECK(c.resolved().at("hops") == "6");
  CHECK_THROWS_WITH_AS(c.load_text("hidden=3\nhiden=4\n", "cfg"), "cfg:2: unknown config key 'hiden'", UsageError);
  CHECK_THROWS_WITH_AS(c.load_text("hidden\n", "cfg"), "cfg:1: expected key=value, got 'hidden'", UsageError);
  CHECK_THROWS_AS(c.set("hidden", "many"), UsageError);
  CHECK_THROWS_AS(c.set("perturb_mode", "last3"), UsageError);
  CHECK_THROWS_AS(c.require("bundle"), UsageError);
  c.set("workers", "x");
  CHECK_THROWS_AS(c.get_size("workers"), UsageError);
  RunConfig round;
  round.load_text(c.dump(), "dump");
  CHECK(round.resolved() == c.resolved());
}

TEST_CASE("exit codes") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"train", "--bundle", "b", "--hiden", "3"}).code == 2);
  CHECK(cli({"train", "--bundle", "b"}).code == 2);  // no checkpoint
  CHECK(cli({"eval", "--bundle", scratch() / "absent", "--checkpoint", "c", "--out", scratch() / "e"}).code == 3);
  CHECK(cli({"train", "--config", scratch() / "absent.cfg"}).code == 2);
  const std::string cfg = scratch() / "bad.cfg";
  write_file_atomic(cfg, "hops=0\n");
  const Run r = cli({"train", "--config", cfg, "--bundle", world() + "/bundle", "--checkpoint", scratch() / "z"});
  CHECK(r.code == 2);
  CHECK(r.err.find("hops") != std::string::npos);
}

TEST_CASE("synth bundle loads back and stats are exported") {
  const Corpus c = load_bundle(world() + "/bundle");
  CHECK(c.turns.size() == 300);
  CHECK(c.options.paths_per_pair == 1);
  CHECK(read_file(world() + "/run_config.txt").find("synth_seed=4\n") != std::string::npos);

  const std::string out = scratch() / "stats";
  const Run r = cli({"stats", "--bundle", world() + "/bundle", "--out", out});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("total_turns") != std::string::npos);
  const json j = json::parse(read_file(out + "/stats.json"));
  CHECK(j.at("table").at("total_turns").get<double>() == 300);
  const CorpusStats s = corpus_stats(c);
  std::string csv = "hops,pairs\n";
  for (const auto& [h, n] : s.shortest_path_lengths) csv += std::to_string(h) + "," + std::to_string(n) + "\n";
  csv += "unreachable," + std::to_string(s.unreachable_pairs) + "\n";
  CHECK(read_file(out + "/shortest_paths.csv") == csv);
  CHECK(j.at("graph_edit_distance").at("mean").get<double>() == s.ged_mean);
  CHECK(j.at("config").at("bundle") == world() + "/bundle");
  CHECK(read_file(out + "/stats.csv").rfind("name,value\ndialogues,", 0) == 0);
}

TEST_CASE("train, eval and perturb through the command line") {
  const std::string bundle = world() + "/bundle";
  const std::string q = scratch() / "q.ckpt", s = scratch() / "s.ckpt";
  REQUIRE(cli({"train", "--bundle", bundle, "--checkpoint", q, "--hidden", "8", "--max_epochs", "2", "--hops", "3"})
              .code == 0);
  REQUIRE(cli({"train", "--bundle", bundle, "--checkpoint", s, "--hidden", "8", "--max_epochs", "2", "--model",
               "seq2seq"})
              .code == 0);
  CHECK(checkpoint_metadata(s).at("model") == "seq2seq");
  CHECK(load_checkpoint(s).hyper().model == ModelKind::seq2seq);
  CHECK(checkpoint_metadata(q).at("hidden") == "8");
  CHECK(read_file(q + ".log.jsonl").find("\"epoch\":2") != std::string::npos);

  const std::string ev = scratch() / "eval";
  REQUIRE(cli({"eval", "--bundle", bundle, "--checkpoint", q, "--out", ev, "--metrics", "ppl,kw_acc"}).code == 0);
  const std::string text = read_file(ev + "/eval.json");
  const json j = json::parse(text);
  CHECK(j.at("scalars").size() == 3);
  CHECK(j.at("scalars").contains("kw_acc_soft"));
  CHECK(j.at("config").at("metrics") == "ppl,kw_acc");
  CHECK(replay_report_json(text).scalars.size() == 3);
  CHECK(read_file(ev + "/eval.csv").rfind("model,kw_acc,kw_acc_soft,ppl\nqadpt,", 0) == 0);

  // a checkpoint from another world does not fit this bundle
  const std::string other = scratch() / "other";
  REQUIRE(cli({"synth", "--out", other, "--synth_turns", "100", "--synth_persons", "25"}).code == 0);
  const Run mismatch = cli({"eval", "--bundle", other + "/bundle", "--checkpoint", q, "--out", ev});
  CHECK(mismatch.code == 3);

  for (const std::string mode : {"all", "last1", "last2"}) {
    CAPTURE(mode);
    const std::string a = scratch() / "pa", b = scratch() / "pb";
    REQUIRE(cli({"perturb", "--bundle", bundle, "--checkpoint", q, "--out", a, "--perturb_mode", mode}).code == 0);
    REQUIRE(cli({"perturb", "--bundle", bundle, "--checkpoint", q, "--out", b, "--perturb_mode", mode, "--workers",
                 "2"})
                .code == 0);
    const std::string file = "/perturb_" + mode + ".json";
    json ja = json::parse(read_file(a + file)), jb = json::parse(read_file(b + file));
    CHECK(ja.at("config").at("workers") == "1");
    ja.erase("config");
    jb.erase("config");
    CHECK(ja == jb);
    REQUIRE(cli({"perturb", "--bundle", bundle, "--checkpoint", s, "--out", a, "--perturb_mode", mode}).code == 0);
    CHECK(json::parse(read_file(a + file)).at("change_rate").get<double>() == 0.0);
  }
}

TEST_CASE("chat session matches the golden transcript") {
  const Run r = cli({"chat", "--checkpoint", chat_checkpoint(), "--kg", golden("chat_kg.tsv")},
                    read_file(golden("chat_session.txt")));
  CHECK(r.code == 0);
  CHECK(r.out == read_file(golden("chat_transcript.txt")));
  CHECK(cli({"chat", "--checkpoint", chat_checkpoint(), "--kg", golden("chat_kg.tsv")}, "").code == 0);
  CHECK(cli({"chat", "--checkpoint", chat_checkpoint()}).code == 2);
}
