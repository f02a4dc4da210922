#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const char* cli = MMD_CLI_PATH;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::string& args, const fs::path& dir,
           const std::string& stdin_text = "") {
  fs::path out = dir / "stdout.txt";
  fs::path err = dir / "stderr.txt";
  std::string cmd;
  if (!stdin_text.empty()) {
    fs::path in = dir / "stdin.txt";
    std::ofstream f(in);
    f << stdin_text;
    f.close();
    cmd = std::string(cli) + " " + args + " <" + in.string();
  } else {
    cmd = std::string(cli) + " " + args;
  }
  cmd += " >" + out.string() + " 2>" + err.string();
  int code = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(code) ? WEXITSTATUS(code) : -1;
  std::ifstream of(out), ef(err);
  r.out = std::string((std::istreambuf_iterator<char>(of)), {});
  r.err = std::string((std::istreambuf_iterator<char>(ef)), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "mmd_cli_tests";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto r = run("make-synthetic --out " + (dir / "data").string() +
                     " --dialogues 30 --turns 4 --feature-t 3 --synth-d-v 5 "
                     "--synth-d-a 2",
                 dir);
    REQUIRE(r.code == 0);
    auto t = run("--data " + (dir / "data").string() +
                     " --precision 32 --checkpoint-dir " +
                     (dir / "run").string() +
                     " train --steps 6 --batch-size 4 --layers 1 --hidden 16 "
                     "--heads 2 --d-v 5 --d-a 2 --max-positions 96",
                 dir);
    REQUIRE(t.code == 0);
  }
  std::string data() const { return (dir / "data").string(); }
  std::string model() const { return (dir / "run" / "model.mmdf").string(); }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("make-synthetic emits the full dataset layout") {
  auto& w = ws();
  for (const char* leaf :
       {"dialogs.json", "oracle.json", "vocab.txt", "train.txt", "val.txt",
        "test.txt", "refs_train.jsonl", "refs_val.jsonl", "refs_test.jsonl"})
    CHECK(fs::exists(fs::path(w.data()) / leaf));
  CHECK(fs::exists(fs::path(w.data()) / "features" / "syn00000.vaft"));
}

TEST_CASE("train writes checkpoint, state, and a well-formed log") {
  auto& w = ws();
  CHECK(fs::exists(w.model()));
  CHECK(fs::exists(fs::path(w.dir) / "run" / "state.mmts"));
  auto log = slurp(fs::path(w.dir) / "run" / "train_log.tsv");
  int rows = 0;
  std::istringstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    ++rows;
    CHECK(std::count(line.begin(), line.end(), '\t') == 5);
  }
  CHECK(rows == 6);
}

TEST_CASE("generate: one record per (dialogue, turn), deterministic rerun") {
  auto& w = ws();
  std::string pred1 = (w.dir / "pred1.jsonl").string();
  std::string pred2 = (w.dir / "pred2.jsonl").string();
  auto r1 = run("--data " + w.data() + " generate --checkpoint " + w.model() +
                    " --split test --out " + pred1 +
                    " --decode beam --beam-size 3 --max-length 6",
                w.dir);
  CHECK(r1.code == 0);
  auto r2 = run("--data " + w.data() + " generate --checkpoint " + w.model() +
                    " --split test --out " + pred2 +
                    " --decode beam --beam-size 3 --max-length 6",
                w.dir);
  CHECK(r2.code == 0);
  CHECK(slurp(pred1) == slurp(pred2));
  // 3 test dialogues x 4 turns
  CHECK(count_lines(slurp(pred1)) == 12);
}

TEST_CASE("eval: perfect predictions score 1.0 and misalignment errors") {
  auto& w = ws();
  // gold responses as predictions
  std::string perfect = (w.dir / "perfect.jsonl").string();
  {
    std::ifstream refs(fs::path(w.data()) / "refs_test.jsonl");
    std::ofstream out(perfect);
    std::string line;
    while (std::getline(refs, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      nlohmann::json p;
      p["dialogue_id"] = j["dialogue_id"];
      p["turn"] = j["turn"];
      p["text"] = j["texts"][0];
      out << p.dump() << "\n";
    }
  }
  auto r = run("--data " + w.data() + " eval --pred " + perfect + " --refs " +
                   w.data() + "/refs_test.jsonl --out " +
                   (w.dir / "rep").string(),
               w.dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("BLEU-1     1.0000") != std::string::npos);
  CHECK(r.out.find("ROUGE-L    1.0000") != std::string::npos);
  CHECK(r.out.find("exact      1.0000") != std::string::npos);
  CHECK(fs::exists(w.dir / "rep.json"));

  auto bad = run("--data " + w.data() + " eval --pred " + perfect +
                     " --refs " + w.data() + "/refs_val.jsonl",
                 w.dir);
  CHECK(bad.code == 1);
  CHECK(bad.err.find("error[align]") != std::string::npos);
}

TEST_CASE("ablate emits the paper-shaped row sets") {
  auto& w = ws();
  auto h = run("--data " + w.data() + " ablate --checkpoint " + w.model() +
                   " --axis history --split test --decode greedy "
                   "--max-length 6 --out " +
                   (w.dir / "hist.jsonl").string(),
               w.dir);
  CHECK(h.code == 0);
  std::set<std::string> values;
  {
    std::ifstream in(w.dir / "hist.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      values.insert(
          nlohmann::json::parse(line)["value"].get<std::string>());
    }
  }
  CHECK(values == std::set<std::string>{"0", "1", "2", "3", "5", "9"});

  auto d = run("--data " + w.data() + " ablate --checkpoint " + w.model() +
                   " --axis decoding --split test --max-length 6 "
                   "--beam-size 3 --out " +
                   (w.dir / "dec.jsonl").string(),
               w.dir);
  CHECK(d.code == 0);
  std::set<std::string> methods;
  {
    std::ifstream in(w.dir / "dec.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      methods.insert(
          nlohmann::json::parse(line)["value"].get<std::string>());
    }
  }
  CHECK(methods == std::set<std::string>{"greedy", "nucleus", "beam"});
}

TEST_CASE("chat: scripted transcript is deterministic, window 0 repeats") {
  auto& w = ws();
  std::string script =
      "what is the person doing ?\n"
      "/history 0\n"
      "what is the person doing ?\n"
      "what is the person doing ?\n"
      "/reset\n"
      "/quit\n";
  std::string args = "--data " + w.data() + " chat --checkpoint " + w.model() +
                     " --video-id syn00001 --decode greedy --max-length 6";
  auto a = run(args, w.dir, script);
  auto b = run(args, w.dir, script);
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
  // with window 0 the same question yields the bit-identical answer
  std::vector<std::string> lines;
  std::istringstream in(a.out);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() >= 4);
  CHECK(lines[1] == "history window set to 0");
  CHECK(lines[2] == lines[3]);

  auto bad = run("--data " + w.data() + " chat --checkpoint " + w.model() +
                     " --video-id nosuch",
                 w.dir, "/quit\n");
  CHECK(bad.code == 1);
  CHECK(bad.err.find("error[data]") != std::string::npos);
}

TEST_CASE("config file applies and flags override it") {
  auto& w = ws();
  fs::path cfg = w.dir / "run.conf";
  {
    std::ofstream out(cfg);
    out << "# overfit preset\n";
    out << "model.layers = 1\n";
    out << "model.hidden = 16\n";
    out << "model.heads = 2\n";
    out << "model.d_v = 5\n";
    out << "model.d_a = 2\n";
    out << "model.max_positions = 96\n";
    out << "train.steps = 2\n";
    out << "train.batch_size = 4\n";
    out << "data.dir = " << w.data() << "\n";
  }
  fs::path run_dir = w.dir / "cfg_run";
  auto r = run("--config " + cfg.string() + " --data " + w.data() +
                   " --precision 32 --checkpoint-dir " + run_dir.string() +
                   " train --steps 3",
               w.dir);
  CHECK(r.code == 0);
  auto log = slurp(run_dir / "train_log.tsv");
  int rows = 0;
  std::istringstream in(log);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++rows;
  CHECK(rows == 3);  // the flag wins over the file's 2

  auto bad = run("--config " + (w.dir / "nope.conf").string() + " train",
                 w.dir);
  CHECK(bad.code == 1);
  CHECK(bad.err.find("error[config]") != std::string::npos);
}

TEST_CASE("text-only setting trains without video slots") {
  auto& w = ws();
  fs::path run_dir = w.dir / "textonly_run";
  auto r = run("--data " + w.data() + " --precision 32 --setting text-only " +
                   "--checkpoint-dir " + run_dir.string() +
                   " train --steps 2 --batch-size 2 --layers 1 --hidden 16 "
                   "--heads 2 --d-v 5 --d-a 2 --max-positions 96",
               w.dir);
  CHECK(r.code == 0);
  // vasm and clm are off: their loss columns read nan
  auto log = slurp(run_dir / "train_log.tsv");
  CHECK(log.find("\tnan\t") != std::string::npos);

  auto bad = run("--data " + w.data() +
                     " --setting text-only --tasks rlm,vasm train --steps 1",
                 w.dir);
  CHECK(bad.code == 1);
  CHECK(bad.err.find("error[config]") != std::string::npos);
}

TEST_CASE("recaption generation emits the caption with each response") {
  auto& w = ws();
  std::string pred = (w.dir / "recap.jsonl").string();
  auto r = run("--data " + w.data() +
                   " --setting text-video-no-caption --recaption generate "
                   "--checkpoint " +
                   w.model() + " --split test --out " + pred +
                   " --decode greedy --max-length 6",
               w.dir);
  CHECK(r.code == 0);
  std::ifstream in(pred);
  std::string line;
  int with_caption = 0, total = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++total;
    auto j = nlohmann::json::parse(line);
    if (j.contains("caption")) ++with_caption;
  }
  CHECK(total == 12);
  CHECK(with_caption == total);
}

TEST_CASE("every failure path exits nonzero with a machine-parseable code") {
  auto& w = ws();
  auto r = run("generate --checkpoint /nonexistent.mmdf --split test", w.dir);
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error[", 0) == 0);
}
