#include <doctest.h>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <thread>

#include "support.hpp"

#include <nlohmann/json.hpp>

using nlohmann::json;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kCorpus = fs::path(LAYBENCH_SOURCE_DIR) / "data/synthetic/corpus.jsonl";

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI binary with a scrubbed LAYBENCH_* environment plus `env`.
Run cli(const std::vector<std::string>& args, const std::map<std::string, std::string>& env = {},
        const fs::path& cwd = {}) {
  TempDir capture;
  const auto out_path = capture / "stdout";
  const auto err_path = capture / "stderr";
  const pid_t pid = fork();
  if (pid == 0) {
    for (const char* name : {"LAYBENCH_API_KEY", "LAYBENCH_API_BASE", "LAYBENCH_SEED", "LAYBENCH_CONFIG",
                             "LAYBENCH_PARALLELISM", "LAYBENCH_BACKEND"}) {
      unsetenv(name);
    }
    for (const auto& [k, v] : env) setenv(k.c_str(), v.c_str(), 1);
    if (!cwd.empty() && chdir(cwd.c_str()) != 0) _exit(127);
    const int out = open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    const int err = open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    dup2(out, 1);
    dup2(err, 2);
    std::vector<char*> argv;
    std::string program = LAYBENCH_CLI_PATH;
    argv.push_back(program.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    execv(program.c_str(), argv.data());
    _exit(127);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testsupport::read_text(out_path);
  r.err = testsupport::read_text(err_path);
  return r;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> rows;
  std::istringstream in(testsupport::read_text(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

json read_json(const fs::path& path) { return json::parse(testsupport::read_text(path)); }

}  // namespace

TEST_CASE("ingest normalises and reports") {
  TempDir dir;
  const auto r = cli({"ingest", "--in", kCorpus.string(), "--dataset", "elife", "--out", dir.path().string()});
  CHECK(r.code == 0);
  CHECK(testsupport::read_text(dir / "corpus.jsonl") == testsupport::read_text(kCorpus));
  const auto stats = read_json(dir / "corpus_stats.json");
  CHECK(stats["documents"] == 10);
  CHECK(stats["dataset"] == "elife");
  CHECK(json::parse(r.out)["status"] == "ok");
  CHECK(fs::exists(dir / "run_ingest.json"));
}

TEST_CASE("evaluate cli and rouge") {
  TempDir dir;
  testsupport::write_text(dir / "s.jsonl", R"({"id":"syn-00","system":"X","summary":"Cells grow. They split."})" "\n"
                                           R"({"id":"syn-01","system":"X","summary":"Zebrafish help people."})" "\n");
  const auto r = cli({"evaluate", "--metrics", "cli,rouge", "--in", (dir / "s.jsonl").string(), "--ref",
                      kCorpus.string(), "--out", dir.path().string()});
  CHECK(r.code == 0);
  const auto rows = read_jsonl(dir / "metrics.jsonl");
  CHECK(rows.size() == 2 * 5);
  CHECK(rows[0]["metric"] == "CLI");
  CHECK(rows[0]["provenance"]["orientation"] == "lower_is_more_lay");
  CHECK(testsupport::read_text(dir / "metric_failures.jsonl").empty());
  CHECK(testsupport::read_text(dir / "system_means.csv").rfind("system,CLI,R1,R2,RL,RougeGeoMean\nX,", 0) == 0);
}

TEST_CASE("correlate prints a ground-truth table") {
  TempDir dir;
  const auto r = cli({"correlate", "--metric", "cli", "--corpus", kCorpus.string(), "--out", dir.path().string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("metric,spearman,pearson,n\nCLI,", 0) == 0);
  CHECK(testsupport::read_text(dir / "table1.csv") == r.out);
  const auto table = read_json(dir / "table1.json");
  CHECK(table["rows"][0]["n"] == 20);
  CHECK(table["provenance"]["split"] == "all");
  // Lay summaries are labelled 0 and read easier, so CLI correlates positively.
  CHECK(table["rows"][0]["pearson"].get<double>() > 0.5);

  const auto split = cli({"correlate", "--metric", "cli", "--corpus", kCorpus.string(), "--split", "train", "--out",
                          (dir / "train").string()});
  CHECK(split.code == 0);
  CHECK(read_json(dir / "train/table1.json")["rows"][0]["n"] == 12);
}

TEST_CASE("correlate against human layness") {
  TempDir dir;
  std::string human, metrics;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "d" + std::to_string(i);
    human += json{{"id", id}, {"system", "S"}, {"layness", 1 + i % 4}}.dump() + "\n";
    metrics += json{{"id", id}, {"system", "S"}, {"metric", "CLI"}, {"value", 10.0 - i}, {"provenance", json::object()}}.dump() + "\n";
  }
  testsupport::write_text(dir / "human.jsonl", human);
  testsupport::write_text(dir / "metrics.jsonl", metrics);
  const auto r = cli({"correlate", "--metric", "cli", "--human", (dir / "human.jsonl").string(), "--scores",
                      (dir / "metrics.jsonl").string(), "--out", dir.path().string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("metric,pearson,spearman,n\nCLI,", 0) == 0);
  CHECK(fs::exists(dir / "table3.json"));
}

TEST_CASE("configuration errors exit 2") {
  TempDir dir;
  auto r = cli({"explain", "--corpus", kCorpus.string(), "--backend", "gpt-3.5-turbo", "--out", dir.path().string()},
               {{"LAYBENCH_API_BASE", "http://127.0.0.1:1"}});
  CHECK(r.code == 2);
  CHECK(r.err.find("LAYBENCH_API_KEY") != std::string::npos);

  CHECK(cli({"explain", "--out", dir.path().string()}).code == 2);
  CHECK(cli({"explain", "--corpus", (dir / "missing.jsonl").string(), "--out", dir.path().string()}).code == 2);
  CHECK(cli({"evaluate", "--metrics", "bertscore", "--in", kCorpus.string()}).code == 2);
  CHECK(cli({"explain", "--no-such-flag"}).code == 2);
  CHECK(cli({"summarise", "--corpus", kCorpus.string(), "--system", "Target"}).code == 2);
  CHECK(cli({"explain", "--corpus", kCorpus.string(), "--budget-explanation", "0"}).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("flags override env, env overrides the config file") {
  TempDir dir;
  testsupport::write_text(dir / "cfg.txt", "# run settings\nseed = 5\nbudget_explanation = 100\nparallelism=2\n");
  const auto explain = cli({"explain", "--corpus", kCorpus.string(), "--out", (dir / "e").string()});
  REQUIRE(explain.code == 0);
  const auto expl = (dir / "e/explanations.jsonl").string();

  auto manifest_config = [&](const std::string& sub) { return read_json(dir / sub / "run_augment.json")["config"]; };
  auto run = [&](const std::string& sub, std::vector<std::string> extra, std::map<std::string, std::string> env) {
    std::vector<std::string> args = {"augment", "--corpus", kCorpus.string(), "--explanations", expl,
                                     "--config", (dir / "cfg.txt").string(), "--out", (dir / sub).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args, env).code;
  };
  REQUIRE(run("a", {}, {}) == 0);
  CHECK(manifest_config("a")["seed"] == "5");
  CHECK(manifest_config("a")["budget-explanation"] == "100");
  REQUIRE(run("b", {}, {{"LAYBENCH_SEED", "9"}}) == 0);
  CHECK(manifest_config("b")["seed"] == "9");
  REQUIRE(run("c", {"--seed", "3"}, {{"LAYBENCH_SEED", "9"}}) == 0);
  CHECK(manifest_config("c")["seed"] == "3");
  CHECK(manifest_config("c")["parallelism"] == "2");

  // The budget reached the pipeline.
  for (const auto& row : read_jsonl(dir / "a/augmented.jsonl")) {
    const std::string e = row["explanation"];
    CHECK(std::count(e.begin(), e.end(), ' ') < 100);
  }

  testsupport::write_text(dir / "bad.txt", "sed = 5\n");
  CHECK(cli({"augment", "--corpus", kCorpus.string(), "--config", (dir / "bad.txt").string()}).code == 2);
  testsupport::write_text(dir / "bad.txt", "seed\n");
  CHECK(cli({"augment", "--corpus", kCorpus.string(), "--config", (dir / "bad.txt").string()}).code == 2);
  CHECK(cli({"augment", "--corpus", kCorpus.string()}, {{"LAYBENCH_PARALLELISM", "many"}}).code == 2);
}

TEST_CASE("limit leaves work pending and exits 1; rerun completes") {
  TempDir dir;
  auto r = cli({"explain", "--corpus", kCorpus.string(), "--limit", "4", "--out", (dir / "p").string()});
  CHECK(r.code == 1);
  CHECK(json::parse(r.out)["counts"]["pending"] == 6);
  r = cli({"explain", "--corpus", kCorpus.string(), "--out", (dir / "p").string()});
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["counts"]["resumed"] == 4);
  REQUIRE(cli({"explain", "--corpus", kCorpus.string(), "--out", (dir / "f").string()}).code == 0);
  CHECK(testsupport::read_text(dir / "p/explanations.jsonl") == testsupport::read_text(dir / "f/explanations.jsonl"));
}

TEST_CASE("a refused document makes the run partial") {
  TempDir dir;
  std::string corpus;
  for (int i = 0; i < 3; ++i) {
    corpus += json{{"id", "r" + std::to_string(i)},
                   {"article", "Cells divide."},
                   {"abstract", i == 1 ? "Mitosis [[REFUSE]]." : "Mitosis proceeds."},
                   {"lay_summary", "Cells split."},
                   {"split", "test"}}.dump() + "\n";
  }
  testsupport::write_text(dir / "c.jsonl", corpus);
  const auto r = cli({"explain", "--corpus", (dir / "c.jsonl").string(), "--out", dir.path().string()});
  CHECK(r.code == 1);
  CHECK(read_jsonl(dir / "explanations.jsonl").size() == 2);
  CHECK(read_json(dir / "run_explain.json")["status"] == "partial");
}

TEST_CASE("human evaluation commands") {
  TempDir dir;
  const auto out = dir.path().string();
  for (const auto& [system, backend] : {std::pair{"ZS_GPT_class", "mock"}, {"ZS_Vicuna_class", "mock-vicuna"},
                                        {"External", "mock-external"}}) {
    REQUIRE(cli({"summarise", "--corpus", kCorpus.string(), "--system", system, "--backend", backend, "--out", out}).code == 0);
  }
  const auto summaries = (dir / "summaries_ZS_GPT_class.jsonl").string() + "," +
                         (dir / "summaries_ZS_Vicuna_class.jsonl").string() + "," +
                         (dir / "summaries_External.jsonl").string();
  auto r = cli({"humaneval", "export", "--corpus", kCorpus.string(), "--summaries", summaries, "--n", "4", "--seed", "2",
                "--out", out});
  REQUIRE(r.code == 0);
  const auto items = read_jsonl(dir / "items.jsonl");
  REQUIRE(items.size() == 4);
  CHECK(cli({"humaneval", "export", "--corpus", kCorpus.string(), "--summaries", summaries, "--n", "11", "--out", out})
            .code == 2);

  std::string store;
  for (const auto& item : items) {
    json scores;
    for (const char* l : {"A", "B", "C", "D"}) scores[l] = {{"layness", 2}, {"fluency", 3}, {"relevance", 4}};
    store += json{{"assessor_id", "a1"}, {"item_id", item["item_id"]}, {"scores", scores},
                  {"ranking", {"A", "B", "C", "D"}}, {"timestamp", "2024-01-01T00:00:00Z"}}.dump() + "\n";
  }
  testsupport::write_text(dir / "store.jsonl", store);
  r = cli({"humaneval", "report", "--items", (dir / "items.jsonl").string(), "--annotations",
           (dir / "store.jsonl").string(), "--out", out});
  REQUIRE(r.code == 0);
  const auto csv = testsupport::read_text(dir / "aggregate.csv");
  CHECK(csv.rfind("system,layness,fluency,relevance,ranking,n\n", 0) == 0);
  CHECK(csv.find("Target,2.0000,3.0000,4.0000,") != std::string::npos);
  const auto human = read_jsonl(dir / "human_layness.jsonl");
  CHECK(human.size() == 16);
  CHECK(human[0]["layness"] == 2.0);
  CHECK(read_jsonl(dir / "annotations_export.jsonl").size() == 4);
}

TEST_CASE("serve answers on its port and stops on SIGTERM") {
  TempDir dir;
  const auto out = dir.path().string();
  for (const auto& [system, backend] : {std::pair{"ZS_GPT_class", "mock"}, {"ZS_Vicuna_class", "mock-v"},
                                        {"External", "mock-e"}}) {
    REQUIRE(cli({"summarise", "--corpus", kCorpus.string(), "--system", system, "--backend", backend, "--out", out}).code == 0);
  }
  REQUIRE(cli({"humaneval", "export", "--corpus", kCorpus.string(), "--summaries",
               (dir / "summaries_ZS_GPT_class.jsonl").string() + "," + (dir / "summaries_ZS_Vicuna_class.jsonl").string() +
                   "," + (dir / "summaries_External.jsonl").string(),
               "--n", "2", "--out", out})
              .code == 0);

  const pid_t pid = fork();
  if (pid == 0) {
    const int devnull = open("/dev/null", O_WRONLY);
    dup2(devnull, 1);
    dup2(devnull, 2);
    execl(LAYBENCH_CLI_PATH, LAYBENCH_CLI_PATH, "humaneval", "serve", "--items", (dir / "items.jsonl").c_str(),
          "--store", (dir / "store.jsonl").c_str(), "--port", "18731", "--assignment", "partition", "--assessors",
          "p,q", "--out", out.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  std::string body;
  for (int attempt = 0; attempt < 50 && body.empty(); ++attempt) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    FILE* pipe = popen("curl -s http://127.0.0.1:18731/api/progress 2>/dev/null", "r");
    if (pipe) {
      char buffer[4096];
      while (std::fgets(buffer, sizeof buffer, pipe)) body += buffer;
      pclose(pipe);
    }
  }
  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  REQUIRE_FALSE(body.empty());
  const auto progress = json::parse(body);
  CHECK(progress["items"] == 2);
  CHECK(progress["assignment"]["mode"] == "partition");
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(read_json(dir / "store.jsonl.assignment.json")["assessors"] == json::array({"p", "q"}));
}
