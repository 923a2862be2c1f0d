#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ergo/cli.hpp"
#include "ergo/harness.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCliPath = ERGO_CLI_PATH;
const std::string kFixturesDir = ERGO_TEST_FIXTURES_DIR;

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

std::string unique_work_dir() {
  static std::atomic<int> counter{0};
  // Pid-qualified so concurrent test processes never share a directory.
  const auto dir = fs::temp_directory_path() /
                   ("ergo-cli-test-" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter.fetch_add(1)));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

CommandResult run_cli(const std::string& args, const std::string& stdin_text = "") {
  const auto work = unique_work_dir();
  const auto out_path = work + "/cmd-output.txt";
  std::string command = "'" + kCliPath + "' " + args;
  if (!stdin_text.empty()) {
    const auto in_path = work + "/cmd-input.txt";
    write_text(in_path, stdin_text);
    command += " < '" + in_path + "'";
  } else {
    command += " < /dev/null";
  }
  command += " > '" + out_path + "' 2>&1";
  const int status = std::system(command.c_str());
  CommandResult result;
  result.output = read_text(out_path);
  if (status != -1 && WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
  fs::remove_all(work);
  return result;
}

int count_occurrences(const std::string& haystack, const std::string& needle) {
  int count = 0;
  std::size_t pos = 0;
  while ((pos = haystack.find(needle, pos)) != std::string::npos) {
    ++count;
    pos += needle.size();
  }
  return count;
}

std::string spike_dataset() { return kFixturesDir + "/datasets/spike.json"; }
std::string spike_scenario() { return kFixturesDir + "/scenarios/spike.json"; }

}  // namespace

TEST_CASE("backend specs parse into mock and http kinds") {
  using ergo::cli::BackendSpec;
  const auto mock = ergo::cli::parse_backend_spec("mock:fixtures/spike.json");
  CHECK(mock.kind == BackendSpec::Kind::Mock);
  CHECK(mock.target == "fixtures/spike.json");
  const auto http = ergo::cli::parse_backend_spec("https://api.example.com/v1");
  CHECK(http.kind == BackendSpec::Kind::Http);
  CHECK(http.target == "https://api.example.com/v1");
  CHECK_THROWS_AS(ergo::cli::parse_backend_spec(""), ergo::ConfigError);
  CHECK_THROWS_AS(ergo::cli::parse_backend_spec("mock:"), ergo::ConfigError);
  CHECK_THROWS_AS(ergo::cli::parse_backend_spec("ftp://x"), ergo::ConfigError);
}

TEST_CASE("policy names accept module spellings and shorthands") {
  using ergo::policy::PolicyKind;
  CHECK(ergo::cli::parse_policy_name("ergo") == PolicyKind::Ergo);
  CHECK(ergo::cli::parse_policy_name("sharded") == PolicyKind::NoneSharded);
  CHECK(ergo::cli::parse_policy_name("none_sharded") == PolicyKind::NoneSharded);
  CHECK(ergo::cli::parse_policy_name("full") == PolicyKind::FullSingleTurn);
  CHECK(ergo::cli::parse_policy_name("full_single_turn") ==
        PolicyKind::FullSingleTurn);
  CHECK_THROWS_AS(ergo::cli::parse_policy_name("majority_vote"),
                  ergo::ConfigError);
}

TEST_CASE("config files merge under flags") {
  ergo::cli::RunConfig base;
  const auto merged = ergo::cli::config_from_json(
      R"({"backend": "mock:s.json", "policy": "sharded", "tau": 0.25,
          "dataset": "ds.json", "n_runs": 5, "seed": 99,
          "verifier": "exact_text", "renormalize": true})",
      base);
  CHECK(merged.backend_spec == "mock:s.json");
  CHECK(merged.policy.kind == ergo::policy::PolicyKind::NoneSharded);
  CHECK(merged.policy.tau == 0.25);
  CHECK(merged.dataset_path == "ds.json");
  CHECK(merged.n_runs == 5);
  CHECK(merged.master_seed == 99);
  REQUIRE(merged.verifier.has_value());
  CHECK(merged.verifier->kind == ergo::harness::VerifierKind::ExactText);
  CHECK(merged.renormalize);

  CHECK_THROWS_WITH_AS(ergo::cli::config_from_json(R"({"datset": "x"})", base),
                       doctest::Contains("datset"), ergo::ConfigError);
  CHECK_THROWS_AS(ergo::cli::config_from_json("[1,2]", base), ergo::ConfigError);
  CHECK_THROWS_AS(ergo::cli::config_from_json(R"({"tau": "high"})", base),
                  ergo::ConfigError);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("--no-such-flag").exit_code == 2);
  CHECK(run_cli("simulate").exit_code == 2);  // missing dataset
  CHECK(run_cli("simulate --dataset '" + spike_dataset() + "'").exit_code ==
        2);  // missing backend
  const auto bad_policy =
      run_cli("simulate --dataset '" + spike_dataset() + "' --backend 'mock:" +
              spike_scenario() + "' --policy warp");
  CHECK(bad_policy.exit_code == 2);
  CHECK(bad_policy.output.find("warp") != std::string::npos);
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("simulate runs the spike fixture end to end") {
  const auto out = unique_work_dir();
  const auto base = "simulate --dataset '" + spike_dataset() + "' --backend 'mock:" +
                    spike_scenario() + "'";

  SUBCASE("entropy policy at tau 0.03 logs one reset per run") {
    const auto result =
        run_cli(base + " --policy ergo --tau 0.03 --seed 42 --out '" + out + "'");
    CHECK(result.exit_code == 0);
    CHECK(result.output.find("master_seed=42") != std::string::npos);
    CHECK(result.output.find("average=100.00") != std::string::npos);
    const auto log = read_text(out + "/spike-001_run0.jsonl");
    CHECK(count_occurrences(log, "\"reset\":{") == 1);
    CHECK(log.find("\"terminated_at\":4") != std::string::npos);
    const auto report = nlohmann::json::parse(read_text(out + "/report.json"));
    CHECK(report.at("policy") == "ergo");
    CHECK(report.at("master_seed") == 42);
    CHECK(report.at("totals").at("total_resets") == 3);  // one per run
    const auto csv = read_text(out + "/report.csv");
    CHECK(csv.find("instruction_id,average,aptitude,unreliability,n_runs") == 0);
    CHECK(csv.find("spike-001,100.00,100.00,0.00,3") != std::string::npos);
  }
  SUBCASE("sharded shorthand never resets") {
    const auto result = run_cli(base + " --policy sharded --out '" + out + "'");
    CHECK(result.exit_code == 0);
    const auto log = read_text(out + "/spike-001_run0.jsonl");
    CHECK(count_occurrences(log, "\"reset\":{") == 0);
    CHECK(log.find("\"policy\":\"none_sharded\"") != std::string::npos);
  }
  SUBCASE("full shorthand runs a single assistant turn") {
    const auto result =
        run_cli(base + " --policy full --n-runs 1 --out '" + out + "'");
    CHECK(result.exit_code == 0);
    const auto log = read_text(out + "/spike-001_run0.jsonl");
    // Header, one event, summary.
    CHECK(count_occurrences(log, "\n") == 3);
    CHECK(log.find("\"shard_index\":4") != std::string::npos);
  }
  fs::remove_all(out);
}

TEST_CASE("simulate is byte-deterministic across executions") {
  const auto out_a = unique_work_dir();
  const auto out_b = unique_work_dir();
  const auto command = [&](const std::string& out) {
    return "simulate --dataset '" + spike_dataset() + "' --backend 'mock:" +
           spike_scenario() + "' --policy ergo --tau 0.03 --seed 7 --out '" +
           out + "'";
  };
  REQUIRE(run_cli(command(out_a)).exit_code == 0);
  REQUIRE(run_cli(command(out_b)).exit_code == 0);
  for (const auto* name :
       {"spike-001_run0.jsonl", "spike-001_run1.jsonl", "spike-001_run2.jsonl",
        "report.json", "report.csv"}) {
    CHECK(read_text(out_a + "/" + name) == read_text(out_b + "/" + name));
  }
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("simulate reads a config file and lets flags override it") {
  const auto work = unique_work_dir();
  const auto config_path = work + "/config.json";
  write_text(config_path, std::string("{\n") + "  \"backend\": \"mock:" +
                              spike_scenario() + "\",\n" +
                              "  \"dataset\": \"" + spike_dataset() + "\",\n" +
                              "  \"policy\": \"ergo\",\n  \"tau\": 0.03,\n" +
                              "  \"n_runs\": 1,\n  \"out\": \"" + work +
                              "/out\"\n}\n");
  const auto from_config = run_cli("simulate --config '" + config_path + "'");
  CHECK(from_config.exit_code == 0);
  CHECK(read_text(work + "/out/spike-001_run0.jsonl").find("\"tau\":0.03") !=
        std::string::npos);

  // The flag wins over the file: tau 0.08 suppresses the reset.
  fs::remove_all(work + "/out");
  const auto overridden =
      run_cli("simulate --config '" + config_path + "' --tau 0.08");
  CHECK(overridden.exit_code == 0);
  const auto log = read_text(work + "/out/spike-001_run0.jsonl");
  CHECK(log.find("\"tau\":0.08") != std::string::npos);
  CHECK(count_occurrences(log, "\"reset\":{") == 0);

  write_text(config_path, R"({"no_such_key": 1})");
  CHECK(run_cli("simulate --config '" + config_path + "'").exit_code == 2);
  fs::remove_all(work);
}

TEST_CASE("simulate plays per-record scenarios from a mock directory") {
  const auto out = unique_work_dir();
  const auto result = run_cli("simulate --dataset '" + kFixturesDir +
                              "/datasets/batch.json' --backend 'mock:" +
                              kFixturesDir +
                              "/scenarios/batch' --policy sharded --out '" +
                              out + "'");
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("batch-add") != std::string::npos);
  CHECK(result.output.find("batch-mul") != std::string::npos);
  CHECK(fs::exists(out + "/batch-add_run0.jsonl"));
  CHECK(fs::exists(out + "/batch-mul_run2.jsonl"));
  const auto report = nlohmann::json::parse(read_text(out + "/report.json"));
  CHECK(report.at("instructions").size() == 2);
  CHECK(report.at("instructions")[0].at("average") == 100.0);
  fs::remove_all(out);

  // A record without a scenario file is a config error.
  const auto missing = run_cli("simulate --dataset '" + spike_dataset() +
                               "' --backend 'mock:" + kFixturesDir +
                               "/scenarios/batch' --policy sharded --out '" +
                               out + "'");
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("spike-001") != std::string::npos);
}

TEST_CASE("calibrate selects tau from a deltas file") {
  const auto work = unique_work_dir();
  const auto deltas_path = work + "/deltas.json";
  // 0.001 .. 0.100 in steps of 0.001.
  std::ostringstream deltas;
  deltas << "[";
  for (int i = 1; i <= 100; ++i) {
    if (i > 1) deltas << ",";
    deltas << (i / 1000.0);
  }
  deltas << "]";
  write_text(deltas_path, deltas.str());

  SUBCASE("the 65th percentile lands on the interpolated oracle value") {
    const auto result =
        run_cli("calibrate --deltas '" + deltas_path + "' --percentile 65");
    CHECK(result.exit_code == 0);
    const auto parsed = nlohmann::json::parse(result.output);
    CHECK(parsed.at("tau").get<double>() == doctest::Approx(0.06535).epsilon(1e-12));
    CHECK(parsed.at("q") == 65.0);
    CHECK(parsed.at("n") == 100);
    CHECK(parsed.contains("histogram"));
  }
  SUBCASE("percentile 0 returns the minimum") {
    const auto result =
        run_cli("calibrate --deltas '" + deltas_path + "' --percentile 0");
    CHECK(result.exit_code == 0);
    CHECK(nlohmann::json::parse(result.output).at("tau").get<double>() ==
          doctest::Approx(0.001).epsilon(1e-12));
  }
  SUBCASE("an empty deltas file is a runtime failure") {
    write_text(deltas_path, "[]");
    const auto result = run_cli("calibrate --deltas '" + deltas_path + "'");
    CHECK(result.exit_code == 1);
    CHECK(result.output.find("no deltas") != std::string::npos);
  }
  SUBCASE("an output file is written when requested") {
    const auto out_path = work + "/calibration.json";
    const auto result = run_cli("calibrate --deltas '" + deltas_path +
                                "' --percentile 90 --out '" + out_path + "'");
    CHECK(result.exit_code == 0);
    CHECK(nlohmann::json::parse(read_text(out_path)).at("tau").get<double>() ==
          doctest::Approx(0.0901).epsilon(1e-9));
  }
  fs::remove_all(work);
}

TEST_CASE("analyze correlates run logs and reports failures cleanly") {
  const auto out = unique_work_dir();
  REQUIRE(run_cli("simulate --dataset '" + spike_dataset() + "' --backend 'mock:" +
                  spike_scenario() + "' --policy ergo --tau 0.03 --out '" + out +
                  "'")
              .exit_code == 0);
  SUBCASE("spike logs analyze cleanly") {
    const auto result = run_cli("analyze --logs '" + out + "'");
    CHECK(result.exit_code == 0);
    const auto parsed = nlohmann::json::parse(result.output);
    CHECK(parsed.at("n_pairs") == 9);
    CHECK(parsed.at("spearman").at("n") == 9);
    CHECK(parsed.at("pearson").contains("p_value"));
    CHECK(parsed.at("delta_histogram").at("counts").size() == 20);
  }
  SUBCASE("fewer than three pairs is a runtime failure") {
    const auto work = unique_work_dir();
    write_text(work + "/tiny.json", R"([{
      "id": "tiny-1", "task": "math", "reference": "12",
      "shards": ["I have 3 boxes.", "Each holds 4 pens. How many pens?"]
    }])");
    const auto logs = work + "/logs";
    REQUIRE(run_cli("simulate --dataset '" + work + "/tiny.json' --backend 'mock:" +
                    kFixturesDir +
                    "/scenarios/batch/batch-mul.json' --policy sharded "
                    "--n-runs 1 --out '" +
                    logs + "'")
                .exit_code == 0);
    // A single two-turn run yields exactly one delta pair.
    const auto result = run_cli("analyze --logs '" + logs + "'");
    CHECK(result.exit_code == 1);
    CHECK(result.output.find("at least 3") != std::string::npos);
    fs::remove_all(work);
  }
  SUBCASE("constant deltas surface the zero-variance error") {
    // The batch scenarios hold entropy flat, so every pair has delta 0.
    const auto flat = unique_work_dir();
    REQUIRE(run_cli("simulate --dataset '" + kFixturesDir +
                    "/datasets/batch.json' --backend 'mock:" + kFixturesDir +
                    "/scenarios/batch' --policy sharded --n-runs 1 --out '" +
                    flat + "'")
                .exit_code == 0);
    const auto result = run_cli("analyze --logs '" + flat + "'");
    CHECK(result.exit_code == 1);
    CHECK(result.output.find("variance") != std::string::npos);
    fs::remove_all(flat);
  }
  SUBCASE("missing log path is a config error") {
    CHECK(run_cli("analyze --logs /nonexistent/logs").exit_code == 2);
  }
  fs::remove_all(out);
}

TEST_CASE("report rebuilds aggregates from logs alone") {
  const auto out = unique_work_dir();
  REQUIRE(run_cli("simulate --dataset '" + kFixturesDir +
                  "/datasets/batch.json' --backend 'mock:" + kFixturesDir +
                  "/scenarios/batch' --policy sharded --seed 5 --out '" + out +
                  "'")
              .exit_code == 0);
  const auto report_dir = unique_work_dir();
  const auto result =
      run_cli("report --logs '" + out + "' --out '" + report_dir + "'");
  CHECK(result.exit_code == 0);
  const auto report = nlohmann::json::parse(read_text(report_dir + "/report.json"));
  CHECK(report.at("policy") == "none_sharded");
  CHECK(report.at("instructions").size() == 2);
  CHECK(report.at("totals").at("total_runs") == 6);
  const auto csv = read_text(report_dir + "/report.csv");
  CHECK(count_occurrences(csv, "\n") == 3);  // header + two instruction rows
  fs::remove_all(out);
  fs::remove_all(report_dir);
}

TEST_CASE("chat walks the scripted conversation and survives backend errors") {
  SUBCASE("reset banner appears at the spike turn") {
    const auto result = run_cli(
        "chat --backend 'mock:" + spike_scenario() + "' --tau 0.03",
        "I want to order 3 widgets at 4 dollars each.\n"
        "Add 2 more widgets to the order.\n"
        "Apply a 10 percent discount at checkout.\n"
        "/quit\n");
    CHECK(result.exit_code == 0);
    CHECK(result.output.find("tau=0.0300") != std::string::npos);
    CHECK(result.output.find("decision=reset") != std::string::npos);
    CHECK(result.output.find("[reset] rewritten prompt: Compute the final cost") !=
          std::string::npos);
    // Exactly one reset banner: turns 1 and 2 stay below threshold.
    CHECK(count_occurrences(result.output, "[reset] triggered") == 1);
  }
  SUBCASE("tau can be adjusted live") {
    const auto result = run_cli(
        "chat --backend 'mock:" + spike_scenario() + "' --tau 0.03",
        "/tau 0.5\n"
        "I want to order 3 widgets at 4 dollars each.\n"
        "Add 2 more widgets to the order.\n"
        "Apply a 10 percent discount at checkout.\n"
        "/quit\n");
    CHECK(result.exit_code == 0);
    CHECK(result.output.find("tau set to 0.5000") != std::string::npos);
    // At tau 0.5 the spike never crosses the threshold.
    CHECK(count_occurrences(result.output, "decision=reset") == 0);
  }
  SUBCASE("backend failure prints a message and the loop continues") {
    const auto work = unique_work_dir();
    const auto scenario_path = work + "/failing.json";
    write_text(scenario_path, R"({
      "name": "failing",
      "turns": [
        {"response": "", "fail": "transport"},
        {"response": "recovered", "tokens": [{"token": "ok", "top_logprobs": [["ok", 0.0]]}]}
      ]
    })");
    const auto result = run_cli("chat --backend 'mock:" + scenario_path + "'",
                                "hello\nstill there?\n/quit\n");
    CHECK(result.exit_code == 0);
    CHECK(result.output.find("backend error") != std::string::npos);
    CHECK(result.output.find("recovered") != std::string::npos);
    fs::remove_all(work);
  }
  SUBCASE("end of input exits cleanly") {
    CHECK(run_cli("chat --backend 'mock:" + spike_scenario() + "'", "\n").exit_code ==
          0);
  }
}
