#include "ergo/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "ergo/calibrate.hpp"
#include "ergo/http_backend.hpp"
#include "ergo/metrics.hpp"
#include "ergo/mock_backend.hpp"
#include "json.hpp"

namespace ergo::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fixed(double value, int decimals) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", decimals, value);
  return buffer;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open file for writing: " + path);
  out << text;
  if (!out) throw ConfigError("failed writing file: " + path);
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string quoted = "\"";
  for (char c : text) {
    if (c == '"') quoted += "\"\"";
    else quoted.push_back(c);
  }
  quoted.push_back('"');
  return quoted;
}

ordered_json histogram_json(const calibrate::Histogram& histogram) {
  ordered_json out;
  out["edges"] = histogram.edges;
  out["counts"] = histogram.counts;
  return out;
}

ordered_json correlation_json(const metrics::CorrelationResult& result) {
  ordered_json out;
  out["coefficient"] = result.coefficient;
  out["p_value"] = result.p_value;
  out["n"] = result.n;
  out["method"] = metrics::to_string(result.method);
  return out;
}

// Builds the per-run backend supplier plus, for scripted runs, an upfront
// check that every record has a scenario to play against.
harness::BackendFactory make_backend_factory(
    const BackendSpec& spec, const RunConfig& config,
    const std::vector<harness::DatasetRecord>& dataset) {
  if (spec.kind == BackendSpec::Kind::Http) {
    backend::HttpBackendConfig http;
    http.base_url = spec.target;
    http.timeout_ms = config.http_timeout_ms;
    http.max_retries = config.http_max_retries;
    auto shared = backend::HttpBackend::create(http);
    return [shared](const harness::DatasetRecord&, int) { return shared; };
  }
  namespace fs = std::filesystem;
  if (fs::is_directory(spec.target)) {
    // One scenario file per record, named "<record id>.json".
    auto scenarios =
        std::make_shared<std::map<std::string, backend::MockScenario>>();
    for (const auto& record : dataset) {
      const auto path = (fs::path(spec.target) / (record.id + ".json")).string();
      if (!fs::exists(path))
        throw ConfigError("no scenario for record \"" + record.id +
                          "\": expected " + path);
      scenarios->emplace(record.id, backend::MockScenario::load(path));
    }
    return [scenarios](const harness::DatasetRecord& record, int) {
      return backend::MockBackend::create(scenarios->at(record.id));
    };
  }
  auto scenario =
      std::make_shared<backend::MockScenario>(backend::MockScenario::load(spec.target));
  return [scenario](const harness::DatasetRecord&, int) {
    return backend::MockBackend::create(*scenario);
  };
}

std::shared_ptr<backend::ModelBackend> make_single_backend(
    const BackendSpec& spec, const RunConfig& config) {
  if (spec.kind == BackendSpec::Kind::Http) {
    backend::HttpBackendConfig http;
    http.base_url = spec.target;
    http.timeout_ms = config.http_timeout_ms;
    http.max_retries = config.http_max_retries;
    return backend::HttpBackend::create(http);
  }
  if (std::filesystem::is_directory(spec.target))
    throw ConfigError(
        "this command needs a single scenario file, not a directory: " +
        spec.target);
  return backend::MockBackend::create(backend::MockScenario::load(spec.target));
}

// Scripted backends ignore the model id, so spare the operator an extra flag;
// HTTP endpoints still require an explicit model.
void default_model_for_mock(RunConfig& config) {
  if (config.backend_spec.rfind("mock:", 0) == 0 &&
      config.settings.model_id.empty())
    config.settings.model_id = "mock";
}

harness::RunOptions run_options_from(const RunConfig& config) {
  harness::RunOptions options;
  options.settings = config.settings;
  options.system_prompt = config.system_prompt;
  options.rewrite_template = config.rewrite_template;
  options.template_version = config.template_version;
  options.renormalize = config.renormalize;
  options.max_turns = config.max_turns;
  options.master_seed = config.master_seed;
  options.parallelism = config.parallelism;
  return options;
}

// Explicit verifier config wins; otherwise the dataset's task decides, and a
// mixed-task dataset must say what it wants.
harness::VerifierSpec verifier_for(const RunConfig& config,
                                   const std::vector<harness::DatasetRecord>& dataset) {
  if (config.verifier) return *config.verifier;
  if (dataset.empty()) throw ConfigError("dataset has no records");
  const auto task = dataset.front().task;
  for (const auto& record : dataset)
    if (record.task != task)
      throw ConfigError(
          "dataset mixes task kinds; set the verifier explicitly");
  return harness::default_verifier_for(task);
}

ordered_json report_json(const RunConfig& config, const harness::BatchReport& report) {
  ordered_json out;
  out["policy"] = policy::to_string(config.policy.kind);
  out["tau"] = config.policy.tau;
  out["model"] = config.settings.model_id;
  out["n_runs"] = config.n_runs;
  out["master_seed"] = config.master_seed;
  ordered_json instructions = ordered_json::array();
  for (const auto& instruction : report.per_instruction) {
    ordered_json row;
    row["instruction_id"] = instruction.instruction_id;
    if (instruction.aggregates) {
      row["average"] = instruction.aggregates->average;
      row["aptitude"] = instruction.aggregates->aptitude;
      row["unreliability"] = instruction.aggregates->unreliability;
    } else {
      row["average"] = nullptr;
      row["aptitude"] = nullptr;
      row["unreliability"] = nullptr;
    }
    row["n_runs"] = instruction.scores.n_runs;
    row["errored_runs"] = instruction.errored_runs;
    instructions.push_back(std::move(row));
  }
  out["instructions"] = std::move(instructions);
  ordered_json totals;
  totals["total_runs"] = report.total_runs;
  totals["errored_runs"] = report.errored_runs;
  totals["total_resets"] = report.total_resets;
  totals["total_shards_consumed"] = report.total_shards_consumed;
  if (report.shards_per_reset)
    totals["shards_per_reset"] = *report.shards_per_reset;
  else
    totals["shards_per_reset"] = nullptr;
  if (report.mean_prompt_tokens_with_reset)
    totals["mean_prompt_tokens_with_reset"] = *report.mean_prompt_tokens_with_reset;
  else
    totals["mean_prompt_tokens_with_reset"] = nullptr;
  if (report.mean_prompt_tokens_without_reset)
    totals["mean_prompt_tokens_without_reset"] =
        *report.mean_prompt_tokens_without_reset;
  else
    totals["mean_prompt_tokens_without_reset"] = nullptr;
  if (report.mean_average) totals["mean_average"] = *report.mean_average;
  if (report.mean_aptitude) totals["mean_aptitude"] = *report.mean_aptitude;
  if (report.mean_unreliability)
    totals["mean_unreliability"] = *report.mean_unreliability;
  out["totals"] = std::move(totals);
  return out;
}

std::string report_csv(const harness::BatchReport& report) {
  std::ostringstream out;
  out << "instruction_id,average,aptitude,unreliability,n_runs\n";
  for (const auto& instruction : report.per_instruction) {
    out << csv_field(instruction.instruction_id) << ',';
    if (instruction.aggregates) {
      out << fixed(instruction.aggregates->average, 2) << ','
          << fixed(instruction.aggregates->aptitude, 2) << ','
          << fixed(instruction.aggregates->unreliability, 2) << ',';
    } else {
      out << ",,,";
    }
    out << instruction.scores.n_runs << '\n';
  }
  return out.str();
}

void print_report_summary(std::ostream& out, const harness::BatchReport& report) {
  for (const auto& instruction : report.per_instruction) {
    out << "  " << instruction.instruction_id << ": ";
    if (instruction.aggregates) {
      out << "average=" << fixed(instruction.aggregates->average, 2)
          << " aptitude=" << fixed(instruction.aggregates->aptitude, 2)
          << " unreliability=" << fixed(instruction.aggregates->unreliability, 2);
    } else {
      out << "no clean runs";
    }
    out << " n_runs=" << instruction.scores.n_runs
        << " errored=" << instruction.errored_runs << "\n";
  }
  out << "totals: runs=" << report.total_runs
      << " errored=" << report.errored_runs
      << " resets=" << report.total_resets;
  if (report.shards_per_reset)
    out << " shards_per_reset=" << fixed(*report.shards_per_reset, 2);
  out << "\n";
}

std::vector<std::string> discover_logs(const std::vector<std::string>& inputs) {
  namespace fs = std::filesystem;
  std::vector<std::string> paths;
  for (const auto& input : inputs) {
    if (fs::is_directory(input)) {
      std::vector<std::string> inside;
      for (const auto& entry : fs::directory_iterator(input))
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
          inside.push_back(entry.path().string());
      std::sort(inside.begin(), inside.end());
      paths.insert(paths.end(), inside.begin(), inside.end());
    } else if (fs::exists(input)) {
      paths.push_back(input);
    } else {
      throw ConfigError("no such run log path: " + input);
    }
  }
  return paths;
}

std::vector<harness::RunRecord> read_logs(const std::vector<std::string>& paths) {
  std::vector<harness::RunRecord> runs;
  runs.reserve(paths.size());
  for (const auto& path : paths) runs.push_back(harness::read_run_log(path));
  return runs;
}

int run_simulate(RunConfig config) {
  default_model_for_mock(config);
  if (config.dataset_path.empty())
    throw ConfigError("simulate needs a dataset (--dataset or config file)");
  config.validate();
  const auto spec = parse_backend_spec(config.backend_spec);
  const auto dataset = harness::load_dataset(config.dataset_path);
  const auto verifier = verifier_for(config, dataset);
  const auto factory = make_backend_factory(spec, config, dataset);
  const auto options = run_options_from(config);

  std::cout << "simulate: policy=" << policy::to_string(config.policy.kind)
            << " tau=" << fixed(config.policy.tau, 4)
            << " dataset=" << config.dataset_path
            << " records=" << dataset.size() << " n_runs=" << config.n_runs
            << " master_seed=" << config.master_seed << "\n";

  const auto result = harness::run_batch(dataset, config.policy, factory,
                                         verifier, options, config.n_runs);

  std::filesystem::create_directories(config.out_dir);
  const auto log_paths = harness::write_batch_logs(result.runs, config.out_dir);
  const auto report_path =
      (std::filesystem::path(config.out_dir) / "report.json").string();
  const auto csv_path =
      (std::filesystem::path(config.out_dir) / "report.csv").string();
  write_file(report_path, report_json(config, result.report).dump(2) + "\n");
  write_file(csv_path, report_csv(result.report));

  print_report_summary(std::cout, result.report);
  std::cout << "wrote " << log_paths.size() << " run logs to " << config.out_dir
            << "\n";
  std::cout << "wrote " << report_path << "\n";
  std::cout << "wrote " << csv_path << "\n";
  return result.report.errored_runs == result.report.total_runs &&
                 result.report.total_runs > 0
             ? 1
             : 0;
}

int run_calibrate(RunConfig config, const std::string& deltas_path,
                  double percentile_q, int bins, int runs,
                  const std::string& out_path) {
  default_model_for_mock(config);
  calibrate::DeltaSample sample;
  bool live = false;
  if (!deltas_path.empty()) {
    json parsed;
    try {
      parsed = json::parse(read_file(deltas_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("deltas parse error: ") + e.what());
    }
    if (!parsed.is_array())
      throw ConfigError("deltas file must be a JSON array of numbers");
    for (const auto& value : parsed) {
      if (!value.is_number())
        throw ConfigError("deltas file must contain only numbers");
      sample.values.push_back(value.get<double>());
    }
    sample.source = "file:" + deltas_path;
    sample.count = static_cast<int>(sample.values.size());
  } else if (!config.dataset_path.empty()) {
    live = true;
    config.validate();
    const auto spec = parse_backend_spec(config.backend_spec);
    const auto dataset = harness::load_dataset(config.dataset_path);
    auto backend = make_single_backend(spec, config);
    sample = calibrate::collect_deltas(dataset, *backend, runs,
                                       run_options_from(config));
  } else {
    throw ConfigError("calibrate needs --deltas or a dataset to collect from");
  }

  if (sample.values.empty()) {
    std::cerr << "calibrate: no deltas to work with\n";
    return 1;
  }
  const auto selection = calibrate::select_threshold(sample, percentile_q);
  const auto histogram = calibrate::make_histogram(sample.values, bins);

  ordered_json out;
  out["tau"] = selection.tau;
  out["q"] = selection.q;
  out["n"] = selection.n;
  out["histogram"] = histogram_json(histogram);
  out["source"] = sample.source;
  if (live) out["master_seed"] = config.master_seed;
  const auto text = out.dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) {
    write_file(out_path, text);
    std::cerr << "wrote " << out_path << "\n";
  }
  return 0;
}

int run_analyze(const std::vector<std::string>& log_inputs, int bins,
                const std::string& out_path) {
  if (log_inputs.empty()) throw ConfigError("analyze needs --logs");
  const auto paths = discover_logs(log_inputs);
  if (paths.empty()) {
    std::cerr << "analyze: no run logs found\n";
    return 1;
  }
  const auto runs = read_logs(paths);
  const auto pairs = harness::collect_delta_pairs(runs);
  if (pairs.size() < 3) {
    std::cerr << "analyze: need at least 3 delta pairs, found " << pairs.size()
              << "\n";
    return 1;
  }
  metrics::EntropyLengthAnalysis analysis;
  try {
    analysis = metrics::entropy_length_analysis(pairs);
  } catch (const metrics::UndefinedCorrelationError& e) {
    std::cerr << "analyze: " << e.what() << "\n";
    return 1;
  }
  std::vector<double> deltas;
  deltas.reserve(pairs.size());
  for (const auto& pair : pairs) deltas.push_back(pair.entropy_delta);

  ordered_json out;
  out["logs"] = paths.size();
  out["n_pairs"] = pairs.size();
  out["spearman"] = correlation_json(analysis.spearman);
  out["pearson"] = correlation_json(analysis.pearson);
  out["delta_histogram"] = histogram_json(calibrate::make_histogram(deltas, bins));
  const auto text = out.dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) {
    write_file(out_path, text);
    std::cerr << "wrote " << out_path << "\n";
  }
  return 0;
}

int run_report(const RunConfig& config, const std::vector<std::string>& log_inputs) {
  if (log_inputs.empty()) throw ConfigError("report needs --logs");
  const auto paths = discover_logs(log_inputs);
  if (paths.empty()) {
    std::cerr << "report: no run logs found\n";
    return 1;
  }
  const auto runs = read_logs(paths);
  const auto report = harness::summarize_runs(runs);

  // Batch-level context comes from the logs themselves.
  RunConfig echoed = config;
  if (!runs.empty()) {
    echoed.policy.kind = parse_policy_name(runs.front().policy_name);
    echoed.policy.tau = runs.front().tau;
    echoed.master_seed = runs.front().seed;
  }
  std::filesystem::create_directories(config.out_dir);
  const auto report_path =
      (std::filesystem::path(config.out_dir) / "report.json").string();
  const auto csv_path =
      (std::filesystem::path(config.out_dir) / "report.csv").string();
  write_file(report_path, report_json(echoed, report).dump(2) + "\n");
  write_file(csv_path, report_csv(report));
  std::cout << "report: logs=" << paths.size() << "\n";
  print_report_summary(std::cout, report);
  std::cout << "wrote " << report_path << "\n";
  std::cout << "wrote " << csv_path << "\n";
  return 0;
}

int run_chat(RunConfig config) {
  default_model_for_mock(config);
  config.validate();
  const auto spec = parse_backend_spec(config.backend_spec);
  auto backend = make_single_backend(spec, config);

  // Threshold: explicit flag/config wins, then the model's calibrated
  // preset, then 0 (any entropy rise resets).
  double tau = config.policy.tau;
  const auto& presets = policy::default_tau_presets();
  if (config.policy.kind == policy::PolicyKind::Ergo && tau == 0.0) {
    const auto preset = presets.find(config.settings.model_id);
    if (preset != presets.end()) tau = preset->second;
  }

  policy::PolicyConfig chat_policy = config.policy;
  chat_policy.tau = tau;
  policy::ResetRng rng(config.master_seed);
  transcript::ConversationState state =
      config.system_prompt ? transcript::ConversationState(*config.system_prompt)
                           : transcript::ConversationState();
  transcript::ResetOptions reset_options;
  reset_options.rewrite_template = config.rewrite_template;
  reset_options.template_version = config.template_version;
  reset_options.renormalize = config.renormalize;

  std::cout << "chat: policy=" << policy::to_string(chat_policy.kind)
            << " tau=" << fixed(chat_policy.tau, 4)
            << " model=" << config.settings.model_id
            << " seed=" << config.master_seed << "\n";
  std::cout << "type a message, /tau <value> to adjust the threshold, /quit to "
               "leave\n";

  std::string line;
  while (true) {
    std::cout << "you> " << std::flush;
    if (!std::getline(std::cin, line)) {
      std::cout << "\n";
      return 0;
    }
    if (line.empty()) continue;
    if (line == "/quit") return 0;
    if (line.rfind("/tau", 0) == 0) {
      std::istringstream args(line.substr(4));
      double new_tau = 0.0;
      if (args >> new_tau && std::isfinite(new_tau)) {
        chat_policy.tau = new_tau;
        std::cout << "tau set to " << fixed(new_tau, 4) << "\n";
      } else {
        std::cout << "usage: /tau <value>\n";
      }
      continue;
    }
    if (line[0] == '/') {
      std::cout << "unknown command: " << line << "\n";
      continue;
    }

    // Send on a trial message first so a failed generation leaves the
    // conversation exactly as it was.
    Message user;
    user.role = Role::User;
    user.content = line;
    user.turn_index = state.shards_consumed() + 1;
    auto messages = state.assemble_prompt_messages(policy::AssemblyMode::Plain);
    messages.push_back(std::move(user));
    backend::GenerationResult result;
    try {
      result = backend->generate({std::move(messages), config.settings});
    } catch (const backend::BackendError& e) {
      std::cout << "backend error: " << e.what() << " (turn not recorded)\n";
      continue;
    }

    state.append_shard(line);
    const auto previous = state.last_assistant_stats();
    const int previous_tokens = previous ? previous->token_count : 0;
    const auto stats =
        entropy::turn_stats(result.tokens, previous_tokens, config.renormalize);
    const int turn = state.completed_turns() + 1;
    std::optional<entropy::EntropyDelta> delta;
    if (turn >= 2 && previous)
      delta = entropy::entropy_delta(*previous, stats, turn);
    state.record_assistant_turn(result.text, stats, result.prompt_token_count);

    std::cout << "assistant> " << result.text << "\n";
    std::cout << "[turn " << turn << "] H=";
    if (stats.mean_entropy)
      std::cout << fixed(*stats.mean_entropy, 4);
    else
      std::cout << "n/a";
    std::cout << " dH=";
    if (delta)
      std::cout << fixed(delta->value, 4);
    else
      std::cout << "n/a";

    const auto decision =
        policy::decide(chat_policy, turn, state.shards_consumed(), delta, rng);
    const bool reset =
        decision.action == policy::PolicyDecision::Action::Reset;
    std::cout << " decision=" << (reset ? "reset" : "continue") << "\n";
    if (reset) {
      try {
        const auto outcome = state.execute_reset(
            *backend, config.settings, delta ? delta->value : 0.0, reset_options);
        std::cout << "[reset] triggered at turn " << outcome.trigger_turn << " ("
                  << decision.reason << ")\n";
        std::cout << "[reset] rewritten prompt: " << outcome.rewritten_prompt
                  << "\n";
        std::cout << "[reset] optimized response: " << outcome.optimized_response
                  << "\n";
      } catch (const transcript::ResetError& e) {
        std::cout << "reset failed: " << e.what() << " (continuing without)\n";
      }
    }
  }
}

}  // namespace

BackendSpec parse_backend_spec(const std::string& spec) {
  if (spec.empty())
    throw ConfigError("backend spec is required (--backend or config file)");
  BackendSpec parsed;
  if (spec.rfind("mock:", 0) == 0) {
    parsed.kind = BackendSpec::Kind::Mock;
    parsed.target = spec.substr(5);
    if (parsed.target.empty())
      throw ConfigError("mock backend spec needs a path: mock:<scenario>");
    return parsed;
  }
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    parsed.kind = BackendSpec::Kind::Http;
    parsed.target = spec;
    return parsed;
  }
  throw ConfigError("backend spec must be mock:<path> or an http(s) URL, got \"" +
                    spec + "\"");
}

policy::PolicyKind parse_policy_name(const std::string& name) {
  if (name == "sharded") return policy::PolicyKind::NoneSharded;
  if (name == "full") return policy::PolicyKind::FullSingleTurn;
  return policy::parse_policy_kind(name);
}

void RunConfig::validate() const {
  parse_backend_spec(backend_spec);
  policy.validate();
  if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (max_turns < 0) throw ConfigError("max_turns must be >= 0");
  if (http_timeout_ms < 1) throw ConfigError("http_timeout_ms must be >= 1");
  if (http_max_retries < 0) throw ConfigError("http_max_retries must be >= 0");
  if (rewrite_template.empty()) throw ConfigError("rewrite template is empty");
  if (verifier) verifier->validate();
  settings.validate(20);
}

RunConfig config_from_json(const std::string& json_text, RunConfig base) {
  json parsed;
  try {
    parsed = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!parsed.is_object()) throw ConfigError("config file must be a JSON object");

  const auto ensure_verifier = [&base]() -> harness::VerifierSpec& {
    if (!base.verifier) base.verifier.emplace();
    return *base.verifier;
  };

  for (const auto& [key, value] : parsed.items()) {
    try {
      if (key == "backend") base.backend_spec = value.get<std::string>();
      else if (key == "model") base.settings.model_id = value.get<std::string>();
      else if (key == "temperature") base.settings.temperature = value.get<double>();
      else if (key == "top_logprobs") base.settings.top_logprobs = value.get<int>();
      else if (key == "max_tokens") base.settings.max_tokens = value.get<int>();
      else if (key == "policy")
        base.policy.kind = parse_policy_name(value.get<std::string>());
      else if (key == "tau") base.policy.tau = value.get<double>();
      else if (key == "probability") base.policy.probability = value.get<double>();
      else if (key == "interval") base.policy.interval = value.get<int>();
      else if (key == "dataset") base.dataset_path = value.get<std::string>();
      else if (key == "out") base.out_dir = value.get<std::string>();
      else if (key == "n_runs") base.n_runs = value.get<int>();
      else if (key == "seed") base.master_seed = value.get<std::uint64_t>();
      else if (key == "rewrite_template")
        base.rewrite_template = value.get<std::string>();
      else if (key == "system_prompt")
        base.system_prompt = value.get<std::string>();
      else if (key == "renormalize") base.renormalize = value.get<bool>();
      else if (key == "parallelism") base.parallelism = value.get<int>();
      else if (key == "max_turns") base.max_turns = value.get<int>();
      else if (key == "verifier")
        ensure_verifier().kind = harness::parse_verifier_kind(value.get<std::string>());
      else if (key == "verifier_command")
        ensure_verifier().command_template = value.get<std::string>();
      else if (key == "verifier_timeout_ms")
        ensure_verifier().timeout_ms = value.get<int>();
      else if (key == "http_timeout_ms") base.http_timeout_ms = value.get<int>();
      else if (key == "http_max_retries")
        base.http_max_retries = value.get<int>();
      else
        throw ConfigError("unknown config key \"" + key + "\"");
    } catch (const json::exception& e) {
      throw ConfigError("config key \"" + key + "\": " + e.what());
    }
  }
  return base;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"entropy-guided context resetting for sharded conversations"};
  app.fallthrough(true);
  app.require_subcommand(0, 1);

  std::string config_path;
  std::string backend_spec;
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--backend", backend_spec,
                 "backend: mock:<scenario> or http(s) base URL");
  app.add_option("--seed", seed, "master seed for run derivation");
  app.add_option("--out", out_dir, "output directory or file");

  std::string policy_name;
  double tau = 0.0;
  double probability = 0.2;
  int interval = 5;
  std::string dataset_path;
  int n_runs = 3;
  std::string model_id;
  double temperature = 1.0;
  int top_logprobs = 20;
  int max_tokens = 1024;
  std::string system_prompt;
  std::string rewrite_template;
  bool renormalize = false;
  int parallelism = 1;
  int max_turns = 0;
  std::string verifier_kind;
  std::string verifier_command;
  int verifier_timeout_ms = 5000;

  const auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--dataset", dataset_path, "dataset JSON file");
    sub->add_option("--policy", policy_name,
                    "ergo | sharded | full | random | fixed_interval | "
                    "snowball | recap (module spellings also accepted)");
    sub->add_option("--tau", tau, "entropy-delta threshold in nats");
    sub->add_option("--probability", probability, "random policy trigger chance");
    sub->add_option("--interval", interval, "fixed_interval shard period");
    sub->add_option("--model", model_id, "model identifier");
    sub->add_option("--temperature", temperature, "sampling temperature");
    sub->add_option("--top-logprobs", top_logprobs,
                    "candidates per token (max 20)");
    sub->add_option("--max-tokens", max_tokens, "completion budget per turn");
    sub->add_option("--system-prompt", system_prompt, "system prompt text");
    sub->add_option("--rewrite-template", rewrite_template,
                    "rewrite instruction override");
    sub->add_flag("--renormalize", renormalize,
                  "renormalize retained probability mass");
    sub->add_option("--max-turns", max_turns, "turn limit (0 = one per shard)");
  };

  auto* simulate = app.add_subcommand("simulate", "run a policy over a dataset");
  add_run_flags(simulate);
  simulate->add_option("--n-runs", n_runs, "repetitions per record");
  simulate->add_option("--parallelism", parallelism, "concurrent runs");
  simulate->add_option("--verifier", verifier_kind,
                       "exact_numeric | exact_text | external_command");
  simulate->add_option("--verifier-command", verifier_command,
                       "external verifier template with {candidate} {reference}");
  simulate->add_option("--verifier-timeout-ms", verifier_timeout_ms,
                       "external verifier timeout");

  std::string deltas_path;
  double percentile_q = 90.0;
  int bins = 20;
  int calibrate_runs = 1;
  auto* calibrate_cmd =
      app.add_subcommand("calibrate", "pick tau from observed deltas");
  add_run_flags(calibrate_cmd);
  calibrate_cmd->add_option("--deltas", deltas_path,
                            "JSON array of observed deltas");
  calibrate_cmd->add_option("--percentile", percentile_q,
                            "percentile for threshold selection");
  calibrate_cmd->add_option("--bins", bins, "histogram bins");
  calibrate_cmd->add_option("--runs", calibrate_runs,
                            "collection runs per record");

  std::vector<std::string> log_inputs;
  int analyze_bins = 20;
  auto* analyze =
      app.add_subcommand("analyze", "correlate entropy and length deltas");
  analyze->add_option("--logs", log_inputs, "run log files or directories");
  analyze->add_option("--bins", analyze_bins, "histogram bins");

  auto* report = app.add_subcommand("report", "aggregate scores from run logs");
  report->add_option("--logs", log_inputs, "run log files or directories");

  auto* chat = app.add_subcommand("chat", "interactive demo conversation");
  add_run_flags(chat);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig config;
    if (!config_path.empty())
      config = config_from_json(read_file(config_path), config);
    // Flags override the config file.
    if (app.count("--backend")) config.backend_spec = backend_spec;
    if (app.count("--seed")) config.master_seed = seed;
    if (app.count("--out")) config.out_dir = out_dir;
    const auto apply_run_flags = [&](CLI::App* sub) {
      if (sub->count("--dataset")) config.dataset_path = dataset_path;
      if (sub->count("--policy"))
        config.policy.kind = parse_policy_name(policy_name);
      if (sub->count("--tau")) config.policy.tau = tau;
      if (sub->count("--probability")) config.policy.probability = probability;
      if (sub->count("--interval")) config.policy.interval = interval;
      if (sub->count("--model")) config.settings.model_id = model_id;
      if (sub->count("--temperature")) config.settings.temperature = temperature;
      if (sub->count("--top-logprobs"))
        config.settings.top_logprobs = top_logprobs;
      if (sub->count("--max-tokens")) config.settings.max_tokens = max_tokens;
      if (sub->count("--system-prompt")) config.system_prompt = system_prompt;
      if (sub->count("--rewrite-template"))
        config.rewrite_template = rewrite_template;
      if (sub->count("--renormalize")) config.renormalize = renormalize;
      if (sub->count("--max-turns")) config.max_turns = max_turns;
    };

    if (simulate->parsed()) {
      apply_run_flags(simulate);
      if (simulate->count("--n-runs")) config.n_runs = n_runs;
      if (simulate->count("--parallelism")) config.parallelism = parallelism;
      if (simulate->count("--verifier") || simulate->count("--verifier-command") ||
          simulate->count("--verifier-timeout-ms")) {
        harness::VerifierSpec spec =
            config.verifier.value_or(harness::VerifierSpec{});
        if (simulate->count("--verifier"))
          spec.kind = harness::parse_verifier_kind(verifier_kind);
        if (simulate->count("--verifier-command"))
          spec.command_template = verifier_command;
        if (simulate->count("--verifier-timeout-ms"))
          spec.timeout_ms = verifier_timeout_ms;
        config.verifier = spec;
      }
      return run_simulate(config);
    }
    if (calibrate_cmd->parsed()) {
      apply_run_flags(calibrate_cmd);
      std::string out_file;
      if (app.count("--out")) out_file = out_dir;
      return run_calibrate(config, deltas_path, percentile_q, bins,
                           calibrate_runs, out_file);
    }
    if (analyze->parsed()) {
      std::string out_file;
      if (app.count("--out")) out_file = out_dir;
      return run_analyze(log_inputs, analyze_bins, out_file);
    }
    if (report->parsed()) {
      if (!app.count("--out")) config.out_dir = ".";
      return run_report(config, log_inputs);
    }
    if (chat->parsed()) {
      apply_run_flags(chat);
      return run_chat(config);
    }
    std::cerr << app.help();
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ergo::cli
