#include "ergo/harness.hpp"

#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace ergo::harness {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kActionContinue = "continue";
constexpr const char* kActionReset = "reset";
constexpr const char* kActionTerminate = "terminate";

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw ConfigError("dataset schema violation at " + path + ": " + what);
}

std::string require_string(const json& node, const std::string& path,
                           const char* key, bool allow_empty) {
  if (!node.contains(key)) schema_error(path + "." + key, "missing field");
  const auto& value = node.at(key);
  if (!value.is_string()) schema_error(path + "." + key, "expected a string");
  auto text = value.get<std::string>();
  if (!allow_empty && text.empty()) schema_error(path + "." + key, "must not be empty");
  return text;
}

DatasetRecord parse_record(const json& node, const std::string& path) {
  if (!node.is_object()) schema_error(path, "expected an object");
  DatasetRecord record;
  record.id = require_string(node, path, "id", false);
  record.task = parse_task_kind(require_string(node, path, "task", false));
  if (!node.contains("shards")) schema_error(path + ".shards", "missing field");
  const auto& shards = node.at("shards");
  if (!shards.is_array() || shards.empty())
    schema_error(path + ".shards", "must be a non-empty array");
  for (std::size_t i = 0; i < shards.size(); ++i) {
    const auto& shard = shards[i];
    const auto shard_path = path + ".shards[" + std::to_string(i) + "]";
    if (!shard.is_string()) schema_error(shard_path, "expected a string");
    auto text = shard.get<std::string>();
    if (text.empty()) schema_error(shard_path, "must not be empty");
    record.shards.push_back(std::move(text));
  }
  record.reference = require_string(node, path, "reference", true);
  if (node.contains("metadata")) {
    const auto& metadata = node.at("metadata");
    if (!metadata.is_object()) schema_error(path + ".metadata", "expected an object");
    for (const auto& [key, value] : metadata.items()) {
      if (!value.is_string())
        schema_error(path + ".metadata." + key, "expected a string value");
      record.metadata.emplace(key, value.get<std::string>());
    }
  }
  return record;
}

// The fixed extraction pattern for numeric answers: optional sign, digits
// with an optional fractional part. Kept deliberately narrow so scores stay
// comparable across runs.
const std::regex& number_pattern() {
  static const std::regex pattern(R"([+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+))");
  return pattern;
}

std::string strip_commas(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text)
    if (c != ',') out.push_back(c);
  return out;
}

std::optional<double> last_number(const std::string& text) {
  const auto stripped = strip_commas(text);
  std::optional<double> found;
  for (std::sregex_iterator it(stripped.begin(), stripped.end(), number_pattern()), end;
       it != end; ++it) {
    found = std::stod(it->str());
  }
  return found;
}

std::string collapse_whitespace(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = true;  // leading whitespace is dropped
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

class TempFile {
 public:
  explicit TempFile(const std::string& contents) {
    auto pattern =
        (std::filesystem::temp_directory_path() / "ergo-verify-XXXXXX").string();
    std::vector<char> buffer(pattern.begin(), pattern.end());
    buffer.push_back('\0');
    const int fd = ::mkstemp(buffer.data());
    if (fd < 0) throw VerifierError("cannot create temp file for external verifier");
    path_.assign(buffer.data());
    std::size_t written = 0;
    while (written < contents.size()) {
      const ssize_t n =
          ::write(fd, contents.data() + written, contents.size() - written);
      if (n < 0) {
        ::close(fd);
        throw VerifierError("cannot write temp file for external verifier");
      }
      written += static_cast<std::size_t>(n);
    }
    ::close(fd);
  }

  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

std::string substitute_all(std::string text, const std::string& needle,
                           const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return text;
}

bool run_external(const std::string& command, int timeout_ms) {
  const pid_t pid = ::fork();
  if (pid < 0) throw VerifierError("fork failed for external verifier");
  if (pid == 0) {
    // Own process group, so a timeout kill reaches the whole command tree
    // (the shell may fork rather than exec the command).
    ::setpgid(0, 0);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  ::setpgid(pid, pid);  // racing the child; whoever runs first wins, same result
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  int status = 0;
  for (;;) {
    const pid_t done = ::waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0) throw VerifierError("waitpid failed for external verifier");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw VerifierError("external verifier timed out after " +
                          std::to_string(timeout_ms) + " ms");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  if (!WIFEXITED(status))
    throw VerifierError("external verifier terminated by a signal");
  const int code = WEXITSTATUS(status);
  if (code == 0) return true;
  // 126/127 are the shell's "found but not executable" / "not found" codes:
  // those are environment problems, not a wrong answer.
  if (code == 126 || code == 127)
    throw VerifierError("external verifier command could not be executed (exit " +
                        std::to_string(code) + ")");
  return false;
}

int shards_touched(const RunRecord& run) {
  int most = 0;
  for (const auto& event : run.events) most = std::max(most, event.shard_index);
  return most;
}

ordered_json event_to_json(const TurnEvent& event) {
  ordered_json line;
  line["turn"] = event.turn;
  line["shard_index"] = event.shard_index;
  if (event.mean_entropy)
    line["mean_entropy"] = *event.mean_entropy;
  else
    line["mean_entropy"] = nullptr;
  if (event.delta)
    line["delta"] = *event.delta;
  else
    line["delta"] = nullptr;
  ordered_json decision;
  decision["action"] = event.action;
  if (event.reason)
    decision["reason"] = *event.reason;
  else
    decision["reason"] = nullptr;
  line["decision"] = std::move(decision);
  if (event.reset) {
    ordered_json reset;
    reset["trigger_turn"] = event.reset->trigger_turn;
    reset["rewritten_prompt"] = event.reset->rewritten_prompt;
    reset["optimized_response"] = event.reset->optimized_response;
    reset["delta_at_trigger"] = event.reset->delta_at_trigger;
    line["reset"] = std::move(reset);
  }
  line["prompt_tokens"] = event.prompt_tokens;
  line["completion_tokens"] = event.completion_tokens;
  return line;
}

[[noreturn]] void log_error(std::size_t line_number, const std::string& what) {
  throw ConfigError("run log line " + std::to_string(line_number) + ": " + what);
}

TurnEvent event_from_json(const json& line, std::size_t line_number) {
  TurnEvent event;
  try {
    event.turn = line.at("turn").get<int>();
    event.shard_index = line.at("shard_index").get<int>();
    if (!line.at("mean_entropy").is_null())
      event.mean_entropy = line.at("mean_entropy").get<double>();
    if (!line.at("delta").is_null())
      event.delta = line.at("delta").get<double>();
    const auto& decision = line.at("decision");
    event.action = decision.at("action").get<std::string>();
    if (event.action != kActionContinue && event.action != kActionReset &&
        event.action != kActionTerminate)
      log_error(line_number, "unknown decision action \"" + event.action + "\"");
    if (decision.contains("reason") && !decision.at("reason").is_null())
      event.reason = decision.at("reason").get<std::string>();
    if (line.contains("reset")) {
      const auto& reset = line.at("reset");
      transcript::ResetOutcome outcome;
      outcome.trigger_turn = reset.at("trigger_turn").get<int>();
      outcome.rewritten_prompt = reset.at("rewritten_prompt").get<std::string>();
      outcome.optimized_response = reset.at("optimized_response").get<std::string>();
      outcome.delta_at_trigger = reset.at("delta_at_trigger").get<double>();
      event.reset = std::move(outcome);
    }
    event.prompt_tokens = line.at("prompt_tokens").get<int>();
    event.completion_tokens = line.at("completion_tokens").get<int>();
  } catch (const json::exception& e) {
    log_error(line_number, e.what());
  }
  return event;
}

std::string sanitize_for_filename(const std::string& id) {
  std::string out;
  out.reserve(id.size());
  for (char c : id) {
    const bool safe = std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                      c == '_' || c == '.';
    out.push_back(safe ? c : '_');
  }
  return out;
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Math: return "math";
    case TaskKind::Code: return "code";
    case TaskKind::Database: return "database";
    case TaskKind::Actions: return "actions";
    case TaskKind::Freeform: return "freeform";
  }
  throw Error("unreachable task kind");
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "math") return TaskKind::Math;
  if (name == "code") return TaskKind::Code;
  if (name == "database") return TaskKind::Database;
  if (name == "actions") return TaskKind::Actions;
  if (name == "freeform") return TaskKind::Freeform;
  throw ConfigError("unknown task kind \"" + name + "\"");
}

std::string to_string(VerifierKind kind) {
  switch (kind) {
    case VerifierKind::ExactNumeric: return "exact_numeric";
    case VerifierKind::ExactText: return "exact_text";
    case VerifierKind::ExternalCommand: return "external_command";
  }
  throw Error("unreachable verifier kind");
}

VerifierKind parse_verifier_kind(const std::string& name) {
  if (name == "exact_numeric") return VerifierKind::ExactNumeric;
  if (name == "exact_text") return VerifierKind::ExactText;
  if (name == "external_command") return VerifierKind::ExternalCommand;
  throw ConfigError("unknown verifier kind \"" + name + "\"");
}

void DatasetRecord::validate() const {
  if (id.empty()) throw ConfigError("dataset record has an empty id");
  if (shards.empty())
    throw ConfigError("dataset record \"" + id + "\" has no shards");
  for (const auto& shard : shards)
    if (shard.empty())
      throw ConfigError("dataset record \"" + id + "\" has an empty shard");
}

std::vector<DatasetRecord> parse_dataset(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("dataset parse error: ") + e.what());
  }
  if (!root.is_array()) schema_error("records", "expected a JSON array");
  std::vector<DatasetRecord> records;
  records.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    auto record = parse_record(root[i], "records[" + std::to_string(i) + "]");
    for (const auto& existing : records)
      if (existing.id == record.id)
        throw ConfigError("duplicate record id \"" + record.id + "\"");
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str());
}

void VerifierSpec::validate() const {
  if (timeout_ms < 1) throw ConfigError("verifier timeout_ms must be >= 1");
  if (kind == VerifierKind::ExternalCommand) {
    if (!command_template || command_template->empty())
      throw ConfigError("external_command verifier requires a command_template");
  }
}

bool verify(const std::string& candidate, const std::string& reference,
            const VerifierSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case VerifierKind::ExactNumeric: {
      const auto expected = last_number(reference);
      if (!expected)
        throw ConfigError("exact_numeric reference contains no number: \"" +
                          reference + "\"");
      const auto answer = last_number(candidate);
      return answer && *answer == *expected;
    }
    case VerifierKind::ExactText:
      return collapse_whitespace(candidate) == collapse_whitespace(reference);
    case VerifierKind::ExternalCommand: {
      const TempFile candidate_file(candidate);
      const TempFile reference_file(reference);
      auto command = substitute_all(*spec.command_template, "{candidate}",
                                    candidate_file.path());
      command = substitute_all(command, "{reference}", reference_file.path());
      return run_external(command, spec.timeout_ms);
    }
  }
  throw Error("unreachable verifier kind");
}

VerifierSpec default_verifier_for(TaskKind task) {
  VerifierSpec spec;
  spec.kind =
      task == TaskKind::Math ? VerifierKind::ExactNumeric : VerifierKind::ExactText;
  return spec;
}

void RunRecord::validate() const {
  int last_turn = 0;
  int reset_count = 0;
  for (const auto& event : events) {
    if (event.turn <= last_turn)
      throw Error("run record events are not strictly ordered by turn");
    last_turn = event.turn;
    if (event.reset) ++reset_count;
    if (terminated_at && event.turn > *terminated_at)
      throw Error("run record has events after terminated_at");
  }
  if (reset_count != resets)
    throw Error("run record reset count disagrees with its events");
}

std::uint64_t derive_run_seed(std::uint64_t master_seed,
                              const std::string& record_id, int run_index) {
  std::uint64_t hash = 14695981039346656037ULL;
  const auto mix_byte = [&hash](unsigned char byte) {
    hash ^= byte;
    hash *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i)
    mix_byte(static_cast<unsigned char>(master_seed >> (8 * i)));
  for (char c : record_id) mix_byte(static_cast<unsigned char>(c));
  const auto index = static_cast<std::uint64_t>(run_index);
  for (int i = 0; i < 8; ++i)
    mix_byte(static_cast<unsigned char>(index >> (8 * i)));
  return hash;
}

RunRecord simulate_run(const DatasetRecord& record,
                       const policy::PolicyConfig& policy,
                       backend::ModelBackend& backend,
                       const VerifierSpec& verifier, const RunOptions& options,
                       int run_index, std::optional<std::uint64_t> seed) {
  record.validate();
  verifier.validate();
  policy.validate();
  options.settings.validate(backend.top_logprobs_cap());
  if (options.max_turns < 0) throw ConfigError("max_turns must be >= 0");

  RunRecord run;
  run.record_id = record.id;
  run.run_index = run_index;
  run.policy_name = policy::to_string(policy.kind);
  run.tau = policy.tau;
  run.template_version = options.template_version;
  run.seed = seed.value_or(policy.seed);

  policy::PolicyConfig config = policy;
  config.seed = run.seed;
  policy::ResetRng rng(config.seed);

  transcript::ConversationState state =
      options.system_prompt ? transcript::ConversationState(*options.system_prompt)
                            : transcript::ConversationState();

  transcript::ResetOptions reset_options;
  reset_options.rewrite_template = options.rewrite_template;
  reset_options.template_version = options.template_version;
  reset_options.renormalize = options.renormalize;

  const int shard_count = static_cast<int>(record.shards.size());
  const bool single_turn = config.kind == policy::PolicyKind::FullSingleTurn;
  int planned = shard_count;
  if (options.max_turns > 0) planned = std::min(planned, options.max_turns);
  if (single_turn) planned = 1;
  // One generation per turn plus two per reset, capped at one reset per turn,
  // can never exceed three passes per shard. Anything past that is a bug.
  const int pass_cap = 3 * shard_count;
  const bool freeform = record.task == TaskKind::Freeform;

  try {
    for (int turn = 1; turn <= planned; ++turn) {
      if (single_turn) {
        for (const auto& shard : record.shards) state.append_shard(shard);
      } else {
        state.append_shard(record.shards[static_cast<std::size_t>(turn - 1)]);
      }
      const int shard_index = single_turn ? shard_count : turn;
      const bool is_final = turn == planned;
      const auto mode = policy::assembly_mode(config, is_final);
      backend::GenerationRequest request{state.assemble_prompt_messages(mode),
                                         options.settings};
      const auto result = backend.generate(request);

      const auto previous = state.last_assistant_stats();
      const int previous_tokens = previous ? previous->token_count : 0;
      const auto stats =
          entropy::turn_stats(result.tokens, previous_tokens, options.renormalize);
      std::optional<entropy::EntropyDelta> delta;
      if (turn >= 2 && previous)
        delta = entropy::entropy_delta(*previous, stats, turn);
      state.record_assistant_turn(result.text, stats, result.prompt_token_count);

      TurnEvent event;
      event.turn = turn;
      event.shard_index = shard_index;
      event.mean_entropy = stats.mean_entropy;
      if (delta) event.delta = delta->value;
      event.prompt_tokens = result.prompt_token_count;
      event.completion_tokens = result.completion_token_count;

      // Freeform tasks are judged on the final response only; everything else
      // is checked every turn (binary scoring, first success terminates).
      const bool should_check = !freeform || is_final;
      const bool correct =
          should_check && verify(result.text, record.reference, verifier);
      if (correct) {
        run.score = 100.0;
        run.terminated_at = turn;
        event.action = kActionTerminate;
        event.reason = "verified correct";
        run.events.push_back(std::move(event));
        break;
      }

      const auto decision = policy::decide(config, turn, shard_index, delta, rng);
      const bool wants_reset =
          decision.action == policy::PolicyDecision::Action::Reset;
      event.action = wants_reset ? kActionReset : kActionContinue;
      if (!decision.reason.empty()) event.reason = decision.reason;
      // The event is logged before the reset executes so a failing reset
      // still leaves the triggering turn in the partial log.
      run.events.push_back(std::move(event));
      if (wants_reset) {
        const double trigger_delta = delta ? delta->value : 0.0;
        run.events.back().reset = state.execute_reset(
            backend, options.settings, trigger_delta, reset_options);
        ++run.resets;
      }
      if (state.forward_pass_count() > pass_cap)
        throw Error("forward pass cap exceeded: pathological reset loop");
    }
  } catch (const backend::BackendError& e) {
    run.errored = true;
    run.error = std::string("backend error: ") + e.what();
  } catch (const transcript::ResetError& e) {
    run.errored = true;
    run.error = e.what();
  } catch (const VerifierError& e) {
    run.errored = true;
    run.error = std::string("verifier error: ") + e.what();
  }

  run.forward_passes = state.forward_pass_count();
  run.prompt_tokens_total = state.cumulative_prompt_tokens();
  return run;
}

BatchResult run_batch(const std::vector<DatasetRecord>& dataset,
                      const policy::PolicyConfig& policy,
                      const BackendFactory& backend_factory,
                      const VerifierSpec& verifier, const RunOptions& options,
                      int n_runs) {
  if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (options.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (!backend_factory) throw ConfigError("run_batch requires a backend factory");
  policy.validate();
  verifier.validate();
  for (const auto& record : dataset) record.validate();

  const std::size_t job_count = dataset.size() * static_cast<std::size_t>(n_runs);
  std::vector<RunRecord> runs(job_count);
  std::atomic<std::size_t> next_job{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;

  const auto worker = [&]() {
    for (;;) {
      const std::size_t job = next_job.fetch_add(1);
      if (job >= job_count) return;
      const auto& record = dataset[job / static_cast<std::size_t>(n_runs)];
      const int run_index = static_cast<int>(job % static_cast<std::size_t>(n_runs));
      const auto run_seed =
          derive_run_seed(options.master_seed, record.id, run_index);
      try {
        const auto backend = backend_factory(record, run_index);
        if (!backend) throw ConfigError("backend factory returned null");
        runs[job] = simulate_run(record, policy, *backend, verifier, options,
                                 run_index, run_seed);
      } catch (const ConfigError&) {
        // Configuration problems invalidate the whole batch, not just one run.
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      } catch (const std::exception& e) {
        RunRecord errored;
        errored.record_id = record.id;
        errored.run_index = run_index;
        errored.policy_name = policy::to_string(policy.kind);
        errored.tau = policy.tau;
        errored.template_version = options.template_version;
        errored.seed = run_seed;
        errored.errored = true;
        errored.error = e.what();
        runs[job] = std::move(errored);
      }
    }
  };

  const std::size_t thread_count = std::min<std::size_t>(
      static_cast<std::size_t>(options.parallelism), std::max<std::size_t>(job_count, 1));
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(thread_count);
    for (std::size_t i = 0; i < thread_count; ++i) threads.emplace_back(worker);
    for (auto& thread : threads) thread.join();
  }
  if (failure) std::rethrow_exception(failure);

  BatchResult result;
  result.runs = std::move(runs);
  result.report = summarize_runs(result.runs);
  return result;
}

BatchReport summarize_runs(const std::vector<RunRecord>& runs) {
  BatchReport report;
  report.total_runs = static_cast<int>(runs.size());

  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> grouped;
  for (const auto& run : runs) {
    auto [it, inserted] = grouped.try_emplace(run.record_id);
    if (inserted) order.push_back(run.record_id);
    it->second.push_back(&run);
  }

  std::vector<double> averages;
  std::vector<double> aptitudes;
  std::vector<double> unreliabilities;
  std::vector<double> prompt_with_reset;
  std::vector<double> prompt_without_reset;

  for (const auto& id : order) {
    InstructionReport instruction;
    instruction.instruction_id = id;
    instruction.scores.instruction_id = id;
    for (const RunRecord* run : grouped.at(id)) {
      report.total_shards_consumed += shards_touched(*run);
      report.total_resets += run->resets;
      if (run->errored) {
        ++instruction.errored_runs;
        ++report.errored_runs;
        continue;
      }
      instruction.scores.scores.push_back(run->score);
      auto& bucket = run->resets > 0 ? prompt_with_reset : prompt_without_reset;
      bucket.push_back(static_cast<double>(run->prompt_tokens_total));
    }
    instruction.scores.n_runs = static_cast<int>(instruction.scores.scores.size());
    if (!instruction.scores.scores.empty()) {
      const auto aggregates = metrics::aggregate(instruction.scores);
      instruction.aggregates = aggregates;
      averages.push_back(aggregates.average);
      aptitudes.push_back(aggregates.aptitude);
      unreliabilities.push_back(aggregates.unreliability);
    }
    report.per_instruction.push_back(std::move(instruction));
  }

  report.mean_average = mean_of(averages);
  report.mean_aptitude = mean_of(aptitudes);
  report.mean_unreliability = mean_of(unreliabilities);
  if (report.total_resets > 0)
    report.shards_per_reset = static_cast<double>(report.total_shards_consumed) /
                              static_cast<double>(report.total_resets);
  report.mean_prompt_tokens_with_reset = mean_of(prompt_with_reset);
  report.mean_prompt_tokens_without_reset = mean_of(prompt_without_reset);
  return report;
}

std::string run_log_to_jsonl(const RunRecord& record) {
  std::ostringstream out;
  ordered_json header;
  header["record_id"] = record.record_id;
  header["run_index"] = record.run_index;
  header["policy"] = record.policy_name;
  header["tau"] = record.tau;
  header["template_version"] = record.template_version;
  header["seed"] = record.seed;
  out << header.dump() << '\n';
  for (const auto& event : record.events) out << event_to_json(event).dump() << '\n';
  ordered_json summary;
  summary["score"] = record.score;
  summary["resets"] = record.resets;
  if (record.terminated_at)
    summary["terminated_at"] = *record.terminated_at;
  else
    summary["terminated_at"] = nullptr;
  summary["forward_passes"] = record.forward_passes;
  summary["prompt_tokens_total"] = record.prompt_tokens_total;
  summary["errored"] = record.errored;
  if (record.error)
    summary["error"] = *record.error;
  else
    summary["error"] = nullptr;
  ordered_json trailer;
  trailer["run_summary"] = std::move(summary);
  out << trailer.dump() << '\n';
  return out.str();
}

void write_run_log(const RunRecord& record, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open run log for writing: " + path);
  out << run_log_to_jsonl(record);
  if (!out) throw ConfigError("failed writing run log: " + path);
}

RunRecord read_run_log_text(const std::string& jsonl_text) {
  std::istringstream in(jsonl_text);
  std::string line;
  std::size_t line_number = 0;
  RunRecord record;
  bool saw_header = false;
  bool saw_summary = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    json parsed;
    try {
      parsed = json::parse(line);
    } catch (const json::parse_error& e) {
      log_error(line_number, e.what());
    }
    if (!parsed.is_object()) log_error(line_number, "expected a JSON object");
    if (!saw_header) {
      try {
        record.record_id = parsed.at("record_id").get<std::string>();
        record.run_index = parsed.at("run_index").get<int>();
        record.policy_name = parsed.at("policy").get<std::string>();
        record.tau = parsed.at("tau").get<double>();
        record.template_version = parsed.at("template_version").get<std::string>();
        record.seed = parsed.at("seed").get<std::uint64_t>();
      } catch (const json::exception& e) {
        log_error(line_number, std::string("bad run header: ") + e.what());
      }
      saw_header = true;
      continue;
    }
    if (parsed.contains("run_summary")) {
      if (saw_summary) log_error(line_number, "duplicate run_summary line");
      const auto& summary = parsed.at("run_summary");
      try {
        record.score = summary.at("score").get<double>();
        record.resets = summary.at("resets").get<int>();
        if (!summary.at("terminated_at").is_null())
          record.terminated_at = summary.at("terminated_at").get<int>();
        record.forward_passes = summary.at("forward_passes").get<int>();
        record.prompt_tokens_total =
            summary.at("prompt_tokens_total").get<long long>();
        record.errored = summary.at("errored").get<bool>();
        if (!summary.at("error").is_null())
          record.error = summary.at("error").get<std::string>();
      } catch (const json::exception& e) {
        log_error(line_number, std::string("bad run summary: ") + e.what());
      }
      saw_summary = true;
      continue;
    }
    if (saw_summary) log_error(line_number, "event after run_summary");
    record.events.push_back(event_from_json(parsed, line_number));
  }
  if (!saw_header) throw ConfigError("run log is empty: no header line");
  if (!saw_summary) throw ConfigError("run log is truncated: no run_summary line");
  return record;
}

RunRecord read_run_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open run log: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return read_run_log_text(buffer.str());
}

std::vector<std::string> write_batch_logs(const std::vector<RunRecord>& runs,
                                          const std::string& directory) {
  std::filesystem::create_directories(directory);
  std::vector<std::string> paths;
  paths.reserve(runs.size());
  for (const auto& run : runs) {
    const auto name = sanitize_for_filename(run.record_id) + "_run" +
                      std::to_string(run.run_index) + ".jsonl";
    const auto path = (std::filesystem::path(directory) / name).string();
    write_run_log(run, path);
    paths.push_back(path);
  }
  return paths;
}

std::vector<metrics::DeltaPair> collect_delta_pairs(
    const std::vector<RunRecord>& runs) {
  std::vector<metrics::DeltaPair> pairs;
  for (const auto& run : runs) {
    for (std::size_t i = 1; i < run.events.size(); ++i) {
      const auto& current = run.events[i];
      const auto& previous = run.events[i - 1];
      if (!current.delta) continue;
      if (current.turn != previous.turn + 1) continue;
      pairs.push_back({*current.delta,
                       static_cast<double>(current.completion_tokens -
                                           previous.completion_tokens)});
    }
  }
  return pairs;
}

}  // namespace ergo::harness
