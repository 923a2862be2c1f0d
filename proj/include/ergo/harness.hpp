#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ergo/backend.hpp"
#include "ergo/error.hpp"
#include "ergo/metrics.hpp"
#include "ergo/policy.hpp"
#include "ergo/transcript.hpp"

namespace ergo::harness {

// Raised when an external verifier cannot produce a verdict (timeout, missing
// command). Distinct from "incorrect": runs hitting this are marked errored.
class VerifierError : public Error {
 public:
  using Error::Error;
};

enum class TaskKind { Math, Code, Database, Actions, Freeform };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

// One sharded instruction: the shards are revealed to the model one per turn,
// in order. `reference` is the expected answer (or whatever payload the
// configured verifier compares against).
struct DatasetRecord {
  std::string id;
  TaskKind task = TaskKind::Math;
  std::vector<std::string> shards;
  std::string reference;
  std::map<std::string, std::string> metadata;

  void validate() const;
};

// Loads a JSON array of records (schema in docs/dataset.md). Duplicate ids,
// empty shard lists and malformed fields are rejected with the offending
// record named in the error.
std::vector<DatasetRecord> load_dataset(const std::string& path);
std::vector<DatasetRecord> parse_dataset(const std::string& json_text);

enum class VerifierKind { ExactNumeric, ExactText, ExternalCommand };

std::string to_string(VerifierKind kind);
VerifierKind parse_verifier_kind(const std::string& name);

struct VerifierSpec {
  VerifierKind kind = VerifierKind::ExactNumeric;
  // Shell command with {candidate} and {reference} placeholders, each replaced
  // by the path of a temp file holding the corresponding text. Exit 0 means
  // correct. Required when kind == ExternalCommand.
  std::optional<std::string> command_template;
  int timeout_ms = 5000;

  void validate() const;
};

// ExactNumeric: compares the last signed decimal number in the candidate
// (commas stripped) numerically against the reference. ExactText: equality
// after trimming and collapsing whitespace. ExternalCommand: exit status 0.
// Timeouts and unlaunchable commands raise VerifierError.
bool verify(const std::string& candidate, const std::string& reference,
            const VerifierSpec& spec);

VerifierSpec default_verifier_for(TaskKind task);

struct RunOptions {
  backend::GenerationSettings settings;
  std::optional<std::string> system_prompt;
  std::string rewrite_template = transcript::kDefaultRewriteTemplate;
  std::string template_version = transcript::kDefaultTemplateVersion;
  bool renormalize = false;
  // 0 means "one turn per shard". Smaller values truncate the run.
  int max_turns = 0;
  std::uint64_t master_seed = 0;
  int parallelism = 1;
};

// What happened on one assistant turn. `delta` is absent on turn 1 and
// whenever either side of the comparison had no tokens.
struct TurnEvent {
  int turn = 0;
  int shard_index = 0;
  std::optional<double> mean_entropy;
  std::optional<double> delta;
  std::string action;  // "continue" or "reset"
  std::optional<std::string> reason;
  std::optional<transcript::ResetOutcome> reset;
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct RunRecord {
  std::string record_id;
  int run_index = 0;
  std::string policy_name;
  double tau = 0.0;
  std::string template_version;
  std::uint64_t seed = 0;
  std::vector<TurnEvent> events;
  double score = 0.0;
  int resets = 0;
  std::optional<int> terminated_at;
  int forward_passes = 0;
  long long prompt_tokens_total = 0;
  bool errored = false;
  std::optional<std::string> error;

  // Checks the structural invariants: events strictly ordered by turn, reset
  // count consistent with events, nothing after terminated_at.
  void validate() const;
};

// Stable per-run seed: FNV-1a over the master seed, the record id and the run
// index. std::hash is implementation-defined, so it cannot anchor logs.
std::uint64_t derive_run_seed(std::uint64_t master_seed,
                              const std::string& record_id, int run_index);

// Plays one record against the backend under the given policy. Scoring is
// binary: the first verified-correct turn scores 100 and terminates the run
// (freeform tasks check only the final turn). Backend or verifier failures
// mark the run errored and keep the partial event log.
RunRecord simulate_run(const DatasetRecord& record,
                       const policy::PolicyConfig& policy,
                       backend::ModelBackend& backend,
                       const VerifierSpec& verifier, const RunOptions& options,
                       int run_index = 0,
                       std::optional<std::uint64_t> seed = std::nullopt);

// Supplies the backend for one (record, run) job. Scripted backends need a
// fresh instance per run so scripts stay aligned; HTTP backends can return
// one shared handle.
using BackendFactory = std::function<std::shared_ptr<backend::ModelBackend>(
    const DatasetRecord& record, int run_index)>;

struct InstructionReport {
  std::string instruction_id;
  metrics::ScoreSet scores;                             // errored runs excluded
  std::optional<metrics::AggregateMetrics> aggregates;  // absent if no clean run
  int errored_runs = 0;
};

struct BatchReport {
  std::vector<InstructionReport> per_instruction;
  // Means of the per-instruction aggregates, over instructions that have any.
  std::optional<double> mean_average;
  std::optional<double> mean_aptitude;
  std::optional<double> mean_unreliability;
  long long total_shards_consumed = 0;
  int total_resets = 0;
  std::optional<double> shards_per_reset;
  std::optional<double> mean_prompt_tokens_with_reset;
  std::optional<double> mean_prompt_tokens_without_reset;
  int total_runs = 0;
  int errored_runs = 0;
};

struct BatchResult {
  std::vector<RunRecord> runs;  // record-major, then run index: deterministic
  BatchReport report;
};

// Runs every record n_runs times (seeded via derive_run_seed), possibly in
// parallel, and aggregates scores per instruction. A failed run never aborts
// the batch; it is flagged and left out of the score sets.
BatchResult run_batch(const std::vector<DatasetRecord>& dataset,
                      const policy::PolicyConfig& policy,
                      const BackendFactory& backend_factory,
                      const VerifierSpec& verifier, const RunOptions& options,
                      int n_runs = 3);

// JSONL round-trip. First line is the run header {record_id, run_index,
// policy, tau, template_version, seed}, then one event object per line, then
// a run_summary line. Serialization is canonical: identical records produce
// byte-identical files.
std::string run_log_to_jsonl(const RunRecord& record);
void write_run_log(const RunRecord& record, const std::string& path);
RunRecord read_run_log_text(const std::string& jsonl_text);
RunRecord read_run_log(const std::string& path);

// Writes one "<record_id>_run<k>.jsonl" per run into `directory` and returns
// the paths in run order.
std::vector<std::string> write_batch_logs(const std::vector<RunRecord>& runs,
                                          const std::string& directory);

// Pools per-turn (entropy delta, response-length delta) pairs from run logs
// for the correlation analysis. Length deltas come from consecutive events'
// completion token counts, so only turns with a defined entropy delta and a
// logged predecessor contribute.
std::vector<metrics::DeltaPair> collect_delta_pairs(
    const std::vector<RunRecord>& runs);

// Rebuilds per-instruction score sets from finished runs (errored runs are
// excluded, mirroring run_batch).
BatchReport summarize_runs(const std::vector<RunRecord>& runs);

}  // namespace ergo::harness
