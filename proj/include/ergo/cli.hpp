#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ergo/backend.hpp"
#include "ergo/error.hpp"
#include "ergo/harness.hpp"
#include "ergo/policy.hpp"
#include "ergo/transcript.hpp"

namespace ergo::cli {

/// Backend selector: "mock:<scenario file or directory>" for scripted runs,
/// or an http(s) base URL for a chat-completions endpoint.
struct BackendSpec {
  enum class Kind { Mock, Http };
  Kind kind = Kind::Mock;
  std::string target;
};

BackendSpec parse_backend_spec(const std::string& spec);

/// Policy names as typed on the command line. Accepts the module spellings
/// plus the shorthand "sharded" (plain sharded baseline) and "full"
/// (single-turn baseline).
policy::PolicyKind parse_policy_name(const std::string& name);

/// Everything a batch command needs, merged from defaults, the optional
/// config file and command-line flags (flags win).
struct RunConfig {
  std::string backend_spec;
  backend::GenerationSettings settings;
  policy::PolicyConfig policy;
  std::string dataset_path;
  std::string out_dir = "out";
  int n_runs = 3;
  std::uint64_t master_seed = 0;
  std::string rewrite_template = transcript::kDefaultRewriteTemplate;
  std::string template_version = transcript::kDefaultTemplateVersion;
  std::optional<std::string> system_prompt;
  bool renormalize = false;
  int parallelism = 1;
  int max_turns = 0;
  std::optional<harness::VerifierSpec> verifier;
  int http_timeout_ms = 30000;
  int http_max_retries = 3;

  /// Throws ConfigError on inconsistent settings. Runs before any backend
  /// traffic.
  void validate() const;
};

/// Applies a JSON config file over `base`. Unknown keys are rejected so
/// typos fail loudly instead of silently running defaults.
RunConfig config_from_json(const std::string& json_text, RunConfig base = {});

/// Entry point behind main(). Returns the process exit code:
/// 0 success, 1 runtime error, 2 usage or config error.
int run(int argc, const char* const* argv);

}  // namespace ergo::cli
