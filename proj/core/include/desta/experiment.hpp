#pragma once

// Batch runner behind the command-line tool: resolves a configuration,
// runs the chosen algorithm per seed or the chosen property suites, and
// writes every artifact under one output directory.

#include "desta/learners.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace desta {

enum class Algorithm { dp, desta, q, lagrangian };
enum class CheckKind { lemmas, oracle, obstacle, kappa };

std::optional<Algorithm> algorithm_from_string(const std::string& text);
std::optional<CheckKind> check_from_string(const std::string& text);
std::string to_string(Algorithm algorithm);
std::string to_string(CheckKind check);

struct ExperimentConfig {
    std::string env;        // registry name or path to an environment JSON
    std::string game_file;  // JSON game; alternative to env
    std::optional<Algorithm> algorithm;
    std::vector<CheckKind> checks;

    std::size_t episodes = 2000;
    std::size_t steps_per_episode = 0;  // 0 keeps the environment's own cap (100 for games)
    std::vector<std::uint64_t> seeds{0};
    std::optional<double> kappa;  // unset: environment or game default
    std::optional<double> gamma;
    bool diagnostic = false;      // allows kappa = 0 for dp and desta

    LearnerConfig learner;  // hyperparameters; episodes, seed, kappa, gamma are filled per run
    std::optional<std::size_t> trials;  // property suites; unset uses per-suite defaults
    std::size_t eval_episodes = 100;    // greedy-gate evaluation after training
    std::size_t window = 100;           // final-window statistics
    std::size_t start_state = 0;        // learners on game files

    std::string out_dir = "results";
};

/// Empty iff the configuration can run. Messages name the offending field.
std::vector<std::string> validate_config(const ExperimentConfig& config);

/// Reads the JSON config format; unknown keys are rejected. Throws FormatError.
ExperimentConfig config_from_json(const std::string& text);
/// Every field, resolved, as one JSON object (stable key order).
std::string config_to_json(const ExperimentConfig& config, bool pretty = false);

/// Seeds from "5" (0..4) or "3,7,11". Throws std::invalid_argument.
std::vector<std::uint64_t> parse_seeds(const std::string& text);

/// Runs the experiment. Progress goes to `log`, diagnostics to `err`.
/// Returns 0 on success, 1 when a property suite found violations and 2 on
/// configuration or input errors.
int run_experiment(const ExperimentConfig& config, std::ostream& log, std::ostream& err);

}  // namespace desta
