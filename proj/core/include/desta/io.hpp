#pragma once

// JSON documents for games, environment specs, solver reports, learner
// snapshots and property reports.
//
// Game document keys:
//   states, task_actions, safe_actions  integer counts
//   safe_action_map    optional [safe action] -> shared row; defaults to the
//                      first task rows when safe_actions <= task_actions,
//                      otherwise to separate rows after the task rows
//   gamma, kappa       numbers
//   transition         [s][shared row] -> either a dense list of n_states
//                      probabilities or an object {"next state": probability}
//   reward             [s][shared row]
//   cost_lottery       [s][shared row] -> a number (deterministic cost) or
//                      {"probability": p, "magnitude": m}
//   safe_reward        optional [s][safe action]
//   safety_objective   optional "cost" (default) or "task_reward"

#include "desta/analysis.hpp"
#include "desta/envs.hpp"
#include "desta/game.hpp"
#include "desta/learners.hpp"
#include "desta/solver.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace desta {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

std::string game_to_json(const TabularGame& game);
/// Parses and validates; throws FormatError naming the first problem.
TabularGame game_from_json(const std::string& text);
TabularGame load_game(const std::filesystem::path& path);
void save_game(const std::filesystem::path& path, const TabularGame& game);

std::string env_spec_to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const std::string& text);

/// Values, policies, gate, stopping set and residual trace.
std::string solve_report_to_json(const TabularGame& game, const SolveReport& report,
                                 double tol_gate = SolveOptions{}.tol_gate);

/// Tables, visit counts, schedule state and the exact random stream position.
std::string learner_snapshot_to_json(const LearnerState& learner);
LearnerState learner_snapshot_from_json(const std::string& text);

std::string property_report_to_json(const PropertyReport& report);

std::string to_string(SafetyObjective objective);
SafetyObjective safety_objective_from_string(const std::string& text);

}  // namespace desta
