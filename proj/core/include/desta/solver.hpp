#pragma once

#include "desta/game.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace desta {

struct SolveOptions {
    double tol = 1e-9;            // sup-norm residual for value iteration
    std::size_t sweep_cap = 10000;
    std::size_t br_cap = 100;     // best-response rounds in solve_game
    double tol_gate = 1e-6;       // obstacle membership slack
};

/// Which payoff the non-intervention branch of the backup uses.
enum class RewardSource { safety, task };

/// `maximise`: the non-intervention branch takes max over task actions.
/// `fixed`: it takes the expectation under a given task policy (the safety
/// agent's response to a fixed task agent).
struct BackupMode {
    enum class Kind { maximise, fixed };

    Kind kind = Kind::fixed;
    RewardSource reward = RewardSource::safety;
    std::vector<double> task_policy;  // [s][task action]; used when kind == fixed

    static BackupMode maximise(RewardSource reward = RewardSource::safety) {
        return {Kind::maximise, reward, {}};
    }
    static BackupMode fixed(std::vector<double> task_policy) {
        return {Kind::fixed, RewardSource::safety, std::move(task_policy)};
    }
};

struct SolveReport {
    ValueTables value_tables;
    JointPolicy policy;
    std::size_t sweeps = 0;
    double final_residual = 0.0;
    std::vector<double> residuals;  // one per sweep
    std::size_t br_cycles = 0;
    bool converged = false;
};

struct InterventionValue {
    double value = 0.0;
    SafeActionId argmax{0};
};

/// Best value of intervening now: max over safe actions of
/// payoff(s, a') - kappa + gamma * sum P(s'|s, a') v2(s'). Ties go to the
/// lowest safe action index.
InterventionValue intervention_operator(const TabularGame& game, std::span<const double> v2,
                                        StateId s);

/// One synchronous sweep of T v(s) = max{ M v(s), non-intervention branch }.
std::vector<double> bellman_backup(const TabularGame& game, std::span<const double> v,
                                   const BackupMode& mode);

/// Iterates bellman_backup from v = 0 until the sup-norm residual is <= tol or
/// `cap` sweeps have run. Non-convergence is reported, never thrown.
SolveReport value_iteration(const TabularGame& game, const BackupMode& mode, double tol,
                            std::size_t cap, double tol_gate = SolveOptions{}.tol_gate);

struct GateExtraction {
    std::vector<std::uint8_t> gate;      // H(E_a[M v2 - Q2(s, a)]) with H(0) = 1
    std::vector<std::uint8_t> stopping;  // |M v2(s) - v2(s)| <= tol_gate
};

/// Requires `tables.q2` and `tables.m_v2` (see complete_safety_tables).
GateExtraction extract_gate(const TabularGame& game, const ValueTables& tables,
                            std::span<const double> task_policy, double tol_gate);

/// Deterministic safe policy that attains the intervention operator in each state.
std::vector<SafeActionId> greedy_safe_policy(const TabularGame& game, std::span<const double> v2);

struct TaskResponse {
    std::vector<std::size_t> actions;  // per state
    std::vector<double> v1;
    std::size_t sweeps = 0;
    bool converged = false;
};

/// Task agent's best response when the safety agent's (safe, gate) is fixed.
/// Every state, gated or not, gets the greedy action against the response
/// values; at gated states this is what the task would do if not overridden.
/// The prior action is kept unless another is better by more than 1e-9.
TaskResponse task_best_response(const TabularGame& game, const JointPolicy& safety,
                                const std::vector<std::size_t>* prior,
                                const SolveOptions& options = {});

/// Alternates task and safety best responses until neither policy changes.
SolveReport solve_game(const TabularGame& game, const SolveOptions& options = {});

}  // namespace desta
