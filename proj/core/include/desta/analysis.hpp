#pragma once

// Independent oracles and numerical property checks for the solver, plus
// aggregation of learning curves across seeds.

#include "desta/envs.hpp"
#include "desta/game.hpp"
#include "desta/metrics.hpp"
#include "desta/rng.hpp"
#include "desta/solver.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace desta {

struct PropertyReport {
    std::string property;
    std::size_t trials = 0;
    std::size_t violations = 0;
    /// Largest (lhs - rhs) seen; <= 0 means every trial held with room to spare.
    double worst_margin = -std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;
    std::vector<std::string> notes;  // first few violations, for diagnosis

    bool passed() const { return violations == 0; }
    /// One trial. `margin` is measured minus allowed; `note` is kept on failure.
    void record(bool ok, double margin, const std::string& note);
    /// One inequality trial lhs <= rhs + slack.
    void observe(double lhs, double rhs, double slack, const std::string& what);
};

// ---------------------------------------------------------------- random games

/// How safe actions sit in the shared action table.
enum class SafeLayout {
    subset,    // each safe action reuses a distinct task row
    superset,  // safe action k < n_task reuses row k, the rest get own rows
    disjoint,  // every safe action has its own row
    any,       // drawn per game
};

struct RandomGameOptions {
    std::size_t min_states = 1;
    std::size_t max_states = 4;
    std::size_t min_task_actions = 1;
    std::size_t max_task_actions = 3;
    std::size_t min_safe_actions = 1;
    std::size_t max_safe_actions = 3;
    SafeLayout layout = SafeLayout::any;
    std::optional<double> gamma = 0.9;  // nullopt: uniform in [0, 0.99)
    double kappa_min = 0.05;
    double kappa_max = 1.0;
    double cost_max = 1.0;
};

/// Dirichlet-uniform transition rows, rewards U[-1, 1], deterministic costs
/// U[0, cost_max], kappa U[kappa_min, kappa_max].
TabularGame random_game(const RandomGameOptions& options, Rng& rng);

/// [s][task action]; one-hot rows when `deterministic`.
std::vector<double> random_task_policy(const TabularGame& game, Rng& rng, bool deterministic);

// ---------------------------------------------------------------- brute force

struct BruteForceLimits {
    std::size_t max_states = 6;
    std::size_t max_actions = 4;
    std::size_t max_candidates = 2'000'000;
};

struct BruteForceResult {
    JointPolicy policy;  // best safety response (fixed mode) or first equilibrium (joint mode)
    ValueTables values;
    std::size_t candidates = 0;           // policies actually evaluated
    std::size_t expected_candidates = 0;  // product of per-state choice counts
    /// Fixed mode: the best candidate is optimal in every state at once.
    bool dominant = false;
    /// Joint mode: every pure profile that is a mutual best response.
    std::vector<JointPolicy> equilibria;
    std::vector<ValueTables> equilibrium_values;
};

/// Exhaustive search over deterministic policies, each evaluated exactly
/// with evaluate_policies.
///
/// With a task policy: enumerates every (safe action, gate) per state and
/// returns the maximiser of v2. Per-state choices are ordered gate-on first
/// then by safe index, and the first maximiser found is kept, so ties resolve
/// to "intervene" and to the lowest safe action.
///
/// Without one: enumerates every (task action, safe action, gate) profile
/// and returns all pure mutual best responses.
///
/// Throws std::invalid_argument above the size limits.
BruteForceResult brute_force_solver(const TabularGame& game,
                                    const std::optional<std::vector<double>>& task_policy,
                                    const BruteForceLimits& limits = {});

struct DeviationReport {
    double task_gain = 0.0;    // best unilateral improvement of v1 at any state
    double safety_gain = 0.0;  // same for v2
    std::size_t deviations = 0;

    bool mutual_best_response(double tol) const { return task_gain <= tol && safety_gain <= tol; }
};

/// Tries every single-state deterministic deviation of each agent. By the
/// one-shot deviation principle for discounted problems this certifies a
/// mutual best response among deterministic policies.
DeviationReport deviation_check(const TabularGame& game, const JointPolicy& policy);

// ---------------------------------------------------------------- lemma checks

/// ||T v - T v'|| <= gamma ||v - v'|| on random games, modes and value pairs.
PropertyReport contraction_check(std::size_t n_trials, const RandomGameOptions& sizes,
                                 std::uint64_t seed);

/// ||P v - P v'|| <= ||v - v'|| on random stochastic and permutation kernels.
PropertyReport nonexpansive_check(std::size_t n_trials, std::uint64_t seed);

/// |max f - max g| <= max |f - g| on random tables.
PropertyReport max_lemma_check(std::size_t n_trials, std::uint64_t seed);

constexpr double kLemmaSlack = 1e-12;

// ---------------------------------------------------------------- solver checks

struct RolloutOptions {
    std::size_t horizon = 50;
    std::optional<StateId> start;  // nullopt: uniform over states
    std::vector<std::uint8_t> terminal;
    double tol_gate = 1e-6;
};

/// Rolls out a solved joint policy. Each intervention must happen at the
/// first visit of {s : |M v2(s) - v2(s)| <= tol_gate} after the previous one,
/// and no intervention may happen outside that set. Also records how many
/// interventions were seen (`notes` stays empty when nothing fails).
struct ObstacleRollouts {
    PropertyReport report;
    std::size_t interventions = 0;
    std::size_t steps = 0;
    std::vector<std::size_t> intervention_counts;  // per state
};

ObstacleRollouts obstacle_consistency_check(const TabularGame& game, const SolveReport& solved,
                                            std::size_t n_rollouts, std::uint64_t seed,
                                            const RolloutOptions& options = {});

/// Value iteration (fixed random task policy) against brute_force_solver on
/// random games: values within `value_tol`, gate exactly, safe action exactly
/// where the gate fires.
PropertyReport oracle_equivalence_check(std::size_t n_games, const RandomGameOptions& sizes,
                                        std::uint64_t seed, double value_tol = 1e-6);

/// solve_game on random games, then obstacle_consistency_check. The last
/// note gives the number of interventions the rollouts exercised.
PropertyReport obstacle_suite(std::size_t n_games, std::size_t n_rollouts,
                              const RandomGameOptions& sizes, std::uint64_t seed);

/// Two checks on the intervention cost:
///   kappa > L_max / (1 - gamma)  => gate == 0 after solve_game;
///   kappa = 0, safe set covers the task set => v2 >= never-intervene v2.
PropertyReport kappa_threshold_check(std::size_t n_games, const RandomGameOptions& sizes,
                                     std::uint64_t seed);

/// Monte-Carlo v1, v2 at `start` for a joint policy, as mean and standard error.
struct MonteCarloEstimate {
    double v1_mean = 0.0;
    double v1_se = 0.0;
    double v2_mean = 0.0;
    double v2_se = 0.0;
    std::size_t episodes = 0;
};

/// Rolls out `policy` (indexed by the environment's states) in the simulator,
/// discounting task reward and safety payoff (-cost, -cost - kappa when gated)
/// by `gamma`. The task policy is sampled; the environment bounds each episode.
MonteCarloEstimate monte_carlo_values(const Environment& env, const JointPolicy& policy,
                                      double kappa, double gamma, std::size_t episodes,
                                      std::uint64_t seed,
                                      SafetyObjective objective = SafetyObjective::cost);

// ---------------------------------------------------------------- aggregation

struct MeanCi {
    double mean = 0.0;
    double half_width = 0.0;  // 95% Student-t, 0 for a single seed
};

MeanCi mean_ci(const std::vector<double>& samples);

struct SummaryRow {
    std::size_t episode = 0;
    std::size_t seeds = 0;
    MeanCi episode_return;
    MeanCi safety_cost;
    MeanCi interventions;
    MeanCi safe_goal;
};

struct InterventionHistogram {
    std::vector<std::size_t> counts;  // per state
    std::size_t total = 0;
};

struct MetricsSummary {
    std::vector<SummaryRow> rows;  // one per episode index present in every log
    bool degenerate = false;       // single seed: CIs are zero by convention
    InterventionHistogram histogram;
};

MetricsSummary aggregate_metrics(const std::vector<MetricsLog>& logs, std::size_t n_states);

/// Per-seed averages over the last `window` episodes.
struct WindowStats {
    double safe_goal_rate = 0.0;
    double safety_cost = 0.0;
    double episode_return = 0.0;
    double interventions = 0.0;
};

WindowStats final_window(const MetricsLog& log, std::size_t window);

void write_summary_csv(std::ostream& out, const MetricsSummary& summary,
                       const std::string& header = {});

/// Columns: state,location,count. `env` maps states to grid cells.
void write_histogram_csv(std::ostream& out, const InterventionHistogram& histogram,
                         const Environment* env = nullptr);

}  // namespace desta
