#pragma once

// Tabular Markov game of interventions on one side.
//
// Two agents share one physical action table. The task agent owns the first
// `n_task_actions` rows; every safe action maps onto some row (its own row
// when the safe set is not a subset of the task set). At each step exactly one
// agent drives transition, reward and safety cost: the safety agent when its
// gate fires, the task agent otherwise.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace desta {

template <class Tag>
struct Index {
    std::size_t value = 0;

    constexpr Index() = default;
    constexpr explicit Index(std::size_t v) : value(v) {}
    friend constexpr auto operator<=>(const Index&, const Index&) = default;
};

using StateId = Index<struct StateTag>;
using TaskActionId = Index<struct TaskActionTag>;
using SafeActionId = Index<struct SafeActionTag>;

/// Bernoulli cost: `magnitude` with `probability`, else 0.
struct CostLottery {
    double probability = 1.0;
    double magnitude = 0.0;

    double expected() const { return probability * magnitude; }
};

/// What the safety agent maximises between interventions.
///   cost        : -L (safe exploration)
///   task_reward : R  (efficiency interpretation, common payoff)
enum class SafetyObjective { cost, task_reward };

struct TabularGame {
    std::size_t n_states = 0;
    std::size_t n_task_actions = 0;
    std::size_t n_safe_actions = 0;
    std::size_t n_shared_actions = 0;

    std::vector<std::size_t> safe_to_shared;  // [safe action] -> shared row
    std::vector<double> transition;           // [s][shared a][s']
    std::vector<double> reward;               // [s][shared a]
    std::vector<CostLottery> cost_lottery;    // [s][shared a]
    std::vector<double> safe_reward;          // [s][safe a]; empty => shared reward

    double kappa = 0.0;
    double gamma = 0.9;
    SafetyObjective objective = SafetyObjective::cost;

    /// Zeroed tables for the given shape. Task actions occupy rows
    /// [0, n_task); shared row count is max(n_task, max(safe_to_shared) + 1).
    static TabularGame allocate(std::size_t n_states, std::size_t n_task_actions,
                                std::vector<std::size_t> safe_to_shared);

    /// Safe actions on their own rows after the task rows.
    static std::vector<std::size_t> disjoint_safe_map(std::size_t n_task_actions,
                                                      std::size_t n_safe_actions);

    std::span<const double> row(std::size_t s, std::size_t a) const {
        return {transition.data() + (s * n_shared_actions + a) * n_states, n_states};
    }
    std::span<double> row(std::size_t s, std::size_t a) {
        return {transition.data() + (s * n_shared_actions + a) * n_states, n_states};
    }
    double& p(std::size_t s, std::size_t a, std::size_t next) {
        return transition[(s * n_shared_actions + a) * n_states + next];
    }
    double p(std::size_t s, std::size_t a, std::size_t next) const {
        return transition[(s * n_shared_actions + a) * n_states + next];
    }
    double& r(std::size_t s, std::size_t a) { return reward[s * n_shared_actions + a]; }
    double r(std::size_t s, std::size_t a) const { return reward[s * n_shared_actions + a]; }
    CostLottery& lottery(std::size_t s, std::size_t a) {
        return cost_lottery[s * n_shared_actions + a];
    }
    const CostLottery& lottery(std::size_t s, std::size_t a) const {
        return cost_lottery[s * n_shared_actions + a];
    }
    /// Expected one-step safety cost L(s, a).
    double cost(std::size_t s, std::size_t a) const { return lottery(s, a).expected(); }

    std::size_t shared_of(SafeActionId k) const { return safe_to_shared[k.value]; }

    /// Safe action whose row is `shared`, if any (lowest safe index wins).
    std::optional<SafeActionId> safe_of_shared(std::size_t shared) const;

    bool shared_reward() const { return safe_reward.empty(); }
};

struct ValidationIssue {
    std::string what;
    std::size_t state = 0;
    std::size_t action = 0;
    double value = 0.0;
};

using ValidationReport = std::vector<ValidationIssue>;

/// Empty iff every structural invariant of the game holds.
ValidationReport validate_game(const TabularGame& game);

std::string describe(const ValidationIssue& issue);

/// Stochastic task policy, deterministic safe policy and binary gate.
struct JointPolicy {
    std::vector<double> task;          // [s][task action], rows sum to 1
    std::vector<SafeActionId> safe;    // [s]
    std::vector<std::uint8_t> gate;    // [s] in {0, 1}

    static JointPolicy uniform(const TabularGame& game);
    static JointPolicy deterministic(const TabularGame& game,
                                     const std::vector<std::size_t>& task_actions,
                                     const std::vector<std::size_t>& safe_actions,
                                     const std::vector<std::uint8_t>& gate);

    double task_prob(std::size_t s, std::size_t a, std::size_t n_task) const {
        return task[s * n_task + a];
    }
    /// Index of the (first) action carrying all mass, if the row is one-hot.
    std::optional<std::size_t> task_action(std::size_t s, std::size_t n_task) const;
};

/// Empty iff the policy has the game's shape and satisfies its invariants.
ValidationReport validate_policy(const TabularGame& game, const JointPolicy& policy);

struct ValueTables {
    std::vector<double> v1;    // task agent, per state
    std::vector<double> v2;    // safety agent, per state
    std::vector<double> q2;    // [s][task action], non-intervention safety values
    std::vector<double> m_v2;  // intervention operator applied to v2
};

std::span<const double> effective_transition(const TabularGame& game, StateId s,
                                             TaskActionId a_task,
                                             std::optional<SafeActionId> intervention);

double effective_reward(const TabularGame& game, StateId s, TaskActionId a_task,
                        std::optional<SafeActionId> intervention);

/// Expected safety cost of the acting agent's action. Excludes kappa.
double effective_cost(const TabularGame& game, StateId s, TaskActionId a_task,
                      std::optional<SafeActionId> intervention);

/// Safety agent's one-step payoff when the task agent acts with shared row `a`.
double safety_step_reward(const TabularGame& game, std::size_t s, std::size_t a);

/// Safety agent's one-step payoff for intervening with safe action `k`,
/// including the intervention charge.
double intervention_step_reward(const TabularGame& game, std::size_t s, SafeActionId k);

/// Task agent's one-step reward when the safety agent applies `k`.
double task_reward_under_intervention(const TabularGame& game, std::size_t s, SafeActionId k);

/// sum_{s'} P(s'|s, a) v(s').
double expected_next(const TabularGame& game, std::size_t s, std::size_t a,
                     std::span<const double> v);

/// Upper bound on sup |v2| from the geometric series.
double safety_value_bound(const TabularGame& game);

/// Exact values of both agents for a joint policy. Fills q2 and m_v2 from v2.
ValueTables evaluate_policies(const TabularGame& game, const JointPolicy& policy);

/// Recomputes q2 and m_v2 from tables.v2.
void complete_safety_tables(const TabularGame& game, ValueTables& tables);

/// Sup-norm change of (v1, v2) after one more evaluation sweep.
double evaluation_residual(const TabularGame& game, const JointPolicy& policy,
                           const ValueTables& tables);

}  // namespace desta
