#pragma once

// Tabular DESTA: three learners (task, safe, intervention gate) trained
// off-policy from one stream of shared triplets, plus two single-agent
// baselines (plain Q-learning and a Lagrangian-relaxed Q-learner).

#include "desta/envs.hpp"
#include "desta/metrics.hpp"
#include "desta/replay_buffer.hpp"
#include "desta/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace desta {

/// Linear decay from `start` to `end` over the first `decay_fraction` of the
/// episodes, constant afterwards.
struct ExplorationSchedule {
    double start = 1.0;
    double end = 0.05;
    double decay_fraction = 0.5;

    double at(std::size_t episode, std::size_t total_episodes) const;
};

struct LearnerConfig {
    std::size_t episodes = 2000;
    std::uint64_t seed = 0;
    double gamma = 0.99;
    double kappa = 0.5;
    /// Payoff the safety side maximises between interventions (-cost or task reward).
    SafetyObjective objective = SafetyObjective::cost;

    double alpha = 0.1;
    bool alpha_decay = true;  // alpha / sqrt(visits of the (s, a) pair)
    ExplorationSchedule task_epsilon;
    ExplorationSchedule gate_epsilon;

    std::size_t buffer_capacity = 100000;
    std::size_t batch_size = 64;
    std::size_t update_every = 4;

    // Lagrangian baseline: lambda <- max(0, lambda + dual_step * (J_cost - cost_limit)).
    double cost_limit = 0.0;
    double dual_step = 0.01;
    double lambda_init = 0.0;

    // Pins the safety side (safe action and gate per state); the learners
    // then only train the task table against that fixed intervention rule.
    std::optional<std::vector<SafeActionId>> frozen_safe;
    std::optional<std::vector<std::uint8_t>> frozen_gate;
};

struct LearnerState {
    std::size_t n_states = 0;
    std::size_t n_task_actions = 0;
    std::size_t n_safe_actions = 0;
    std::size_t n_shared_actions = 0;
    std::vector<std::size_t> safe_to_shared;
    std::vector<long> shared_to_safe;  // -1 when the row is not a safe action

    std::vector<double> q_task;  // [s][shared row]; only task rows are ever chosen
    std::vector<double> q_safe;  // [s][safe action]
    std::vector<double> q_int;   // [s][gate bit]
    std::vector<std::uint32_t> visits_task;
    std::vector<std::uint32_t> visits_safe;
    std::vector<std::uint32_t> visits_int;

    double alpha = 0.1;
    bool alpha_decay = true;
    double epsilon = 1.0;
    double gate_epsilon = 1.0;
    double gamma = 0.99;
    double kappa = 0.5;
    SafetyObjective objective = SafetyObjective::cost;
    std::uint64_t steps = 0;
    std::uint64_t updates = 0;
    std::uint64_t seed = 0;
    Rng rng;

    std::optional<std::vector<SafeActionId>> frozen_safe;
    std::optional<std::vector<std::uint8_t>> frozen_gate;

    static LearnerState create(const Environment& env, const LearnerConfig& config);

    double& task(std::size_t s, std::size_t a) { return q_task[s * n_shared_actions + a]; }
    double task(std::size_t s, std::size_t a) const { return q_task[s * n_shared_actions + a]; }
    double& safe(std::size_t s, std::size_t k) { return q_safe[s * n_safe_actions + k]; }
    double safe(std::size_t s, std::size_t k) const { return q_safe[s * n_safe_actions + k]; }
    double& gate(std::size_t s, std::size_t b) { return q_int[s * 2 + b]; }
    double gate(std::size_t s, std::size_t b) const { return q_int[s * 2 + b]; }

    /// Lowest-index argmax over task actions.
    std::size_t greedy_task(StateId s) const;
    SafeActionId greedy_safe(StateId s) const;
    /// 1 only if intervening is strictly better (ties go to 0).
    std::uint8_t greedy_gate(StateId s) const;
    /// Task agent's continuation value at s, aware of whether the gate fires there.
    double task_continuation(StateId s) const;
};

struct ActionChoice {
    std::uint8_t a_int = 0;
    std::size_t applied_action = 0;  // shared row
    std::size_t a_task = 0;          // task action (== its shared row)
    SafeActionId a_safe{0};
};

/// Epsilon-greedy task action, greedy safe action, epsilon-greedy gate. The
/// safe action consumes no randomness.
ActionChoice act(LearnerState& learner, StateId s);

/// Computes the three rewards for an environment step, counts the visit and
/// appends the sample.
TransitionSample record(ReplayBuffer& buffer, LearnerState& learner, StateId s,
                        const ActionChoice& choice, const StepOutcome& outcome);

/// One TD step per sample for each of the three tables.
void td_update(LearnerState& learner, std::span<const TransitionSample> batch);

using EpisodeCallback = std::function<bool(const EpisodeRecord&)>;

struct TrainingResult {
    LearnerState learner;
    MetricsLog log;
    std::vector<double> lambda_trace;  // per episode, Lagrangian baseline only
};

/// Full DESTA training loop. `on_episode` may return false to stop early; the
/// log then holds every finished episode.
TrainingResult desta_train(const Environment& env, const LearnerConfig& config,
                           const EpisodeCallback& on_episode = {});

/// Epsilon-greedy Q-learning on the task reward alone.
TrainingResult baseline_q(const Environment& env, const LearnerConfig& config,
                          const EpisodeCallback& on_episode = {});

/// Q-learning on r1 - lambda * cost with per-episode dual ascent on lambda.
TrainingResult baseline_lagrangian(const Environment& env, const LearnerConfig& config,
                                   const EpisodeCallback& on_episode = {});

/// Rolls out a trained DESTA learner without updating it. The task agent
/// explores with `task_epsilon`; safe action and gate are greedy.
MetricsLog evaluate_desta(const Environment& env, const LearnerState& learner,
                          std::size_t episodes, double task_epsilon, std::uint64_t seed);

/// Greedy rollouts of a single-agent baseline.
MetricsLog evaluate_single(const Environment& env, const LearnerState& learner,
                           std::size_t episodes, double task_epsilon, std::uint64_t seed);

}  // namespace desta
