#include "desta/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace desta {

namespace {

enum class Stream : std::uint64_t { learner = 1, env = 2, replay = 3, eval_learner = 11, eval_env = 12 };

std::uint64_t stream_seed(std::uint64_t seed, Stream stream) {
    return Rng::derive_seed(seed, static_cast<std::uint64_t>(stream));
}

double step_size(const LearnerState& learner, std::uint32_t visits) {
    if (!learner.alpha_decay) {
        return learner.alpha;
    }
    return learner.alpha / std::sqrt(static_cast<double>(std::max<std::uint32_t>(1, visits)));
}

double max_task(const LearnerState& learner, std::size_t s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < learner.n_task_actions; ++a) {
        best = std::max(best, learner.task(s, a));
    }
    return best;
}

double max_safe(const LearnerState& learner, std::size_t s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < learner.n_safe_actions; ++k) {
        best = std::max(best, learner.safe(s, k));
    }
    return best;
}

// Safety payoff of a step before any intervention charge.
double safety_base(SafetyObjective objective, double reward, double cost) {
    return objective == SafetyObjective::cost ? -cost : reward;
}

void check_config(const LearnerConfig& config) {
    if (config.episodes == 0) {
        throw std::invalid_argument("episode budget must be positive");
    }
    if (!(config.alpha > 0.0 && config.alpha <= 1.0)) {
        throw std::invalid_argument("alpha must lie in (0, 1]");
    }
    if (!(config.gamma >= 0.0 && config.gamma < 1.0)) {
        throw std::invalid_argument("gamma must lie in [0, 1)");
    }
    if (!(config.kappa >= 0.0)) {
        throw std::invalid_argument("kappa must be non-negative");
    }
    if (config.batch_size == 0 || config.update_every == 0) {
        throw std::invalid_argument("batch size and update period must be positive");
    }
    for (const auto* schedule : {&config.task_epsilon, &config.gate_epsilon}) {
        if (!(schedule->start >= 0.0 && schedule->start <= 1.0 && schedule->end >= 0.0 &&
              schedule->end <= 1.0)) {
            throw std::invalid_argument("exploration rates must lie in [0, 1]");
        }
    }
}

std::size_t explore_or(LearnerState& learner, double epsilon, std::size_t choices,
                       std::size_t greedy) {
    if (learner.rng.uniform() < epsilon) {
        return learner.rng.index(choices);
    }
    return greedy;
}

ActionChoice act_single(LearnerState& learner, StateId s) {
    ActionChoice choice;
    choice.a_task = explore_or(learner, learner.epsilon, learner.n_task_actions,
                               learner.greedy_task(s));
    choice.applied_action = choice.a_task;
    return choice;
}

void td_update_single(LearnerState& learner, std::span<const TransitionSample> batch,
                      double lambda) {
    for (const TransitionSample& x : batch) {
        const std::size_t s = x.s.value;
        const double continuation = x.done ? 0.0 : learner.gamma * max_task(learner, x.s_next.value);
        double& q = learner.task(s, x.applied_action);
        const double alpha =
            step_size(learner, learner.visits_task[s * learner.n_shared_actions + x.applied_action]);
        q += alpha * (x.r1 - lambda * x.cost + continuation - q);
        ++learner.updates;
    }
}

enum class SingleMode { plain, lagrangian };

TrainingResult train_single(const Environment& env, const LearnerConfig& config, SingleMode mode,
                            const EpisodeCallback& on_episode) {
    check_config(config);
    TrainingResult result{LearnerState::create(env, config), {}, {}};
    LearnerState& learner = result.learner;
    ReplayBuffer buffer(config.buffer_capacity);
    Rng env_rng(stream_seed(config.seed, Stream::env));
    Rng replay_rng(stream_seed(config.seed, Stream::replay));
    double lambda = mode == SingleMode::lagrangian ? config.lambda_init : 0.0;
    result.log.has_lambda = mode == SingleMode::lagrangian;

    for (std::size_t episode = 0; episode < config.episodes; ++episode) {
        learner.epsilon = config.task_epsilon.at(episode, config.episodes);
        EpisodeRecord record_row;
        record_row.episode = episode;
        record_row.epsilon = learner.epsilon;
        record_row.lambda = lambda;

        EpisodeState state = env.reset(env_rng);
        StepOutcome outcome;
        while (!state.done) {
            const StateId s = state.state;
            const ActionChoice choice = act_single(learner, s);
            outcome = env.step(state, choice.applied_action, env_rng);
            record(buffer, learner, s, choice, outcome);
            record_row.episode_return += outcome.reward;
            record_row.safety_cost += outcome.cost_sample;
            if (learner.steps % config.update_every == 0 && buffer.size() >= config.batch_size) {
                const auto batch = buffer.sample(config.batch_size, replay_rng);
                td_update_single(learner, batch, lambda);
            }
        }
        record_row.safe_goal = outcome.terminal && env.is_safe_goal(state.state);
        result.log.episodes.push_back(record_row);
        result.log.intervention_states.emplace_back();
        if (mode == SingleMode::lagrangian) {
            result.lambda_trace.push_back(lambda);
            lambda = std::max(0.0, lambda + config.dual_step *
                                                (record_row.safety_cost - config.cost_limit));
        }
        if (on_episode && !on_episode(record_row)) {
            break;
        }
    }
    return result;
}

}  // namespace

double ExplorationSchedule::at(std::size_t episode, std::size_t total_episodes) const {
    const double horizon = decay_fraction * static_cast<double>(total_episodes);
    if (horizon <= 0.0) {
        return end;
    }
    const double t = std::min(1.0, static_cast<double>(episode) / horizon);
    return start + (end - start) * t;
}

LearnerState LearnerState::create(const Environment& env, const LearnerConfig& config) {
    LearnerState learner;
    learner.n_states = env.n_states();
    learner.n_task_actions = env.n_task_actions();
    learner.n_safe_actions = env.n_safe_actions();
    learner.n_shared_actions = env.n_shared_actions();
    learner.safe_to_shared = env.safe_to_shared();
    learner.shared_to_safe.assign(learner.n_shared_actions, -1);
    for (std::size_t k = learner.n_safe_actions; k-- > 0;) {
        learner.shared_to_safe[learner.safe_to_shared[k]] = static_cast<long>(k);
    }
    learner.q_task.assign(learner.n_states * learner.n_shared_actions, 0.0);
    learner.q_safe.assign(learner.n_states * learner.n_safe_actions, 0.0);
    learner.q_int.assign(learner.n_states * 2, 0.0);
    learner.visits_task.assign(learner.q_task.size(), 0);
    learner.visits_safe.assign(learner.q_safe.size(), 0);
    learner.visits_int.assign(learner.q_int.size(), 0);
    learner.alpha = config.alpha;
    learner.alpha_decay = config.alpha_decay;
    learner.epsilon = config.task_epsilon.start;
    learner.gate_epsilon = config.gate_epsilon.start;
    learner.gamma = config.gamma;
    learner.kappa = config.kappa;
    learner.objective = config.objective;
    learner.seed = config.seed;
    learner.rng = Rng(stream_seed(config.seed, Stream::learner));
    learner.frozen_safe = config.frozen_safe;
    learner.frozen_gate = config.frozen_gate;
    if ((learner.frozen_safe && learner.frozen_safe->size() != learner.n_states) ||
        (learner.frozen_gate && learner.frozen_gate->size() != learner.n_states)) {
        throw std::invalid_argument("frozen safety policy must cover every state");
    }
    return learner;
}

std::size_t LearnerState::greedy_task(StateId s) const {
    std::size_t best = 0;
    for (std::size_t a = 1; a < n_task_actions; ++a) {
        if (task(s.value, a) > task(s.value, best)) {
            best = a;
        }
    }
    return best;
}

SafeActionId LearnerState::greedy_safe(StateId s) const {
    if (frozen_safe) {
        return (*frozen_safe)[s.value];
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < n_safe_actions; ++k) {
        if (safe(s.value, k) > safe(s.value, best)) {
            best = k;
        }
    }
    return SafeActionId{best};
}

std::uint8_t LearnerState::greedy_gate(StateId s) const {
    if (frozen_gate) {
        return (*frozen_gate)[s.value];
    }
    return gate(s.value, 1) > gate(s.value, 0) ? 1 : 0;
}

double LearnerState::task_continuation(StateId s) const {
    if (greedy_gate(s) != 0) {
        return task(s.value, safe_to_shared[greedy_safe(s).value]);
    }
    return max_task(*this, s.value);
}

ActionChoice act(LearnerState& learner, StateId s) {
    if (s.value >= learner.n_states) {
        throw std::out_of_range("state out of range in act");
    }
    ActionChoice choice;
    choice.a_task = explore_or(learner, learner.epsilon, learner.n_task_actions,
                               learner.greedy_task(s));
    choice.a_safe = learner.greedy_safe(s);
    if (learner.frozen_gate) {
        choice.a_int = (*learner.frozen_gate)[s.value];
    } else {
        choice.a_int = static_cast<std::uint8_t>(
            explore_or(learner, learner.gate_epsilon, 2, learner.greedy_gate(s)));
    }
    choice.applied_action =
        choice.a_int != 0 ? learner.safe_to_shared[choice.a_safe.value] : choice.a_task;
    return choice;
}

TransitionSample record(ReplayBuffer& buffer, LearnerState& learner, StateId s,
                        const ActionChoice& choice, const StepOutcome& outcome) {
    TransitionSample sample;
    sample.s = s;
    sample.applied_action = choice.applied_action;
    sample.a_int = choice.a_int;
    sample.s_next = outcome.next_state;
    sample.cost = outcome.cost_sample;
    sample.r1 = outcome.reward;
    const double base = safety_base(learner.objective, outcome.reward, outcome.cost_sample);
    const double charge = choice.a_int != 0 ? learner.kappa : 0.0;
    sample.r2 = base - charge;
    sample.r_int = base - learner.kappa * choice.a_int;
    sample.done = outcome.terminal;

    ++learner.visits_task[s.value * learner.n_shared_actions + choice.applied_action];
    if (const long k = learner.shared_to_safe[choice.applied_action]; k >= 0) {
        ++learner.visits_safe[s.value * learner.n_safe_actions + static_cast<std::size_t>(k)];
    }
    ++learner.visits_int[s.value * 2 + choice.a_int];
    ++learner.steps;
    buffer.push(sample);
    return sample;
}

void td_update(LearnerState& learner, std::span<const TransitionSample> batch) {
    for (const TransitionSample& x : batch) {
        const std::size_t s = x.s.value;
        const std::size_t next = x.s_next.value;
        const double discount = x.done ? 0.0 : learner.gamma;

        // Task table: continuation follows the gate at s'.
        {
            const std::size_t cell = s * learner.n_shared_actions + x.applied_action;
            const double target = x.r1 + discount * learner.task_continuation(x.s_next);
            learner.q_task[cell] +=
                step_size(learner, learner.visits_task[cell]) * (target - learner.q_task[cell]);
        }
        // Safe table: every triplet whose action is a safe action is read as
        // an intervention with that action, so it pays kappa.
        if (const long k = learner.shared_to_safe[x.applied_action]; k >= 0) {
            const std::size_t cell = s * learner.n_safe_actions + static_cast<std::size_t>(k);
            const double target = safety_base(learner.objective, x.r1, x.cost) - learner.kappa +
                                  discount * max_safe(learner, next);
            learner.q_safe[cell] +=
                step_size(learner, learner.visits_safe[cell]) * (target - learner.q_safe[cell]);
        }
        // Gate table.
        {
            const std::size_t cell = s * 2 + x.a_int;
            const double target =
                x.r_int + discount * std::max(learner.gate(next, 0), learner.gate(next, 1));
            learner.q_int[cell] +=
                step_size(learner, learner.visits_int[cell]) * (target - learner.q_int[cell]);
        }
        ++learner.updates;
    }
}

TrainingResult desta_train(const Environment& env, const LearnerConfig& config,
                           const EpisodeCallback& on_episode) {
    check_config(config);
    TrainingResult result{LearnerState::create(env, config), {}, {}};
    LearnerState& learner = result.learner;
    ReplayBuffer buffer(config.buffer_capacity);
    Rng env_rng(stream_seed(config.seed, Stream::env));
    Rng replay_rng(stream_seed(config.seed, Stream::replay));

    for (std::size_t episode = 0; episode < config.episodes; ++episode) {
        learner.epsilon = config.task_epsilon.at(episode, config.episodes);
        learner.gate_epsilon = config.gate_epsilon.at(episode, config.episodes);
        EpisodeRecord row;
        row.episode = episode;
        row.epsilon = learner.epsilon;
        std::vector<StateId> gated;

        EpisodeState state = env.reset(env_rng);
        StepOutcome outcome;
        while (!state.done) {
            const StateId s = state.state;
            const ActionChoice choice = act(learner, s);
            outcome = env.step(state, choice.applied_action, env_rng);
            record(buffer, learner, s, choice, outcome);
            row.episode_return += outcome.reward;
            row.safety_cost += outcome.cost_sample;
            if (choice.a_int != 0) {
                ++row.interventions;
                gated.push_back(s);
            }
            if (learner.steps % config.update_every == 0 && buffer.size() >= config.batch_size) {
                const auto batch = buffer.sample(config.batch_size, replay_rng);
                td_update(learner, batch);
            }
        }
        row.safe_goal = outcome.terminal && env.is_safe_goal(state.state);
        result.log.episodes.push_back(row);
        result.log.intervention_states.push_back(std::move(gated));
        if (on_episode && !on_episode(row)) {
            break;
        }
    }
    return result;
}

TrainingResult baseline_q(const Environment& env, const LearnerConfig& config,
                          const EpisodeCallback& on_episode) {
    return train_single(env, config, SingleMode::plain, on_episode);
}

TrainingResult baseline_lagrangian(const Environment& env, const LearnerConfig& config,
                                   const EpisodeCallback& on_episode) {
    if (!(config.cost_limit >= 0.0)) {
        throw std::invalid_argument("cost limit must be non-negative");
    }
    if (!(config.dual_step >= 0.0)) {
        throw std::invalid_argument("dual step must be non-negative");
    }
    return train_single(env, config, SingleMode::lagrangian, on_episode);
}

namespace {

template <class Choose>
MetricsLog rollout(const Environment& env, LearnerState learner, std::size_t episodes,
                   double task_epsilon, std::uint64_t seed, Choose choose) {
    learner.rng = Rng(stream_seed(seed, Stream::eval_learner));
    learner.epsilon = task_epsilon;
    learner.gate_epsilon = 0.0;
    Rng env_rng(stream_seed(seed, Stream::eval_env));
    MetricsLog log;
    for (std::size_t episode = 0; episode < episodes; ++episode) {
        EpisodeRecord row;
        row.episode = episode;
        row.epsilon = task_epsilon;
        std::vector<StateId> gated;
        EpisodeState state = env.reset(env_rng);
        StepOutcome outcome;
        while (!state.done) {
            const StateId s = state.state;
            const ActionChoice choice = choose(learner, s);
            outcome = env.step(state, choice.applied_action, env_rng);
            row.episode_return += outcome.reward;
            row.safety_cost += outcome.cost_sample;
            if (choice.a_int != 0) {
                ++row.interventions;
                gated.push_back(s);
            }
        }
        row.safe_goal = outcome.terminal && env.is_safe_goal(state.state);
        log.episodes.push_back(row);
        log.intervention_states.push_back(std::move(gated));
    }
    return log;
}

}  // namespace

MetricsLog evaluate_desta(const Environment& env, const LearnerState& learner,
                          std::size_t episodes, double task_epsilon, std::uint64_t seed) {
    return rollout(env, learner, episodes, task_epsilon, seed,
                   [](LearnerState& l, StateId s) { return act(l, s); });
}

MetricsLog evaluate_single(const Environment& env, const LearnerState& learner,
                           std::size_t episodes, double task_epsilon, std::uint64_t seed) {
    return rollout(env, learner, episodes, task_epsilon, seed,
                   [](LearnerState& l, StateId s) { return act_single(l, s); });
}

}  // namespace desta
