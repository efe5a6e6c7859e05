#include "desta/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace desta {

namespace {

constexpr double kArgmaxTie = 1e-12;
constexpr double kTaskTie = 1e-9;

struct Branches {
    double intervene = -std::numeric_limits<double>::infinity();
    SafeActionId safe_argmax{0};
    double follow = 0.0;          // non-intervention branch
    std::size_t task_argmax = 0;  // meaningful in maximise mode
};

double intervention_payoff(const TabularGame& game, std::size_t s, SafeActionId k,
                           RewardSource reward) {
    return reward == RewardSource::safety
               ? intervention_step_reward(game, s, k)
               : task_reward_under_intervention(game, s, k) - game.kappa;
}

double follow_payoff(const TabularGame& game, std::size_t s, std::size_t a, RewardSource reward) {
    return reward == RewardSource::safety ? safety_step_reward(game, s, a) : game.r(s, a);
}

Branches branches(const TabularGame& game, std::span<const double> v, const BackupMode& mode,
                  std::size_t s) {
    Branches out;
    for (std::size_t k = 0; k < game.n_safe_actions; ++k) {
        const SafeActionId id{k};
        const double value = intervention_payoff(game, s, id, mode.reward) +
                             game.gamma * expected_next(game, s, game.shared_of(id), v);
        if (value > out.intervene + kArgmaxTie) {
            out.intervene = value;
            out.safe_argmax = id;
        }
    }
    if (mode.kind == BackupMode::Kind::maximise) {
        out.follow = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            const double value = follow_payoff(game, s, a, mode.reward) +
                                 game.gamma * expected_next(game, s, a, v);
            if (value > out.follow + kArgmaxTie) {
                out.follow = value;
                out.task_argmax = a;
            }
        }
    } else {
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            const double w = mode.task_policy[s * game.n_task_actions + a];
            if (w == 0.0) {
                continue;
            }
            out.follow += w * (follow_payoff(game, s, a, mode.reward) +
                               game.gamma * expected_next(game, s, a, v));
        }
    }
    return out;
}

double sup_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(a[i] - b[i]));
    }
    return d;
}

void check_mode(const TabularGame& game, const BackupMode& mode) {
    if (mode.kind == BackupMode::Kind::fixed &&
        mode.task_policy.size() != game.n_states * game.n_task_actions) {
        throw std::invalid_argument("fixed backup mode needs a task policy for every state");
    }
}

std::vector<double> one_hot(const TabularGame& game, const std::vector<std::size_t>& actions) {
    std::vector<double> policy(game.n_states * game.n_task_actions, 0.0);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        policy[s * game.n_task_actions + actions[s]] = 1.0;
    }
    return policy;
}

}  // namespace

InterventionValue intervention_operator(const TabularGame& game, std::span<const double> v2,
                                        StateId s) {
    if (s.value >= game.n_states) {
        throw std::out_of_range("state out of range in intervention_operator");
    }
    if (v2.size() != game.n_states) {
        throw std::invalid_argument("value vector size does not match the game");
    }
    InterventionValue out{-std::numeric_limits<double>::infinity(), SafeActionId{0}};
    for (std::size_t k = 0; k < game.n_safe_actions; ++k) {
        const SafeActionId id{k};
        const double value = intervention_step_reward(game, s.value, id) +
                             game.gamma * expected_next(game, s.value, game.shared_of(id), v2);
        if (value > out.value + kArgmaxTie) {
            out = {value, id};
        }
    }
    return out;
}

std::vector<double> bellman_backup(const TabularGame& game, std::span<const double> v,
                                   const BackupMode& mode) {
    check_mode(game, mode);
    if (v.size() != game.n_states) {
        throw std::invalid_argument("value vector size does not match the game");
    }
    std::vector<double> out(game.n_states);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        const Branches b = branches(game, v, mode, s);
        out[s] = std::max(b.intervene, b.follow);
    }
    return out;
}

std::vector<SafeActionId> greedy_safe_policy(const TabularGame& game, std::span<const double> v2) {
    std::vector<SafeActionId> safe(game.n_states);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        safe[s] = intervention_operator(game, v2, StateId{s}).argmax;
    }
    return safe;
}

GateExtraction extract_gate(const TabularGame& game, const ValueTables& tables,
                            std::span<const double> task_policy, double tol_gate) {
    if (tables.m_v2.size() != game.n_states ||
        tables.q2.size() != game.n_states * game.n_task_actions) {
        throw std::invalid_argument("extract_gate needs completed q2 and m_v2 tables");
    }
    GateExtraction out;
    out.gate.assign(game.n_states, 0);
    out.stopping.assign(game.n_states, 0);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        double advantage = 0.0;
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            const double w = task_policy[s * game.n_task_actions + a];
            advantage += w * (tables.m_v2[s] - tables.q2[s * game.n_task_actions + a]);
        }
        out.gate[s] = advantage >= -tol_gate ? 1 : 0;
        out.stopping[s] = std::abs(tables.m_v2[s] - tables.v2[s]) <= tol_gate ? 1 : 0;
    }
    return out;
}

SolveReport value_iteration(const TabularGame& game, const BackupMode& mode, double tol,
                            std::size_t cap, double tol_gate) {
    if (!(tol > 0.0)) {
        throw std::invalid_argument("value_iteration needs tol > 0");
    }
    check_mode(game, mode);

    SolveReport report;
    std::vector<double> v(game.n_states, 0.0);
    for (std::size_t sweep = 1; sweep <= cap; ++sweep) {
        std::vector<double> next = bellman_backup(game, v, mode);
        const double residual = sup_distance(next, v);
        v = std::move(next);
        report.residuals.push_back(residual);
        report.sweeps = sweep;
        report.final_residual = residual;
        if (residual <= tol) {
            report.converged = true;
            break;
        }
    }

    // Policies attaining the backup at the final iterate.
    std::vector<double> task_policy = mode.task_policy;
    if (mode.kind == BackupMode::Kind::maximise) {
        task_policy.assign(game.n_states * game.n_task_actions, 0.0);
    }
    std::vector<SafeActionId> safe(game.n_states);
    std::vector<std::uint8_t> gate(game.n_states, 0);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        const Branches b = branches(game, v, mode, s);
        if (mode.kind == BackupMode::Kind::maximise) {
            task_policy[s * game.n_task_actions + b.task_argmax] = 1.0;
        }
        safe[s] = b.safe_argmax;
        gate[s] = b.intervene >= b.follow - tol_gate ? 1 : 0;
    }
    report.policy.task = std::move(task_policy);
    report.policy.safe = std::move(safe);
    report.policy.gate = std::move(gate);

    const ValueTables exact = evaluate_policies(game, report.policy);
    if (mode.reward == RewardSource::safety) {
        report.value_tables.v2 = v;
        report.value_tables.v1 = exact.v1;
    } else {
        report.value_tables.v1 = v;
        report.value_tables.v2 = exact.v2;
    }
    complete_safety_tables(game, report.value_tables);
    return report;
}

TaskResponse task_best_response(const TabularGame& game, const JointPolicy& safety,
                                const std::vector<std::size_t>* prior,
                                const SolveOptions& options) {
    const std::size_t n = game.n_states;
    if (prior != nullptr && prior->size() != n) {
        throw std::invalid_argument("prior task policy must have one action per state");
    }
    TaskResponse out;
    std::vector<double> v(n, 0.0);
    auto action_value = [&](std::size_t s, std::size_t a, const std::vector<double>& values) {
        return game.r(s, a) + game.gamma * expected_next(game, s, a, values);
    };
    for (std::size_t sweep = 1; sweep <= options.sweep_cap; ++sweep) {
        std::vector<double> next(n);
        for (std::size_t s = 0; s < n; ++s) {
            if (safety.gate[s] != 0) {
                const SafeActionId k = safety.safe[s];
                next[s] = task_reward_under_intervention(game, s, k) +
                          game.gamma * expected_next(game, s, game.shared_of(k), v);
                continue;
            }
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < game.n_task_actions; ++a) {
                best = std::max(best, action_value(s, a, v));
            }
            next[s] = best;
        }
        const double residual = sup_distance(next, v);
        v = std::move(next);
        out.sweeps = sweep;
        if (residual <= options.tol) {
            out.converged = true;
            break;
        }
    }

    out.actions.assign(n, 0);
    // At gated states the action is overridden; the task records the action it
    // would take if it were not, so the safety agent prices the real threat.
    for (std::size_t s = 0; s < n; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            best = std::max(best, action_value(s, a, v));
        }
        if (prior != nullptr && action_value(s, (*prior)[s], v) >= best - kTaskTie) {
            out.actions[s] = (*prior)[s];
            continue;
        }
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            if (action_value(s, a, v) >= best - kTaskTie) {
                out.actions[s] = a;
                break;
            }
        }
    }
    out.v1 = std::move(v);
    return out;
}

SolveReport solve_game(const TabularGame& game, const SolveOptions& options) {
    if (const auto issues = validate_game(game); !issues.empty()) {
        throw std::invalid_argument("solve_game: invalid game: " + describe(issues.front()));
    }

    JointPolicy safety = JointPolicy::uniform(game);
    std::optional<std::vector<std::size_t>> task;
    SolveReport report;
    bool inner_converged = true;

    for (std::size_t cycle = 1; cycle <= options.br_cap; ++cycle) {
        const TaskResponse response =
            task_best_response(game, safety, task ? &*task : nullptr, options);
        std::vector<double> task_policy = one_hot(game, response.actions);
        SolveReport inner = value_iteration(game, BackupMode::fixed(task_policy), options.tol,
                                            options.sweep_cap, options.tol_gate);

        const bool unchanged = task.has_value() && response.actions == *task &&
                               inner.policy.safe == safety.safe &&
                               inner.policy.gate == safety.gate;
        inner_converged = response.converged && inner.converged;

        task = response.actions;
        safety.task = std::move(task_policy);
        safety.safe = inner.policy.safe;
        safety.gate = inner.policy.gate;

        report.br_cycles = cycle;
        report.sweeps += inner.sweeps;
        report.final_residual = inner.final_residual;
        report.residuals = std::move(inner.residuals);
        if (unchanged) {
            report.converged = inner_converged;
            break;
        }
    }

    report.policy = std::move(safety);
    report.value_tables = evaluate_policies(game, report.policy);
    return report;
}

}  // namespace desta
