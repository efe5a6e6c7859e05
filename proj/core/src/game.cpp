#include "desta/game.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace desta {

namespace {

constexpr double kRowSumTolerance = 1e-12;

void check_state(const TabularGame& game, StateId s) {
    if (s.value >= game.n_states) {
        throw std::out_of_range("state " + std::to_string(s.value) + " out of range (" +
                                std::to_string(game.n_states) + " states)");
    }
}

void check_task_action(const TabularGame& game, TaskActionId a) {
    if (a.value >= game.n_task_actions) {
        throw std::out_of_range("task action " + std::to_string(a.value) + " out of range (" +
                                std::to_string(game.n_task_actions) + " task actions)");
    }
}

void check_safe_action(const TabularGame& game, SafeActionId k) {
    if (k.value >= game.n_safe_actions) {
        throw std::out_of_range("safe action " + std::to_string(k.value) + " out of range (" +
                                std::to_string(game.n_safe_actions) + " safe actions)");
    }
}

// Induced chain of a joint policy: one-step kernel and payoffs of both agents.
struct InducedChain {
    Eigen::SparseMatrix<double> kernel;
    Eigen::VectorXd task_payoff;
    Eigen::VectorXd safety_payoff;
};

InducedChain induce_chain(const TabularGame& game, const JointPolicy& policy) {
    const std::size_t n = game.n_states;
    const auto dim = static_cast<Eigen::Index>(n);
    InducedChain chain{Eigen::SparseMatrix<double>(dim, dim), Eigen::VectorXd::Zero(dim),
                       Eigen::VectorXd::Zero(dim)};
    std::vector<Eigen::Triplet<double>> entries;
    auto add_row = [&](std::size_t s, std::span<const double> row, double weight) {
        for (std::size_t next = 0; next < n; ++next) {
            if (row[next] != 0.0) {
                entries.emplace_back(static_cast<Eigen::Index>(s),
                                     static_cast<Eigen::Index>(next), weight * row[next]);
            }
        }
    };
    for (std::size_t s = 0; s < n; ++s) {
        if (policy.gate[s] != 0) {
            const SafeActionId k = policy.safe[s];
            add_row(s, game.row(s, game.shared_of(k)), 1.0);
            chain.task_payoff[static_cast<Eigen::Index>(s)] =
                task_reward_under_intervention(game, s, k);
            chain.safety_payoff[static_cast<Eigen::Index>(s)] = intervention_step_reward(game, s, k);
            continue;
        }
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            const double w = policy.task_prob(s, a, game.n_task_actions);
            if (w == 0.0) {
                continue;
            }
            add_row(s, game.row(s, a), w);
            chain.task_payoff[static_cast<Eigen::Index>(s)] += w * game.r(s, a);
            chain.safety_payoff[static_cast<Eigen::Index>(s)] += w * safety_step_reward(game, s, a);
        }
    }
    // Duplicate (s, s') entries from mixed task actions are summed.
    chain.kernel.setFromTriplets(entries.begin(), entries.end());
    return chain;
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

TabularGame TabularGame::allocate(std::size_t n_states, std::size_t n_task_actions,
                                  std::vector<std::size_t> safe_to_shared) {
    TabularGame game;
    game.n_states = n_states;
    game.n_task_actions = n_task_actions;
    game.n_safe_actions = safe_to_shared.size();
    std::size_t rows = n_task_actions;
    for (const auto shared : safe_to_shared) {
        rows = std::max(rows, shared + 1);
    }
    game.n_shared_actions = rows;
    game.safe_to_shared = std::move(safe_to_shared);
    game.transition.assign(n_states * rows * n_states, 0.0);
    game.reward.assign(n_states * rows, 0.0);
    game.cost_lottery.assign(n_states * rows, CostLottery{1.0, 0.0});
    return game;
}

std::vector<std::size_t> TabularGame::disjoint_safe_map(std::size_t n_task_actions,
                                                        std::size_t n_safe_actions) {
    std::vector<std::size_t> map(n_safe_actions);
    for (std::size_t k = 0; k < n_safe_actions; ++k) {
        map[k] = n_task_actions + k;
    }
    return map;
}

std::optional<SafeActionId> TabularGame::safe_of_shared(std::size_t shared) const {
    for (std::size_t k = 0; k < n_safe_actions; ++k) {
        if (safe_to_shared[k] == shared) {
            return SafeActionId{k};
        }
    }
    return std::nullopt;
}

ValidationReport validate_game(const TabularGame& game) {
    ValidationReport report;
    auto issue = [&report](std::string what, std::size_t s, std::size_t a, double value) {
        report.push_back({std::move(what), s, a, value});
    };

    if (game.n_states == 0) {
        issue("no states", 0, 0, 0.0);
    }
    if (game.n_task_actions == 0) {
        issue("no task actions", 0, 0, 0.0);
    }
    if (game.n_safe_actions == 0) {
        issue("no safe actions", 0, 0, 0.0);
    }
    if (!(game.gamma >= 0.0 && game.gamma < 1.0)) {
        issue("gamma outside [0, 1)", 0, 0, game.gamma);
    }
    if (!(game.kappa >= 0.0) || !std::isfinite(game.kappa)) {
        issue("kappa negative or non-finite", 0, 0, game.kappa);
    }
    if (game.safe_to_shared.size() != game.n_safe_actions) {
        issue("safe action map size mismatch", 0, 0,
              static_cast<double>(game.safe_to_shared.size()));
        return report;
    }
    if (game.n_shared_actions < game.n_task_actions) {
        issue("fewer shared rows than task actions", 0, 0,
              static_cast<double>(game.n_shared_actions));
        return report;
    }
    for (std::size_t k = 0; k < game.n_safe_actions; ++k) {
        if (game.safe_to_shared[k] >= game.n_shared_actions) {
            issue("safe action maps outside the shared table", 0, k,
                  static_cast<double>(game.safe_to_shared[k]));
        }
    }

    const std::size_t n = game.n_states;
    const std::size_t rows = game.n_shared_actions;
    if (game.transition.size() != n * rows * n) {
        issue("transition table size mismatch", 0, 0, static_cast<double>(game.transition.size()));
        return report;
    }
    if (game.reward.size() != n * rows) {
        issue("reward table size mismatch", 0, 0, static_cast<double>(game.reward.size()));
        return report;
    }
    if (game.cost_lottery.size() != n * rows) {
        issue("cost table size mismatch", 0, 0, static_cast<double>(game.cost_lottery.size()));
        return report;
    }
    if (!game.safe_reward.empty() && game.safe_reward.size() != n * game.n_safe_actions) {
        issue("safe reward table size mismatch", 0, 0,
              static_cast<double>(game.safe_reward.size()));
        return report;
    }

    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < rows; ++a) {
            double sum = 0.0;
            for (const double prob : game.row(s, a)) {
                if (!(prob >= 0.0) || !std::isfinite(prob)) {
                    issue("negative or non-finite transition probability", s, a, prob);
                }
                sum += prob;
            }
            if (std::abs(sum - 1.0) > kRowSumTolerance) {
                issue("transition row does not sum to 1", s, a, sum);
            }
            if (!std::isfinite(game.r(s, a))) {
                issue("non-finite reward", s, a, game.r(s, a));
            }
            const CostLottery& lottery = game.lottery(s, a);
            if (!(lottery.probability >= 0.0 && lottery.probability <= 1.0)) {
                issue("cost probability outside [0, 1]", s, a, lottery.probability);
            }
            if (!(lottery.magnitude >= 0.0) || !std::isfinite(lottery.magnitude)) {
                issue("negative or non-finite safety cost", s, a, lottery.magnitude);
            }
        }
    }
    for (std::size_t i = 0; i < game.safe_reward.size(); ++i) {
        if (!std::isfinite(game.safe_reward[i])) {
            issue("non-finite safe reward", i / game.n_safe_actions, i % game.n_safe_actions,
                  game.safe_reward[i]);
        }
    }
    return report;
}

std::string describe(const ValidationIssue& issue) {
    std::ostringstream out;
    out << issue.what << " (state " << issue.state << ", action " << issue.action
        << ", value " << issue.value << ")";
    return out.str();
}

JointPolicy JointPolicy::uniform(const TabularGame& game) {
    JointPolicy policy;
    policy.task.assign(game.n_states * game.n_task_actions,
                       1.0 / static_cast<double>(game.n_task_actions));
    policy.safe.assign(game.n_states, SafeActionId{0});
    policy.gate.assign(game.n_states, 0);
    return policy;
}

JointPolicy JointPolicy::deterministic(const TabularGame& game,
                                       const std::vector<std::size_t>& task_actions,
                                       const std::vector<std::size_t>& safe_actions,
                                       const std::vector<std::uint8_t>& gate) {
    if (task_actions.size() != game.n_states || safe_actions.size() != game.n_states ||
        gate.size() != game.n_states) {
        throw std::invalid_argument("policy vectors must have one entry per state");
    }
    JointPolicy policy;
    policy.task.assign(game.n_states * game.n_task_actions, 0.0);
    policy.safe.resize(game.n_states);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        if (task_actions[s] >= game.n_task_actions) {
            throw std::out_of_range("task action out of range in policy");
        }
        if (safe_actions[s] >= game.n_safe_actions) {
            throw std::out_of_range("safe action out of range in policy");
        }
        policy.task[s * game.n_task_actions + task_actions[s]] = 1.0;
        policy.safe[s] = SafeActionId{safe_actions[s]};
    }
    policy.gate = gate;
    return policy;
}

std::optional<std::size_t> JointPolicy::task_action(std::size_t s, std::size_t n_task) const {
    for (std::size_t a = 0; a < n_task; ++a) {
        if (task[s * n_task + a] == 1.0) {
            return a;
        }
    }
    return std::nullopt;
}

ValidationReport validate_policy(const TabularGame& game, const JointPolicy& policy) {
    ValidationReport report;
    if (policy.task.size() != game.n_states * game.n_task_actions ||
        policy.safe.size() != game.n_states || policy.gate.size() != game.n_states) {
        report.push_back({"policy shape does not match game", 0, 0, 0.0});
        return report;
    }
    for (std::size_t s = 0; s < game.n_states; ++s) {
        double sum = 0.0;
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            const double w = policy.task_prob(s, a, game.n_task_actions);
            if (!(w >= 0.0)) {
                report.push_back({"negative task probability", s, a, w});
            }
            sum += w;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance) {
            report.push_back({"task policy row does not sum to 1", s, 0, sum});
        }
        if (policy.safe[s].value >= game.n_safe_actions) {
            report.push_back({"safe action out of range", s, policy.safe[s].value,
                              static_cast<double>(policy.safe[s].value)});
        }
        if (policy.gate[s] > 1) {
            report.push_back({"gate value not in {0, 1}", s, 0, static_cast<double>(policy.gate[s])});
        }
    }
    return report;
}

std::span<const double> effective_transition(const TabularGame& game, StateId s,
                                             TaskActionId a_task,
                                             std::optional<SafeActionId> intervention) {
    check_state(game, s);
    check_task_action(game, a_task);
    if (intervention) {
        check_safe_action(game, *intervention);
        return game.row(s.value, game.shared_of(*intervention));
    }
    return game.row(s.value, a_task.value);
}

double effective_reward(const TabularGame& game, StateId s, TaskActionId a_task,
                        std::optional<SafeActionId> intervention) {
    check_state(game, s);
    check_task_action(game, a_task);
    if (intervention) {
        check_safe_action(game, *intervention);
        return task_reward_under_intervention(game, s.value, *intervention);
    }
    return game.r(s.value, a_task.value);
}

double effective_cost(const TabularGame& game, StateId s, TaskActionId a_task,
                      std::optional<SafeActionId> intervention) {
    check_state(game, s);
    check_task_action(game, a_task);
    if (intervention) {
        check_safe_action(game, *intervention);
        return game.cost(s.value, game.shared_of(*intervention));
    }
    return game.cost(s.value, a_task.value);
}

double safety_step_reward(const TabularGame& game, std::size_t s, std::size_t a) {
    return game.objective == SafetyObjective::cost ? -game.cost(s, a) : game.r(s, a);
}

double task_reward_under_intervention(const TabularGame& game, std::size_t s, SafeActionId k) {
    if (!game.shared_reward()) {
        return game.safe_reward[s * game.n_safe_actions + k.value];
    }
    return game.r(s, game.shared_of(k));
}

double intervention_step_reward(const TabularGame& game, std::size_t s, SafeActionId k) {
    const double base = game.objective == SafetyObjective::cost
                            ? -game.cost(s, game.shared_of(k))
                            : task_reward_under_intervention(game, s, k);
    return base - game.kappa;
}

double expected_next(const TabularGame& game, std::size_t s, std::size_t a,
                     std::span<const double> v) {
    const auto row = game.row(s, a);
    double total = 0.0;
    for (std::size_t next = 0; next < game.n_states; ++next) {
        total += row[next] * v[next];
    }
    return total;
}

double safety_value_bound(const TabularGame& game) {
    double largest = 0.0;
    for (std::size_t s = 0; s < game.n_states; ++s) {
        for (std::size_t a = 0; a < game.n_shared_actions; ++a) {
            largest = std::max(largest, std::abs(safety_step_reward(game, s, a)));
        }
        for (std::size_t k = 0; k < game.n_safe_actions && !game.shared_reward(); ++k) {
            largest = std::max(largest, std::abs(game.safe_reward[s * game.n_safe_actions + k]));
        }
    }
    return (largest + game.kappa) / (1.0 - game.gamma);
}

void complete_safety_tables(const TabularGame& game, ValueTables& tables) {
    const std::size_t n = game.n_states;
    tables.q2.assign(n * game.n_task_actions, 0.0);
    tables.m_v2.assign(n, -std::numeric_limits<double>::infinity());
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < game.n_task_actions; ++a) {
            tables.q2[s * game.n_task_actions + a] =
                safety_step_reward(game, s, a) + game.gamma * expected_next(game, s, a, tables.v2);
        }
        for (std::size_t k = 0; k < game.n_safe_actions; ++k) {
            const SafeActionId id{k};
            const double value = intervention_step_reward(game, s, id) +
                                 game.gamma * expected_next(game, s, game.shared_of(id), tables.v2);
            tables.m_v2[s] = std::max(tables.m_v2[s], value);
        }
    }
}

ValueTables evaluate_policies(const TabularGame& game, const JointPolicy& policy) {
    if (const auto issues = validate_policy(game, policy); !issues.empty()) {
        throw std::invalid_argument("invalid joint policy: " + describe(issues.front()));
    }
    const InducedChain chain = induce_chain(game, policy);
    const auto dim = static_cast<Eigen::Index>(game.n_states);
    Eigen::SparseMatrix<double> identity(dim, dim);
    identity.setIdentity();
    Eigen::SparseMatrix<double> system = identity - game.gamma * chain.kernel;
    system.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(system);
    if (lu.info() != Eigen::Success) {
        throw std::runtime_error("policy evaluation: factorisation failed");
    }
    ValueTables tables;
    tables.v1 = to_std(lu.solve(chain.task_payoff));
    tables.v2 = to_std(lu.solve(chain.safety_payoff));
    complete_safety_tables(game, tables);
    return tables;
}

double evaluation_residual(const TabularGame& game, const JointPolicy& policy,
                           const ValueTables& tables) {
    const InducedChain chain = induce_chain(game, policy);
    const Eigen::Map<const Eigen::VectorXd> v1(tables.v1.data(),
                                               static_cast<Eigen::Index>(tables.v1.size()));
    const Eigen::Map<const Eigen::VectorXd> v2(tables.v2.data(),
                                               static_cast<Eigen::Index>(tables.v2.size()));
    const double r1 =
        (chain.task_payoff + game.gamma * (chain.kernel * v1) - v1).lpNorm<Eigen::Infinity>();
    const double r2 =
        (chain.safety_payoff + game.gamma * (chain.kernel * v2) - v2).lpNorm<Eigen::Infinity>();
    return std::max(r1, r2);
}

}  // namespace desta
