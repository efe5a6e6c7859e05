#include "desta/analysis.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace desta {

namespace {

constexpr std::size_t kMaxNotes = 5;
constexpr double kDominanceTol = 1e-9;
constexpr double kImprovement = 1e-10;

double sup_norm(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(a[i] - b[i]));
    }
    return d;
}

std::size_t draw_between(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + rng.index(hi - lo + 1);
}

std::vector<double> dirichlet_row(Rng& rng, std::size_t n) {
    std::vector<double> row(n);
    double total = 0.0;
    for (double& x : row) {
        x = rng.exponential();
        total += x;
    }
    if (total <= 0.0) {
        row.assign(n, 1.0 / static_cast<double>(n));
        return row;
    }
    for (double& x : row) {
        x /= total;
    }
    // Push the rounding remainder onto the largest entry so the row sums to 1.
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    *std::max_element(row.begin(), row.end()) += 1.0 - sum;
    return row;
}

std::vector<double> random_values(Rng& rng, std::size_t n, double scale) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(-scale, scale);
    }
    return v;
}

std::size_t sample_index(Rng& rng, std::span<const double> weights) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        cumulative += weights[i];
        if (u < cumulative) {
            return i;
        }
    }
    // Rounding left u above the total; fall back to the last positive weight.
    for (std::size_t i = weights.size(); i-- > 0;) {
        if (weights[i] > 0.0) {
            return i;
        }
    }
    return 0;
}

std::string fmt(double x) {
    std::ostringstream out;
    out.precision(6);
    out << x;
    return out.str();
}

/// Mixed-radix counter over per-state choices; digit 0 is the most significant.
bool advance(std::vector<std::size_t>& digits, std::size_t radix) {
    for (std::size_t i = digits.size(); i-- > 0;) {
        if (++digits[i] < radix) {
            return true;
        }
        digits[i] = 0;
    }
    return false;
}

std::size_t checked_power(std::size_t base, std::size_t exponent, std::size_t cap) {
    std::size_t out = 1;
    for (std::size_t i = 0; i < exponent; ++i) {
        if (base != 0 && out > cap / base) {
            return cap + 1;
        }
        out *= base;
    }
    return out;
}

// Per-state safety choice c: gate on with safe c for c < n_safe, else gate off.
void apply_safety_choice(JointPolicy& policy, std::size_t s, std::size_t c, std::size_t n_safe) {
    if (c < n_safe) {
        policy.gate[s] = 1;
        policy.safe[s] = SafeActionId{c};
    } else {
        policy.gate[s] = 0;
        policy.safe[s] = SafeActionId{c - n_safe};
    }
}

void set_task_action(JointPolicy& policy, std::size_t s, std::size_t a, std::size_t n_task) {
    std::fill_n(policy.task.begin() + static_cast<std::ptrdiff_t>(s * n_task), n_task, 0.0);
    policy.task[s * n_task + a] = 1.0;
}

bool dominates(std::span<const double> v, std::span<const double> best, double tol) {
    for (std::size_t s = 0; s < v.size(); ++s) {
        if (v[s] < best[s] - tol) {
            return false;
        }
    }
    return true;
}

BruteForceResult brute_force_fixed(const TabularGame& game, const std::vector<double>& task,
                                   std::size_t expected) {
    const std::size_t n = game.n_states;
    const std::size_t radix = 2 * game.n_safe_actions;
    BruteForceResult out;
    out.expected_candidates = expected;

    JointPolicy candidate;
    candidate.task = task;
    candidate.safe.assign(n, SafeActionId{0});
    candidate.gate.assign(n, 0);
    std::vector<std::size_t> digits(n, 0);
    std::vector<double> pointwise_max(n, -std::numeric_limits<double>::infinity());
    double best_total = -std::numeric_limits<double>::infinity();
    do {
        for (std::size_t s = 0; s < n; ++s) {
            apply_safety_choice(candidate, s, digits[s], game.n_safe_actions);
        }
        ValueTables values = evaluate_policies(game, candidate);
        ++out.candidates;
        for (std::size_t s = 0; s < n; ++s) {
            pointwise_max[s] = std::max(pointwise_max[s], values.v2[s]);
        }
        const double total = std::accumulate(values.v2.begin(), values.v2.end(), 0.0);
        if (total > best_total + kImprovement) {
            best_total = total;
            out.policy = candidate;
            out.values = std::move(values);
        }
    } while (advance(digits, radix));
    out.dominant = dominates(out.values.v2, pointwise_max, kDominanceTol);
    return out;
}

BruteForceResult brute_force_joint(const TabularGame& game, std::size_t expected) {
    const std::size_t n = game.n_states;
    const std::size_t n_task = game.n_task_actions;
    const std::size_t safety_radix = 2 * game.n_safe_actions;
    const std::size_t task_count = checked_power(n_task, n, expected);
    const std::size_t safety_count = checked_power(safety_radix, n, expected);

    BruteForceResult out;
    out.expected_candidates = expected;
    // v1 and v2 of every profile, [task index][safety index][state].
    std::vector<double> v1(task_count * safety_count * n);
    std::vector<double> v2(task_count * safety_count * n);
    auto at = [&](std::size_t t, std::size_t q) { return (t * safety_count + q) * n; };

    JointPolicy candidate;
    candidate.task.assign(n * n_task, 0.0);
    candidate.safe.assign(n, SafeActionId{0});
    candidate.gate.assign(n, 0);
    std::vector<std::size_t> task_digits(n, 0);
    std::size_t t = 0;
    do {
        for (std::size_t s = 0; s < n; ++s) {
            set_task_action(candidate, s, task_digits[s], n_task);
        }
        std::vector<std::size_t> safety_digits(n, 0);
        std::size_t q = 0;
        do {
            for (std::size_t s = 0; s < n; ++s) {
                apply_safety_choice(candidate, s, safety_digits[s], game.n_safe_actions);
            }
            const ValueTables values = evaluate_policies(game, candidate);
            ++out.candidates;
            std::copy(values.v1.begin(), values.v1.end(), v1.begin() + at(t, q));
            std::copy(values.v2.begin(), values.v2.end(), v2.begin() + at(t, q));
            ++q;
        } while (advance(safety_digits, safety_radix));
        ++t;
    } while (advance(task_digits, n_task));

    // Pointwise best values of each agent against each fixed opponent.
    std::vector<double> best_v2(task_count * n, -std::numeric_limits<double>::infinity());
    std::vector<double> best_v1(safety_count * n, -std::numeric_limits<double>::infinity());
    for (std::size_t ti = 0; ti < task_count; ++ti) {
        for (std::size_t qi = 0; qi < safety_count; ++qi) {
            for (std::size_t s = 0; s < n; ++s) {
                best_v2[ti * n + s] = std::max(best_v2[ti * n + s], v2[at(ti, qi) + s]);
                best_v1[qi * n + s] = std::max(best_v1[qi * n + s], v1[at(ti, qi) + s]);
            }
        }
    }

    auto decode = [&](std::size_t index, std::size_t radix) {
        std::vector<std::size_t> digits(n);
        for (std::size_t s = n; s-- > 0;) {
            digits[s] = index % radix;
            index /= radix;
        }
        return digits;
    };
    for (std::size_t ti = 0; ti < task_count; ++ti) {
        for (std::size_t qi = 0; qi < safety_count; ++qi) {
            const std::span<const double> p1(v1.data() + at(ti, qi), n);
            const std::span<const double> p2(v2.data() + at(ti, qi), n);
            if (!dominates(p2, std::span<const double>(best_v2.data() + ti * n, n), kDominanceTol) ||
                !dominates(p1, std::span<const double>(best_v1.data() + qi * n, n), kDominanceTol)) {
                continue;
            }
            JointPolicy profile;
            profile.task.assign(n * n_task, 0.0);
            profile.safe.assign(n, SafeActionId{0});
            profile.gate.assign(n, 0);
            const auto task_digits_ne = decode(ti, n_task);
            const auto safety_digits_ne = decode(qi, safety_radix);
            for (std::size_t s = 0; s < n; ++s) {
                set_task_action(profile, s, task_digits_ne[s], n_task);
                apply_safety_choice(profile, s, safety_digits_ne[s], game.n_safe_actions);
            }
            out.equilibrium_values.push_back(evaluate_policies(game, profile));
            out.equilibria.push_back(std::move(profile));
        }
    }
    if (!out.equilibria.empty()) {
        out.policy = out.equilibria.front();
        out.values = out.equilibrium_values.front();
    }
    return out;
}

std::vector<std::size_t> safe_layout(SafeLayout layout, std::size_t n_task, std::size_t& n_safe,
                                     Rng& rng) {
    if (layout == SafeLayout::any) {
        layout = static_cast<SafeLayout>(rng.index(3));
    }
    std::vector<std::size_t> map;
    switch (layout) {
        case SafeLayout::subset: {
            n_safe = std::min(n_safe, n_task);
            std::vector<std::size_t> rows(n_task);
            std::iota(rows.begin(), rows.end(), 0);
            // Partial Fisher-Yates for a random choice of distinct rows.
            for (std::size_t k = 0; k < n_safe; ++k) {
                std::swap(rows[k], rows[k + rng.index(n_task - k)]);
            }
            map.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_safe));
            break;
        }
        case SafeLayout::superset:
            n_safe = std::max(n_safe, n_task);
            for (std::size_t k = 0; k < n_safe; ++k) {
                map.push_back(k);
            }
            break;
        case SafeLayout::disjoint:
        case SafeLayout::any:
            map = TabularGame::disjoint_safe_map(n_task, n_safe);
            break;
    }
    return map;
}

}  // namespace

void PropertyReport::record(bool ok, double margin, const std::string& note) {
    ++trials;
    worst_margin = std::max(worst_margin, margin);
    if (!ok) {
        ++violations;
        if (notes.size() < kMaxNotes) {
            notes.push_back(note);
        }
    }
}

void PropertyReport::observe(double lhs, double rhs, double slack, const std::string& what) {
    const double margin = lhs - rhs;
    record(margin <= slack, margin,
           what + ": lhs " + fmt(lhs) + " exceeds rhs " + fmt(rhs) + " by " + fmt(margin));
}

TabularGame random_game(const RandomGameOptions& options, Rng& rng) {
    if (options.min_states == 0 || options.min_task_actions == 0 || options.min_safe_actions == 0 ||
        options.min_states > options.max_states ||
        options.min_task_actions > options.max_task_actions ||
        options.min_safe_actions > options.max_safe_actions) {
        throw std::invalid_argument("random game size ranges must be non-empty and positive");
    }
    const std::size_t n = draw_between(rng, options.min_states, options.max_states);
    const std::size_t n_task =
        draw_between(rng, options.min_task_actions, options.max_task_actions);
    std::size_t n_safe = draw_between(rng, options.min_safe_actions, options.max_safe_actions);
    std::vector<std::size_t> map = safe_layout(options.layout, n_task, n_safe, rng);

    TabularGame game = TabularGame::allocate(n, n_task, std::move(map));
    game.gamma = options.gamma ? *options.gamma : rng.uniform(0.0, 0.99);
    game.kappa = rng.uniform(options.kappa_min, options.kappa_max);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < game.n_shared_actions; ++a) {
            const std::vector<double> row = dirichlet_row(rng, n);
            std::copy(row.begin(), row.end(), game.row(s, a).begin());
            game.r(s, a) = rng.uniform(-1.0, 1.0);
            game.lottery(s, a) = CostLottery{1.0, rng.uniform(0.0, options.cost_max)};
        }
    }
    return game;
}

std::vector<double> random_task_policy(const TabularGame& game, Rng& rng, bool deterministic) {
    std::vector<double> policy(game.n_states * game.n_task_actions, 0.0);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        if (deterministic) {
            policy[s * game.n_task_actions + rng.index(game.n_task_actions)] = 1.0;
            continue;
        }
        const std::vector<double> row = dirichlet_row(rng, game.n_task_actions);
        std::copy(row.begin(), row.end(),
                  policy.begin() + static_cast<std::ptrdiff_t>(s * game.n_task_actions));
    }
    return policy;
}

BruteForceResult brute_force_solver(const TabularGame& game,
                                    const std::optional<std::vector<double>>& task_policy,
                                    const BruteForceLimits& limits) {
    if (game.n_states > limits.max_states || game.n_task_actions > limits.max_actions ||
        game.n_safe_actions > limits.max_actions) {
        throw std::invalid_argument(
            "brute force limited to " + std::to_string(limits.max_states) + " states and " +
            std::to_string(limits.max_actions) + " actions per set");
    }
    if (task_policy && task_policy->size() != game.n_states * game.n_task_actions) {
        throw std::invalid_argument("task policy does not match the game");
    }
    const std::size_t per_state = 2 * game.n_safe_actions * (task_policy ? 1 : game.n_task_actions);
    const std::size_t expected = checked_power(per_state, game.n_states, limits.max_candidates);
    if (expected > limits.max_candidates) {
        throw std::invalid_argument("brute force candidate count exceeds " +
                                    std::to_string(limits.max_candidates));
    }
    BruteForceResult out =
        task_policy ? brute_force_fixed(game, *task_policy, expected) : brute_force_joint(game, expected);
    if (out.candidates != out.expected_candidates) {
        throw std::logic_error("brute force skipped candidates");
    }
    return out;
}

DeviationReport deviation_check(const TabularGame& game, const JointPolicy& policy) {
    const ValueTables base = evaluate_policies(game, policy);
    DeviationReport out;
    auto gain = [](const std::vector<double>& deviated, const std::vector<double>& reference) {
        double g = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < deviated.size(); ++s) {
            g = std::max(g, deviated[s] - reference[s]);
        }
        return g;
    };
    for (std::size_t s = 0; s < game.n_states; ++s) {
        if (policy.gate[s] == 0) {
            for (std::size_t a = 0; a < game.n_task_actions; ++a) {
                JointPolicy deviated = policy;
                set_task_action(deviated, s, a, game.n_task_actions);
                out.task_gain =
                    std::max(out.task_gain, gain(evaluate_policies(game, deviated).v1, base.v1));
                ++out.deviations;
            }
        }
        for (std::size_t c = 0; c < 2 * game.n_safe_actions; ++c) {
            JointPolicy deviated = policy;
            apply_safety_choice(deviated, s, c, game.n_safe_actions);
            out.safety_gain =
                std::max(out.safety_gain, gain(evaluate_policies(game, deviated).v2, base.v2));
            ++out.deviations;
        }
    }
    return out;
}

PropertyReport contraction_check(std::size_t n_trials, const RandomGameOptions& sizes,
                                 std::uint64_t seed) {
    PropertyReport report;
    report.property = "contraction";
    report.seed = seed;
    for (std::size_t trial = 0; trial < n_trials; ++trial) {
        Rng rng(Rng::derive_seed(seed, trial));
        RandomGameOptions options = sizes;
        options.gamma = std::nullopt;
        const TabularGame game = random_game(options, rng);

        BackupMode mode;
        switch (rng.index(3)) {
            case 0:
                mode = BackupMode::maximise(RewardSource::safety);
                break;
            case 1:
                mode = BackupMode::maximise(RewardSource::task);
                break;
            default:
                mode = BackupMode::fixed(random_task_policy(game, rng, rng.bernoulli(0.5)));
                break;
        }

        const double scale = rng.uniform(0.1, 100.0);
        const std::vector<double> v = random_values(rng, game.n_states, scale);
        std::vector<double> w;
        switch (trial % 4) {
            case 0:
                w = v;
                break;
            case 1: {
                const double shift = rng.uniform(-scale, scale);
                w = v;
                for (double& x : w) {
                    x += shift;
                }
                break;
            }
            default:
                w = random_values(rng, game.n_states, scale);
                break;
        }
        const double lhs = sup_norm(bellman_backup(game, v, mode), bellman_backup(game, w, mode));
        const double rhs = game.gamma * sup_norm(v, w);
        report.observe(lhs, rhs, kLemmaSlack, "trial " + std::to_string(trial));
    }
    return report;
}

PropertyReport nonexpansive_check(std::size_t n_trials, std::uint64_t seed) {
    PropertyReport report;
    report.property = "nonexpansive_kernel";
    report.seed = seed;
    for (std::size_t trial = 0; trial < n_trials; ++trial) {
        Rng rng(Rng::derive_seed(seed, trial));
        const std::size_t n = draw_between(rng, 1, 8);
        std::vector<std::vector<double>> kernel(n, std::vector<double>(n, 0.0));
        if (trial % 4 == 3) {
            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            for (std::size_t i = n; i > 1; --i) {
                std::swap(perm[i - 1], perm[rng.index(i)]);
            }
            for (std::size_t i = 0; i < n; ++i) {
                kernel[i][perm[i]] = 1.0;
            }
        } else {
            for (auto& row : kernel) {
                row = dirichlet_row(rng, n);
            }
        }
        const double scale = rng.uniform(0.1, 100.0);
        const std::vector<double> v = random_values(rng, n, scale);
        const std::vector<double> w =
            trial % 4 == 0 ? std::vector<double>(n, rng.uniform(-scale, scale))
                           : random_values(rng, n, scale);
        std::vector<double> pv(n, 0.0);
        std::vector<double> pw(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                pv[i] += kernel[i][j] * v[j];
                pw[i] += kernel[i][j] * w[j];
            }
        }
        report.observe(sup_norm(pv, pw), sup_norm(v, w), kLemmaSlack,
                       "trial " + std::to_string(trial));
    }
    return report;
}

PropertyReport max_lemma_check(std::size_t n_trials, std::uint64_t seed) {
    PropertyReport report;
    report.property = "max_lemma";
    report.seed = seed;
    for (std::size_t trial = 0; trial < n_trials; ++trial) {
        Rng rng(Rng::derive_seed(seed, trial));
        const std::size_t n = draw_between(rng, 1, 10);
        const double scale = rng.uniform(0.1, 100.0);
        const std::vector<double> f = random_values(rng, n, scale);
        std::vector<double> g;
        switch (trial % 4) {
            case 0:
                g = f;
                break;
            case 1: {
                const double c = rng.uniform(-scale, scale);
                g = f;
                for (double& x : g) {
                    x += c;
                }
                break;
            }
            default:
                g = random_values(rng, n, scale);
                break;
        }
        const double lhs =
            std::abs(*std::max_element(f.begin(), f.end()) - *std::max_element(g.begin(), g.end()));
        report.observe(lhs, sup_norm(f, g), kLemmaSlack, "trial " + std::to_string(trial));
    }
    return report;
}

ObstacleRollouts obstacle_consistency_check(const TabularGame& game, const SolveReport& solved,
                                            std::size_t n_rollouts, std::uint64_t seed,
                                            const RolloutOptions& options) {
    const ValueTables& values = solved.value_tables;
    const JointPolicy& policy = solved.policy;
    if (values.m_v2.size() != game.n_states || values.v2.size() != game.n_states) {
        throw std::invalid_argument("obstacle check needs v2 and M v2 for every state");
    }
    ObstacleRollouts out;
    out.report.property = "obstacle_consistency";
    out.report.seed = seed;
    out.intervention_counts.assign(game.n_states, 0);

    std::vector<std::uint8_t> in_set(game.n_states);
    for (std::size_t s = 0; s < game.n_states; ++s) {
        in_set[s] = std::abs(values.m_v2[s] - values.v2[s]) <= options.tol_gate ? 1 : 0;
    }
    Rng rng(seed);
    for (std::size_t rollout = 0; rollout < n_rollouts; ++rollout) {
        std::size_t s = options.start ? options.start->value : rng.index(game.n_states);
        bool ok = true;
        std::string note;
        for (std::size_t t = 0; t < options.horizon; ++t) {
            if (!options.terminal.empty() && options.terminal[s] != 0) {
                break;
            }
            const bool fired = policy.gate[s] != 0;
            // Between interventions the stopping time is the first entry into
            // the set, so at every step "fires" must equal "in the set".
            if (fired != (in_set[s] != 0) && ok) {
                ok = false;
                note = "rollout " + std::to_string(rollout) + " step " + std::to_string(t) +
                       " state " + std::to_string(s) + (fired ? ": intervened outside" : ": missed") +
                       " the obstacle set, |Mv2 - v2| = " +
                       fmt(std::abs(values.m_v2[s] - values.v2[s]));
            }
            std::size_t row = 0;
            if (fired) {
                row = game.shared_of(policy.safe[s]);
                ++out.interventions;
                ++out.intervention_counts[s];
            } else {
                row = sample_index(rng, std::span<const double>(
                                            policy.task.data() + s * game.n_task_actions,
                                            game.n_task_actions));
            }
            s = sample_index(rng, game.row(s, row));
            ++out.steps;
        }
        // Membership is binary, so the margin is 0 for a clean rollout and 1 otherwise.
        out.report.record(ok, ok ? 0.0 : 1.0, note);
    }
    return out;
}

PropertyReport oracle_equivalence_check(std::size_t n_games, const RandomGameOptions& sizes,
                                        std::uint64_t seed, double value_tol) {
    PropertyReport report;
    report.property = "oracle_equivalence";
    report.seed = seed;
    const SolveOptions options;
    for (std::size_t g = 0; g < n_games; ++g) {
        Rng rng(Rng::derive_seed(seed, g));
        const TabularGame game = random_game(sizes, rng);
        const std::vector<double> task = random_task_policy(game, rng, g % 2 == 0);
        const SolveReport dp = value_iteration(game, BackupMode::fixed(task), options.tol,
                                               options.sweep_cap, options.tol_gate);
        const BruteForceResult oracle = brute_force_solver(game, task);

        const double value_gap = sup_norm(dp.value_tables.v2, oracle.values.v2);
        std::size_t gate_mismatch = 0;
        std::size_t safe_mismatch = 0;
        for (std::size_t s = 0; s < game.n_states; ++s) {
            gate_mismatch += dp.policy.gate[s] != oracle.policy.gate[s];
            if (oracle.policy.gate[s] != 0 && dp.policy.safe[s] != oracle.policy.safe[s]) {
                ++safe_mismatch;
            }
        }
        const bool ok = dp.converged && oracle.dominant && value_gap <= value_tol &&
                        gate_mismatch == 0 && safe_mismatch == 0;
        report.record(ok, value_gap - value_tol,
                      "game " + std::to_string(g) + ": value gap " + fmt(value_gap) + ", " +
                          std::to_string(gate_mismatch) + " gate and " +
                          std::to_string(safe_mismatch) + " safe-action mismatches" +
                          (oracle.dominant ? "" : ", oracle not dominant") +
                          (dp.converged ? "" : ", value iteration hit the cap"));
    }
    return report;
}

PropertyReport obstacle_suite(std::size_t n_games, std::size_t n_rollouts,
                              const RandomGameOptions& sizes, std::uint64_t seed) {
    PropertyReport report;
    report.property = "obstacle_consistency";
    report.seed = seed;
    std::size_t skipped = 0;
    std::size_t interventions = 0;
    std::size_t steps = 0;
    // Only games where best-response iteration settled count as solved;
    // cycling games are drawn past and reported.
    for (std::size_t draw = 0; report.trials < n_games; ++draw) {
        Rng rng(Rng::derive_seed(seed, draw));
        const TabularGame game = random_game(sizes, rng);
        const SolveReport solved = solve_game(game);
        if (!solved.converged) {
            ++skipped;
            if (skipped > 10 * n_games + 10) {
                throw std::runtime_error("obstacle suite: too many games failed to solve");
            }
            continue;
        }
        const ObstacleRollouts rollouts =
            obstacle_consistency_check(game, solved, n_rollouts, Rng::derive_seed(seed, draw + 1'000'000));
        interventions += rollouts.interventions;
        steps += rollouts.steps;
        const PropertyReport& r = rollouts.report;
        report.record(r.passed(), r.worst_margin,
                      "game draw " + std::to_string(draw) + ": " + std::to_string(r.violations) +
                          " bad rollouts" + (r.notes.empty() ? "" : " (" + r.notes.front() + ")"));
    }
    if (skipped > 0) {
        report.notes.push_back(std::to_string(skipped) +
                               " drawn games did not settle under best-response iteration");
    }
    report.notes.push_back(std::to_string(interventions) + " interventions in " +
                           std::to_string(steps) + " rollout steps");
    return report;
}

PropertyReport kappa_threshold_check(std::size_t n_games, const RandomGameOptions& sizes,
                                     std::uint64_t seed) {
    PropertyReport report;
    report.property = "kappa_threshold";
    report.seed = seed;
    const SolveOptions options;
    for (std::size_t g = 0; g < n_games; ++g) {
        Rng rng(Rng::derive_seed(seed, g));

        // Large kappa: intervening can never pay.
        {
            TabularGame game = random_game(sizes, rng);
            double l_max = 0.0;
            for (const CostLottery& l : game.cost_lottery) {
                l_max = std::max(l_max, l.expected());
            }
            game.kappa = l_max / (1.0 - game.gamma) * rng.uniform(1.01, 2.0) + 1e-3;
            const SolveReport solved = solve_game(game, options);
            const auto fired = static_cast<std::size_t>(
                std::count(solved.policy.gate.begin(), solved.policy.gate.end(), 1));
            report.record(fired == 0, static_cast<double>(fired),
                          "game " + std::to_string(g) + ": gate fired in " +
                              std::to_string(fired) + " states with kappa above the bound");
        }
        // Free interventions with every task action available to the safety
        // agent: the fixed point weakly improves on never intervening.
        {
            RandomGameOptions covering = sizes;
            covering.layout = SafeLayout::superset;
            TabularGame game = random_game(covering, rng);
            game.kappa = 0.0;
            const std::vector<double> task = random_task_policy(game, rng, rng.bernoulli(0.5));
            const SolveReport fixed_point = value_iteration(
                game, BackupMode::fixed(task), options.tol, options.sweep_cap, options.tol_gate);
            JointPolicy never;
            never.task = task;
            never.safe.assign(game.n_states, SafeActionId{0});
            never.gate.assign(game.n_states, 0);
            const ValueTables baseline = evaluate_policies(game, never);
            double shortfall = -std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s < game.n_states; ++s) {
                shortfall = std::max(shortfall, baseline.v2[s] - fixed_point.value_tables.v2[s]);
            }
            // Value iteration stops within tol of the fixed point.
            const double slack = 10.0 * options.tol / (1.0 - game.gamma);
            report.record(shortfall <= slack, shortfall - slack,
                          "game " + std::to_string(g) + ": free-intervention fixed point below "
                                                        "never-intervene by " +
                              fmt(shortfall));
        }
    }
    return report;
}

MonteCarloEstimate monte_carlo_values(const Environment& env, const JointPolicy& policy,
                                      double kappa, double gamma, std::size_t episodes,
                                      std::uint64_t seed, SafetyObjective objective) {
    const std::size_t n_task = env.n_task_actions();
    if (policy.gate.size() != env.n_states() || policy.task.size() != env.n_states() * n_task) {
        throw std::invalid_argument("policy does not match the environment");
    }
    Rng env_rng(Rng::derive_seed(seed, 2));
    Rng policy_rng(Rng::derive_seed(seed, 1));
    std::vector<double> g1;
    std::vector<double> g2;
    g1.reserve(episodes);
    g2.reserve(episodes);
    for (std::size_t episode = 0; episode < episodes; ++episode) {
        EpisodeState state = env.reset(env_rng);
        double discount = 1.0;
        double ret1 = 0.0;
        double ret2 = 0.0;
        while (!state.done) {
            const std::size_t s = state.state.value;
            const bool gated = policy.gate[s] != 0;
            const std::size_t row =
                gated ? env.safe_to_shared()[policy.safe[s].value]
                      : sample_index(policy_rng,
                                     std::span<const double>(policy.task.data() + s * n_task, n_task));
            const StepOutcome outcome = env.step(state, row, env_rng);
            const double base = objective == SafetyObjective::cost ? -outcome.cost_sample
                                                                   : outcome.reward;
            ret1 += discount * outcome.reward;
            ret2 += discount * (base - (gated ? kappa : 0.0));
            discount *= gamma;
        }
        g1.push_back(ret1);
        g2.push_back(ret2);
    }
    auto moments = [](const std::vector<double>& x, double& mean, double& se) {
        const double n = static_cast<double>(x.size());
        mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
        double ss = 0.0;
        for (double xi : x) {
            ss += (xi - mean) * (xi - mean);
        }
        se = x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    };
    MonteCarloEstimate out;
    out.episodes = episodes;
    if (episodes > 0) {
        moments(g1, out.v1_mean, out.v1_se);
        moments(g2, out.v2_mean, out.v2_se);
    }
    return out;
}

MeanCi mean_ci(const std::vector<double>& samples) {
    MeanCi out;
    if (samples.empty()) {
        return out;
    }
    const double n = static_cast<double>(samples.size());
    out.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    if (samples.size() < 2) {
        return out;
    }
    double ss = 0.0;
    for (double x : samples) {
        ss += (x - out.mean) * (x - out.mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    const boost::math::students_t dist(n - 1.0);
    const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
    out.half_width = t * sd / std::sqrt(n);
    return out;
}

MetricsSummary aggregate_metrics(const std::vector<MetricsLog>& logs, std::size_t n_states) {
    MetricsSummary out;
    out.degenerate = logs.size() < 2;
    out.histogram.counts.assign(n_states, 0);
    if (logs.empty()) {
        return out;
    }
    std::size_t episodes = logs.front().episodes.size();
    for (const MetricsLog& log : logs) {
        episodes = std::min(episodes, log.episodes.size());
        for (const auto& states : log.intervention_states) {
            for (const StateId s : states) {
                if (s.value >= n_states) {
                    throw std::out_of_range("intervention state outside the histogram");
                }
                ++out.histogram.counts[s.value];
                ++out.histogram.total;
            }
        }
    }
    std::vector<double> ret(logs.size()), cost(logs.size()), inter(logs.size()), goal(logs.size());
    for (std::size_t e = 0; e < episodes; ++e) {
        for (std::size_t k = 0; k < logs.size(); ++k) {
            const EpisodeRecord& r = logs[k].episodes[e];
            ret[k] = r.episode_return;
            cost[k] = r.safety_cost;
            inter[k] = static_cast<double>(r.interventions);
            goal[k] = r.safe_goal ? 1.0 : 0.0;
        }
        out.rows.push_back({logs.front().episodes[e].episode, logs.size(), mean_ci(ret),
                            mean_ci(cost), mean_ci(inter), mean_ci(goal)});
    }
    return out;
}

WindowStats final_window(const MetricsLog& log, std::size_t window) {
    WindowStats out;
    const std::size_t n = std::min(window, log.episodes.size());
    if (n == 0) {
        return out;
    }
    for (std::size_t i = log.episodes.size() - n; i < log.episodes.size(); ++i) {
        const EpisodeRecord& r = log.episodes[i];
        out.safe_goal_rate += r.safe_goal ? 1.0 : 0.0;
        out.safety_cost += r.safety_cost;
        out.episode_return += r.episode_return;
        out.interventions += static_cast<double>(r.interventions);
    }
    const double d = static_cast<double>(n);
    out.safe_goal_rate /= d;
    out.safety_cost /= d;
    out.episode_return /= d;
    out.interventions /= d;
    return out;
}

void write_summary_csv(std::ostream& out, const MetricsSummary& summary,
                       const std::string& header) {
    std::istringstream lines(header);
    std::string line;
    while (std::getline(lines, line)) {
        out << "# " << line << '\n';
    }
    out << "# ci: 95% Student-t half width across seeds"
        << (summary.degenerate ? " (single seed: zero by convention)" : "") << '\n';
    out << "episode,seeds,return_mean,return_ci,safety_cost_mean,safety_cost_ci,"
           "interventions_mean,interventions_ci,safe_goal_mean,safe_goal_ci\n";
    for (const SummaryRow& r : summary.rows) {
        out << r.episode << ',' << r.seeds;
        for (const MeanCi* m : {&r.episode_return, &r.safety_cost, &r.interventions, &r.safe_goal}) {
            out << ',' << format_number(m->mean) << ',' << format_number(m->half_width);
        }
        out << '\n';
    }
}

void write_histogram_csv(std::ostream& out, const InterventionHistogram& histogram,
                         const Environment* env) {
    out << "state,location,count\n";
    for (std::size_t s = 0; s < histogram.counts.size(); ++s) {
        if (histogram.counts[s] == 0) {
            continue;
        }
        out << s << ',' << (env ? env->location(StateId{s}) : s) << ',' << histogram.counts[s]
            << '\n';
    }
    out << "total,," << histogram.total << '\n';
}

}  // namespace desta
