#include "desta/analysis.hpp"
#include "desta/envs.hpp"
#include "desta/solver.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace {

using namespace desta;

double max_cost(const TabularGame& g) {
    double out = 0.0;
    for (const CostLottery& l : g.cost_lottery) out = std::max(out, l.expected());
    return out;
}

// Plain value iteration over task actions only, to 1e-12.
std::vector<double> task_only_values(const TabularGame& g) {
    std::vector<double> v(g.n_states, 0.0);
    for (double delta = 1.0; delta > 1e-12;) {
        std::vector<double> next(g.n_states, -1e300);
        for (std::size_t s = 0; s < g.n_states; ++s) {
            for (std::size_t a = 0; a < g.n_task_actions; ++a) {
                double q = g.r(s, a);
                for (std::size_t t = 0; t < g.n_states; ++t) q += g.gamma * g.p(s, a, t) * v[t];
                next[s] = std::max(next[s], q);
            }
        }
        delta = 0.0;
        for (std::size_t s = 0; s < g.n_states; ++s) delta = std::max(delta, std::abs(next[s] - v[s]));
        v = std::move(next);
    }
    return v;
}

TEST(InterventionOperator, SelfLoopClosedForm) {
    const TabularGame g = fixtures::self_loop(0.1, 0.5);
    const std::vector<double> v2{-0.2};
    const InterventionValue m = intervention_operator(g, v2, StateId{0});
    EXPECT_NEAR(m.value, -0.1 + 0.5 * -0.2, 1e-15);
    EXPECT_NEAR(m.value, -0.2, 1e-15);
    EXPECT_EQ(m.argmax, SafeActionId{0});
}

TEST(InterventionOperator, ZeroKappaOnSharedRowEqualsQ2) {
    Rng rng(4);
    RandomGameOptions options;
    options.layout = SafeLayout::subset;
    TabularGame g = random_game(options, rng);
    g.kappa = 0.0;
    ValueTables tables;
    tables.v2.resize(g.n_states);
    for (double& x : tables.v2) x = rng.uniform(-3.0, 0.0);
    complete_safety_tables(g, tables);
    for (std::size_t s = 0; s < g.n_states; ++s) {
        // The maximiser over safe actions is at least Q2 of every safe row.
        const InterventionValue m = intervention_operator(g, tables.v2, StateId{s});
        const std::size_t row = g.shared_of(m.argmax);
        EXPECT_NEAR(m.value, tables.q2[s * g.n_task_actions + row], 1e-12);
    }
}

TEST(InterventionOperator, GammaZeroIgnoresContinuation) {
    Rng rng(8);
    RandomGameOptions options;
    options.gamma = 0.0;
    const TabularGame g = random_game(options, rng);
    const std::vector<double> v(g.n_states, 123.0);
    for (std::size_t s = 0; s < g.n_states; ++s) {
        double best = -1e300;
        for (std::size_t k = 0; k < g.n_safe_actions; ++k) {
            best = std::max(best, -g.cost(s, g.shared_of(SafeActionId{k})) - g.kappa);
        }
        EXPECT_NEAR(intervention_operator(g, v, StateId{s}).value, best, 1e-15);
    }
}

TEST(InterventionOperator, TiesGoToLowestSafeAction) {
    TabularGame g = TabularGame::allocate(1, 1, TabularGame::disjoint_safe_map(1, 3));
    for (std::size_t a = 0; a < 4; ++a) g.p(0, a, 0) = 1.0;
    g.kappa = 0.2;
    const std::vector<double> v{0.0};
    EXPECT_EQ(intervention_operator(g, v, StateId{0}).argmax, SafeActionId{0});
}

TEST(BellmanBackup, ZeroValuesGiveOneStepMax) {
    Rng rng(12);
    const TabularGame g = random_game({}, rng);
    const std::vector<double> zero(g.n_states, 0.0);
    const std::vector<double> out = bellman_backup(g, zero, BackupMode::maximise());
    for (std::size_t s = 0; s < g.n_states; ++s) {
        double intervene = -1e300;
        for (std::size_t k = 0; k < g.n_safe_actions; ++k) {
            intervene = std::max(intervene, -g.cost(s, g.shared_of(SafeActionId{k})) - g.kappa);
        }
        double follow = -1e300;
        for (std::size_t a = 0; a < g.n_task_actions; ++a) follow = std::max(follow, -g.cost(s, a));
        EXPECT_NEAR(out[s], std::max(intervene, follow), 1e-15);
    }
}

TEST(BellmanBackup, Deterministic) {
    Rng rng(13);
    const TabularGame g = random_game({}, rng);
    std::vector<double> v(g.n_states);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    const auto mode = BackupMode::fixed(random_task_policy(g, rng, false));
    EXPECT_EQ(bellman_backup(g, v, mode), bellman_backup(g, v, mode));
}

TEST(BellmanBackupProperty, ContractionOnFourStateGames) {
    RandomGameOptions sizes;
    sizes.min_states = 4;
    sizes.max_states = 4;
    const PropertyReport report = contraction_check(1000, sizes, 99);
    EXPECT_TRUE(report.passed()) << (report.notes.empty() ? "" : report.notes.front());
    EXPECT_EQ(report.trials, 1000u);
}

TEST(ValueIteration, GammaZeroStopsAfterTwoSweeps) {
    Rng rng(3);
    RandomGameOptions options;
    options.gamma = 0.0;
    const TabularGame g = random_game(options, rng);
    const SolveReport r = value_iteration(g, BackupMode::maximise(), 1e-9, 10000);
    EXPECT_TRUE(r.converged);
    ASSERT_EQ(r.sweeps, 2u);
    EXPECT_EQ(r.residuals[1], 0.0);
}

TEST(ValueIteration, SelfLoopAlwaysIntervenes) {
    const TabularGame g = fixtures::self_loop(0.1, 0.5);
    const SolveReport r = value_iteration(g, BackupMode::fixed({1.0}), 1e-9, 10000);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.value_tables.v2[0], -0.2, 1e-8);
    EXPECT_EQ(r.policy.gate[0], 1);
}

TEST(ValueIteration, CapReportsNonConvergence) {
    const TabularGame g = fixtures::self_loop(0.1, 0.99);
    const SolveReport r = value_iteration(g, BackupMode::fixed({1.0}), 1e-9, 5);
    EXPECT_FALSE(r.converged);
    EXPECT_EQ(r.sweeps, 5u);
    EXPECT_GT(r.final_residual, 1e-9);
}

TEST(ValueIteration, RejectsNonPositiveTolerance) {
    EXPECT_THROW(value_iteration(fixtures::self_loop(), BackupMode::fixed({1.0}), 0.0, 10),
                 std::invalid_argument);
}

// Residuals shrink at least geometrically and stay within the sweep cap.
TEST(ValueIterationProperty, GeometricResidualDecay) {
    Rng rng(31);
    RandomGameOptions options;
    options.gamma.reset();
    for (int trial = 0; trial < 200; ++trial) {
        const TabularGame g = random_game(options, rng);
        const auto mode = trial % 2 ? BackupMode::maximise()
                                    : BackupMode::fixed(random_task_policy(g, rng, false));
        const SolveReport r = value_iteration(g, mode, 1e-9, 10000);
        ASSERT_TRUE(r.converged);
        ASSERT_LE(r.final_residual, 1e-9);
        for (std::size_t k = 1; k < r.residuals.size(); ++k) {
            ASSERT_LE(r.residuals[k], r.residuals[k - 1] + 1e-12) << "trial " << trial;
            ASSERT_LE(r.residuals[k], g.gamma * r.residuals[k - 1] + 1e-12) << "trial " << trial;
        }
    }
}

TEST(ExtractGate, CoincidingActionsNeverIntervene) {
    TabularGame g = fixtures::identity_chain();
    g.lottery(0, 0) = {1.0, 0.7};
    const SolveReport r = value_iteration(g, BackupMode::fixed({1.0, 1.0}), 1e-9, 10000);
    const GateExtraction e = extract_gate(g, r.value_tables, std::vector<double>{1.0, 1.0}, 1e-6);
    EXPECT_EQ(e.gate, (std::vector<std::uint8_t>{0, 0}));
}

TEST(ExtractGate, KappaAboveBoundSilencesGate) {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        TabularGame g = random_game({}, rng);
        g.kappa = max_cost(g) / (1.0 - g.gamma) + 0.01;
        const auto task = random_task_policy(g, rng, false);
        const SolveReport r = value_iteration(g, BackupMode::fixed(task), 1e-9, 10000);
        const GateExtraction e = extract_gate(g, r.value_tables, task, 1e-6);
        ASSERT_TRUE(std::ranges::all_of(e.gate, [](auto b) { return b == 0; })) << trial;
    }
}

TEST(ExtractGate, TieCountsAsIntervention) {
    // Safe row identical to the task row and kappa = 0: M v2 == E Q2 exactly.
    TabularGame g = TabularGame::allocate(1, 1, TabularGame::disjoint_safe_map(1, 1));
    g.p(0, 0, 0) = 1.0;
    g.p(0, 1, 0) = 1.0;
    g.lottery(0, 0) = {1.0, 0.5};
    g.lottery(0, 1) = {1.0, 0.5};
    g.kappa = 0.0;
    ValueTables t;
    t.v2 = {-0.5 / (1.0 - g.gamma)};
    complete_safety_tables(g, t);
    const GateExtraction e = extract_gate(g, t, std::vector<double>{1.0}, 1e-6);
    EXPECT_EQ(e.gate[0], 1);
    EXPECT_EQ(e.stopping[0], 1);
}

TEST(SolveGame, CostFreeGameIsSingleAgent) {
    Rng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        TabularGame g = random_game({}, rng);
        for (CostLottery& l : g.cost_lottery) l = {0.0, 0.0};
        const SolveReport r = solve_game(g);
        ASSERT_TRUE(r.converged);
        EXPECT_TRUE(std::ranges::all_of(r.policy.gate, [](auto b) { return b == 0; }));
        const std::vector<double> single = task_only_values(g);
        for (std::size_t s = 0; s < g.n_states; ++s) {
            EXPECT_NEAR(r.value_tables.v1[s], single[s], 1e-6);
        }
    }
}

TEST(SolveGame, TJunctionDivertsAtTheJunction) {
    const GridWorld world(t_junction());
    const TabularGame g = as_tabular_game(world, 0.5, 0.99);
    const SolveReport r = solve_game(g);
    ASSERT_TRUE(r.converged);

    // Follow the joint policy from the start.
    const std::size_t junction = world.spec().index(5, 0);
    StateId s = world.start_state();
    std::vector<std::size_t> gated_cells;
    bool reached_safe_goal = false;
    for (int step = 0; step < 40 && !world.is_terminal(s); ++step) {
        std::size_t action = *r.policy.task_action(s.value, g.n_task_actions);
        if (r.policy.gate[s.value]) {
            gated_cells.push_back(world.location(s));
            action = g.shared_of(r.policy.safe[s.value]);
        }
        s = world.transition(s, action).next;
        reached_safe_goal = world.is_safe_goal(s);
    }
    EXPECT_TRUE(reached_safe_goal);
    ASSERT_FALSE(gated_cells.empty());
    EXPECT_EQ(gated_cells.front(), junction);
    // At the junction the task agent wants the unsafe arm and the safety agent turns left.
    const StateId first_junction = [&] {
        StateId t = world.start_state();
        while (world.location(t) != junction) t = world.transition(t, 0).next;
        return t;
    }();
    EXPECT_EQ(*r.policy.task_action(first_junction.value, g.n_task_actions), 3u);
    EXPECT_EQ(r.policy.safe[first_junction.value], SafeActionId{2});
}

TEST(SolveGameProperty, MutualBestResponseOnRandomGames) {
    Rng rng(61);
    std::size_t converged = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const TabularGame g = random_game({}, rng);
        const SolveReport r = solve_game(g);
        if (!r.converged) continue;
        ++converged;
        const DeviationReport d = deviation_check(g, r.policy);
        ASSERT_TRUE(d.mutual_best_response(1e-6))
            << "trial " << trial << " task gain " << d.task_gain << " safety gain " << d.safety_gain;
    }
    // Best-response cycling is possible but should be rare.
    EXPECT_GE(converged, 190u);
}

}  // namespace
