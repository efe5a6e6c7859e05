#include "desta/analysis.hpp"
#include "desta/envs.hpp"
#include "desta/game.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace {

using namespace desta;

constexpr std::size_t kUp = 0, kLeft = 2, kRight = 3;

TEST(ValidateGame, IdentityChainIsValid) {
    EXPECT_TRUE(validate_game(fixtures::identity_chain()).empty());
}

TEST(ValidateGame, ShortRowNamesStateAndAction) {
    TabularGame g = fixtures::identity_chain();
    g.p(1, 0, 1) = 0.9;
    const ValidationReport report = validate_game(g);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0].state, 1u);
    EXPECT_EQ(report[0].action, 0u);
    EXPECT_DOUBLE_EQ(report[0].value, 0.9);
    EXPECT_NE(describe(report[0]).find("state 1"), std::string::npos);
}

TEST(ValidateGame, RejectsNegativeCostAndBadGamma) {
    TabularGame g = fixtures::identity_chain();
    g.lottery(0, 0) = {1.0, -1.0};
    g.gamma = 1.0;
    EXPECT_EQ(validate_game(g).size(), 2u);
}

TEST(ValidateGame, RandomGamesAreValidByConstruction) {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const TabularGame g = random_game({}, rng);
        ASSERT_TRUE(validate_game(g).empty()) << "game " << i;
    }
}

class EffectiveTables : public ::testing::Test {
protected:
    void SetUp() override {
        Rng rng(5);
        RandomGameOptions options;
        options.layout = SafeLayout::disjoint;
        options.min_states = 3;
        game = random_game(options, rng);
    }
    TabularGame game;
};

TEST_F(EffectiveTables, NoInterventionUsesTaskRow) {
    const auto row = effective_transition(game, StateId{1}, TaskActionId{0}, std::nullopt);
    EXPECT_TRUE(std::ranges::equal(row, game.row(1, 0)));
    EXPECT_EQ(effective_reward(game, StateId{1}, TaskActionId{0}, std::nullopt), game.r(1, 0));
    EXPECT_EQ(effective_cost(game, StateId{1}, TaskActionId{0}, std::nullopt), game.cost(1, 0));
}

TEST_F(EffectiveTables, InterventionUsesSafeRow) {
    const std::size_t j = game.shared_of(SafeActionId{0});
    const auto row = effective_transition(game, StateId{1}, TaskActionId{0}, SafeActionId{0});
    EXPECT_TRUE(std::ranges::equal(row, game.row(1, j)));
    EXPECT_EQ(effective_reward(game, StateId{1}, TaskActionId{0}, SafeActionId{0}), game.r(1, j));
    EXPECT_EQ(effective_cost(game, StateId{1}, TaskActionId{0}, SafeActionId{0}), game.cost(1, j));
}

TEST_F(EffectiveTables, OutOfRangeIndicesAreRejected) {
    EXPECT_THROW(effective_transition(game, StateId{game.n_states}, TaskActionId{0}, std::nullopt),
                 std::out_of_range);
    EXPECT_THROW(effective_reward(game, StateId{0}, TaskActionId{game.n_task_actions}, std::nullopt),
                 std::out_of_range);
    EXPECT_THROW(effective_cost(game, StateId{0}, TaskActionId{0}, SafeActionId{game.n_safe_actions}),
                 std::out_of_range);
}

// Intervening with the safe action that shares the task action's row is
// indistinguishable from not intervening.
TEST(EffectiveTablesProperty, SharedRowInterventionIsBitwiseIdentical) {
    Rng rng(17);
    RandomGameOptions options;
    options.layout = SafeLayout::subset;
    for (int trial = 0; trial < 200; ++trial) {
        const TabularGame g = random_game(options, rng);
        for (std::size_t s = 0; s < g.n_states; ++s) {
            for (std::size_t k = 0; k < g.n_safe_actions; ++k) {
                const SafeActionId safe{k};
                const TaskActionId task{g.shared_of(safe)};
                const StateId state{s};
                ASSERT_TRUE(std::ranges::equal(effective_transition(g, state, task, safe),
                                               effective_transition(g, state, task, std::nullopt)));
                ASSERT_EQ(effective_reward(g, state, task, safe),
                          effective_reward(g, state, task, std::nullopt));
                ASSERT_EQ(effective_cost(g, state, task, safe),
                          effective_cost(g, state, task, std::nullopt));
            }
        }
    }
}

class TJunctionTables : public ::testing::Test {
protected:
    TJunctionTables() : world(t_junction()), game(as_tabular_game(world, 0.5, 0.99)) {}

    // First state found at the given grid cell.
    std::size_t at(std::size_t x, std::size_t y) const {
        return world.states_at(world.spec().index(x, y)).front().value;
    }

    GridWorld world;
    TabularGame game;
};

TEST_F(TJunctionTables, GoalRewards) {
    EXPECT_DOUBLE_EQ(effective_reward(game, StateId{at(1, 0)}, TaskActionId{kLeft}, std::nullopt), 50.0);
    EXPECT_DOUBLE_EQ(effective_reward(game, StateId{at(1, 0)}, TaskActionId{0}, SafeActionId{kLeft}), 50.0);
    EXPECT_DOUBLE_EQ(effective_reward(game, StateId{at(9, 0)}, TaskActionId{kRight}, std::nullopt), 100.0);
    EXPECT_DOUBLE_EQ(effective_reward(game, StateId{at(5, 5)}, TaskActionId{kUp}, std::nullopt), 10.0);
}

TEST_F(TJunctionTables, OnlyTheUnsafeArmCarriesCost) {
    const StateId junction{at(5, 0)};
    EXPECT_DOUBLE_EQ(effective_cost(game, junction, TaskActionId{kLeft}, std::nullopt), 0.0);
    EXPECT_DOUBLE_EQ(effective_cost(game, junction, TaskActionId{kRight}, std::nullopt), 10.0);
    EXPECT_DOUBLE_EQ(effective_cost(game, junction, TaskActionId{kRight}, SafeActionId{kLeft}), 0.0);
    const CostLottery& lottery = game.lottery(junction.value, kRight);
    EXPECT_DOUBLE_EQ(lottery.probability, 0.1);
    EXPECT_DOUBLE_EQ(lottery.magnitude, 100.0);
}

TEST(EvaluatePolicies, GateOffTaskRewardIsGeometric) {
    const TabularGame g = fixtures::self_loop(0.1, 0.5);
    const ValueTables v = evaluate_policies(g, JointPolicy::deterministic(g, {0}, {0}, {0}));
    EXPECT_NEAR(v.v1[0], 1.0 / (1.0 - 0.5), 1e-12);
    EXPECT_NEAR(v.v2[0], -2.0, 1e-12);
}

TEST(EvaluatePolicies, AlwaysInterveneCostsKappaForever) {
    const TabularGame g = fixtures::self_loop(0.1, 0.5);
    const ValueTables v = evaluate_policies(g, JointPolicy::deterministic(g, {0}, {0}, {1}));
    EXPECT_NEAR(v.v2[0], -0.2, 1e-12);
    EXPECT_NEAR(v.v1[0], 0.0, 1e-12);
    EXPECT_NEAR(v.m_v2[0], -0.2, 1e-12);
}

TEST(EvaluatePolicies, RejectsMalformedPolicy) {
    const TabularGame g = fixtures::self_loop();
    JointPolicy p = JointPolicy::uniform(g);
    p.gate[0] = 2;
    EXPECT_FALSE(validate_policy(g, p).empty());
    EXPECT_THROW(evaluate_policies(g, p), std::invalid_argument);
}

// One more evaluation sweep moves the values by at most 1e-10, and v2 obeys
// the geometric bound.
TEST(EvaluatePoliciesProperty, FixedPointAndBound) {
    Rng rng(23);
    RandomGameOptions options;
    options.gamma.reset();
    for (int trial = 0; trial < 300; ++trial) {
        const TabularGame g = random_game(options, rng);
        JointPolicy p = JointPolicy::uniform(g);
        p.task = random_task_policy(g, rng, trial % 2 == 0);
        for (std::size_t s = 0; s < g.n_states; ++s) {
            p.safe[s] = SafeActionId{rng.index(g.n_safe_actions)};
            p.gate[s] = static_cast<std::uint8_t>(rng.index(2));
        }
        const ValueTables v = evaluate_policies(g, p);
        ASSERT_LE(evaluation_residual(g, p, v), 1e-10) << "trial " << trial;
        const double bound = safety_value_bound(g);
        for (std::size_t s = 0; s < g.n_states; ++s) {
            ASSERT_TRUE(std::isfinite(v.v1[s]));
            ASSERT_LE(std::abs(v.v2[s]), bound + 1e-9);
        }
    }
}

TEST(JointPolicy, UniformRowsSumToOne) {
    Rng rng(2);
    const TabularGame g = random_game({}, rng);
    const JointPolicy p = JointPolicy::uniform(g);
    EXPECT_TRUE(validate_policy(g, p).empty());
    EXPECT_FALSE(p.task_action(0, g.n_task_actions).has_value() && g.n_task_actions > 1);
}

TEST(JointPolicy, DeterministicIsOneHot) {
    const TabularGame g = fixtures::identity_chain();
    const JointPolicy p = JointPolicy::deterministic(g, {0, 0}, {0, 0}, {1, 0});
    EXPECT_EQ(p.task_action(1, 1), 0u);
    EXPECT_EQ(p.gate[0], 1);
    EXPECT_THROW(JointPolicy::deterministic(g, {1, 0}, {0, 0}, {0, 0}), std::out_of_range);
}

TEST(SafeMap, DisjointRowsFollowTaskRows) {
    EXPECT_EQ(TabularGame::disjoint_safe_map(3, 2), (std::vector<std::size_t>{3, 4}));
    const TabularGame g = TabularGame::allocate(2, 3, {3, 4});
    EXPECT_EQ(g.n_shared_actions, 5u);
    EXPECT_EQ(g.safe_of_shared(4), SafeActionId{1});
    EXPECT_FALSE(g.safe_of_shared(0).has_value());
}

}  // namespace
