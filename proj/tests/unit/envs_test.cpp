#include "desta/envs.hpp"
#include "desta/solver.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace {

using namespace desta;

constexpr std::size_t kUp = 0, kDown = 1, kLeft = 2, kRight = 3;

// Drives the simulator along a fixed move list from the start state.
struct Walk {
    std::vector<StepOutcome> outcomes;
    EpisodeState episode;
};

Walk walk(const Environment& env, const std::vector<std::size_t>& moves, std::uint64_t seed) {
    Rng rng(seed);
    Walk w;
    w.episode = env.reset(rng);
    for (std::size_t m : moves) {
        if (w.episode.done) break;
        w.outcomes.push_back(env.step(w.episode, m, rng));
    }
    return w;
}

std::vector<std::size_t> repeat(std::size_t move, std::size_t n) { return std::vector<std::size_t>(n, move); }

std::vector<std::size_t> concat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

TEST(Registry, KnowsAllEnvironments) {
    EXPECT_EQ(env_names(), (std::vector<std::string>{"t_junction", "bridge", "plane"}));
    for (const std::string& name : env_names()) {
        const auto spec = env_by_name(name);
        ASSERT_TRUE(spec.has_value());
        EXPECT_TRUE(validate_env(*spec).empty()) << name;
    }
    EXPECT_FALSE(env_by_name("nope").has_value());
}

TEST(TJunction, Geometry) {
    const EnvSpec spec = t_junction();
    EXPECT_EQ(spec.width, 11u);
    EXPECT_EQ(spec.height, 6u);
    EXPECT_EQ(spec.task_moves, spec.safe_moves);
    EXPECT_EQ(spec.task_moves.size(), 4u);
    EXPECT_TRUE(spec.cell(0, 0).safe_goal);
    EXPECT_TRUE(spec.cell(10, 0).terminal);
    EXPECT_FALSE(spec.cell(10, 0).safe_goal);
    for (std::size_t x = 6; x <= 10; ++x) {
        EXPECT_DOUBLE_EQ(spec.cell(x, 0).lottery.probability, 0.1);
        EXPECT_DOUBLE_EQ(spec.cell(x, 0).lottery.magnitude, 100.0);
    }
    for (std::size_t x = 0; x <= 5; ++x) EXPECT_DOUBLE_EQ(spec.cell(x, 0).lottery.expected(), 0.0);
    EXPECT_EQ(render(spec).substr(0, 11), "G.....!!!!X");
}

TEST(TJunction, SafeGoalEntryPaysFiftyAndEnds) {
    const GridWorld world(t_junction());
    const Walk w = walk(world, concat(repeat(kUp, 5), repeat(kLeft, 5)), 1);
    ASSERT_EQ(w.outcomes.size(), 10u);
    EXPECT_DOUBLE_EQ(w.outcomes.front().reward, 10.0);
    EXPECT_DOUBLE_EQ(w.outcomes.back().reward, 50.0);
    EXPECT_TRUE(w.outcomes.back().done);
    EXPECT_TRUE(w.outcomes.back().terminal);
    EXPECT_TRUE(world.is_safe_goal(w.outcomes.back().next_state));
}

TEST(TJunction, UnsafeGoalPaysHundred) {
    const GridWorld world(t_junction());
    const Walk w = walk(world, concat(repeat(kUp, 5), repeat(kRight, 5)), 2);
    EXPECT_DOUBLE_EQ(w.outcomes.back().reward, 100.0);
    EXPECT_TRUE(w.outcomes.back().terminal);
    EXPECT_FALSE(world.is_safe_goal(w.outcomes.back().next_state));
}

TEST(TJunction, UnsafeCellCostLottery) {
    const GridWorld world(t_junction());
    std::size_t hits = 0;
    constexpr std::size_t n = 20000;
    for (std::uint64_t seed = 0; seed < n; ++seed) {
        const Walk w = walk(world, concat(repeat(kUp, 5), {kRight}), seed);
        const double c = w.outcomes.back().cost_sample;
        ASSERT_TRUE(c == 0.0 || c == 100.0);
        hits += c > 0.0;
    }
    EXPECT_NEAR(static_cast<double>(hits) / n, 0.1, 5 * std::sqrt(0.09 / n));
}

TEST(TJunction, UnsafeArmExpectedCostIsFifty) {
    const GridWorld world(t_junction());
    const Walk w = walk(world, repeat(kUp, 5), 0);
    StateId s = w.episode.state;
    double expected = 0.0;
    for (int i = 0; i < 5; ++i) {
        expected += world.expected_cost(s, kRight);
        s = world.transition(s, kRight).next;
    }
    EXPECT_DOUBLE_EQ(expected, 50.0);
}

TEST(TJunction, OneShotRewardIsPaidOnce) {
    const GridWorld world(t_junction());
    const Walk w = walk(world, {kUp, kDown, kUp, kLeft}, 0);
    EXPECT_DOUBLE_EQ(w.outcomes[0].reward, 10.0);
    EXPECT_DOUBLE_EQ(w.outcomes[1].reward, 0.0);  // the start cell counts as visited
    EXPECT_DOUBLE_EQ(w.outcomes[2].reward, 0.0);
    // Bumping into the wall stays put; the cell was already consumed.
    EXPECT_DOUBLE_EQ(w.outcomes[3].reward, 0.0);
    EXPECT_EQ(world.location(w.outcomes[3].next_state), world.location(w.outcomes[2].next_state));
}

TEST(TJunction, StepCapEndsEpisodeWithoutTerminal) {
    const GridWorld world(t_junction());
    const Walk w = walk(world, repeat(kDown, 200), 0);
    ASSERT_EQ(w.outcomes.size(), 100u);
    EXPECT_TRUE(w.outcomes.back().done);
    EXPECT_FALSE(w.outcomes.back().terminal);
    EXPECT_EQ(w.episode.steps, 100u);
}

TEST(Simulator, FixedSeedReproducesTrajectory) {
    const GridWorld world(t_junction());
    Rng pick(5);
    std::vector<std::size_t> moves;
    for (int i = 0; i < 100; ++i) moves.push_back(pick.index(4));
    const Walk a = walk(world, moves, 77);
    const Walk b = walk(world, moves, 77);
    ASSERT_EQ(a.outcomes.size(), b.outcomes.size());
    for (std::size_t i = 0; i < a.outcomes.size(); ++i) {
        EXPECT_EQ(a.outcomes[i].next_state, b.outcomes[i].next_state);
        EXPECT_EQ(a.outcomes[i].cost_sample, b.outcomes[i].cost_sample);
    }
}

TEST(Bridge, PitEndsWithCost) {
    const GridWorld world(bridge_grid());
    const Walk w = walk(world, {kRight, kRight, kRight, kUp}, 0);
    ASSERT_EQ(w.outcomes.size(), 4u);
    EXPECT_DOUBLE_EQ(w.outcomes.back().cost_sample, 100.0);
    EXPECT_TRUE(w.outcomes.back().done);
    EXPECT_TRUE(w.outcomes.back().terminal);
}

TEST(Bridge, GoalPaysHundred) {
    const GridWorld world(bridge_grid());
    const Walk w = walk(world, repeat(kRight, 8), 0);
    ASSERT_EQ(w.outcomes.size(), 8u);
    EXPECT_DOUBLE_EQ(w.outcomes.back().reward, 100.0);
    EXPECT_TRUE(w.outcomes.back().terminal);
    double cost = 0.0;
    for (const StepOutcome& o : w.outcomes) cost += o.cost_sample;
    EXPECT_EQ(cost, 0.0);
}

TEST(Plane, DiagonalMovesBothAxes) {
    const GridWorld world(plane_nav());
    const EnvSpec& spec = world.spec();
    EXPECT_EQ(spec.task_moves.size(), 4u);
    EXPECT_EQ(spec.safe_moves.size(), 8u);
    EXPECT_EQ(spec.objective, SafetyObjective::task_reward);
    for (std::size_t k = 0; k < world.n_safe_actions(); ++k) {
        const Move& m = spec.safe_moves[k];
        if (m.dx == 0 || m.dy == 0) continue;
        // From the centre a diagonal changes the Chebyshev distance to any
        // corner-aligned target by one in each axis.
        const std::size_t centre = spec.index(5, 5);
        const StateId s = world.states_at(centre).front();
        const std::size_t next = world.location(world.transition(s, world.safe_to_shared()[k]).next);
        EXPECT_EQ(std::abs(static_cast<int>(next % 11) - 5), 1);
        EXPECT_EQ(std::abs(static_cast<int>(next / 11) - 5), 1);
    }
}

// Counts interventions and steps of the solved joint policy from the start.
std::pair<std::size_t, std::size_t> follow(const GridWorld& world, const TabularGame& g,
                                           const JointPolicy& p) {
    StateId s = world.start_state();
    std::size_t interventions = 0, steps = 0;
    while (!world.is_terminal(s) && steps < 100) {
        std::size_t a = *p.task_action(s.value, g.n_task_actions);
        if (p.gate[s.value]) {
            a = g.shared_of(p.safe[s.value]);
            ++interventions;
        }
        s = world.transition(s, a).next;
        ++steps;
    }
    return {interventions, steps};
}

TEST(Plane, FreeInterventionsTakeTheDiagonal) {
    const GridWorld world(plane_nav());
    const TabularGame g = as_tabular_game(world, 0.0, world.spec().default_gamma);
    const SolveReport r = solve_game(g);
    ASSERT_TRUE(r.converged);
    const auto [interventions, steps] = follow(world, g, r.policy);
    EXPECT_EQ(steps, 10u);
    EXPECT_EQ(interventions, 10u);
}

TEST(Plane, ExpensiveInterventionsLeaveCardinalPath) {
    const GridWorld world(plane_nav());
    const double gamma = world.spec().default_gamma;
    const TabularGame g = as_tabular_game(world, 1.0 / (1.0 - gamma) + 1.0, gamma);
    const SolveReport r = solve_game(g);
    ASSERT_TRUE(r.converged);
    EXPECT_TRUE(std::ranges::all_of(r.policy.gate, [](auto b) { return b == 0; }));
    const auto [interventions, steps] = follow(world, g, r.policy);
    EXPECT_EQ(interventions, 0u);
    EXPECT_EQ(steps, 20u);
}

TEST(Export, TJunctionIsValid) {
    const TabularGame g = as_tabular_game(t_junction(), 0.5, 0.99);
    EXPECT_TRUE(validate_game(g).empty());
    EXPECT_GT(g.n_states, 16u);
    EXPECT_EQ(g.n_shared_actions, 4u);
}

TEST(Export, PlaneHasNoSafetyCost) {
    const TabularGame g = as_tabular_game(plane_nav(), 0.1, 0.95);
    EXPECT_TRUE(validate_game(g).empty());
    EXPECT_TRUE(std::ranges::all_of(g.cost_lottery, [](const CostLottery& l) { return l.expected() == 0.0; }));
}

TEST(Export, StateCapIsEnforced) {
    EnvSpec spec = t_junction();
    spec.state_cap = 10;
    EXPECT_THROW(GridWorld{spec}, std::length_error);
}

TEST(ValidateEnv, RejectsStartInsideWall) {
    EnvSpec spec = t_junction();
    spec.start = spec.index(0, 5);
    EXPECT_FALSE(validate_env(spec).empty());
    spec = t_junction();
    spec.step_cap = 0;
    EXPECT_FALSE(validate_env(spec).empty());
}

TEST(GameEnvironment, SamplesTheGame) {
    TabularGame g = TabularGame::allocate(2, 1, {0});
    g.p(0, 0, 1) = 1.0;
    g.p(1, 0, 1) = 1.0;
    g.r(0, 0) = 3.0;
    g.lottery(0, 0) = {1.0, 2.0};
    const GameEnvironment env(g, StateId{0}, 5, {0, 1});
    Rng rng(0);
    EpisodeState e = env.reset(rng);
    const StepOutcome o = env.step(e, 0, rng);
    EXPECT_EQ(o.next_state, StateId{1});
    EXPECT_DOUBLE_EQ(o.reward, 3.0);
    EXPECT_DOUBLE_EQ(o.cost_sample, 2.0);
    EXPECT_TRUE(o.done);
    EXPECT_TRUE(o.terminal);
}

}  // namespace
