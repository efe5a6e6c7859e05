#include "desta/analysis.hpp"
#include "desta/envs.hpp"
#include "desta/io.hpp"
#include "desta/learners.hpp"
#include "desta/metrics.hpp"
#include "desta/solver.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

namespace {

using namespace desta;

void expect_same_game(const TabularGame& a, const TabularGame& b) {
    EXPECT_EQ(a.n_states, b.n_states);
    EXPECT_EQ(a.n_task_actions, b.n_task_actions);
    EXPECT_EQ(a.n_safe_actions, b.n_safe_actions);
    EXPECT_EQ(a.safe_to_shared, b.safe_to_shared);
    EXPECT_EQ(a.transition, b.transition);
    EXPECT_EQ(a.reward, b.reward);
    ASSERT_EQ(a.cost_lottery.size(), b.cost_lottery.size());
    for (std::size_t i = 0; i < a.cost_lottery.size(); ++i) {
        EXPECT_EQ(a.cost_lottery[i].probability, b.cost_lottery[i].probability);
        EXPECT_EQ(a.cost_lottery[i].magnitude, b.cost_lottery[i].magnitude);
    }
    EXPECT_EQ(a.safe_reward, b.safe_reward);
    EXPECT_EQ(a.kappa, b.kappa);
    EXPECT_EQ(a.gamma, b.gamma);
    EXPECT_EQ(a.objective, b.objective);
}

TEST(GameJson, RandomGamesRoundTripExactly) {
    Rng rng(1);
    RandomGameOptions o;
    o.gamma.reset();
    for (int trial = 0; trial < 100; ++trial) {
        const TabularGame g = random_game(o, rng);
        expect_same_game(g, game_from_json(game_to_json(g)));
    }
}

TEST(GameJson, LargeExportUsesSparseRowsAndRoundTrips) {
    const TabularGame g = as_tabular_game(t_junction(), 0.5, 0.99);
    const std::string text = game_to_json(g);
    expect_same_game(g, game_from_json(text));
}

TEST(GameJson, MinimalDocument) {
    const TabularGame g = game_from_json(R"({
        "states": 1, "task_actions": 1, "safe_actions": 1,
        "safe_action_map": [1],
        "gamma": 0.5, "kappa": 0.1,
        "transition": [[[1.0], {"0": 1.0}]],
        "reward": [[1.0, 0.0]],
        "cost_lottery": [[1.0, {"probability": 0.25, "magnitude": 4.0}]]
    })");
    EXPECT_EQ(g.n_shared_actions, 2u);
    EXPECT_DOUBLE_EQ(g.cost(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(g.lottery(0, 1).probability, 0.25);
    EXPECT_DOUBLE_EQ(g.cost(0, 1), 1.0);
    EXPECT_EQ(g.objective, SafetyObjective::cost);
}

TEST(GameJson, DefaultSafeMapReusesTaskRows) {
    const TabularGame g = game_from_json(R"({
        "states": 1, "task_actions": 2, "safe_actions": 1, "gamma": 0.9, "kappa": 0.5,
        "transition": [[[1.0], [1.0]]], "reward": [[0, 0]], "cost_lottery": [[0, 0]],
        "safety_objective": "task_reward"
    })");
    EXPECT_EQ(g.safe_to_shared, std::vector<std::size_t>{0});
    EXPECT_EQ(g.objective, SafetyObjective::task_reward);
}

TEST(GameJson, ErrorsNameTheProblem) {
    const auto message = [](const std::string& text) {
        try {
            game_from_json(text);
        } catch (const FormatError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("{").find("malformed JSON"), std::string::npos);
    EXPECT_NE(message(R"({"states": 1})").find("missing key"), std::string::npos);
    const std::string short_row = R"({
        "states": 1, "task_actions": 1, "safe_actions": 1, "gamma": 0.9, "kappa": 0.5,
        "transition": [[[0.9]]], "reward": [[0]], "cost_lottery": [[0]]
    })";
    EXPECT_NE(message(short_row).find("does not sum to 1"), std::string::npos);
    EXPECT_NE(message(short_row).find("state 0"), std::string::npos);
    EXPECT_THROW(load_game("/nonexistent/game.json"), FormatError);
}

TEST(GameJson, SaveAndLoadFile) {
    const auto path = std::filesystem::temp_directory_path() / "desta_io_test_game.json";
    const TabularGame g = fixtures::self_loop();
    save_game(path, g);
    expect_same_game(g, load_game(path));
    std::filesystem::remove(path);
}

TEST(EnvSpecJson, RoundTripsEveryBuiltIn) {
    for (const std::string& name : env_names()) {
        const EnvSpec spec = *env_by_name(name);
        const EnvSpec back = env_spec_from_json(env_spec_to_json(spec));
        EXPECT_EQ(render(back), render(spec)) << name;
        EXPECT_EQ(back.start, spec.start);
        EXPECT_EQ(back.task_moves, spec.task_moves);
        EXPECT_EQ(back.safe_moves, spec.safe_moves);
        EXPECT_EQ(back.objective, spec.objective);
        // Identical dynamics once exported.
        expect_same_game(as_tabular_game(back, 0.5, 0.9), as_tabular_game(spec, 0.5, 0.9));
    }
}

TEST(SolveReportJson, CarriesValuesPolicyAndTrace) {
    const TabularGame g = fixtures::self_loop(0.1, 0.5);
    const SolveReport r = solve_game(g);
    const std::string text = solve_report_to_json(g, r);
    for (const char* key : {"\"converged\"", "\"residuals\"", "\"v2\"", "\"gate\"", "\"stopping_set\"",
                            "\"tol_gate\""}) {
        EXPECT_NE(text.find(key), std::string::npos) << key;
    }
}

TEST(LearnerSnapshot, RoundTripContinuesIdentically) {
    const GridWorld world(t_junction());
    LearnerConfig c;
    c.episodes = 50;
    c.objective = SafetyObjective::task_reward;
    TrainingResult r = desta_train(world, c);
    LearnerState restored = learner_snapshot_from_json(learner_snapshot_to_json(r.learner));
    EXPECT_EQ(restored.q_task, r.learner.q_task);
    EXPECT_EQ(restored.q_safe, r.learner.q_safe);
    EXPECT_EQ(restored.q_int, r.learner.q_int);
    EXPECT_EQ(restored.visits_int, r.learner.visits_int);
    EXPECT_EQ(restored.steps, r.learner.steps);
    EXPECT_EQ(restored.objective, SafetyObjective::task_reward);
    EXPECT_EQ(restored.rng.draws(), r.learner.rng.draws());
    for (int i = 0; i < 50; ++i) {
        const StateId s{static_cast<std::size_t>(i) % world.n_states()};
        ASSERT_EQ(act(restored, s).applied_action, act(r.learner, s).applied_action);
    }
}

TEST(PropertyReportJson, HasVerdict) {
    PropertyReport p;
    p.property = "demo";
    p.observe(2.0, 1.0, 0.0, "broken");
    const std::string text = property_report_to_json(p);
    EXPECT_NE(text.find("\"passed\": false"), std::string::npos);
    EXPECT_NE(text.find("broken"), std::string::npos);
}

TEST(SafetyObjectiveText, RoundTrip) {
    for (SafetyObjective o : {SafetyObjective::cost, SafetyObjective::task_reward}) {
        EXPECT_EQ(safety_objective_from_string(to_string(o)), o);
    }
    EXPECT_THROW(safety_objective_from_string("speed"), FormatError);
}

TEST(MetricsCsv, RoundTrip) {
    MetricsLog log;
    log.has_lambda = true;
    for (std::size_t i = 0; i < 4; ++i) {
        log.episodes.push_back({i, 0.1 * static_cast<double>(i) + 1.0 / 3.0, 100.0 * static_cast<double>(i % 2),
                                i, i == 3, 0.05, 1e-17 * static_cast<double>(i)});
    }
    std::stringstream buffer;
    write_metrics_csv(buffer, log, "config: x\nseeds: 0");
    const std::string text = buffer.str();
    EXPECT_EQ(text.rfind("# config: x\n# seeds: 0\nepisode,return,safety_cost,interventions,safe_goal,epsilon,lambda\n", 0),
              0u);
    const MetricsLog back = read_metrics_csv(buffer);
    ASSERT_EQ(back.episodes.size(), 4u);
    EXPECT_TRUE(back.has_lambda);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.episodes[i].episode_return, log.episodes[i].episode_return);
        EXPECT_EQ(back.episodes[i].lambda, log.episodes[i].lambda);
        EXPECT_EQ(back.episodes[i].safe_goal, log.episodes[i].safe_goal);
    }
}

TEST(MetricsCsv, NumbersRoundTrip) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-1e6, 1e6) * std::pow(10.0, static_cast<double>(rng.index(20)) - 10.0);
        EXPECT_EQ(std::stod(format_number(x)), x);
    }
    EXPECT_EQ(format_number(0.5), "0.5");
}

}  // namespace
