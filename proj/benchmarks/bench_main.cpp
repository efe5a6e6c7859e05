#include "desta/analysis.hpp"
#include "desta/envs.hpp"
#include "desta/learners.hpp"
#include "desta/solver.hpp"

#include <benchmark/benchmark.h>

namespace {

const desta::TabularGame& t_junction_game() {
    static const desta::TabularGame game = desta::as_tabular_game(desta::t_junction(), 0.5, 0.99);
    return game;
}

desta::TabularGame small_game(std::uint64_t seed) {
    desta::Rng rng(seed);
    desta::RandomGameOptions options;
    options.min_states = options.max_states = 4;
    options.min_task_actions = options.max_task_actions = 3;
    options.min_safe_actions = options.max_safe_actions = 3;
    options.layout = desta::SafeLayout::subset;
    return desta::random_game(options, rng);
}

void BM_BellmanBackup(benchmark::State& state) {
    const auto& game = t_junction_game();
    const auto mode = desta::BackupMode::maximise();
    std::vector<double> v(game.n_states, 0.0);
    for (auto _ : state) {
        v = desta::bellman_backup(game, v, mode);
        benchmark::DoNotOptimize(v.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(game.n_states));
}
BENCHMARK(BM_BellmanBackup);

void BM_EvaluatePolicies(benchmark::State& state) {
    const auto& game = t_junction_game();
    const auto policy = desta::JointPolicy::uniform(game);
    for (auto _ : state) {
        benchmark::DoNotOptimize(desta::evaluate_policies(game, policy));
    }
}
BENCHMARK(BM_EvaluatePolicies)->Unit(benchmark::kMicrosecond);

void BM_SolveTJunction(benchmark::State& state) {
    const auto& game = t_junction_game();
    for (auto _ : state) {
        benchmark::DoNotOptimize(desta::solve_game(game));
    }
}
BENCHMARK(BM_SolveTJunction)->Unit(benchmark::kMillisecond);

void BM_BruteForceFixed(benchmark::State& state) {
    const auto game = small_game(7);
    desta::Rng rng(8);
    const auto task = desta::random_task_policy(game, rng, false);
    for (auto _ : state) {
        benchmark::DoNotOptimize(desta::brute_force_solver(game, task));
    }
}
BENCHMARK(BM_BruteForceFixed)->Unit(benchmark::kMillisecond);

void BM_DestaTrainTJunction(benchmark::State& state) {
    const desta::GridWorld world(desta::t_junction());
    desta::LearnerConfig config;
    config.episodes = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(desta::desta_train(world, config));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DestaTrainTJunction)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_TdUpdate(benchmark::State& state) {
    const desta::GridWorld world(desta::t_junction());
    desta::LearnerConfig config;
    auto learner = desta::LearnerState::create(world, config);
    desta::ReplayBuffer buffer(1024);
    desta::Rng rng(3);
    desta::EpisodeState episode = world.reset(rng);
    while (buffer.size() < 1024) {
        if (episode.done) {
            episode = world.reset(rng);
        }
        const desta::StateId s = episode.state;
        const auto choice = desta::act(learner, s);
        const auto outcome = world.step(episode, choice.applied_action, rng);
        desta::record(buffer, learner, s, choice, outcome);
    }
    const auto batch = buffer.sample(64, rng);
    for (auto _ : state) {
        desta::td_update(learner, batch);
    }
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TdUpdate);

}  // namespace
BENCHMARK_MAIN();
