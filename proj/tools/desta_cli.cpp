// Command-line front end: `desta run`, `desta envs`, `desta export`.

#include "desta/envs.hpp"
#include "desta/experiment.hpp"
#include "desta/io.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

struct RunFlags {
    std::string config;
    std::string env;
    std::string game;
    std::string algo;
    std::vector<std::string> checks;
    std::string seeds;
    std::size_t episodes = 0;
    std::size_t steps = 0;
    double kappa = 0.0;
    double gamma = 0.0;
    std::string out;
    std::size_t trials = 0;
    std::size_t eval_episodes = 0;
    std::size_t window = 0;
    std::size_t start_state = 0;
    double cost_limit = 0.0;
    double dual_step = 0.0;
    bool diagnostic = false;
};

bool given(const CLI::App& app, const std::string& name) { return app.count(name) > 0; }

// Flag values override whatever the config file set.
int run(const CLI::App& app, const RunFlags& f) {
    desta::ExperimentConfig config;
    try {
        if (given(app, "--config")) {
            config = desta::config_from_json(desta::read_text(f.config));
        }
        if (given(app, "--env")) config.env = f.env;
        if (given(app, "--game")) config.game_file = f.game;
        if (given(app, "--algo")) {
            config.algorithm = desta::algorithm_from_string(f.algo);
            if (!config.algorithm) {
                std::cerr << "unknown algorithm '" << f.algo << "' (expected dp, desta, q or lagrangian)\n";
                return 2;
            }
        }
        if (given(app, "--check")) {
            config.checks.clear();
            for (const std::string& item : f.checks) {
                const auto check = desta::check_from_string(item);
                if (!check) {
                    std::cerr << "unknown check '" << item
                              << "' (expected lemmas, oracle, obstacle or kappa)\n";
                    return 2;
                }
                config.checks.push_back(*check);
            }
        }
        if (given(app, "--seeds")) config.seeds = desta::parse_seeds(f.seeds);
        if (given(app, "--episodes")) config.episodes = f.episodes;
        if (given(app, "--steps")) config.steps_per_episode = f.steps;
        if (given(app, "--kappa")) config.kappa = f.kappa;
        if (given(app, "--gamma")) config.gamma = f.gamma;
        if (given(app, "--out")) config.out_dir = f.out;
        if (given(app, "--trials")) config.trials = f.trials;
        if (given(app, "--eval-episodes")) config.eval_episodes = f.eval_episodes;
        if (given(app, "--window")) config.window = f.window;
        if (given(app, "--start-state")) config.start_state = f.start_state;
        if (given(app, "--cost-limit")) config.learner.cost_limit = f.cost_limit;
        if (given(app, "--dual-step")) config.learner.dual_step = f.dual_step;
        if (given(app, "--diagnostic")) config.diagnostic = f.diagnostic;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    return desta::run_experiment(config, std::cout, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-agent intervention games: exact solver, DESTA learners, property suites"};
    app.require_subcommand(1);

    RunFlags f;
    CLI::App* run_cmd = app.add_subcommand("run", "run an algorithm and/or property checks");
    run_cmd->add_option("--config", f.config, "JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--env", f.env, "environment name or environment JSON file");
    run_cmd->add_option("--game", f.game, "game JSON file")->check(CLI::ExistingFile);
    run_cmd->add_option("--algo", f.algo, "dp | desta | q | lagrangian");
    run_cmd->add_option("--check", f.checks, "lemmas | oracle | obstacle | kappa (repeatable)")
        ->delimiter(',');
    run_cmd->add_option("--seeds", f.seeds, "seed count N (seeds 0..N-1) or a comma list");
    run_cmd->add_option("--episodes", f.episodes, "training episodes per seed");
    run_cmd->add_option("--steps", f.steps, "episode step cap (0 keeps the default)");
    run_cmd->add_option("--kappa", f.kappa, "intervention cost");
    run_cmd->add_option("--gamma", f.gamma, "discount factor");
    run_cmd->add_option("--out", f.out, "output directory");
    run_cmd->add_option("--trials", f.trials, "trials (lemmas) or games (oracle, obstacle, kappa)");
    run_cmd->add_option("--eval-episodes", f.eval_episodes, "evaluation episodes after training");
    run_cmd->add_option("--window", f.window, "final-window length for summary statistics");
    run_cmd->add_option("--start-state", f.start_state, "start state for game-file learners");
    run_cmd->add_option("--cost-limit", f.cost_limit, "lagrangian per-episode cost limit");
    run_cmd->add_option("--dual-step", f.dual_step, "lagrangian dual step size");
    run_cmd->add_flag("--diagnostic", f.diagnostic, "allow kappa = 0 for dp and desta");

    bool render_maps = false;
    CLI::App* envs_cmd = app.add_subcommand("envs", "list built-in environments");
    envs_cmd->add_flag("--render", render_maps, "draw each grid");

    std::string export_env;
    std::string export_out;
    double export_kappa = -1.0;
    double export_gamma = -1.0;
    bool export_spec = false;
    CLI::App* export_cmd = app.add_subcommand("export", "write an environment as a game or spec JSON");
    export_cmd->add_option("--env", export_env, "environment name")->required();
    export_cmd->add_option("--out", export_out, "output file")->required();
    export_cmd->add_option("--kappa", export_kappa, "intervention cost (default: environment's)");
    export_cmd->add_option("--gamma", export_gamma, "discount (default: environment's)");
    export_cmd->add_flag("--spec", export_spec, "write the grid spec instead of the game");

    CLI11_PARSE(app, argc, argv);

    if (run_cmd->parsed()) {
        return run(*run_cmd, f);
    }
    if (envs_cmd->parsed()) {
        for (const std::string& name : desta::env_names()) {
            const desta::EnvSpec spec = *desta::env_by_name(name);
            std::cout << name << ": " << spec.width << "x" << spec.height << ", "
                      << spec.task_moves.size() << " task / " << spec.safe_moves.size()
                      << " safe moves, step cap " << spec.step_cap << ", kappa "
                      << spec.default_kappa << ", gamma " << spec.default_gamma << '\n';
            if (render_maps) {
                std::cout << desta::render(spec) << '\n';
            }
        }
        return 0;
    }
    if (export_cmd->parsed()) {
        const auto spec = desta::env_by_name(export_env);
        if (!spec) {
            std::cerr << "unknown environment '" << export_env << "'\n";
            return 2;
        }
        try {
            if (export_spec) {
                desta::write_text(export_out, desta::env_spec_to_json(*spec));
            } else {
                const double kappa = export_kappa >= 0.0 ? export_kappa : spec->default_kappa;
                const double gamma = export_gamma >= 0.0 ? export_gamma : spec->default_gamma;
                desta::save_game(export_out, desta::as_tabular_game(*spec, kappa, gamma));
            }
        } catch (const std::exception& e) {
            std::cerr << "export failed: " << e.what() << '\n';
            return 2;
        }
        return 0;
    }
    return 0;
}
