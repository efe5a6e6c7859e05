#include "desta/experiment.hpp"

#include "desta/analysis.hpp"
#include "desta/io.hpp"
#include "desta/solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

namespace desta {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kDefaultGameHorizon = 100;
constexpr std::size_t kObstacleRollouts = 100;

std::size_t default_trials(CheckKind check) {
    switch (check) {
        case CheckKind::lemmas:
            return 1000;
        case CheckKind::oracle:
            return 200;
        case CheckKind::obstacle:
        case CheckKind::kappa:
            return 50;
    }
    return 0;
}

json schedule_json(const ExplorationSchedule& s) {
    return {{"start", s.start}, {"end", s.end}, {"decay_fraction", s.decay_fraction}};
}

ExplorationSchedule schedule_from(const json& doc, ExplorationSchedule base) {
    for (const auto& [key, value] : doc.items()) {
        if (key == "start") {
            base.start = value.get<double>();
        } else if (key == "end") {
            base.end = value.get<double>();
        } else if (key == "decay_fraction") {
            base.decay_fraction = value.get<double>();
        } else {
            throw FormatError("unknown exploration key '" + key + "'");
        }
    }
    return base;
}

void learner_from(const json& doc, LearnerConfig& l) {
    for (const auto& [key, value] : doc.items()) {
        if (key == "alpha") {
            l.alpha = value.get<double>();
        } else if (key == "alpha_decay") {
            l.alpha_decay = value.get<bool>();
        } else if (key == "epsilon") {
            l.task_epsilon = schedule_from(value, l.task_epsilon);
        } else if (key == "gate_epsilon") {
            l.gate_epsilon = schedule_from(value, l.gate_epsilon);
        } else if (key == "buffer_capacity") {
            l.buffer_capacity = value.get<std::size_t>();
        } else if (key == "batch_size") {
            l.batch_size = value.get<std::size_t>();
        } else if (key == "update_every") {
            l.update_every = value.get<std::size_t>();
        } else if (key == "cost_limit") {
            l.cost_limit = value.get<double>();
        } else if (key == "dual_step") {
            l.dual_step = value.get<double>();
        } else if (key == "lambda_init") {
            l.lambda_init = value.get<double>();
        } else {
            throw FormatError("unknown learner key '" + key + "'");
        }
    }
}

// The problem an algorithm runs on: a grid world or a game loaded from file.
struct Problem {
    std::optional<GridWorld> world;
    std::optional<TabularGame> file_game;
    double kappa = 0.0;
    double gamma = 0.0;
    SafetyObjective objective = SafetyObjective::cost;

    TabularGame game() const {
        if (world) {
            return as_tabular_game(*world, kappa, gamma);
        }
        TabularGame g = *file_game;
        g.kappa = kappa;
        g.gamma = gamma;
        return g;
    }
};

EnvSpec resolve_env_spec(const std::string& env) {
    if (auto spec = env_by_name(env)) {
        return *spec;
    }
    if (fs::exists(env)) {
        return env_spec_from_json(read_text(env));
    }
    throw FormatError("unknown environment '" + env + "'");
}

Problem resolve_problem(const ExperimentConfig& config) {
    Problem p;
    if (!config.env.empty()) {
        EnvSpec spec = resolve_env_spec(config.env);
        if (config.steps_per_episode > 0) {
            spec.step_cap = config.steps_per_episode;
        }
        p.kappa = config.kappa.value_or(spec.default_kappa);
        p.gamma = config.gamma.value_or(spec.default_gamma);
        p.objective = spec.objective;
        p.world.emplace(std::move(spec));
    } else {
        p.file_game = load_game(config.game_file);
        p.kappa = config.kappa.value_or(p.file_game->kappa);
        p.gamma = config.gamma.value_or(p.file_game->gamma);
        p.objective = p.file_game->objective;
    }
    return p;
}

std::string csv_header(const ExperimentConfig& resolved, std::optional<std::uint64_t> seed) {
    std::ostringstream out;
    out << "config: " << config_to_json(resolved) << '\n';
    out << "seeds:";
    for (std::size_t i = 0; i < resolved.seeds.size(); ++i) {
        out << (i == 0 ? " " : ",") << resolved.seeds[i];
    }
    if (seed) {
        out << "\nseed: " << *seed;
    }
    return out.str();
}

void write_stream(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    body(out);
}

int run_checks(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
    const std::uint64_t seed = config.seeds.front();
    const RandomGameOptions sizes;
    int status = 0;
    for (const CheckKind check : config.checks) {
        const std::size_t trials = config.trials.value_or(default_trials(check));
        std::vector<PropertyReport> reports;
        switch (check) {
            case CheckKind::lemmas:
                reports.push_back(contraction_check(trials, sizes, seed));
                reports.push_back(nonexpansive_check(trials, seed));
                reports.push_back(max_lemma_check(trials, seed));
                break;
            case CheckKind::oracle:
                reports.push_back(oracle_equivalence_check(trials, sizes, seed));
                break;
            case CheckKind::obstacle:
                reports.push_back(obstacle_suite(trials, kObstacleRollouts, sizes, seed));
                break;
            case CheckKind::kappa:
                reports.push_back(kappa_threshold_check(trials, sizes, seed));
                break;
        }
        for (const PropertyReport& r : reports) {
            write_text(out_dir / ("property_" + r.property + ".json"), property_report_to_json(r));
            log << (r.passed() ? "PASS " : "FAIL ") << r.property << ": " << r.violations << '/'
                << r.trials << " violations, worst margin "
                << (r.trials > 0 ? format_number(r.worst_margin) : "n/a") << '\n';
            for (const std::string& note : r.notes) {
                log << "  " << note << '\n';
            }
            if (!r.passed()) {
                status = 1;
            }
        }
    }
    return status;
}

// Follows the deterministic DP policy from the start state and lists the
// cells where the gate fires.
void describe_dp_path(const GridWorld& world, const SolveReport& solved, std::ostream& log) {
    const std::size_t n_task = world.n_task_actions();
    StateId s = world.start_state();
    std::map<std::size_t, char> overlay;
    std::vector<std::size_t> gated_cells;
    for (std::size_t t = 0; t < world.spec().step_cap && !world.is_terminal(s); ++t) {
        const std::size_t cell = world.location(s);
        std::size_t row = 0;
        if (solved.policy.gate[s.value] != 0) {
            row = world.safe_to_shared()[solved.policy.safe[s.value].value];
            gated_cells.push_back(cell);
            overlay[cell] = 'I';
        } else {
            row = solved.policy.task_action(s.value, n_task).value_or(0);
            if (!overlay.contains(cell)) {
                overlay[cell] = '*';
            }
        }
        s = world.transition(s, row).next;
    }
    log << "dp path from start (" << (world.spec().start % world.spec().width) << ", "
        << (world.spec().start / world.spec().width) << "): " << gated_cells.size()
        << " interventions";
    for (const std::size_t cell : gated_cells) {
        log << " (" << cell % world.spec().width << ", " << cell / world.spec().width << ")";
    }
    log << "\n" << render(world.spec(), overlay);
}

int run_dp(const Problem& problem, const fs::path& out_dir, std::ostream& log) {
    const TabularGame game = problem.game();
    const SolveOptions options;
    const SolveReport solved = solve_game(game, options);
    write_text(out_dir / "solve_report.json", solve_report_to_json(game, solved, options.tol_gate));
    const auto gated = std::count(solved.policy.gate.begin(), solved.policy.gate.end(), 1);
    log << "dp: " << game.n_states << " states, " << (solved.converged ? "converged" : "NOT converged")
        << " after " << solved.br_cycles << " best-response rounds, residual "
        << format_number(solved.final_residual) << ", gate fires in " << gated << " states\n";
    if (problem.world) {
        log << "v1(start) = " << format_number(solved.value_tables.v1[0])
            << ", v2(start) = " << format_number(solved.value_tables.v2[0]) << '\n';
        describe_dp_path(*problem.world, solved, log);
    }
    return 0;
}

int run_learners(const ExperimentConfig& resolved, const Problem& problem,
                 const fs::path& out_dir, std::ostream& log) {
    std::unique_ptr<Environment> env;
    if (problem.world) {
        env = std::make_unique<GridWorld>(*problem.world);
    } else {
        const std::size_t horizon =
            resolved.steps_per_episode > 0 ? resolved.steps_per_episode : kDefaultGameHorizon;
        env = std::make_unique<GameEnvironment>(problem.game(), StateId{resolved.start_state},
                                                horizon);
    }
    const Algorithm algorithm = *resolved.algorithm;
    std::vector<MetricsLog> training;
    std::vector<MetricsLog> evaluation;
    std::vector<WindowStats> windows;
    std::vector<WindowStats> eval_windows;

    // Seeds run one after another; each owns its learner and random streams.
    for (const std::uint64_t seed : resolved.seeds) {
        LearnerConfig lc = resolved.learner;
        lc.episodes = resolved.episodes;
        lc.seed = seed;
        lc.kappa = problem.kappa;
        lc.gamma = problem.gamma;
        lc.objective = problem.objective;

        TrainingResult result;
        switch (algorithm) {
            case Algorithm::desta:
                result = desta_train(*env, lc);
                break;
            case Algorithm::q:
                result = baseline_q(*env, lc);
                break;
            case Algorithm::lagrangian:
                result = baseline_lagrangian(*env, lc);
                break;
            case Algorithm::dp:
                return 2;
        }
        write_stream(out_dir / ("metrics_seed" + std::to_string(seed) + ".csv"),
                     [&](std::ostream& out) {
                         write_metrics_csv(out, result.log, csv_header(resolved, seed));
                     });
        const double eval_epsilon = lc.task_epsilon.end;
        MetricsLog eval = algorithm == Algorithm::desta
                              ? evaluate_desta(*env, result.learner, resolved.eval_episodes,
                                               eval_epsilon, seed)
                              : evaluate_single(*env, result.learner, resolved.eval_episodes,
                                                eval_epsilon, seed);
        windows.push_back(final_window(result.log, resolved.window));
        eval_windows.push_back(final_window(eval, eval.episodes.size()));
        const WindowStats& w = windows.back();
        log << to_string(algorithm) << " seed " << seed << ": final " << resolved.window
            << " episodes safe-goal rate " << format_number(w.safe_goal_rate) << ", cost "
            << format_number(w.safety_cost) << ", return " << format_number(w.episode_return)
            << ", interventions " << format_number(w.interventions) << '\n';
        training.push_back(std::move(result.log));
        evaluation.push_back(std::move(eval));
    }

    const std::string header = csv_header(resolved, std::nullopt);
    const MetricsSummary summary = aggregate_metrics(training, env->n_states());
    write_stream(out_dir / "summary.csv",
                 [&](std::ostream& out) { write_summary_csv(out, summary, header); });
    const MetricsSummary eval_summary = aggregate_metrics(evaluation, env->n_states());
    write_stream(out_dir / "intervention_histogram.csv", [&](std::ostream& out) {
        out << "# " << "config: " << config_to_json(resolved) << '\n';
        out << "# evaluation interventions over " << resolved.eval_episodes
            << " episodes per seed\n";
        write_histogram_csv(out, eval_summary.histogram, env.get());
    });
    write_stream(out_dir / "final_window.csv", [&](std::ostream& out) {
        std::istringstream lines(header);
        for (std::string line; std::getline(lines, line);) {
            out << "# " << line << '\n';
        }
        out << "seed,safe_goal_rate,safety_cost,return,interventions,eval_safe_goal_rate,"
               "eval_safety_cost,eval_interventions\n";
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const WindowStats& w = windows[i];
            const WindowStats& e = eval_windows[i];
            out << resolved.seeds[i] << ',' << format_number(w.safe_goal_rate) << ','
                << format_number(w.safety_cost) << ',' << format_number(w.episode_return) << ','
                << format_number(w.interventions) << ',' << format_number(e.safe_goal_rate) << ','
                << format_number(e.safety_cost) << ',' << format_number(e.interventions) << '\n';
        }
    });
    return 0;
}

}  // namespace

std::optional<Algorithm> algorithm_from_string(const std::string& text) {
    static const std::map<std::string, Algorithm> names{{"dp", Algorithm::dp},
                                                        {"desta", Algorithm::desta},
                                                        {"q", Algorithm::q},
                                                        {"lagrangian", Algorithm::lagrangian}};
    const auto it = names.find(text);
    return it == names.end() ? std::nullopt : std::optional(it->second);
}

std::optional<CheckKind> check_from_string(const std::string& text) {
    static const std::map<std::string, CheckKind> names{{"lemmas", CheckKind::lemmas},
                                                        {"oracle", CheckKind::oracle},
                                                        {"obstacle", CheckKind::obstacle},
                                                        {"kappa", CheckKind::kappa}};
    const auto it = names.find(text);
    return it == names.end() ? std::nullopt : std::optional(it->second);
}

std::string to_string(Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::dp:
            return "dp";
        case Algorithm::desta:
            return "desta";
        case Algorithm::q:
            return "q";
        case Algorithm::lagrangian:
            return "lagrangian";
    }
    return "?";
}

std::string to_string(CheckKind check) {
    switch (check) {
        case CheckKind::lemmas:
            return "lemmas";
        case CheckKind::oracle:
            return "oracle";
        case CheckKind::obstacle:
            return "obstacle";
        case CheckKind::kappa:
            return "kappa";
    }
    return "?";
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    auto parse_one = [](const std::string& token) {
        std::size_t used = 0;
        unsigned long long value = 0;
        try {
            value = std::stoull(token, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != token.size() || token.front() == '-') {
            throw std::invalid_argument("seed '" + token + "' is not a non-negative integer");
        }
        return static_cast<std::uint64_t>(value);
    };
    if (text.find(',') == std::string::npos) {
        const std::uint64_t count = parse_one(text);
        for (std::uint64_t k = 0; k < count; ++k) {
            seeds.push_back(k);
        }
        return seeds;
    }
    std::istringstream in(text);
    for (std::string token; std::getline(in, token, ',');) {
        seeds.push_back(parse_one(token));
    }
    return seeds;
}

std::vector<std::string> validate_config(const ExperimentConfig& c) {
    std::vector<std::string> errors;
    if (!c.algorithm && c.checks.empty()) {
        errors.emplace_back("nothing to do: set an algorithm (--algo) or a check (--check)");
    }
    if (c.seeds.empty()) {
        errors.emplace_back("seeds: the seed list is empty");
    }
    if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
        errors.emplace_back("seeds: duplicate seeds would overwrite each other's metrics");
    }
    if (c.kappa && !(*c.kappa >= 0.0)) {
        errors.emplace_back("kappa: must be >= 0");
    }
    if (c.gamma && !(*c.gamma >= 0.0 && *c.gamma < 1.0)) {
        errors.emplace_back("gamma: must lie in [0, 1)");
    }
    if (c.trials && *c.trials == 0) {
        errors.emplace_back("trials: must be positive");
    }
    if (c.out_dir.empty()) {
        errors.emplace_back("out: output directory is empty");
    }
    if (c.algorithm) {
        if (c.env.empty() == c.game_file.empty()) {
            errors.emplace_back("env/game: give exactly one of an environment or a game file");
        } else if (!c.env.empty() && !env_by_name(c.env) && !fs::exists(c.env)) {
            std::string known;
            for (const auto& name : env_names()) {
                known += (known.empty() ? "" : ", ") + name;
            }
            errors.emplace_back("env: unknown environment '" + c.env + "' (known: " + known + ")");
        } else if (!c.game_file.empty() && !fs::exists(c.game_file)) {
            errors.emplace_back("game: file '" + c.game_file + "' does not exist");
        }
        const bool intervenes = *c.algorithm == Algorithm::dp || *c.algorithm == Algorithm::desta;
        if (intervenes && c.kappa && *c.kappa == 0.0 && !c.diagnostic) {
            errors.emplace_back(
                "kappa: intervention decisions need kappa > 0 (set diagnostic to allow 0)");
        }
        if (*c.algorithm != Algorithm::dp) {
            const LearnerConfig& l = c.learner;
            if (c.episodes == 0) {
                errors.emplace_back("episodes: must be positive");
            }
            if (!(l.alpha > 0.0 && l.alpha <= 1.0)) {
                errors.emplace_back("learner.alpha: must lie in (0, 1]");
            }
            for (const auto& [name, s] : {std::pair{"epsilon", &l.task_epsilon},
                                          std::pair{"gate_epsilon", &l.gate_epsilon}}) {
                if (!(s->start >= 0.0 && s->start <= 1.0 && s->end >= 0.0 && s->end <= 1.0 &&
                      s->decay_fraction >= 0.0)) {
                    errors.emplace_back(std::string("learner.") + name +
                                        ": rates must lie in [0, 1], decay fraction >= 0");
                }
            }
            if (l.buffer_capacity == 0 || l.batch_size == 0 || l.update_every == 0) {
                errors.emplace_back(
                    "learner: buffer_capacity, batch_size and update_every must be positive");
            }
            if (*c.algorithm == Algorithm::lagrangian &&
                !(l.cost_limit >= 0.0 && l.dual_step > 0.0)) {
                errors.emplace_back("learner: lagrangian needs cost_limit >= 0 and dual_step > 0");
            }
        }
    }
    return errors;
}

ExperimentConfig config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("malformed config: ") + e.what());
    }
    if (!doc.is_object()) {
        throw FormatError("config must be a JSON object");
    }
    ExperimentConfig c;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "env") {
                c.env = value.get<std::string>();
            } else if (key == "game") {
                c.game_file = value.get<std::string>();
            } else if (key == "algo") {
                if (value.is_null()) {
                    continue;
                }
                c.algorithm = algorithm_from_string(value.get<std::string>());
                if (!c.algorithm) {
                    throw FormatError("unknown algorithm '" + value.get<std::string>() +
                                      "' (expected dp, desta, q or lagrangian)");
                }
            } else if (key == "check") {
                const json list = value.is_array() ? value : json::array({value});
                for (const json& item : list) {
                    const auto check = check_from_string(item.get<std::string>());
                    if (!check) {
                        throw FormatError("unknown check '" + item.get<std::string>() +
                                          "' (expected lemmas, oracle, obstacle or kappa)");
                    }
                    c.checks.push_back(*check);
                }
            } else if (key == "episodes") {
                c.episodes = value.get<std::size_t>();
            } else if (key == "steps") {
                c.steps_per_episode = value.get<std::size_t>();
            } else if (key == "seeds") {
                c.seeds = value.is_string() ? parse_seeds(value.get<std::string>())
                                            : value.get<std::vector<std::uint64_t>>();
            } else if (key == "kappa") {
                if (!value.is_null()) c.kappa = value.get<double>();
            } else if (key == "gamma") {
                if (!value.is_null()) c.gamma = value.get<double>();
            } else if (key == "diagnostic") {
                c.diagnostic = value.get<bool>();
            } else if (key == "trials") {
                if (!value.is_null()) c.trials = value.get<std::size_t>();
            } else if (key == "eval_episodes") {
                c.eval_episodes = value.get<std::size_t>();
            } else if (key == "window") {
                c.window = value.get<std::size_t>();
            } else if (key == "start_state") {
                c.start_state = value.get<std::size_t>();
            } else if (key == "out") {
                c.out_dir = value.get<std::string>();
            } else if (key == "learner") {
                learner_from(value, c.learner);
            } else {
                throw FormatError("unknown config key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    return c;
}

std::string config_to_json(const ExperimentConfig& c, bool pretty) {
    json doc;
    doc["env"] = c.env;
    doc["game"] = c.game_file;
    doc["algo"] = c.algorithm ? json(to_string(*c.algorithm)) : json(nullptr);
    json checks = json::array();
    for (const CheckKind k : c.checks) {
        checks.push_back(to_string(k));
    }
    doc["check"] = std::move(checks);
    doc["episodes"] = c.episodes;
    doc["steps"] = c.steps_per_episode;
    doc["seeds"] = c.seeds;
    doc["kappa"] = c.kappa ? json(*c.kappa) : json(nullptr);
    doc["gamma"] = c.gamma ? json(*c.gamma) : json(nullptr);
    doc["diagnostic"] = c.diagnostic;
    doc["trials"] = c.trials ? json(*c.trials) : json(nullptr);
    doc["eval_episodes"] = c.eval_episodes;
    doc["window"] = c.window;
    doc["start_state"] = c.start_state;
    doc["out"] = c.out_dir;
    const LearnerConfig& l = c.learner;
    doc["learner"] = {{"alpha", l.alpha},
                      {"alpha_decay", l.alpha_decay},
                      {"epsilon", schedule_json(l.task_epsilon)},
                      {"gate_epsilon", schedule_json(l.gate_epsilon)},
                      {"buffer_capacity", l.buffer_capacity},
                      {"batch_size", l.batch_size},
                      {"update_every", l.update_every},
                      {"cost_limit", l.cost_limit},
                      {"dual_step", l.dual_step},
                      {"lambda_init", l.lambda_init}};
    return pretty ? doc.dump(2) : doc.dump();
}

int run_experiment(const ExperimentConfig& config, std::ostream& log, std::ostream& err) {
    if (const auto errors = validate_config(config); !errors.empty()) {
        for (const std::string& e : errors) {
            err << "config error: " << e << '\n';
        }
        return 2;
    }
    const fs::path out_dir(config.out_dir);
    try {
        fs::create_directories(out_dir);
    } catch (const fs::filesystem_error& e) {
        err << "cannot create output directory: " << e.what() << '\n';
        return 2;
    }

    int status = 0;
    try {
        if (!config.checks.empty()) {
            status = std::max(status, run_checks(config, out_dir, log));
        }
        if (config.algorithm) {
            const Problem problem = resolve_problem(config);
            ExperimentConfig resolved = config;
            resolved.kappa = problem.kappa;
            resolved.gamma = problem.gamma;
            if (problem.kappa == 0.0 && !config.diagnostic &&
                (*config.algorithm == Algorithm::dp || *config.algorithm == Algorithm::desta)) {
                err << "config error: kappa: intervention decisions need kappa > 0\n";
                return 2;
            }
            if (problem.file_game && config.start_state >= problem.file_game->n_states) {
                err << "config error: start_state: outside the game's states\n";
                return 2;
            }
            write_text(out_dir / "config.json", config_to_json(resolved, true));
            const int algo_status = *config.algorithm == Algorithm::dp
                                        ? run_dp(problem, out_dir, log)
                                        : run_learners(resolved, problem, out_dir, log);
            status = std::max(status, algo_status);
        }
    } catch (const FormatError& e) {
        err << "input error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "invalid input: " << e.what() << '\n';
        return 2;
    } catch (const std::length_error& e) {
        err << "state space too large: " << e.what() << '\n';
        return 2;
    }
    return status;
}

}  // namespace desta
