#include "desta/io.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace desta {

using nlohmann::json;

namespace {

constexpr std::size_t kDenseRowLimit = 16;

template <class T>
T require(const json& doc, const char* key) {
    if (!doc.contains(key)) {
        throw FormatError(std::string("missing key '") + key + "'");
    }
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("key '") + key + "': " + e.what());
    }
}

const json& require_array(const json& doc, const char* key, std::size_t size) {
    if (!doc.contains(key) || !doc.at(key).is_array()) {
        throw FormatError(std::string("key '") + key + "' must be an array");
    }
    const json& value = doc.at(key);
    if (value.size() != size) {
        throw FormatError(std::string("key '") + key + "' has " + std::to_string(value.size()) +
                          " entries, expected " + std::to_string(size));
    }
    return value;
}

double number(const json& value, const std::string& where) {
    if (!value.is_number()) {
        throw FormatError(where + " must be a number");
    }
    return value.get<double>();
}

json lottery_to_json(const CostLottery& l) {
    if (l.probability == 1.0) {
        return l.magnitude;
    }
    return json{{"probability", l.probability}, {"magnitude", l.magnitude}};
}

CostLottery lottery_from_json(const json& value, const std::string& where) {
    if (value.is_number()) {
        return CostLottery{1.0, value.get<double>()};
    }
    if (value.is_object()) {
        return CostLottery{number(value.value("probability", json(1.0)), where + ".probability"),
                           number(value.value("magnitude", json(0.0)), where + ".magnitude")};
    }
    throw FormatError(where + " must be a number or a {probability, magnitude} object");
}

json moves_to_json(const std::vector<Move>& moves) {
    json out = json::array();
    for (const Move& m : moves) {
        out.push_back({{"dx", m.dx}, {"dy", m.dy}, {"name", m.name}});
    }
    return out;
}

std::vector<Move> moves_from_json(const json& doc, const char* key) {
    std::vector<Move> moves;
    for (const json& m : require<json>(doc, key)) {
        moves.push_back({m.at("dx").get<int>(), m.at("dy").get<int>(), m.value("name", "")});
    }
    return moves;
}

json values_json(const std::vector<double>& v) { return json(v); }

json nested(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
    json out = json::array();
    for (std::size_t i = 0; i < rows; ++i) {
        out.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(i * cols),
                                          flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols)));
    }
    return out;
}

std::vector<double> flatten(const json& doc, const char* key, std::size_t rows, std::size_t cols) {
    const json& outer = require_array(doc, key, rows);
    std::vector<double> flat;
    flat.reserve(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!outer[i].is_array() || outer[i].size() != cols) {
            throw FormatError(std::string(key) + "[" + std::to_string(i) + "] must have " +
                              std::to_string(cols) + " entries");
        }
        for (std::size_t j = 0; j < cols; ++j) {
            flat.push_back(number(outer[i][j], std::string(key) + "[" + std::to_string(i) + "][" +
                                                   std::to_string(j) + "]"));
        }
    }
    return flat;
}

json parse(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("malformed JSON: ") + e.what());
    }
}

template <class T>
std::vector<T> vector_of(const json& doc, const char* key) {
    return require<std::vector<T>>(doc, key);
}

}  // namespace

std::string to_string(SafetyObjective objective) {
    return objective == SafetyObjective::cost ? "cost" : "task_reward";
}

SafetyObjective safety_objective_from_string(const std::string& text) {
    if (text == "cost") {
        return SafetyObjective::cost;
    }
    if (text == "task_reward") {
        return SafetyObjective::task_reward;
    }
    throw FormatError("unknown safety objective '" + text + "' (expected cost or task_reward)");
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot read " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << text;
    if (!text.empty() && text.back() != '\n') {
        out << '\n';
    }
}

std::string game_to_json(const TabularGame& game) {
    json doc;
    doc["states"] = game.n_states;
    doc["task_actions"] = game.n_task_actions;
    doc["safe_actions"] = game.n_safe_actions;
    doc["safe_action_map"] = game.safe_to_shared;
    doc["gamma"] = game.gamma;
    doc["kappa"] = game.kappa;
    doc["safety_objective"] = to_string(game.objective);

    const bool dense = game.n_states <= kDenseRowLimit;
    json transition = json::array();
    json reward = json::array();
    json lottery = json::array();
    for (std::size_t s = 0; s < game.n_states; ++s) {
        json rows = json::array();
        json rewards = json::array();
        json lotteries = json::array();
        for (std::size_t a = 0; a < game.n_shared_actions; ++a) {
            const auto row = game.row(s, a);
            if (dense) {
                rows.push_back(std::vector<double>(row.begin(), row.end()));
            } else {
                json sparse = json::object();
                for (std::size_t next = 0; next < game.n_states; ++next) {
                    if (row[next] != 0.0) {
                        sparse[std::to_string(next)] = row[next];
                    }
                }
                rows.push_back(std::move(sparse));
            }
            rewards.push_back(game.r(s, a));
            lotteries.push_back(lottery_to_json(game.lottery(s, a)));
        }
        transition.push_back(std::move(rows));
        reward.push_back(std::move(rewards));
        lottery.push_back(std::move(lotteries));
    }
    doc["transition"] = std::move(transition);
    doc["reward"] = std::move(reward);
    doc["cost_lottery"] = std::move(lottery);
    if (!game.shared_reward()) {
        doc["safe_reward"] = nested(game.safe_reward, game.n_states, game.n_safe_actions);
    }
    return doc.dump(1);
}

TabularGame game_from_json(const std::string& text) {
    const json doc = parse(text);
    if (!doc.is_object()) {
        throw FormatError("game document must be a JSON object");
    }
    const auto n = require<std::size_t>(doc, "states");
    const auto n_task = require<std::size_t>(doc, "task_actions");
    const auto n_safe = require<std::size_t>(doc, "safe_actions");
    if (n == 0 || n_task == 0 || n_safe == 0) {
        throw FormatError("states, task_actions and safe_actions must be positive");
    }
    std::vector<std::size_t> map;
    if (doc.contains("safe_action_map")) {
        map = require<std::vector<std::size_t>>(doc, "safe_action_map");
        if (map.size() != n_safe) {
            throw FormatError("safe_action_map must have one entry per safe action");
        }
    } else if (n_safe <= n_task) {
        for (std::size_t k = 0; k < n_safe; ++k) {
            map.push_back(k);
        }
    } else {
        map = TabularGame::disjoint_safe_map(n_task, n_safe);
    }
    for (const std::size_t row : map) {
        if (row > n_task + n_safe) {
            throw FormatError("safe_action_map entry " + std::to_string(row) + " leaves gaps");
        }
    }

    TabularGame game = TabularGame::allocate(n, n_task, std::move(map));
    game.gamma = require<double>(doc, "gamma");
    game.kappa = require<double>(doc, "kappa");
    if (doc.contains("safety_objective")) {
        game.objective = safety_objective_from_string(require<std::string>(doc, "safety_objective"));
    }

    const std::size_t rows = game.n_shared_actions;
    const json& transition = require_array(doc, "transition", n);
    const json& reward = require_array(doc, "reward", n);
    const json& lottery = require_array(doc, "cost_lottery", n);
    for (std::size_t s = 0; s < n; ++s) {
        const std::string at_s = "[" + std::to_string(s) + "]";
        if (!transition[s].is_array() || transition[s].size() != rows) {
            throw FormatError("transition" + at_s + " must have " + std::to_string(rows) +
                              " action rows");
        }
        if (!reward[s].is_array() || reward[s].size() != rows) {
            throw FormatError("reward" + at_s + " must have " + std::to_string(rows) + " entries");
        }
        if (!lottery[s].is_array() || lottery[s].size() != rows) {
            throw FormatError("cost_lottery" + at_s + " must have " + std::to_string(rows) +
                              " entries");
        }
        for (std::size_t a = 0; a < rows; ++a) {
            const std::string where = at_s + "[" + std::to_string(a) + "]";
            const json& row = transition[s][a];
            auto target = game.row(s, a);
            if (row.is_array()) {
                if (row.size() != n) {
                    throw FormatError("transition" + where + " must have " + std::to_string(n) +
                                      " probabilities");
                }
                for (std::size_t next = 0; next < n; ++next) {
                    target[next] = number(row[next], "transition" + where);
                }
            } else if (row.is_object()) {
                for (const auto& [key, value] : row.items()) {
                    std::size_t next = 0;
                    try {
                        next = std::stoul(key);
                    } catch (const std::exception&) {
                        throw FormatError("transition" + where + " has non-integer state '" + key + "'");
                    }
                    if (next >= n) {
                        throw FormatError("transition" + where + " names state " + key +
                                          " out of range");
                    }
                    target[next] = number(value, "transition" + where);
                }
            } else {
                throw FormatError("transition" + where + " must be a list or an object");
            }
            game.r(s, a) = number(reward[s][a], "reward" + where);
            game.lottery(s, a) = lottery_from_json(lottery[s][a], "cost_lottery" + where);
        }
    }
    if (doc.contains("safe_reward")) {
        game.safe_reward = flatten(doc, "safe_reward", n, n_safe);
    }

    if (const ValidationReport issues = validate_game(game); !issues.empty()) {
        throw FormatError("invalid game: " + describe(issues.front()) +
                          (issues.size() > 1
                               ? " (and " + std::to_string(issues.size() - 1) + " more)"
                               : std::string()));
    }
    return game;
}

TabularGame load_game(const std::filesystem::path& path) {
    try {
        return game_from_json(read_text(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_game(const std::filesystem::path& path, const TabularGame& game) {
    write_text(path, game_to_json(game));
}

std::string env_spec_to_json(const EnvSpec& spec) {
    json doc;
    doc["name"] = spec.name;
    doc["width"] = spec.width;
    doc["height"] = spec.height;
    doc["start"] = {spec.start % spec.width, spec.start / spec.width};
    doc["step_cap"] = spec.step_cap;
    doc["task_moves"] = moves_to_json(spec.task_moves);
    doc["safe_moves"] = moves_to_json(spec.safe_moves);
    doc["safety_objective"] = to_string(spec.objective);
    doc["kappa"] = spec.default_kappa;
    doc["gamma"] = spec.default_gamma;
    doc["state_cap"] = spec.state_cap;
    // Cells list only fields that differ from an empty, open cell.
    json cells = json::array();
    const CellSpec blank;
    for (std::size_t i = 0; i < spec.cells.size(); ++i) {
        const CellSpec& c = spec.cells[i];
        json cell{{"x", i % spec.width}, {"y", i / spec.width}};
        if (c.wall) cell["wall"] = true;
        if (c.reward != blank.reward) cell["reward"] = c.reward;
        if (c.one_shot) cell["one_shot"] = true;
        if (c.terminal) cell["terminal"] = true;
        if (c.safe_goal) cell["safe_goal"] = true;
        if (c.lottery.probability != blank.lottery.probability ||
            c.lottery.magnitude != blank.lottery.magnitude) {
            cell["cost_lottery"] = {{"probability", c.lottery.probability},
                                    {"magnitude", c.lottery.magnitude}};
        }
        if (cell.size() > 2) {
            cells.push_back(std::move(cell));
        }
    }
    doc["cells"] = std::move(cells);
    return doc.dump(1);
}

EnvSpec env_spec_from_json(const std::string& text) {
    const json doc = parse(text);
    EnvSpec spec;
    spec.name = doc.value("name", std::string("custom"));
    spec.width = require<std::size_t>(doc, "width");
    spec.height = require<std::size_t>(doc, "height");
    if (spec.width == 0 || spec.height == 0) {
        throw FormatError("grid dimensions must be positive");
    }
    spec.cells.assign(spec.width * spec.height, CellSpec{});
    const auto start = require<std::vector<std::size_t>>(doc, "start");
    if (start.size() != 2 || start[0] >= spec.width || start[1] >= spec.height) {
        throw FormatError("start must be an [x, y] pair inside the grid");
    }
    spec.start = spec.index(start[0], start[1]);
    spec.step_cap = doc.value("step_cap", spec.step_cap);
    spec.task_moves = moves_from_json(doc, "task_moves");
    spec.safe_moves = moves_from_json(doc, "safe_moves");
    spec.objective = safety_objective_from_string(doc.value("safety_objective", std::string("cost")));
    spec.default_kappa = doc.value("kappa", spec.default_kappa);
    spec.default_gamma = doc.value("gamma", spec.default_gamma);
    spec.state_cap = doc.value("state_cap", spec.state_cap);
    if (doc.contains("cells")) {
        for (const json& cell : doc.at("cells")) {
            const auto x = cell.at("x").get<std::size_t>();
            const auto y = cell.at("y").get<std::size_t>();
            if (x >= spec.width || y >= spec.height) {
                throw FormatError("cell (" + std::to_string(x) + ", " + std::to_string(y) +
                                  ") lies outside the grid");
            }
            CellSpec& c = spec.cell(x, y);
            c.wall = cell.value("wall", false);
            c.reward = cell.value("reward", 0.0);
            c.one_shot = cell.value("one_shot", false);
            c.terminal = cell.value("terminal", false);
            c.safe_goal = cell.value("safe_goal", false);
            if (cell.contains("cost_lottery")) {
                c.lottery = lottery_from_json(cell.at("cost_lottery"), "cost_lottery");
            }
        }
    }
    if (const ValidationReport issues = validate_env(spec); !issues.empty()) {
        throw FormatError("invalid environment: " + describe(issues.front()));
    }
    return spec;
}

std::string solve_report_to_json(const TabularGame& game, const SolveReport& report,
                                 double tol_gate) {
    const ValueTables& v = report.value_tables;
    json doc;
    doc["converged"] = report.converged;
    doc["sweeps"] = report.sweeps;
    doc["br_cycles"] = report.br_cycles;
    doc["final_residual"] = report.final_residual;
    doc["residuals"] = report.residuals;
    doc["values"] = {{"v1", values_json(v.v1)},
                     {"v2", values_json(v.v2)},
                     {"m_v2", values_json(v.m_v2)},
                     {"q2", nested(v.q2, game.n_states, game.n_task_actions)}};
    std::vector<std::size_t> safe;
    for (const SafeActionId k : report.policy.safe) {
        safe.push_back(k.value);
    }
    std::vector<int> gate(report.policy.gate.begin(), report.policy.gate.end());
    std::vector<int> stopping;
    if (v.m_v2.size() == v.v2.size()) {
        for (std::size_t s = 0; s < v.v2.size(); ++s) {
            stopping.push_back(std::abs(v.m_v2[s] - v.v2[s]) <= tol_gate ? 1 : 0);
        }
    }
    doc["policy"] = {{"task", nested(report.policy.task, game.n_states, game.n_task_actions)},
                     {"safe", safe},
                     {"gate", gate},
                     {"stopping_set", stopping}};
    doc["tol_gate"] = tol_gate;
    return doc.dump(1);
}

std::string learner_snapshot_to_json(const LearnerState& l) {
    json doc;
    doc["states"] = l.n_states;
    doc["task_actions"] = l.n_task_actions;
    doc["safe_actions"] = l.n_safe_actions;
    doc["shared_actions"] = l.n_shared_actions;
    doc["safe_action_map"] = l.safe_to_shared;
    doc["q_task"] = nested(l.q_task, l.n_states, l.n_shared_actions);
    doc["q_safe"] = nested(l.q_safe, l.n_states, l.n_safe_actions);
    doc["q_int"] = nested(l.q_int, l.n_states, 2);
    doc["visits_task"] = l.visits_task;
    doc["visits_safe"] = l.visits_safe;
    doc["visits_int"] = l.visits_int;
    doc["alpha"] = l.alpha;
    doc["alpha_decay"] = l.alpha_decay;
    doc["epsilon"] = l.epsilon;
    doc["gate_epsilon"] = l.gate_epsilon;
    doc["gamma"] = l.gamma;
    doc["kappa"] = l.kappa;
    doc["safety_objective"] = to_string(l.objective);
    doc["steps"] = l.steps;
    doc["updates"] = l.updates;
    doc["seed"] = l.seed;
    doc["rng"] = {{"state", l.rng.state()}, {"draws", l.rng.draws()}};
    return doc.dump(1);
}

LearnerState learner_snapshot_from_json(const std::string& text) {
    const json doc = parse(text);
    LearnerState l;
    l.n_states = require<std::size_t>(doc, "states");
    l.n_task_actions = require<std::size_t>(doc, "task_actions");
    l.n_safe_actions = require<std::size_t>(doc, "safe_actions");
    l.n_shared_actions = require<std::size_t>(doc, "shared_actions");
    l.safe_to_shared = vector_of<std::size_t>(doc, "safe_action_map");
    if (l.safe_to_shared.size() != l.n_safe_actions) {
        throw FormatError("safe_action_map must have one entry per safe action");
    }
    l.shared_to_safe.assign(l.n_shared_actions, -1);
    for (std::size_t k = l.n_safe_actions; k-- > 0;) {
        if (l.safe_to_shared[k] >= l.n_shared_actions) {
            throw FormatError("safe_action_map entry out of range");
        }
        l.shared_to_safe[l.safe_to_shared[k]] = static_cast<long>(k);
    }
    l.q_task = flatten(doc, "q_task", l.n_states, l.n_shared_actions);
    l.q_safe = flatten(doc, "q_safe", l.n_states, l.n_safe_actions);
    l.q_int = flatten(doc, "q_int", l.n_states, 2);
    l.visits_task = vector_of<std::uint32_t>(doc, "visits_task");
    l.visits_safe = vector_of<std::uint32_t>(doc, "visits_safe");
    l.visits_int = vector_of<std::uint32_t>(doc, "visits_int");
    if (l.visits_task.size() != l.q_task.size() || l.visits_safe.size() != l.q_safe.size() ||
        l.visits_int.size() != l.q_int.size()) {
        throw FormatError("visit counters must match the table shapes");
    }
    l.alpha = require<double>(doc, "alpha");
    l.alpha_decay = require<bool>(doc, "alpha_decay");
    l.epsilon = require<double>(doc, "epsilon");
    l.gate_epsilon = require<double>(doc, "gate_epsilon");
    l.gamma = require<double>(doc, "gamma");
    l.kappa = require<double>(doc, "kappa");
    l.objective = safety_objective_from_string(doc.value("safety_objective", std::string("cost")));
    l.steps = require<std::uint64_t>(doc, "steps");
    l.updates = require<std::uint64_t>(doc, "updates");
    l.seed = require<std::uint64_t>(doc, "seed");
    const json rng = require<json>(doc, "rng");
    l.rng.restore(require<std::string>(rng, "state"), require<std::uint64_t>(rng, "draws"));
    return l;
}

std::string property_report_to_json(const PropertyReport& report) {
    json doc;
    doc["property"] = report.property;
    doc["trials"] = report.trials;
    doc["violations"] = report.violations;
    doc["worst_margin"] = report.trials > 0 ? json(report.worst_margin) : json(nullptr);
    doc["seed"] = report.seed;
    doc["passed"] = report.passed();
    doc["notes"] = report.notes;
    return doc.dump(1);
}

}  // namespace desta
