#include "desta/envs.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace desta {

namespace {

std::vector<Move> cardinal_moves() {
    return {{0, -1, "up"}, {0, 1, "down"}, {-1, 0, "left"}, {1, 0, "right"}};
}

std::vector<Move> compass_moves() {
    return {{0, -1, "N"}, {1, -1, "NE"}, {1, 0, "E"}, {1, 1, "SE"},
            {0, 1, "S"},  {-1, 1, "SW"}, {-1, 0, "W"}, {-1, -1, "NW"}};
}

EnvSpec walled(std::string name, std::size_t width, std::size_t height) {
    EnvSpec spec;
    spec.name = std::move(name);
    spec.width = width;
    spec.height = height;
    spec.cells.assign(width * height, CellSpec{.wall = true});
    return spec;
}

std::size_t sample_row(std::span<const double> row, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t next = 0; next < row.size(); ++next) {
        if (row[next] <= 0.0) {
            continue;
        }
        acc += row[next];
        last_positive = next;
        if (u < acc) {
            return next;
        }
    }
    return last_positive;  // rounding slack at the top of the row
}

double sample_cost(const CostLottery& lottery, Rng& rng) {
    if (lottery.probability <= 0.0 || lottery.magnitude == 0.0) {
        return 0.0;
    }
    if (lottery.probability >= 1.0) {
        return lottery.magnitude;
    }
    return rng.bernoulli(lottery.probability) ? lottery.magnitude : 0.0;
}

}  // namespace

ValidationReport validate_env(const EnvSpec& spec) {
    ValidationReport report;
    if (spec.width == 0 || spec.height == 0 || spec.cells.size() != spec.width * spec.height) {
        report.push_back({"grid dimensions do not match cell count", 0, 0,
                          static_cast<double>(spec.cells.size())});
        return report;
    }
    if (spec.start >= spec.cells.size()) {
        report.push_back({"start outside grid", spec.start, 0, 0.0});
    } else if (spec.cells[spec.start].wall || spec.cells[spec.start].terminal) {
        report.push_back({"start cell is a wall or terminal", spec.start, 0, 0.0});
    }
    if (spec.step_cap < 1) {
        report.push_back({"step cap below 1", 0, 0, static_cast<double>(spec.step_cap)});
    }
    if (spec.task_moves.empty() || spec.safe_moves.empty()) {
        report.push_back({"empty action set", 0, 0, 0.0});
    }
    bool any_terminal = false;
    for (std::size_t c = 0; c < spec.cells.size(); ++c) {
        const CellSpec& cell = spec.cells[c];
        any_terminal = any_terminal || (cell.terminal && !cell.wall);
        if (!(cell.lottery.probability >= 0.0 && cell.lottery.probability <= 1.0)) {
            report.push_back({"cost probability outside [0, 1]", c, 0, cell.lottery.probability});
        }
        if (!(cell.lottery.magnitude >= 0.0)) {
            report.push_back({"negative cost magnitude", c, 0, cell.lottery.magnitude});
        }
    }
    if (!any_terminal && spec.step_cap == 0) {
        report.push_back({"episodes cannot end", 0, 0, 0.0});
    }
    return report;
}

EnvSpec t_junction() {
    constexpr std::size_t arm = 5;
    constexpr std::size_t junction_x = arm;
    EnvSpec spec = walled("t_junction", 2 * arm + 1, arm + 1);
    const CellSpec corridor{.reward = 10.0, .one_shot = true};

    for (std::size_t y = 0; y <= arm; ++y) {
        spec.cell(junction_x, y) = corridor;
    }
    for (std::size_t i = 1; i <= arm; ++i) {
        spec.cell(junction_x - i, 0) = corridor;
        CellSpec unsafe = corridor;
        unsafe.lottery = {0.1, 100.0};
        spec.cell(junction_x + i, 0) = unsafe;
    }
    CellSpec& safe_goal = spec.cell(0, 0);
    safe_goal.reward = 50.0;
    safe_goal.one_shot = false;
    safe_goal.terminal = true;
    safe_goal.safe_goal = true;
    CellSpec& unsafe_goal = spec.cell(2 * arm, 0);
    unsafe_goal.reward = 100.0;
    unsafe_goal.one_shot = false;
    unsafe_goal.terminal = true;

    spec.start = spec.index(junction_x, arm);
    spec.step_cap = 100;
    spec.task_moves = cardinal_moves();
    spec.safe_moves = cardinal_moves();
    spec.objective = SafetyObjective::cost;
    spec.default_kappa = 0.5;
    spec.default_gamma = 0.99;
    return spec;
}

EnvSpec bridge_grid() {
    constexpr std::size_t width = 9;
    constexpr std::size_t height = 5;
    constexpr std::size_t bridge_row = 2;
    EnvSpec spec = walled("bridge", width, height);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const bool middle = x >= width / 3 && x < 2 * width / 3;
            if (!middle || y == bridge_row) {
                spec.cell(x, y) = CellSpec{.reward = -1.0};
            } else if (y + 1 == bridge_row || y == bridge_row + 1) {
                spec.cell(x, y) = CellSpec{.reward = -1.0, .terminal = true,
                                           .lottery = CostLottery{1.0, 100.0}};
            }
        }
    }
    CellSpec& goal = spec.cell(width - 1, bridge_row);
    goal.reward = 100.0;
    goal.terminal = true;
    goal.safe_goal = true;

    spec.start = spec.index(0, bridge_row);
    spec.step_cap = 100;
    spec.task_moves = cardinal_moves();
    spec.safe_moves = cardinal_moves();
    spec.objective = SafetyObjective::cost;
    spec.default_kappa = 0.5;
    spec.default_gamma = 0.95;
    return spec;
}

EnvSpec plane_nav() {
    constexpr std::size_t side = 11;
    EnvSpec spec = walled("plane", side, side);
    for (auto& cell : spec.cells) {
        cell = CellSpec{.reward = -1.0};
    }
    CellSpec& goal = spec.cell(side - 1, side - 1);
    goal.terminal = true;
    goal.safe_goal = true;

    spec.start = spec.index(0, 0);
    spec.step_cap = 200;
    spec.task_moves = cardinal_moves();
    spec.safe_moves = compass_moves();
    spec.objective = SafetyObjective::task_reward;
    spec.default_kappa = 0.1;
    spec.default_gamma = 0.95;
    return spec;
}

std::optional<EnvSpec> env_by_name(const std::string& name) {
    if (name == "t_junction") {
        return t_junction();
    }
    if (name == "bridge") {
        return bridge_grid();
    }
    if (name == "plane") {
        return plane_nav();
    }
    return std::nullopt;
}

std::vector<std::string> env_names() { return {"t_junction", "bridge", "plane"}; }

std::string render(const EnvSpec& spec, const std::map<std::size_t, char>& overlay) {
    std::ostringstream out;
    for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
            const std::size_t c = spec.index(x, y);
            const CellSpec& cell = spec.cells[c];
            char glyph = '.';
            if (const auto it = overlay.find(c); it != overlay.end()) {
                glyph = it->second;
            } else if (cell.wall) {
                glyph = '#';
            } else if (c == spec.start) {
                glyph = 'S';
            } else if (cell.safe_goal) {
                glyph = 'G';
            } else if (cell.terminal && cell.lottery.expected() > 0.0) {
                glyph = 'X';
            } else if (cell.terminal) {
                glyph = 'T';
            } else if (cell.lottery.expected() > 0.0) {
                glyph = '!';
            }
            out << glyph;
        }
        out << '\n';
    }
    return out.str();
}

GridWorld::GridWorld(EnvSpec spec) : spec_(std::move(spec)) {
    if (const auto issues = validate_env(spec_); !issues.empty()) {
        throw std::invalid_argument("invalid environment '" + spec_.name +
                                    "': " + describe(issues.front()));
    }

    moves_ = spec_.task_moves;
    const bool subset = std::all_of(spec_.safe_moves.begin(), spec_.safe_moves.end(),
                                    [&](const Move& m) {
                                        return std::find(spec_.task_moves.begin(),
                                                         spec_.task_moves.end(),
                                                         m) != spec_.task_moves.end();
                                    });
    for (const Move& m : spec_.safe_moves) {
        if (subset) {
            const auto it = std::find(moves_.begin(), moves_.end(), m);
            safe_to_shared_.push_back(static_cast<std::size_t>(it - moves_.begin()));
        } else {
            safe_to_shared_.push_back(moves_.size());
            moves_.push_back(m);
        }
    }

    std::vector<int> bit_of(spec_.cells.size(), -1);
    int bits = 0;
    for (std::size_t c = 0; c < spec_.cells.size(); ++c) {
        const CellSpec& cell = spec_.cells[c];
        if (!cell.wall && cell.one_shot && !cell.terminal) {
            if (bits == 64) {
                throw std::length_error("more than 64 one-shot reward cells");
            }
            bit_of[c] = bits++;
        }
    }
    auto mask = [&](std::size_t c) -> std::uint64_t {
        return bit_of[c] < 0 ? 0 : (std::uint64_t{1} << bit_of[c]);
    };

    std::map<std::pair<std::size_t, std::uint64_t>, std::size_t> ids;
    auto intern = [&](std::size_t cell, std::uint64_t consumed) {
        const auto key = std::make_pair(cell, consumed);
        if (const auto it = ids.find(key); it != ids.end()) {
            return it->second;
        }
        if (states_.size() >= spec_.state_cap) {
            throw std::length_error("state space of '" + spec_.name + "' exceeds cap of " +
                                    std::to_string(spec_.state_cap) + " states");
        }
        const std::size_t id = states_.size();
        ids.emplace(key, id);
        states_.push_back({cell, consumed});
        return id;
    };

    intern(spec_.start, mask(spec_.start));
    for (std::size_t s = 0; s < states_.size(); ++s) {
        const Node node = states_[s];
        const CellSpec& here = spec_.cells[node.cell];
        for (std::size_t a = 0; a < moves_.size(); ++a) {
            Transition t;
            if (here.terminal) {
                t = {StateId{s}, 0.0, CostLottery{0.0, 0.0}, true};
                transitions_.push_back(t);
                continue;
            }
            const long x = static_cast<long>(node.cell % spec_.width) + moves_[a].dx;
            const long y = static_cast<long>(node.cell / spec_.width) + moves_[a].dy;
            std::size_t dest = node.cell;
            if (x >= 0 && y >= 0 && x < static_cast<long>(spec_.width) &&
                y < static_cast<long>(spec_.height)) {
                const std::size_t candidate = spec_.index(static_cast<std::size_t>(x),
                                                          static_cast<std::size_t>(y));
                if (!spec_.cells[candidate].wall) {
                    dest = candidate;
                }
            }
            const CellSpec& entered = spec_.cells[dest];
            const bool paid = entered.one_shot && (node.consumed & mask(dest)) != 0;
            t.reward = paid ? 0.0 : entered.reward;
            t.lottery = entered.lottery;
            t.terminal = entered.terminal;
            const std::uint64_t consumed = entered.terminal ? 0 : (node.consumed | mask(dest));
            t.next = StateId{intern(dest, consumed)};
            transitions_.push_back(t);
        }
    }
}

EpisodeState GridWorld::reset(Rng& /*rng*/) const { return {start_state(), 0, false}; }

StepOutcome GridWorld::step(EpisodeState& episode, std::size_t shared_action, Rng& rng) const {
    if (episode.done) {
        throw std::logic_error("step called on a finished episode");
    }
    if (shared_action >= moves_.size()) {
        throw std::out_of_range("action " + std::to_string(shared_action) + " out of range");
    }
    const Transition& t = transition(episode.state, shared_action);
    StepOutcome out;
    out.next_state = t.next;
    out.reward = t.reward;
    out.cost_sample = sample_cost(t.lottery, rng);
    out.terminal = t.terminal;
    episode.state = t.next;
    ++episode.steps;
    out.done = out.terminal || episode.steps >= spec_.step_cap;
    episode.done = out.done;
    return out;
}

bool GridWorld::is_safe_goal(StateId s) const { return spec_.cells[location(s)].safe_goal; }

bool GridWorld::is_terminal(StateId s) const { return spec_.cells[location(s)].terminal; }

double GridWorld::expected_cost(StateId s, std::size_t shared_action) const {
    return transition(s, shared_action).lottery.expected();
}

std::vector<StateId> GridWorld::states_at(std::size_t cell) const {
    std::vector<StateId> out;
    for (std::size_t s = 0; s < states_.size(); ++s) {
        if (states_[s].cell == cell) {
            out.push_back(StateId{s});
        }
    }
    return out;
}

TabularGame as_tabular_game(const GridWorld& world, double kappa, double gamma) {
    TabularGame game =
        TabularGame::allocate(world.n_states(), world.n_task_actions(), world.safe_to_shared());
    for (std::size_t s = 0; s < world.n_states(); ++s) {
        for (std::size_t a = 0; a < world.n_shared_actions(); ++a) {
            const auto& t = world.transition(StateId{s}, a);
            game.p(s, a, t.next.value) = 1.0;
            game.r(s, a) = t.reward;
            game.lottery(s, a) = t.lottery;
        }
    }
    game.kappa = kappa;
    game.gamma = gamma;
    game.objective = world.spec().objective;
    return game;
}

TabularGame as_tabular_game(const EnvSpec& spec, double kappa, double gamma) {
    return as_tabular_game(GridWorld(spec), kappa, gamma);
}

GameEnvironment::GameEnvironment(TabularGame game, StateId start, std::size_t horizon,
                                 std::vector<std::uint8_t> terminal,
                                 std::vector<std::uint8_t> safe_goal)
    : game_(std::move(game)),
      start_(start),
      horizon_(horizon),
      terminal_(std::move(terminal)),
      safe_goal_(std::move(safe_goal)) {
    if (const auto issues = validate_game(game_); !issues.empty()) {
        throw std::invalid_argument("invalid game: " + describe(issues.front()));
    }
    if (start_.value >= game_.n_states) {
        throw std::out_of_range("start state out of range");
    }
    if (horizon_ < 1) {
        throw std::invalid_argument("horizon must be at least 1");
    }
    terminal_.resize(game_.n_states, 0);
    safe_goal_.resize(game_.n_states, 0);
}

EpisodeState GameEnvironment::reset(Rng& /*rng*/) const { return {start_, 0, false}; }

StepOutcome GameEnvironment::step(EpisodeState& episode, std::size_t shared_action,
                                  Rng& rng) const {
    if (episode.done) {
        throw std::logic_error("step called on a finished episode");
    }
    if (shared_action >= game_.n_shared_actions) {
        throw std::out_of_range("action " + std::to_string(shared_action) + " out of range");
    }
    const std::size_t s = episode.state.value;
    StepOutcome out;
    out.next_state = StateId{sample_row(game_.row(s, shared_action), rng)};
    out.reward = game_.r(s, shared_action);
    out.cost_sample = sample_cost(game_.lottery(s, shared_action), rng);
    out.terminal = terminal_[out.next_state.value] != 0;
    episode.state = out.next_state;
    ++episode.steps;
    out.done = out.terminal || episode.steps >= horizon_;
    episode.done = out.done;
    return out;
}

bool GameEnvironment::is_safe_goal(StateId s) const { return safe_goal_[s.value] != 0; }

}  // namespace desta
