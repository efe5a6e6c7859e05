#pragma once

#include "desta/game.hpp"
#include "desta/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace desta {

struct Move {
    int dx = 0;
    int dy = 0;
    std::string name;

    friend bool operator==(const Move& a, const Move& b) { return a.dx == b.dx && a.dy == b.dy; }
};

/// Everything a grid cell does when it is entered.
struct CellSpec {
    bool wall = false;
    double reward = 0.0;
    bool one_shot = false;   // reward paid on the first entry only
    bool terminal = false;
    bool safe_goal = false;
    CostLottery lottery{0.0, 0.0};
};

struct EnvSpec {
    std::string name;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<CellSpec> cells;  // row-major, index = y * width + x
    std::size_t start = 0;
    std::size_t step_cap = 100;
    std::vector<Move> task_moves;
    std::vector<Move> safe_moves;
    SafetyObjective objective = SafetyObjective::cost;
    double default_kappa = 0.5;
    double default_gamma = 0.99;
    std::size_t state_cap = 2000;  // limit on exported (cell, consumed) states

    std::size_t index(std::size_t x, std::size_t y) const { return y * width + x; }
    CellSpec& cell(std::size_t x, std::size_t y) { return cells[index(x, y)]; }
    const CellSpec& cell(std::size_t x, std::size_t y) const { return cells[index(x, y)]; }
};

ValidationReport validate_env(const EnvSpec& spec);

/// T-shaped grid: 5-cell neutral corridor ending at the junction, 5-cell safe
/// (left) and unsafe (right) arms. Safe goal 50, unsafe goal 100, other cells a
/// one-shot 10. Each unsafe-arm cell costs 100 with probability 0.1 on entry.
EnvSpec t_junction();

/// 9x5 grid with a one-cell bridge across the middle third. Cells beside the
/// bridge are pits (cost 100, episode ends). Goal +100, every other step -1.
EnvSpec bridge_grid();

/// 11x11 open grid, corner to corner, -1 per step, no safety cost. The task
/// agent moves in 4 directions, the safety agent in 8.
EnvSpec plane_nav();

std::optional<EnvSpec> env_by_name(const std::string& name);
std::vector<std::string> env_names();

/// '#' wall, 'S' start, 'G' safe goal, 'T' other terminal, 'X' pit
/// (terminal with cost), '!' cost lottery, '.' open. Overlay characters win.
std::string render(const EnvSpec& spec, const std::map<std::size_t, char>& overlay = {});

struct EpisodeState {
    StateId state{0};
    std::size_t steps = 0;
    bool done = false;
};

struct StepOutcome {
    StateId next_state{0};
    double reward = 0.0;
    double cost_sample = 0.0;
    bool done = false;      // terminal or step cap
    bool terminal = false;  // absorbing state entered
};

/// Episodic simulator interface consumed by the learners. Actions are rows of
/// the shared action table, as in TabularGame.
class Environment {
public:
    virtual ~Environment() = default;

    virtual std::size_t n_states() const = 0;
    virtual std::size_t n_task_actions() const = 0;
    virtual const std::vector<std::size_t>& safe_to_shared() const = 0;
    virtual std::size_t n_shared_actions() const = 0;

    virtual EpisodeState reset(Rng& rng) const = 0;
    virtual StepOutcome step(EpisodeState& episode, std::size_t shared_action, Rng& rng) const = 0;

    virtual bool is_safe_goal(StateId s) const = 0;
    /// Physical location of a state (grid cell for grid worlds).
    virtual std::size_t location(StateId s) const { return s.value; }
    /// Expected one-step safety cost, used for reporting only.
    virtual double expected_cost(StateId s, std::size_t shared_action) const = 0;

    std::size_t n_safe_actions() const { return safe_to_shared().size(); }
};

/// Grid simulator whose states are (cell, consumed one-shot cells) pairs
/// reachable from the start. Entering a terminal cell leads to one absorbing
/// state per terminal cell.
class GridWorld final : public Environment {
public:
    explicit GridWorld(EnvSpec spec);

    std::size_t n_states() const override { return states_.size(); }
    std::size_t n_task_actions() const override { return spec_.task_moves.size(); }
    const std::vector<std::size_t>& safe_to_shared() const override { return safe_to_shared_; }
    std::size_t n_shared_actions() const override { return moves_.size(); }

    EpisodeState reset(Rng& rng) const override;
    StepOutcome step(EpisodeState& episode, std::size_t shared_action, Rng& rng) const override;

    bool is_safe_goal(StateId s) const override;
    std::size_t location(StateId s) const override { return states_[s.value].cell; }
    double expected_cost(StateId s, std::size_t shared_action) const override;

    const EnvSpec& spec() const { return spec_; }
    const std::vector<Move>& moves() const { return moves_; }
    StateId start_state() const { return StateId{0}; }
    bool is_terminal(StateId s) const;
    std::uint64_t consumed(StateId s) const { return states_[s.value].consumed; }
    /// All states located at `cell`.
    std::vector<StateId> states_at(std::size_t cell) const;

    struct Transition {
        StateId next{0};
        double reward = 0.0;
        CostLottery lottery;
        bool terminal = false;
    };
    /// Deterministic grid dynamics for one shared action.
    const Transition& transition(StateId s, std::size_t shared_action) const {
        return transitions_[s.value * moves_.size() + shared_action];
    }

private:
    struct Node {
        std::size_t cell = 0;
        std::uint64_t consumed = 0;
    };

    EnvSpec spec_;
    std::vector<Move> moves_;
    std::vector<std::size_t> safe_to_shared_;
    std::vector<Node> states_;
    std::vector<Transition> transitions_;  // [state][shared action]
};

/// Lotteries collapsed to their means. Throws std::length_error naming the
/// state count when the reachable space exceeds spec.state_cap.
TabularGame as_tabular_game(const GridWorld& world, double kappa, double gamma);
TabularGame as_tabular_game(const EnvSpec& spec, double kappa, double gamma);

/// Samples a TabularGame directly: fixed start state, optional absorbing
/// terminals, and an episode horizon.
class GameEnvironment final : public Environment {
public:
    GameEnvironment(TabularGame game, StateId start, std::size_t horizon,
                    std::vector<std::uint8_t> terminal = {},
                    std::vector<std::uint8_t> safe_goal = {});

    std::size_t n_states() const override { return game_.n_states; }
    std::size_t n_task_actions() const override { return game_.n_task_actions; }
    const std::vector<std::size_t>& safe_to_shared() const override { return game_.safe_to_shared; }
    std::size_t n_shared_actions() const override { return game_.n_shared_actions; }

    EpisodeState reset(Rng& rng) const override;
    StepOutcome step(EpisodeState& episode, std::size_t shared_action, Rng& rng) const override;

    bool is_safe_goal(StateId s) const override;
    double expected_cost(StateId s, std::size_t shared_action) const override {
        return game_.cost(s.value, shared_action);
    }

    const TabularGame& game() const { return game_; }

private:
    TabularGame game_;
    StateId start_;
    std::size_t horizon_;
    std::vector<std::uint8_t> terminal_;
    std::vector<std::uint8_t> safe_goal_;
};

}  // namespace desta
