#pragma once

// Small hand-built games shared by the unit tests.

#include "desta/game.hpp"

namespace desta::fixtures {

// One state, one task action and one safe action, both self-loops.
// Task action: reward 1, cost 1. Safe action: reward 0, cost 0.
inline TabularGame self_loop(double kappa = 0.1, double gamma = 0.5) {
    TabularGame g = TabularGame::allocate(1, 1, TabularGame::disjoint_safe_map(1, 1));
    g.p(0, 0, 0) = 1.0;
    g.p(0, 1, 0) = 1.0;
    g.r(0, 0) = 1.0;
    g.lottery(0, 0) = {1.0, 1.0};
    g.kappa = kappa;
    g.gamma = gamma;
    return g;
}

// Two states, identity kernel, one task action reused as the only safe action.
inline TabularGame identity_chain() {
    TabularGame g = TabularGame::allocate(2, 1, {0});
    g.p(0, 0, 0) = 1.0;
    g.p(1, 0, 1) = 1.0;
    g.kappa = 0.5;
    g.gamma = 0.9;
    return g;
}

}  // namespace desta::fixtures
