#pragma once

#include "desta/game.hpp"

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace desta {

struct EpisodeRecord {
    std::size_t episode = 0;
    double episode_return = 0.0;  // undiscounted task reward
    double safety_cost = 0.0;     // sum of sampled costs
    std::size_t interventions = 0;
    bool safe_goal = false;
    double epsilon = 0.0;
    double lambda = 0.0;
};

struct MetricsLog {
    bool has_lambda = false;
    std::vector<EpisodeRecord> episodes;
    /// States where the gate fired, one list per episode.
    std::vector<std::vector<StateId>> intervention_states;
};

/// Columns: episode,return,safety_cost,interventions,safe_goal,epsilon[,lambda].
/// Each line of `header` is written first as a '#' comment.
void write_metrics_csv(std::ostream& out, const MetricsLog& log, const std::string& header = {});

/// Reads what write_metrics_csv wrote; comment lines are skipped.
MetricsLog read_metrics_csv(std::istream& in);

/// Shortest decimal text that round-trips the double.
std::string format_number(double value);

}  // namespace desta
