#include "desta/metrics.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace desta {

std::string format_number(double value) {
    char buffer[64];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

void write_metrics_csv(std::ostream& out, const MetricsLog& log, const std::string& header) {
    if (!header.empty()) {
        std::istringstream lines(header);
        std::string line;
        while (std::getline(lines, line)) {
            out << "# " << line << '\n';
        }
    }
    out << "episode,return,safety_cost,interventions,safe_goal,epsilon";
    if (log.has_lambda) {
        out << ",lambda";
    }
    out << '\n';
    for (const EpisodeRecord& r : log.episodes) {
        out << r.episode << ',' << format_number(r.episode_return) << ','
            << format_number(r.safety_cost) << ',' << r.interventions << ','
            << (r.safe_goal ? 1 : 0) << ',' << format_number(r.epsilon);
        if (log.has_lambda) {
            out << ',' << format_number(r.lambda);
        }
        out << '\n';
    }
}

MetricsLog read_metrics_csv(std::istream& in) {
    MetricsLog log;
    std::string line;
    bool seen_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') {
            continue;
        }
        if (!seen_header) {
            seen_header = true;
            log.has_lambda = line.find("lambda") != std::string::npos;
            continue;
        }
        std::istringstream fields(line);
        std::string field;
        std::vector<std::string> parts;
        while (std::getline(fields, field, ',')) {
            parts.push_back(field);
        }
        const std::size_t expected = log.has_lambda ? 7 : 6;
        if (parts.size() != expected) {
            throw std::runtime_error("metrics CSV: expected " + std::to_string(expected) +
                                     " columns, got " + std::to_string(parts.size()));
        }
        EpisodeRecord r;
        r.episode = std::stoul(parts[0]);
        r.episode_return = std::stod(parts[1]);
        r.safety_cost = std::stod(parts[2]);
        r.interventions = std::stoul(parts[3]);
        r.safe_goal = parts[4] == "1";
        r.epsilon = std::stod(parts[5]);
        if (log.has_lambda) {
            r.lambda = std::stod(parts[6]);
        }
        log.episodes.push_back(r);
        log.intervention_states.emplace_back();
    }
    return log;
}

}  // namespace desta
