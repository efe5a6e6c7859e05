#pragma once

#include "desta/game.hpp"
#include "desta/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace desta {

/// One shared triplet (s, a, s') with the reward each of the three policies
/// sees for it.
struct TransitionSample {
    StateId s{0};
    std::size_t applied_action = 0;  // shared row
    std::uint8_t a_int = 0;
    StateId s_next{0};
    double r1 = 0.0;     // task reward
    double r2 = 0.0;     // -L, minus kappa when the safe action was applied
    double r_int = 0.0;  // -L - kappa * a_int
    double cost = 0.0;   // sampled safety cost L
    bool done = false;   // absorbing state reached
};

/// Bounded FIFO; once full, each push evicts the oldest sample.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) {
            throw std::invalid_argument("replay buffer capacity must be positive");
        }
        data_.reserve(capacity_ < 4096 ? capacity_ : 4096);
    }

    void push(const TransitionSample& sample) {
        if (data_.size() < capacity_) {
            data_.push_back(sample);
            return;
        }
        data_[head_] = sample;
        head_ = (head_ + 1) % capacity_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return data_.empty(); }

    /// i = 0 is the oldest retained sample.
    const TransitionSample& at(std::size_t i) const {
        if (i >= data_.size()) {
            throw std::out_of_range("replay buffer index out of range");
        }
        return data_[(head_ + i) % data_.size()];
    }

    /// Uniform draw with replacement.
    std::vector<TransitionSample> sample(std::size_t batch, Rng& rng) const {
        std::vector<TransitionSample> out;
        out.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            out.push_back(data_[rng.index(data_.size())]);
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<TransitionSample> data_;
};

}  // namespace desta
