#ifndef TILQ_GRID_HPP
#define TILQ_GRID_HPP

#include <vector>

#include "tilq/errors.hpp"

namespace tilq {

// Uniform grid on [0, T] with N steps. The last node is pinned to T exactly
// so that backward integrations start from the true horizon.
class TimeGrid {
public:
    TimeGrid() : horizon_(1.0), steps_(2), step_(0.5) {}

    TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
        if (!(horizon > 0.0))
            throw ConfigError("grid.T: horizon must be positive");
        if (steps < 2)
            throw ConfigError("grid.N: need at least 2 steps");
        step_ = horizon_ / steps_;
    }

    double horizon() const { return horizon_; }
    int steps() const { return steps_; }
    int size() const { return steps_ + 1; }
    double step() const { return step_; }

    double node(int i) const { return i == steps_ ? horizon_ : i * step_; }

    std::vector<double> nodes() const {
        std::vector<double> out(size());
        for (int i = 0; i < size(); ++i) out[i] = node(i);
        return out;
    }

    bool operator==(const TimeGrid& o) const {
        return horizon_ == o.horizon_ && steps_ == o.steps_;
    }
    bool operator!=(const TimeGrid& o) const { return !(*this == o); }

private:
    double horizon_;
    int steps_;
    double step_;
};

} // namespace tilq

#endif
