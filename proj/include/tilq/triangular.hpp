#ifndef TILQ_TRIANGULAR_HPP
#define TILQ_TRIANGULAR_HPP

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "tilq/errors.hpp"
#include "tilq/grid.hpp"

namespace tilq {

// Two-time-argument field f(t_i, s_j) sampled on the grid triangle
// {0 <= i <= j <= N}. Each entry is a rows x cols matrix (cols = 1 for
// vector fields), stored column-major in one contiguous buffer.
// Evaluation below the diagonal is an error.
class TriangularField {
public:
    TriangularField() = default;

    TriangularField(const TimeGrid& grid, int rows, int cols)
        : grid_(grid), rows_(rows), cols_(cols) {
        const int np = grid.size();
        row_offset_.resize(np + 1);
        std::size_t acc = 0;
        for (int i = 0; i < np; ++i) {
            row_offset_[i] = acc;
            acc += static_cast<std::size_t>(np - i);
        }
        row_offset_[np] = acc;
        data_.assign(acc * entry_size(), 0.0);
    }

    const TimeGrid& grid() const { return grid_; }
    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t entry_size() const {
        return static_cast<std::size_t>(rows_) * cols_;
    }
    std::size_t entries() const { return row_offset_.empty() ? 0 : row_offset_.back(); }

    double* at(int i, int j) {
        return data_.data() + index(i, j) * entry_size();
    }
    const double* at(int i, int j) const {
        return data_.data() + index(i, j) * entry_size();
    }

    Eigen::Map<const Eigen::MatrixXd> mat(int i, int j) const {
        return {at(i, j), rows_, cols_};
    }
    Eigen::Map<Eigen::MatrixXd> mat(int i, int j) {
        return {at(i, j), rows_, cols_};
    }

    void set(int i, int j, const Eigen::MatrixXd& v) { mat(i, j) = v; }

    Eigen::MatrixXd diag(int i) const { return mat(i, i); }

    // Max absolute entry difference against another field on the same grid.
    double max_abs_diff(const TriangularField& o) const {
        if (grid_ != o.grid_ || rows_ != o.rows_ || cols_ != o.cols_)
            throw ConfigError("triangular field comparison: mismatched shape");
        double worst = 0.0;
        for (std::size_t k = 0; k < data_.size(); ++k) {
            const double d = std::abs(data_[k] - o.data_[k]);
            if (d > worst) worst = d;
        }
        return worst;
    }

    double max_abs() const {
        double worst = 0.0;
        for (double v : data_) worst = std::max(worst, std::abs(v));
        return worst;
    }

    const std::vector<double>& raw() const { return data_; }
    std::vector<double>& raw() { return data_; }

private:
    std::size_t index(int i, int j) const {
        if (i < 0 || j < i || j >= grid_.size())
            throw ConfigError("triangular field evaluated outside the triangle");
        return row_offset_[i] + static_cast<std::size_t>(j - i);
    }

    TimeGrid grid_;
    int rows_ = 0;
    int cols_ = 0;
    std::vector<std::size_t> row_offset_;
    std::vector<double> data_;
};

} // namespace tilq

#endif
