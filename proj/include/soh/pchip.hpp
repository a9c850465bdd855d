#pragma once

#include <span>
#include <vector>

#include "soh/common.hpp"

namespace soh {

// Shape-preserving piecewise cubic Hermite interpolant (Fritsch-Carlson
// derivative rule). Reproduces knot values exactly and never overshoots the
// local data range on monotone spans.
class Pchip {
public:
    Pchip() = default;
    Pchip(std::span<const double> x, std::span<const double> y);

    double operator()(double q) const;
    void eval(std::span<const double> q, std::span<double> out) const;
    // Derivative of the interpolant.
    double derivative(double q) const;

    double x_min() const { return x_.front(); }
    double x_max() const { return x_.back(); }
    std::size_t size() const { return x_.size(); }
    const std::vector<double>& knots_x() const { return x_; }
    const std::vector<double>& knots_y() const { return y_; }

private:
    std::vector<double> x_, y_, d_;
    std::size_t interval(double q) const;
};

}  // namespace soh
