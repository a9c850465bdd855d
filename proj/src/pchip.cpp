#include "soh/pchip.hpp"

#include <algorithm>
#include <cmath>

namespace soh {

namespace {

double edge_derivative(double h0, double h1, double d0, double d1) {
    // Non-centred three-point estimate, clamped to preserve shape.
    double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (d * d0 <= 0.0) return 0.0;
    if (d0 * d1 < 0.0 && std::abs(d) > 3.0 * std::abs(d0)) return 3.0 * d0;
    return d;
}

}  // namespace

Pchip::Pchip(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DomainError("pchip: size mismatch");
    if (x.size() < 2) throw DomainError("pchip: need at least 2 points");
    x_.assign(x.begin(), x.end());
    y_.assign(y.begin(), y.end());
    const std::size_t n = x_.size();
    for (std::size_t i = 1; i < n; ++i)
        if (!(x_[i] > x_[i - 1])) throw DomainError("pchip: abscissae not strictly increasing");

    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        h[i] = x_[i + 1] - x_[i];
        delta[i] = (y_[i + 1] - y_[i]) / h[i];
    }

    d_.assign(n, 0.0);
    if (n == 2) {
        d_[0] = d_[1] = delta[0];
        return;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (delta[i - 1] * delta[i] <= 0.0) {
            d_[i] = 0.0;
        } else {
            double w1 = 2.0 * h[i] + h[i - 1];
            double w2 = h[i] + 2.0 * h[i - 1];
            d_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    d_[0] = edge_derivative(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = edge_derivative(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
}

std::size_t Pchip::interval(double q) const {
    // Clamped evaluation outside the knot range uses the edge interval.
    auto it = std::upper_bound(x_.begin(), x_.end(), q);
    std::size_t i = static_cast<std::size_t>(it - x_.begin());
    if (i == 0) return 0;
    if (i >= x_.size()) return x_.size() - 2;
    return i - 1;
}

double Pchip::operator()(double q) const {
    const std::size_t i = interval(q);
    const double h = x_[i + 1] - x_[i];
    const double t = (q - x_[i]) / h;
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    return h00 * y_[i] + h10 * h * d_[i] + h01 * y_[i + 1] + h11 * h * d_[i + 1];
}

void Pchip::eval(std::span<const double> q, std::span<double> out) const {
    for (std::size_t k = 0; k < q.size(); ++k) out[k] = (*this)(q[k]);
}

double Pchip::derivative(double q) const {
    const std::size_t i = interval(q);
    const double h = x_[i + 1] - x_[i];
    const double t = (q - x_[i]) / h;
    const double t2 = t * t;
    const double dh00 = (6 * t2 - 6 * t) / h;
    const double dh10 = 3 * t2 - 4 * t + 1;
    const double dh01 = (-6 * t2 + 6 * t) / h;
    const double dh11 = 3 * t2 - 2 * t;
    return dh00 * y_[i] + dh10 * d_[i] + dh01 * y_[i + 1] + dh11 * d_[i + 1];
}

}  // namespace soh
