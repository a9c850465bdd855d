#include "soh/features.hpp"

#include <cmath>

namespace soh::features {

StressFeatures compute_stress_features(std::span<const telemetry::TelemetryRecord> records,
                                       std::int64_t as_of, const FeatureConfig& cfg) {
    if (records.empty()) throw DomainError("compute_stress_features: empty series");
    if (as_of < records.front().timestamp)
        throw DomainError("compute_stress_features: as_of before series start");

    StressFeatures f;
    f.calendar_age_days = double(as_of - records.front().timestamp) / 86400.0;

    double throughput_as = 0;  // ampere-seconds, absolute
    double float_s = 0;
    double temp_ws = 0, volt_ws = 0, weight_s = 0;

    // Cycle counting on the cumulative charge curve: a discharge excursion is
    // a peak-to-valley drop of at least the configured depth, re-armed once
    // the battery has recharged by the same depth.
    const double depth_as = cfg.cycle_depth_fraction * cfg.nominal_capacity_ah * 3600.0;
    double cum = 0, ref_peak = 0, valley = 0;
    double cycles = 0;
    bool descending = false;

    for (std::size_t i = 0; i + 1 < records.size(); ++i) {
        if (records[i].timestamp >= as_of) break;
        const auto& r = records[i];
        const double dt = double(std::min(records[i + 1].timestamp, as_of) - r.timestamp);
        if (dt <= 0) continue;
        throughput_as += std::abs(r.current) * dt;
        if (r.voltage >= cfg.float_voltage_v && std::abs(r.current) < cfg.float_current_a)
            float_s += dt;
        temp_ws += r.temperature * dt;
        volt_ws += r.voltage * dt;
        weight_s += dt;

        cum += r.current * dt;
        if (!descending) {
            ref_peak = std::max(ref_peak, cum);
            if (ref_peak - cum >= depth_as) {
                cycles += 1;
                descending = true;
                valley = cum;
            }
        } else {
            valley = std::min(valley, cum);
            if (cum - valley >= depth_as) {
                descending = false;
                ref_peak = cum;
            }
        }
    }

    f.charge_throughput_ah = throughput_as / 3600.0 / 2.0;
    f.float_time_h = float_s / 3600.0;
    f.cycle_count = cycles;
    if (weight_s > 0) {
        f.mean_temperature_c = temp_ws / weight_s;
        f.mean_voltage_v = volt_ws / weight_s;
    } else {
        f.mean_temperature_c = records.front().temperature;
        f.mean_voltage_v = records.front().voltage;
    }
    return f;
}

CorrelationResult feature_correlations(const std::vector<StressFeatures>& fleet) {
    const std::size_t n = fleet.size();
    if (n < 3) throw DomainError("feature_correlations: need at least 3 batteries");

    Eigen::MatrixXd m(Eigen::Index(n), kNumFeatures);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = fleet[i].as_array();
        for (int j = 0; j < kNumFeatures; ++j) m(Eigen::Index(i), j) = row[std::size_t(j)];
    }
    Eigen::RowVectorXd mean = m.colwise().mean();
    m.rowwise() -= mean;
    Eigen::RowVectorXd sd = (m.colwise().squaredNorm() / double(n)).cwiseSqrt();

    CorrelationResult res;
    res.matrix.setZero(kNumFeatures, kNumFeatures);
    res.degenerate.assign(kNumFeatures, false);
    for (int j = 0; j < kNumFeatures; ++j)
        if (!(sd[j] > 0)) res.degenerate[std::size_t(j)] = true;

    for (int a = 0; a < kNumFeatures; ++a) {
        for (int b = 0; b <= a; ++b) {
            double v;
            if (res.degenerate[std::size_t(a)] || res.degenerate[std::size_t(b)])
                v = (a == b) ? 1.0 : 0.0;
            else
                v = m.col(a).dot(m.col(b)) / (double(n) * sd[a] * sd[b]);
            if (a == b) v = 1.0;
            res.matrix(a, b) = v;
            res.matrix(b, a) = v;
        }
    }
    return res;
}

}  // namespace soh::features
