#pragma once

#include <Eigen/Core>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "soh/common.hpp"
#include "soh/telemetry.hpp"

namespace soh::features {

struct FeatureConfig {
    double nominal_capacity_ah = 20.0;
    double cycle_depth_fraction = 0.05;  // discharge excursion counts when >= 5% of nominal
    double float_voltage_v = 13.5;
    double float_current_a = 0.5;
};

inline constexpr int kNumFeatures = 6;
inline const std::array<const char*, kNumFeatures> kFeatureNames = {
    "calendar_age_days", "charge_throughput_ah", "cycle_count",
    "float_time_h",      "mean_temperature_c",   "mean_voltage_v"};

struct StressFeatures {
    double calendar_age_days = 0;
    double charge_throughput_ah = 0;  // half of absolute throughput
    double cycle_count = 0;
    double float_time_h = 0;
    double mean_temperature_c = 0;
    double mean_voltage_v = 0;

    std::array<double, kNumFeatures> as_array() const {
        return {calendar_age_days, charge_throughput_ah, cycle_count,
                float_time_h,      mean_temperature_c,   mean_voltage_v};
    }
};

// Aging stress factors over [series start, as_of].
StressFeatures compute_stress_features(std::span<const telemetry::TelemetryRecord> records,
                                       std::int64_t as_of, const FeatureConfig& cfg = {});

// Pearson correlations across the fleet; zero-variance columns yield zero
// entries and are flagged.
struct CorrelationResult {
    Eigen::MatrixXd matrix;              // kNumFeatures x kNumFeatures
    std::vector<bool> degenerate;        // per feature
};
CorrelationResult feature_correlations(const std::vector<StressFeatures>& fleet);

}  // namespace soh::features
