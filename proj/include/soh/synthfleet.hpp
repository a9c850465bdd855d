#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "soh/common.hpp"
#include "soh/population.hpp"
#include "soh/soc.hpp"

namespace soh::fleet {

// Synthetic PV fleet with a known resistance surface, diurnal usage, gassing,
// sensor noise, recording gaps and threshold-defined failure labels.
struct FleetConfig {
    int n_batteries = 50;
    double min_days = 400;
    double max_days = 760;
    std::uint64_t seed = 7;

    // Sampling / diurnal profile
    double sample_period_s = 420;
    double panel_current_max_a = 3.2;
    double sunny_probability = 0.25;  // plus one guaranteed clear day per week
    double cloudy_min = 0.08, cloudy_max = 0.22;  // low enough that hazy days do not qualify
    double night_load_a = 0.55;
    double standby_load_a = 0.10;
    double absorb_voltage = 14.45;   // bulk ends at this terminal voltage
    double taper_tau_s = 2700;       // controller current taper after bulk
    double taper_floor_a = 0.10;
    double conc_taper = 5.60;        // concentration guard for the taper trigger
    double lvd_voltage = 11.62;      // low-voltage disconnect

    // Charge acceptance fades linearly between conc_eta and conc_sat.
    double conc_eta = 5.45;
    double conc_sat = 5.62;

    // Temperature model
    double temp_mean_c = 25.0;
    double temp_diurnal_amp_c = 6.0;
    double temp_offset_std_c = 2.5;  // battery-to-battery

    // Sensor noise (emitted values only)
    double noise_v = 0.012;
    double noise_i = 0.01;
    double noise_t = 0.3;

    // Recording gaps
    double gap_probability_per_day = 0.03;
    double gap_min_s = 700;
    double gap_max_s = 7200;

    // True resistance surface: base * A(T) * C(c) * G(I) + aging(t)
    double r0_base_min = 0.28, r0_base_max = 0.38;
    double arrhenius_per_c = 0.010;
    double conc_ref = 4.6;         // C(c) = 1 + conc_coeff*(conc_ref - c) + hi term
    double conc_coeff = 0.06;
    double conc_hi_coeff = 2.0;    // quadratic upturn above conc_ref
    double conc_pole = 5.70;       // saturation pole location
    double conc_pole_coeff = 0.30;
    double bv_current_a = 2.2;     // G(I) = 1/sqrt(1 + (I/bv)^2)

    // Aging: slope * t + quadratic knee after onset
    double aging_slope_ohm_per_year = 0.08;
    double slope_temp_coeff = 0.05;    // per degC of battery offset
    double slope_usage_coeff = 0.5;
    double slope_noise_sigma = 0.25;   // lognormal
    double knee_onset_mean_days = 520;
    double knee_onset_sigma = 0.30;    // lognormal
    double knee_temp_coeff = 0.04;
    double knee_usage_coeff = 0.35;
    double knee_quadratic_ohm_per_day2 = 4e-4;
    double failure_threshold_ohm = 0.80;
    double repair_lag_min_days = 3, repair_lag_max_days = 15;

    // Reference operating point used for the failure threshold
    double ref_temp_c = 26.0, ref_current_a = 2.6, ref_conc = 4.2;

    double label_flip_probability = 0.0;  // optional label noise injector

    void validate() const;
    nlohmann::json to_json() const;
    void write_json(const std::string& path) const;
    static FleetConfig from_json(const nlohmann::json& j);
    static FleetConfig from_json_file(const std::string& path);
};

struct BatterySummary {
    std::string battery_id;
    double n_days = 0;
    bool failed = false;
    bool label_flipped = false;
    double failure_day = 0;  // threshold crossing; 0 when healthy
    double r0_base = 0;
    double temp_offset = 0;
    double usage = 0;
    double aging_slope_per_day = 0;
    double knee_onset_day = 0;
    std::size_t rows = 0;
    std::size_t qualifying_segments = 0;
};

struct FleetResult {
    std::vector<BatterySummary> batteries;
    double mean_i = 0, mean_t = 0, mean_c = 0;  // charge-window operating mean
    std::size_t n_failed = 0;
};

// Writes telemetry/<id>.csv, labels.csv, ground_truth.csv and fleet_config.json
// under out_dir. Deterministic for a fixed seed.
FleetResult generate_fleet(const FleetConfig& cfg, const soc::OcvCurve& ocv,
                           const soc::GassingParams& gassing, const std::string& out_dir);

struct CompareMetrics {
    std::string battery_id;
    double rmse = 0;
    double coverage = 0;        // fraction of truth inside +/- 2 sigma
    double truth_range = 0;     // max - min of true R0 over the series
    std::size_t n_points = 0;
};

struct TruthSeries {
    std::vector<double> t_days;
    std::vector<double> r0_ohm;
};

// battery_id -> series, parsed from ground_truth.csv.
std::vector<std::pair<std::string, TruthSeries>> load_ground_truth(const std::string& path);

CompareMetrics ground_truth_compare(const population::HealthTrajectory& estimate,
                                    const std::string& battery_id, const TruthSeries& truth);

}  // namespace soh::fleet
