#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "soh/synthfleet.hpp"
#include "soh/telemetry.hpp"

using namespace soh;
using namespace soh::fleet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

FleetConfig small_config() {
    FleetConfig cfg;
    cfg.n_batteries = 2;
    cfg.min_days = 400;
    cfg.max_days = 410;
    cfg.sample_period_s = 600;
    cfg.sunny_probability = 0.0;  // weekly forced capture day only
    cfg.seed = 123;
    return cfg;
}

}  // namespace

TEST_CASE("generation is byte-identical for a fixed seed") {
    auto ocv = soc::OcvCurve::builtin_default();
    soc::GassingParams gp;
    auto cfg = small_config();
    const std::string d1 = "/tmp/soh_fleet_a", d2 = "/tmp/soh_fleet_b";
    fs::remove_all(d1);
    fs::remove_all(d2);
    auto r1 = generate_fleet(cfg, ocv, gp, d1);
    auto r2 = generate_fleet(cfg, ocv, gp, d2);
    CHECK(r1.batteries.size() == 2);
    for (const auto& name :
         {"telemetry/b0000.csv", "telemetry/b0001.csv", "labels.csv", "ground_truth.csv"})
        CHECK(slurp(d1 + "/" + name) == slurp(d2 + "/" + name));
}

TEST_CASE("generated telemetry passes ingest with zero range violations and weekly segments") {
    auto ocv = soc::OcvCurve::builtin_default();
    soc::GassingParams gp;
    auto cfg = small_config();
    const std::string dir = "/tmp/soh_fleet_c";
    fs::remove_all(dir);
    auto res = generate_fleet(cfg, ocv, gp, dir);

    auto series = telemetry::ingest(dir + "/telemetry/b0000.csv");
    REQUIRE(series.size() == 1);
    CHECK(series[0].stats.dropped_out_of_range == 0);
    CHECK(series[0].stats.duplicates_collapsed == 0);

    telemetry::TelemetryConfig tcfg;
    auto segs = telemetry::select_segments(series[0].records, tcfg);
    CHECK(segs.size() >= std::size_t(cfg.min_days / 7.0) - 1);
    CHECK(res.batteries[0].qualifying_segments == segs.size());

    // Charge-window operating means are physically plausible.
    CHECK(res.mean_i > 0.2);
    CHECK(res.mean_t > 15.0);
    CHECK(res.mean_c > ocv.c_min());
}

TEST_CASE("zero aging slope with the knee disabled gives an all-healthy fleet") {
    auto ocv = soc::OcvCurve::builtin_default();
    soc::GassingParams gp;
    auto cfg = small_config();
    cfg.n_batteries = 4;
    cfg.aging_slope_ohm_per_year = 0.0;
    cfg.slope_noise_sigma = 0.0;
    cfg.knee_quadratic_ohm_per_day2 = 0.0;
    const std::string dir = "/tmp/soh_fleet_d";
    fs::remove_all(dir);
    auto res = generate_fleet(cfg, ocv, gp, dir);
    CHECK(res.n_failed == 0);
    for (const auto& b : res.batteries) CHECK(!b.failed);
}

TEST_CASE("early strong knee fails the battery and truth reflects the ramp") {
    auto ocv = soc::OcvCurve::builtin_default();
    soc::GassingParams gp;
    auto cfg = small_config();
    cfg.n_batteries = 1;
    // A 300-day onset request is clamped to the cohort floor (min_days - 25);
    // with strong acceleration the crossing then lands before every possible
    // series end, so the battery always fails.
    cfg.knee_onset_mean_days = 300;
    cfg.knee_onset_sigma = 0.0;
    cfg.knee_temp_coeff = 0.0;
    cfg.knee_usage_coeff = 0.0;
    cfg.slope_noise_sigma = 0.0;
    cfg.knee_quadratic_ohm_per_day2 = 8e-4;
    const std::string dir = "/tmp/soh_fleet_e";
    fs::remove_all(dir);
    auto res = generate_fleet(cfg, ocv, gp, dir);
    REQUIRE(res.batteries.size() == 1);
    CHECK(res.batteries[0].knee_onset_day == cfg.min_days - 25.0);
    CHECK(res.batteries[0].failed);
    CHECK(res.batteries[0].failure_day > res.batteries[0].knee_onset_day);
    CHECK(res.batteries[0].failure_day < res.batteries[0].knee_onset_day + 35.0);

    auto truth = load_ground_truth(dir + "/ground_truth.csv");
    REQUIRE(truth.size() == 1);
    const auto& series = truth[0].second;
    // The knee dominates the tail: the last value clearly exceeds the value
    // at onset.
    double at_onset = 0, at_end = series.r0_ohm.back();
    for (std::size_t i = 0; i < series.t_days.size(); ++i)
        if (series.t_days[i] <= res.batteries[0].knee_onset_day) at_onset = series.r0_ohm[i];
    CHECK(at_end - at_onset > 0.3);

    std::ifstream labels(dir + "/labels.csv");
    std::string line;
    std::getline(labels, line);
    std::getline(labels, line);
    CHECK(line == "b0000,failed");
}

TEST_CASE("infeasible configurations are rejected") {
    FleetConfig cfg;
    cfg.n_batteries = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    FleetConfig cfg2;
    cfg2.min_days = 500;
    cfg2.max_days = 450;
    CHECK_THROWS_AS(cfg2.validate(), ConfigError);
    FleetConfig cfg3;
    cfg3.sample_period_s = 700;  // would break the gap condition
    CHECK_THROWS_AS(cfg3.validate(), ConfigError);
}

TEST_CASE("ground truth comparison metrics") {
    population::HealthTrajectory est;
    est.battery_id = "b1";
    TruthSeries truth;
    for (int day = 0; day < 100; ++day) {
        truth.t_days.push_back(day + 0.5);
        truth.r0_ohm.push_back(0.3 + 0.001 * day);
    }
    for (int day = 2; day < 98; day += 5) {
        population::TrajPoint p;
        p.age_seconds = (day + 0.5) * 86400.0;
        p.r0_mean = 0.3 + 0.001 * day;
        p.r0_var = 1e-6;
        est.points.push_back(p);
    }
    SUBCASE("identical estimate: zero error, full coverage") {
        auto m = ground_truth_compare(est, "b1", truth);
        CHECK(m.rmse == doctest::Approx(0.0).scale(1).epsilon(1e-12));
        CHECK(m.coverage == 1.0);
        CHECK(m.truth_range == doctest::Approx(0.099).epsilon(1e-9));
    }
    SUBCASE("constant offset: rmse equals the offset, tight bands lose coverage") {
        auto shifted = est;
        for (auto& p : shifted.points) p.r0_mean += 0.1;
        auto m = ground_truth_compare(shifted, "b1", truth);
        CHECK(m.rmse == doctest::Approx(0.1).epsilon(1e-9));
        CHECK(m.coverage == 0.0);
    }
    SUBCASE("battery id mismatch") {
        CHECK_THROWS_AS(ground_truth_compare(est, "b2", truth), DomainError);
    }
}

TEST_CASE("fleet config JSON round-trips") {
    auto cfg = small_config();
    cfg.failure_threshold_ohm = 0.91;
    cfg.write_json("/tmp/soh_fleet_cfg.json");
    auto back = FleetConfig::from_json_file("/tmp/soh_fleet_cfg.json");
    CHECK(back.failure_threshold_ohm == 0.91);
    CHECK(back.n_batteries == cfg.n_batteries);
    CHECK(back.sample_period_s == cfg.sample_period_s);
}
