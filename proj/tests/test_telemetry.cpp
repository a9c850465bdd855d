#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "soh/pchip.hpp"
#include "soh/rng.hpp"
#include "soh/soc.hpp"
#include "soh/telemetry.hpp"

using namespace soh;
using telemetry::TelemetryRecord;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path.string();
}

std::vector<TelemetryRecord> qualifying_series() {
    // Rest sample, then a 2-hour charge reaching above 14 V, 300 s cadence.
    std::vector<TelemetryRecord> recs;
    recs.push_back({0, 0.05, 12.0, 25.0});
    for (int k = 1; k <= 24; ++k) {
        const double v = 12.1 + (14.2 - 12.1) * double(k) / 24.0;
        recs.push_back({std::int64_t(300 * k), 2.0, v, 25.0});
    }
    // Evening lapse below the start threshold.
    for (int k = 0; k < 6; ++k)
        recs.push_back({std::int64_t(7200 + 700 * (k + 1)), 0.02, 12.6, 24.0});
    return recs;
}

}  // namespace

TEST_CASE("pchip reproduces knots and preserves monotone shape") {
    std::vector<double> x = {0, 60, 180, 240, 400};
    std::vector<double> y = {11.9, 12.2, 12.4, 13.5, 13.9};
    Pchip p(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(p(x[i]) == y[i]);
    double prev = y[0];
    for (double q = 0; q <= 400; q += 1.0) {
        const double v = p(q);
        CHECK(v >= prev - 1e-12);
        CHECK(v >= y.front());
        CHECK(v <= y.back());
        prev = v;
    }
}

TEST_CASE("pchip midpoint value matches the independent reference") {
    std::vector<double> x = {0, 120, 240};
    std::vector<double> y = {12.0, 12.4, 12.5};
    Pchip p(x, y);
    CHECK(p(60.0) == doctest::Approx(12.24875).epsilon(1e-12));
    oracle::ReferencePchip ref(x, y);
    CHECK(p(60.0) == doctest::Approx(ref(60.0)).epsilon(1e-12));

    // Random monotone data: both implementations agree everywhere.
    std::mt19937_64 g(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> rx{0.0}, ry{10.0};
        for (int i = 1; i < 12; ++i) {
            rx.push_back(rx.back() + rng::uniform(g, 30.0, 400.0));
            ry.push_back(ry.back() + rng::uniform(g, 0.0, 0.5));
        }
        Pchip a(rx, ry);
        oracle::ReferencePchip b(rx, ry);
        for (int q = 0; q < 100; ++q) {
            const double t = rng::uniform(g, rx.front(), rx.back());
            CHECK(a(t) == doctest::Approx(b(t)).epsilon(1e-9));
        }
    }
}

TEST_CASE("ingest parses, sorts, bounds-checks and deduplicates") {
    SUBCASE("three valid rows in timestamp order") {
        auto path = write_temp("soh_ingest1.csv",
                               "battery_id,timestamp_s,current_a,voltage_v,temperature_c\n"
                               "b1,100,1.5,12.5,25\n"
                               "b1,40,0.5,12.1,24\n"
                               "b1,70,1.0,12.3,24.5\n");
        auto series = telemetry::ingest(path);
        REQUIRE(series.size() == 1);
        REQUIRE(series[0].records.size() == 3);
        CHECK(series[0].records[0].timestamp == 40);
        CHECK(series[0].records[2].timestamp == 100);
    }
    SUBCASE("out-of-range voltage dropped and counted") {
        auto path = write_temp("soh_ingest2.csv",
                               "battery_id,timestamp_s,current_a,voltage_v,temperature_c\n"
                               "b1,1,1.0,25.0,25\n"
                               "b1,2,1.0,12.5,25\n");
        auto series = telemetry::ingest(path);
        REQUIRE(series[0].records.size() == 1);
        CHECK(series[0].stats.dropped_out_of_range == 1);
    }
    SUBCASE("duplicate timestamps keep the last row") {
        auto path = write_temp("soh_ingest3.csv",
                               "battery_id,timestamp_s,current_a,voltage_v,temperature_c\n"
                               "b1,5,1.0,12.0,25\n"
                               "b1,5,2.0,12.9,25\n");
        auto series = telemetry::ingest(path);
        REQUIRE(series[0].records.size() == 1);
        CHECK(series[0].records[0].current == 2.0);
        CHECK(series[0].stats.duplicates_collapsed == 1);
    }
    SUBCASE("malformed row reports the line number") {
        auto path = write_temp("soh_ingest4.csv",
                               "battery_id,timestamp_s,current_a,voltage_v,temperature_c\n"
                               "b1,5,notanumber,12.0,25\n");
        CHECK_THROWS_WITH_AS(telemetry::ingest(path), doctest::Contains(":2:"), ParseError);
    }
    SUBCASE("empty file yields empty series") {
        auto path = write_temp("soh_ingest5.csv", "");
        CHECK(telemetry::ingest(path).empty());
    }
}

TEST_CASE("select_segments applies the five qualifying conditions") {
    telemetry::TelemetryConfig cfg;

    SUBCASE("qualifying segment accepted") {
        auto recs = qualifying_series();
        auto segs = telemetry::select_segments(recs, cfg);
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].first == 0);
        CHECK(recs[segs[0].first].current < 0.1);
        CHECK(double(recs[segs[0].last].timestamp - recs[segs[0].first].timestamp) > 6000);
    }
    SUBCASE("gap of 900 s rejects the segment") {
        auto recs = qualifying_series();
        for (auto& r : recs)
            if (r.timestamp >= 3600) r.timestamp += 600;  // one 900 s gap mid-charge
        CHECK(telemetry::select_segments(recs, cfg).empty());
    }
    SUBCASE("empty series") {
        CHECK(telemetry::select_segments(std::vector<TelemetryRecord>{}, cfg).empty());
    }
    SUBCASE("starting voltage outside the window rejects") {
        auto recs = qualifying_series();
        recs[0].voltage = 13.2;
        CHECK(telemetry::select_segments(recs, cfg).empty());
    }
    SUBCASE("peak voltage at most 14 V rejects") {
        auto recs = qualifying_series();
        for (auto& r : recs) r.voltage = std::min(r.voltage, 13.9);
        CHECK(telemetry::select_segments(recs, cfg).empty());
    }
}

TEST_CASE("property: emitted segments always satisfy the qualifying conditions") {
    telemetry::TelemetryConfig cfg;
    std::mt19937_64 g(77);
    int emitted = 0;
    for (int rep = 0; rep < 300; ++rep) {
        auto recs = oracle::random_telemetry_series(g);
        for (const auto& seg : telemetry::select_segments(recs, cfg)) {
            ++emitted;
            const auto* r = recs.data();
            CHECK(double(r[seg.last].timestamp - r[seg.first].timestamp) > cfg.min_duration_s);
            CHECK(r[seg.first].voltage >= cfg.start_v_min);
            CHECK(r[seg.first].voltage <= cfg.start_v_max);
            CHECK(r[seg.first].current < cfg.start_i_max);
            double peak = 0, gap = 0;
            for (std::size_t i = seg.first; i <= seg.last; ++i) {
                peak = std::max(peak, r[i].voltage);
                if (i > seg.first) gap = std::max(gap, double(r[i].timestamp - r[i - 1].timestamp));
            }
            CHECK(peak > cfg.min_peak_v);
            CHECK(gap < cfg.max_gap_s);
        }
    }
    CHECK(emitted > 0);  // the generator must exercise the accept path
}

TEST_CASE("resample hits knots, preserves monotone spans, rejects degenerate input") {
    std::vector<TelemetryRecord> recs;
    for (int k = 0; k <= 30; ++k)
        recs.push_back({std::int64_t(240 * k), 1.5 + 0.01 * k, 12.0 + 0.05 * k, 25.0});
    telemetry::RawSegment seg{0, 30};
    auto cs = telemetry::resample(recs, seg, "b1", -86400);
    CHECK(cs.age_seconds == 86400.0);
    CHECK(cs.size() == std::size_t(240 * 30 / 60 + 1));
    // Knots land on the grid every 4 steps.
    for (int k = 0; k <= 30; ++k) CHECK(cs.voltage[std::size_t(4 * k)] == doctest::Approx(12.0 + 0.05 * k).epsilon(1e-12));
    for (std::size_t i = 1; i < cs.size(); ++i) CHECK(cs.voltage[i] >= cs.voltage[i - 1] - 1e-12);

    telemetry::RawSegment degenerate{3, 3};
    CHECK_THROWS_AS(telemetry::resample(recs, degenerate, "b1", 0), DomainError);
}

TEST_CASE("resample is the identity on uniform one-minute data") {
    std::vector<TelemetryRecord> recs;
    std::mt19937_64 g(9);
    double v = 12.0;
    for (int k = 0; k <= 100; ++k) {
        v += rng::uniform(g, -0.01, 0.03);
        recs.push_back({std::int64_t(60 * k), rng::uniform(g, 0.5, 2.0), v, 25.0});
    }
    auto cs = telemetry::resample(recs, {0, 100}, "b1", 0);
    REQUIRE(cs.size() == 101);
    for (int k = 0; k <= 100; ++k) {
        CHECK(cs.voltage[std::size_t(k)] == doctest::Approx(recs[std::size_t(k)].voltage).epsilon(1e-14));
        CHECK(cs.current[std::size_t(k)] == doctest::Approx(recs[std::size_t(k)].current).epsilon(1e-14));
    }
}

TEST_CASE("truncate_and_filter removes high-voltage, low-current and non-positive overpotential steps") {
    auto ocv = soc::OcvCurve::builtin_default();
    telemetry::TelemetryConfig cfg;
    telemetry::ChargeSegment seg;
    seg.battery_id = "b1";
    seg.step_seconds = 60;
    // Four steps: high voltage, low current, non-positive overpotential, good.
    seg.voltage = {14.5, 13.0, 13.0, 13.0};
    seg.current = {2.0, 0.1, 2.0, 2.0};
    seg.temperature = {25, 25, 25, 25};
    soc::SocSeries s;
    const double c_high = ocv.concentration(13.2);  // V0 above the terminal voltage
    const double c_low = ocv.concentration(12.5);
    s.concentration = {c_low, c_low, c_high, c_low};
    s.variance = {0, 0, 0, 0};

    auto res = telemetry::truncate_and_filter(seg, s, ocv, cfg);
    CHECK(res.dropped_voltage == 1);
    CHECK(res.dropped_current == 1);
    CHECK(res.dropped_overpotential == 1);
    REQUIRE(res.kept.size() == 1);
    CHECK(res.kept[0] == 3);
    CHECK(res.segment.size() == 1);
    CHECK(res.segment.size() <= seg.size());
    CHECK(res.kept.size() + res.dropped_voltage + res.dropped_current + res.dropped_overpotential ==
          seg.size());
}
