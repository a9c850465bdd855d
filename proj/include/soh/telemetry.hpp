#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "soh/common.hpp"
#include "soh/soc.hpp"

namespace soh::telemetry {

struct TelemetryRecord {
    std::int64_t timestamp;  // seconds since epoch
    double current;          // A, charge-positive
    double voltage;          // V, terminal
    double temperature;      // degC
};

struct IngestStats {
    std::size_t rows = 0;
    std::size_t dropped_out_of_range = 0;
    std::size_t duplicates_collapsed = 0;
};

struct BatterySeries {
    std::string battery_id;
    std::vector<TelemetryRecord> records;  // strictly increasing timestamps
    IngestStats stats;
};

// Qualifying-segment thresholds and conditioning filters.
struct TelemetryConfig {
    double min_duration_s = 6000.0;
    double start_v_min = 11.5;
    double start_v_max = 12.9;
    double start_i_max = 0.1;       // A
    double min_peak_v = 14.0;       // max raw voltage in segment must exceed this
    double max_gap_s = 610.0;       // raw sample gaps must stay below this
    double truncate_v_max = 14.0;   // steps above this voltage are removed
    double min_current_a = 0.2;     // steps below this current are removed
    int start_sustain_samples = 2;  // consecutive raw samples >= start_i_max to open a segment
    double high_v_close_s = 7200.0; // close a segment stuck above truncate_v_max this long
};

// Parses the delimited telemetry schema and returns one series per battery,
// sorted by battery id. Rows outside sanity bounds (V in (0,20), T in
// (-20,80)) are dropped and counted; duplicate timestamps keep the last row.
std::vector<BatterySeries> ingest(const std::string& path);

struct RawSegment {
    std::size_t first, last;  // inclusive index range into the record series
};

// Non-overlapping candidates satisfying all five qualifying conditions on
// the raw data.
std::vector<RawSegment> select_segments(std::span<const TelemetryRecord> records,
                                        const TelemetryConfig& cfg);

struct ChargeSegment {
    std::string battery_id;
    std::int64_t start_time = 0;   // seconds since epoch of the first grid point
    double age_seconds = 0;        // start_time minus battery beginning of life
    double step_seconds = 60.0;
    std::vector<double> current, voltage, temperature;

    std::size_t size() const { return current.size(); }
};

// Monotone piecewise-cubic resampling of a raw candidate onto the uniform
// one-minute grid spanning it.
ChargeSegment resample(std::span<const TelemetryRecord> records, const RawSegment& seg,
                       const std::string& battery_id, std::int64_t bol_timestamp,
                       double step_seconds = 60.0);

struct FilterResult {
    ChargeSegment segment;          // retained steps only
    std::vector<std::size_t> kept;  // indices into the input segment
    std::size_t dropped_voltage = 0;
    std::size_t dropped_current = 0;
    std::size_t dropped_overpotential = 0;
};

// Removes steps with voltage above the truncation limit, current below the
// conditioning threshold, and non-positive overpotential (V0(c) >= V).
FilterResult truncate_and_filter(const ChargeSegment& segment, const soc::SocSeries& soc_series,
                                 const soc::OcvCurve& ocv, const TelemetryConfig& cfg);

}  // namespace soh::telemetry
