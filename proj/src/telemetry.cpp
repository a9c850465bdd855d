#include "soh/telemetry.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include "soh/csv.hpp"
#include "soh/pchip.hpp"

namespace soh::telemetry {

std::vector<BatterySeries> ingest(const std::string& path) {
    if (std::filesystem::file_size(path) == 0) return {};
    csv::Reader r(path);
    r.expect_header({"battery_id", "timestamp_s", "current_a", "voltage_v", "temperature_c"});

    std::map<std::string, BatterySeries> per_battery;
    std::vector<std::string> row;
    while (r.next_row(row)) {
        if (row.size() != 5)
            throw ParseError(path + ":" + std::to_string(r.line_number()) + ": expected 5 fields, got " +
                             std::to_string(row.size()));
        TelemetryRecord rec;
        rec.timestamp = r.to_int(row[1]);
        rec.current = r.to_double(row[2]);
        rec.voltage = r.to_double(row[3]);
        rec.temperature = r.to_double(row[4]);
        auto& series = per_battery[row[0]];
        series.battery_id = row[0];
        ++series.stats.rows;
        if (rec.voltage <= 0.0 || rec.voltage >= 20.0 || rec.temperature <= -20.0 ||
            rec.temperature >= 80.0) {
            ++series.stats.dropped_out_of_range;
            continue;
        }
        series.records.push_back(rec);
    }

    std::vector<BatterySeries> out;
    out.reserve(per_battery.size());
    for (auto& [id, series] : per_battery) {
        auto& recs = series.records;
        std::stable_sort(recs.begin(), recs.end(),
                         [](const TelemetryRecord& a, const TelemetryRecord& b) {
                             return a.timestamp < b.timestamp;
                         });
        // Duplicates keep the last transmission.
        std::size_t w = 0;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (w > 0 && recs[w - 1].timestamp == recs[i].timestamp) {
                recs[w - 1] = recs[i];
                ++series.stats.duplicates_collapsed;
            } else {
                recs[w++] = recs[i];
            }
        }
        recs.resize(w);
        out.push_back(std::move(series));
    }
    return out;
}

namespace {

bool qualifies(std::span<const TelemetryRecord> records, std::size_t first, std::size_t last,
               const TelemetryConfig& cfg) {
    const double duration = double(records[last].timestamp - records[first].timestamp);
    if (!(duration > cfg.min_duration_s)) return false;
    if (records[first].voltage < cfg.start_v_min || records[first].voltage > cfg.start_v_max)
        return false;
    if (!(records[first].current < cfg.start_i_max)) return false;
    double peak_v = 0;
    double max_gap = 0;
    for (std::size_t i = first; i <= last; ++i) {
        peak_v = std::max(peak_v, records[i].voltage);
        if (i > first)
            max_gap = std::max(max_gap, double(records[i].timestamp - records[i - 1].timestamp));
    }
    if (!(peak_v > cfg.min_peak_v)) return false;
    if (!(max_gap < cfg.max_gap_s)) return false;
    return true;
}

}  // namespace

std::vector<RawSegment> select_segments(std::span<const TelemetryRecord> records,
                                        const TelemetryConfig& cfg) {
    std::vector<RawSegment> out;
    const std::size_t n = records.size();
    if (n < 2) return out;

    std::size_t i = 1;
    while (i < n) {
        // Segment opens on a below-threshold sample followed by a sustained
        // crossing to >= start_i_max.
        if (!(records[i - 1].current < cfg.start_i_max && records[i].current >= cfg.start_i_max)) {
            ++i;
            continue;
        }
        bool sustained = true;
        for (int k = 0; k < cfg.start_sustain_samples; ++k) {
            if (i + k >= n || records[i + k].current < cfg.start_i_max) {
                sustained = false;
                break;
            }
        }
        if (!sustained) {
            ++i;
            continue;
        }

        const std::size_t first = i - 1;
        std::size_t last = i;
        std::size_t high_v_start = 0;  // first index of an ongoing V > truncate_v_max stretch
        bool in_high_v = false;
        bool closed = false;
        for (std::size_t j = i; j < n && !closed; ++j) {
            if (records[j].current < cfg.start_i_max) {
                // Current lapse: segment ends at the last on-charge sample if
                // the lapse persists longer than the gap limit.
                std::size_t k = j;
                while (k < n && records[k].current < cfg.start_i_max) ++k;
                const double lapse = double((k < n ? records[k].timestamp : records[n - 1].timestamp) -
                                            records[j - 1].timestamp);
                if (k == n || lapse > cfg.max_gap_s) {
                    last = j - 1;
                    closed = true;
                    break;
                }
                j = k - 1;
                in_high_v = false;
                continue;
            }
            if (records[j].voltage > cfg.truncate_v_max) {
                if (!in_high_v) {
                    in_high_v = true;
                    high_v_start = j;
                }
                // A persistent high-voltage hold closes the segment at the
                // first sample of the hold, keeping the peak-voltage evidence.
                if (double(records[j].timestamp - records[high_v_start].timestamp) >
                    cfg.high_v_close_s) {
                    last = high_v_start;
                    closed = true;
                    break;
                }
            } else {
                in_high_v = false;
            }
            last = j;
        }

        if (last > first && qualifies(records, first, last, cfg)) out.push_back({first, last});
        i = std::max(last, i) + 1;
    }
    return out;
}

ChargeSegment resample(std::span<const TelemetryRecord> records, const RawSegment& seg,
                       const std::string& battery_id, std::int64_t bol_timestamp,
                       double step_seconds) {
    const std::size_t n = seg.last - seg.first + 1;
    if (seg.last < seg.first || n < 2) throw DomainError("resample: degenerate segment");

    std::vector<double> t(n), cur(n), vol(n), tmp(n);
    const std::int64_t t0 = records[seg.first].timestamp;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = records[seg.first + i];
        t[i] = double(r.timestamp - t0);
        cur[i] = r.current;
        vol[i] = r.voltage;
        tmp[i] = r.temperature;
    }

    Pchip pc_cur(t, cur), pc_vol(t, vol), pc_tmp(t, tmp);

    ChargeSegment out;
    out.battery_id = battery_id;
    out.start_time = t0;
    out.age_seconds = double(t0 - bol_timestamp);
    out.step_seconds = step_seconds;
    const std::size_t steps = std::size_t(t.back() / step_seconds) + 1;
    out.current.resize(steps);
    out.voltage.resize(steps);
    out.temperature.resize(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double q = double(k) * step_seconds;
        out.current[k] = pc_cur(q);
        out.voltage[k] = pc_vol(q);
        out.temperature[k] = pc_tmp(q);
    }
    return out;
}

FilterResult truncate_and_filter(const ChargeSegment& segment, const soc::SocSeries& soc_series,
                                 const soc::OcvCurve& ocv, const TelemetryConfig& cfg) {
    if (soc_series.concentration.size() != segment.size())
        throw DomainError("truncate_and_filter: SoC series does not match segment");

    FilterResult res;
    res.segment.battery_id = segment.battery_id;
    res.segment.start_time = segment.start_time;
    res.segment.age_seconds = segment.age_seconds;
    res.segment.step_seconds = segment.step_seconds;

    for (std::size_t i = 0; i < segment.size(); ++i) {
        if (segment.voltage[i] > cfg.truncate_v_max) {
            ++res.dropped_voltage;
            continue;
        }
        if (segment.current[i] < cfg.min_current_a) {
            ++res.dropped_current;
            continue;
        }
        if (ocv.voltage(soc_series.concentration[i]) >= segment.voltage[i]) {
            ++res.dropped_overpotential;
            continue;
        }
        res.kept.push_back(i);
        res.segment.current.push_back(segment.current[i]);
        res.segment.voltage.push_back(segment.voltage[i]);
        res.segment.temperature.push_back(segment.temperature[i]);
    }
    return res;
}

}  // namespace soh::telemetry
