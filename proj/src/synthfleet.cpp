#include "soh/synthfleet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "soh/csv.hpp"
#include "soh/rng.hpp"
#include "soh/telemetry.hpp"

namespace soh::fleet {

namespace fs = std::filesystem;
using nlohmann::json;

void FleetConfig::validate() const {
    if (n_batteries <= 0) throw ConfigError("fleet: n_batteries must be positive");
    if (!(min_days >= 1) || !(max_days >= min_days))
        throw ConfigError("fleet: series length range is empty");
    if (!(min_days >= 400) || !(max_days <= 760))
        throw ConfigError("fleet: series lengths must stay within 400-760 days");
    if (!(sample_period_s > 0) || sample_period_s >= 610)
        throw ConfigError("fleet: sample period must be positive and below the 610 s gap limit");
    if (noise_v < 0 || noise_i < 0 || noise_t < 0 || gap_probability_per_day < 0)
        throw ConfigError("fleet: noise and gap rates must be non-negative");
    if (!(failure_threshold_ohm > 0)) throw ConfigError("fleet: failure threshold must be positive");
    if (!(panel_current_max_a > 0)) throw ConfigError("fleet: panel current must be positive");
}

namespace {

struct BatteryParams {
    double base = 0, temp_offset = 0, usage = 0, slope_per_day = 0, knee_onset_day = 0;
    double n_days = 0;
};

double surface_shape(const FleetConfig& c, double signed_current, double conc, double temp) {
    const double a = std::exp(-c.arrhenius_per_c * (temp - 25.0));
    double cc = 1.0 + c.conc_coeff * (c.conc_ref - conc);
    const double hi = conc - c.conc_ref;
    if (hi > 0) cc += c.conc_hi_coeff * hi * hi;
    if (signed_current > 0) {
        // Charge-acceptance pole: charging resistance grows sharply near
        // saturation; discharge does not see it.
        const double gap = std::max(c.conc_pole - conc, 0.04);
        cc += c.conc_pole_coeff / gap;
    }
    const double mag = std::abs(signed_current);
    const double g = 1.0 / std::sqrt(1.0 + (mag / c.bv_current_a) * (mag / c.bv_current_a));
    return a * cc * g;
}

double aging_at(const BatteryParams& p, const FleetConfig& c, double t_days) {
    double v = p.slope_per_day * t_days;
    const double dt = t_days - p.knee_onset_day;
    if (dt > 0) v += c.knee_quadratic_ohm_per_day2 * dt * dt;
    return v;
}

double true_r0(const BatteryParams& p, const FleetConfig& c, double signed_current, double conc,
               double temp, double t_days) {
    return p.base * surface_shape(c, signed_current, conc, temp) + aging_at(p, c, t_days);
}

BatteryParams draw_params(const FleetConfig& c, std::mt19937_64& g) {
    BatteryParams p;
    p.n_days = std::floor(rng::uniform(g, c.min_days, c.max_days + 1.0));
    p.n_days = std::min(p.n_days, c.max_days);
    p.base = rng::uniform(g, c.r0_base_min, c.r0_base_max);
    p.temp_offset = c.temp_offset_std_c * rng::normal(g);
    p.usage = rng::lognormal(g, 0.0, 0.30);
    const double slope_mod =
        std::max(0.1, 1.0 + c.slope_temp_coeff * p.temp_offset + c.slope_usage_coeff * (p.usage - 1.0));
    p.slope_per_day =
        c.aging_slope_ohm_per_year / 365.0 * slope_mod * rng::lognormal(g, 0.0, c.slope_noise_sigma);
    const double knee_mod =
        std::max(0.3, 1.0 + c.knee_temp_coeff * p.temp_offset + c.knee_usage_coeff * (p.usage - 1.0));
    p.knee_onset_day =
        c.knee_onset_mean_days / knee_mod * rng::lognormal(g, 0.0, c.knee_onset_sigma);
    p.knee_onset_day = std::max(p.knee_onset_day, c.min_days - 25.0);
    return p;
}

double threshold_crossing_day(const BatteryParams& p, const FleetConfig& c) {
    const double static_part =
        p.base * surface_shape(c, c.ref_current_a, c.ref_conc, c.ref_temp_c + p.temp_offset);
    for (double day = 1; day <= c.max_days + 1; day += 1.0) {
        if (static_part + aging_at(p, c, day) >= c.failure_threshold_ohm) {
            for (double h = day - 1.0; h <= day; h += 1.0 / 24.0)
                if (static_part + aging_at(p, c, h) >= c.failure_threshold_ohm) return h;
            return day;
        }
    }
    return 0;  // never crosses
}

}  // namespace

FleetResult generate_fleet(const FleetConfig& cfg, const soc::OcvCurve& ocv,
                           const soc::GassingParams& gassing, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/telemetry");

    FleetResult result;
    double mom_i = 0, mom_t = 0, mom_c = 0;
    std::size_t mom_n = 0;
    std::vector<BatteryParams> params(std::size_t(cfg.n_batteries));

    for (int b = 0; b < cfg.n_batteries; ++b) {
        std::mt19937_64 g(mix_seed(cfg.seed, std::uint64_t(b)));
        BatteryParams p = draw_params(cfg, g);

        BatterySummary summary;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "b%04d", b);
        summary.battery_id = idbuf;

        const double crossing = threshold_crossing_day(p, cfg);
        bool failed = false;
        double series_days = p.n_days;
        if (crossing > 0 && crossing < p.n_days) {
            failed = true;
            const double lag = rng::uniform(g, cfg.repair_lag_min_days, cfg.repair_lag_max_days);
            series_days = std::max(std::min(p.n_days, crossing + lag), cfg.min_days);
        }
        p.n_days = series_days;
        summary.n_days = series_days;
        summary.failed = failed;
        summary.failure_day = failed ? crossing : 0;
        summary.r0_base = p.base;
        summary.temp_offset = p.temp_offset;
        summary.usage = p.usage;
        summary.aging_slope_per_day = p.slope_per_day;
        summary.knee_onset_day = p.knee_onset_day;
        if (cfg.label_flip_probability > 0 && rng::u01(g) < cfg.label_flip_probability) {
            summary.failed = !summary.failed;
            summary.label_flipped = true;
        }

        csv::Writer w(out_dir + "/telemetry/" + summary.battery_id + ".csv");
        w.header({"battery_id", "timestamp_s", "current_a", "voltage_v", "temperature_c"});

        const int forced_day_offset = b % 7;
        const std::int64_t t0 = 1577836800;  // fixed origin keeps runs reproducible
        const double dt = cfg.sample_period_s;
        const std::int64_t total_steps = std::int64_t(p.n_days * 86400.0 / dt);

        double conc = cfg.conc_taper - 0.25;
        bool taper = false;
        double taper_start_s = 0, taper_start_i = 0;
        bool lvd = false;

        int planned_day = -1;
        double day_quality = 1.0, gap_start = -1, gap_len = 0, evening_load = 0;
        bool forced_day = false;

        std::vector<telemetry::TelemetryRecord> clean;
        clean.reserve(std::size_t(total_steps));

        for (std::int64_t step = 0; step < total_steps; ++step) {
            const double t_s = double(step) * dt;
            const int day = int(t_s / 86400.0);
            const double tod = t_s - day * 86400.0;
            if (day != planned_day) {
                planned_day = day;
                forced_day = (day % 7) == forced_day_offset;
                day_quality = (forced_day || rng::u01(g) < cfg.sunny_probability)
                                  ? 1.0
                                  : rng::uniform(g, cfg.cloudy_min, cfg.cloudy_max);
                gap_start = -1;
                if (!forced_day && rng::u01(g) < cfg.gap_probability_per_day) {
                    gap_start = rng::uniform(g, 0.0, 86400.0);
                    gap_len = rng::uniform(g, cfg.gap_min_s, cfg.gap_max_s);
                }
                evening_load = cfg.night_load_a * p.usage * rng::uniform(g, 0.8, 1.2);
                taper = false;
            }

            const double t_days = t_s / 86400.0;
            const double temp = cfg.temp_mean_c + p.temp_offset +
                                cfg.temp_diurnal_amp_c *
                                    std::sin(2.0 * M_PI * (tod - 32400.0) / 86400.0);

            double solar = 0;
            if (tod > 21600 && tod < 64800)
                solar = cfg.panel_current_max_a * day_quality *
                        std::max(0.0, std::sin(M_PI * (tod - 21600.0) / 43200.0));
            double load = cfg.standby_load_a;
            if (tod >= 64800 && tod < 82800) load += evening_load;
            if (lvd) load = 0.2 * cfg.standby_load_a;

            double current = solar - load;
            const double v0c = ocv.voltage(std::clamp(conc, ocv.c_min(), ocv.c_max()));
            const auto terminal_v = [&](double i_amp) {
                return v0c + true_r0(p, cfg, i_amp, conc, temp, t_days) * i_amp;
            };
            double v = terminal_v(current);

            if (current > 0) {
                // Controller: bulk until the absorb limit, then an exponential
                // current taper down to a trickle.
                if (!taper && (v >= cfg.absorb_voltage || conc >= cfg.conc_taper)) {
                    taper = true;
                    taper_start_s = t_s;
                    taper_start_i = std::max(current, cfg.taper_floor_a);
                }
                if (taper) {
                    const double cmd =
                        cfg.taper_floor_a + (taper_start_i - cfg.taper_floor_a) *
                                                std::exp(-(t_s - taper_start_s) / cfg.taper_tau_s);
                    current = std::min(current, cmd);
                    v = terminal_v(current);
                }
            } else {
                taper = false;
            }

            if (v < cfg.lvd_voltage && current < 0) lvd = true;
            if (solar > 0.5) lvd = false;

            // True electrolyte update: gassing plus charge-acceptance fade
            // near saturation (excess current feeds the side reaction).
            const double gas = gassing.i_gas0 *
                               std::exp(gassing.c_t * (temp - gassing.t_0) +
                                        gassing.c_v * (v - gassing.v_0ref));
            double eta = 1.0;
            if (current > 0)
                eta = std::clamp((cfg.conc_sat - conc) / (cfg.conc_sat - cfg.conc_eta), 0.0, 1.0);
            conc += (eta * std::max(current, 0.0) + std::min(current, 0.0) - gas) /
                    (gassing.faraday * gassing.v_elec) * dt;
            conc = std::clamp(conc, ocv.c_min() + 0.3, ocv.c_max() - 0.05);

            if (current >= 0.2 && v <= 14.0) {
                mom_i += current;
                mom_t += temp;
                mom_c += conc;
                ++mom_n;
            }

            if (gap_start >= 0 && tod >= gap_start && tod < gap_start + gap_len) continue;

            telemetry::TelemetryRecord rec;
            rec.timestamp = t0 + std::int64_t(t_s);
            rec.current = current + cfg.noise_i * rng::normal(g);
            rec.voltage = v + cfg.noise_v * rng::normal(g);
            rec.temperature = temp + cfg.noise_t * rng::normal(g);
            clean.push_back(rec);

            w.field(summary.battery_id);
            w.field(std::int64_t(rec.timestamp));
            w.field(rec.current);
            w.field(rec.voltage);
            w.field(rec.temperature);
            w.end_row();
        }
        summary.rows = clean.size();

        // Reject configurations that fail to produce at least one qualifying
        // segment per simulated week.
        telemetry::TelemetryConfig tcfg;
        auto segs = telemetry::select_segments(clean, tcfg);
        summary.qualifying_segments = segs.size();
        std::vector<int> week_hits(std::size_t(p.n_days / 7.0) + 1, 0);
        for (const auto& s : segs) {
            const double day_of = double(clean[s.first].timestamp - t0) / 86400.0;
            ++week_hits[std::size_t(day_of / 7.0)];
        }
        for (std::size_t wk = 0; wk + 1 < week_hits.size(); ++wk)
            if (week_hits[wk] == 0)
                throw ConfigError("fleet config rejected: battery " + summary.battery_id +
                                  " has no qualifying segment in week " + std::to_string(wk));

        if (summary.failed) ++result.n_failed;
        result.batteries.push_back(std::move(summary));
        params[std::size_t(b)] = p;
    }

    result.mean_i = mom_n ? mom_i / double(mom_n) : 0;
    result.mean_t = mom_n ? mom_t / double(mom_n) : 0;
    result.mean_c = mom_n ? mom_c / double(mom_n) : 0;

    {
        csv::Writer lw(out_dir + "/labels.csv");
        lw.header({"battery_id", "label"});
        for (const auto& s : result.batteries) {
            lw.field(s.battery_id);
            lw.field(std::string(s.failed ? "failed" : "healthy"));
            lw.end_row();
        }
    }
    {
        // Daily truth at the fleet-mean charge-window operating point, which
        // the pipeline's calibration point approximates.
        csv::Writer tw(out_dir + "/ground_truth.csv");
        tw.header({"battery_id", "t_days", "true_r0_ohm"});
        for (int b = 0; b < cfg.n_batteries; ++b) {
            const auto& s = result.batteries[std::size_t(b)];
            const auto& p = params[std::size_t(b)];
            for (double day = 0.5; day < s.n_days; day += 1.0) {
                tw.field(s.battery_id);
                tw.field(day);
                tw.field(true_r0(p, cfg, result.mean_i, result.mean_c, result.mean_t, day));
                tw.end_row();
            }
        }
    }
    cfg.write_json(out_dir + "/fleet_config.json");
    return result;
}

std::vector<std::pair<std::string, TruthSeries>> load_ground_truth(const std::string& path) {
    csv::Reader r(path);
    r.expect_header({"battery_id", "t_days", "true_r0_ohm"});
    std::vector<std::pair<std::string, TruthSeries>> out;
    std::vector<std::string> row;
    while (r.next_row(row)) {
        if (row.size() != 3)
            throw ParseError(path + ":" + std::to_string(r.line_number()) + ": expected 3 fields");
        if (out.empty() || out.back().first != row[0]) out.push_back({row[0], {}});
        out.back().second.t_days.push_back(r.to_double(row[1]));
        out.back().second.r0_ohm.push_back(r.to_double(row[2]));
    }
    return out;
}

CompareMetrics ground_truth_compare(const population::HealthTrajectory& estimate,
                                    const std::string& battery_id, const TruthSeries& truth) {
    if (estimate.battery_id != battery_id)
        throw DomainError("ground_truth_compare: battery id mismatch (" + estimate.battery_id +
                          " vs " + battery_id + ")");
    if (truth.t_days.size() < 2) throw DomainError("ground_truth_compare: truth series too short");

    CompareMetrics m;
    m.battery_id = battery_id;
    double lo = truth.r0_ohm[0], hi = truth.r0_ohm[0];
    for (double v : truth.r0_ohm) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    m.truth_range = hi - lo;

    double se = 0;
    std::size_t covered = 0, n = 0;
    for (const auto& pt : estimate.points) {
        const double day = pt.age_seconds / 86400.0;
        if (day < truth.t_days.front() || day > truth.t_days.back()) continue;
        const auto it = std::upper_bound(truth.t_days.begin(), truth.t_days.end(), day);
        const std::size_t j = std::size_t(it - truth.t_days.begin());
        double tv;
        if (j == 0)
            tv = truth.r0_ohm.front();
        else if (j >= truth.t_days.size())
            tv = truth.r0_ohm.back();
        else {
            const double a = truth.t_days[j - 1], bb = truth.t_days[j];
            const double wgt = (day - a) / (bb - a);
            tv = (1 - wgt) * truth.r0_ohm[j - 1] + wgt * truth.r0_ohm[j];
        }
        const double err = pt.r0_mean - tv;
        se += err * err;
        if (std::abs(err) <= 2.0 * std::sqrt(std::max(0.0, pt.r0_var))) ++covered;
        ++n;
    }
    if (n == 0) throw DomainError("ground_truth_compare: no overlapping points");
    m.rmse = std::sqrt(se / double(n));
    m.coverage = double(covered) / double(n);
    m.n_points = n;
    return m;
}

namespace {

json config_to_json(const FleetConfig& c) {
    json j;
    j["n_batteries"] = c.n_batteries;
    j["min_days"] = c.min_days;
    j["max_days"] = c.max_days;
    j["seed"] = c.seed;
    j["sample_period_s"] = c.sample_period_s;
    j["panel_current_max_a"] = c.panel_current_max_a;
    j["sunny_probability"] = c.sunny_probability;
    j["cloudy_min"] = c.cloudy_min;
    j["cloudy_max"] = c.cloudy_max;
    j["night_load_a"] = c.night_load_a;
    j["standby_load_a"] = c.standby_load_a;
    j["absorb_voltage"] = c.absorb_voltage;
    j["taper_tau_s"] = c.taper_tau_s;
    j["taper_floor_a"] = c.taper_floor_a;
    j["conc_taper"] = c.conc_taper;
    j["conc_eta"] = c.conc_eta;
    j["conc_sat"] = c.conc_sat;
    j["lvd_voltage"] = c.lvd_voltage;
    j["temp_mean_c"] = c.temp_mean_c;
    j["temp_diurnal_amp_c"] = c.temp_diurnal_amp_c;
    j["temp_offset_std_c"] = c.temp_offset_std_c;
    j["noise_v"] = c.noise_v;
    j["noise_i"] = c.noise_i;
    j["noise_t"] = c.noise_t;
    j["gap_probability_per_day"] = c.gap_probability_per_day;
    j["gap_min_s"] = c.gap_min_s;
    j["gap_max_s"] = c.gap_max_s;
    j["r0_base_min"] = c.r0_base_min;
    j["r0_base_max"] = c.r0_base_max;
    j["arrhenius_per_c"] = c.arrhenius_per_c;
    j["conc_ref"] = c.conc_ref;
    j["conc_coeff"] = c.conc_coeff;
    j["conc_hi_coeff"] = c.conc_hi_coeff;
    j["conc_pole"] = c.conc_pole;
    j["conc_pole_coeff"] = c.conc_pole_coeff;
    j["bv_current_a"] = c.bv_current_a;
    j["aging_slope_ohm_per_year"] = c.aging_slope_ohm_per_year;
    j["slope_temp_coeff"] = c.slope_temp_coeff;
    j["slope_usage_coeff"] = c.slope_usage_coeff;
    j["slope_noise_sigma"] = c.slope_noise_sigma;
    j["knee_onset_mean_days"] = c.knee_onset_mean_days;
    j["knee_onset_sigma"] = c.knee_onset_sigma;
    j["knee_temp_coeff"] = c.knee_temp_coeff;
    j["knee_usage_coeff"] = c.knee_usage_coeff;
    j["knee_quadratic_ohm_per_day2"] = c.knee_quadratic_ohm_per_day2;
    j["failure_threshold_ohm"] = c.failure_threshold_ohm;
    j["repair_lag_min_days"] = c.repair_lag_min_days;
    j["repair_lag_max_days"] = c.repair_lag_max_days;
    j["ref_temp_c"] = c.ref_temp_c;
    j["ref_current_a"] = c.ref_current_a;
    j["ref_conc"] = c.ref_conc;
    j["label_flip_probability"] = c.label_flip_probability;
    return j;
}

}  // namespace

json FleetConfig::to_json() const { return config_to_json(*this); }

void FleetConfig::write_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << config_to_json(*this).dump(2) << "\n";
}

FleetConfig FleetConfig::from_json(const nlohmann::json& j) {
    FleetConfig c;
    auto get = [&](const char* key, double& slot) {
        if (j.contains(key)) slot = j.at(key).get<double>();
    };
    if (j.contains("n_batteries")) c.n_batteries = j.at("n_batteries").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    get("min_days", c.min_days);
    get("max_days", c.max_days);
    get("sample_period_s", c.sample_period_s);
    get("panel_current_max_a", c.panel_current_max_a);
    get("sunny_probability", c.sunny_probability);
    get("cloudy_min", c.cloudy_min);
    get("cloudy_max", c.cloudy_max);
    get("night_load_a", c.night_load_a);
    get("standby_load_a", c.standby_load_a);
    get("absorb_voltage", c.absorb_voltage);
    get("taper_tau_s", c.taper_tau_s);
    get("taper_floor_a", c.taper_floor_a);
    get("conc_taper", c.conc_taper);
    get("conc_eta", c.conc_eta);
    get("conc_sat", c.conc_sat);
    get("lvd_voltage", c.lvd_voltage);
    get("temp_mean_c", c.temp_mean_c);
    get("temp_diurnal_amp_c", c.temp_diurnal_amp_c);
    get("temp_offset_std_c", c.temp_offset_std_c);
    get("noise_v", c.noise_v);
    get("noise_i", c.noise_i);
    get("noise_t", c.noise_t);
    get("gap_probability_per_day", c.gap_probability_per_day);
    get("gap_min_s", c.gap_min_s);
    get("gap_max_s", c.gap_max_s);
    get("r0_base_min", c.r0_base_min);
    get("r0_base_max", c.r0_base_max);
    get("arrhenius_per_c", c.arrhenius_per_c);
    get("conc_ref", c.conc_ref);
    get("conc_coeff", c.conc_coeff);
    get("conc_hi_coeff", c.conc_hi_coeff);
    get("conc_pole", c.conc_pole);
    get("conc_pole_coeff", c.conc_pole_coeff);
    get("bv_current_a", c.bv_current_a);
    get("aging_slope_ohm_per_year", c.aging_slope_ohm_per_year);
    get("slope_temp_coeff", c.slope_temp_coeff);
    get("slope_usage_coeff", c.slope_usage_coeff);
    get("slope_noise_sigma", c.slope_noise_sigma);
    get("knee_onset_mean_days", c.knee_onset_mean_days);
    get("knee_onset_sigma", c.knee_onset_sigma);
    get("knee_temp_coeff", c.knee_temp_coeff);
    get("knee_usage_coeff", c.knee_usage_coeff);
    get("knee_quadratic_ohm_per_day2", c.knee_quadratic_ohm_per_day2);
    get("failure_threshold_ohm", c.failure_threshold_ohm);
    get("repair_lag_min_days", c.repair_lag_min_days);
    get("repair_lag_max_days", c.repair_lag_max_days);
    get("ref_temp_c", c.ref_temp_c);
    get("ref_current_a", c.ref_current_a);
    get("ref_conc", c.ref_conc);
    get("label_flip_probability", c.label_flip_probability);
    c.validate();
    return c;
}

FleetConfig FleetConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    return from_json(json::parse(in));
}

}  // namespace soh::fleet
