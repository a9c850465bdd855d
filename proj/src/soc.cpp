#include "soh/soc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "soh/csv.hpp"

namespace soh::soc {

using nlohmann::json;

OcvCurve::OcvCurve(std::span<const double> concentration, std::span<const double> voltage)
    : curve_(concentration, voltage) {
    for (std::size_t i = 1; i < voltage.size(); ++i)
        if (!(voltage[i] > voltage[i - 1]))
            throw DomainError("OCV curve: voltage must be strictly increasing with concentration");
    v_min_ = voltage.front();
    v_max_ = voltage.back();
}

OcvCurve OcvCurve::from_csv(const std::string& path) {
    csv::Reader r(path);
    r.expect_header({"concentration_mol_per_l", "ocv_v"});
    std::vector<double> c, v;
    std::vector<std::string> row;
    while (r.next_row(row)) {
        if (row.size() != 2)
            throw ParseError(path + ":" + std::to_string(r.line_number()) + ": expected 2 fields");
        c.push_back(r.to_double(row[0]));
        v.push_back(r.to_double(row[1]));
    }
    return OcvCurve(c, v);
}

OcvCurve OcvCurve::builtin_default() {
    // Per-cell OCV = specific gravity + 0.845, SG = 1.0 + 0.053 * c, 6 cells.
    std::vector<double> c, v;
    for (int i = 0; i <= 32; ++i) {
        double ci = double(4 + 2 * i) / 10.0;
        c.push_back(ci);
        v.push_back(6.0 * (1.0 + 0.053 * ci + 0.845));
    }
    return OcvCurve(c, v);
}

void OcvCurve::write_csv(const std::string& path) const {
    csv::Writer w(path);
    w.header({"concentration_mol_per_l", "ocv_v"});
    for (std::size_t i = 0; i < curve_.size(); ++i) {
        w.field(curve_.knots_x()[i]);
        w.field(curve_.knots_y()[i]);
        w.end_row();
    }
}

double OcvCurve::concentration(double v) const {
    if (v < v_min_ || v > v_max_)
        throw DomainError("OCV inverse: voltage " + csv::format_double(v) + " outside table range [" +
                          csv::format_double(v_min_) + ", " + csv::format_double(v_max_) + "]");
    double lo = c_min(), hi = c_max();
    for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + hi); ++it) {
        double mid = 0.5 * (lo + hi);
        if (curve_(mid) < v)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

GassingParams GassingParams::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    GassingParams p;
    p.i_gas0 = j.at("i_gas0").get<double>();
    p.c_t = j.at("c_t").get<double>();
    p.t_0 = j.at("t_0").get<double>();
    p.c_v = j.at("c_v").get<double>();
    p.v_0ref = j.at("v_0ref").get<double>();
    p.faraday = j.value("faraday", kFaraday);
    p.v_elec = j.at("v_elec").get<double>();
    p.validate();
    return p;
}

void GassingParams::write_json(const std::string& path) const {
    json j{{"i_gas0", i_gas0}, {"c_t", c_t},         {"t_0", t_0},    {"c_v", c_v},
           {"v_0ref", v_0ref}, {"faraday", faraday}, {"v_elec", v_elec}};
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << "\n";
}

void GassingParams::validate() const {
    if (!(i_gas0 > 0) || !(c_t > 0) || !(c_v > 0) || !(v_elec > 0) || !(faraday > 0))
        throw ConfigError("gassing parameters must be strictly positive");
}

InitConcentration init_concentration(std::span<const double> current,
                                     std::span<const double> voltage, const OcvCurve& ocv) {
    if (current.empty() || current.size() != voltage.size())
        throw DomainError("init_concentration: empty or mismatched segment");
    std::size_t best = 0;
    for (std::size_t i = 1; i < current.size(); ++i)
        if (std::abs(current[i]) < std::abs(current[best])) best = i;
    InitConcentration out;
    out.anchor_index = best;
    out.anchor_voltage = voltage[best];
    out.anchor_current = current[best];
    out.c0 = ocv.concentration(voltage[best]);
    return out;
}

SocSeries coulomb_count(std::span<const double> current, std::span<const double> voltage,
                        std::span<const double> temperature, double step_seconds,
                        const InitConcentration& init, const GassingParams& params,
                        const OcvCurve& ocv) {
    const std::size_t n = current.size();
    if (n == 0 || voltage.size() != n || temperature.size() != n)
        throw DomainError("coulomb_count: empty or mismatched segment");
    if (init.anchor_index >= n) throw DomainError("coulomb_count: anchor index out of range");

    std::vector<double> gas(n);
    simd::ops().gassing_span(temperature.data(), voltage.data(), n, params.coeffs(), gas.data());

    // dc/dt does not depend on c, so the trajectory is an exact prefix sum
    // shifted to meet the anchor.
    const double denom = params.faraday * params.v_elec;
    std::vector<double> dc(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) dc[i] = (current[i] - gas[i]) / denom * step_seconds;

    SocSeries s;
    s.concentration.assign(n, 0.0);
    s.variance.assign(n, 0.0);
    double acc = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        acc += dc[i - 1];
        s.concentration[i] = acc;
        s.variance[i] = s.variance[i - 1] + 0.01 * dc[i - 1] * dc[i - 1];
    }
    const double offset = init.c0 - s.concentration[init.anchor_index];
    for (double& c : s.concentration) c += offset;

    for (double& c : s.concentration) {
        if (c < ocv.c_min()) {
            c = ocv.c_min();
            s.clamped = true;
        } else if (c > ocv.c_max()) {
            c = ocv.c_max();
            s.clamped = true;
        }
    }
    s.c0 = s.concentration.front();
    s.anchor_voltage = init.anchor_voltage;
    s.anchor_current = init.anchor_current;
    s.anchor_index = init.anchor_index;
    return s;
}

std::vector<double> noise_variance(const SocSeries& soc, const OcvCurve& ocv) {
    std::vector<double> out(soc.concentration.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double slope = ocv.dv_dc(soc.concentration[i]);
        out[i] = 0.0225 + soc.variance[i] * slope * slope;
    }
    return out;
}

double fit_electrolyte_volume(std::span<const double> throughput_ah,
                              std::span<const double> rest_voltage_v,
                              double ocv_slope_v_per_mol, double faraday) {
    const std::size_t n = throughput_ah.size();
    if (n != rest_voltage_v.size()) throw DomainError("fit_electrolyte_volume: size mismatch");
    if (n < 3) throw DomainError("fit_electrolyte_volume: need at least 3 calibration points");
    // V = intercept + slope * Q with Q in coulombs; slope = b / (F * V_elec).
    double sq = 0, sv = 0, sqq = 0, sqv = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = throughput_ah[i] * 3600.0;
        sq += q;
        sv += rest_voltage_v[i];
        sqq += q * q;
        sqv += q * rest_voltage_v[i];
    }
    const double denom = n * sqq - sq * sq;
    if (denom <= 0) throw DomainError("fit_electrolyte_volume: degenerate throughput values");
    const double slope = (n * sqv - sq * sv) / denom;
    if (!(slope > 0))
        throw DomainError("fit_electrolyte_volume: non-positive fitted slope, data inconsistent");
    return ocv_slope_v_per_mol / (faraday * slope);
}

NormalizationMoments NormalizationMoments::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    NormalizationMoments m;
    m.mean_t = j.at("temperature").at("mean").get<double>();
    m.std_t = j.at("temperature").at("std").get<double>();
    m.mean_i = j.at("current").at("mean").get<double>();
    m.std_i = j.at("current").at("std").get<double>();
    m.mean_c = j.at("concentration").at("mean").get<double>();
    m.std_c = j.at("concentration").at("std").get<double>();
    m.time_scale_s = j.value("time_scale_s", kTimeScaleSeconds);
    if (j.contains("percentiles")) {
        const auto& p = j.at("percentiles");
        m.p5_t = p.at("temperature").at(0).get<double>();
        m.p95_t = p.at("temperature").at(1).get<double>();
        m.p5_i = p.at("current").at(0).get<double>();
        m.p95_i = p.at("current").at(1).get<double>();
        m.p5_c = p.at("concentration").at(0).get<double>();
        m.p95_c = p.at("concentration").at(1).get<double>();
    }
    m.validate();
    return m;
}

void NormalizationMoments::write_json(const std::string& path) const {
    json j;
    j["temperature"] = {{"mean", mean_t}, {"std", std_t}};
    j["current"] = {{"mean", mean_i}, {"std", std_i}};
    j["concentration"] = {{"mean", mean_c}, {"std", std_c}};
    j["time_scale_s"] = time_scale_s;
    j["percentiles"] = {{"temperature", {p5_t, p95_t}},
                        {"current", {p5_i, p95_i}},
                        {"concentration", {p5_c, p95_c}}};
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << "\n";
}

void NormalizationMoments::validate() const {
    if (!(std_t > 0) || !(std_i > 0) || !(std_c > 0) || !(time_scale_s > 0))
        throw DomainError("normalization moments: std values must be positive");
}

}  // namespace soh::soc
