#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "soh/common.hpp"
#include "soh/pchip.hpp"
#include "soh/simd/kernels.hpp"

namespace soh::soc {

// Open-circuit voltage as a function of electrolyte acid concentration.
// Voltage must be strictly increasing with concentration so the curve is
// invertible.
class OcvCurve {
public:
    OcvCurve(std::span<const double> concentration, std::span<const double> voltage);

    static OcvCurve from_csv(const std::string& path);
    // Linear specific-gravity relation (per-cell OCV = SG + 0.845, six cells
    // in series), tabulated; stands in for a measured curve.
    static OcvCurve builtin_default();
    void write_csv(const std::string& path) const;

    double voltage(double c) const { return curve_(c); }
    double dv_dc(double c) const { return curve_.derivative(c); }
    // Inverse lookup; throws DomainError when v is outside the table range.
    double concentration(double v) const;

    double c_min() const { return curve_.x_min(); }
    double c_max() const { return curve_.x_max(); }
    double v_min() const { return v_min_; }
    double v_max() const { return v_max_; }

private:
    Pchip curve_;
    double v_min_, v_max_;
};

struct GassingParams {
    double i_gas0 = 0.004;   // A, gassing current at reference conditions
    double c_t = 0.06;       // 1/degC
    double t_0 = 25.0;       // degC
    double c_v = 1.83;       // 1/V
    double v_0ref = 13.38;   // V, gassing reference voltage (not the OCV function)
    double faraday = kFaraday;
    double v_elec = 0.25;    // litres

    static GassingParams from_json_file(const std::string& path);
    void write_json(const std::string& path) const;
    void validate() const;
    simd::GassingCoeffs coeffs() const { return {i_gas0, c_t, t_0, c_v, v_0ref}; }
};

struct SocSeries {
    std::vector<double> concentration;  // mol/L per step
    std::vector<double> variance;       // (mol/L)^2, accumulated from segment start
    double c0 = 0;                      // concentration at the segment's first step
    double anchor_voltage = 0;          // rest voltage the anchor came from
    double anchor_current = 0;          // current at the anchor step (reliability flag)
    std::size_t anchor_index = 0;
    bool clamped = false;               // hit the OCV table bounds during integration
};

struct InitConcentration {
    double c0;               // concentration at the anchor step
    double anchor_voltage;
    double anchor_current;
    std::size_t anchor_index;
};

// Anchor concentration from the minimum-current step of a segment.
InitConcentration init_concentration(std::span<const double> current,
                                     std::span<const double> voltage, const OcvCurve& ocv);

// Forward-Euler Coulomb counting on a uniform grid with the lumped gassing
// side reaction. The anchor fixes the integration constant at anchor_index;
// variance accumulates 0.01 * dc^2 per step from the segment start.
SocSeries coulomb_count(std::span<const double> current, std::span<const double> voltage,
                        std::span<const double> temperature, double step_seconds,
                        const InitConcentration& init, const GassingParams& params,
                        const OcvCurve& ocv);

// Heteroskedastic noise variance: 0.0225 + Var(c_t) * (dV0/dc)^2.
std::vector<double> noise_variance(const SocSeries& soc, const OcvCurve& ocv);

// Least-squares electrolyte volume from rest-voltage vs charge-throughput
// calibration pairs, with OCV affine in concentration (slope in V per mol/L).
double fit_electrolyte_volume(std::span<const double> throughput_ah,
                              std::span<const double> rest_voltage_v,
                              double ocv_slope_v_per_mol, double faraday = kFaraday);

struct NormalizationMoments {
    double mean_t = 0, std_t = 1;   // temperature, degC
    double mean_i = 0, std_i = 1;   // current, A
    double mean_c = 0, std_c = 1;   // concentration, mol/L
    double time_scale_s = kTimeScaleSeconds;
    // 5th/95th percentiles of the down-selected dataset, for slice grids.
    double p5_t = 0, p95_t = 0, p5_i = 0, p95_i = 0, p5_c = 0, p95_c = 0;

    static NormalizationMoments from_json_file(const std::string& path);
    void write_json(const std::string& path) const;
    void validate() const;
};

inline double normalize(double x, double mean, double std) {
    if (!(std > 0)) throw DomainError("normalize: degenerate moments (std <= 0)");
    return (x - mean) / std;
}

inline double denormalize(double z, double mean, double std) { return mean + z * std; }

inline double normalize_time(double t_seconds, double time_scale_s = kTimeScaleSeconds) {
    return t_seconds / time_scale_s;
}

}  // namespace soh::soc
