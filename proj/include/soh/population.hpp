#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "soh/common.hpp"
#include "soh/soc.hpp"
#include "soh/ssgp.hpp"

namespace soh::population {

struct PopulationConfig {
    double jitter = 1e-8;
    double hp_lower = 1e-3;
    double hp_upper = 1e3;
    int opt_max_iters = 100;
    int slice_points = 50;
};

// Batch SE-ARD GP over one training row per battery: the battery's SE-field
// resistance estimate at its beginning-of-life mean operating point, with the
// per-battery posterior variance added to the noise.
class PopulationGP {
public:
    std::vector<std::string> battery_ids;
    Eigen::MatrixXd X;           // n x 3, normalized (I, T, c)
    Eigen::VectorXd y;           // R0 targets
    Eigen::VectorXd target_var;  // per-row variance from the battery fits

    double sigma_f = 0.2, sigma_n = 0.1;
    double l_i = 1.0, l_t = 1.0, l_c = 1.0;
    double loglik = 0;
    bool converged = false;

    struct Prediction {
        double mean, var;
    };
    Prediction predict(double xi, double xt, double xc) const;

    void factorize();  // builds the cached solve; called by fit/load
    void write_json(const std::string& path) const;
    static PopulationGP from_json_file(const std::string& path);

private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd alpha_;
    double jitter_ = 1e-8;
    Eigen::MatrixXd kernel_matrix() const;
    friend PopulationGP fit_population_gp(const std::vector<std::string>&, const Eigen::MatrixXd&,
                                          const Eigen::VectorXd&, const Eigen::VectorXd&,
                                          const PopulationConfig&);
};

PopulationGP fit_population_gp(const std::vector<std::string>& ids, const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& y, const Eigen::VectorXd& target_var,
                               const PopulationConfig& cfg);

struct SliceCurve {
    std::string input_name;           // temperature | current | concentration
    std::vector<double> grid;         // raw units
    std::vector<double> mean, lo, hi; // mean and +/- 2 sigma
};

// One curve per input between its 5th and 95th percentile, the other two
// pinned at the population mean (zero in normalized coordinates).
std::vector<SliceCurve> population_slices(const PopulationGP& gp,
                                          const soc::NormalizationMoments& moments, int n_points);

struct TrajPoint {
    double t_norm = 0;
    double age_seconds = 0;
    double r0_mean = 0, r0_var = 0;
    double drdt_mean = 0, drdt_var = 0;  // per normalized time unit
};

struct HorizonPoint {
    double horizon_days = 0;
    double t_norm = 0;  // evaluation time
    double r0_mean = 0, r0_var = 0;
    double drdt_mean = 0, drdt_var = 0;
    double bench_mean = 0, bench_var = 0;
};

struct HealthTrajectory {
    std::string battery_id;
    bool range_warning = false;  // calibration point far outside the fitted range
    std::vector<TrajPoint> points;
    std::vector<HorizonPoint> horizons;

    void write_json(const std::string& path) const;
    static HealthTrajectory from_json_file(const std::string& path);
};

// Calibrated R0(t) and its time derivative at the population calibration
// point, with Kalman prediction of the WV block to each horizon target time.
HealthTrajectory calibrate_trajectory(const ssgp::HealthModel& hm, const ssgp::BenchmarkModel& bm,
                                      std::span<const double> horizons_days,
                                      double series_end_age_seconds);

}  // namespace soh::population
