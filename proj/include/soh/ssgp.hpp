#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "soh/common.hpp"

namespace soh::ssgp {

// Process magnitudes and ARD length scales of the two-kernel model: a Wiener
// velocity kernel over normalized age plus a squared exponential kernel over
// the normalized operating point (current, temperature, concentration).
struct Hyperparameters {
    double sigma_f0 = 0.2;
    double sigma_f1 = 0.2;
    double l_i = 1.0;
    double l_t = 1.0;
    double l_c = 1.0;

    void validate() const;
    Eigen::VectorXd to_log() const;
    static Hyperparameters from_log(const Eigen::VectorXd& v);
};

// Wiener velocity covariance; anchored to zero at t = 0.
double wv_kernel(double t1, double t2, double sigma_f0);

// Squared exponential over (I, T, c) in normalized units.
double se_kernel(const double a[3], const double b[3], double sigma_f1, const double lengths[3]);

struct InducingSet {
    std::vector<double> ui, ut, uc;  // SoA, normalized coordinates
    bool fallback = false;           // fewer distinct points than requested

    std::size_t size() const { return ui.size(); }
    Eigen::Vector3d point(std::size_t j) const { return {ui[j], ut[j], uc[j]}; }
};

struct KmeansResult {
    Eigen::MatrixXd centroids;    // k x d
    std::vector<int> assignment;  // per point
    int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding; deterministic for a fixed seed.
KmeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iters);

InducingSet choose_inducing_points(std::span<const double> in_i, std::span<const double> in_t,
                                   std::span<const double> in_c, int k, std::uint64_t seed,
                                   int max_iters);

// Per-battery regression rows after SoC estimation, conditioning filters and
// normalization; time-ordered, concatenated across charge segments.
struct FitData {
    std::vector<double> t_norm;      // normalized age
    std::vector<double> age_seconds; // raw age, carried for reporting
    std::vector<double> current_a;   // raw current (observation multiplier)
    std::vector<double> in_i, in_t, in_c;
    std::vector<double> y;           // V - V0(c_hat)
    std::vector<double> noise_var;   // heteroskedastic variance
    std::vector<std::uint32_t> segment_id;

    std::size_t size() const { return t_norm.size(); }
    void validate() const;
};

struct SsgpConfig {
    int n_inducing = 20;
    std::uint64_t kmeans_seed = 20220101;
    int kmeans_max_iters = 100;
    double jitter = 1e-8;
    double hp_lower = 1e-3;
    double hp_upper = 1e3;
    Hyperparameters hp_init{};  // prior modes
    int opt_max_iters = 60;
    double opt_grad_tol = 1e-4;
    double benchmark_m = 100.0;  // initial variance multiplier for the random walk
    double benchmark_q_lower = 1e-8;
    double benchmark_q_upper = 1e4;
};

// Linear-Gaussian state space realization: 2 Wiener-velocity states plus one
// static state per inducing point.
class BatteryModel {
public:
    BatteryModel(const Hyperparameters& hp, const InducingSet& inducing, double jitter,
                 bool include_wv = true);

    int dim() const { return dim_; }
    int wv_dim() const { return include_wv_ ? 2 : 0; }
    std::size_t n_inducing() const { return inducing_.size(); }
    const Hyperparameters& hp() const { return hp_; }
    const InducingSet& inducing() const { return inducing_; }
    const Eigen::MatrixXd& kuu() const { return kuu_; }

    // Interpolation weights Kuu^-1 k(U, u) and the residual conditional
    // variance of the SE field at u.
    Eigen::VectorXd weights_at(double i, double t, double c) const;
    double residual_at(double i, double t, double c) const;

    struct ObsData {
        Eigen::VectorXd dt;       // time delta from previous observation (first from t = 0)
        Eigen::MatrixXd weights;  // m x n interpolation weights
        Eigen::VectorXd resid;    // SE residual variance per step
        Eigen::VectorXd y;
        Eigen::VectorXd r_var;    // total observation noise variance
        Eigen::VectorXd current;
        std::size_t n = 0;
    };
    ObsData build_obs(const FitData& data) const;

    // Prediction-error-decomposition log-likelihood; no per-step storage.
    double filter_loglik(const ObsData& obs) const;

    struct StepSummary {
        std::size_t index = 0;
        Eigen::VectorXd mean;      // full state
        Eigen::VectorXd var_diag;  // state variances
        Eigen::MatrixXd proj_cov;  // P projected onto the requested vectors
    };
    struct SmoothOptions {
        std::vector<Eigen::VectorXd> projections;  // state-space vectors
        std::vector<std::size_t> emit_indices;     // sorted; empty = every step
        int checkpoint_stride = 512;
        bool collect_filtered_var = false;  // for invariant tests
    };
    struct SmoothResult {
        double loglik = 0;
        std::vector<StepSummary> steps;
        std::vector<Eigen::VectorXd> filtered_var;  // parallel to steps when requested
        Eigen::VectorXd final_mean;                 // filtered state after the last update
        Eigen::MatrixXd final_cov;
    };
    SmoothResult smooth(const ObsData& obs, const SmoothOptions& opts) const;

    // Closed-form Wiener-velocity propagation over dt; identity on the static
    // block. Public so tests can check the discretization directly.
    void predict_in_place(Eigen::VectorXd& mean, Eigen::MatrixXd& cov, double dt) const;

private:
    Hyperparameters hp_;
    InducingSet inducing_;
    double jitter_;
    bool include_wv_;
    int dim_;
    Eigen::MatrixXd kuu_;  // with jitter
    Eigen::LLT<Eigen::MatrixXd> kuu_llt_;
};

// Negative unnormalized log posterior of the hyperparameters: the filter
// negative log-likelihood plus half-normal (s = 0.2) magnitude terms and
// inverse-gamma(1, 2) length-scale terms.
double neg_log_prior(const Hyperparameters& hp);
double energy(const Hyperparameters& hp, const FitData& data, const InducingSet& inducing,
              double jitter);

struct TrajectoryPoint {
    double t_norm = 0;
    double age_seconds = 0;
    double mean_r = 0, mean_v = 0;                // WV value and velocity
    double var_r = 0, var_v = 0, cov_rv = 0;
    double cov_r_phi = 0, cov_v_phi = 0;          // cross terms against the SE field at
                                                  // the calibration point
};

struct HealthModel {
    std::string battery_id;
    Hyperparameters hp;
    InducingSet inducing;
    bool inducing_fallback = false;
    double energy_value = 0;
    double loglik = 0;
    bool converged = false;
    int opt_iterations = 0;
    std::size_t n_obs = 0;

    // SE block posterior (time-invariant once smoothed).
    Eigen::VectorXd se_mean;
    Eigen::MatrixXd se_cov;

    // SE field evaluated at the population calibration point (normalized 0).
    std::vector<double> wstar;
    double residual_star = 0;
    double phi_mean = 0;
    double phi_var = 0;  // wstar' se_cov wstar + residual_star

    // Observed normalized-input bounding box, for range warnings.
    double min_i = 0, max_i = 0, min_t = 0, max_t = 0, min_c = 0, max_c = 0;

    // Mean operating point over the first beginning-of-life segments.
    double bol_i = 0, bol_t = 0, bol_c = 0;
    // SE field posterior evaluated there (population-GP training row).
    double bol_r0 = 0, bol_r0_var = 0;

    std::vector<TrajectoryPoint> track;  // one entry per charge segment end

    void write_json(const std::string& path) const;
    static HealthModel from_json_file(const std::string& path);
};

// MAP fit: k-means inducing points, bound-constrained quasi-Newton over log
// hyperparameters from the fixed initial point, final smoothing pass.
HealthModel fit_map(const std::string& battery_id, const FitData& data, const SsgpConfig& cfg,
                    int bol_segments = 10);

struct BenchmarkTrackPoint {
    double t_norm = 0;
    double age_seconds = 0;
    double mean = 0;
    double var = 0;
};

struct BenchmarkModel {
    std::string battery_id;
    double q = 0;       // random-walk process noise density (per normalized time)
    double m_mult = 0;  // initial variance multiplier
    double loglik = 0;
    std::size_t n_obs = 0;
    double last_t_norm = 0;
    double last_mean = 0;
    double last_var = 0;
    std::vector<BenchmarkTrackPoint> track;

    void write_json(const std::string& path) const;
    static BenchmarkModel from_json_file(const std::string& path);
};

// Scalar random-walk resistance with the same observation equation and
// noise; process noise by 1-D maximum likelihood.
BenchmarkModel fit_benchmark(const std::string& battery_id, const FitData& data,
                             const SsgpConfig& cfg);

// Scalar filter used by the benchmark; exposed for conjugate-update tests.
struct ScalarRwResult {
    double loglik = 0;
    std::vector<double> mean, var;        // smoothed
    std::vector<double> filt_mean, filt_var;
    double last_mean = 0, last_var = 0;
};
ScalarRwResult scalar_random_walk_smooth(const FitData& data, double q, double init_var);

}  // namespace soh::ssgp
