#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "soh/common.hpp"
#include "soh/features.hpp"

namespace soh::eol {

enum class Label { healthy, failed };

struct ClassifierConfig {
    double jitter = 1e-8;
    int newton_max_iters = 100;
    double newton_tol = 1e-10;
    double hp_lower = 1e-2;  // uniform hyperprior support
    double hp_upper = 1e2;
    int opt_max_iters = 40;
    double opt_grad_tol = 1e-3;
    int restarts = 3;
    std::uint64_t seed = 1;
};

// Binary GP classifier: SE covariance with automatic relevance detection,
// logistic likelihood, Laplace approximation of the latent posterior, and
// hyperparameters from the approximate marginal likelihood (uniform
// hyperprior, seeded multi-start).
class LaplaceGpClassifier {
public:
    static LaplaceGpClassifier train(const Eigen::MatrixXd& x, const std::vector<int>& y_pm1,
                                     const ClassifierConfig& cfg);

    // Predictive probability of the positive (failed) class.
    double predict_probability(const Eigen::VectorXd& x) const;

    double sigma_f() const { return sigma_f_; }
    const Eigen::VectorXd& length_scales() const { return lengths_; }
    double log_marginal() const { return log_marginal_; }
    Eigen::Index dim() const { return lengths_.size(); }

private:
    Eigen::MatrixXd x_;
    Eigen::VectorXd grad_mode_;  // (y+1)/2 - pi at the mode
    Eigen::VectorXd sqrt_w_;
    Eigen::MatrixXd chol_b_;     // lower factor of I + W^1/2 K W^1/2
    double sigma_f_ = 1.0;
    Eigen::VectorXd lengths_;
    double log_marginal_ = 0;
    double jitter_ = 1e-8;

    Eigen::VectorXd kernel_row(const Eigen::VectorXd& x) const;
};

// Half of sensitivity plus specificity; requires both classes non-empty.
double balanced_accuracy(long tp, long fn, long tn, long fp);

enum class Scenario : int { soh = 0, benchmark = 1, combined = 2, stress = 3 };
inline const std::array<const char*, 4> kScenarioNames = {"soh", "benchmark", "combined", "stress"};

std::vector<std::string> scenario_input_names(Scenario s);

// Fleet-level inputs for the evaluation harness, indexed [battery][horizon].
struct CvInputs {
    std::vector<std::string> battery_ids;  // sorted ascending
    std::vector<Label> labels;
    std::vector<double> horizons_days;
    std::vector<std::vector<double>> r0;     // calibrated resistance
    std::vector<std::vector<double>> drdt;   // its time derivative
    std::vector<std::vector<double>> bench;  // benchmark random-walk resistance
    std::vector<std::vector<std::array<double, features::kNumFeatures>>> stress;

    void validate() const;
};

struct CvConfig {
    int folds = 5;
    std::vector<double> subset_fractions = {0.4, 0.6, 0.8};
    int subset_repeats = 10;
    std::uint64_t seed = 7;
    ClassifierConfig classifier;
};

struct TestCaseResult {
    int scenario = 0;
    int fold = 0;
    int subset = 0;  // 0..29 draws, 30 = all failed batteries
    double horizon_days = 0;
    long tp = 0, fn = 0, tn = 0, fp = 0;
    double balanced_accuracy = 0;
};

struct ScenarioHorizonAgg {
    int scenario = 0;
    double horizon_days = 0;
    double mean = 0, std_dev = 0;
    std::size_t n_cases = 0;
};

struct RelevanceRow {
    int scenario = 0;
    std::string input_name;
    double mean_inv_length = 0;
    double std_inv_length = 0;
};

struct EvalReport {
    std::vector<TestCaseResult> cases;
    std::vector<ScenarioHorizonAgg> aggregates;
    std::vector<RelevanceRow> relevance;

    void write_json(const std::string& path) const;
    static EvalReport from_json_file(const std::string& path);
};

// Stratified 5-fold nested cross validation per the evaluation protocol: one
// classifier per (scenario, fold) trained on horizon-0 inputs, tested on
// failed-battery subsets at every horizon.
EvalReport run_nested_cv(const CvInputs& inputs, const CvConfig& cfg);

// Stratified fold assignment (round-robin after a seeded per-class shuffle).
std::vector<int> stratified_folds(const std::vector<Label>& labels, int folds, std::uint64_t seed);

}  // namespace soh::eol
