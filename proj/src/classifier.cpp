#include "soh/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "soh/optim.hpp"
#include "soh/rng.hpp"

namespace soh::eol {

using nlohmann::json;

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double log_sigmoid(double z) {  // log sigma(z), stable
    return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

Eigen::MatrixXd ard_kernel(const Eigen::MatrixXd& x, double sigma_f, const Eigen::VectorXd& lengths) {
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd scaled = x;
    for (Eigen::Index j = 0; j < lengths.size(); ++j) scaled.col(j) /= lengths[j];
    Eigen::MatrixXd k(n, n);
    const double s2 = sigma_f * sigma_f;
    for (Eigen::Index a = 0; a < n; ++a) {
        k(a, a) = s2;
        for (Eigen::Index b = 0; b < a; ++b) {
            const double q = (scaled.row(a) - scaled.row(b)).squaredNorm();
            const double v = s2 * std::exp(-0.5 * q);
            k(a, b) = v;
            k(b, a) = v;
        }
    }
    return k;
}

struct LaplaceFit {
    Eigen::VectorXd f, grad, sqrt_w;
    Eigen::MatrixXd chol_b;
    double log_marginal;
    bool ok;
};

// Newton iteration for the posterior mode (Rasmussen & Williams Alg. 3.1).
LaplaceFit laplace_mode(const Eigen::MatrixXd& k, const std::vector<int>& y, int max_iters,
                        double tol) {
    const Eigen::Index n = k.rows();
    LaplaceFit fit;
    fit.ok = false;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
    double obj_prev = -std::numeric_limits<double>::infinity();

    for (int it = 0; it < max_iters; ++it) {
        Eigen::VectorXd pi(n), w(n), grad(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            pi[i] = sigmoid(f[i]);
            grad[i] = (y[std::size_t(i)] + 1) * 0.5 - pi[i];
            w[i] = std::max(1e-12, pi[i] * (1.0 - pi[i]));
        }
        Eigen::VectorXd sw = w.cwiseSqrt();
        Eigen::MatrixXd b = Eigen::MatrixXd::Identity(n, n);
        b.noalias() += sw.asDiagonal() * k * sw.asDiagonal();
        Eigen::LLT<Eigen::MatrixXd> llt(b);
        if (llt.info() != Eigen::Success) return fit;
        Eigen::VectorXd bvec = w.cwiseProduct(f) + grad;
        Eigen::VectorXd kb = k * bvec;
        Eigen::VectorXd inner = llt.solve(sw.cwiseProduct(kb));
        a = bvec - sw.cwiseProduct(inner);
        f = k * a;

        double loglik = 0;
        for (Eigen::Index i = 0; i < n; ++i) loglik += log_sigmoid(y[std::size_t(i)] * f[i]);
        const double obj = -0.5 * a.dot(f) + loglik;
        if (std::abs(obj - obj_prev) < tol * (1.0 + std::abs(obj))) {
            obj_prev = obj;
            break;
        }
        obj_prev = obj;
    }

    Eigen::VectorXd pi(n), w(n);
    fit.grad.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        pi[i] = sigmoid(f[i]);
        fit.grad[i] = (y[std::size_t(i)] + 1) * 0.5 - pi[i];
        w[i] = std::max(1e-12, pi[i] * (1.0 - pi[i]));
    }
    fit.sqrt_w = w.cwiseSqrt();
    Eigen::MatrixXd b = Eigen::MatrixXd::Identity(n, n);
    b.noalias() += fit.sqrt_w.asDiagonal() * k * fit.sqrt_w.asDiagonal();
    Eigen::LLT<Eigen::MatrixXd> llt(b);
    if (llt.info() != Eigen::Success) return fit;
    fit.chol_b = llt.matrixL();
    fit.f = f;

    double loglik = 0;
    for (Eigen::Index i = 0; i < n; ++i) loglik += log_sigmoid(y[std::size_t(i)] * f[i]);
    double logdet = 0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(fit.chol_b(i, i));
    fit.log_marginal = -0.5 * a.dot(f) + loglik - logdet;
    fit.ok = true;
    return fit;
}

// Gauss-Hermite nodes/weights via the Jacobi matrix; cached.
const std::pair<Eigen::VectorXd, Eigen::VectorXd>& gauss_hermite_20() {
    static const auto nw = [] {
        const int n = 20;
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
        for (int i = 1; i < n; ++i) {
            const double off = std::sqrt(i / 2.0);
            jac(i, i - 1) = off;
            jac(i - 1, i) = off;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
        Eigen::VectorXd nodes = es.eigenvalues();
        Eigen::VectorXd weights(n);
        const double sqrt_pi = std::sqrt(M_PI);
        for (int i = 0; i < n; ++i) {
            const double v0 = es.eigenvectors()(0, i);
            weights[i] = sqrt_pi * v0 * v0;
        }
        return std::make_pair(nodes, weights);
    }();
    return nw;
}

}  // namespace

LaplaceGpClassifier LaplaceGpClassifier::train(const Eigen::MatrixXd& x,
                                               const std::vector<int>& y,
                                               const ClassifierConfig& cfg) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (n < 2 || std::size_t(n) != y.size()) throw DomainError("classifier: bad training set shape");
    const long pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == long(n))
        throw DomainError("classifier: degenerate training set, both classes required");

    const auto objective = [&](const Eigen::VectorXd& theta) {
        const double sf = std::exp(theta[0]);
        Eigen::VectorXd ls = theta.tail(d).array().exp();
        Eigen::MatrixXd k = ard_kernel(x, sf, ls);
        k.diagonal().array() += cfg.jitter;
        LaplaceFit fit = laplace_mode(k, y, cfg.newton_max_iters, cfg.newton_tol);
        if (!fit.ok) return 1e300;
        return -fit.log_marginal;
    };

    Eigen::VectorXd lo = Eigen::VectorXd::Constant(d + 1, std::log(cfg.hp_lower));
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(d + 1, std::log(cfg.hp_upper));
    optim::Options oopts;
    oopts.max_iters = cfg.opt_max_iters;
    oopts.grad_tol = cfg.opt_grad_tol;

    Eigen::VectorXd best_x;
    double best_f = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
        Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(d + 1);  // sigma_f = 1, lengths = 1
        if (r > 0) {
            std::mt19937_64 g(mix_seed(cfg.seed, std::uint64_t(r)));
            for (Eigen::Index i = 0; i < theta0.size(); ++i) theta0[i] += 0.7 * rng::normal(g);
        }
        theta0 = theta0.cwiseMax(lo).cwiseMin(hi);
        optim::Result res = optim::minimize_box(objective, theta0, lo, hi, oopts);
        if (res.f < best_f) {
            best_f = res.f;
            best_x = res.x;
        }
    }

    LaplaceGpClassifier out;
    out.sigma_f_ = std::exp(best_x[0]);
    out.lengths_ = best_x.tail(d).array().exp();
    out.jitter_ = cfg.jitter;
    out.x_ = x;

    Eigen::MatrixXd k = ard_kernel(x, out.sigma_f_, out.lengths_);
    k.diagonal().array() += cfg.jitter;
    LaplaceFit fit = laplace_mode(k, y, cfg.newton_max_iters, cfg.newton_tol);
    if (!fit.ok) throw NumericError("classifier: Laplace mode finding failed at the optimum");
    out.grad_mode_ = fit.grad;
    out.sqrt_w_ = fit.sqrt_w;
    out.chol_b_ = fit.chol_b;
    out.log_marginal_ = fit.log_marginal;
    return out;
}

Eigen::VectorXd LaplaceGpClassifier::kernel_row(const Eigen::VectorXd& x) const {
    const Eigen::Index n = x_.rows();
    Eigen::VectorXd ks(n);
    const double s2 = sigma_f_ * sigma_f_;
    for (Eigen::Index i = 0; i < n; ++i) {
        double q = 0;
        for (Eigen::Index jcol = 0; jcol < lengths_.size(); ++jcol) {
            const double dd = (x[jcol] - x_(i, jcol)) / lengths_[jcol];
            q += dd * dd;
        }
        ks[i] = s2 * std::exp(-0.5 * q);
    }
    return ks;
}

double LaplaceGpClassifier::predict_probability(const Eigen::VectorXd& x) const {
    if (x.size() != lengths_.size())
        throw DomainError("classifier predict: input dimension mismatch");
    Eigen::VectorXd ks = kernel_row(x);
    const double mean = ks.dot(grad_mode_);
    Eigen::VectorXd v =
        chol_b_.triangularView<Eigen::Lower>().solve(sqrt_w_.cwiseProduct(ks));
    const double var = std::max(0.0, sigma_f_ * sigma_f_ + jitter_ - v.squaredNorm());

    // Averaged predictive probability via Gauss-Hermite quadrature.
    const auto& [nodes, weights] = gauss_hermite_20();
    const double scale = std::sqrt(2.0 * var);
    double p = 0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i)
        p += weights[i] * sigmoid(mean + scale * nodes[i]);
    return p / std::sqrt(M_PI);
}

double balanced_accuracy(long tp, long fn, long tn, long fp) {
    if (tp + fn <= 0 || tn + fp <= 0)
        throw DomainError("balanced_accuracy: undefined with an empty class");
    return 0.5 * (double(tp) / double(tp + fn) + double(tn) / double(tn + fp));
}

std::vector<std::string> scenario_input_names(Scenario s) {
    const std::vector<std::string> soh = {"r0", "drdt"};
    std::vector<std::string> stress(features::kFeatureNames.begin(), features::kFeatureNames.end());
    switch (s) {
        case Scenario::soh:
            return soh;
        case Scenario::benchmark:
            return {"bench_r0"};
        case Scenario::combined: {
            std::vector<std::string> out = soh;
            out.insert(out.end(), stress.begin(), stress.end());
            return out;
        }
        case Scenario::stress:
            return stress;
    }
    throw DomainError("unknown scenario");
}

void CvInputs::validate() const {
    const std::size_t n = battery_ids.size();
    const std::size_t h = horizons_days.size();
    if (labels.size() != n || r0.size() != n || drdt.size() != n || bench.size() != n ||
        stress.size() != n)
        throw DomainError("CvInputs: row count mismatch");
    for (std::size_t i = 0; i < n; ++i)
        if (r0[i].size() != h || drdt[i].size() != h || bench[i].size() != h ||
            stress[i].size() != h)
            throw DomainError("CvInputs: horizon count mismatch for battery " + battery_ids[i]);
    for (std::size_t i = 1; i < n; ++i)
        if (!(battery_ids[i - 1] < battery_ids[i]))
            throw DomainError("CvInputs: battery ids must be sorted and unique");
}

std::vector<int> stratified_folds(const std::vector<Label>& labels, int folds, std::uint64_t seed) {
    if (folds < 2) throw DomainError("stratified_folds: need at least 2 folds");
    if (labels.size() < std::size_t(folds))
        throw DomainError("stratified_folds: fewer batteries than folds");
    std::vector<std::size_t> failed, healthy;
    for (std::size_t i = 0; i < labels.size(); ++i)
        (labels[i] == Label::failed ? failed : healthy).push_back(i);

    std::vector<int> fold_of(labels.size(), -1);
    int next = 0;
    for (auto* cls : {&failed, &healthy}) {
        std::mt19937_64 g(mix_seed(seed, cls == &failed ? 0x11 : 0x22));
        for (std::size_t i = cls->size(); i > 1; --i)
            std::swap((*cls)[i - 1], (*cls)[rng::index(g, i)]);
        for (std::size_t i = 0; i < cls->size(); ++i) {
            fold_of[(*cls)[i]] = next;
            next = (next + 1) % folds;
        }
    }
    return fold_of;
}

namespace {

Eigen::VectorXd scenario_input(const CvInputs& in, Scenario s, std::size_t battery,
                               std::size_t horizon) {
    switch (s) {
        case Scenario::soh: {
            Eigen::VectorXd v(2);
            v << in.r0[battery][horizon], in.drdt[battery][horizon];
            return v;
        }
        case Scenario::benchmark: {
            Eigen::VectorXd v(1);
            v << in.bench[battery][horizon];
            return v;
        }
        case Scenario::combined: {
            Eigen::VectorXd v(2 + features::kNumFeatures);
            v[0] = in.r0[battery][horizon];
            v[1] = in.drdt[battery][horizon];
            for (int j = 0; j < features::kNumFeatures; ++j)
                v[2 + j] = in.stress[battery][horizon][std::size_t(j)];
            return v;
        }
        case Scenario::stress: {
            Eigen::VectorXd v(features::kNumFeatures);
            for (int j = 0; j < features::kNumFeatures; ++j)
                v[j] = in.stress[battery][horizon][std::size_t(j)];
            return v;
        }
    }
    throw DomainError("unknown scenario");
}

}  // namespace

EvalReport run_nested_cv(const CvInputs& inputs, const CvConfig& cfg) {
    inputs.validate();
    const std::size_t n = inputs.battery_ids.size();
    const std::size_t nh = inputs.horizons_days.size();
    const std::vector<int> fold_of = stratified_folds(inputs.labels, cfg.folds, cfg.seed);

    EvalReport report;
    std::vector<std::vector<double>> inv_lengths_by_scenario(4);  // flattened fold x input

    for (int s_idx = 0; s_idx < 4; ++s_idx) {
        const Scenario scenario = Scenario(s_idx);
        const Eigen::Index d = Eigen::Index(scenario_input_names(scenario).size());

        // Population-level input moments at horizon 0, reused at all horizons.
        Eigen::MatrixXd all0(Eigen::Index(n), d);
        for (std::size_t b = 0; b < n; ++b) all0.row(Eigen::Index(b)) = scenario_input(inputs, scenario, b, 0);
        Eigen::RowVectorXd mu = all0.colwise().mean();
        Eigen::RowVectorXd sd =
            ((all0.rowwise() - mu).colwise().squaredNorm() / double(n)).cwiseSqrt();
        for (Eigen::Index j = 0; j < d; ++j)
            if (!(sd[j] > 0)) sd[j] = 1.0;

        for (int fold = 0; fold < cfg.folds; ++fold) {
            std::vector<std::size_t> train_idx, test_idx;
            for (std::size_t b = 0; b < n; ++b)
                (fold_of[b] == fold ? test_idx : train_idx).push_back(b);

            Eigen::MatrixXd xtr(Eigen::Index(train_idx.size()), d);
            std::vector<int> ytr(train_idx.size());
            for (std::size_t r = 0; r < train_idx.size(); ++r) {
                Eigen::RowVectorXd row = scenario_input(inputs, scenario, train_idx[r], 0);
                xtr.row(Eigen::Index(r)) = (row - mu).cwiseQuotient(sd);
                ytr[r] = inputs.labels[train_idx[r]] == Label::failed ? 1 : -1;
            }

            ClassifierConfig ccfg = cfg.classifier;
            ccfg.seed = mix_seed(cfg.seed, std::uint64_t(s_idx * 101 + fold));
            LaplaceGpClassifier model = LaplaceGpClassifier::train(xtr, ytr, ccfg);

            for (Eigen::Index j = 0; j < d; ++j)
                inv_lengths_by_scenario[std::size_t(s_idx)].push_back(1.0 /
                                                                      model.length_scales()[j]);

            // Cache per-battery predictions for every horizon; subsets reuse them.
            std::vector<std::vector<bool>> predicted_failed(test_idx.size(),
                                                            std::vector<bool>(nh, false));
            for (std::size_t r = 0; r < test_idx.size(); ++r) {
                for (std::size_t h = 0; h < nh; ++h) {
                    Eigen::RowVectorXd row = scenario_input(inputs, scenario, test_idx[r], h);
                    Eigen::VectorXd z = (row - mu).cwiseQuotient(sd).transpose();
                    const double p = model.predict_probability(z);
                    predicted_failed[r][h] = p > 0.5;  // ties count as healthy
                }
            }

            std::vector<std::size_t> failed_local, healthy_local;
            for (std::size_t r = 0; r < test_idx.size(); ++r)
                (inputs.labels[test_idx[r]] == Label::failed ? failed_local : healthy_local)
                    .push_back(r);

            // 31 subsets: 10 draws each of 40/60/80% of the failed set plus
            // the full failed set; the healthy set stays fixed.
            std::vector<std::vector<std::size_t>> subsets;
            for (std::size_t k = 0; k < cfg.subset_fractions.size(); ++k) {
                for (int rep = 0; rep < cfg.subset_repeats; ++rep) {
                    std::mt19937_64 g(mix_seed(cfg.seed, 0xF00D + std::uint64_t(s_idx) * 7919 +
                                                             std::uint64_t(fold) * 391 +
                                                             std::uint64_t(k) * 37 +
                                                             std::uint64_t(rep)));
                    std::vector<std::size_t> pool = failed_local;
                    const std::size_t take = std::max<std::size_t>(
                        1, std::size_t(std::llround(cfg.subset_fractions[k] * double(pool.size()))));
                    for (std::size_t i = 0; i < take && i + 1 < pool.size(); ++i) {
                        const std::size_t j = i + rng::index(g, pool.size() - i);
                        std::swap(pool[i], pool[j]);
                    }
                    pool.resize(std::min(take, pool.size()));
                    std::sort(pool.begin(), pool.end());
                    subsets.push_back(std::move(pool));
                }
            }
            subsets.push_back(failed_local);

            for (std::size_t h = 0; h < nh; ++h) {
                for (std::size_t sub = 0; sub < subsets.size(); ++sub) {
                    long tp = 0, fn = 0, tn = 0, fp = 0;
                    for (std::size_t r : subsets[sub])
                        (predicted_failed[r][h] ? tp : fn) += 1;
                    for (std::size_t r : healthy_local)
                        (predicted_failed[r][h] ? fp : tn) += 1;
                    TestCaseResult tc;
                    tc.scenario = s_idx;
                    tc.fold = fold;
                    tc.subset = int(sub);
                    tc.horizon_days = inputs.horizons_days[h];
                    tc.tp = tp;
                    tc.fn = fn;
                    tc.tn = tn;
                    tc.fp = fp;
                    tc.balanced_accuracy = balanced_accuracy(tp, fn, tn, fp);
                    report.cases.push_back(tc);
                }
            }
        }
    }

    // Aggregate mean/std of balanced accuracy grouped by test set.
    for (int s_idx = 0; s_idx < 4; ++s_idx) {
        for (std::size_t h = 0; h < nh; ++h) {
            double sum = 0, sum2 = 0;
            std::size_t cnt = 0;
            for (const auto& tc : report.cases) {
                if (tc.scenario == s_idx && tc.horizon_days == inputs.horizons_days[h]) {
                    sum += tc.balanced_accuracy;
                    sum2 += tc.balanced_accuracy * tc.balanced_accuracy;
                    ++cnt;
                }
            }
            ScenarioHorizonAgg agg;
            agg.scenario = s_idx;
            agg.horizon_days = inputs.horizons_days[h];
            agg.n_cases = cnt;
            agg.mean = sum / double(cnt);
            agg.std_dev = std::sqrt(std::max(0.0, sum2 / double(cnt) - agg.mean * agg.mean));
            report.aggregates.push_back(agg);
        }
    }

    // Relevance: inverse length scales averaged across training sets.
    for (int s_idx = 0; s_idx < 4; ++s_idx) {
        const auto names = scenario_input_names(Scenario(s_idx));
        const std::size_t d = names.size();
        const auto& flat = inv_lengths_by_scenario[std::size_t(s_idx)];
        const std::size_t nf = flat.size() / d;
        for (std::size_t j = 0; j < d; ++j) {
            double sum = 0, sum2 = 0;
            for (std::size_t f = 0; f < nf; ++f) {
                const double v = flat[f * d + j];
                sum += v;
                sum2 += v * v;
            }
            RelevanceRow row;
            row.scenario = s_idx;
            row.input_name = names[j];
            row.mean_inv_length = sum / double(nf);
            row.std_inv_length = std::sqrt(std::max(0.0, sum2 / double(nf) -
                                                             row.mean_inv_length * row.mean_inv_length));
            report.relevance.push_back(row);
        }
    }
    return report;
}

void EvalReport::write_json(const std::string& path) const {
    json j;
    json cs = json::array();
    for (const auto& c : cases)
        cs.push_back({{"scenario", kScenarioNames[std::size_t(c.scenario)]},
                      {"fold", c.fold},
                      {"subset", c.subset},
                      {"horizon_days", c.horizon_days},
                      {"tp", c.tp},
                      {"fn", c.fn},
                      {"tn", c.tn},
                      {"fp", c.fp},
                      {"balanced_accuracy", c.balanced_accuracy}});
    j["cases"] = std::move(cs);
    json ag = json::array();
    for (const auto& a : aggregates)
        ag.push_back({{"scenario", kScenarioNames[std::size_t(a.scenario)]},
                      {"horizon_days", a.horizon_days},
                      {"mean", a.mean},
                      {"std", a.std_dev},
                      {"n_cases", a.n_cases}});
    j["aggregates"] = std::move(ag);
    json rel = json::array();
    for (const auto& r : relevance)
        rel.push_back({{"scenario", kScenarioNames[std::size_t(r.scenario)]},
                       {"input", r.input_name},
                       {"mean_inv_length_scale", r.mean_inv_length},
                       {"std_inv_length_scale", r.std_inv_length}});
    j["relevance"] = std::move(rel);
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(1) << "\n";
}

EvalReport EvalReport::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    EvalReport rep;
    auto scenario_index = [](const std::string& name) {
        for (int i = 0; i < 4; ++i)
            if (name == kScenarioNames[std::size_t(i)]) return i;
        throw ParseError("unknown scenario name " + name);
    };
    for (const auto& cj : j.at("cases")) {
        TestCaseResult c;
        c.scenario = scenario_index(cj.at("scenario").get<std::string>());
        c.fold = cj.at("fold").get<int>();
        c.subset = cj.at("subset").get<int>();
        c.horizon_days = cj.at("horizon_days").get<double>();
        c.tp = cj.at("tp").get<long>();
        c.fn = cj.at("fn").get<long>();
        c.tn = cj.at("tn").get<long>();
        c.fp = cj.at("fp").get<long>();
        c.balanced_accuracy = cj.at("balanced_accuracy").get<double>();
        rep.cases.push_back(c);
    }
    for (const auto& aj : j.at("aggregates")) {
        ScenarioHorizonAgg a;
        a.scenario = scenario_index(aj.at("scenario").get<std::string>());
        a.horizon_days = aj.at("horizon_days").get<double>();
        a.mean = aj.at("mean").get<double>();
        a.std_dev = aj.at("std").get<double>();
        a.n_cases = aj.at("n_cases").get<std::size_t>();
        rep.aggregates.push_back(a);
    }
    for (const auto& rj : j.at("relevance")) {
        RelevanceRow r;
        r.scenario = scenario_index(rj.at("scenario").get<std::string>());
        r.input_name = rj.at("input").get<std::string>();
        r.mean_inv_length = rj.at("mean_inv_length_scale").get<double>();
        r.std_inv_length = rj.at("std_inv_length_scale").get<double>();
        rep.relevance.push_back(r);
    }
    return rep;
}

}  // namespace soh::eol
