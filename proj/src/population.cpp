#include "soh/population.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "soh/optim.hpp"

namespace soh::population {

using nlohmann::json;

Eigen::MatrixXd PopulationGP::kernel_matrix() const {
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd K(n, n);
    const double lengths[3] = {l_i, l_t, l_c};
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b <= a; ++b) {
            const double pa[3] = {X(a, 0), X(a, 1), X(a, 2)};
            const double pb[3] = {X(b, 0), X(b, 1), X(b, 2)};
            const double v = ssgp::se_kernel(pa, pb, sigma_f, lengths);
            K(a, b) = v;
            K(b, a) = v;
        }
    }
    return K;
}

void PopulationGP::factorize() {
    Eigen::MatrixXd K = kernel_matrix();
    K.diagonal().array() += sigma_n * sigma_n + jitter_;
    K.diagonal() += target_var;
    llt_.compute(K);
    if (llt_.info() != Eigen::Success)
        throw NumericError("population GP: covariance not positive definite after jitter");
    alpha_ = llt_.solve(y);
}

PopulationGP::Prediction PopulationGP::predict(double xi, double xt, double xc) const {
    const Eigen::Index n = X.rows();
    Eigen::VectorXd ks(n);
    const double lengths[3] = {l_i, l_t, l_c};
    const double p[3] = {xi, xt, xc};
    for (Eigen::Index a = 0; a < n; ++a) {
        const double pa[3] = {X(a, 0), X(a, 1), X(a, 2)};
        ks[a] = ssgp::se_kernel(p, pa, sigma_f, lengths);
    }
    Prediction out;
    out.mean = ks.dot(alpha_);
    Eigen::VectorXd v = llt_.matrixL().solve(ks);
    out.var = std::max(0.0, sigma_f * sigma_f - v.squaredNorm());
    return out;
}

PopulationGP fit_population_gp(const std::vector<std::string>& ids, const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& y, const Eigen::VectorXd& target_var,
                               const PopulationConfig& cfg) {
    const Eigen::Index n = X.rows();
    if (n < 2) throw DomainError("fit_population_gp: need at least 2 batteries");
    if (Eigen::Index(ids.size()) != n || y.size() != n || target_var.size() != n)
        throw DomainError("fit_population_gp: row count mismatch");

    PopulationGP gp;
    gp.battery_ids = ids;
    gp.X = X;
    gp.y = y;
    gp.target_var = target_var;
    gp.jitter_ = cfg.jitter;

    const auto set_hp = [&](PopulationGP& g, const Eigen::VectorXd& theta) {
        g.sigma_f = std::exp(theta[0]);
        g.sigma_n = std::exp(theta[1]);
        g.l_i = std::exp(theta[2]);
        g.l_t = std::exp(theta[3]);
        g.l_c = std::exp(theta[4]);
    };

    const auto objective = [&](const Eigen::VectorXd& theta) {
        PopulationGP g = gp;
        set_hp(g, theta);
        Eigen::MatrixXd K = g.kernel_matrix();
        K.diagonal().array() += g.sigma_n * g.sigma_n + cfg.jitter;
        K.diagonal() += g.target_var;
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) return 1e300;
        const Eigen::VectorXd alpha = llt.solve(g.y);
        double logdet = 0;
        for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
        const double nll =
            0.5 * g.y.dot(alpha) + 0.5 * logdet + 0.5 * double(n) * std::log(2.0 * M_PI);
        auto half_normal = [](double xv, double s) { return xv * xv / (2.0 * s * s); };
        auto inv_gamma = [](double l) { return 2.0 * std::log(l) + 2.0 / l; };
        return nll + half_normal(g.sigma_f, 0.2) + half_normal(g.sigma_n, 0.1) + inv_gamma(g.l_i) +
               inv_gamma(g.l_t) + inv_gamma(g.l_c);
    };

    Eigen::VectorXd theta0(5);
    theta0 << std::log(0.2), std::log(0.1), 0.0, 0.0, 0.0;  // prior modes
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(5, std::log(cfg.hp_lower));
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(5, std::log(cfg.hp_upper));
    optim::Options oopts;
    oopts.max_iters = cfg.opt_max_iters;
    optim::Result res = optim::minimize_box(objective, theta0, lo, hi, oopts);

    set_hp(gp, res.x);
    gp.converged = res.converged;
    gp.factorize();
    {
        const Eigen::VectorXd alpha = gp.alpha_;
        double logdet = 0;
        for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(gp.llt_.matrixL()(i, i));
        gp.loglik = -(0.5 * gp.y.dot(alpha) + 0.5 * logdet + 0.5 * double(n) * std::log(2.0 * M_PI));
    }
    return gp;
}

std::vector<SliceCurve> population_slices(const PopulationGP& gp,
                                          const soc::NormalizationMoments& m, int n_points) {
    struct Axis {
        const char* name;
        double p5, p95, mean, std;
        int dim;
    };
    const Axis axes[3] = {{"temperature", m.p5_t, m.p95_t, m.mean_t, m.std_t, 1},
                          {"current", m.p5_i, m.p95_i, m.mean_i, m.std_i, 0},
                          {"concentration", m.p5_c, m.p95_c, m.mean_c, m.std_c, 2}};
    std::vector<SliceCurve> out;
    for (const Axis& ax : axes) {
        SliceCurve c;
        c.input_name = ax.name;
        for (int k = 0; k < n_points; ++k) {
            const double raw = ax.p5 + (ax.p95 - ax.p5) * double(k) / double(n_points - 1);
            double z[3] = {0, 0, 0};
            z[ax.dim] = soc::normalize(raw, ax.mean, ax.std);
            auto pred = gp.predict(z[0], z[1], z[2]);
            const double sd = std::sqrt(pred.var);
            c.grid.push_back(raw);
            c.mean.push_back(pred.mean);
            c.lo.push_back(pred.mean - 2.0 * sd);
            c.hi.push_back(pred.mean + 2.0 * sd);
        }
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

struct WvState {
    double mean_r, mean_v, var_r, var_v, cov_rv, cov_r_phi, cov_v_phi;
};

WvState predict_wv(const ssgp::TrajectoryPoint& p, double q, double dt) {
    WvState s;
    s.mean_r = p.mean_r + dt * p.mean_v;
    s.mean_v = p.mean_v;
    s.var_r = p.var_r + 2.0 * dt * p.cov_rv + dt * dt * p.var_v + q * dt * dt * dt / 3.0;
    s.cov_rv = p.cov_rv + dt * p.var_v + q * dt * dt / 2.0;
    s.var_v = p.var_v + q * dt;
    s.cov_r_phi = p.cov_r_phi + dt * p.cov_v_phi;
    s.cov_v_phi = p.cov_v_phi;
    return s;
}

}  // namespace

HealthTrajectory calibrate_trajectory(const ssgp::HealthModel& hm, const ssgp::BenchmarkModel& bm,
                                      std::span<const double> horizons_days,
                                      double series_end_age_seconds) {
    if (hm.track.empty()) throw DomainError("calibrate_trajectory: empty track");
    HealthTrajectory tr;
    tr.battery_id = hm.battery_id;
    tr.range_warning = (0.0 < hm.min_i - 3.0 || 0.0 > hm.max_i + 3.0) ||
                       (0.0 < hm.min_t - 3.0 || 0.0 > hm.max_t + 3.0) ||
                       (0.0 < hm.min_c - 3.0 || 0.0 > hm.max_c + 3.0);

    for (const auto& p : hm.track) {
        TrajPoint t;
        t.t_norm = p.t_norm;
        t.age_seconds = p.age_seconds;
        t.r0_mean = p.mean_r + hm.phi_mean;
        t.r0_var = p.var_r + 2.0 * p.cov_r_phi + hm.phi_var;
        t.drdt_mean = p.mean_v;
        t.drdt_var = p.var_v;
        tr.points.push_back(t);
    }

    const double q = hm.hp.sigma_f0 * hm.hp.sigma_f0;
    for (double h : horizons_days) {
        const double t_eval_s = series_end_age_seconds - h * 86400.0;
        const double t_eval = t_eval_s / kTimeScaleSeconds;
        if (t_eval < hm.track.front().t_norm)
            throw DomainError("extrapolate: target time before first observation for battery " +
                              hm.battery_id);
        // Predict from the last trajectory knot at or before the target.
        std::size_t idx = 0;
        for (std::size_t i = 0; i < hm.track.size(); ++i)
            if (hm.track[i].t_norm <= t_eval) idx = i;
        const auto& p = hm.track[idx];
        const WvState s = predict_wv(p, q, t_eval - p.t_norm);

        HorizonPoint hp;
        hp.horizon_days = h;
        hp.t_norm = t_eval;
        hp.r0_mean = s.mean_r + hm.phi_mean;
        hp.r0_var = s.var_r + 2.0 * s.cov_r_phi + hm.phi_var;
        hp.drdt_mean = s.mean_v;
        hp.drdt_var = s.var_v;

        // Benchmark random walk: constant-mean prediction, variance grows
        // linearly with the gap.
        std::size_t bidx = 0;
        for (std::size_t i = 0; i < bm.track.size(); ++i)
            if (bm.track[i].t_norm <= t_eval) bidx = i;
        if (!bm.track.empty()) {
            hp.bench_mean = bm.track[bidx].mean;
            hp.bench_var = bm.track[bidx].var + bm.q * std::max(0.0, t_eval - bm.track[bidx].t_norm);
        }
        tr.horizons.push_back(hp);
    }
    return tr;
}

void HealthTrajectory::write_json(const std::string& path) const {
    json j;
    j["battery_id"] = battery_id;
    j["range_warning"] = range_warning;
    json pts = json::array();
    for (const auto& p : points)
        pts.push_back({{"t_norm", p.t_norm},
                       {"age_s", p.age_seconds},
                       {"r0_mean", p.r0_mean},
                       {"r0_var", p.r0_var},
                       {"drdt_mean", p.drdt_mean},
                       {"drdt_var", p.drdt_var}});
    j["points"] = std::move(pts);
    json hs = json::array();
    for (const auto& h : horizons)
        hs.push_back({{"horizon_days", h.horizon_days},
                      {"t_norm", h.t_norm},
                      {"r0_mean", h.r0_mean},
                      {"r0_var", h.r0_var},
                      {"drdt_mean", h.drdt_mean},
                      {"drdt_var", h.drdt_var},
                      {"bench_mean", h.bench_mean},
                      {"bench_var", h.bench_var}});
    j["horizons"] = std::move(hs);
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(1) << "\n";
}

HealthTrajectory HealthTrajectory::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    HealthTrajectory tr;
    tr.battery_id = j.at("battery_id").get<std::string>();
    tr.range_warning = j.at("range_warning").get<bool>();
    for (const auto& pj : j.at("points")) {
        TrajPoint p;
        p.t_norm = pj.at("t_norm").get<double>();
        p.age_seconds = pj.at("age_s").get<double>();
        p.r0_mean = pj.at("r0_mean").get<double>();
        p.r0_var = pj.at("r0_var").get<double>();
        p.drdt_mean = pj.at("drdt_mean").get<double>();
        p.drdt_var = pj.at("drdt_var").get<double>();
        tr.points.push_back(p);
    }
    for (const auto& hj : j.at("horizons")) {
        HorizonPoint h;
        h.horizon_days = hj.at("horizon_days").get<double>();
        h.t_norm = hj.at("t_norm").get<double>();
        h.r0_mean = hj.at("r0_mean").get<double>();
        h.r0_var = hj.at("r0_var").get<double>();
        h.drdt_mean = hj.at("drdt_mean").get<double>();
        h.drdt_var = hj.at("drdt_var").get<double>();
        h.bench_mean = hj.at("bench_mean").get<double>();
        h.bench_var = hj.at("bench_var").get<double>();
        tr.horizons.push_back(h);
    }
    return tr;
}

void PopulationGP::write_json(const std::string& path) const {
    json j;
    j["battery_ids"] = battery_ids;
    json rows = json::array();
    for (Eigen::Index r = 0; r < X.rows(); ++r)
        rows.push_back({X(r, 0), X(r, 1), X(r, 2)});
    j["x"] = std::move(rows);
    j["y"] = std::vector<double>(y.data(), y.data() + y.size());
    j["target_var"] = std::vector<double>(target_var.data(), target_var.data() + target_var.size());
    j["hyperparameters"] = {{"sigma_f", sigma_f}, {"sigma_n", sigma_n}, {"l_i", l_i},
                            {"l_t", l_t},         {"l_c", l_c}};
    j["loglik"] = loglik;
    j["converged"] = converged;
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(1) << "\n";
}

PopulationGP PopulationGP::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    PopulationGP gp;
    gp.battery_ids = j.at("battery_ids").get<std::vector<std::string>>();
    const auto& rows = j.at("x");
    gp.X.resize(Eigen::Index(rows.size()), 3);
    for (Eigen::Index r = 0; r < gp.X.rows(); ++r)
        for (int c = 0; c < 3; ++c) gp.X(r, c) = rows[std::size_t(r)][std::size_t(c)].get<double>();
    auto yv = j.at("y").get<std::vector<double>>();
    auto vv = j.at("target_var").get<std::vector<double>>();
    gp.y = Eigen::Map<Eigen::VectorXd>(yv.data(), Eigen::Index(yv.size()));
    gp.target_var = Eigen::Map<Eigen::VectorXd>(vv.data(), Eigen::Index(vv.size()));
    const auto& h = j.at("hyperparameters");
    gp.sigma_f = h.at("sigma_f").get<double>();
    gp.sigma_n = h.at("sigma_n").get<double>();
    gp.l_i = h.at("l_i").get<double>();
    gp.l_t = h.at("l_t").get<double>();
    gp.l_c = h.at("l_c").get<double>();
    gp.loglik = j.at("loglik").get<double>();
    gp.converged = j.at("converged").get<bool>();
    gp.factorize();
    return gp;
}

}  // namespace soh::population
