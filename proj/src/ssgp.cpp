#include "soh/ssgp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "soh/optim.hpp"
#include "soh/rng.hpp"
#include "soh/simd/kernels.hpp"

namespace soh::ssgp {

using nlohmann::json;

void Hyperparameters::validate() const {
    if (!(sigma_f0 > 0) || !(sigma_f1 > 0) || !(l_i > 0) || !(l_t > 0) || !(l_c > 0))
        throw DomainError("hyperparameters must be strictly positive");
}

Eigen::VectorXd Hyperparameters::to_log() const {
    Eigen::VectorXd v(5);
    v << std::log(sigma_f0), std::log(sigma_f1), std::log(l_i), std::log(l_t), std::log(l_c);
    return v;
}

Hyperparameters Hyperparameters::from_log(const Eigen::VectorXd& v) {
    if (v.size() != 5) throw DomainError("hyperparameter vector must have 5 components");
    Hyperparameters hp;
    hp.sigma_f0 = std::exp(v[0]);
    hp.sigma_f1 = std::exp(v[1]);
    hp.l_i = std::exp(v[2]);
    hp.l_t = std::exp(v[3]);
    hp.l_c = std::exp(v[4]);
    return hp;
}

double wv_kernel(double t1, double t2, double sigma_f0) {
    if (t1 < 0 || t2 < 0) throw DomainError("wv_kernel: times must be non-negative");
    const double lo = std::min(t1, t2);
    const double hi = std::max(t1, t2);
    return sigma_f0 * sigma_f0 * (lo * lo * lo / 3.0 + (hi - lo) * lo * lo / 2.0);
}

double se_kernel(const double a[3], const double b[3], double sigma_f1, const double lengths[3]) {
    double q = 0;
    for (int k = 0; k < 3; ++k) {
        const double d = a[k] - b[k];
        q += d * d / (2.0 * lengths[k] * lengths[k]);
    }
    return sigma_f1 * sigma_f1 * std::exp(-q);
}

KmeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iters) {
    const Eigen::Index n = points.rows();
    const Eigen::Index d = points.cols();
    if (n < k) throw DomainError("kmeans: fewer points than clusters");

    std::mt19937_64 g(seed);
    KmeansResult res;
    res.centroids.resize(k, d);

    // k-means++ seeding.
    res.centroids.row(0) = points.row(Eigen::Index(rng::index(g, std::uint64_t(n))));
    Eigen::VectorXd d2 =
        (points.rowwise() - res.centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0) {
            const double r = rng::u01(g) * total;
            double acc = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = Eigen::Index(rng::index(g, std::uint64_t(n)));
        }
        res.centroids.row(c) = points.row(chosen);
        d2 = d2.cwiseMin((points.rowwise() - res.centroids.row(c)).rowwise().squaredNorm());
    }

    res.assignment.assign(std::size_t(n), -1);
    std::vector<int> counts(k, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        res.iterations = iter + 1;
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (points.row(i) - res.centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double dist = (points.row(i) - res.centroids.row(c)).squaredNorm();
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (res.assignment[std::size_t(i)] != best) {
                res.assignment[std::size_t(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
        std::fill(counts.begin(), counts.end(), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(res.assignment[std::size_t(i)]) += points.row(i);
            ++counts[std::size_t(res.assignment[std::size_t(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[std::size_t(c)] > 0) {
                res.centroids.row(c) = sums.row(c) / counts[std::size_t(c)];
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                Eigen::Index far = 0;
                double far_d = -1;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double dist =
                        (points.row(i) - res.centroids.row(res.assignment[std::size_t(i)]))
                            .squaredNorm();
                    if (dist > far_d) {
                        far_d = dist;
                        far = i;
                    }
                }
                res.centroids.row(c) = points.row(far);
            }
        }
    }
    return res;
}

InducingSet choose_inducing_points(std::span<const double> in_i, std::span<const double> in_t,
                                   std::span<const double> in_c, int k, std::uint64_t seed,
                                   int max_iters) {
    const std::size_t n = in_i.size();
    if (in_t.size() != n || in_c.size() != n) throw DomainError("choose_inducing_points: size mismatch");
    if (n == 0) throw DomainError("choose_inducing_points: empty input");

    std::set<std::array<double, 3>> distinct;
    for (std::size_t i = 0; i < n; ++i) distinct.insert({in_i[i], in_t[i], in_c[i]});

    InducingSet out;
    if (distinct.size() <= std::size_t(k)) {
        // Degenerate input: the distinct points themselves.
        out.fallback = distinct.size() < std::size_t(k);
        for (const auto& p : distinct) {
            out.ui.push_back(p[0]);
            out.ut.push_back(p[1]);
            out.uc.push_back(p[2]);
        }
        return out;
    }

    Eigen::MatrixXd pts(n, 3);
    for (std::size_t i = 0; i < n; ++i) pts.row(Eigen::Index(i)) << in_i[i], in_t[i], in_c[i];
    KmeansResult km = kmeans(pts, k, seed, max_iters);

    std::vector<std::array<double, 3>> cents;
    cents.resize(std::size_t(k));
    for (int c = 0; c < k; ++c)
        cents[std::size_t(c)] = {km.centroids(c, 0), km.centroids(c, 1), km.centroids(c, 2)};
    std::sort(cents.begin(), cents.end());
    for (const auto& p : cents) {
        out.ui.push_back(p[0]);
        out.ut.push_back(p[1]);
        out.uc.push_back(p[2]);
    }
    return out;
}

void FitData::validate() const {
    const std::size_t n = t_norm.size();
    if (age_seconds.size() != n || current_a.size() != n || in_i.size() != n || in_t.size() != n ||
        in_c.size() != n || y.size() != n || noise_var.size() != n || segment_id.size() != n)
        throw DomainError("FitData: column length mismatch");
    double prev = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (t_norm[i] < prev) throw DomainError("FitData: time must be non-decreasing from 0");
        if (!(noise_var[i] > 0)) throw DomainError("FitData: noise variance must be positive");
        prev = t_norm[i];
    }
}

BatteryModel::BatteryModel(const Hyperparameters& hp, const InducingSet& inducing, double jitter,
                           bool include_wv)
    : hp_(hp), inducing_(inducing), jitter_(jitter), include_wv_(include_wv) {
    hp_.validate();
    const int m = int(inducing_.size());
    dim_ = (include_wv_ ? 2 : 0) + m;
    if (dim_ == 0) throw DomainError("BatteryModel: empty state");
    if (m > 0) {
        kuu_.resize(m, m);
        const double lengths[3] = {hp_.l_i, hp_.l_t, hp_.l_c};
        for (int a = 0; a < m; ++a) {
            const double pa[3] = {inducing_.ui[a], inducing_.ut[a], inducing_.uc[a]};
            for (int b = 0; b <= a; ++b) {
                const double pb[3] = {inducing_.ui[b], inducing_.ut[b], inducing_.uc[b]};
                const double v = se_kernel(pa, pb, hp_.sigma_f1, lengths);
                kuu_(a, b) = v;
                kuu_(b, a) = v;
            }
        }
        kuu_.diagonal().array() += jitter_;
        kuu_llt_.compute(kuu_);
        if (kuu_llt_.info() != Eigen::Success)
            throw NumericError("BatteryModel: K(U,U) not positive definite after jitter");
    }
}

Eigen::VectorXd BatteryModel::weights_at(double i, double t, double c) const {
    const int m = int(inducing_.size());
    Eigen::VectorXd k_row(m);
    if (m == 0) return k_row;
    const double inv2[3] = {1.0 / (2 * hp_.l_i * hp_.l_i), 1.0 / (2 * hp_.l_t * hp_.l_t),
                            1.0 / (2 * hp_.l_c * hp_.l_c)};
    simd::ops().se_cross_row(i, t, c, inducing_.ui.data(), inducing_.ut.data(), inducing_.uc.data(),
                             std::size_t(m), inv2, hp_.sigma_f1 * hp_.sigma_f1, k_row.data());
    return kuu_llt_.solve(k_row);
}

double BatteryModel::residual_at(double i, double t, double c) const {
    const int m = int(inducing_.size());
    if (m == 0) return 0.0;  // no SE component in the model
    const double inv2[3] = {1.0 / (2 * hp_.l_i * hp_.l_i), 1.0 / (2 * hp_.l_t * hp_.l_t),
                            1.0 / (2 * hp_.l_c * hp_.l_c)};
    Eigen::VectorXd k_row(m);
    simd::ops().se_cross_row(i, t, c, inducing_.ui.data(), inducing_.ut.data(), inducing_.uc.data(),
                             std::size_t(m), inv2, hp_.sigma_f1 * hp_.sigma_f1, k_row.data());
    Eigen::VectorXd v = kuu_llt_.matrixL().solve(k_row);
    return std::max(0.0, hp_.sigma_f1 * hp_.sigma_f1 - v.squaredNorm());
}

BatteryModel::ObsData BatteryModel::build_obs(const FitData& data) const {
    data.validate();
    const std::size_t n = data.size();
    const int m = int(inducing_.size());
    ObsData obs;
    obs.n = n;
    obs.dt.resize(Eigen::Index(n));
    obs.y.resize(Eigen::Index(n));
    obs.r_var.resize(Eigen::Index(n));
    obs.current.resize(Eigen::Index(n));
    obs.resid.setZero(Eigen::Index(n));
    obs.weights.resize(m, Eigen::Index(n));

    double prev_t = 0;
    for (std::size_t i = 0; i < n; ++i) {
        obs.dt[Eigen::Index(i)] = data.t_norm[i] - prev_t;
        prev_t = data.t_norm[i];
        obs.y[Eigen::Index(i)] = data.y[i];
        obs.current[Eigen::Index(i)] = data.current_a[i];
    }

    if (m > 0) {
        const double inv2[3] = {1.0 / (2 * hp_.l_i * hp_.l_i), 1.0 / (2 * hp_.l_t * hp_.l_t),
                                1.0 / (2 * hp_.l_c * hp_.l_c)};
        const double s2 = hp_.sigma_f1 * hp_.sigma_f1;
        for (std::size_t i = 0; i < n; ++i)
            simd::ops().se_cross_row(data.in_i[i], data.in_t[i], data.in_c[i], inducing_.ui.data(),
                                     inducing_.ut.data(), inducing_.uc.data(), std::size_t(m), inv2,
                                     s2, obs.weights.col(Eigen::Index(i)).data());
        // V = L^-1 Kux ; residual = s2 - colwise |V|^2 ; W = L^-T V.
        kuu_llt_.matrixL().solveInPlace(obs.weights);
        obs.resid = (s2 - obs.weights.colwise().squaredNorm().array()).cwiseMax(0.0).transpose();
        kuu_llt_.matrixU().solveInPlace(obs.weights);
    }

    for (std::size_t i = 0; i < n; ++i) {
        const double it = data.current_a[i];
        obs.r_var[Eigen::Index(i)] = data.noise_var[i] + it * it * obs.resid[Eigen::Index(i)];
    }
    return obs;
}

void BatteryModel::predict_in_place(Eigen::VectorXd& mean, Eigen::MatrixXd& cov, double dt) const {
    if (!include_wv_ || dt == 0.0) return;
    if (dt < 0) throw NumericError("predict: negative time step");
    mean(0) += dt * mean(1);
    cov.row(0) += dt * cov.row(1);
    cov.col(0) += dt * cov.col(1);
    const double q = hp_.sigma_f0 * hp_.sigma_f0;
    cov(0, 0) += q * dt * dt * dt / 3.0;
    cov(0, 1) += q * dt * dt / 2.0;
    cov(1, 0) += q * dt * dt / 2.0;
    cov(1, 1) += q * dt;
}

namespace {

struct FilterCursor {
    const BatteryModel& mdl;
    const BatteryModel::ObsData& obs;
    bool with_wv;
    int m;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    Eigen::VectorXd u;  // scratch
    double loglik = 0;
    std::size_t step = 0;

    FilterCursor(const BatteryModel& model, const BatteryModel::ObsData& o)
        : mdl(model), obs(o), with_wv(model.wv_dim() == 2), m(int(model.n_inducing())) {
        const int d = model.dim();
        mean.setZero(d);
        cov.setZero(d, d);
        if (m > 0) cov.bottomRightCorner(m, m) = model.kuu();
        u.resize(d);
    }
};

void cursor_advance(FilterCursor& c) {
    const Eigen::Index i = Eigen::Index(c.step);
    c.mdl.predict_in_place(c.mean, c.cov, c.obs.dt[i]);

    const double it = c.obs.current[i];
    const int d = int(c.mean.size());
    const int m = c.m;
    auto w = c.obs.weights.col(i);

    if (c.with_wv)
        c.u = c.cov.col(0);
    else
        c.u.setZero(d);
    if (m > 0) c.u.noalias() += c.cov.rightCols(m) * w;

    double a_u = c.with_wv ? c.u(0) : 0.0;
    if (m > 0) a_u += c.u.tail(m).dot(w);
    const double S = it * it * a_u + c.obs.r_var[i];
    if (!(S > 0) || !std::isfinite(S))
        throw NumericError("kalman update: non-positive innovation variance at step " +
                           std::to_string(c.step));

    double pred = c.with_wv ? c.mean(0) : 0.0;
    if (m > 0) pred += c.mean.tail(m).dot(w);
    pred *= it;
    const double innov = c.obs.y[i] - pred;

    c.loglik += -0.5 * (std::log(2.0 * M_PI * S) + innov * innov / S);
    c.mean.noalias() += c.u * (it * innov / S);
    c.cov.noalias() -= c.u * c.u.transpose() * (it * it / S);

    ++c.step;
    if (c.step % 256 == 0) {
        // Counter roundoff drift from the repeated rank-1 downdates.
        c.cov = 0.5 * (c.cov + c.cov.transpose()).eval();
        for (int j = 0; j < d; ++j)
            if (c.cov(j, j) < 0) c.cov(j, j) = 0;
    }
}

}  // namespace

double BatteryModel::filter_loglik(const ObsData& obs) const {
    FilterCursor c(*this, obs);
    for (std::size_t i = 0; i < obs.n; ++i) cursor_advance(c);
    return c.loglik;
}

BatteryModel::SmoothResult BatteryModel::smooth(const ObsData& obs, const SmoothOptions& opts) const {
    const std::size_t n = obs.n;
    const int d = dim_;
    SmoothResult res;
    if (n == 0) return res;

    std::vector<std::size_t> emit = opts.emit_indices;
    if (emit.empty()) {
        emit.resize(n);
        std::iota(emit.begin(), emit.end(), 0);
    }

    const std::size_t stride =
        std::max<std::size_t>(1, std::size_t(opts.checkpoint_stride));
    const std::size_t n_chunks = (n + stride - 1) / stride;

    // Forward pass: record the cursor at every chunk start.
    std::vector<Eigen::VectorXd> ckpt_mean(n_chunks);
    std::vector<Eigen::MatrixXd> ckpt_cov(n_chunks);
    std::vector<double> ckpt_loglik(n_chunks);
    FilterCursor fwd(*this, obs);
    for (std::size_t i = 0; i < n; ++i) {
        if (i % stride == 0) {
            ckpt_mean[i / stride] = fwd.mean;
            ckpt_cov[i / stride] = fwd.cov;
            ckpt_loglik[i / stride] = fwd.loglik;
        }
        cursor_advance(fwd);
    }
    res.loglik = fwd.loglik;
    res.final_mean = fwd.mean;
    res.final_cov = 0.5 * (fwd.cov + fwd.cov.transpose()).eval();

    // Projection matrix A: columns are the requested state-space vectors.
    const int np = int(opts.projections.size());
    Eigen::MatrixXd proj(d, np);
    for (int j = 0; j < np; ++j) {
        if (opts.projections[std::size_t(j)].size() != d)
            throw DomainError("smooth: projection vector dimension mismatch");
        proj.col(j) = opts.projections[std::size_t(j)];
    }

    std::vector<Eigen::VectorXd> buf_mean(stride);
    std::vector<Eigen::MatrixXd> buf_cov(stride);

    Eigen::VectorXd sm_mean;   // smoothed state at step (t+1)
    Eigen::MatrixXd sm_cov;
    double next_dt = 0;        // dt between t and t+1
    bool have_next = false;

    auto emit_it = emit.rbegin();
    std::vector<StepSummary> collected;
    std::vector<Eigen::VectorXd> collected_filt_var;

    for (std::size_t chunk = n_chunks; chunk-- > 0;) {
        const std::size_t first = chunk * stride;
        const std::size_t last = std::min(n, first + stride);  // exclusive
        // Re-filter the chunk from its checkpoint.
        FilterCursor c(*this, obs);
        c.mean = ckpt_mean[chunk];
        c.cov = ckpt_cov[chunk];
        c.loglik = ckpt_loglik[chunk];
        c.step = first;
        for (std::size_t i = first; i < last; ++i) {
            cursor_advance(c);
            buf_mean[i - first] = c.mean;
            buf_cov[i - first] = c.cov;
        }
        // Backward sweep within the chunk.
        for (std::size_t i = last; i-- > first;) {
            const Eigen::VectorXd& mf = buf_mean[i - first];
            const Eigen::MatrixXd& pf = buf_cov[i - first];
            Eigen::VectorXd ms;
            Eigen::MatrixXd ps;
            if (!have_next) {
                ms = mf;
                ps = pf;
            } else {
                Eigen::VectorXd mp = mf;
                Eigen::MatrixXd pp = pf;
                predict_in_place(mp, pp, next_dt);
                Eigen::MatrixXd apf = pf;  // A * P_f
                if (include_wv_ && next_dt != 0.0) apf.row(0) += next_dt * apf.row(1);
                pp.diagonal().array() += 1e-12 * pp.trace() / d + 1e-300;
                Eigen::MatrixXd gain = pp.ldlt().solve(apf).transpose();
                ms = mf + gain * (sm_mean - mp);
                ps = pf + gain * (sm_cov - pp) * gain.transpose();
            }
            while (emit_it != emit.rend() && *emit_it == i) {
                StepSummary s;
                s.index = i;
                s.mean = ms;
                s.var_diag = ps.diagonal();
                if (np > 0) s.proj_cov = proj.transpose() * ps * proj;
                collected.push_back(std::move(s));
                if (opts.collect_filtered_var) collected_filt_var.push_back(pf.diagonal());
                ++emit_it;
            }
            sm_mean = std::move(ms);
            sm_cov = std::move(ps);
            next_dt = obs.dt[Eigen::Index(i)];
            have_next = true;
        }
    }

    std::reverse(collected.begin(), collected.end());
    std::reverse(collected_filt_var.begin(), collected_filt_var.end());
    res.steps = std::move(collected);
    res.filtered_var = std::move(collected_filt_var);
    return res;
}

double neg_log_prior(const Hyperparameters& hp) {
    hp.validate();
    auto half_normal = [](double x, double s) { return x * x / (2.0 * s * s); };
    auto inv_gamma = [](double l) { return 2.0 * std::log(l) + 2.0 / l; };  // alpha=1, beta=2
    return half_normal(hp.sigma_f0, 0.2) + half_normal(hp.sigma_f1, 0.2) + inv_gamma(hp.l_i) +
           inv_gamma(hp.l_t) + inv_gamma(hp.l_c);
}

double energy(const Hyperparameters& hp, const FitData& data, const InducingSet& inducing,
              double jitter) {
    hp.validate();
    if (data.size() == 0) return neg_log_prior(hp);
    BatteryModel model(hp, inducing, jitter);
    auto obs = model.build_obs(data);
    return -model.filter_loglik(obs) + neg_log_prior(hp);
}

namespace {

std::vector<std::size_t> segment_end_indices(const FitData& data) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (i + 1 == data.size() || data.segment_id[i + 1] != data.segment_id[i]) out.push_back(i);
    return out;
}

}  // namespace

HealthModel fit_map(const std::string& battery_id, const FitData& data, const SsgpConfig& cfg,
                    int bol_segments) {
    data.validate();
    if (data.size() == 0) throw DomainError("fit_map: no observations");

    HealthModel hm;
    hm.battery_id = battery_id;
    hm.n_obs = data.size();

    InducingSet inducing = choose_inducing_points(data.in_i, data.in_t, data.in_c, cfg.n_inducing,
                                                  cfg.kmeans_seed, cfg.kmeans_max_iters);
    hm.inducing_fallback = inducing.fallback;

    const auto objective = [&](const Eigen::VectorXd& theta) {
        return energy(Hyperparameters::from_log(theta), data, inducing, cfg.jitter);
    };
    const double lo = std::log(cfg.hp_lower), hi = std::log(cfg.hp_upper);
    Eigen::VectorXd lov = Eigen::VectorXd::Constant(5, lo);
    Eigen::VectorXd hiv = Eigen::VectorXd::Constant(5, hi);
    Eigen::VectorXd theta0 = cfg.hp_init.to_log().cwiseMax(lov).cwiseMin(hiv);

    optim::Options oopts;
    oopts.max_iters = cfg.opt_max_iters;
    oopts.grad_tol = cfg.opt_grad_tol;
    optim::Result opt = optim::minimize_box(objective, theta0, lov, hiv, oopts);

    hm.hp = Hyperparameters::from_log(opt.x);
    hm.converged = opt.converged;
    hm.opt_iterations = opt.iterations;
    hm.energy_value = opt.f;
    hm.inducing = inducing;

    // Final smoothing pass with calibration-point projections.
    BatteryModel model(hm.hp, inducing, cfg.jitter);
    auto obs = model.build_obs(data);
    const int d = model.dim();
    const int m = int(inducing.size());

    Eigen::VectorXd wstar = model.weights_at(0.0, 0.0, 0.0);
    hm.residual_star = model.residual_at(0.0, 0.0, 0.0);
    hm.wstar.assign(wstar.data(), wstar.data() + wstar.size());

    BatteryModel::SmoothOptions sopts;
    Eigen::VectorXd e0 = Eigen::VectorXd::Zero(d), e1 = Eigen::VectorXd::Zero(d),
                    astar = Eigen::VectorXd::Zero(d);
    e0(0) = 1;
    e1(1) = 1;
    astar.tail(m) = wstar;
    sopts.projections = {e0, e1, astar};
    sopts.emit_indices = segment_end_indices(data);

    auto sm = model.smooth(obs, sopts);
    hm.loglik = sm.loglik;

    // The SE block is static, so its smoothed posterior equals the final
    // filtered posterior; take it from the last summary.
    hm.se_mean = sm.final_mean.tail(m);
    hm.se_cov = sm.final_cov.bottomRightCorner(m, m);
    hm.phi_mean = wstar.dot(hm.se_mean);
    hm.phi_var = wstar.dot(hm.se_cov * wstar) + hm.residual_star;

    hm.track.reserve(sm.steps.size());
    for (const auto& s : sm.steps) {
        TrajectoryPoint p;
        p.t_norm = data.t_norm[s.index];
        p.age_seconds = data.age_seconds[s.index];
        p.mean_r = s.mean(0);
        p.mean_v = s.mean(1);
        p.var_r = s.proj_cov(0, 0);
        p.var_v = s.proj_cov(1, 1);
        p.cov_rv = s.proj_cov(0, 1);
        p.cov_r_phi = s.proj_cov(0, 2);
        p.cov_v_phi = s.proj_cov(1, 2);
        hm.track.push_back(p);
    }

    hm.min_i = *std::min_element(data.in_i.begin(), data.in_i.end());
    hm.max_i = *std::max_element(data.in_i.begin(), data.in_i.end());
    hm.min_t = *std::min_element(data.in_t.begin(), data.in_t.end());
    hm.max_t = *std::max_element(data.in_t.begin(), data.in_t.end());
    hm.min_c = *std::min_element(data.in_c.begin(), data.in_c.end());
    hm.max_c = *std::max_element(data.in_c.begin(), data.in_c.end());

    // Mean operating point over the first beginning-of-life segments.
    std::set<std::uint32_t> seg_ids(data.segment_id.begin(), data.segment_id.end());
    std::set<std::uint32_t> bol_ids;
    for (auto id : seg_ids) {
        if (int(bol_ids.size()) >= bol_segments) break;
        bol_ids.insert(id);
    }
    double si = 0, st = 0, sc = 0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (bol_ids.count(data.segment_id[i])) {
            si += data.in_i[i];
            st += data.in_t[i];
            sc += data.in_c[i];
            ++cnt;
        }
    }
    hm.bol_i = si / double(cnt);
    hm.bol_t = st / double(cnt);
    hm.bol_c = sc / double(cnt);
    Eigen::VectorXd wb = model.weights_at(hm.bol_i, hm.bol_t, hm.bol_c);
    hm.bol_r0 = wb.dot(hm.se_mean);
    hm.bol_r0_var = wb.dot(hm.se_cov * wb) + model.residual_at(hm.bol_i, hm.bol_t, hm.bol_c);

    return hm;
}

ScalarRwResult scalar_random_walk_smooth(const FitData& data, double q, double init_var) {
    data.validate();
    const std::size_t n = data.size();
    ScalarRwResult res;
    res.filt_mean.resize(n);
    res.filt_var.resize(n);
    double mean = 0, var = init_var, prev_t = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = data.t_norm[i] - prev_t;
        prev_t = data.t_norm[i];
        var += q * dt;
        const double it = data.current_a[i];
        const double S = it * it * var + data.noise_var[i];
        if (!(S > 0) || !std::isfinite(S))
            throw NumericError("random walk filter: bad innovation variance");
        const double innov = data.y[i] - it * mean;
        res.loglik += -0.5 * (std::log(2.0 * M_PI * S) + innov * innov / S);
        const double k = it * var / S;
        mean += k * innov;
        var -= it * it * var * var / S;
        res.filt_mean[i] = mean;
        res.filt_var[i] = var;
    }
    res.mean.resize(n);
    res.var.resize(n);
    if (n > 0) {
        res.mean[n - 1] = res.filt_mean[n - 1];
        res.var[n - 1] = res.filt_var[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) {
            const double dt = data.t_norm[i + 1] - data.t_norm[i];
            const double pp = res.filt_var[i] + q * dt;
            const double g = pp > 0 ? res.filt_var[i] / pp : 0.0;
            res.mean[i] = res.filt_mean[i] + g * (res.mean[i + 1] - res.filt_mean[i]);
            res.var[i] = res.filt_var[i] + g * g * (res.var[i + 1] - pp);
        }
        res.last_mean = res.filt_mean[n - 1];
        res.last_var = res.filt_var[n - 1];
    }
    return res;
}

BenchmarkModel fit_benchmark(const std::string& battery_id, const FitData& data,
                             const SsgpConfig& cfg) {
    data.validate();
    BenchmarkModel bm;
    bm.battery_id = battery_id;
    bm.m_mult = cfg.benchmark_m;
    bm.n_obs = data.size();
    if (data.size() == 0) {
        bm.q = cfg.benchmark_q_lower;
        return bm;
    }

    const auto nll = [&](double log_q) {
        const double q = std::exp(log_q);
        return -scalar_random_walk_smooth(data, q, cfg.benchmark_m * q).loglik;
    };
    const double log_q = optim::minimize_scalar(nll, std::log(cfg.benchmark_q_lower),
                                                std::log(cfg.benchmark_q_upper), 1e-8, 300);
    bm.q = std::exp(log_q);

    auto sm = scalar_random_walk_smooth(data, bm.q, cfg.benchmark_m * bm.q);
    bm.loglik = sm.loglik;
    bm.last_t_norm = data.t_norm.back();
    bm.last_mean = sm.last_mean;
    bm.last_var = sm.last_var;
    for (std::size_t i : segment_end_indices(data)) {
        BenchmarkTrackPoint p;
        p.t_norm = data.t_norm[i];
        p.age_seconds = data.age_seconds[i];
        p.mean = sm.mean[i];
        p.var = sm.var[i];
        bm.track.push_back(p);
    }
    return bm;
}

// ---------------------------------------------------------------------------
// JSON persistence

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[Eigen::Index(i)] = a[i].get<double>();
    return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd mat_from_json(const json& rows) {
    const Eigen::Index nr = Eigen::Index(rows.size());
    const Eigen::Index nc = nr > 0 ? Eigen::Index(rows[0].size()) : 0;
    Eigen::MatrixXd m(nr, nc);
    for (Eigen::Index r = 0; r < nr; ++r)
        for (Eigen::Index c = 0; c < nc; ++c) m(r, c) = rows[std::size_t(r)][std::size_t(c)].get<double>();
    return m;
}

}  // namespace

void HealthModel::write_json(const std::string& path) const {
    json j;
    j["battery_id"] = battery_id;
    j["hyperparameters"] = {{"sigma_f0", hp.sigma_f0}, {"sigma_f1", hp.sigma_f1},
                            {"l_i", hp.l_i},           {"l_t", hp.l_t},
                            {"l_c", hp.l_c}};
    j["inducing"] = {{"i", inducing.ui}, {"t", inducing.ut}, {"c", inducing.uc},
                     {"fallback", inducing.fallback}};
    j["energy"] = energy_value;
    j["loglik"] = loglik;
    j["converged"] = converged;
    j["opt_iterations"] = opt_iterations;
    j["n_obs"] = n_obs;
    j["se_mean"] = vec_to_json(se_mean);
    j["se_cov"] = mat_to_json(se_cov);
    j["wstar"] = wstar;
    j["residual_star"] = residual_star;
    j["phi_mean"] = phi_mean;
    j["phi_var"] = phi_var;
    j["input_range"] = {{"i", {min_i, max_i}}, {"t", {min_t, max_t}}, {"c", {min_c, max_c}}};
    j["bol_point"] = {{"i", bol_i}, {"t", bol_t}, {"c", bol_c}};
    j["bol_r0"] = bol_r0;
    j["bol_r0_var"] = bol_r0_var;
    json track_json = json::array();
    for (const auto& p : track) {
        track_json.push_back({{"t_norm", p.t_norm},
                              {"age_s", p.age_seconds},
                              {"mean_r", p.mean_r},
                              {"mean_v", p.mean_v},
                              {"var_r", p.var_r},
                              {"var_v", p.var_v},
                              {"cov_rv", p.cov_rv},
                              {"cov_r_phi", p.cov_r_phi},
                              {"cov_v_phi", p.cov_v_phi}});
    }
    j["track"] = std::move(track_json);
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(1) << "\n";
}

HealthModel HealthModel::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    HealthModel hm;
    hm.battery_id = j.at("battery_id").get<std::string>();
    const auto& h = j.at("hyperparameters");
    hm.hp = {h.at("sigma_f0"), h.at("sigma_f1"), h.at("l_i"), h.at("l_t"), h.at("l_c")};
    hm.inducing.ui = j.at("inducing").at("i").get<std::vector<double>>();
    hm.inducing.ut = j.at("inducing").at("t").get<std::vector<double>>();
    hm.inducing.uc = j.at("inducing").at("c").get<std::vector<double>>();
    hm.inducing.fallback = j.at("inducing").at("fallback").get<bool>();
    hm.inducing_fallback = hm.inducing.fallback;
    hm.energy_value = j.at("energy").get<double>();
    hm.loglik = j.at("loglik").get<double>();
    hm.converged = j.at("converged").get<bool>();
    hm.opt_iterations = j.at("opt_iterations").get<int>();
    hm.n_obs = j.at("n_obs").get<std::size_t>();
    hm.se_mean = vec_from_json(j.at("se_mean"));
    hm.se_cov = mat_from_json(j.at("se_cov"));
    hm.wstar = j.at("wstar").get<std::vector<double>>();
    hm.residual_star = j.at("residual_star").get<double>();
    hm.phi_mean = j.at("phi_mean").get<double>();
    hm.phi_var = j.at("phi_var").get<double>();
    hm.min_i = j.at("input_range").at("i").at(0).get<double>();
    hm.max_i = j.at("input_range").at("i").at(1).get<double>();
    hm.min_t = j.at("input_range").at("t").at(0).get<double>();
    hm.max_t = j.at("input_range").at("t").at(1).get<double>();
    hm.min_c = j.at("input_range").at("c").at(0).get<double>();
    hm.max_c = j.at("input_range").at("c").at(1).get<double>();
    hm.bol_i = j.at("bol_point").at("i").get<double>();
    hm.bol_t = j.at("bol_point").at("t").get<double>();
    hm.bol_c = j.at("bol_point").at("c").get<double>();
    hm.bol_r0 = j.at("bol_r0").get<double>();
    hm.bol_r0_var = j.at("bol_r0_var").get<double>();
    for (const auto& pj : j.at("track")) {
        TrajectoryPoint p;
        p.t_norm = pj.at("t_norm").get<double>();
        p.age_seconds = pj.at("age_s").get<double>();
        p.mean_r = pj.at("mean_r").get<double>();
        p.mean_v = pj.at("mean_v").get<double>();
        p.var_r = pj.at("var_r").get<double>();
        p.var_v = pj.at("var_v").get<double>();
        p.cov_rv = pj.at("cov_rv").get<double>();
        p.cov_r_phi = pj.at("cov_r_phi").get<double>();
        p.cov_v_phi = pj.at("cov_v_phi").get<double>();
        hm.track.push_back(p);
    }
    return hm;
}

void BenchmarkModel::write_json(const std::string& path) const {
    json j;
    j["battery_id"] = battery_id;
    j["q"] = q;
    j["m_mult"] = m_mult;
    j["loglik"] = loglik;
    j["n_obs"] = n_obs;
    j["last_t_norm"] = last_t_norm;
    j["last_mean"] = last_mean;
    j["last_var"] = last_var;
    json track_json = json::array();
    for (const auto& p : track)
        track_json.push_back(
            {{"t_norm", p.t_norm}, {"age_s", p.age_seconds}, {"mean", p.mean}, {"var", p.var}});
    j["track"] = std::move(track_json);
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(1) << "\n";
}

BenchmarkModel BenchmarkModel::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j = json::parse(in);
    BenchmarkModel bm;
    bm.battery_id = j.at("battery_id").get<std::string>();
    bm.q = j.at("q").get<double>();
    bm.m_mult = j.at("m_mult").get<double>();
    bm.loglik = j.at("loglik").get<double>();
    bm.n_obs = j.at("n_obs").get<std::size_t>();
    bm.last_t_norm = j.at("last_t_norm").get<double>();
    bm.last_mean = j.at("last_mean").get<double>();
    bm.last_var = j.at("last_var").get<double>();
    for (const auto& pj : j.at("track")) {
        BenchmarkTrackPoint p;
        p.t_norm = pj.at("t_norm").get<double>();
        p.age_seconds = pj.at("age_s").get<double>();
        p.mean = pj.at("mean").get<double>();
        p.var = pj.at("var").get<double>();
        bm.track.push_back(p);
    }
    return bm;
}

}  // namespace soh::ssgp
