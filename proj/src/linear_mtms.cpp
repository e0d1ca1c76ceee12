#include "mtms/linear_mtms.hpp"

#include "mtms/errors.hpp"
#include "mtms/optimize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <string>

namespace mtms::lin {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

RowMajorMap map_of(const Array2& a) {
    return RowMajorMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                       static_cast<Eigen::Index>(a.cols()));
}

// LDLT solve with a residual check; falls back to a small ridge when the
// system is rank deficient.
VectorXd solve_or_ridge(const MatrixXd& a, const VectorXd& b, bool& ridge_used) {
    VectorXd x = a.ldlt().solve(b);
    const double resid = (a * x - b).norm();
    if (x.allFinite() && resid <= 1e-8 * std::max(1.0, b.norm())) return x;
    ridge_used = true;
    MatrixXd reg = a;
    reg.diagonal().array() += 1e-8;
    return reg.ldlt().solve(b);
}

struct SeriesCache {
    MatrixXd gram;   // X^T X
    VectorXd xty;    // X^T y
    double yty = 0.0;
    std::size_t rows = 0;
};

std::vector<SeriesCache> build_caches(const SeriesSet& data) {
    std::vector<SeriesCache> caches;
    caches.reserve(data.size());
    for (const Series& s : data.series) {
        SeriesCache c;
        const auto x = map_of(s.x);
        const Eigen::Map<const VectorXd> y(s.y.data(), static_cast<Eigen::Index>(s.y.size()));
        c.gram = x.transpose() * x;
        c.xty = x.transpose() * y;
        c.yty = y.squaredNorm();
        c.rows = s.y.size();
        caches.push_back(std::move(c));
    }
    return caches;
}

double objective_from_caches(const std::vector<SeriesCache>& caches, const LinearMtMs& model) {
    double total = 0.0;
    for (std::size_t m = 0; m < caches.size(); ++m) {
        const std::vector<double> beta = model.beta(m);
        const Eigen::Map<const VectorXd> b(beta.data(), static_cast<Eigen::Index>(beta.size()));
        const SeriesCache& c = caches[m];
        total += c.yty - 2.0 * b.dot(c.xty) + b.dot(c.gram * b);
    }
    return total;
}

} // namespace

void SeriesSet::validate() const {
    if (series.empty()) throw UsageError("SeriesSet: no series");
    for (std::size_t m = 0; m < series.size(); ++m) {
        const Series& s = series[m];
        if (s.x.cols() != p())
            throw UsageError("SeriesSet: series " + std::to_string(m) + " has wrong width");
        if (s.x.rows() != s.y.size() || s.x.rows() == 0)
            throw UsageError("SeriesSet: series " + std::to_string(m) + " has no rows");
    }
}

SeriesSet embed_series(const std::vector<std::vector<double>>& train,
                       const std::vector<std::vector<double>>& holdout,
                       losses::Frequency freq, std::size_t d_x) {
    if (train.empty()) throw UsageError("embed_series: no series");
    if (!holdout.empty() && holdout.size() != train.size())
        throw UsageError("embed_series: holdout count does not match train count");
    if (d_x == 0) throw UsageError("embed_series: d_x must be positive");

    SeriesSet out;
    out.freq = freq;
    out.d_x = d_x;
    const std::size_t period = losses::seasonal_period(freq);
    for (std::size_t m = 0; m < train.size(); ++m) {
        const std::vector<double>& raw = train[m];
        if (raw.size() < d_x + 1)
            throw NumericError("embed_series: series " + std::to_string(m) +
                               " too short to embed with " + std::to_string(d_x) + " lags");
        Series s;
        s.raw = raw;
        s.scale = losses::mase_scale(raw, period).scale;
        s.scaled.resize(raw.size());
        for (std::size_t t = 0; t < raw.size(); ++t) s.scaled[t] = raw[t] / s.scale;
        const std::size_t rows = raw.size() - d_x;
        s.x = Array2(rows, d_x + 1);
        s.y.resize(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t t = d_x + r;
            s.x(r, 0) = 1.0;
            for (std::size_t j = 1; j <= d_x; ++j) s.x(r, j) = s.scaled[t - j];
            s.y[r] = s.scaled[t];
        }
        if (!holdout.empty()) s.holdout = holdout[m];
        out.series.push_back(std::move(s));
    }
    return out;
}

std::vector<std::vector<double>> load_series_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("load_series_csv: cannot open '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t begin = 0;
        while (begin <= line.size()) {
            std::size_t end = line.find(',', begin);
            if (end == std::string::npos) end = line.size();
            const std::string field = line.substr(begin, end - begin);
            char* stop = nullptr;
            const double v = std::strtod(field.c_str(), &stop);
            if (field.empty() || stop != field.c_str() + field.size())
                throw UsageError("load_series_csv: " + path + ":" + std::to_string(lineno) +
                                 ": bad number '" + field + "'");
            row.push_back(v);
            begin = end + 1;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void save_series_csv(const std::string& path, const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw UsageError("save_series_csv: cannot write '" + path + "'");
    out.precision(17);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    }
    if (!out) throw NumericError("save_series_csv: write failed for '" + path + "'");
}

std::vector<double> LinearMtMs::beta_from_theta(const double* theta) const {
    std::vector<double> b = omega_b;
    for (std::size_t i = 0; i < p(); ++i)
        for (std::size_t j = 0; j < d_theta(); ++j) b[i] += omega_w(i, j) * theta[j];
    return b;
}

std::vector<double> LinearMtMs::beta(std::size_t m) const {
    if (m >= thetas.rows()) throw UsageError("LinearMtMs::beta: series index out of range");
    return beta_from_theta(thetas.row(m));
}

AlsResult als_fit(const SeriesSet& data, std::size_t d_theta, std::size_t max_iters,
                  double tol) {
    data.validate();
    const std::size_t p = data.p();
    const std::size_t big_m = data.size();
    if (d_theta > p) throw UsageError("als_fit: d_theta exceeds the coefficient dimension");
    if (max_iters == 0) throw UsageError("als_fit: max_iters must be positive");

    const std::vector<SeriesCache> caches = build_caches(data);
    AlsResult out;
    LinearMtMs& model = out.model;
    FitReport& rep = out.report;

    // PCA of ridge-regularized per-series coefficients seeds the latent basis.
    MatrixXd b(big_m, p);
    for (std::size_t m = 0; m < big_m; ++m) {
        MatrixXd reg = caches[m].gram;
        reg.diagonal().array() += 1e-8;
        b.row(static_cast<Eigen::Index>(m)) = reg.ldlt().solve(caches[m].xty).transpose();
    }
    const VectorXd mean = b.colwise().mean().transpose();
    model.omega_b.assign(mean.data(), mean.data() + p);
    model.omega_w = Array2(p, d_theta);
    model.thetas = Array2(big_m, d_theta);
    if (d_theta > 0) {
        const MatrixXd centered = b.rowwise() - mean.transpose();
        const MatrixXd cov = centered.transpose() * centered / static_cast<double>(big_m);
        const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
        // Eigenvalues ascend; the top d_theta eigenvectors span the latent space.
        for (std::size_t j = 0; j < d_theta; ++j) {
            const Eigen::Index col = static_cast<Eigen::Index>(p - 1 - j);
            for (std::size_t i = 0; i < p; ++i)
                model.omega_w(i, j) = eig.eigenvectors()(static_cast<Eigen::Index>(i), col);
        }
        for (std::size_t m = 0; m < big_m; ++m)
            for (std::size_t j = 0; j < d_theta; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < p; ++i)
                    dot += model.omega_w(i, j) * centered(static_cast<Eigen::Index>(m),
                                                          static_cast<Eigen::Index>(i));
                model.thetas(m, j) = dot;
            }
    }

    const std::size_t vec_dim = p * (d_theta + 1);
    double prev = objective_from_caches(caches, model);
    for (std::size_t iter = 1; iter <= max_iters; ++iter) {
        // omega half-step: normal equations for vec([omega_b omega_w]) built
        // from the cached per-series Grams and the Kronecker structure.
        MatrixXd a = MatrixXd::Zero(vec_dim, vec_dim);
        VectorXd rhs = VectorXd::Zero(vec_dim);
        VectorXd ttheta(d_theta + 1);
        for (std::size_t m = 0; m < big_m; ++m) {
            ttheta(0) = 1.0;
            for (std::size_t j = 0; j < d_theta; ++j)
                ttheta(static_cast<Eigen::Index>(j + 1)) = model.thetas(m, j);
            for (std::size_t i = 0; i <= d_theta; ++i) {
                for (std::size_t j = 0; j <= d_theta; ++j)
                    a.block(static_cast<Eigen::Index>(i * p), static_cast<Eigen::Index>(j * p),
                            static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)) +=
                        ttheta(static_cast<Eigen::Index>(i)) *
                        ttheta(static_cast<Eigen::Index>(j)) * caches[m].gram;
                rhs.segment(static_cast<Eigen::Index>(i * p), static_cast<Eigen::Index>(p)) +=
                    ttheta(static_cast<Eigen::Index>(i)) * caches[m].xty;
            }
        }
        const VectorXd vec_omega = solve_or_ridge(a, rhs, rep.ridge_used);
        for (std::size_t i = 0; i < p; ++i) model.omega_b[i] = vec_omega(static_cast<Eigen::Index>(i));
        for (std::size_t j = 0; j < d_theta; ++j)
            for (std::size_t i = 0; i < p; ++i)
                model.omega_w(i, j) = vec_omega(static_cast<Eigen::Index>((j + 1) * p + i));
        rep.objective.push_back(objective_from_caches(caches, model));

        // theta half-step: exact per-series least squares under frozen omega.
        if (d_theta > 0) {
            const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                 Eigen::RowMajor>>
                w(model.omega_w.data(), static_cast<Eigen::Index>(p),
                  static_cast<Eigen::Index>(d_theta));
            const Eigen::Map<const VectorXd> ob(model.omega_b.data(),
                                                static_cast<Eigen::Index>(p));
            for (std::size_t m = 0; m < big_m; ++m) {
                const MatrixXd s = w.transpose() * caches[m].gram * w;
                const VectorXd r = w.transpose() * (caches[m].xty - caches[m].gram * ob);
                const VectorXd theta = solve_or_ridge(s, r, rep.ridge_used);
                for (std::size_t j = 0; j < d_theta; ++j)
                    model.thetas(m, j) = theta(static_cast<Eigen::Index>(j));
            }
        }
        const double now = objective_from_caches(caches, model);
        rep.objective.push_back(now);
        rep.iterations = iter;
        if (std::abs(prev - now) <= tol * std::max(1.0, std::abs(prev))) {
            rep.converged = true;
            break;
        }
        prev = now;
    }

    // Center thetas; omega_b absorbs the mean so fitted values are unchanged.
    if (d_theta > 0 && big_m > 0) {
        std::vector<double> mean_theta(d_theta, 0.0);
        for (std::size_t m = 0; m < big_m; ++m)
            for (std::size_t j = 0; j < d_theta; ++j) mean_theta[j] += model.thetas(m, j);
        for (double& v : mean_theta) v /= static_cast<double>(big_m);
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < d_theta; ++j)
                model.omega_b[i] += model.omega_w(i, j) * mean_theta[j];
        for (std::size_t m = 0; m < big_m; ++m)
            for (std::size_t j = 0; j < d_theta; ++j) model.thetas(m, j) -= mean_theta[j];
    }
    return out;
}

AdaptSeriesResult adapt_series(const LinearMtMs& model, const Array2& x,
                               const std::vector<double>& y) {
    if (x.rows() == 0) throw UsageError("adapt_series: no rows");
    if (x.cols() != model.p()) throw UsageError("adapt_series: design width mismatch");
    if (y.size() != x.rows()) throw UsageError("adapt_series: target length mismatch");

    AdaptSeriesResult out;
    out.theta.assign(model.d_theta(), 0.0);
    if (model.d_theta() == 0) return out;

    const auto xm = map_of(x);
    const Eigen::Map<const VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>
        w(model.omega_w.data(), static_cast<Eigen::Index>(model.p()),
          static_cast<Eigen::Index>(model.d_theta()));
    const Eigen::Map<const VectorXd> ob(model.omega_b.data(),
                                        static_cast<Eigen::Index>(model.p()));
    const MatrixXd q = xm * w;
    const MatrixXd s = q.transpose() * q;
    const VectorXd r = q.transpose() * (yv - xm * ob);
    const VectorXd theta = solve_or_ridge(s, r, out.ridge_used);
    for (std::size_t j = 0; j < out.theta.size(); ++j)
        out.theta[j] = theta(static_cast<Eigen::Index>(j));
    return out;
}

std::vector<double> forecast_recursive(const std::vector<double>& beta,
                                       const std::vector<double>& history,
                                       std::size_t horizon) {
    if (beta.empty()) throw UsageError("forecast_recursive: empty coefficient vector");
    const std::size_t d_x = beta.size() - 1;
    if (history.size() < d_x)
        throw UsageError("forecast_recursive: history shorter than the lag order");
    // recent[0] is the most recent value.
    std::vector<double> recent(d_x);
    for (std::size_t j = 0; j < d_x; ++j) recent[j] = history[history.size() - 1 - j];
    std::vector<double> out;
    out.reserve(horizon);
    for (std::size_t h = 0; h < horizon; ++h) {
        double v = beta[0];
        for (std::size_t j = 0; j < d_x; ++j) v += beta[j + 1] * recent[j];
        if (!std::isfinite(v)) throw NumericError("forecast_recursive: non-finite forecast");
        if (d_x > 0) {
            for (std::size_t j = d_x; j-- > 1;) recent[j] = recent[j - 1];
            recent[0] = v;
        }
        out.push_back(v);
    }
    return out;
}

double pooled_sse(const LinearMtMs& model, const SeriesSet& data) {
    double total = 0.0;
    for (std::size_t m = 0; m < data.size(); ++m) {
        const std::vector<double> beta = model.beta(m);
        const Series& s = data.series[m];
        for (std::size_t r = 0; r < s.y.size(); ++r) {
            double pred = 0.0;
            for (std::size_t j = 0; j < beta.size(); ++j) pred += s.x(r, j) * beta[j];
            const double d = s.y[r] - pred;
            total += d * d;
        }
    }
    return total;
}

double mean_abs_objective(const LinearMtMs& model, const SeriesSet& data) {
    double total = 0.0;
    for (std::size_t m = 0; m < data.size(); ++m) {
        const std::vector<double> beta = model.beta(m);
        const Series& s = data.series[m];
        double acc = 0.0;
        for (std::size_t r = 0; r < s.y.size(); ++r) {
            double pred = 0.0;
            for (std::size_t j = 0; j < beta.size(); ++j) pred += s.x(r, j) * beta[j];
            acc += std::abs(s.y[r] - pred);
        }
        total += acc / static_cast<double>(s.y.size());
    }
    return total / static_cast<double>(data.size());
}

std::vector<double> mase_finetune(LinearMtMs& model, const SeriesSet& data,
                                  const FineTuneConfig& cfg) {
    data.validate();
    std::vector<double> trace{mean_abs_objective(model, data)};
    if (!cfg.enabled || cfg.steps == 0) return trace;

    const std::size_t p = model.p();
    const std::size_t d_t = model.d_theta();
    const std::size_t big_m = data.size();
    const std::size_t n_params = p + p * d_t + big_m * d_t;

    auto pack = [&]() {
        std::vector<double> v;
        v.reserve(n_params);
        v.insert(v.end(), model.omega_b.begin(), model.omega_b.end());
        v.insert(v.end(), model.omega_w.flat().begin(), model.omega_w.flat().end());
        v.insert(v.end(), model.thetas.flat().begin(), model.thetas.flat().end());
        return v;
    };
    auto unpack = [&](const std::vector<double>& v) {
        std::copy(v.begin(), v.begin() + p, model.omega_b.begin());
        std::copy(v.begin() + p, v.begin() + p + p * d_t, model.omega_w.flat().begin());
        std::copy(v.begin() + p + p * d_t, v.end(), model.thetas.flat().begin());
    };

    std::vector<double> params = pack();
    std::vector<double> best = params;
    double best_obj = trace[0];
    opt::Adam adam(cfg.lr);
    std::vector<double> grad(n_params);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t m = 0; m < big_m; ++m) {
            const std::vector<double> beta = model.beta(m);
            const Series& s = data.series[m];
            const double w = 1.0 / static_cast<double>(big_m * s.y.size());
            std::vector<double> dbeta(p, 0.0);
            for (std::size_t r = 0; r < s.y.size(); ++r) {
                double pred = 0.0;
                for (std::size_t j = 0; j < p; ++j) pred += s.x(r, j) * beta[j];
                const double resid = s.y[r] - pred;
                const double sgn = (resid > 0.0) ? 1.0 : (resid < 0.0 ? -1.0 : 0.0);
                for (std::size_t j = 0; j < p; ++j) dbeta[j] -= w * sgn * s.x(r, j);
            }
            for (std::size_t i = 0; i < p; ++i) {
                grad[i] += dbeta[i];
                for (std::size_t j = 0; j < d_t; ++j)
                    grad[p + i * d_t + j] += dbeta[i] * model.thetas(m, j);
            }
            for (std::size_t j = 0; j < d_t; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < p; ++i) dot += model.omega_w(i, j) * dbeta[i];
                grad[p + p * d_t + m * d_t + j] += dot;
            }
        }
        adam.step(params, grad);
        unpack(params);
        const double obj = mean_abs_objective(model, data);
        trace.push_back(obj);
        if (obj < best_obj) {
            best_obj = obj;
            best = params;
        }
    }
    unpack(best);
    return trace;
}

Array2 series_features(const SeriesSet& data) {
    constexpr std::size_t kAcfLags = 10;
    const std::size_t period = losses::seasonal_period(data.freq);
    Array2 out(data.size(), kAcfLags + 2, 0.0);
    for (std::size_t m = 0; m < data.size(); ++m) {
        const std::vector<double>& v = data.series[m].scaled;
        const std::size_t n = v.size();
        double mean = 0.0;
        for (double t : v) mean += t;
        mean /= static_cast<double>(n);
        double sst = 0.0;
        for (double t : v) sst += (t - mean) * (t - mean);

        for (std::size_t lag = 1; lag <= kAcfLags; ++lag) {
            if (lag >= n || sst == 0.0) continue;
            double num = 0.0;
            for (std::size_t t = lag; t < n; ++t) num += (v[t] - mean) * (v[t - lag] - mean);
            out(m, lag - 1) = num / sst;
        }

        if (sst > 0.0) {
            // Linear trend R^2 via the correlation with the time index.
            const double tn = static_cast<double>(n);
            const double tmean = (tn - 1.0) / 2.0;
            double stt = 0.0, sty = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                const double dt = static_cast<double>(t) - tmean;
                stt += dt * dt;
                sty += dt * (v[t] - mean);
            }
            if (stt > 0.0) out(m, kAcfLags) = (sty * sty) / (stt * sst);

            if (period > 1) {
                // Seasonal-dummy R^2: fitted value is the phase mean.
                std::vector<double> phase_sum(period, 0.0);
                std::vector<std::size_t> phase_n(period, 0);
                for (std::size_t t = 0; t < n; ++t) {
                    phase_sum[t % period] += v[t];
                    ++phase_n[t % period];
                }
                double sse = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    const double fit = phase_sum[t % period] /
                                       static_cast<double>(phase_n[t % period]);
                    sse += (v[t] - fit) * (v[t] - fit);
                }
                out(m, kAcfLags + 1) = 1.0 - sse / sst;
            }
        }
    }
    return out;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

ClusterModel cluster_fit(const SeriesSet& data, std::size_t k, Rng& rng) {
    data.validate();
    const std::size_t big_m = data.size();
    if (k == 0 || k > big_m) throw UsageError("cluster_fit: k must be in [1, series count]");

    // z-scored feature proxies; constant features drop out of the distance.
    Array2 feats = series_features(data);
    const std::size_t nf = feats.cols();
    for (std::size_t j = 0; j < nf; ++j) {
        double mean = 0.0;
        for (std::size_t m = 0; m < big_m; ++m) mean += feats(m, j);
        mean /= static_cast<double>(big_m);
        double var = 0.0;
        for (std::size_t m = 0; m < big_m; ++m) {
            const double d = feats(m, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(big_m);
        const double sd = std::sqrt(var);
        for (std::size_t m = 0; m < big_m; ++m)
            feats(m, j) = sd > 0.0 ? (feats(m, j) - mean) / sd : 0.0;
    }

    ClusterModel best;
    double best_sse = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < 20; ++restart) {
        Rng sub = rng.substream("kmeans_restart", restart);
        std::vector<std::size_t> order(big_m);
        for (std::size_t i = 0; i < big_m; ++i) order[i] = i;
        sub.shuffle(order);
        Array2 centroids(k, nf);
        for (std::size_t c = 0; c < k; ++c)
            std::copy(feats.row(order[c]), feats.row(order[c]) + nf, centroids.row(c));

        std::vector<std::size_t> labels(big_m, 0);
        for (std::size_t iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (std::size_t reseed = 0; reseed <= k; ++reseed) {
                for (std::size_t m = 0; m < big_m; ++m) {
                    std::size_t argc = 0;
                    double bestd = sq_dist(feats.row(m), centroids.row(0), nf);
                    for (std::size_t c = 1; c < k; ++c) {
                        const double d = sq_dist(feats.row(m), centroids.row(c), nf);
                        if (d < bestd) {
                            bestd = d;
                            argc = c;
                        }
                    }
                    if (labels[m] != argc) {
                        labels[m] = argc;
                        changed = true;
                    }
                }
                // Empty clusters grab the point farthest from its centroid.
                std::vector<std::size_t> count(k, 0);
                for (std::size_t m = 0; m < big_m; ++m) ++count[labels[m]];
                std::size_t empty = k;
                for (std::size_t c = 0; c < k; ++c)
                    if (count[c] == 0) {
                        empty = c;
                        break;
                    }
                if (empty == k) break;
                std::size_t far = 0;
                double fard = -1.0;
                for (std::size_t m = 0; m < big_m; ++m) {
                    if (count[labels[m]] <= 1) continue;
                    const double d = sq_dist(feats.row(m), centroids.row(labels[m]), nf);
                    if (d > fard) {
                        fard = d;
                        far = m;
                    }
                }
                std::copy(feats.row(far), feats.row(far) + nf, centroids.row(empty));
                changed = true;
            }
            // Update step: centroids move to the member means.
            Array2 sums(k, nf, 0.0);
            std::vector<std::size_t> count(k, 0);
            for (std::size_t m = 0; m < big_m; ++m) {
                ++count[labels[m]];
                for (std::size_t j = 0; j < nf; ++j) sums(labels[m], j) += feats(m, j);
            }
            for (std::size_t c = 0; c < k; ++c) {
                if (count[c] == 0) continue;
                for (std::size_t j = 0; j < nf; ++j)
                    centroids(c, j) = sums(c, j) / static_cast<double>(count[c]);
            }
            if (!changed) break;
        }

        double sse = 0.0;
        for (std::size_t m = 0; m < big_m; ++m)
            sse += sq_dist(feats.row(m), centroids.row(labels[m]), nf);
        if (sse < best_sse) {
            best_sse = sse;
            best.centroids = centroids;
            best.labels = labels;
            best.feature_sse = sse;
        }
    }

    // Pooled OLS inside each cluster from the cached Grams.
    const std::vector<SeriesCache> caches = build_caches(data);
    const std::size_t p = data.p();
    best.coeffs = Array2(k, p);
    for (std::size_t c = 0; c < k; ++c) {
        MatrixXd a = MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
        VectorXd rhs = VectorXd::Zero(static_cast<Eigen::Index>(p));
        for (std::size_t m = 0; m < big_m; ++m) {
            if (best.labels[m] != c) continue;
            a += caches[m].gram;
            rhs += caches[m].xty;
        }
        const VectorXd w = solve_or_ridge(a, rhs, best.ridge_used);
        for (std::size_t j = 0; j < p; ++j) best.coeffs(c, j) = w(static_cast<Eigen::Index>(j));
    }
    return best;
}

double cluster_sse(const ClusterModel& model, const SeriesSet& data) {
    if (model.labels.size() != data.size())
        throw UsageError("cluster_sse: model fit on a different series count");
    double total = 0.0;
    for (std::size_t m = 0; m < data.size(); ++m) {
        const Series& s = data.series[m];
        const double* beta = model.coeffs.row(model.labels[m]);
        for (std::size_t r = 0; r < s.y.size(); ++r) {
            double pred = 0.0;
            for (std::size_t j = 0; j < data.p(); ++j) pred += s.x(r, j) * beta[j];
            const double d = s.y[r] - pred;
            total += d * d;
        }
    }
    return total;
}

} // namespace mtms::lin
