#include "mtms/benchmarks.hpp"

#include "mtms/errors.hpp"
#include "mtms/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace mtms::bench {

namespace {

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

double sample_std(const std::vector<double>& x) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double acc = 0.0;
    for (double v : x) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / static_cast<double>(x.size() - 1));
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    LineFit f;
    const double denom = n * sxx - sx * sx;
    f.slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
    f.intercept = (sy - f.slope * sx) / n;
    double sse = 0.0, sst = 0.0;
    const double ybar = sy / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double fit = f.intercept + f.slope * x[i];
        sse += (y[i] - fit) * (y[i] - fit);
        sst += (y[i] - ybar) * (y[i] - ybar);
    }
    f.r2 = sst > 0.0 ? 1.0 - sse / sst : 1.0;
    return f;
}

std::ofstream open_out(const std::string& path, const char* who) {
    std::ofstream out(path);
    if (!out) throw UsageError(std::string(who) + ": cannot open " + path);
    out << std::setprecision(17);
    return out;
}

} // namespace

BenchmarkReport make_report(const std::string& method,
                            const std::vector<double>& per_task, std::uint64_t seed) {
    if (per_task.empty()) throw UsageError("make_report: no per-task losses");
    BenchmarkReport r;
    r.method = method;
    r.per_task = per_task;
    r.seed = seed;
    r.metric_mean = std::accumulate(per_task.begin(), per_task.end(), 0.0) /
                    static_cast<double>(per_task.size());
    if (per_task.size() > 1) {
        const double se = sample_std(per_task) / std::sqrt(static_cast<double>(per_task.size()));
        r.ci_half = 1.96 * se;
    }
    return r;
}

void save_report_csv(const std::string& path, const std::vector<BenchmarkReport>& reports) {
    auto out = open_out(path, "save_report_csv");
    out << "method,metric_mean,ci_half,n_tasks,seed\n";
    for (const auto& r : reports)
        out << r.method << ',' << r.metric_mean << ',' << r.ci_half << ','
            << r.per_task.size() << ',' << r.seed << '\n';
    if (!out) throw UsageError("save_report_csv: write failed for " + path);
}

void save_report_json(const std::string& path, const std::vector<BenchmarkReport>& reports) {
    nlohmann::json doc;
    for (const auto& r : reports) {
        nlohmann::json entry;
        entry["metric_mean"] = r.metric_mean;
        entry["ci_half"] = r.ci_half;
        entry["n_tasks"] = r.per_task.size();
        entry["seed"] = r.seed;
        doc[r.method] = std::move(entry);
    }
    auto out = open_out(path, "save_report_json");
    out << doc.dump(2) << '\n';
    if (!out) throw UsageError("save_report_json: write failed for " + path);
}

void save_per_task_csv(const std::string& path, const std::vector<BenchmarkReport>& reports) {
    auto out = open_out(path, "save_per_task_csv");
    out << "method,task,loss\n";
    for (const auto& r : reports)
        for (std::size_t i = 0; i < r.per_task.size(); ++i)
            out << r.method << ',' << i << ',' << r.per_task[i] << '\n';
    if (!out) throw UsageError("save_per_task_csv: write failed for " + path);
}

// ---- Few-shot sinusoidal regression -----------------------------------------

SineTaskData make_sine_task(Rng& rng, std::size_t k, std::size_t val_points) {
    if (k == 0) throw UsageError("make_sine_task: k must be positive");
    SineTaskData td;
    td.amplitude = rng.uniform(0.1, 5.0);
    td.phase = rng.uniform(0.0, 3.14159265358979323846);
    const std::size_t rows = k + val_points;
    td.task.x = Array2(rows, 1);
    td.task.y = Array2(rows, 1);
    td.task.train_rows = k;
    for (std::size_t i = 0; i < rows; ++i) {
        const double x = rng.uniform(-5.0, 5.0);
        td.task.x(i, 0) = x;
        td.task.y(i, 0) = td.amplitude * std::sin(x + td.phase);
    }
    return td;
}

double sine_val_mse(const Task& task, const Array2& predictions) {
    const std::size_t v = task.val_rows();
    if (v == 0) throw UsageError("sine_val_mse: task has no evaluation rows");
    if (predictions.rows() != v || predictions.cols() != task.y.cols())
        throw UsageError("sine_val_mse: prediction shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
        const double d = predictions(i, 0) - task.y(task.train_rows + i, 0);
        acc += d * d;
    }
    return acc / static_cast<double>(v);
}

SineRun run_sinusoidal(const SineConfig& cfg) {
    const double t0 = now_seconds();
    Rng root(cfg.seed);

    nn::MlpSpec base;
    base.layer_sizes.push_back(1);
    for (std::size_t h : cfg.hidden) base.layer_sizes.push_back(h);
    base.layer_sizes.push_back(1);
    base.activation = nn::Activation::relu;
    base.validate();

    Rng train_rng = root.substream("train_tasks");
    TaskBundle bundle;
    bundle.tasks.reserve(cfg.train_tasks);
    for (std::size_t m = 0; m < cfg.train_tasks; ++m) {
        Rng tr = train_rng.substream("task", m);
        bundle.tasks.push_back(std::move(make_sine_task(tr, cfg.k, 0).task));
    }
    bundle.validate();

    Rng p1_rng = root.substream("phase1");
    const Phase1Result ph1 = train_phase1(bundle, base, LossKind::mse, cfg.phase1, p1_rng);

    Rng make_rng = root.substream("make");
    SineRun run;
    run.model = make_mtms(base, cfg.d_theta, Connection::final_layer(base), ph1.beta,
                          bundle.size(), make_rng);

    Rng p2_rng = root.substream("phase2");
    train_phase2(bundle, run.model, LossKind::mse, cfg.phase2, p2_rng);

    if (cfg.mesa_target_rms > 0.0) {
        double ms = 0.0;
        for (double v : run.model.mesa.flat()) ms += v * v;
        ms = std::sqrt(ms / static_cast<double>(run.model.mesa.size()));
        if (ms > cfg.mesa_target_rms) rescale_mesa(run.model, ms / cfg.mesa_target_rms);
    }

    Rng eval_rng = root.substream("eval_tasks");
    std::vector<SineTaskData> eval_tasks;
    eval_tasks.reserve(cfg.eval_tasks);
    for (std::size_t m = 0; m < cfg.eval_tasks; ++m) {
        Rng er = eval_rng.substream("task", m);
        eval_tasks.push_back(make_sine_task(er, cfg.k, cfg.val_points));
    }

    std::vector<double> mses(cfg.eval_tasks, 0.0);
    run.eval_thetas = Array2(cfg.eval_tasks, cfg.d_theta);
    Rng adapt_root = root.substream("adapt");
    const MtMsModel& model = run.model;
    parallel_for(cfg.eval_tasks, [&](std::size_t i) {
        const Task& task = eval_tasks[i].task;
        if (task.train_rows != cfg.k)
            throw NumericError("run_sinusoidal: adaptation row count drifted");
        Rng ar = adapt_root.substream("task", i);
        const AdaptResult res = adapt_new_task(model, task, LossKind::mse, cfg.adapt, ar);
        Array2 val_x(task.val_rows(), 1);
        for (std::size_t r = 0; r < task.val_rows(); ++r)
            val_x(r, 0) = task.x(task.train_rows + r, 0);
        const Array2 pred = model.predict_theta(res.theta.data(), val_x);
        mses[i] = sine_val_mse(task, pred);
        for (std::size_t d = 0; d < cfg.d_theta; ++d) run.eval_thetas(i, d) = res.theta[d];
    }, cfg.threads);

    run.report = make_report("sin-k" + std::to_string(cfg.k), mses, cfg.seed);
    run.eval_amplitudes.reserve(cfg.eval_tasks);
    run.eval_phases.reserve(cfg.eval_tasks);
    for (const auto& td : eval_tasks) {
        run.eval_amplitudes.push_back(td.amplitude);
        run.eval_phases.push_back(td.phase);
    }
    run.report.runtime_seconds = now_seconds() - t0;
    return run;
}

MesaSweep sweep_mesa(const MtMsModel& model, std::size_t varied,
                     const std::vector<double>& theta_values, double fixed_value,
                     std::size_t x_points) {
    if (model.d_theta == 0) throw UsageError("sweep_mesa: model has no mesa parameters");
    if (varied >= model.d_theta) throw UsageError("sweep_mesa: varied index out of range");
    if (theta_values.empty()) throw UsageError("sweep_mesa: empty theta grid");
    if (x_points < 2) throw UsageError("sweep_mesa: need at least two x points");

    MesaSweep sweep;
    sweep.varied = varied;
    sweep.theta_values = theta_values;
    sweep.x.resize(x_points);
    for (std::size_t i = 0; i < x_points; ++i)
        sweep.x[i] = -5.0 + 10.0 * static_cast<double>(i) / static_cast<double>(x_points - 1);

    Array2 grid(x_points, 1);
    for (std::size_t i = 0; i < x_points; ++i) grid(i, 0) = sweep.x[i];

    sweep.curves = Array2(theta_values.size(), x_points);
    std::vector<double> theta(model.d_theta, fixed_value);
    for (std::size_t t = 0; t < theta_values.size(); ++t) {
        theta.assign(model.d_theta, fixed_value);
        theta[varied] = theta_values[t];
        const Array2 pred = model.predict_theta(theta.data(), grid);
        for (std::size_t i = 0; i < x_points; ++i) sweep.curves(t, i) = pred(i, 0);
    }
    return sweep;
}

void save_sweep_csv(const std::string& path, const MesaSweep& sweep) {
    auto out = open_out(path, "save_sweep_csv");
    out << "theta,x,prediction\n";
    for (std::size_t t = 0; t < sweep.theta_values.size(); ++t)
        for (std::size_t i = 0; i < sweep.x.size(); ++i)
            out << sweep.theta_values[t] << ',' << sweep.x[i] << ','
                << sweep.curves(t, i) << '\n';
    if (!out) throw UsageError("save_sweep_csv: write failed for " + path);
}

// ---- Synthetic heterogeneous forecasting comparison -------------------------

std::size_t forecast_horizon(losses::Frequency freq) {
    switch (freq) {
        case losses::Frequency::yearly: return 6;
        case losses::Frequency::quarterly: return 8;
        case losses::Frequency::monthly: return 18;
        case losses::Frequency::weekly: return 13;
    }
    throw UsageError("forecast_horizon: unknown frequency");
}

M4LikeData make_m4like_data(const M4LikeConfig& cfg, Rng& rng) {
    if (cfg.min_train_len > cfg.max_train_len)
        throw UsageError("make_m4like_data: min_train_len > max_train_len");
    const std::size_t h = forecast_horizon(cfg.freq);
    const std::size_t period = losses::seasonal_period(cfg.freq);

    M4LikeData data;
    data.train.reserve(cfg.n_series);
    data.holdout.reserve(cfg.n_series);
    data.family.reserve(cfg.n_series);
    Rng series_rng = rng.substream("series");
    for (std::size_t s = 0; s < cfg.n_series; ++s) {
        Rng sr = series_rng.substream("series", s);
        const std::size_t len = cfg.min_train_len +
            sr.uniform_below(cfg.max_train_len - cfg.min_train_len + 1);
        const bool seasonal = sr.uniform() < cfg.seasonal_fraction;
        const double level = sr.uniform(20.0, 80.0);
        std::vector<double> y;
        y.reserve(len + h);
        if (!seasonal) {
            const double phi = sr.uniform(0.6, 0.95);
            const double sigma = sr.uniform(0.5, 2.0);
            double prev = level;
            for (std::size_t t = 0; t < len + h; ++t) {
                prev = level * (1.0 - phi) + phi * prev + sigma * sr.normal();
                y.push_back(prev);
            }
        } else {
            const double amp = sr.uniform(4.0, 12.0);
            std::vector<double> pattern(period);
            double pattern_mean = 0.0;
            for (double& v : pattern) {
                v = sr.uniform(-amp, amp);
                pattern_mean += v;
            }
            pattern_mean /= static_cast<double>(period);
            for (double& v : pattern) v -= pattern_mean;
            const double sigma = sr.uniform(0.3, 1.0);
            for (std::size_t t = 0; t < len + h; ++t)
                y.push_back(level + pattern[t % period] + sigma * sr.normal());
        }
        data.train.emplace_back(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(len));
        data.holdout.emplace_back(y.begin() + static_cast<std::ptrdiff_t>(len), y.end());
        data.family.push_back(seasonal ? 1 : 0);
    }
    return data;
}

namespace {

// Scaled recursive forecast mapped back to the raw level.
std::vector<double> forecast_raw(const std::vector<double>& beta, const lin::Series& s,
                                 std::size_t horizon) {
    std::vector<double> pred = lin::forecast_recursive(beta, s.scaled, horizon);
    for (double& v : pred) v *= s.scale;
    return pred;
}

std::vector<double> mase_per_series(const lin::SeriesSet& set,
                                    const std::vector<std::vector<double>>& betas,
                                    std::size_t period, std::size_t horizon) {
    std::vector<double> out(set.size());
    for (std::size_t m = 0; m < set.size(); ++m) {
        const lin::Series& s = set.series[m];
        const losses::MaseScale scale = losses::mase_scale(s.raw, period);
        const std::vector<double> pred = forecast_raw(betas[m], s, horizon);
        out[m] = losses::mase(pred, s.holdout, scale);
    }
    return out;
}

} // namespace

M4LikeRun run_m4like(const M4LikeConfig& cfg) {
    const double t0 = now_seconds();
    Rng root(cfg.seed);
    Rng data_rng = root.substream("data");
    M4LikeData data = make_m4like_data(cfg, data_rng);

    const std::size_t h = forecast_horizon(cfg.freq);
    const std::size_t period = losses::seasonal_period(cfg.freq);

    M4LikeRun run;
    std::vector<std::vector<double>> train, holdout;
    for (std::size_t s = 0; s < data.train.size(); ++s) {
        if (data.train[s].size() < cfg.d_x + h) {
            std::fprintf(stderr,
                         "run_m4like: skipping series %zu (length %zu < %zu)\n",
                         s, data.train[s].size(), cfg.d_x + h);
            ++run.skipped_series;
            continue;
        }
        train.push_back(data.train[s]);
        holdout.push_back(data.holdout[s]);
    }
    if (train.empty()) throw NumericError("run_m4like: every series was skipped");

    const lin::SeriesSet set = lin::embed_series(train, holdout, cfg.freq, cfg.d_x);
    const std::size_t M = set.size();

    // Pooled: one global coefficient vector.
    {
        const lin::AlsResult pooled = lin::als_fit(set, 0);
        std::vector<std::vector<double>> betas(M, pooled.model.beta(0));
        run.reports.push_back(make_report(
            "pooled", mase_per_series(set, betas, period, h), cfg.seed));
    }

    // Clustered: pooled fits within k-means groups of series features.
    for (std::size_t k : cfg.k_grid) {
        Rng crng = root.substream("cluster", k);
        const lin::ClusterModel cm = lin::cluster_fit(set, k, crng);
        std::vector<std::vector<double>> betas(M);
        for (std::size_t m = 0; m < M; ++m) {
            betas[m].resize(set.p());
            for (std::size_t j = 0; j < set.p(); ++j)
                betas[m][j] = cm.coeffs(cm.labels[m], j);
        }
        run.reports.push_back(make_report(
            "cluster-k" + std::to_string(k), mase_per_series(set, betas, period, h),
            cfg.seed));
    }

    // Localized: alternating least squares over a shared affine map.
    for (std::size_t d : cfg.d_theta_grid) {
        const lin::AlsResult als = lin::als_fit(set, d);
        std::vector<std::vector<double>> betas(M);
        for (std::size_t m = 0; m < M; ++m) betas[m] = als.model.beta(m);
        run.reports.push_back(make_report(
            "mtms-d" + std::to_string(d), mase_per_series(set, betas, period, h),
            cfg.seed));
    }

    const double elapsed = now_seconds() - t0;
    for (auto& r : run.reports) r.runtime_seconds = elapsed;
    return run;
}

// ---- Synthetic quintile pipeline --------------------------------------------

QuintileRun run_quintile(const QuintileBenchConfig& cfg) {
    const double t0 = now_seconds();
    Rng root(cfg.seed);

    quintile::Market market = quintile::synth_market(
        cfg.n_assets, cfg.n_weeks, root.substream("market").next_u64(), cfg.market);
    if (cfg.n_assets > 100) {
        std::vector<std::size_t> extras(cfg.n_assets - 100);
        std::iota(extras.begin(), extras.end(), 100);
        Rng urng = root.substream("universes");
        for (auto& u : quintile::augment_universes(extras, urng))
            market.universes.push_back(std::move(u));
    }

    const auto grids = quintile::augment_time_shift(cfg.n_weeks, 28);
    const quintile::FeatureTable table =
        quintile::build_features(market, grids, cfg.train_weeks);
    TaskBundle bundle = quintile::bundle_from_table(table);

    nn::MlpSpec base;
    base.layer_sizes.push_back(quintile::kFeatureDim);
    for (std::size_t hdim : cfg.hidden) base.layer_sizes.push_back(hdim);
    base.layer_sizes.push_back(losses::kQuintiles);
    base.output_transform = nn::OutputTransform::softmax;
    base.validate();

    Rng p1_rng = root.substream("phase1");
    const Phase1Result ph1 = train_phase1(bundle, base, LossKind::rps, cfg.phase1, p1_rng);

    Rng make_rng = root.substream("make");
    QuintileRun run;
    run.model = make_mtms(base, cfg.d_theta, Connection::final_layer(base), ph1.beta,
                          bundle.size(), make_rng);
    run.model.norm = table.norm_stats();

    Rng p2_rng = root.substream("phase2");
    train_phase2(bundle, run.model, LossKind::rps, cfg.phase2, p2_rng);

    const std::vector<std::size_t> rows = quintile::primary_test_rows(table);
    if (rows.empty()) throw NumericError("run_quintile: no held-out primary intervals");
    const Array2 preds = quintile::predict_rows(run.model, table, rows);
    run.eval = quintile::evaluate_rps(preds, table, rows);

    std::vector<double> per_row(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        per_row[i] = losses::rps(preds.row(i), table.labels.row(rows[i]));
    run.report = make_report("quintile-rps", per_row, cfg.seed);

    // Diagonal pattern: P(q1) and P(q5) rise together across assets when the
    // model is shaping distributions by volatility.
    const std::size_t n = run.eval.scatter.rows();
    double m1 = 0.0, m5 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        m1 += run.eval.scatter(i, 0);
        m5 += run.eval.scatter(i, 1);
    }
    m1 /= static_cast<double>(n);
    m5 /= static_cast<double>(n);
    double c15 = 0.0, v1 = 0.0, v5 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d1 = run.eval.scatter(i, 0) - m1;
        const double d5 = run.eval.scatter(i, 1) - m5;
        c15 += d1 * d5;
        v1 += d1 * d1;
        v5 += d5 * d5;
    }
    run.scatter_correlation = (v1 > 0.0 && v5 > 0.0) ? c15 / std::sqrt(v1 * v5) : 0.0;

    run.report.runtime_seconds = now_seconds() - t0;
    return run;
}

// ---- Portfolio scaling study -------------------------------------------------

ScalingRun run_portfolio_scaling(const ScalingBenchConfig& cfg) {
    const double t0 = now_seconds();
    if (cfg.paths == 0) throw UsageError("run_portfolio_scaling: paths must be positive");
    std::vector<double> grid = cfg.alpha_grid;
    if (grid.empty())
        for (int i = 1; i <= 20; ++i) grid.push_back(0.05 * i);

    const double gross = cfg.magnitude * static_cast<double>(cfg.n_positions);
    const double idio =
        cfg.magnitude * std::sqrt(static_cast<double>(cfg.n_positions)) * cfg.asset_vol;
    const std::vector<double> w_tilde{1.0};

    Rng root(cfg.seed);
    Rng market = root.substream("scale_market");
    Array2 irs(cfg.paths, grid.size());
    std::vector<std::uint8_t> win(cfg.paths, 0), fit_ok(cfg.paths, 0);
    parallel_for(cfg.paths, [&](std::size_t p) {
        Rng pr = market.substream("path", p);
        Array2 rr(cfg.rounds, 1);
        for (std::size_t t = 0; t < cfg.rounds; ++t) {
            const double f = cfg.market_drift + cfg.market_vol * pr.normal();
            rr(t, 0) = gross * f + idio * pr.normal();
        }
        const auto curve = portfolio::scaling_curve(w_tilde, rr, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) irs(p, i) = curve.ir[i];
        const auto ends = portfolio::scaling_curve(w_tilde, rr, {0.25, 1.0});
        win[p] = ends.ir[0] > ends.ir[1] ? 1 : 0;
        fit_ok[p] = curve.r2 >= 0.99 ? 1 : 0;
    }, cfg.threads);

    ScalingRun run;
    run.alpha = grid;
    run.paths = cfg.paths;
    run.mean_ir.assign(grid.size(), 0.0);
    for (std::size_t p = 0; p < cfg.paths; ++p) {
        run.quarter_wins += win[p];
        run.per_path_r2_ok += fit_ok[p];
        for (std::size_t i = 0; i < grid.size(); ++i) run.mean_ir[i] += irs(p, i);
    }
    for (double& v : run.mean_ir) v /= static_cast<double>(cfg.paths);
    const LineFit fit = fit_line(grid, run.mean_ir);
    run.slope = fit.slope;
    run.intercept = fit.intercept;
    run.mean_curve_r2 = fit.r2;
    run.runtime_seconds = now_seconds() - t0;
    return run;
}

void save_scaling_csv(const std::string& path, const ScalingRun& run) {
    auto out = open_out(path, "save_scaling_csv");
    out << "alpha,mean_ir\n";
    for (std::size_t i = 0; i < run.alpha.size(); ++i)
        out << run.alpha[i] << ',' << run.mean_ir[i] << '\n';
    if (!out) throw UsageError("save_scaling_csv: write failed for " + path);
}

} // namespace mtms::bench
