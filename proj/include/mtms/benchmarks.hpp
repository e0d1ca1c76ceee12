#pragma once
// End-to-end experiment drivers: few-shot sinusoidal regression, a synthetic
// heterogeneous forecasting comparison (pooled vs clustered vs per-series
// localization), the full synthetic quintile pipeline, and the portfolio
// scaling study. Every driver is bit-reproducible from (seed, config);
// runtimes go to stdout only, never into output files.

#include "mtms/linear_mtms.hpp"
#include "mtms/mtms.hpp"
#include "mtms/portfolio.hpp"
#include "mtms/quintile.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mtms::bench {

struct BenchmarkReport {
    std::string method;
    double metric_mean = 0.0;
    double ci_half = 0.0;            // 1.96 * SE over per-task losses
    std::vector<double> per_task;
    double runtime_seconds = 0.0;    // reported to stdout, excluded from files
    std::uint64_t seed = 0;
};

// Mean and 1.96*SE over the given per-task losses.
BenchmarkReport make_report(const std::string& method,
                            const std::vector<double>& per_task, std::uint64_t seed);

// CSV: method,metric_mean,ci_half,n_tasks,seed. JSON mirrors it.
void save_report_csv(const std::string& path, const std::vector<BenchmarkReport>& reports);
void save_report_json(const std::string& path, const std::vector<BenchmarkReport>& reports);
// CSV: method,task,loss — one row per task per method.
void save_per_task_csv(const std::string& path, const std::vector<BenchmarkReport>& reports);

// ---- Few-shot sinusoidal regression -----------------------------------------

struct SineConfig {
    std::size_t k = 5;                    // adaptation points per task
    std::size_t train_tasks = 1000;
    std::size_t eval_tasks = 600;
    std::size_t val_points = 100;         // held-out points per eval task
    std::size_t d_theta = 2;
    std::vector<std::size_t> hidden{40, 40};
    std::uint64_t seed = 1;
    std::size_t threads = 0;
    // Adadelta's step size is pinned near lr * sqrt(eps) whatever the gradient
    // scale, so after joint training the mesa rows are rescaled (an exact
    // reparameterization) to this RMS to keep new-task optima reachable.
    double mesa_target_rms = 2e-4;
    Phase1Config phase1;
    Phase2Config phase2;
    AdaptConfig adapt;

    SineConfig() {
        phase1.max_epochs = 200;
        phase1.patience = 20;
        phase2.ladder = {0.001};          // joint training: plain Adam
        phase2.batch_tasks = 100;
        phase2.max_epochs = 3000;         // mesa rows see one update per epoch
        phase2.patience = 300;
        phase2.val_fraction = 0.0;        // k points per task are too few to split
        adapt.restart_scale = 3.0 * mesa_target_rms;
    }
};

// Amplitude ~ U(0.1, 5), phase ~ U(0, pi), inputs ~ U(-5, 5),
// y = amplitude * sin(x + phase). First k rows adapt, the rest evaluate.
struct SineTaskData {
    double amplitude = 0.0;
    double phase = 0.0;
    Task task;
};

SineTaskData make_sine_task(Rng& rng, std::size_t k, std::size_t val_points);

// Mean squared error of predictions on the task's evaluation rows.
double sine_val_mse(const Task& task, const Array2& predictions);

struct SineRun {
    MtMsModel model;
    BenchmarkReport report;               // per-eval-task val MSE
    Array2 eval_thetas;                   // eval_tasks × d_theta, adapted
    std::vector<double> eval_amplitudes;
    std::vector<double> eval_phases;
};

SineRun run_sinusoidal(const SineConfig& cfg);

// Prediction curves on an x grid over [-5, 5] with one mesa component varied
// and the other held fixed.
struct MesaSweep {
    std::size_t varied = 0;
    std::vector<double> theta_values;
    std::vector<double> x;                // x_points values
    Array2 curves;                        // theta_values.size() × x_points
};

MesaSweep sweep_mesa(const MtMsModel& model, std::size_t varied,
                     const std::vector<double>& theta_values, double fixed_value,
                     std::size_t x_points = 201);

// CSV: theta,x,prediction — one row per grid point.
void save_sweep_csv(const std::string& path, const MesaSweep& sweep);

// ---- Synthetic heterogeneous forecasting comparison -------------------------

// M4-convention forecast horizons per sampling frequency.
std::size_t forecast_horizon(losses::Frequency freq);

struct M4LikeConfig {
    std::size_t n_series = 200;
    losses::Frequency freq = losses::Frequency::quarterly;
    std::size_t min_train_len = 40;       // series lengths drawn uniformly
    std::size_t max_train_len = 80;
    std::size_t d_x = 4;
    double seasonal_fraction = 0.5;       // mix of the two generating families
    std::vector<std::size_t> d_theta_grid{0, 1, 2};
    std::vector<std::size_t> k_grid{2, 4};
    std::uint64_t seed = 2;
};

struct M4LikeData {
    std::vector<std::vector<double>> train;
    std::vector<std::vector<double>> holdout;   // horizon values each
    std::vector<int> family;                    // 0 = AR(1), 1 = seasonal
};

// Two-family synthetic panel: persistent AR(1) levels and seasonal-dummy
// series, both positive, ragged lengths.
M4LikeData make_m4like_data(const M4LikeConfig& cfg, Rng& rng);

struct M4LikeRun {
    std::vector<BenchmarkReport> reports;  // pooled, cluster-k*, mtms-d*
    std::size_t skipped_series = 0;        // too short to embed or forecast
};

M4LikeRun run_m4like(const M4LikeConfig& cfg);

// ---- Synthetic quintile pipeline --------------------------------------------

struct QuintileBenchConfig {
    std::size_t n_assets = 1000;
    std::size_t n_weeks = 120;
    std::size_t train_weeks = 100;
    quintile::MarketConfig market;        // default: vol-heterogeneous
    std::size_t d_theta = 2;
    std::vector<std::size_t> hidden{16};
    std::uint64_t seed = 3;
    std::size_t threads = 0;
    Phase1Config phase1;
    Phase2Config phase2;

    QuintileBenchConfig() {
        phase1.lr = 0.001;        // the vol signal is subtle; coarse steps overshoot
        phase1.max_epochs = 150;
        phase1.patience = 15;
        phase2.batch_tasks = 100;
        phase2.max_epochs = 200;
        phase2.patience = 20;
    }

    // Removes every volatility asymmetry the features could pick up.
    void make_vol_homogeneous() {
        market.vol_heterogeneity = 0.0;
        market.vol_shock = 0.0;
        market.etf_vol_factor = 1.0;
    }
};

struct QuintileRun {
    MtMsModel model;
    quintile::EvalReport eval;            // aggregate and per-interval RPS
    BenchmarkReport report;               // per scored row RPS
    double scatter_correlation = 0.0;     // corr(P(q1), P(q5)) across rows
};

QuintileRun run_quintile(const QuintileBenchConfig& cfg);

// ---- Portfolio scaling study -------------------------------------------------

struct ScalingBenchConfig {
    std::size_t paths = 1000;
    std::size_t rounds = 12;
    double market_drift = 0.002;
    double market_vol = 0.015;
    double asset_vol = 0.1;
    std::size_t n_positions = 100;
    double magnitude = 0.0025;            // |w| per position, fully long book
    std::vector<double> alpha_grid;       // default 0.05, 0.10, ..., 1.0
    std::uint64_t seed = 4;
    std::size_t threads = 0;
};

struct ScalingRun {
    std::vector<double> alpha;
    std::vector<double> mean_ir;          // per grid point, averaged over paths
    double slope = 0.0;                   // least-squares fit of the mean curve
    double intercept = 0.0;
    double mean_curve_r2 = 0.0;
    std::size_t quarter_wins = 0;         // paths with IR(0.25) > IR(1.0)
    std::size_t per_path_r2_ok = 0;       // paths whose own fit has R2 >= 0.99
    std::size_t paths = 0;
    double runtime_seconds = 0.0;
};

ScalingRun run_portfolio_scaling(const ScalingBenchConfig& cfg);

// CSV: alpha,mean_ir — one row per grid point.
void save_scaling_csv(const std::string& path, const ScalingRun& run);

} // namespace mtms::bench
