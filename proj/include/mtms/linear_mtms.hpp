#pragma once
// Linear specialization of the hypernetwork: per-series coefficients
// beta^(m) = omega_b + omega_w * theta^(m) fitted by alternating least
// squares, both closed-form endpoints (pooled and per-series OLS), recursive
// forecasting, an L1 fine-tuning stage, and a k-means localization baseline.

#include "mtms/array2.hpp"
#include "mtms/losses.hpp"
#include "mtms/rng.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace mtms::lin {

struct Series {
    std::vector<double> raw;       // training segment as given
    std::vector<double> scaled;    // raw divided by the seasonal-naive scale
    std::vector<double> holdout;   // raw evaluation segment, may be empty
    double scale = 1.0;
    Array2 x;                      // rows × (d_x + 1): [1, y_{t-1}, ..., y_{t-d_x}]
    std::vector<double> y;         // scaled one-step targets aligned with x
};

struct SeriesSet {
    losses::Frequency freq = losses::Frequency::yearly;
    std::size_t d_x = 0;
    std::vector<Series> series;

    std::size_t size() const { return series.size(); }
    std::size_t p() const { return d_x + 1; }
    void validate() const;
};

// Scales each training series by its seasonal-naive scale, then lag-embeds.
// Throws NumericError for series too short to embed or to compute the scale.
SeriesSet embed_series(const std::vector<std::vector<double>>& train,
                       const std::vector<std::vector<double>>& holdout,
                       losses::Frequency freq, std::size_t d_x);

// One series per row, comma-separated, ragged lengths allowed.
std::vector<std::vector<double>> load_series_csv(const std::string& path);
void save_series_csv(const std::string& path,
                     const std::vector<std::vector<double>>& rows);

struct LinearMtMs {
    std::vector<double> omega_b;   // p
    Array2 omega_w;                // p × d_theta
    Array2 thetas;                 // M × d_theta

    std::size_t p() const { return omega_b.size(); }
    std::size_t d_theta() const { return omega_w.cols(); }
    std::vector<double> beta_from_theta(const double* theta) const;
    std::vector<double> beta(std::size_t m) const;
};

struct FitReport {
    std::vector<double> objective; // pooled squared error after every half-step
    std::size_t iterations = 0;
    bool converged = false;
    bool ridge_used = false;
};

struct AlsResult {
    LinearMtMs model;
    FitReport report;
};

// Alternates the closed-form omega and theta solves from a PCA start until
// the relative objective change drops below tol. Thetas are centered to mean
// zero afterwards (pure re-identification; fitted values unchanged).
AlsResult als_fit(const SeriesSet& data, std::size_t d_theta,
                  std::size_t max_iters = 500, double tol = 1e-10);

struct AdaptSeriesResult {
    std::vector<double> theta;
    bool ridge_used = false;
};

// Exact least-squares theta for a new series under frozen omega_b/omega_w.
AdaptSeriesResult adapt_series(const LinearMtMs& model, const Array2& x,
                               const std::vector<double>& y);

// h-step-ahead forecasts feeding each prediction back as lag 1.
// beta = (intercept, lag-1 coeff, ..., lag-d_x coeff); history is
// chronological and must hold at least d_x values.
std::vector<double> forecast_recursive(const std::vector<double>& beta,
                                       const std::vector<double>& history,
                                       std::size_t horizon);

// Pooled squared error of the fitted model, computed directly from the rows.
double pooled_sse(const LinearMtMs& model, const SeriesSet& data);

// Mean over series of mean absolute scaled one-step error (the in-sample
// analogue of MASE given unit scales after preprocessing).
double mean_abs_objective(const LinearMtMs& model, const SeriesSet& data);

struct FineTuneConfig {
    bool enabled = true;
    std::size_t steps = 200;
    double lr = 0.001;
};

// Gradient fine-tuning of (omega_b, omega_w, thetas) under the mean absolute
// error objective, with best-restore. Returns the objective trace (first
// entry is the starting objective).
std::vector<double> mase_finetune(LinearMtMs& model, const SeriesSet& data,
                                  const FineTuneConfig& cfg);

struct ClusterModel {
    Array2 centroids;                 // k × n_features, z-scored space
    std::vector<std::size_t> labels;  // per series
    Array2 coeffs;                    // k × p pooled OLS per cluster
    double feature_sse = 0.0;         // within-cluster squared distance
    bool ridge_used = false;

    std::size_t k() const { return coeffs.rows(); }
};

// Per-series feature proxies: autocorrelations at lags 1..10, trend strength,
// seasonal strength. Raw, before z-scoring.
Array2 series_features(const SeriesSet& data);

// Lloyd k-means with 20 restarts on z-scored features; empty clusters are
// re-seeded to the farthest point. Per-cluster coefficients are pooled OLS.
ClusterModel cluster_fit(const SeriesSet& data, std::size_t k, Rng& rng);

double cluster_sse(const ClusterModel& model, const SeriesSet& data);

} // namespace mtms::lin
