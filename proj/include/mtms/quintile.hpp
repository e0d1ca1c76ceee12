#pragma once
// M6-style data machinery: synthetic factor market with persistent
// heterogeneous volatility, quintile labeling with a fixed tie-break,
// feature construction with train-only imputation and normalization,
// time-shift and universe augmentation, and RPS evaluation.

#include "mtms/array2.hpp"
#include "mtms/mtms.hpp"
#include "mtms/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mtms::quintile {

// Weekly log-returns follow r = b·f + sigma_i(t)·e with a small factor block
// and a per-asset lognormal volatility level that itself moves as an AR(1)
// in logs, so cross-sectional quintile membership is volatility-predictable.
struct MarketConfig {
    std::size_t n_factors = 2;
    double factor_vol = 0.010;       // weekly factor innovation std
    double loading_lo = 0.3;         // uniform range of factor loadings
    double loading_hi = 1.2;
    double idio_vol = 0.02;          // median per-asset weekly idio vol
    double vol_heterogeneity = 1.0;  // lognormal spread of per-asset levels
    double vol_persistence = 0.97;   // AR(1) coefficient of log-vol
    double vol_shock = 0.05;         // innovation std of log-vol
    double etf_vol_factor = 0.5;     // idio vol multiplier for ETF assets
    double drift = 0.0;              // common weekly drift
};

struct Market {
    Array2 prices;       // (n_weeks + 1) × n_assets, strictly positive
    Array2 log_returns;  // n_weeks × n_assets
    std::vector<bool> is_etf;
    std::vector<double> latent_vol;                    // per-asset base level
    std::vector<std::vector<std::size_t>> universes;   // [0] is the primary
    bool degenerate = false;                           // all returns identical

    std::size_t n_assets() const { return is_etf.size(); }
    std::size_t n_weeks() const { return log_returns.rows(); }
};

// n_assets must be a positive multiple of 100. Assets beyond the first 100
// are partitioned into auxiliary universes of 100 by a seeded shuffle.
Market synth_market(std::size_t n_assets, std::size_t n_weeks, std::uint64_t seed,
                    const MarketConfig& cfg = {});

// Ascending rank over exactly 100 returns, ties broken by asset index;
// ranks 1-20 map to quintile 1 and so on. Always 20 assets per quintile.
std::vector<int> quintile_labels(const std::vector<double>& returns);

// Seeded partition of exactly 900 extra asset ids into 9 universes of 100.
std::vector<std::vector<std::size_t>> augment_universes(
    const std::vector<std::size_t>& extra_assets, Rng& rng);

struct IntervalGrid {
    std::size_t shift = 0;
    std::vector<std::size_t> starts;   // week index of each interval start
};

// Four interleaved 4-week grids (shifts 0-3), each truncated at the final
// week boundary. Interval [s, s+4) requires s + 4 <= n_weeks.
std::vector<IntervalGrid> augment_time_shift(std::size_t n_weeks,
                                             std::size_t first_start = 0);

inline constexpr std::size_t kFeatureDim = 20;

// Column names: is_etf, ret_lag1..7, vol_lag1..7, ema10, rsi14, roc4, macd,
// roll_vol20.
const std::vector<std::string>& feature_names();

// Raw (pre-imputation, pre-normalization) feature vector for the interval
// starting at week `start`. Missing values are quiet NaN. Requires
// start >= 28 (lag-7 history) and start + 4 <= n_weeks.
std::vector<double> raw_features(const Market& market, std::size_t asset,
                                 std::size_t start);

struct FeatureRowMeta {
    std::size_t asset = 0;
    std::size_t universe = 0;
    std::size_t shift = 0;
    std::size_t interval_start = 0;
    bool is_train = false;
};

struct FeatureTable {
    std::vector<FeatureRowMeta> meta;
    Array2 x;        // rows × kFeatureDim, imputed and normalized
    Array2 labels;   // rows × 5 one-hot quintile outcomes
    std::size_t train_weeks = 0;

    // Train-only pipeline statistics, applied identically to test rows.
    std::vector<double> median;
    std::vector<double> mean;
    std::vector<double> stddev;

    std::vector<bool> asset_degenerate;    // constant returns over training
    std::vector<double> degenerate_freqs;  // zero-return quintile frequencies

    std::size_t rows() const { return meta.size(); }
    NormStats norm_stats() const;
};

// Builds one labeled feature row per (universe, grid, interval, asset).
// Intervals ending at or before train_weeks are training rows; medians,
// means, and standard deviations come from training rows only.
FeatureTable build_features(const Market& market,
                            const std::vector<IntervalGrid>& grids,
                            std::size_t train_weeks);

// One task per asset holding its training rows in interval-time order, so a
// trailing validation split is a temporal holdout.
TaskBundle bundle_from_table(const FeatureTable& table);

// Row indices of the primary universe's held-out intervals.
std::vector<std::size_t> primary_test_rows(const FeatureTable& table);

// Model predictions for the given table rows; degenerate assets bypass the
// model and receive the stored zero-return quintile frequencies.
Array2 predict_rows(const MtMsModel& model, const FeatureTable& table,
                    const std::vector<std::size_t>& rows);

struct EvalReport {
    double aggregate_rps = 0.0;
    std::vector<std::pair<std::size_t, double>> per_interval;  // by start week
    Array2 scatter;   // rows × 4: P(q1), P(q5), P(q2), P(q4)
};

// preds holds one probability 5-vector per entry of `rows`.
EvalReport evaluate_rps(const Array2& preds, const FeatureTable& table,
                        const std::vector<std::size_t>& rows);

// CSV emitters. Feature rows: asset_id, universe_id, shift, interval_start,
// is_train, label_q1..q5, then feature columns. Predictions match the M6
// submission shape: asset_id, Rank1..Rank5.
void save_feature_csv(const std::string& path, const FeatureTable& table);
void save_prediction_csv(const std::string& path,
                         const std::vector<std::size_t>& asset_ids,
                         const Array2& preds);

} // namespace mtms::quintile
