#include "mtms/quintile.hpp"

#include "mtms/errors.hpp"
#include "mtms/losses.hpp"
#include "mtms/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace mtms::quintile {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Shuffle ids, cut into universes of 100, sort each for stable indexing.
std::vector<std::vector<std::size_t>> partition_hundreds(std::vector<std::size_t> ids,
                                                         Rng& rng) {
    rng.shuffle(ids);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t base = 0; base < ids.size(); base += 100) {
        std::vector<std::size_t> u(ids.begin() + static_cast<std::ptrdiff_t>(base),
                                   ids.begin() + static_cast<std::ptrdiff_t>(base + 100));
        std::sort(u.begin(), u.end());
        out.push_back(std::move(u));
    }
    return out;
}

double population_std(const double* v, std::size_t n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += v[i];
    mean /= static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += (v[i] - mean) * (v[i] - mean);
    return std::sqrt(acc / static_cast<double>(n));
}

double ema(const Market& market, std::size_t asset, std::size_t last, std::size_t window) {
    const double alpha = 2.0 / (static_cast<double>(window) + 1.0);
    double v = market.prices(0, asset);
    for (std::size_t w = 1; w <= last; ++w)
        v = alpha * market.prices(w, asset) + (1.0 - alpha) * v;
    return v;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

Market synth_market(std::size_t n_assets, std::size_t n_weeks, std::uint64_t seed,
                    const MarketConfig& cfg) {
    if (n_assets == 0 || n_assets % 100 != 0)
        throw UsageError("synth_market: n_assets must be a positive multiple of 100");
    if (n_weeks == 0) throw UsageError("synth_market: n_weeks must be positive");

    Rng rng(seed);
    Market m;
    m.is_etf.resize(n_assets);
    for (std::size_t a = 0; a < n_assets; ++a) m.is_etf[a] = (a % 100) >= 50;

    Rng load_rng = rng.substream("loadings");
    Array2 loadings(n_assets, std::max<std::size_t>(cfg.n_factors, 1));
    for (std::size_t a = 0; a < n_assets; ++a)
        for (std::size_t k = 0; k < cfg.n_factors; ++k)
            loadings(a, k) = load_rng.uniform(cfg.loading_lo, cfg.loading_hi);

    // Persistent per-asset volatility level; ETFs run at a reduced idio vol.
    Rng vol_rng = rng.substream("vol_levels");
    m.latent_vol.resize(n_assets);
    for (std::size_t a = 0; a < n_assets; ++a) {
        const double level = cfg.idio_vol * std::exp(cfg.vol_heterogeneity * vol_rng.normal());
        m.latent_vol[a] = m.is_etf[a] ? cfg.etf_vol_factor * level : level;
    }

    Rng path_rng = rng.substream("vol_path");
    Array2 logvol(n_weeks, n_assets);   // AR(1) deviation around each level
    const double rho = cfg.vol_persistence;
    const double stat = std::abs(rho) < 1.0
                            ? cfg.vol_shock / std::sqrt(1.0 - rho * rho)
                            : cfg.vol_shock;
    for (std::size_t a = 0; a < n_assets; ++a) {
        double h = stat * path_rng.normal();
        for (std::size_t t = 0; t < n_weeks; ++t) {
            logvol(t, a) = h;
            h = rho * h + cfg.vol_shock * path_rng.normal();
        }
    }

    Rng factor_rng = rng.substream("factors");
    Array2 factors(n_weeks, std::max<std::size_t>(cfg.n_factors, 1));
    for (std::size_t t = 0; t < n_weeks; ++t)
        for (std::size_t k = 0; k < cfg.n_factors; ++k)
            factors(t, k) = cfg.factor_vol * factor_rng.normal();

    Rng noise_rng = rng.substream("idio");
    Rng price_rng = rng.substream("prices");
    m.log_returns = Array2(n_weeks, n_assets);
    m.prices = Array2(n_weeks + 1, n_assets);
    for (std::size_t a = 0; a < n_assets; ++a) m.prices(0, a) = price_rng.uniform(20.0, 200.0);
    for (std::size_t t = 0; t < n_weeks; ++t)
        for (std::size_t a = 0; a < n_assets; ++a) {
            double r = cfg.drift;
            for (std::size_t k = 0; k < cfg.n_factors; ++k)
                r += loadings(a, k) * factors(t, k);
            r += m.latent_vol[a] * std::exp(logvol(t, a)) * noise_rng.normal();
            m.log_returns(t, a) = r;
            m.prices(t + 1, a) = m.prices(t, a) * std::exp(r);
        }

    m.universes.push_back(std::vector<std::size_t>(100));
    std::iota(m.universes[0].begin(), m.universes[0].end(), 0);
    if (n_assets > 100) {
        std::vector<std::size_t> extra(n_assets - 100);
        std::iota(extra.begin(), extra.end(), 100);
        Rng part_rng = rng.substream("universes");
        for (auto& u : partition_hundreds(std::move(extra), part_rng))
            m.universes.push_back(std::move(u));
    }

    m.degenerate = true;
    const double first = m.log_returns(0, 0);
    for (double r : m.log_returns.flat())
        if (r != first) {
            m.degenerate = false;
            break;
        }
    return m;
}

std::vector<int> quintile_labels(const std::vector<double>& returns) {
    if (returns.size() != 100)
        throw UsageError("quintile_labels: expected exactly 100 returns, got " +
                         std::to_string(returns.size()));
    std::vector<std::size_t> order(100);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (returns[a] != returns[b]) return returns[a] < returns[b];
        return a < b;
    });
    std::vector<int> labels(100);
    for (std::size_t pos = 0; pos < 100; ++pos)
        labels[order[pos]] = static_cast<int>(pos / 20) + 1;
    return labels;
}

std::vector<std::vector<std::size_t>> augment_universes(
    const std::vector<std::size_t>& extra_assets, Rng& rng) {
    if (extra_assets.size() != 900)
        throw UsageError("augment_universes: expected exactly 900 extra assets, got " +
                         std::to_string(extra_assets.size()));
    return partition_hundreds(extra_assets, rng);
}

std::vector<IntervalGrid> augment_time_shift(std::size_t n_weeks, std::size_t first_start) {
    std::vector<IntervalGrid> grids;
    for (std::size_t shift = 0; shift < 4; ++shift) {
        IntervalGrid g;
        g.shift = shift;
        for (std::size_t s = first_start + shift; s + 4 <= n_weeks; s += 4)
            g.starts.push_back(s);
        grids.push_back(std::move(g));
    }
    return grids;
}

const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v{"is_etf"};
        for (int k = 1; k <= 7; ++k) v.push_back("ret_lag" + std::to_string(k));
        for (int k = 1; k <= 7; ++k) v.push_back("vol_lag" + std::to_string(k));
        v.insert(v.end(), {"ema10", "rsi14", "roc4", "macd", "roll_vol20"});
        return v;
    }();
    return names;
}

std::vector<double> raw_features(const Market& market, std::size_t asset, std::size_t start) {
    if (asset >= market.n_assets()) throw UsageError("raw_features: asset out of range");
    if (start < 28)
        throw UsageError("raw_features: interval start " + std::to_string(start) +
                         " predates the lag-7 history requirement (28 weeks)");
    if (start > market.n_weeks()) throw UsageError("raw_features: interval beyond history");

    std::vector<double> f(kFeatureDim, kNaN);
    f[0] = market.is_etf[asset] ? 1.0 : 0.0;
    for (std::size_t k = 1; k <= 7; ++k) {
        const std::size_t hi = start - 4 * (k - 1);
        const std::size_t lo = start - 4 * k;
        f[k] = std::log(market.prices(hi, asset) / market.prices(lo, asset));
        double win[4];
        for (std::size_t j = 0; j < 4; ++j) win[j] = market.log_returns(lo + j, asset);
        f[7 + k] = population_std(win, 4);
    }

    const double p_now = market.prices(start, asset);
    f[15] = ema(market, asset, start, 10) / p_now;

    double gain = 0.0, loss = 0.0;
    for (std::size_t w = start - 13; w <= start; ++w) {
        const double d = market.prices(w, asset) - market.prices(w - 1, asset);
        if (d > 0) gain += d;
        else loss -= d;
    }
    if (gain == 0.0 && loss == 0.0) f[16] = kNaN;
    else if (loss == 0.0) f[16] = 100.0;
    else f[16] = 100.0 - 100.0 / (1.0 + gain / loss);

    f[17] = p_now / market.prices(start - 4, asset) - 1.0;
    f[18] = (ema(market, asset, start, 12) - ema(market, asset, start, 26)) / p_now;

    double roll[20];
    for (std::size_t j = 0; j < 20; ++j) roll[j] = market.log_returns(start - 20 + j, asset);
    f[19] = population_std(roll, 20);
    return f;
}

NormStats FeatureTable::norm_stats() const {
    NormStats s;
    s.median = median;
    s.mean = mean;
    s.stddev = stddev;
    s.degenerate_freqs = degenerate_freqs;
    return s;
}

FeatureTable build_features(const Market& market, const std::vector<IntervalGrid>& grids,
                            std::size_t train_weeks) {
    if (grids.empty()) throw UsageError("build_features: no interval grids");
    if (train_weeks > market.n_weeks())
        throw UsageError("build_features: train_weeks exceeds market history");
    for (const IntervalGrid& g : grids)
        for (std::size_t s : g.starts) {
            if (s < 28)
                throw UsageError("build_features: interval start " + std::to_string(s) +
                                 " predates the lag-7 history requirement");
            if (s + 4 > market.n_weeks())
                throw UsageError("build_features: interval start " + std::to_string(s) +
                                 " runs past the end of history");
        }
    for (const auto& u : market.universes)
        if (u.size() != 100) throw NumericError("build_features: universe size != 100");

    // One block of 100 consecutive rows per (universe, grid, interval).
    struct Block {
        std::size_t universe, grid, start;
    };
    std::vector<Block> blocks;
    for (std::size_t u = 0; u < market.universes.size(); ++u)
        for (std::size_t g = 0; g < grids.size(); ++g)
            for (std::size_t s : grids[g].starts) blocks.push_back({u, g, s});

    FeatureTable table;
    table.train_weeks = train_weeks;
    const std::size_t n_rows = blocks.size() * 100;
    table.meta.resize(n_rows);
    table.x = Array2(n_rows, kFeatureDim);
    table.labels = Array2(n_rows, losses::kQuintiles);

    parallel_for(blocks.size(), [&](std::size_t b) {
        const Block& blk = blocks[b];
        const auto& members = market.universes[blk.universe];
        std::vector<double> rets(100);
        for (std::size_t i = 0; i < 100; ++i)
            rets[i] = std::log(market.prices(blk.start + 4, members[i]) /
                               market.prices(blk.start, members[i]));
        const std::vector<int> labels = quintile_labels(rets);
        const bool is_train = blk.start + 4 <= train_weeks;
        for (std::size_t i = 0; i < 100; ++i) {
            const std::size_t row = b * 100 + i;
            table.meta[row] = {members[i], blk.universe, grids[blk.grid].shift, blk.start,
                               is_train};
            const std::vector<double> f = raw_features(market, members[i], blk.start);
            for (std::size_t j = 0; j < kFeatureDim; ++j) table.x(row, j) = f[j];
            for (std::size_t q = 0; q < losses::kQuintiles; ++q) table.labels(row, q) = 0.0;
            table.labels(row, static_cast<std::size_t>(labels[i] - 1)) = 1.0;
        }
    });

    std::vector<std::size_t> train_rows;
    for (std::size_t r = 0; r < n_rows; ++r)
        if (table.meta[r].is_train) train_rows.push_back(r);
    if (train_rows.empty()) throw UsageError("build_features: no training intervals");

    // Train-only medians, then imputation everywhere, then train-only moments.
    table.median.resize(kFeatureDim);
    table.mean.resize(kFeatureDim);
    table.stddev.resize(kFeatureDim);
    for (std::size_t j = 0; j < kFeatureDim; ++j) {
        std::vector<double> seen;
        for (std::size_t r : train_rows)
            if (!std::isnan(table.x(r, j))) seen.push_back(table.x(r, j));
        table.median[j] = median_of(std::move(seen));
        for (std::size_t r = 0; r < n_rows; ++r)
            if (std::isnan(table.x(r, j))) table.x(r, j) = table.median[j];

        double mean = 0.0;
        for (std::size_t r : train_rows) mean += table.x(r, j);
        mean /= static_cast<double>(train_rows.size());
        double var = 0.0;
        for (std::size_t r : train_rows) {
            const double d = table.x(r, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(train_rows.size());
        table.mean[j] = mean;
        table.stddev[j] = std::sqrt(var);
        for (std::size_t r = 0; r < n_rows; ++r)
            table.x(r, j) = table.stddev[j] > 0.0
                                ? (table.x(r, j) - mean) / table.stddev[j]
                                : 0.0;
    }

    // Assets whose weekly returns never move in the training window bypass
    // the model at prediction time.
    table.asset_degenerate.assign(market.n_assets(), false);
    const std::size_t tw = std::min(train_weeks, market.n_weeks());
    for (std::size_t a = 0; a < market.n_assets(); ++a) {
        if (tw == 0) continue;
        bool constant = true;
        const double first = market.log_returns(0, a);
        for (std::size_t t = 1; t < tw && constant; ++t)
            constant = market.log_returns(t, a) == first;
        table.asset_degenerate[a] = constant;
    }

    // Quintile frequencies of a hypothetical zero-return asset across all
    // training intervals; ties place it after every real asset.
    std::vector<double> freq(losses::kQuintiles, 0.0);
    std::size_t n_train_blocks = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (!(blocks[b].start + 4 <= train_weeks)) continue;
        const auto& members = market.universes[blocks[b].universe];
        std::size_t at_or_below = 0;
        for (std::size_t i = 0; i < 100; ++i) {
            const double r = std::log(market.prices(blocks[b].start + 4, members[i]) /
                                      market.prices(blocks[b].start, members[i]));
            if (r <= 0.0) ++at_or_below;
        }
        const std::size_t pos = std::min<std::size_t>(at_or_below, 99);
        freq[pos / 20] += 1.0;
        ++n_train_blocks;
    }
    for (double& v : freq) v /= static_cast<double>(n_train_blocks);
    table.degenerate_freqs = std::move(freq);
    return table;
}

TaskBundle bundle_from_table(const FeatureTable& table) {
    std::size_t n_assets = 0;
    for (const FeatureRowMeta& m : table.meta) n_assets = std::max(n_assets, m.asset + 1);
    std::vector<std::vector<std::size_t>> rows_of(n_assets);
    for (std::size_t r = 0; r < table.rows(); ++r)
        if (table.meta[r].is_train) rows_of[table.meta[r].asset].push_back(r);

    // Time order within each task: the training loops hold out the trailing
    // fraction of rows, which must be the latest intervals, not the last
    // shift grid (shifted windows overlap and would leak into validation).
    for (auto& rows : rows_of)
        std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
            if (table.meta[a].interval_start != table.meta[b].interval_start)
                return table.meta[a].interval_start < table.meta[b].interval_start;
            return a < b;
        });

    TaskBundle bundle;
    for (std::size_t a = 0; a < n_assets; ++a) {
        if (rows_of[a].empty())
            throw UsageError("bundle_from_table: asset " + std::to_string(a) +
                             " has no training rows");
        Task t;
        t.x = Array2(rows_of[a].size(), kFeatureDim);
        t.y = Array2(rows_of[a].size(), losses::kQuintiles);
        for (std::size_t i = 0; i < rows_of[a].size(); ++i) {
            for (std::size_t j = 0; j < kFeatureDim; ++j)
                t.x(i, j) = table.x(rows_of[a][i], j);
            for (std::size_t q = 0; q < losses::kQuintiles; ++q)
                t.y(i, q) = table.labels(rows_of[a][i], q);
        }
        t.train_rows = rows_of[a].size();
        bundle.tasks.push_back(std::move(t));
    }
    return bundle;
}

std::vector<std::size_t> primary_test_rows(const FeatureTable& table) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < table.rows(); ++r)
        if (table.meta[r].universe == 0 && table.meta[r].interval_start >= table.train_weeks)
            rows.push_back(r);
    return rows;
}

Array2 predict_rows(const MtMsModel& model, const FeatureTable& table,
                    const std::vector<std::size_t>& rows) {
    Array2 preds(rows.size(), losses::kQuintiles);
    Array2 x(1, kFeatureDim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const FeatureRowMeta& m = table.meta.at(rows[i]);
        if (table.asset_degenerate.at(m.asset)) {
            if (table.degenerate_freqs.size() != losses::kQuintiles)
                throw NumericError("predict_rows: degenerate frequencies missing");
            for (std::size_t q = 0; q < losses::kQuintiles; ++q)
                preds(i, q) = table.degenerate_freqs[q];
            continue;
        }
        for (std::size_t j = 0; j < kFeatureDim; ++j) x(0, j) = table.x(rows[i], j);
        const Array2 p = model.predict(m.asset, x);
        for (std::size_t q = 0; q < losses::kQuintiles; ++q) preds(i, q) = p(0, q);
    }
    return preds;
}

EvalReport evaluate_rps(const Array2& preds, const FeatureTable& table,
                        const std::vector<std::size_t>& rows) {
    if (preds.rows() != rows.size() || preds.cols() != losses::kQuintiles)
        throw UsageError("evaluate_rps: prediction shape mismatch");
    EvalReport report;
    report.scatter = Array2(rows.size(), 4);
    std::map<std::size_t, std::pair<double, std::size_t>> by_interval;
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        const double score = losses::rps(preds.row(i), table.labels.row(r));
        total += score;
        auto& slot = by_interval[table.meta[r].interval_start];
        slot.first += score;
        slot.second += 1;
        report.scatter(i, 0) = preds(i, 0);
        report.scatter(i, 1) = preds(i, 4);
        report.scatter(i, 2) = preds(i, 1);
        report.scatter(i, 3) = preds(i, 3);
    }
    if (!rows.empty()) report.aggregate_rps = total / static_cast<double>(rows.size());
    for (const auto& [start, slot] : by_interval)
        report.per_interval.emplace_back(start, slot.first / static_cast<double>(slot.second));
    return report;
}

void save_feature_csv(const std::string& path, const FeatureTable& table) {
    std::ofstream out(path);
    if (!out) throw UsageError("save_feature_csv: cannot open " + path);
    out << std::setprecision(17);
    out << "asset_id,universe_id,shift,interval_start,is_train";
    for (std::size_t q = 1; q <= losses::kQuintiles; ++q) out << ",label_q" << q;
    for (const std::string& name : feature_names()) out << ',' << name;
    out << '\n';
    for (std::size_t r = 0; r < table.rows(); ++r) {
        const FeatureRowMeta& m = table.meta[r];
        out << m.asset << ',' << m.universe << ',' << m.shift << ',' << m.interval_start
            << ',' << (m.is_train ? 1 : 0);
        for (std::size_t q = 0; q < losses::kQuintiles; ++q) out << ',' << table.labels(r, q);
        for (std::size_t j = 0; j < kFeatureDim; ++j) out << ',' << table.x(r, j);
        out << '\n';
    }
    if (!out) throw UsageError("save_feature_csv: write failed for " + path);
}

void save_prediction_csv(const std::string& path, const std::vector<std::size_t>& asset_ids,
                         const Array2& preds) {
    if (preds.rows() != asset_ids.size() || preds.cols() != losses::kQuintiles)
        throw UsageError("save_prediction_csv: shape mismatch");
    std::ofstream out(path);
    if (!out) throw UsageError("save_prediction_csv: cannot open " + path);
    out << std::setprecision(17);
    out << "asset_id,Rank1,Rank2,Rank3,Rank4,Rank5\n";
    for (std::size_t r = 0; r < preds.rows(); ++r) {
        out << asset_ids[r];
        for (std::size_t q = 0; q < losses::kQuintiles; ++q) out << ',' << preds(r, q);
        out << '\n';
    }
    if (!out) throw UsageError("save_prediction_csv: write failed for " + path);
}

} // namespace mtms::quintile
