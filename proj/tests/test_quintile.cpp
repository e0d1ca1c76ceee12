#include "mtms/quintile.hpp"

#include "mtms/errors.hpp"
#include "mtms/losses.hpp"
#include "mtms/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

using namespace mtms;
namespace q = mtms::quintile;

namespace {

double column_std(const Array2& m, std::size_t col) {
    double mean = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) mean += m(r, col);
    mean /= static_cast<double>(m.rows());
    double acc = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r)
        acc += (m(r, col) - mean) * (m(r, col) - mean);
    return std::sqrt(acc / static_cast<double>(m.rows()));
}

q::MarketConfig quiet_config() {
    q::MarketConfig cfg;
    cfg.factor_vol = 0.0;
    cfg.idio_vol = 0.0;
    cfg.vol_shock = 0.0;
    return cfg;
}

struct TempPath {
    std::string path;
    explicit TempPath(const std::string& name) : path("quintile_test_" + name) {}
    ~TempPath() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("synthetic market is seeded, positive, and universe-partitioned") {
    const q::Market a = q::synth_market(300, 60, 42);
    const q::Market b = q::synth_market(300, 60, 42);
    CHECK(a.prices.flat() == b.prices.flat());
    CHECK(a.log_returns.flat() == b.log_returns.flat());
    CHECK(a.universes == b.universes);
    CHECK(a.latent_vol == b.latent_vol);

    const q::Market c = q::synth_market(300, 60, 43);
    CHECK(a.prices.flat() != c.prices.flat());

    for (double p : a.prices.flat()) CHECK(p > 0.0);
    REQUIRE(a.universes.size() == 3);
    CHECK(a.universes[0].size() == 100);
    for (std::size_t i = 0; i < 100; ++i) CHECK(a.universes[0][i] == i);
    std::set<std::size_t> seen;
    for (const auto& u : a.universes) {
        CHECK(u.size() == 100);
        seen.insert(u.begin(), u.end());
    }
    CHECK(seen.size() == 300);
    CHECK_FALSE(a.is_etf[0]);
    CHECK(a.is_etf[50]);
    CHECK_FALSE(a.degenerate);

    CHECK_THROWS_AS(q::synth_market(150, 60, 1), UsageError);
    CHECK_THROWS_AS(q::synth_market(0, 60, 1), UsageError);
}

TEST_CASE("zero-volatility config degenerates to identical returns") {
    const q::Market m = q::synth_market(100, 40, 7, quiet_config());
    CHECK(m.degenerate);
    for (double r : m.log_returns.flat()) CHECK(r == 0.0);

    q::MarketConfig drifting = quiet_config();
    drifting.drift = 0.01;
    const q::Market d = q::synth_market(100, 40, 7, drifting);
    CHECK(d.degenerate);
    for (double r : d.log_returns.flat()) CHECK(r == 0.01);
}

TEST_CASE("volatility heterogeneity shows up cross-sectionally") {
    q::MarketConfig cfg;
    cfg.vol_heterogeneity = 1.0;
    const q::Market m = q::synth_market(200, 120, 777, cfg);
    std::vector<double> realized(m.n_assets());
    for (std::size_t a = 0; a < m.n_assets(); ++a) realized[a] = column_std(m.log_returns, a);
    double mean = 0.0;
    for (double v : realized) mean += v;
    mean /= static_cast<double>(realized.size());
    double acc = 0.0;
    for (double v : realized) acc += (v - mean) * (v - mean);
    const double cross_std = std::sqrt(acc / static_cast<double>(realized.size()));
    CHECK(cross_std > 0.0);
    // Frozen regression fixture for this exact seed and config.
    CHECK(cross_std == doctest::Approx(0.04173532464890211).epsilon(1e-12));
}

TEST_CASE("quintile labels rank ascending with index tie-break") {
    SUBCASE("distinct returns") {
        std::vector<double> rets(100);
        for (std::size_t i = 0; i < 100; ++i) rets[i] = static_cast<double>((i * 37) % 100) + 1;
        const std::vector<int> labels = q::quintile_labels(rets);
        for (std::size_t i = 0; i < 100; ++i)
            if (rets[i] == 1.0) CHECK(labels[i] == 1);
        for (std::size_t i = 0; i < 100; ++i)
            if (rets[i] == 100.0) CHECK(labels[i] == 5);
    }
    SUBCASE("all identical returns split by asset index") {
        const std::vector<int> labels = q::quintile_labels(std::vector<double>(100, 3.5));
        for (std::size_t i = 0; i < 100; ++i)
            CHECK(labels[i] == static_cast<int>(i / 20) + 1);
    }
    SUBCASE("two-way tie straddling a boundary") {
        std::vector<double> rets(100);
        for (std::size_t i = 0; i < 100; ++i) rets[i] = static_cast<double>(i);
        rets[19] = 19.0;
        rets[20] = 19.0;   // ties with asset 19 exactly at the q1/q2 boundary
        const std::vector<int> labels = q::quintile_labels(rets);
        CHECK(labels[19] == 1);
        CHECK(labels[20] == 2);
    }
    SUBCASE("wrong universe size") {
        CHECK_THROWS_AS(q::quintile_labels(std::vector<double>(99, 0.0)), UsageError);
        CHECK_THROWS_AS(q::quintile_labels(std::vector<double>(101, 0.0)), UsageError);
    }
    SUBCASE("always exactly 20 per quintile over random inputs with ties") {
        Rng rng(2024);
        for (std::size_t trial = 0; trial < 10000; ++trial) {
            std::vector<double> rets(100);
            for (double& r : rets)
                r = static_cast<double>(rng.uniform_int(-3, 3));   // heavy ties
            const std::vector<int> labels = q::quintile_labels(rets);
            std::size_t count[5] = {0, 0, 0, 0, 0};
            for (int l : labels) ++count[l - 1];
            for (std::size_t k = 0; k < 5; ++k) REQUIRE(count[k] == 20);
        }
    }
}

TEST_CASE("universe augmentation partitions 900 assets into 9 hundreds") {
    std::vector<std::size_t> extra(900);
    for (std::size_t i = 0; i < 900; ++i) extra[i] = 100 + i;
    Rng rng(5);
    const auto universes = q::augment_universes(extra, rng);
    REQUIRE(universes.size() == 9);
    std::set<std::size_t> seen;
    for (const auto& u : universes) {
        CHECK(u.size() == 100);
        seen.insert(u.begin(), u.end());
    }
    CHECK(seen.size() == 900);
    CHECK(*seen.begin() == 100);

    Rng rng2(5);
    CHECK(q::augment_universes(extra, rng2) == universes);

    Rng rng3(6);
    extra.pop_back();
    CHECK_THROWS_AS(q::augment_universes(extra, rng3), UsageError);
}

TEST_CASE("time-shift augmentation interleaves four truncated grids") {
    const auto grids = q::augment_time_shift(40);
    REQUIRE(grids.size() == 4);
    CHECK(grids[0].shift == 0);
    CHECK(grids[0].starts.size() == 10);   // 0,4,...,36
    std::size_t total = 0;
    std::set<std::size_t> starts_seen;
    for (const auto& g : grids) {
        total += g.starts.size();
        for (std::size_t s : g.starts) {
            CHECK(s + 4 <= 40);
            CHECK(s % 4 == g.shift);
            CHECK(starts_seen.insert(s).second);   // no shared (start, end) pair
        }
    }
    CHECK(total <= 40);
    CHECK(total == 37);

    const auto offset = q::augment_time_shift(60, 28);
    CHECK(offset[0].starts.front() == 28);
    CHECK(offset[3].starts.front() == 31);
}

TEST_CASE("raw features expose lag structure and flag undefined indicators") {
    // Hand-crafted single-asset market with known weekly returns.
    q::Market m;
    const std::size_t weeks = 36;
    m.is_etf = {true};
    m.latent_vol = {0.0};
    m.prices = Array2(weeks + 1, 1);
    m.log_returns = Array2(weeks, 1);
    m.prices(0, 0) = 100.0;
    for (std::size_t t = 0; t < weeks; ++t) {
        const double r = 0.01 * static_cast<double>(t % 5) - 0.015;
        m.log_returns(t, 0) = r;
        m.prices(t + 1, 0) = m.prices(t, 0) * std::exp(r);
    }

    const std::vector<double> f = q::raw_features(m, 0, 28);
    REQUIRE(f.size() == q::kFeatureDim);
    CHECK(f[0] == 1.0);
    double lag1 = 0.0;
    for (std::size_t t = 24; t < 28; ++t) lag1 += m.log_returns(t, 0);
    CHECK(f[1] == doctest::Approx(lag1).epsilon(1e-12));
    double lag7 = 0.0;
    for (std::size_t t = 0; t < 4; ++t) lag7 += m.log_returns(t, 0);
    CHECK(f[7] == doctest::Approx(lag7).epsilon(1e-12));

    double win[4];
    for (std::size_t j = 0; j < 4; ++j) win[j] = m.log_returns(24 + j, 0);
    double mean = (win[0] + win[1] + win[2] + win[3]) / 4.0;
    double var = 0.0;
    for (double w : win) var += (w - mean) * (w - mean);
    CHECK(f[8] == doctest::Approx(std::sqrt(var / 4.0)).epsilon(1e-12));

    CHECK(f[17] == doctest::Approx(m.prices(28, 0) / m.prices(24, 0) - 1.0).epsilon(1e-12));

    CHECK_THROWS_AS(q::raw_features(m, 0, 27), UsageError);
    CHECK_THROWS_AS(q::raw_features(m, 1, 28), UsageError);
    CHECK_THROWS_AS(q::raw_features(m, 0, weeks + 1), UsageError);
}

TEST_CASE("constant and monotone price paths hit the indicator edge cases") {
    const q::Market flat = q::synth_market(100, 40, 9, quiet_config());
    const std::vector<double> f = q::raw_features(flat, 0, 32);
    for (std::size_t k = 1; k <= 7; ++k) {
        CHECK(f[k] == 0.0);       // return lags
        CHECK(f[7 + k] == 0.0);   // volatility lags
    }
    CHECK(f[15] == doctest::Approx(1.0).epsilon(1e-12));   // EMA equals price
    CHECK(std::isnan(f[16]));                               // RSI undefined
    CHECK(f[17] == 0.0);
    CHECK(std::abs(f[18]) <= 1e-15);
    CHECK(f[19] == 0.0);

    q::MarketConfig up = quiet_config();
    up.drift = 0.01;
    const q::Market rising = q::synth_market(100, 40, 9, up);
    CHECK(q::raw_features(rising, 0, 32)[16] == 100.0);

    up.drift = -0.01;
    const q::Market falling = q::synth_market(100, 40, 9, up);
    CHECK(q::raw_features(falling, 0, 32)[16] == 0.0);
}

TEST_CASE("feature table normalizes on training rows only") {
    const q::Market m = q::synth_market(300, 80, 11);
    const auto grids = q::augment_time_shift(m.n_weeks(), 28);
    const q::FeatureTable table = q::build_features(m, grids, 60);

    // Composition count: blocks of 100 per (universe, grid, interval).
    std::size_t expected = 0;
    for (const auto& g : grids) expected += g.starts.size();
    CHECK(table.rows() == 3 * expected * 100);

    std::vector<std::size_t> train_rows;
    for (std::size_t r = 0; r < table.rows(); ++r) {
        for (std::size_t j = 0; j < q::kFeatureDim; ++j)
            CHECK_FALSE(std::isnan(table.x(r, j)));
        double sum = 0.0;
        for (std::size_t k = 0; k < 5; ++k) sum += table.labels(r, k);
        CHECK(sum == 1.0);
        CHECK(table.meta[r].is_train == (table.meta[r].interval_start + 4 <= 60));
        if (table.meta[r].is_train) train_rows.push_back(r);
    }
    REQUIRE_FALSE(train_rows.empty());

    for (std::size_t j = 0; j < q::kFeatureDim; ++j) {
        if (table.stddev[j] == 0.0) continue;
        double mean = 0.0;
        for (std::size_t r : train_rows) mean += table.x(r, j);
        mean /= static_cast<double>(train_rows.size());
        double var = 0.0;
        for (std::size_t r : train_rows) {
            const double d = table.x(r, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(train_rows.size());
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }

    // Perturbing prices inside the held-out window must not move the stats.
    q::Market poked = m;
    poked.prices(70, 5) *= 1.5;
    poked.log_returns(69, 5) = std::log(poked.prices(70, 5) / poked.prices(69, 5));
    poked.log_returns(70, 5) = std::log(poked.prices(71, 5) / poked.prices(70, 5));
    const q::FeatureTable poked_table = q::build_features(poked, grids, 60);
    CHECK(poked_table.median == table.median);
    CHECK(poked_table.mean == table.mean);
    CHECK(poked_table.stddev == table.stddev);
    CHECK(poked_table.degenerate_freqs == table.degenerate_freqs);

    SUBCASE("guards") {
        CHECK_THROWS_AS(q::build_features(m, q::augment_time_shift(m.n_weeks(), 20), 60),
                        UsageError);
        CHECK_THROWS_AS(q::build_features(m, grids, 300), UsageError);
        CHECK_THROWS_AS(q::build_features(m, grids, 20), UsageError);   // nothing to train on
        CHECK_THROWS_AS(q::build_features(m, {}, 60), UsageError);
    }
}

TEST_CASE("zero-return quintile frequencies follow the market drift") {
    q::MarketConfig up = quiet_config();
    up.drift = 0.01;
    const q::Market rising = q::synth_market(100, 60, 3, up);
    const auto grids = q::augment_time_shift(60, 28);
    const q::FeatureTable table = q::build_features(rising, grids, 60);
    // Every real return beats zero, so the phantom asset lands in quintile 1.
    CHECK(table.degenerate_freqs ==
          std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0});
    for (std::size_t a = 0; a < 100; ++a) CHECK(table.asset_degenerate[a]);

    up.drift = -0.01;
    const q::Market falling = q::synth_market(100, 60, 3, up);
    const q::FeatureTable ftable = q::build_features(falling, grids, 60);
    CHECK(ftable.degenerate_freqs ==
          std::vector<double>{0.0, 0.0, 0.0, 0.0, 1.0});

    const q::Market live = q::synth_market(100, 60, 3);
    const q::FeatureTable ltable = q::build_features(live, grids, 60);
    double sum = 0.0;
    for (double v : ltable.degenerate_freqs) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t a = 0; a < 100; ++a) CHECK_FALSE(ltable.asset_degenerate[a]);
}

TEST_CASE("task bundle groups training rows per asset") {
    const q::Market m = q::synth_market(200, 70, 21);
    const auto grids = q::augment_time_shift(m.n_weeks(), 28);
    const q::FeatureTable table = q::build_features(m, grids, 60);
    const TaskBundle bundle = q::bundle_from_table(table);
    REQUIRE(bundle.size() == 200);
    CHECK(bundle.d_x() == q::kFeatureDim);
    CHECK(bundle.d_y() == 5);

    std::vector<std::size_t> per_asset(200, 0);
    for (std::size_t r = 0; r < table.rows(); ++r)
        if (table.meta[r].is_train) ++per_asset[table.meta[r].asset];
    for (std::size_t a = 0; a < 200; ++a) {
        CHECK(bundle.tasks[a].rows() == per_asset[a]);
        CHECK(bundle.tasks[a].train_rows == per_asset[a]);
    }
}

TEST_CASE("degenerate assets bypass the model with stored frequencies") {
    q::Market m = q::synth_market(100, 70, 33);
    for (std::size_t t = 0; t < m.n_weeks(); ++t) {
        m.log_returns(t, 7) = 0.0;
        m.prices(t + 1, 7) = m.prices(0, 7);
    }
    const auto grids = q::augment_time_shift(m.n_weeks(), 28);
    const q::FeatureTable table = q::build_features(m, grids, 60);
    REQUIRE(table.asset_degenerate[7]);
    REQUIRE_FALSE(table.asset_degenerate[8]);

    nn::MlpSpec base;
    base.layer_sizes = {q::kFeatureDim, 5};
    base.activation = nn::Activation::none;
    base.output_transform = nn::OutputTransform::softmax;
    Rng rng(1);
    const nn::ParamVector pooled = nn::init_params(base, nn::InitScheme::xavier_uniform(), rng);
    const MtMsModel model =
        make_mtms(base, 1, Connection::final_layer(base), pooled, 100, rng);

    const std::vector<std::size_t> rows = q::primary_test_rows(table);
    REQUIRE_FALSE(rows.empty());
    const Array2 preds = q::predict_rows(model, table, rows);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 5; ++k) sum += preds(i, k);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        if (table.meta[rows[i]].asset == 7)
            for (std::size_t k = 0; k < 5; ++k)
                CHECK(preds(i, k) == table.degenerate_freqs[k]);
    }
}

TEST_CASE("rps evaluation scores stubs exactly") {
    const q::Market m = q::synth_market(100, 70, 55);
    const auto grids = q::augment_time_shift(m.n_weeks(), 28);
    const q::FeatureTable table = q::build_features(m, grids, 60);
    const std::vector<std::size_t> rows = q::primary_test_rows(table);
    REQUIRE_FALSE(rows.empty());

    Array2 uniform(rows.size(), 5);
    uniform.fill(0.2);
    const q::EvalReport ur = q::evaluate_rps(uniform, table, rows);
    CHECK(std::abs(ur.aggregate_rps - 0.16) <= 1e-12);
    for (const auto& [start, score] : ur.per_interval) {
        CHECK(start >= 60);
        CHECK(std::abs(score - 0.16) <= 1e-12);
    }

    Array2 perfect(rows.size(), 5);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < 5; ++k) perfect(i, k) = table.labels(rows[i], k);
    const q::EvalReport pr = q::evaluate_rps(perfect, table, rows);
    CHECK(pr.aggregate_rps == 0.0);

    REQUIRE(pr.scatter.rows() == rows.size());
    CHECK(pr.scatter(0, 0) == perfect(0, 0));
    CHECK(pr.scatter(0, 1) == perfect(0, 4));
    CHECK(pr.scatter(0, 2) == perfect(0, 1));
    CHECK(pr.scatter(0, 3) == perfect(0, 3));

    Array2 misshapen(3, 5);
    CHECK_THROWS_AS(q::evaluate_rps(misshapen, table, rows), UsageError);
}

TEST_CASE("csv emitters write headers and one line per row") {
    const q::Market m = q::synth_market(100, 60, 66);
    const auto grids = q::augment_time_shift(m.n_weeks(), 28);
    const q::FeatureTable table = q::build_features(m, grids, 52);

    TempPath features("features.csv");
    q::save_feature_csv(features.path, table);
    std::ifstream in(features.path);
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header.rfind("asset_id,universe_id,shift,interval_start,is_train,label_q1", 0) == 0);
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == table.rows());

    TempPath preds("preds.csv");
    Array2 p(2, 5);
    p.fill(0.2);
    q::save_prediction_csv(preds.path, {3, 9}, p);
    std::ifstream pin(preds.path);
    REQUIRE(std::getline(pin, header));
    CHECK(header == "asset_id,Rank1,Rank2,Rank3,Rank4,Rank5");
    std::size_t plines = 0;
    for (std::string line; std::getline(pin, line);) ++plines;
    CHECK(plines == 2);
    CHECK_THROWS_AS(q::save_prediction_csv(preds.path, {3}, p), UsageError);
}
