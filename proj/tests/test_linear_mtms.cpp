#include "mtms/linear_mtms.hpp"

#include "mtms/errors.hpp"
#include "mtms/mtms.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using namespace mtms;
using lin::SeriesSet;

namespace {

// Random stable AR(2)-ish series with intercept and optional noise.
std::vector<std::vector<double>> make_ar_series(std::size_t count, std::size_t len_lo,
                                                std::size_t len_hi, double noise, Rng& rng) {
    std::vector<std::vector<double>> out;
    for (std::size_t m = 0; m < count; ++m) {
        const auto len = static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(len_lo), static_cast<int>(len_hi)));
        const double c = rng.uniform(-0.5, 0.5);
        const double phi = rng.uniform(0.2, 0.8);
        std::vector<double> v{rng.uniform(-1.0, 1.0)};
        while (v.size() < len)
            v.push_back(c + phi * v.back() + noise * rng.normal());
        out.push_back(std::move(v));
    }
    return out;
}

SeriesSet make_ar_set(std::size_t count, double noise, Rng& rng, std::size_t d_x = 2) {
    return lin::embed_series(make_ar_series(count, 30, 60, noise, rng), {},
                             losses::Frequency::yearly, d_x);
}

Eigen::VectorXd pooled_ols(const SeriesSet& data) {
    const auto p = static_cast<Eigen::Index>(data.p());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (const lin::Series& s : data.series) {
        for (std::size_t r = 0; r < s.y.size(); ++r) {
            Eigen::VectorXd row(p);
            for (Eigen::Index j = 0; j < p; ++j) row(j) = s.x(r, static_cast<std::size_t>(j));
            a += row * row.transpose();
            b += row * s.y[r];
        }
    }
    return a.ldlt().solve(b);
}

Eigen::VectorXd series_ols(const lin::Series& s, std::size_t p) {
    const auto pi = static_cast<Eigen::Index>(p);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(pi, pi);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(pi);
    for (std::size_t r = 0; r < s.y.size(); ++r) {
        Eigen::VectorXd row(pi);
        for (Eigen::Index j = 0; j < pi; ++j) row(j) = s.x(r, static_cast<std::size_t>(j));
        a += row * row.transpose();
        b += row * s.y[r];
    }
    return a.ldlt().solve(b);
}

double fitted_value(const SeriesSet& data, std::size_t m, std::size_t r,
                    const std::vector<double>& beta) {
    double v = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) v += data.series[m].x(r, j) * beta[j];
    return v;
}

void check_monotone(const std::vector<double>& objective) {
    for (std::size_t i = 1; i < objective.size(); ++i)
        CHECK(objective[i] <= objective[i - 1] + 1e-12 * std::max(1.0, std::abs(objective[i - 1])));
}

struct TempPath {
    std::string path;
    explicit TempPath(const std::string& name) : path("lin_test_" + name) {}
    ~TempPath() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("embedding scales by the seasonal-naive scale and lags correctly") {
    const std::vector<std::vector<double>> train{{1, 2, 3, 4, 5, 6, 7, 8}};
    const SeriesSet set = lin::embed_series(train, {}, losses::Frequency::yearly, 2);
    REQUIRE(set.size() == 1);
    const lin::Series& s = set.series[0];
    CHECK(s.scale == doctest::Approx(1.0).epsilon(1e-15));   // successive diffs all 1
    REQUIRE(s.x.rows() == 6);
    REQUIRE(s.x.cols() == 3);
    CHECK(s.x(0, 0) == 1.0);
    CHECK(s.x(0, 1) == 2.0);   // y_{t-1}
    CHECK(s.x(0, 2) == 1.0);   // y_{t-2}
    CHECK(s.y[0] == 3.0);
    CHECK(s.x(5, 1) == 7.0);
    CHECK(s.y[5] == 8.0);

    CHECK_THROWS_AS(lin::embed_series({{1.0, 2.0}}, {}, losses::Frequency::yearly, 2),
                    NumericError);
    CHECK_THROWS_AS(lin::embed_series({{3.0, 3.0, 3.0, 3.0}}, {}, losses::Frequency::yearly, 2),
                    NumericError);   // constant series has zero scale
    CHECK_THROWS_AS(lin::embed_series({}, {}, losses::Frequency::yearly, 2), UsageError);
}

TEST_CASE("series csv round-trips ragged rows exactly") {
    const std::vector<std::vector<double>> rows{
        {1.5, -2.25, 3e-7}, {42.0}, {0.1, 0.2, 0.3, 0.4, 0.5}};
    TempPath tmp("series.csv");
    lin::save_series_csv(tmp.path, rows);
    CHECK(lin::load_series_csv(tmp.path) == rows);

    std::ofstream(tmp.path) << "1.0,2.0\n3.0,oops\n";
    CHECK_THROWS_WITH_AS(lin::load_series_csv(tmp.path), doctest::Contains(":2"), UsageError);
    CHECK_THROWS_AS(lin::load_series_csv("missing_file.csv"), UsageError);
}

TEST_CASE("recursive forecasting feeds predictions back as lag one") {
    SUBCASE("pure lag-1 copy holds the last value") {
        const auto fc = lin::forecast_recursive({0.0, 1.0, 0.0}, {3.0, 9.0, 5.0}, 4);
        CHECK(fc == std::vector<double>{5.0, 5.0, 5.0, 5.0});
    }
    SUBCASE("intercept-only model forecasts the constant") {
        const auto fc = lin::forecast_recursive({2.5}, {}, 3);
        CHECK(fc == std::vector<double>{2.5, 2.5, 2.5});
    }
    SUBCASE("ar(1) halving") {
        const auto fc = lin::forecast_recursive({0.0, 0.5}, {1.0, 8.0}, 3);
        CHECK(fc == std::vector<double>{4.0, 2.0, 1.0});
    }
    SUBCASE("guards") {
        CHECK_THROWS_AS(lin::forecast_recursive({0.0, 1.0, 0.5}, {7.0}, 2), UsageError);
        CHECK_THROWS_AS(lin::forecast_recursive({}, {1.0}, 2), UsageError);
    }
}

TEST_CASE("als with no latent dimensions recovers pooled least squares") {
    Rng rng(314);
    const SeriesSet data = make_ar_set(6, 0.05, rng);
    const lin::AlsResult fit = lin::als_fit(data, 0);
    const Eigen::VectorXd ols = pooled_ols(data);
    REQUIRE(fit.model.omega_b.size() == data.p());
    for (std::size_t j = 0; j < data.p(); ++j)
        CHECK(std::abs(fit.model.omega_b[j] - ols(static_cast<Eigen::Index>(j))) <= 1e-6);
    check_monotone(fit.report.objective);
}

TEST_CASE("als with full latent dimension matches per-series least squares") {
    Rng rng(2718);
    const SeriesSet data = make_ar_set(5, 0.05, rng);
    const lin::AlsResult fit = lin::als_fit(data, data.p());
    for (std::size_t m = 0; m < data.size(); ++m) {
        const Eigen::VectorXd ols = series_ols(data.series[m], data.p());
        std::vector<double> beta_ols(data.p());
        for (std::size_t j = 0; j < data.p(); ++j) beta_ols[j] = ols(static_cast<Eigen::Index>(j));
        const std::vector<double> beta = fit.model.beta(m);
        for (std::size_t r = 0; r < data.series[m].y.size(); ++r)
            CHECK(std::abs(fitted_value(data, m, r, beta) -
                           fitted_value(data, m, r, beta_ols)) <= 1e-6);
    }
    check_monotone(fit.report.objective);
}

TEST_CASE("one latent dimension spans two noiseless ar(1) series") {
    std::vector<std::vector<double>> train(2);
    const double phis[2] = {0.9, 0.1};
    for (std::size_t m = 0; m < 2; ++m) {
        train[m].push_back(1.0);
        for (std::size_t t = 1; t < 25; ++t) train[m].push_back(phis[m] * train[m].back());
    }
    const SeriesSet data = lin::embed_series(train, {}, losses::Frequency::yearly, 1);
    const lin::AlsResult fit = lin::als_fit(data, 1);
    CHECK(std::sqrt(lin::pooled_sse(fit.model, data)) < 1e-8);
    check_monotone(fit.report.objective);
}

TEST_CASE("als objective decreases at every half-step on random instances") {
    Rng rng(99);
    for (std::size_t i = 0; i < 10; ++i) {
        Rng sub = rng.substream("als_case", i);
        const SeriesSet data = make_ar_set(4 + i % 3, 0.1, sub);
        const lin::AlsResult fit = lin::als_fit(data, 1 + i % 2);
        check_monotone(fit.report.objective);
        CHECK(fit.report.objective.back() ==
              doctest::Approx(lin::pooled_sse(fit.model, data)).epsilon(1e-9));
        CHECK(fit.report.converged);
        // Centering is pure re-identification: thetas average to zero.
        for (std::size_t j = 0; j < fit.model.d_theta(); ++j) {
            double mean = 0.0;
            for (std::size_t m = 0; m < data.size(); ++m) mean += fit.model.thetas(m, j);
            CHECK(std::abs(mean / static_cast<double>(data.size())) <= 1e-9);
        }
    }
}

TEST_CASE("fitted values ignore the latent basis choice") {
    Rng rng(4321);
    const SeriesSet data = make_ar_set(5, 0.1, rng);
    const lin::AlsResult fit = lin::als_fit(data, 2);

    Eigen::Matrix2d a;
    a << 1.3, -0.4, 0.7, 0.9;   // invertible
    const Eigen::Matrix2d ainv = a.inverse();
    lin::LinearMtMs other = fit.model;
    for (std::size_t i = 0; i < data.p(); ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            other.omega_w(i, j) = 0.0;
            for (std::size_t l = 0; l < 2; ++l)
                other.omega_w(i, j) += fit.model.omega_w(i, l) *
                                       ainv(static_cast<Eigen::Index>(l),
                                            static_cast<Eigen::Index>(j));
        }
    for (std::size_t m = 0; m < data.size(); ++m)
        for (std::size_t j = 0; j < 2; ++j) {
            other.thetas(m, j) = 0.0;
            for (std::size_t l = 0; l < 2; ++l)
                other.thetas(m, j) += a(static_cast<Eigen::Index>(j),
                                        static_cast<Eigen::Index>(l)) * fit.model.thetas(m, l);
        }
    for (std::size_t m = 0; m < data.size(); ++m) {
        const std::vector<double> b1 = fit.model.beta(m);
        const std::vector<double> b2 = other.beta(m);
        for (std::size_t r = 0; r < data.series[m].y.size(); ++r)
            CHECK(std::abs(fitted_value(data, m, r, b1) - fitted_value(data, m, r, b2)) <= 1e-8);
    }
}

TEST_CASE("closed-form adaptation recovers training thetas") {
    Rng rng(515);
    const SeriesSet data = make_ar_set(6, 0.08, rng);
    const lin::AlsResult fit = lin::als_fit(data, 2);
    for (std::size_t m = 0; m < data.size(); ++m) {
        const lin::AdaptSeriesResult res =
            lin::adapt_series(fit.model, data.series[m].x, data.series[m].y);
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(std::abs(res.theta[j] - fit.model.thetas(m, j)) <= 1e-8);
    }
}

TEST_CASE("adaptation returns zero theta when omega_b already fits") {
    lin::LinearMtMs model;
    model.omega_b = {0.5, -0.25};
    model.omega_w = Array2(2, 1);
    model.omega_w(0, 0) = 0.3;
    model.omega_w(1, 0) = 0.9;
    model.thetas = Array2(0, 1);
    Array2 x(4, 2);
    std::vector<double> y(4);
    Rng rng(8);
    for (std::size_t r = 0; r < 4; ++r) {
        x(r, 0) = 1.0;
        x(r, 1) = rng.uniform(-2.0, 2.0);
        y[r] = 0.5 * x(r, 0) - 0.25 * x(r, 1);
    }
    const lin::AdaptSeriesResult res = lin::adapt_series(model, x, y);
    CHECK(std::abs(res.theta[0]) <= 1e-10);
}

TEST_CASE("adaptation matches a hand-solved system") {
    lin::LinearMtMs model;
    model.omega_b = {0.0, 0.0};
    model.omega_w = Array2(2, 1);
    model.omega_w(0, 0) = 1.0;
    model.omega_w(1, 0) = 1.0;
    model.thetas = Array2(0, 1);
    Array2 x = Array2::from_rows(3, 2, {1, 1, 1, 2, 1, 3});
    const std::vector<double> y{2, 6, 8};
    // Q = x * omega_w = (2, 3, 4); theta = Q.y / Q.Q = 54 / 29.
    const lin::AdaptSeriesResult res = lin::adapt_series(model, x, y);
    CHECK(res.theta[0] == doctest::Approx(54.0 / 29.0).epsilon(1e-12));

    Array2 bad(2, 3);
    CHECK_THROWS_AS(lin::adapt_series(model, bad, {1.0, 2.0}), UsageError);
}

TEST_CASE("single-cluster localization is pooled least squares") {
    Rng rng(606);
    const SeriesSet data = make_ar_set(5, 0.1, rng);
    Rng krng(1);
    const lin::ClusterModel cm = lin::cluster_fit(data, 1, krng);
    const Eigen::VectorXd ols = pooled_ols(data);
    for (std::size_t j = 0; j < data.p(); ++j)
        CHECK(std::abs(cm.coeffs(0, j) - ols(static_cast<Eigen::Index>(j))) <= 1e-8);
    CHECK(cm.labels == std::vector<std::size_t>(5, 0));
}

TEST_CASE("per-series clusters reduce to per-series least squares") {
    Rng rng(707);
    const SeriesSet data = make_ar_set(4, 0.1, rng);
    Rng krng(2);
    const lin::ClusterModel cm = lin::cluster_fit(data, 4, krng);
    // Every series sits alone in its own cluster.
    std::vector<std::size_t> seen(4, 0);
    for (std::size_t l : cm.labels) ++seen[l];
    CHECK(seen == std::vector<std::size_t>(4, 1));
    for (std::size_t m = 0; m < 4; ++m) {
        const Eigen::VectorXd ols = series_ols(data.series[m], data.p());
        for (std::size_t j = 0; j < data.p(); ++j)
            CHECK(std::abs(cm.coeffs(cm.labels[m], j) - ols(static_cast<Eigen::Index>(j))) <=
                  1e-6);
    }
    CHECK_THROWS_AS(lin::cluster_fit(data, 0, krng), UsageError);
    CHECK_THROWS_AS(lin::cluster_fit(data, 5, krng), UsageError);
}

namespace {

SeriesSet two_family_set(Rng& rng) {
    std::vector<std::vector<double>> train;
    for (std::size_t m = 0; m < 8; ++m) {   // smooth AR(1) family
        std::vector<double> v{rng.uniform(0.5, 1.5)};
        for (std::size_t t = 1; t < 48; ++t)
            v.push_back(0.2 + 0.85 * v.back() + 0.03 * rng.normal());
        train.push_back(std::move(v));
    }
    for (std::size_t m = 0; m < 8; ++m) {   // strongly seasonal family
        std::vector<double> v;
        const double amp = rng.uniform(0.8, 1.2);
        for (std::size_t t = 0; t < 48; ++t) {
            const double phase[4] = {1.0, -1.0, 0.5, -0.5};
            v.push_back(2.0 + amp * phase[t % 4] + 0.03 * rng.normal());
        }
        train.push_back(std::move(v));
    }
    return lin::embed_series(train, {}, losses::Frequency::quarterly, 4);
}

} // namespace

TEST_CASE("k-means separates distinct series families cleanly") {
    Rng rng(808);
    const SeriesSet data = two_family_set(rng);
    Rng krng(3);
    const lin::ClusterModel cm = lin::cluster_fit(data, 2, krng);
    // Purity 1.0: each family lands in a single cluster.
    for (std::size_t m = 1; m < 8; ++m) CHECK(cm.labels[m] == cm.labels[0]);
    for (std::size_t m = 9; m < 16; ++m) CHECK(cm.labels[m] == cm.labels[8]);
    CHECK(cm.labels[0] != cm.labels[8]);

    // One latent degree matches two-way localization on this instance.
    const lin::AlsResult fit = lin::als_fit(data, 1);
    CHECK(lin::pooled_sse(fit.model, data) <= lin::cluster_sse(cm, data) + 1e-8);
}

TEST_CASE("absolute-error fine-tuning never ends worse than it starts") {
    Rng rng(909);
    const SeriesSet data = make_ar_set(5, 0.1, rng);
    lin::AlsResult fit = lin::als_fit(data, 1);

    lin::FineTuneConfig cfg;
    cfg.steps = 100;
    const std::vector<double> trace = lin::mase_finetune(fit.model, data, cfg);
    REQUIRE(trace.size() == 101);
    CHECK(lin::mean_abs_objective(fit.model, data) <= trace.front() + 1e-15);

    lin::LinearMtMs before = fit.model;
    lin::FineTuneConfig off;
    off.enabled = false;
    const std::vector<double> t2 = lin::mase_finetune(fit.model, data, off);
    CHECK(t2.size() == 1);
    CHECK(fit.model.omega_b == before.omega_b);
}

TEST_CASE("joint nonlinear training matches the closed-form objective") {
    // The tape-trained affine hypernetwork and the alternating solver share
    // one optimum, so their converged objectives must agree.
    Rng rng(1122);
    Rng drng = rng.substream("data");
    const SeriesSet data = [&] {
        std::vector<std::vector<double>> train;
        for (std::size_t m = 0; m < 3; ++m) {
            std::vector<double> v{drng.uniform(0.5, 1.0)};
            const double phi = 0.3 + 0.25 * static_cast<double>(m);
            for (std::size_t t = 1; t < 28; ++t)
                v.push_back(0.1 + phi * v.back() + 0.05 * drng.normal());
            train.push_back(std::move(v));
        }
        return lin::embed_series(train, {}, losses::Frequency::yearly, 1);
    }();
    const lin::AlsResult fit = lin::als_fit(data, 1);
    std::size_t total_rows = 0;
    for (const lin::Series& s : data.series) total_rows += s.y.size();
    const double als_mean_mse =
        lin::pooled_sse(fit.model, data) / static_cast<double>(total_rows);

    TaskBundle bundle;
    for (const lin::Series& s : data.series) {
        Task t;
        t.x = s.x;
        t.y = Array2(s.y.size(), 1);
        for (std::size_t r = 0; r < s.y.size(); ++r) t.y(r, 0) = s.y[r];
        t.train_rows = s.y.size();
        bundle.tasks.push_back(std::move(t));
    }
    nn::MlpSpec base;
    base.layer_sizes = {data.p(), 1};
    base.activation = nn::Activation::none;

    Phase1Config p1;
    p1.val_fraction = 0.0;
    p1.max_epochs = 3000;
    p1.patience = 500;
    Rng r1 = rng.substream("phase1");
    const Phase1Result pooled = train_phase1(bundle, base, LossKind::mse, p1, r1);

    Rng rmk = rng.substream("make");
    MtMsModel model = make_mtms(base, 1, Connection::all(base), pooled.beta, 3, rmk);
    Phase2Config p2;
    p2.val_fraction = 0.0;
    p2.max_epochs = 3000;
    p2.patience = 400;
    Rng r2 = rng.substream("phase2");
    train_phase2(bundle, model, LossKind::mse, p2, r2);

    double mtms_loss = 0.0;
    for (std::size_t m = 0; m < 3; ++m) {
        const Array2 pred = model.predict(m, bundle.tasks[m].x);
        double acc = 0.0;
        for (std::size_t r = 0; r < pred.rows(); ++r) {
            const double d = pred(r, 0) - bundle.tasks[m].y(r, 0);
            acc += d * d;
        }
        mtms_loss += acc / static_cast<double>(pred.rows());
    }
    mtms_loss /= 3.0;
    // Equal series lengths make the two objectives directly comparable.
    CHECK(std::abs(mtms_loss - als_mean_mse) <= 1e-4 * std::max(1.0, als_mean_mse));
}
