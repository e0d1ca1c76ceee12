#include "mtms/losses.hpp"

#include "mtms/errors.hpp"
#include "mtms/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace mtms;
using namespace mtms::losses;

TEST_CASE("mse hand values") {
    CHECK(mse({1.0, 2.0}, {1.0, 2.0}) == 0.0);
    CHECK(mse({0.0, 0.0}, {1.0, 1.0}) == doctest::Approx(1.0));
    CHECK(mse({1.0, 3.0}, {2.0, 5.0}) == doctest::Approx(2.5));
    CHECK_THROWS_AS(mse({1.0}, {1.0, 2.0}), UsageError);
}

TEST_CASE("rps exact calibration values") {
    const std::vector<double> uniform(5, 0.2);
    const double expected[5] = {0.24, 0.12, 0.08, 0.12, 0.24};
    double mean = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
        std::vector<double> outcome(5, 0.0);
        outcome[k] = 1.0;
        const double score = rps(uniform, outcome);
        CHECK(std::fabs(score - expected[k]) <= 1e-12);
        mean += score;
    }
    mean /= 5.0;
    CHECK(std::fabs(mean - 0.16) <= 1e-12);
}

TEST_CASE("rps of a perfect forecast is zero") {
    std::vector<double> outcome(5, 0.0);
    outcome[3] = 1.0;
    CHECK(rps(outcome, outcome) == 0.0);
}

TEST_CASE("rps is invariant under simultaneous order reversal") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(5);
        double total = 0.0;
        for (double& v : p) {
            v = rng.uniform();
            total += v;
        }
        for (double& v : p) v /= total;
        std::vector<double> o(5, 0.0);
        o[static_cast<std::size_t>(rng.uniform_below(5))] = 1.0;

        auto pr = p;
        auto orv = o;
        std::reverse(pr.begin(), pr.end());
        std::reverse(orv.begin(), orv.end());
        CHECK(rps(p, o) == doctest::Approx(rps(pr, orv)).epsilon(1e-12));
    }
}

TEST_CASE("rps input validation") {
    const std::vector<double> uniform(5, 0.2);
    std::vector<double> outcome(5, 0.0);
    outcome[0] = 1.0;

    std::vector<double> negative = {-0.1, 0.3, 0.3, 0.3, 0.2};
    CHECK_THROWS_AS(rps(negative, outcome), UsageError);

    std::vector<double> not_simplex = {0.3, 0.3, 0.3, 0.3, 0.3};
    CHECK_THROWS_AS(rps(not_simplex, outcome), UsageError);

    std::vector<double> two_hot(5, 0.0);
    two_hot[0] = 1.0;
    two_hot[1] = 1.0;
    CHECK_THROWS_AS(rps(uniform, two_hot), UsageError);

    std::vector<double> soft_outcome = {0.5, 0.5, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(rps(uniform, soft_outcome), UsageError);
}

TEST_CASE("rps_mean averages rows") {
    Array2 pred(2, 5, 0.2);
    Array2 outcome(2, 5, 0.0);
    outcome(0, 0) = 1.0;   // 0.24
    outcome(1, 2) = 1.0;   // 0.08
    CHECK(rps_mean(pred, outcome) == doctest::Approx(0.16).epsilon(1e-12));
}

TEST_CASE("mase scale and score") {
    const MaseScale s = mase_scale({2.0, 4.0, 6.0, 8.0}, 1);
    CHECK(s.scale == doctest::Approx(2.0));
    // test-set absolute errors 1 and 3 against scale 2 give MASE 1.0
    CHECK(mase({9.0, 15.0}, {10.0, 12.0}, s) == doctest::Approx(1.0));
    CHECK(mase({10.0, 12.0}, {10.0, 12.0}, s) == 0.0);
}

TEST_CASE("seasonal-naive forecast on the training segment scores MASE 1") {
    Rng rng(17);
    for (std::size_t period : {std::size_t{1}, std::size_t{4}, std::size_t{12}}) {
        std::vector<double> series(60);
        for (double& v : series) v = rng.uniform(-3.0, 3.0);
        const MaseScale s = mase_scale(series, period);
        std::vector<double> forecast, actual;
        for (std::size_t t = period; t < series.size(); ++t) {
            forecast.push_back(series[t - period]);
            actual.push_back(series[t]);
        }
        CHECK(mase(forecast, actual, s) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mase degeneracy errors") {
    CHECK_THROWS_AS(mase_scale({3.0, 3.0, 3.0, 3.0}, 1), NumericError);
    CHECK_THROWS_AS(mase_scale({1.0, 2.0}, 4), NumericError);
    CHECK_THROWS_AS(mase_scale({1.0, 2.0, 3.0}, 0), UsageError);
}

TEST_CASE("frequency seasonal periods") {
    CHECK(seasonal_period(Frequency::yearly) == 1);
    CHECK(seasonal_period(Frequency::quarterly) == 4);
    CHECK(seasonal_period(Frequency::monthly) == 12);
    CHECK(seasonal_period(Frequency::weekly) == 1);
    CHECK(frequency_from_string("monthly") == Frequency::monthly);
    CHECK_THROWS_AS(frequency_from_string("daily"), UsageError);
    CHECK(std::string(frequency_to_string(Frequency::weekly)) == "weekly");
}
