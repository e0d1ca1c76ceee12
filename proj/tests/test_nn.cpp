#include "mtms/nn.hpp"

#include "mtms/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace mtms;
using namespace mtms::nn;

TEST_CASE("param layout covers the flat vector exactly") {
    MlpSpec spec;
    spec.layer_sizes = {6, 32, 8, 5};
    const ParamLayout layout = layout_of(spec);
    CHECK(layout.total == spec.param_count());
    CHECK(layout.total == 6u * 32 + 32 + 32u * 8 + 8 + 8u * 5 + 5);
    std::size_t expected_begin = 0;
    for (const ParamSlice& s : layout.slices) {
        CHECK(s.begin == expected_begin);
        expected_begin += s.size();
    }
    CHECK(expected_begin == layout.total);
}

TEST_CASE("init schemes") {
    MlpSpec spec;
    spec.layer_sizes = {6, 32, 5};
    Rng rng(2);

    const ParamVector zeros = init_params(spec, InitScheme::zeros(), rng);
    for (double v : zeros.values) CHECK(v == 0.0);

    const ParamVector uni = init_params(spec, InitScheme::uniform(-1.0, 1.0), rng);
    bool nonzero = false;
    for (double v : uni.values) {
        CHECK(v >= -1.0);
        CHECK(v < 1.0);
        nonzero = nonzero || v != 0.0;
    }
    CHECK(nonzero);

    const ParamVector xav = init_params(spec, InitScheme::xavier_uniform(), rng);
    const ParamLayout layout = layout_of(spec);
    const double bound_first = std::sqrt(6.0 / (6.0 + 32.0));
    CHECK(bound_first == doctest::Approx(0.397360).epsilon(1e-5));
    for (const ParamSlice& s : layout.slices) {
        const double bound = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double v = xav.values[s.begin + i];
            if (s.is_bias) {
                CHECK(v == 0.0);
            } else {
                CHECK(std::fabs(v) <= bound);
            }
        }
    }

    Rng r1(9), r2(9);
    const ParamVector a = init_params(spec, InitScheme::xavier_uniform(), r1);
    const ParamVector b = init_params(spec, InitScheme::xavier_uniform(), r2);
    CHECK(a.values == b.values);
}

TEST_CASE("identity network reproduces its input") {
    MlpSpec spec;
    spec.layer_sizes = {3, 3};
    spec.activation = Activation::none;
    ParamVector params;
    params.values.assign(spec.param_count(), 0.0);
    for (std::size_t i = 0; i < 3; ++i) params.values[i * 3 + i] = 1.0;   // weights = I
    Rng rng(5);
    Array2 x(4, 3);
    for (double& v : x.flat()) v = rng.uniform(-2.0, 2.0);
    const Array2 y = mlp_eval(spec, params, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.flat()[i] == x.flat()[i]);
}

TEST_CASE("softmax head yields a probability simplex") {
    MlpSpec spec;
    spec.layer_sizes = {6, 32, 8, 5};
    spec.output_transform = OutputTransform::softmax;
    Rng rng(3);
    const ParamVector params = init_params(spec, InitScheme::xavier_uniform(), rng);
    Array2 x(7, 6);
    for (double& v : x.flat()) v = rng.uniform(-1.0, 1.0);
    const Array2 y = mlp_eval(spec, params, x);
    REQUIRE(y.cols() == 5);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < 5; ++j) row_sum += y(i, j);
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
    }

    ParamVector zero;
    zero.values.assign(spec.param_count(), 0.0);
    const Array2 uniform = mlp_eval(spec, zero, x);
    for (double v : uniform.flat()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("eval forward is pure") {
    MlpSpec spec;
    spec.layer_sizes = {4, 10, 2};
    spec.dropout_rate = 0.2;
    Rng rng(8);
    const ParamVector params = init_params(spec, InitScheme::xavier_uniform(), rng);
    Array2 x(5, 4);
    for (double& v : x.flat()) v = rng.uniform(-1.0, 1.0);
    const Array2 y1 = mlp_eval(spec, params, x);
    const Array2 y2 = mlp_eval(spec, params, x);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.flat()[i] == y2.flat()[i]);
}

TEST_CASE("dropout applies to hidden layers only") {
    MlpSpec spec;
    spec.layer_sizes = {4, 2};          // no hidden layer
    spec.dropout_rate = 0.5;
    Rng rng(1);
    const ParamVector params = init_params(spec, InitScheme::uniform(-1.0, 1.0), rng);
    Array2 x(3, 4);
    for (double& v : x.flat()) v = rng.uniform(-1.0, 1.0);

    ad::Tape tape;
    const ad::NodeId p = tape.leaf("params", 1, spec.param_count());
    const ad::NodeId in = tape.leaf("x", 3, 4);
    const ad::NodeId out = mlp_graph(tape, spec, p, in);
    tape.bind(p, Array2::from_rows(1, params.size(), params.values));
    tape.bind(in, x);
    Rng drop_rng(42);
    const Array2 train_out = tape.forward(out, ad::Mode::train, &drop_rng);
    const Array2 eval_out = tape.forward(out, ad::Mode::eval);
    for (std::size_t i = 0; i < train_out.size(); ++i) {
        CHECK(train_out.flat()[i] == eval_out.flat()[i]);
    }
}

TEST_CASE("mlp_graph gradient agrees with finite differences") {
    MlpSpec spec;
    spec.layer_sizes = {3, 5, 2};
    spec.activation = Activation::leaky_relu;
    Rng rng(21);
    ParamVector params = init_params(spec, InitScheme::xavier_uniform(), rng);
    Array2 x(4, 3), y(4, 2);
    for (double& v : x.flat()) v = rng.uniform(-2.0, 2.0);
    for (double& v : y.flat()) v = rng.uniform(-1.0, 1.0);

    ad::Tape tape;
    const ad::NodeId p = tape.leaf("params", 1, spec.param_count());
    const ad::NodeId in = tape.leaf("x", 4, 3);
    const ad::NodeId out = mlp_graph(tape, spec, p, in);
    const ad::NodeId loss = tape.scale(tape.sum(tape.square(tape.sub(out, tape.constant("y", y)))),
                                       1.0 / 8.0);
    tape.bind(in, x);

    auto eval_loss = [&](const std::vector<double>& values) {
        tape.bind(p, Array2::from_rows(1, values.size(), values));
        return tape.forward(loss)(0, 0);
    };

    eval_loss(params.values);
    tape.backward(1.0);
    const Array2 analytic = tape.grad(p);

    const double h = 1e-5;
    for (std::size_t i = 0; i < params.size(); i += 3) {   // every third entry keeps it quick
        auto probe = params.values;
        probe[i] += h;
        const double up = eval_loss(probe);
        probe[i] -= 2.0 * h;
        const double down = eval_loss(probe);
        const double numeric = (up - down) / (2.0 * h);
        CHECK(analytic(0, i) == doctest::Approx(numeric).epsilon(1e-4));
    }
}
