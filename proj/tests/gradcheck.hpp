#pragma once
// Shared finite-difference gradient checker: builds a random 3-layer network
// directly from tape ops, compares analytic gradients against central
// differences (h = 1e-5) for every parameter entry, and returns the max
// relative error. Instances whose hidden preactivations land within 1e-3 of
// an activation kink are deterministically resampled so the finite
// differences never straddle a nondifferentiable point.

#include "mtms/autodiff.hpp"
#include "mtms/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace gradcheck {

struct Instance {
    mtms::ad::Tape tape;
    std::vector<mtms::ad::NodeId> param_leaves;
    std::vector<mtms::Array2> param_values;
    std::vector<mtms::ad::NodeId> preacts;
    mtms::ad::NodeId loss = 0;
};

inline bool build_instance(std::uint64_t seed, Instance& inst) {
    using namespace mtms;
    Rng rng(seed);
    const std::size_t batch = 3;
    std::vector<std::size_t> sizes = {
        static_cast<std::size_t>(rng.uniform_int(2, 5)),
        static_cast<std::size_t>(rng.uniform_int(2, 6)),
        static_cast<std::size_t>(rng.uniform_int(2, 6)),
        static_cast<std::size_t>(rng.uniform_int(2, 5)),
    };
    const bool use_relu = rng.uniform() < 0.5;
    const bool use_softmax_ce = rng.uniform() < 0.5;

    ad::Tape& tape = inst.tape;
    Array2 xv(batch, sizes[0]);
    for (double& v : xv.flat()) v = rng.uniform(-2.0, 2.0);
    ad::NodeId h = tape.constant("x", xv);

    for (std::size_t l = 0; l < 3; ++l) {
        const std::size_t in = sizes[l], out = sizes[l + 1];
        Array2 wv(in, out), bv(1, out);
        const double w_scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& v : wv.flat()) v = rng.normal(0.0, w_scale);
        for (double& v : bv.flat()) v = rng.normal(0.0, 0.2);
        const ad::NodeId w = tape.leaf("W" + std::to_string(l), in, out);
        const ad::NodeId b = tape.leaf("b" + std::to_string(l), 1, out);
        tape.bind(w, wv);
        tape.bind(b, bv);
        inst.param_leaves.push_back(w);
        inst.param_leaves.push_back(b);
        inst.param_values.push_back(wv);
        inst.param_values.push_back(bv);
        h = tape.add_bias_row(tape.matmul(h, w), b);
        if (l < 2) {
            inst.preacts.push_back(h);
            h = use_relu ? tape.relu(h) : tape.leaky_relu(h, 0.01);
        }
    }

    if (use_softmax_ce) {
        const std::size_t classes = sizes[3];
        Array2 onehot(batch, classes, 0.0);
        for (std::size_t i = 0; i < batch; ++i) {
            onehot(i, static_cast<std::size_t>(rng.uniform_below(classes))) = 1.0;
        }
        const ad::NodeId probs = tape.softmax_rows(h);
        const ad::NodeId target = tape.constant("onehot", onehot);
        inst.loss = tape.scale(tape.sum(tape.mul(tape.log(probs), target)),
                               -1.0 / static_cast<double>(batch));
    } else {
        Array2 yv(batch, sizes[3]);
        for (double& v : yv.flat()) v = rng.uniform(-1.5, 1.5);
        const ad::NodeId target = tape.constant("y", yv);
        const ad::NodeId diff = tape.sub(h, target);
        inst.loss = tape.scale(tape.sum(tape.square(diff)),
                               1.0 / static_cast<double>(batch * sizes[3]));
    }

    tape.forward(inst.loss);
    for (const ad::NodeId pre : inst.preacts) {
        for (double v : tape.value(pre).flat()) {
            if (std::fabs(v) < 1e-3) return false;   // too close to an activation kink
        }
    }
    return true;
}

// Max relative gradient error for one random instance. Derived seeds are
// tried until the kink guard passes, so the result is still a pure function
// of `seed`.
inline double max_rel_error(std::uint64_t seed) {
    using namespace mtms;
    Instance inst;
    std::uint64_t derived = seed;
    while (!build_instance(derived, inst)) {
        inst = Instance{};
        derived += 1000003;
    }
    ad::Tape& tape = inst.tape;

    tape.forward(inst.loss);
    tape.backward(1.0);
    std::vector<Array2> analytic;
    analytic.reserve(inst.param_leaves.size());
    for (const ad::NodeId leaf : inst.param_leaves) analytic.push_back(tape.grad(leaf));

    const double h = 1e-5;
    double max_rel = 0.0;
    for (std::size_t p = 0; p < inst.param_leaves.size(); ++p) {
        const ad::NodeId leaf = inst.param_leaves[p];
        Array2 base = inst.param_values[p];
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double orig = base.flat()[i];
            base.flat()[i] = orig + h;
            tape.bind(leaf, base);
            const double up = tape.forward(inst.loss)(0, 0);
            base.flat()[i] = orig - h;
            tape.bind(leaf, base);
            const double down = tape.forward(inst.loss)(0, 0);
            base.flat()[i] = orig;
            tape.bind(leaf, base);
            const double numeric = (up - down) / (2.0 * h);
            const double exact = analytic[p].flat()[i];
            const double scale = std::max({std::fabs(exact), std::fabs(numeric), 1e-6});
            max_rel = std::max(max_rel, std::fabs(exact - numeric) / scale);
        }
    }
    return max_rel;
}

} // namespace gradcheck
