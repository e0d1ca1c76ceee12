#pragma once
// Dense MLP specs, flat parameter vectors with a slice layout, initialization
// schemes, and graph construction on a Tape. The params argument of mlp_graph
// is any 1×param_count node, so parameters may come from a bound leaf or from
// the output of another network.

#include "mtms/array2.hpp"
#include "mtms/autodiff.hpp"
#include "mtms/rng.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace mtms::nn {

enum class Activation { leaky_relu, relu, none };
enum class OutputTransform { none, softmax };

struct MlpSpec {
    std::vector<std::size_t> layer_sizes;   // input, hidden..., output
    Activation activation = Activation::leaky_relu;
    double leaky_slope = 0.01;
    OutputTransform output_transform = OutputTransform::none;
    double dropout_rate = 0.0;              // hidden layers only

    std::size_t input_size() const { return layer_sizes.front(); }
    std::size_t output_size() const { return layer_sizes.back(); }
    std::size_t affine_layers() const { return layer_sizes.size() - 1; }
    std::size_t param_count() const;
    void validate() const;
};

struct ParamSlice {
    std::size_t layer;
    bool is_bias;
    std::size_t begin;
    std::size_t rows;    // weight: in; bias: 1
    std::size_t cols;    // out
    std::size_t size() const { return rows * cols; }
};

struct ParamLayout {
    std::vector<ParamSlice> slices;          // per layer: weight then bias
    std::size_t total = 0;
};

ParamLayout layout_of(const MlpSpec& spec);

struct ParamVector {
    std::vector<double> values;
    std::size_t size() const { return values.size(); }
};

struct InitScheme {
    enum class Kind { zeros, uniform, xavier_uniform };
    Kind kind = Kind::zeros;
    double lo = 0.0;
    double hi = 0.0;

    static InitScheme zeros() { return {Kind::zeros, 0.0, 0.0}; }
    static InitScheme uniform(double a, double b) { return {Kind::uniform, a, b}; }
    static InitScheme xavier_uniform() { return {Kind::xavier_uniform, 0.0, 0.0}; }
};

// Deterministic given the rng state; weights drawn row-major slice by slice.
// xavier_uniform draws weights on ±sqrt(6/(in+out)) and zeroes biases.
ParamVector init_params(const MlpSpec& spec, const InitScheme& scheme, Rng& rng);

// Appends the network to the tape and returns the output node.
ad::NodeId mlp_graph(ad::Tape& tape, const MlpSpec& spec, ad::NodeId params, ad::NodeId x);

// One-shot eval-mode forward on a private tape.
Array2 mlp_eval(const MlpSpec& spec, const ParamVector& params, const Array2& x);

} // namespace mtms::nn
