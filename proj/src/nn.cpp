#include "mtms/nn.hpp"

#include "mtms/errors.hpp"

#include <cmath>

namespace mtms::nn {

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2) throw UsageError("MlpSpec: need at least input and output sizes");
    for (std::size_t s : layer_sizes) {
        if (s == 0) throw UsageError("MlpSpec: zero-width layer");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw UsageError("MlpSpec: dropout_rate must lie in [0, 1)");
    }
}

std::size_t MlpSpec::param_count() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        total += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    }
    return total;
}

ParamLayout layout_of(const MlpSpec& spec) {
    spec.validate();
    ParamLayout layout;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const std::size_t in = spec.layer_sizes[l];
        const std::size_t out = spec.layer_sizes[l + 1];
        layout.slices.push_back({l, false, offset, in, out});
        offset += in * out;
        layout.slices.push_back({l, true, offset, 1, out});
        offset += out;
    }
    layout.total = offset;
    return layout;
}

ParamVector init_params(const MlpSpec& spec, const InitScheme& scheme, Rng& rng) {
    const ParamLayout layout = layout_of(spec);
    ParamVector params;
    params.values.assign(layout.total, 0.0);
    switch (scheme.kind) {
    case InitScheme::Kind::zeros:
        break;
    case InitScheme::Kind::uniform:
        for (double& v : params.values) v = rng.uniform(scheme.lo, scheme.hi);
        break;
    case InitScheme::Kind::xavier_uniform:
        for (const ParamSlice& slice : layout.slices) {
            if (slice.is_bias) continue;
            const double bound = std::sqrt(6.0 / static_cast<double>(slice.rows + slice.cols));
            for (std::size_t i = 0; i < slice.size(); ++i) {
                params.values[slice.begin + i] = rng.uniform(-bound, bound);
            }
        }
        break;
    }
    return params;
}

ad::NodeId mlp_graph(ad::Tape& tape, const MlpSpec& spec, ad::NodeId params, ad::NodeId x) {
    spec.validate();
    if (tape.rows(params) != 1 || tape.cols(params) != spec.param_count()) {
        throw UsageError("mlp_graph: params node must be 1x" + std::to_string(spec.param_count()));
    }
    if (tape.cols(x) != spec.input_size()) {
        throw UsageError("mlp_graph: input has " + std::to_string(tape.cols(x)) +
                         " cols, spec expects " + std::to_string(spec.input_size()));
    }
    ad::NodeId h = x;
    std::size_t offset = 0;
    const std::size_t n_layers = spec.affine_layers();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t in = spec.layer_sizes[l];
        const std::size_t out = spec.layer_sizes[l + 1];
        const ad::NodeId w = tape.reshape(tape.slice_cols(params, offset, in * out), in, out);
        offset += in * out;
        const ad::NodeId b = tape.slice_cols(params, offset, out);
        offset += out;
        h = tape.add_bias_row(tape.matmul(h, w), b);
        if (l + 1 < n_layers) {
            switch (spec.activation) {
            case Activation::leaky_relu: h = tape.leaky_relu(h, spec.leaky_slope); break;
            case Activation::relu: h = tape.relu(h); break;
            case Activation::none: break;
            }
            if (spec.dropout_rate > 0.0) h = tape.dropout(h, spec.dropout_rate);
        }
    }
    if (spec.output_transform == OutputTransform::softmax) {
        h = tape.softmax_rows(h);
    }
    return h;
}

Array2 mlp_eval(const MlpSpec& spec, const ParamVector& params, const Array2& x) {
    ad::Tape tape;
    const ad::NodeId p = tape.leaf("params", 1, spec.param_count());
    const ad::NodeId in = tape.leaf("x", x.rows(), x.cols());
    const ad::NodeId out = mlp_graph(tape, spec, p, in);
    tape.bind(p, Array2::from_rows(1, params.size(), params.values));
    tape.bind(in, x);
    return tape.forward(out, ad::Mode::eval);
}

} // namespace mtms::nn
