#include "mtms/autodiff.hpp"

#include "mtms/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace mtms::ad {

namespace {
const char* op_name(int op);
} // namespace

Tape::Node& Tape::node(NodeId id) {
    if (id >= nodes_.size()) throw UsageError("tape: node id out of range");
    return nodes_[id];
}

const Tape::Node& Tape::node(NodeId id) const {
    if (id >= nodes_.size()) throw UsageError("tape: node id out of range");
    return nodes_[id];
}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

std::string Tape::describe(NodeId id) const {
    const Node& n = nodes_[id];
    std::string s = op_name(static_cast<int>(n.op));
    s += "(node ";
    s += std::to_string(id);
    if (!n.name.empty()) {
        s += " '";
        s += n.name;
        s += '\'';
    }
    s += ')';
    return s;
}

NodeId Tape::leaf(std::string name, std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw UsageError("leaf '" + name + "': zero-sized shape");
    Node n;
    n.op = Op::leaf;
    n.name = std::move(name);
    n.rows = rows;
    n.cols = cols;
    return push(std::move(n));
}

NodeId Tape::constant(std::string name, Array2 value) {
    if (value.empty()) throw UsageError("constant '" + name + "': empty value");
    Node n;
    n.op = Op::constant;
    n.name = std::move(name);
    n.rows = value.rows();
    n.cols = value.cols();
    n.value = std::move(value);
    n.bound = true;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.cols != nb.rows) {
        throw UsageError("matmul(" + describe(a) + ", " + describe(b) + "): inner dims " +
                         std::to_string(na.cols) + " vs " + std::to_string(nb.rows));
    }
    Node n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = nb.cols;
    return push(std::move(n));
}

NodeId Tape::add_bias_row(NodeId x, NodeId bias) {
    const Node& nx = node(x);
    const Node& nb = node(bias);
    if (nb.rows != 1 || nb.cols != nx.cols) {
        throw UsageError("add_bias_row(" + describe(x) + ", " + describe(bias) +
                         "): bias must be 1x" + std::to_string(nx.cols));
    }
    Node n;
    n.op = Op::add_bias_row;
    n.a = x;
    n.b = bias;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) {
        throw UsageError("add(" + describe(a) + ", " + describe(b) + "): shape mismatch");
    }
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) {
        throw UsageError("sub(" + describe(a) + ", " + describe(b) + "): shape mismatch");
    }
    Node n;
    n.op = Op::sub;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) {
        throw UsageError("mul(" + describe(a) + ", " + describe(b) + "): shape mismatch");
    }
    Node n;
    n.op = Op::mul;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double c) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::scale;
    n.a = x;
    n.c = c;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::leaky_relu(NodeId x, double slope) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::leaky_relu;
    n.a = x;
    n.c = slope;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::relu;
    n.a = x;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::softmax_rows(NodeId x) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::softmax_rows;
    n.a = x;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::dropout(NodeId x, double rate) {
    if (rate < 0.0 || rate >= 1.0) {
        throw UsageError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    const Node& nx = node(x);
    Node n;
    n.op = Op::dropout;
    n.a = x;
    n.c = rate;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
    node(x);
    Node n;
    n.op = Op::sum;
    n.a = x;
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

NodeId Tape::square(NodeId x) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::square;
    n.a = x;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::abs(NodeId x) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::abs;
    n.a = x;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::log(NodeId x) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::log;
    n.a = x;
    n.rows = nx.rows;
    n.cols = nx.cols;
    return push(std::move(n));
}

NodeId Tape::slice_cols(NodeId x, std::size_t begin, std::size_t len) {
    const Node& nx = node(x);
    if (len == 0 || begin + len > nx.cols) {
        throw UsageError("slice_cols(" + describe(x) + "): range [" + std::to_string(begin) +
                         ", " + std::to_string(begin + len) + ") exceeds " +
                         std::to_string(nx.cols) + " cols");
    }
    Node n;
    n.op = Op::slice_cols;
    n.a = x;
    n.begin = begin;
    n.rows = nx.rows;
    n.cols = len;
    return push(std::move(n));
}

NodeId Tape::reshape(NodeId x, std::size_t rows, std::size_t cols) {
    const Node& nx = node(x);
    if (rows * cols != nx.rows * nx.cols) {
        throw UsageError("reshape(" + describe(x) + "): element count mismatch");
    }
    Node n;
    n.op = Op::reshape;
    n.a = x;
    n.rows = rows;
    n.cols = cols;
    return push(std::move(n));
}

NodeId Tape::assemble(NodeId a, NodeId b,
                      std::vector<std::size_t> pos_a, std::vector<std::size_t> pos_b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != 1 || nb.rows != 1) {
        throw UsageError("assemble: inputs must be row vectors");
    }
    if (pos_a.size() != na.cols || pos_b.size() != nb.cols) {
        throw UsageError("assemble: position lists must match input lengths");
    }
    const std::size_t total = pos_a.size() + pos_b.size();
    std::vector<char> seen(total, 0);
    for (std::size_t p : pos_a) {
        if (p >= total || seen[p]) throw UsageError("assemble: positions must partition the output");
        seen[p] = 1;
    }
    for (std::size_t p : pos_b) {
        if (p >= total || seen[p]) throw UsageError("assemble: positions must partition the output");
        seen[p] = 1;
    }
    Node n;
    n.op = Op::assemble;
    n.a = a;
    n.b = b;
    n.pos_a = std::move(pos_a);
    n.pos_b = std::move(pos_b);
    n.rows = 1;
    n.cols = total;
    return push(std::move(n));
}

void Tape::bind(NodeId id, Array2 value) {
    Node& n = node(id);
    if (n.op != Op::leaf) throw UsageError("bind: " + describe(id) + " is not a leaf");
    if (value.rows() != n.rows || value.cols() != n.cols) {
        throw UsageError("bind: " + describe(id) + " expects " + std::to_string(n.rows) + "x" +
                         std::to_string(n.cols) + ", got " + std::to_string(value.rows()) + "x" +
                         std::to_string(value.cols()));
    }
    n.value = std::move(value);
    n.bound = true;
}

void Tape::check_finite(NodeId id) const {
    const Node& n = nodes_[id];
    for (double v : n.value.flat()) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value in " + describe(id));
        }
    }
}

void Tape::mark_ancestors(NodeId output) {
    needed_.assign(nodes_.size(), 0);
    needed_[output] = 1;
    for (NodeId id = output + 1; id-- > 0;) {
        if (!needed_[id]) continue;
        const Node& n = nodes_[id];
        if (n.a != kNoNode) needed_[n.a] = 1;
        if (n.b != kNoNode) needed_[n.b] = 1;
    }
}

void Tape::eval_node(NodeId id, Mode mode, Rng* rng) {
    Node& n = nodes_[id];
    const auto& K = kernels::active();
    auto ensure = [&](Array2& a) {
        if (a.rows() != n.rows || a.cols() != n.cols) a = Array2(n.rows, n.cols);
    };
    switch (n.op) {
    case Op::leaf:
        if (!n.bound) throw UsageError("forward: unbound " + describe(id));
        break;
    case Op::constant:
        break;
    case Op::matmul: {
        const Node& a = nodes_[n.a];
        const Node& b = nodes_[n.b];
        ensure(n.value);
        n.value.fill(0.0);
        K.matmul_nn(a.value.data(), b.value.data(), n.value.data(), a.rows, a.cols, b.cols);
        break;
    }
    case Op::add_bias_row: {
        const Node& x = nodes_[n.a];
        const Node& bias = nodes_[n.b];
        ensure(n.value);
        for (std::size_t i = 0; i < n.rows; ++i) {
            K.add(x.value.row(i), bias.value.data(), n.value.row(i), n.cols);
        }
        break;
    }
    case Op::add: {
        ensure(n.value);
        K.add(nodes_[n.a].value.data(), nodes_[n.b].value.data(), n.value.data(), n.value.size());
        break;
    }
    case Op::sub: {
        ensure(n.value);
        K.sub(nodes_[n.a].value.data(), nodes_[n.b].value.data(), n.value.data(), n.value.size());
        break;
    }
    case Op::mul: {
        ensure(n.value);
        K.mul(nodes_[n.a].value.data(), nodes_[n.b].value.data(), n.value.data(), n.value.size());
        break;
    }
    case Op::scale: {
        ensure(n.value);
        K.scale(n.c, nodes_[n.a].value.data(), n.value.data(), n.value.size());
        break;
    }
    case Op::leaky_relu: {
        ensure(n.value);
        K.leaky_relu(n.c, nodes_[n.a].value.data(), n.value.data(), n.value.size());
        break;
    }
    case Op::relu: {
        ensure(n.value);
        K.leaky_relu(0.0, nodes_[n.a].value.data(), n.value.data(), n.value.size());
        break;
    }
    case Op::softmax_rows: {
        const Node& x = nodes_[n.a];
        ensure(n.value);
        for (std::size_t i = 0; i < n.rows; ++i) {
            const double* xr = x.value.row(i);
            double* yr = n.value.row(i);
            double mx = xr[0];
            for (std::size_t j = 1; j < n.cols; ++j) mx = std::max(mx, xr[j]);
            double total = 0.0;
            for (std::size_t j = 0; j < n.cols; ++j) {
                yr[j] = std::exp(xr[j] - mx);
                total += yr[j];
            }
            for (std::size_t j = 0; j < n.cols; ++j) yr[j] /= total;
        }
        break;
    }
    case Op::dropout: {
        const Node& x = nodes_[n.a];
        ensure(n.value);
        if (mode == Mode::eval || n.c == 0.0) {
            n.mask = Array2();
            std::copy(x.value.flat().begin(), x.value.flat().end(), n.value.flat().begin());
        } else {
            if (rng == nullptr) {
                throw UsageError("forward: train-mode " + describe(id) + " needs an rng");
            }
            if (n.mask.rows() != n.rows || n.mask.cols() != n.cols) n.mask = Array2(n.rows, n.cols);
            const double keep_scale = 1.0 / (1.0 - n.c);
            for (std::size_t i = 0; i < n.mask.size(); ++i) {
                n.mask.flat()[i] = rng->uniform() < n.c ? 0.0 : keep_scale;
            }
            K.mul(x.value.data(), n.mask.data(), n.value.data(), n.value.size());
        }
        break;
    }
    case Op::sum: {
        ensure(n.value);
        n.value(0, 0) = K.sum(nodes_[n.a].value.data(), nodes_[n.a].value.size());
        break;
    }
    case Op::square: {
        const Node& x = nodes_[n.a];
        ensure(n.value);
        K.mul(x.value.data(), x.value.data(), n.value.data(), n.value.size());
        break;
    }
    case Op::abs: {
        const Node& x = nodes_[n.a];
        ensure(n.value);
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            n.value.flat()[i] = std::fabs(x.value.flat()[i]);
        }
        break;
    }
    case Op::log: {
        const Node& x = nodes_[n.a];
        ensure(n.value);
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            n.value.flat()[i] = std::log(x.value.flat()[i]);
        }
        break;
    }
    case Op::slice_cols: {
        const Node& x = nodes_[n.a];
        ensure(n.value);
        for (std::size_t i = 0; i < n.rows; ++i) {
            const double* src = x.value.row(i) + n.begin;
            std::copy(src, src + n.cols, n.value.row(i));
        }
        break;
    }
    case Op::reshape: {
        const Node& x = nodes_[n.a];
        ensure(n.value);
        std::copy(x.value.flat().begin(), x.value.flat().end(), n.value.flat().begin());
        break;
    }
    case Op::assemble: {
        const Node& a = nodes_[n.a];
        const Node& b = nodes_[n.b];
        ensure(n.value);
        for (std::size_t i = 0; i < n.pos_a.size(); ++i) n.value.flat()[n.pos_a[i]] = a.value.flat()[i];
        for (std::size_t i = 0; i < n.pos_b.size(); ++i) n.value.flat()[n.pos_b[i]] = b.value.flat()[i];
        break;
    }
    }
    check_finite(id);
}

const Array2& Tape::forward(NodeId output, Mode mode, Rng* rng) {
    node(output);
    mark_ancestors(output);
    for (NodeId id = 0; id <= output; ++id) {
        if (needed_[id]) eval_node(id, mode, rng);
    }
    last_output_ = output;
    last_mode_ = mode;
    backward_armed_ = true;
    return nodes_[output].value;
}

void Tape::backward(const Array2& seed) {
    if (!backward_armed_) {
        throw UsageError(last_output_ == kNoNode
                             ? "backward: no forward has run on this tape"
                             : "backward: repeated call without a new forward");
    }
    Node& out = nodes_[last_output_];
    if (seed.rows() != out.rows || seed.cols() != out.cols) {
        throw UsageError("backward: seed shape mismatch for " + describe(last_output_));
    }
    for (NodeId id = 0; id <= last_output_; ++id) {
        if (!needed_[id]) continue;
        Node& n = nodes_[id];
        if (n.grad.rows() != n.rows || n.grad.cols() != n.cols) {
            n.grad = Array2(n.rows, n.cols);
        } else {
            n.grad.fill(0.0);
        }
    }
    out.grad = seed;
    for (NodeId id = last_output_ + 1; id-- > 0;) {
        if (needed_[id]) backprop_node(id);
    }
    backward_armed_ = false;
}

void Tape::backward(double seed) {
    Array2 s(1, 1);
    s(0, 0) = seed;
    backward(s);
}

void Tape::backprop_node(NodeId id) {
    Node& n = nodes_[id];
    const auto& K = kernels::active();
    const Array2& g = n.grad;
    switch (n.op) {
    case Op::leaf:
    case Op::constant:
        break;
    case Op::matmul: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        // dA += G·Bᵀ, dB += Aᵀ·G
        K.matmul_nt(g.data(), b.value.data(), a.grad.data(), a.rows, b.cols, a.cols);
        K.matmul_tn(a.value.data(), g.data(), b.grad.data(), a.cols, a.rows, b.cols);
        break;
    }
    case Op::add_bias_row: {
        Node& x = nodes_[n.a];
        Node& bias = nodes_[n.b];
        K.add(x.grad.data(), g.data(), x.grad.data(), g.size());
        for (std::size_t i = 0; i < n.rows; ++i) {
            K.add(bias.grad.data(), g.row(i), bias.grad.data(), n.cols);
        }
        break;
    }
    case Op::add: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        K.add(a.grad.data(), g.data(), a.grad.data(), g.size());
        K.add(b.grad.data(), g.data(), b.grad.data(), g.size());
        break;
    }
    case Op::sub: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        K.add(a.grad.data(), g.data(), a.grad.data(), g.size());
        K.axpy(-1.0, g.data(), b.grad.data(), g.size());
        break;
    }
    case Op::mul: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        scratch_.resize(g.size());
        K.mul(g.data(), b.value.data(), scratch_.data(), g.size());
        K.add(a.grad.data(), scratch_.data(), a.grad.data(), g.size());
        K.mul(g.data(), a.value.data(), scratch_.data(), g.size());
        K.add(b.grad.data(), scratch_.data(), b.grad.data(), g.size());
        break;
    }
    case Op::scale: {
        Node& x = nodes_[n.a];
        K.axpy(n.c, g.data(), x.grad.data(), g.size());
        break;
    }
    case Op::leaky_relu: {
        Node& x = nodes_[n.a];
        K.leaky_relu_grad(n.c, x.value.data(), g.data(), x.grad.data(), g.size());
        break;
    }
    case Op::relu: {
        Node& x = nodes_[n.a];
        K.leaky_relu_grad(0.0, x.value.data(), g.data(), x.grad.data(), g.size());
        break;
    }
    case Op::softmax_rows: {
        Node& x = nodes_[n.a];
        for (std::size_t i = 0; i < n.rows; ++i) {
            const double* yr = n.value.row(i);
            const double* gr = g.row(i);
            double* gx = x.grad.row(i);
            const double s = K.dot(gr, yr, n.cols);
            for (std::size_t j = 0; j < n.cols; ++j) gx[j] += yr[j] * (gr[j] - s);
        }
        break;
    }
    case Op::dropout: {
        Node& x = nodes_[n.a];
        if (n.mask.empty()) {
            K.add(x.grad.data(), g.data(), x.grad.data(), g.size());
        } else {
            scratch_.resize(g.size());
            K.mul(g.data(), n.mask.data(), scratch_.data(), g.size());
            K.add(x.grad.data(), scratch_.data(), x.grad.data(), g.size());
        }
        break;
    }
    case Op::sum: {
        Node& x = nodes_[n.a];
        const double s = g(0, 0);
        for (double& gv : x.grad.flat()) gv += s;
        break;
    }
    case Op::square: {
        Node& x = nodes_[n.a];
        scratch_.resize(g.size());
        K.mul(g.data(), x.value.data(), scratch_.data(), g.size());
        K.axpy(2.0, scratch_.data(), x.grad.data(), g.size());
        break;
    }
    case Op::abs: {
        Node& x = nodes_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xv = x.value.flat()[i];
            const double sign = xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0);
            x.grad.flat()[i] += g.flat()[i] * sign;
        }
        break;
    }
    case Op::log: {
        Node& x = nodes_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) {
            x.grad.flat()[i] += g.flat()[i] / x.value.flat()[i];
        }
        break;
    }
    case Op::slice_cols: {
        Node& x = nodes_[n.a];
        for (std::size_t i = 0; i < n.rows; ++i) {
            K.add(x.grad.row(i) + n.begin, g.row(i), x.grad.row(i) + n.begin, n.cols);
        }
        break;
    }
    case Op::reshape: {
        Node& x = nodes_[n.a];
        K.add(x.grad.data(), g.data(), x.grad.data(), g.size());
        break;
    }
    case Op::assemble: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        for (std::size_t i = 0; i < n.pos_a.size(); ++i) a.grad.flat()[i] += g.flat()[n.pos_a[i]];
        for (std::size_t i = 0; i < n.pos_b.size(); ++i) b.grad.flat()[i] += g.flat()[n.pos_b[i]];
        break;
    }
    }
}

const Array2& Tape::value(NodeId id) const {
    const Node& n = node(id);
    if (n.value.empty()) throw UsageError("value: " + describe(id) + " has not been evaluated");
    return n.value;
}

const Array2& Tape::grad(NodeId id) const {
    const Node& n = node(id);
    if (n.grad.empty()) throw UsageError("grad: " + describe(id) + " has no gradient");
    return n.grad;
}

namespace {
const char* op_name(int op) {
    static const char* names[] = {
        "leaf", "constant", "matmul", "add_bias_row", "add", "sub", "mul", "scale",
        "leaky_relu", "relu", "softmax_rows", "dropout", "sum", "square", "abs", "log",
        "slice_cols", "reshape", "assemble",
    };
    return names[op];
}
} // namespace

} // namespace mtms::ad
