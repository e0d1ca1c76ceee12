#pragma once
// Reverse-mode autodiff over dense row-major arrays. A Tape is a retained
// graph: build the node structure once, then bind leaf values and run
// forward/backward repeatedly. Nodes evaluate in append order, which is a
// topological order by construction; backward walks the exact reverse.
// Shapes are checked eagerly at node creation, values are checked finite
// after every op.

#include "mtms/array2.hpp"
#include "mtms/errors.hpp"
#include "mtms/rng.hpp"

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace mtms::ad {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class Mode { train, eval };

class Tape {
public:
    // Structure building. All shape mismatches throw UsageError naming the node.
    NodeId leaf(std::string name, std::size_t rows, std::size_t cols);
    NodeId constant(std::string name, Array2 value);

    NodeId matmul(NodeId a, NodeId b);                 // (m×k)·(k×n)
    NodeId add_bias_row(NodeId x, NodeId bias);        // bias is 1×cols, added to every row
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);                    // elementwise
    NodeId scale(NodeId x, double c);
    NodeId leaky_relu(NodeId x, double slope);
    NodeId relu(NodeId x);
    NodeId softmax_rows(NodeId x);                     // row-max subtracted before exp
    NodeId dropout(NodeId x, double rate);             // inverted dropout; identity in eval mode
    NodeId sum(NodeId x);                              // full reduction to 1×1
    NodeId square(NodeId x);
    NodeId abs(NodeId x);
    NodeId log(NodeId x);
    NodeId slice_cols(NodeId x, std::size_t begin, std::size_t len);
    NodeId reshape(NodeId x, std::size_t rows, std::size_t cols);
    // Scatter two row vectors into one 1×n output: out[pos_a[i]] = a[i],
    // out[pos_b[j]] = b[j]. Positions must partition [0, n).
    NodeId assemble(NodeId a, NodeId b,
                    std::vector<std::size_t> pos_a, std::vector<std::size_t> pos_b);

    void bind(NodeId leaf, Array2 value);              // shape-checked copy/move into the slot

    // Evaluates the ancestors of `output` in append order and returns its value.
    // rng is required when train mode reaches a dropout node with rate > 0.
    const Array2& forward(NodeId output, Mode mode = Mode::eval, Rng* rng = nullptr);

    // Seeds the last forward output and accumulates dL/dnode for every
    // ancestor. A second backward without an intervening forward throws.
    void backward(const Array2& seed);
    void backward(double seed);                        // for 1×1 outputs

    const Array2& value(NodeId id) const;
    const Array2& grad(NodeId id) const;

    std::size_t rows(NodeId id) const { return node(id).rows; }
    std::size_t cols(NodeId id) const { return node(id).cols; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        leaf, constant, matmul, add_bias_row, add, sub, mul, scale,
        leaky_relu, relu, softmax_rows, dropout, sum, square, abs, log,
        slice_cols, reshape, assemble
    };

    struct Node {
        Op op;
        std::string name;
        NodeId a = kNoNode;
        NodeId b = kNoNode;
        std::size_t rows = 0;
        std::size_t cols = 0;
        double c = 0.0;                       // scale factor, slope, or dropout rate
        std::size_t begin = 0;                // slice offset
        std::vector<std::size_t> pos_a;       // assemble destinations
        std::vector<std::size_t> pos_b;
        Array2 value;
        Array2 grad;
        Array2 mask;                          // dropout mask from the last train forward
        bool bound = false;
    };

    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    NodeId push(Node n);
    std::string describe(NodeId id) const;
    void check_finite(NodeId id) const;
    void mark_ancestors(NodeId output);
    void eval_node(NodeId id, Mode mode, Rng* rng);
    void backprop_node(NodeId id);

    std::vector<Node> nodes_;
    std::vector<char> needed_;
    std::vector<double> scratch_;
    NodeId last_output_ = kNoNode;
    Mode last_mode_ = Mode::eval;
    bool backward_armed_ = false;
};

} // namespace mtms::ad
