#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stlf/common.hpp"
#include "stlf/rng.hpp"

namespace stlf {

// ---------------------------------------------------------------------------
// Shape: rank 1..3, dense row-major.
// ---------------------------------------------------------------------------
class Shape {
 public:
    Shape() = default;
    explicit Shape(int a) : rank_(1), d_{a, 0, 0} { validate(); }
    Shape(int a, int b) : rank_(2), d_{a, b, 0} { validate(); }
    Shape(int a, int b, int c) : rank_(3), d_{a, b, c} { validate(); }

    int rank() const { return rank_; }
    int dim(int i) const { return d_[i]; }
    std::size_t size() const;

    // Rank-2 conveniences.
    int rows() const;
    int cols() const;

    bool operator==(const Shape& o) const;
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const;  // e.g. "2x3"

 private:
    void validate() const;
    int rank_ = 0;
    int d_[3] = {0, 0, 0};
};

// ---------------------------------------------------------------------------
// Tensor: immutable dense array of doubles plus an optional tape handle.
// Copies are cheap (shared buffer). A tensor "requires grad" exactly when it
// is attached to a live tape node.
// ---------------------------------------------------------------------------
class Tensor {
 public:
    Tensor() = default;

    static Tensor from_vector(std::vector<double> values, Shape shape);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);  // shape (1)
    // Zero-copy window into an existing buffer; rows [row0, row0+rows) of a
    // row-major (total_rows x cols) matrix.
    static Tensor matrix_view(std::shared_ptr<const std::vector<double>> buf,
                              std::size_t row0, int rows, int cols);

    const Shape& shape() const { return shape_; }
    int rank() const { return shape_.rank(); }
    std::size_t size() const { return shape_.size(); }
    int rows() const { return shape_.rows(); }
    int cols() const { return shape_.cols(); }

    const double* data() const;
    double at(int i) const;
    double at(int i, int j) const;
    double item() const;  // requires size() == 1

    bool defined() const { return buf_ != nullptr; }
    int node() const { return node_; }
    bool requires_grad() const { return node_ >= 0; }
    Tensor with_node(int node) const;
    Tensor detached() const { return with_node(-1); }

    std::vector<double> to_vector() const;

 private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> buf_;
    std::size_t offset_ = 0;
    int node_ = -1;
};

// ---------------------------------------------------------------------------
// Tape: define-by-run reverse-mode record. Rebuilt per forward pass; nodes
// are appended in execution order, which is therefore a topological order.
// Single-owner, single-threaded.
// ---------------------------------------------------------------------------
class Tape {
 public:
    using BackwardFn = std::function<void(const double* grad_out, Tape&)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const { return id_; }

    // Registers a leaf (parameter or checked input). Returns its node id.
    int watch_value(const Tensor& value);
    Tensor watch(const Tensor& value);  // convenience: value.with_node(id)

    int record(const Shape& out_shape, std::vector<int> parents, BackwardFn fn);

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be
    // scalar (size 1) and attached to this tape.
    void backward(const Tensor& root);

    bool has_grad(int node) const;
    // Gradient of the last backward() for `node`; zeros of the node's shape
    // if the node was unreachable from the root.
    Tensor grad(int node) const;

    // Accumulation buffer for a node, allocated (zeroed) on first use.
    // Intended for backward closures.
    double* grad_accum(int node, std::size_t n);

    // Introspection for tests.
    std::size_t num_nodes() const { return nodes_.size(); }
    const std::vector<int>& parents(int node) const;

 private:
    struct NodeRec {
        Shape shape;
        std::vector<int> parents;
        BackwardFn backward;  // empty for leaves
    };
    std::vector<NodeRec> nodes_;
    std::vector<std::vector<double>> grads_;
    std::uint64_t id_;
};

struct Param;

// ---------------------------------------------------------------------------
// Context threads the tape, the RNG (dropout) and mode flags through forward
// passes. A default-constructed Context is inference mode: nothing is
// recorded and dropout is the identity.
// ---------------------------------------------------------------------------
struct Context {
    Tape* tape = nullptr;
    Rng* rng = nullptr;
    bool training = false;
    // Set by grad_check: stochastic ops must refuse to run.
    bool deterministic_required = false;

    bool recording() const { return tape != nullptr; }
    Tensor use(const Param& p) const;
};

// A learnable tensor. `tape_id`/`node` cache the leaf registration on the
// current tape so one parameter used twice in a pass maps to one node.
struct Param {
    Tensor value;
    mutable std::uint64_t tape_id = 0;
    mutable int node = -1;

    Param() = default;
    explicit Param(Tensor v) : value(std::move(v)) {}
    void assign(Tensor v);  // replaces the value, drops the tape cache
};

// Gradient of `p` on `tape`; zeros if the parameter never entered the graph.
Tensor param_grad(const Tape& tape, const Param& p);

// ---------------------------------------------------------------------------
// Ops. All ops compute eagerly and, when ctx.tape is set and any input is
// attached to it, record a backward rule.
//
// Broadcast table for binary ops (add/sub/mul/div), documented once here:
//   a (any shape)  op  b (same shape)       elementwise
//   a (any shape)  op  b (size 1 scalar)    b broadcast over a
//   a (size 1)     op  b (any shape)        a broadcast over b
//   a (m,n)        op  b (n) or (1,n)       b broadcast across rows
//   a (m,n)        op  b (m,1)              b broadcast across columns
// Anything else raises DimensionError naming both shapes.
// ---------------------------------------------------------------------------
Tensor add(const Context& ctx, const Tensor& a, const Tensor& b);
Tensor sub(const Context& ctx, const Tensor& a, const Tensor& b);
Tensor mul(const Context& ctx, const Tensor& a, const Tensor& b);
Tensor div(const Context& ctx, const Tensor& a, const Tensor& b);

Tensor scale(const Context& ctx, const Tensor& x, double c);
Tensor tanh(const Context& ctx, const Tensor& x);
Tensor silu(const Context& ctx, const Tensor& x);
Tensor leaky_relu(const Context& ctx, const Tensor& x, double alpha = 0.01);

// Inverted dropout: in training mode survivors are scaled by 1/(1-p); in
// eval mode the op is the exact identity. p must lie in [0, 1).
Tensor dropout(const Context& ctx, const Tensor& x, double p);

// matmul: (m,k) x (k,n) -> (m,n). Backward: dA = G.B^T, dB = A^T.G.
Tensor matmul(const Context& ctx, const Tensor& a, const Tensor& b);
Tensor transpose(const Context& ctx, const Tensor& x);

// Fused y = x.W^T + b for (r,in) x, (out,in) W and (out) b; b may be empty
// (undefined tensor) for a bias-free map. This is the workhorse behind
// linear layers; equivalent to matmul(x, transpose(W)) + row-broadcast b.
Tensor affine(const Context& ctx, const Tensor& x, const Tensor& w, const Tensor& b);

// Reductions. axis = -1 reduces everything to a scalar (shape (1));
// axis 0/1 on rank-2 input drops that axis. min/max are non-differentiable
// pass-throughs: the subgradient is routed to the FIRST extremal element of
// each reduced slice (deterministic tie-break).
Tensor reduce_sum(const Context& ctx, const Tensor& x, int axis = -1);
Tensor reduce_mean(const Context& ctx, const Tensor& x, int axis = -1);
Tensor reduce_min(const Context& ctx, const Tensor& x, int axis = -1);
Tensor reduce_max(const Context& ctx, const Tensor& x, int axis = -1);

// Softmax along `axis` (rank-1: axis ignored). Each slice along that axis
// is max-shifted before exponentiation; output slices sum to 1.
Tensor softmax(const Context& ctx, const Tensor& x, int axis);

// Rows [r0, r1) of a rank-2 tensor. Backward scatters into those rows.
Tensor slice_rows(const Context& ctx, const Tensor& x, int r0, int r1);
Tensor concat_rows(const Context& ctx, const std::vector<Tensor>& parts);
Tensor concat_cols(const Context& ctx, const std::vector<Tensor>& parts);

// Embedding gather: out row k = table[indices[k], :]. Backward adds each
// output-row gradient into its source row.
Tensor embed_rows(const Context& ctx, const Tensor& table, const std::vector<int>& indices);

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    bool pass = false;
};

// Compares the analytic gradient of a scalar-valued f at x against central
// differences. f must be deterministic; a dropout op in training mode
// raises UsageError. Relative error uses denom max(|a|, |n|) and counts a
// pair as exact when both magnitudes are below 1e-7.
GradCheckReport grad_check(const std::function<Tensor(const Context&, const Tensor&)>& f,
                           const Tensor& x, double eps = 1e-5, double tol = 1e-4);

}  // namespace stlf
