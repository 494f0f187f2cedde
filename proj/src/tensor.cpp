#include "stlf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace stlf {

namespace {

std::atomic<bool> g_finite_checks{false};
std::atomic<std::uint64_t> g_next_tape_id{1};

void check_finite(const char* op, const std::vector<double>& values) {
    if (!g_finite_checks.load(std::memory_order_relaxed)) return;
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

void Shape::validate() const {
    for (int i = 0; i < rank_; ++i) {
        if (d_[i] < 1) {
            throw DimensionError("shape dimensions must be positive, got " + str());
        }
    }
}

std::size_t Shape::size() const {
    if (rank_ == 0) return 0;
    std::size_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(d_[i]);
    return n;
}

int Shape::rows() const {
    if (rank_ != 2) throw DimensionError("rows() requires rank 2, got " + str());
    return d_[0];
}

int Shape::cols() const {
    if (rank_ != 2) throw DimensionError("cols() requires rank 2, got " + str());
    return d_[1];
}

bool Shape::operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i) {
        if (d_[i] != o.d_[i]) return false;
    }
    return true;
}

std::string Shape::str() const {
    if (rank_ == 0) return "()";
    std::ostringstream os;
    for (int i = 0; i < rank_; ++i) {
        if (i) os << 'x';
        os << d_[i];
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::from_vector(std::vector<double> values, Shape shape) {
    if (values.size() != shape.size()) {
        throw DimensionError("buffer of " + std::to_string(values.size()) +
                             " values does not fill shape " + shape.str());
    }
    Tensor t;
    t.shape_ = shape;
    t.buf_ = std::make_shared<const std::vector<double>>(std::move(values));
    return t;
}

Tensor Tensor::zeros(Shape shape) { return full(shape, 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    return from_vector(std::vector<double>(shape.size(), value), shape);
}

Tensor Tensor::scalar(double value) { return from_vector({value}, Shape(1)); }

Tensor Tensor::matrix_view(std::shared_ptr<const std::vector<double>> buf,
                           std::size_t row0, int rows, int cols) {
    Shape shape(rows, cols);
    const std::size_t offset = row0 * static_cast<std::size_t>(cols);
    if (!buf || offset + shape.size() > buf->size()) {
        throw DimensionError("matrix_view out of range");
    }
    Tensor t;
    t.shape_ = shape;
    t.buf_ = std::move(buf);
    t.offset_ = offset;
    return t;
}

const double* Tensor::data() const {
    if (!buf_) throw UsageError("access to an undefined tensor");
    return buf_->data() + offset_;
}

double Tensor::at(int i) const { return data()[i]; }

double Tensor::at(int i, int j) const {
    return data()[static_cast<std::size_t>(i) * shape_.cols() + j];
}

double Tensor::item() const {
    if (size() != 1) throw UsageError("item() requires a scalar, got " + shape_.str());
    return data()[0];
}

Tensor Tensor::with_node(int node) const {
    Tensor t(*this);
    t.node_ = node;
    return t;
}

std::vector<double> Tensor::to_vector() const {
    const double* p = data();
    return std::vector<double>(p, p + size());
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

int Tape::watch_value(const Tensor& value) {
    if (!value.defined()) throw UsageError("cannot watch an undefined tensor");
    nodes_.push_back(NodeRec{value.shape(), {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::watch(const Tensor& value) { return value.with_node(watch_value(value)); }

int Tape::record(const Shape& out_shape, std::vector<int> parents, BackwardFn fn) {
    nodes_.push_back(NodeRec{out_shape, std::move(parents), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& root) {
    if (root.node() < 0 || root.node() >= static_cast<int>(nodes_.size())) {
        throw UsageError("backward root is not attached to this tape");
    }
    if (root.size() != 1) {
        throw UsageError("backward requires a scalar root, got shape " + root.shape().str());
    }
    grads_.assign(nodes_.size(), {});
    grad_accum(root.node(), 1)[0] = 1.0;
    // Append order is topological, so one reverse sweep suffices.
    for (int i = root.node(); i >= 0; --i) {
        if (!grads_[i].empty() && nodes_[i].backward) {
            nodes_[i].backward(grads_[i].data(), *this);
        }
    }
}

bool Tape::has_grad(int node) const {
    return node >= 0 && node < static_cast<int>(grads_.size()) && !grads_[node].empty();
}

Tensor Tape::grad(int node) const {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) {
        throw UsageError("grad() of an unknown node");
    }
    const Shape& shape = nodes_[node].shape;
    if (!has_grad(node)) return Tensor::zeros(shape);
    return Tensor::from_vector(grads_[node], shape);
}

double* Tape::grad_accum(int node, std::size_t n) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    auto& g = grads_[node];
    if (g.empty()) g.assign(n, 0.0);
    return g.data();
}

const std::vector<int>& Tape::parents(int node) const { return nodes_[node].parents; }

void Param::assign(Tensor v) {
    value = std::move(v);
    tape_id = 0;
    node = -1;
}

Tensor Context::use(const Param& p) const {
    if (!tape) return p.value;
    if (p.tape_id != tape->id()) {
        p.node = tape->watch_value(p.value);
        p.tape_id = tape->id();
    }
    return p.value.with_node(p.node);
}

Tensor param_grad(const Tape& tape, const Param& p) {
    if (p.tape_id == tape.id() && p.node >= 0) return tape.grad(p.node);
    return Tensor::zeros(p.value.shape());
}

// ---------------------------------------------------------------------------
// Matmul kernels (row-major). All accumulate into a zero-initialized C.
// ---------------------------------------------------------------------------

namespace {

// C(m,n) += A(m,k) . B(k,n)
void kernel_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        double* cr = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

// C(m,n) += A(m,k) . B(n,k)^T
void kernel_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        double* cr = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* br = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] += acc;
        }
    }
}

// C(m,n) += A(k,m)^T . B(k,n)
void kernel_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* ar = a + static_cast<std::size_t>(p) * m;
        const double* br = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = ar[i];
            double* cr = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

void require_defined(const char* op, const Tensor& t) {
    if (!t.defined() || t.size() == 0) {
        throw DataError(std::string(op) + ": undefined or empty input tensor");
    }
}

std::vector<int> collect_parents(std::initializer_list<const Tensor*> inputs) {
    std::vector<int> parents;
    for (const Tensor* t : inputs) {
        if (t->node() >= 0) parents.push_back(t->node());
    }
    return parents;
}

bool any_grad(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Binary broadcast plan (see broadcast table in tensor.hpp).
// ---------------------------------------------------------------------------

enum class BKind { Same, AScalar, BScalar, BRow, BCol };

struct BinaryPlan {
    BKind kind;
    Shape out;
    int m = 0, n = 0;  // out dims when rank 2
};

BinaryPlan plan_binary(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return {BKind::Same, a};
    if (a.size() == 1) return {BKind::AScalar, b};
    if (b.size() == 1) return {BKind::BScalar, a};
    if (a.rank() == 2) {
        const int m = a.rows(), n = a.cols();
        if ((b.rank() == 1 && b.dim(0) == n) || (b.rank() == 2 && b.dim(0) == 1 && b.dim(1) == n)) {
            return {BKind::BRow, a, m, n};
        }
        if (b.rank() == 2 && b.dim(0) == m && b.dim(1) == 1) {
            return {BKind::BCol, a, m, n};
        }
    }
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

// Visits (out_index, a_index, b_index) for every output element.
template <class F>
void for_each_mapped(const BinaryPlan& p, F&& f) {
    const std::size_t total = p.out.size();
    switch (p.kind) {
        case BKind::Same:
            for (std::size_t i = 0; i < total; ++i) f(i, i, i);
            break;
        case BKind::AScalar:
            for (std::size_t i = 0; i < total; ++i) f(i, std::size_t{0}, i);
            break;
        case BKind::BScalar:
            for (std::size_t i = 0; i < total; ++i) f(i, i, std::size_t{0});
            break;
        case BKind::BRow:
            for (int i = 0; i < p.m; ++i)
                for (int j = 0; j < p.n; ++j) {
                    const std::size_t o = static_cast<std::size_t>(i) * p.n + j;
                    f(o, o, static_cast<std::size_t>(j));
                }
            break;
        case BKind::BCol:
            for (int i = 0; i < p.m; ++i)
                for (int j = 0; j < p.n; ++j) {
                    const std::size_t o = static_cast<std::size_t>(i) * p.n + j;
                    f(o, o, static_cast<std::size_t>(i));
                }
            break;
    }
}

enum class BinOp { Add, Sub, Mul, Div };

const char* bin_name(BinOp op) {
    switch (op) {
        case BinOp::Add: return "add";
        case BinOp::Sub: return "sub";
        case BinOp::Mul: return "mul";
        default: return "div";
    }
}

Tensor binary_op(const Context& ctx, const Tensor& a, const Tensor& b, BinOp op) {
    const char* name = bin_name(op);
    require_defined(name, a);
    require_defined(name, b);
    const BinaryPlan plan = plan_binary(name, a.shape(), b.shape());
    std::vector<double> out(plan.out.size());
    const double* pa = a.data();
    const double* pb = b.data();
    switch (op) {
        case BinOp::Add:
            for_each_mapped(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] + pb[j]; });
            break;
        case BinOp::Sub:
            for_each_mapped(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] - pb[j]; });
            break;
        case BinOp::Mul:
            for_each_mapped(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] * pb[j]; });
            break;
        case BinOp::Div:
            for_each_mapped(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] / pb[j]; });
            break;
    }
    check_finite(name, out);

    if (!ctx.recording() || !any_grad({&a, &b})) return Tensor::from_vector(std::move(out), plan.out);

    const int an = a.node(), bn = b.node();
    const std::size_t asz = a.size(), bsz = b.size();
    // Keep the value buffers alive for mul/div partials.
    Tensor av = a.detached(), bv = b.detached();
    auto fn = [plan, op, an, bn, asz, bsz, av, bv](const double* g, Tape& t) {
        double* da = an >= 0 ? t.grad_accum(an, asz) : nullptr;
        double* db = bn >= 0 ? t.grad_accum(bn, bsz) : nullptr;
        const double* pa = av.data();
        const double* pb = bv.data();
        for_each_mapped(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
            switch (op) {
                case BinOp::Add:
                    if (da) da[i] += g[o];
                    if (db) db[j] += g[o];
                    break;
                case BinOp::Sub:
                    if (da) da[i] += g[o];
                    if (db) db[j] -= g[o];
                    break;
                case BinOp::Mul:
                    if (da) da[i] += g[o] * pb[j];
                    if (db) db[j] += g[o] * pa[i];
                    break;
                case BinOp::Div:
                    if (da) da[i] += g[o] / pb[j];
                    if (db) db[j] -= g[o] * pa[i] / (pb[j] * pb[j]);
                    break;
            }
        });
    };
    const int id = ctx.tape->record(plan.out, collect_parents({&a, &b}), std::move(fn));
    return Tensor::from_vector(std::move(out), plan.out).with_node(id);
}

// Shared scaffolding for elementwise unary ops: fwd(x) -> y, dydx(x, y).
template <class Fwd, class Dydx>
Tensor unary_op(const Context& ctx, const Tensor& x, const char* name, Fwd fwd, Dydx dydx) {
    require_defined(name, x);
    const std::size_t n = x.size();
    std::vector<double> out(n);
    const double* px = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
    check_finite(name, out);
    Tensor y = Tensor::from_vector(std::move(out), x.shape());
    if (!ctx.recording() || !x.requires_grad()) return y;
    const int xn = x.node();
    Tensor xv = x.detached(), yv = y;
    auto fn = [xn, n, xv, yv, dydx](const double* g, Tape& t) {
        double* dx = t.grad_accum(xn, n);
        const double* px = xv.data();
        const double* py = yv.data();
        for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * dydx(px[i], py[i]);
    };
    const int id = ctx.tape->record(x.shape(), {xn}, std::move(fn));
    return y.with_node(id);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Context& ctx, const Tensor& a, const Tensor& b) { return binary_op(ctx, a, b, BinOp::Add); }
Tensor sub(const Context& ctx, const Tensor& a, const Tensor& b) { return binary_op(ctx, a, b, BinOp::Sub); }
Tensor mul(const Context& ctx, const Tensor& a, const Tensor& b) { return binary_op(ctx, a, b, BinOp::Mul); }
Tensor div(const Context& ctx, const Tensor& a, const Tensor& b) { return binary_op(ctx, a, b, BinOp::Div); }

Tensor scale(const Context& ctx, const Tensor& x, double c) {
    return unary_op(
        ctx, x, "scale", [c](double v) { return c * v; },
        [c](double, double) { return c; });
}

Tensor tanh(const Context& ctx, const Tensor& x) {
    return unary_op(
        ctx, x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor silu(const Context& ctx, const Tensor& x) {
    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    return unary_op(
        ctx, x, "silu", [sigmoid](double v) { return v * sigmoid(v); },
        [sigmoid](double v, double) {
            const double s = sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor leaky_relu(const Context& ctx, const Tensor& x, double alpha) {
    return unary_op(
        ctx, x, "leaky_relu", [alpha](double v) { return v > 0.0 ? v : alpha * v; },
        [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

Tensor dropout(const Context& ctx, const Tensor& x, double p) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("dropout probability must lie in [0,1), got " + std::to_string(p));
    }
    require_defined("dropout", x);
    if (!ctx.training || p == 0.0) return x;  // exact identity in eval mode
    if (ctx.deterministic_required) {
        throw UsageError("dropout in training mode is stochastic; disable it for gradient checks");
    }
    if (!ctx.rng) throw UsageError("dropout in training mode requires a Context rng");

    const std::size_t n = x.size();
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = ctx.rng->uniform() >= p ? keep_scale : 0.0;

    std::vector<double> out(n);
    const double* px = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = px[i] * mask[i];
    check_finite("dropout", out);
    Tensor y = Tensor::from_vector(std::move(out), x.shape());
    if (!ctx.recording() || !x.requires_grad()) return y;
    const int xn = x.node();
    auto fn = [xn, n, mask = std::move(mask)](const double* g, Tape& t) {
        double* dx = t.grad_accum(xn, n);
        for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * mask[i];
    };
    const int id = ctx.tape->record(x.shape(), {xn}, std::move(fn));
    return y.with_node(id);
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(const Context& ctx, const Tensor& a, const Tensor& b) {
    require_defined("matmul", a);
    require_defined("matmul", b);
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: incompatible shapes " + a.shape().str() + " and " +
                             b.shape().str());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    kernel_nn(a.data(), b.data(), out.data(), m, k, n);
    check_finite("matmul", out);
    const Shape shape(m, n);
    if (!ctx.recording() || !any_grad({&a, &b})) return Tensor::from_vector(std::move(out), shape);
    const int an = a.node(), bn = b.node();
    Tensor av = a.detached(), bv = b.detached();
    auto fn = [an, bn, av, bv, m, k, n](const double* g, Tape& t) {
        if (an >= 0) {
            double* da = t.grad_accum(an, static_cast<std::size_t>(m) * k);
            kernel_nt(g, bv.data(), da, m, n, k);  // dA = G . B^T
        }
        if (bn >= 0) {
            double* db = t.grad_accum(bn, static_cast<std::size_t>(k) * n);
            kernel_tn(av.data(), g, db, k, m, n);  // dB = A^T . G
        }
    };
    const int id = ctx.tape->record(shape, collect_parents({&a, &b}), std::move(fn));
    return Tensor::from_vector(std::move(out), shape).with_node(id);
}

Tensor transpose(const Context& ctx, const Tensor& x) {
    require_defined("transpose", x);
    if (x.rank() != 2) throw DimensionError("transpose requires rank 2, got " + x.shape().str());
    const int m = x.rows(), n = x.cols();
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    const double* px = x.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = px[static_cast<std::size_t>(i) * n + j];
    const Shape shape(n, m);
    if (!ctx.recording() || !x.requires_grad()) return Tensor::from_vector(std::move(out), shape);
    const int xn = x.node();
    auto fn = [xn, m, n](const double* g, Tape& t) {
        double* dx = t.grad_accum(xn, static_cast<std::size_t>(m) * n);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i) dx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    };
    const int id = ctx.tape->record(shape, {xn}, std::move(fn));
    return Tensor::from_vector(std::move(out), shape).with_node(id);
}

Tensor affine(const Context& ctx, const Tensor& x, const Tensor& w, const Tensor& b) {
    require_defined("affine", x);
    require_defined("affine", w);
    if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.cols()) {
        throw DimensionError("affine: x " + x.shape().str() + " incompatible with weight " +
                             w.shape().str());
    }
    const int r = x.rows(), in = x.cols(), out_dim = w.rows();
    const bool has_bias = b.defined();
    if (has_bias && !(b.rank() == 1 && b.shape().dim(0) == out_dim)) {
        throw DimensionError("affine: bias " + b.shape().str() + " incompatible with weight " +
                             w.shape().str());
    }
    std::vector<double> out(static_cast<std::size_t>(r) * out_dim, 0.0);
    kernel_nt(x.data(), w.data(), out.data(), r, in, out_dim);
    if (has_bias) {
        const double* pb = b.data();
        for (int i = 0; i < r; ++i) {
            double* row = out.data() + static_cast<std::size_t>(i) * out_dim;
            for (int j = 0; j < out_dim; ++j) row[j] += pb[j];
        }
    }
    check_finite("affine", out);
    const Shape shape(r, out_dim);
    if (!ctx.recording() || !any_grad({&x, &w, &b})) return Tensor::from_vector(std::move(out), shape);
    const int xn = x.node(), wn = w.node(), bn = has_bias ? b.node() : -1;
    Tensor xv = x.detached(), wv = w.detached();
    auto fn = [xn, wn, bn, xv, wv, r, in, out_dim](const double* g, Tape& t) {
        if (xn >= 0) {
            double* dx = t.grad_accum(xn, static_cast<std::size_t>(r) * in);
            kernel_nn(g, wv.data(), dx, r, out_dim, in);  // dX = G . W
        }
        if (wn >= 0) {
            double* dw = t.grad_accum(wn, static_cast<std::size_t>(out_dim) * in);
            kernel_tn(g, xv.data(), dw, out_dim, r, in);  // dW = G^T . X
        }
        if (bn >= 0) {
            double* db = t.grad_accum(bn, static_cast<std::size_t>(out_dim));
            for (int i = 0; i < r; ++i) {
                const double* row = g + static_cast<std::size_t>(i) * out_dim;
                for (int j = 0; j < out_dim; ++j) db[j] += row[j];
            }
        }
    };
    std::vector<int> parents = collect_parents({&x, &w});
    if (bn >= 0) parents.push_back(bn);
    const int id = ctx.tape->record(shape, std::move(parents), std::move(fn));
    return Tensor::from_vector(std::move(out), shape).with_node(id);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

struct ReducePlan {
    int axis;        // -1 = all
    int slices;      // number of independent reduced slices
    int slice_len;   // elements per slice
    Shape out;
    // Element index of (slice s, position p) in the input.
    std::size_t index(int s, int p, int in_cols) const {
        if (axis == -1) return static_cast<std::size_t>(p);
        if (axis == 0) return static_cast<std::size_t>(p) * in_cols + s;  // walk down a column
        return static_cast<std::size_t>(s) * in_cols + p;                 // walk along a row
    }
};

ReducePlan plan_reduce(const char* op, const Shape& in, int axis) {
    if (in.rank() == 1) {
        if (axis > 0) throw DimensionError(std::string(op) + ": axis out of range for " + in.str());
        return {-1, 1, in.dim(0), Shape(1)};
    }
    if (in.rank() != 2) throw DimensionError(std::string(op) + ": rank must be 1 or 2, got " + in.str());
    if (axis == -1) return {-1, 1, static_cast<int>(in.size()), Shape(1)};
    if (axis == 0) return {0, in.dim(1), in.dim(0), Shape(in.dim(1))};
    if (axis == 1) return {1, in.dim(0), in.dim(1), Shape(in.dim(0))};
    throw DimensionError(std::string(op) + ": axis out of range for " + in.str());
}

enum class RKind { Sum, Mean, Min, Max };

Tensor reduce_op(const Context& ctx, const Tensor& x, int axis, RKind kind, const char* name) {
    require_defined(name, x);
    const ReducePlan plan = plan_reduce(name, x.shape(), axis);
    const int in_cols = x.rank() == 2 ? x.cols() : 1;
    const double* px = x.data();
    std::vector<double> out(plan.slices);
    std::vector<int> arg(kind == RKind::Min || kind == RKind::Max ? plan.slices : 0);
    for (int s = 0; s < plan.slices; ++s) {
        switch (kind) {
            case RKind::Sum:
            case RKind::Mean: {
                double acc = 0.0;
                for (int p = 0; p < plan.slice_len; ++p) acc += px[plan.index(s, p, in_cols)];
                out[s] = kind == RKind::Mean ? acc / plan.slice_len : acc;
                break;
            }
            case RKind::Min:
            case RKind::Max: {
                double best = px[plan.index(s, 0, in_cols)];
                int best_p = 0;
                for (int p = 1; p < plan.slice_len; ++p) {
                    const double v = px[plan.index(s, p, in_cols)];
                    const bool better = kind == RKind::Min ? v < best : v > best;
                    if (better) {
                        best = v;
                        best_p = p;
                    }
                }
                out[s] = best;
                arg[s] = best_p;
                break;
            }
        }
    }
    check_finite(name, out);
    if (!ctx.recording() || !x.requires_grad()) return Tensor::from_vector(std::move(out), plan.out);
    const int xn = x.node();
    const std::size_t xsz = x.size();
    auto fn = [xn, xsz, plan, in_cols, kind, arg](const double* g, Tape& t) {
        double* dx = t.grad_accum(xn, xsz);
        for (int s = 0; s < plan.slices; ++s) {
            switch (kind) {
                case RKind::Sum:
                    for (int p = 0; p < plan.slice_len; ++p) dx[plan.index(s, p, in_cols)] += g[s];
                    break;
                case RKind::Mean:
                    for (int p = 0; p < plan.slice_len; ++p)
                        dx[plan.index(s, p, in_cols)] += g[s] / plan.slice_len;
                    break;
                case RKind::Min:
                case RKind::Max:
                    // Subgradient routed to the first extremal element.
                    dx[plan.index(s, arg[s], in_cols)] += g[s];
                    break;
            }
        }
    };
    const int id = ctx.tape->record(plan.out, {xn}, std::move(fn));
    return Tensor::from_vector(std::move(out), plan.out).with_node(id);
}

}  // namespace

Tensor reduce_sum(const Context& ctx, const Tensor& x, int axis) { return reduce_op(ctx, x, axis, RKind::Sum, "sum"); }
Tensor reduce_mean(const Context& ctx, const Tensor& x, int axis) { return reduce_op(ctx, x, axis, RKind::Mean, "mean"); }
Tensor reduce_min(const Context& ctx, const Tensor& x, int axis) { return reduce_op(ctx, x, axis, RKind::Min, "min"); }
Tensor reduce_max(const Context& ctx, const Tensor& x, int axis) { return reduce_op(ctx, x, axis, RKind::Max, "max"); }

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

Tensor softmax(const Context& ctx, const Tensor& x, int axis) {
    require_defined("softmax", x);
    ReducePlan plan = plan_reduce("softmax", x.shape(), x.rank() == 1 ? -1 : axis);
    const int in_cols = x.rank() == 2 ? x.cols() : 1;
    const double* px = x.data();
    std::vector<double> out(x.size());
    for (int s = 0; s < plan.slices; ++s) {
        double mx = px[plan.index(s, 0, in_cols)];
        for (int p = 1; p < plan.slice_len; ++p) mx = std::max(mx, px[plan.index(s, p, in_cols)]);
        double total = 0.0;
        for (int p = 0; p < plan.slice_len; ++p) {
            const std::size_t i = plan.index(s, p, in_cols);
            out[i] = std::exp(px[i] - mx);
            total += out[i];
        }
        for (int p = 0; p < plan.slice_len; ++p) out[plan.index(s, p, in_cols)] /= total;
    }
    check_finite("softmax", out);
    Tensor y = Tensor::from_vector(std::move(out), x.shape());
    if (!ctx.recording() || !x.requires_grad()) return y;
    const int xn = x.node();
    const std::size_t xsz = x.size();
    Tensor yv = y;
    auto fn = [xn, xsz, plan, in_cols, yv](const double* g, Tape& t) {
        double* dx = t.grad_accum(xn, xsz);
        const double* py = yv.data();
        for (int s = 0; s < plan.slices; ++s) {
            double dot = 0.0;
            for (int p = 0; p < plan.slice_len; ++p) {
                const std::size_t i = plan.index(s, p, in_cols);
                dot += g[i] * py[i];
            }
            for (int p = 0; p < plan.slice_len; ++p) {
                const std::size_t i = plan.index(s, p, in_cols);
                dx[i] += py[i] * (g[i] - dot);
            }
        }
    };
    const int id = ctx.tape->record(x.shape(), {xn}, std::move(fn));
    return y.with_node(id);
}

// ---------------------------------------------------------------------------
// Slicing / concatenation / gather
// ---------------------------------------------------------------------------

Tensor slice_rows(const Context& ctx, const Tensor& x, int r0, int r1) {
    require_defined("slice_rows", x);
    if (x.rank() != 2) throw DimensionError("slice_rows requires rank 2, got " + x.shape().str());
    const int m = x.rows(), n = x.cols();
    if (r0 < 0 || r1 > m || r0 >= r1) {
        throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                             ") invalid for " + x.shape().str());
    }
    const int rows = r1 - r0;
    std::vector<double> out(static_cast<std::size_t>(rows) * n);
    std::memcpy(out.data(), x.data() + static_cast<std::size_t>(r0) * n, out.size() * sizeof(double));
    const Shape shape(rows, n);
    if (!ctx.recording() || !x.requires_grad()) return Tensor::from_vector(std::move(out), shape);
    const int xn = x.node();
    auto fn = [xn, m, n, r0, rows](const double* g, Tape& t) {
        double* dx = t.grad_accum(xn, static_cast<std::size_t>(m) * n);
        for (int i = 0; i < rows; ++i) {
            double* dst = dx + static_cast<std::size_t>(r0 + i) * n;
            const double* src = g + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
    };
    const int id = ctx.tape->record(shape, {xn}, std::move(fn));
    return Tensor::from_vector(std::move(out), shape).with_node(id);
}

namespace {

Tensor concat_impl(const Context& ctx, const std::vector<Tensor>& parts, bool by_rows) {
    const char* name = by_rows ? "concat_rows" : "concat_cols";
    if (parts.empty()) throw DimensionError(std::string(name) + ": no parts");
    for (const Tensor& p : parts) {
        require_defined(name, p);
        if (p.rank() != 2) throw DimensionError(std::string(name) + ": parts must be rank 2");
    }
    const int fixed = by_rows ? parts[0].cols() : parts[0].rows();
    int total = 0;
    for (const Tensor& p : parts) {
        const int f = by_rows ? p.cols() : p.rows();
        if (f != fixed) {
            throw DimensionError(std::string(name) + ": mismatched shapes " +
                                 parts[0].shape().str() + " vs " + p.shape().str());
        }
        total += by_rows ? p.rows() : p.cols();
    }
    const Shape shape = by_rows ? Shape(total, fixed) : Shape(fixed, total);
    std::vector<double> out(shape.size());
    if (by_rows) {
        std::size_t off = 0;
        for (const Tensor& p : parts) {
            std::memcpy(out.data() + off, p.data(), p.size() * sizeof(double));
            off += p.size();
        }
    } else {
        int col0 = 0;
        for (const Tensor& p : parts) {
            const int pc = p.cols();
            for (int i = 0; i < fixed; ++i) {
                std::memcpy(out.data() + static_cast<std::size_t>(i) * total + col0,
                            p.data() + static_cast<std::size_t>(i) * pc,
                            static_cast<std::size_t>(pc) * sizeof(double));
            }
            col0 += pc;
        }
    }

    bool rec = ctx.recording();
    if (rec) {
        rec = false;
        for (const Tensor& p : parts) rec = rec || p.requires_grad();
    }
    if (!rec) return Tensor::from_vector(std::move(out), shape);

    struct PartInfo {
        int node;
        int rows, cols;
    };
    std::vector<PartInfo> infos;
    std::vector<int> parents;
    infos.reserve(parts.size());
    for (const Tensor& p : parts) {
        infos.push_back({p.node(), p.rows(), p.cols()});
        if (p.node() >= 0) parents.push_back(p.node());
    }
    const int total_cols = by_rows ? fixed : total;
    auto fn = [infos, by_rows, total_cols](const double* g, Tape& t) {
        std::size_t row_off = 0;
        int col_off = 0;
        for (const PartInfo& pi : infos) {
            if (pi.node >= 0) {
                double* dp = t.grad_accum(pi.node, static_cast<std::size_t>(pi.rows) * pi.cols);
                if (by_rows) {
                    const double* src = g + row_off * total_cols;
                    for (std::size_t k = 0; k < static_cast<std::size_t>(pi.rows) * pi.cols; ++k) dp[k] += src[k];
                } else {
                    for (int i = 0; i < pi.rows; ++i) {
                        const double* src = g + static_cast<std::size_t>(i) * total_cols + col_off;
                        double* dst = dp + static_cast<std::size_t>(i) * pi.cols;
                        for (int j = 0; j < pi.cols; ++j) dst[j] += src[j];
                    }
                }
            }
            row_off += pi.rows;
            col_off += pi.cols;
        }
    };
    const int id = ctx.tape->record(shape, std::move(parents), std::move(fn));
    return Tensor::from_vector(std::move(out), shape).with_node(id);
}

}  // namespace

Tensor concat_rows(const Context& ctx, const std::vector<Tensor>& parts) {
    return concat_impl(ctx, parts, true);
}

Tensor concat_cols(const Context& ctx, const std::vector<Tensor>& parts) {
    return concat_impl(ctx, parts, false);
}

Tensor embed_rows(const Context& ctx, const Tensor& table, const std::vector<int>& indices) {
    require_defined("embed_rows", table);
    if (table.rank() != 2) throw DimensionError("embed_rows: table must be rank 2");
    if (indices.empty()) throw DimensionError("embed_rows: no indices");
    const int card = table.rows(), d = table.cols();
    for (int idx : indices) {
        if (idx < 0 || idx >= card) {
            throw DataError("embed_rows: index " + std::to_string(idx) +
                            " outside table of size " + std::to_string(card));
        }
    }
    const int k = static_cast<int>(indices.size());
    std::vector<double> out(static_cast<std::size_t>(k) * d);
    const double* pt = table.data();
    for (int i = 0; i < k; ++i) {
        std::memcpy(out.data() + static_cast<std::size_t>(i) * d,
                    pt + static_cast<std::size_t>(indices[i]) * d,
                    static_cast<std::size_t>(d) * sizeof(double));
    }
    const Shape shape(k, d);
    if (!ctx.recording() || !table.requires_grad()) return Tensor::from_vector(std::move(out), shape);
    const int tn = table.node();
    auto fn = [tn, card, d, indices](const double* g, Tape& t) {
        double* dt = t.grad_accum(tn, static_cast<std::size_t>(card) * d);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            double* dst = dt + static_cast<std::size_t>(indices[i]) * d;
            const double* src = g + i * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    };
    const int id = ctx.tape->record(shape, {tn}, std::move(fn));
    return Tensor::from_vector(std::move(out), shape).with_node(id);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const Context&, const Tensor&)>& f,
                           const Tensor& x, double eps, double tol) {
    // Analytic pass.
    Tape tape;
    Context ctx;
    ctx.tape = &tape;
    ctx.training = true;
    ctx.deterministic_required = true;
    Tensor xw = tape.watch(x);
    Tensor out = f(ctx, xw);
    if (out.size() != 1) {
        throw UsageError("grad_check requires a scalar-valued function, got shape " +
                         out.shape().str());
    }
    tape.backward(out);
    const Tensor analytic = tape.grad(xw.node());

    // Central differences.
    Context eval_ctx;
    eval_ctx.training = true;
    eval_ctx.deterministic_required = true;
    std::vector<double> base = x.to_vector();
    GradCheckReport report;
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base, minus = base;
        plus[i] += eps;
        minus[i] -= eps;
        const double fp = f(eval_ctx, Tensor::from_vector(std::move(plus), x.shape())).item();
        const double fm = f(eval_ctx, Tensor::from_vector(std::move(minus), x.shape())).item();
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic.at(static_cast<int>(i));
        const double denom = std::max(std::abs(a), std::abs(numeric));
        const double err = denom < 1e-7 ? 0.0 : std::abs(a - numeric) / denom;
        if (err > report.max_rel_err) {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace stlf
