#include "mtlk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mtlk {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

void require(bool ok, const char* op, const std::string& what) {
    if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

void require_2d(const Tensor& t, const char* op) {
    require(t.ndim() == 2, op, "expected a 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), op,
            "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

using NodePtr = std::shared_ptr<detail::TensorNode>;

void accumulate(const NodePtr& parent, const std::vector<double>& g) {
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) parent->grad[i] += g[i];
}

void accumulate_into(const NodePtr& parent, const double* g, std::size_t n) {
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) parent->grad[i] += g[i];
}

// C[m x n] += A[m x k] . B[k x n]
void mm_nn_acc(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] . B[n x k]^T
void mm_nt_acc(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T . B[m x n]
void mm_tn_acc(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tensor unary_op(const char* name, const Tensor& a, const std::function<double(double)>& f,
                const std::function<double(double, double)>& df_from_xy) {
    const auto& x = a.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    auto pa = a.node();
    return make_op(name, a.shape(), std::move(y), {a},
                   [pa, df_from_xy](detail::TensorNode& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (std::size_t i = 0; i < self.data.size(); ++i) {
                           pa->grad[i] += self.grad[i] * df_from_xy(pa->data[i], self.data[i]);
                       }
                   });
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- construction ---

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(shape_size(node->shape), value);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericalError("from_data: non-finite value");
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::randn(Shape shape, Rng& rng) {
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = rng.normal();
    return from_data(std::move(shape), std::move(values));
}

// --- accessors ---

const Shape& Tensor::shape() const {
    if (!node_) throw ValueError("shape: undefined tensor");
    return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::rows() const {
    require_2d(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_2d(*this, "cols");
    return node_->shape[1];
}

const std::vector<double>& Tensor::values() const {
    if (!node_) throw ValueError("values: undefined tensor");
    return node_->data;
}

std::vector<double>& Tensor::values_mut() {
    if (!node_) throw ValueError("values_mut: undefined tensor");
    if (!node_->leaf) throw ValueError("values_mut: only leaf tensors may be mutated");
    return node_->data;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " values");
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    require_2d(*this, "at");
    return node_->data[r * node_->shape[1] + c];
}

Tensor& Tensor::set_requires_grad(bool enabled) {
    if (!node_) throw ValueError("set_requires_grad: undefined tensor");
    if (!node_->leaf) throw ValueError("set_requires_grad: only valid on leaf tensors");
    node_->requires_grad = enabled;
    return *this;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ValueError("grad: no gradient present");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
    if (!node_) throw ValueError("detach: undefined tensor");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (!node_) throw ValueError("backward: undefined tensor");
    if (size() != 1) throw ValueError("backward: loss must be a scalar");

    if (node_->leaf) {
        if (node_->requires_grad) {
            node_->ensure_grad();
            node_->grad[0] += 1.0;
        }
        return;
    }

    // Post-order DFS; parents precede consumers in `order`.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    struct Frame {
        detail::TensorNode* node;
        std::size_t next_child;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_child < top.node->parents.size()) {
            detail::TensorNode* child = top.node->parents[top.next_child++].get();
            if (seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }

    // Non-leaf gradients are per-pass workspaces; leaves accumulate across
    // passes.
    for (detail::TensorNode* n : order) {
        if (!n->leaf) n->grad.assign(n->data.size(), 0.0);
    }
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (!n->leaf && n->backward_fn) n->backward_fn(*n);
    }
}

Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backward_fn) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericalError(std::string(name) + ": non-finite value in forward output");
        }
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = name;
    bool track = g_grad_enabled;
    if (track) {
        track = false;
        for (const Tensor& p : parents) track = track || p.requires_grad();
    }
    if (track) {
        node->leaf = false;
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const Tensor& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

// --- elementwise ---

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto& x = a.values();
    const auto& y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    auto pa = a.node(), pb = b.node();
    return make_op("add", a.shape(), std::move(out), {a, b},
                   [pa, pb](detail::TensorNode& self) {
                       accumulate(pa, self.grad);
                       accumulate(pb, self.grad);
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto& x = a.values();
    const auto& y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    auto pa = a.node(), pb = b.node();
    return make_op("sub", a.shape(), std::move(out), {a, b},
                   [pa, pb](detail::TensorNode& self) {
                       accumulate(pa, self.grad);
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                               pb->grad[i] -= self.grad[i];
                           }
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto& x = a.values();
    const auto& y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    auto pa = a.node(), pb = b.node();
    return make_op("mul", a.shape(), std::move(out), {a, b},
                   [pa, pb](detail::TensorNode& self) {
                       if (pa->requires_grad) {
                           pa->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                               pa->grad[i] += self.grad[i] * pb->data[i];
                           }
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                               pb->grad[i] += self.grad[i] * pa->data[i];
                           }
                       }
                   });
}

Tensor scale(const Tensor& a, double c) {
    const auto& x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * c;
    auto pa = a.node();
    return make_op("scale", a.shape(), std::move(out), {a},
                   [pa, c](detail::TensorNode& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           pa->grad[i] += self.grad[i] * c;
                       }
                   });
}

Tensor add_scalar(const Tensor& a, double c) {
    const auto& x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + c;
    auto pa = a.node();
    return make_op("add_scalar", a.shape(), std::move(out), {a},
                   [pa](detail::TensorNode& self) { accumulate(pa, self.grad); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor gelu(const Tensor& a) {
    return unary_op(
        "gelu", a,
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a,
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_act(const Tensor& a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor abs_val(const Tensor& a) {
    return unary_op(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor softplus(const Tensor& a) {
    return unary_op(
        "softplus", a,
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// --- shape ---

Tensor reshape(const Tensor& a, Shape shape) {
    require(shape_size(shape) == a.size(), "reshape",
            "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto pa = a.node();
    std::vector<double> out = a.values();
    return make_op("reshape", std::move(shape), std::move(out), {a},
                   [pa](detail::TensorNode& self) {
                       accumulate_into(pa, self.grad.data(), self.grad.size());
                   });
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    const auto& x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    auto pa = a.node();
    return make_op("transpose", {c, r}, std::move(out), {a},
                   [pa, r, c](detail::TensorNode& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (std::size_t j = 0; j < c; ++j)
                           for (std::size_t i = 0; i < r; ++i)
                               pa->grad[i * c + j] += self.grad[j * r + i];
                   });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    require_2d(a, "slice_rows");
    require(start + count <= a.rows(), "slice_rows", "row range out of bounds");
    const std::size_t c = a.cols();
    const auto& x = a.values();
    std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(start * c),
                            x.begin() + static_cast<std::ptrdiff_t>((start + count) * c));
    auto pa = a.node();
    return make_op("slice_rows", {count, c}, std::move(out), {a},
                   [pa, start, c](detail::TensorNode& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           pa->grad[start * c + i] += self.grad[i];
                       }
                   });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    require_2d(a, "slice_cols");
    require(start + count <= a.cols(), "slice_cols", "column range out of bounds");
    const std::size_t r = a.rows(), c = a.cols();
    const auto& x = a.values();
    std::vector<double> out(r * count);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * c + start + j];
    auto pa = a.node();
    return make_op("slice_cols", {r, count}, std::move(out), {a},
                   [pa, start, count, c](detail::TensorNode& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       const std::size_t r2 = self.shape[0];
                       for (std::size_t i = 0; i < r2; ++i)
                           for (std::size_t j = 0; j < count; ++j)
                               pa->grad[i * c + start + j] += self.grad[i * count + j];
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows", "no parts");
    const std::size_t c = parts[0].cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_rows");
        require(p.cols() == c, "concat_rows", "column mismatch");
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const Tensor& p : parts) {
        const auto& x = p.values();
        out.insert(out.end(), x.begin(), x.end());
    }
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    return make_op("concat_rows", {total, c}, std::move(out), parts,
                   [nodes](detail::TensorNode& self) {
                       std::size_t offset = 0;
                       for (const NodePtr& p : nodes) {
                           accumulate_into(p, self.grad.data() + offset, p->data.size());
                           offset += p->data.size();
                       }
                   });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols", "no parts");
    const std::size_t r = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols");
        require(p.rows() == r, "concat_cols", "row mismatch");
        total += p.cols();
    }
    std::vector<double> out(r * total);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.cols();
        const auto& x = p.values();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) out[i * total + offset + j] = x[i * pc + j];
        offset += pc;
    }
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return make_op("concat_cols", {r, total}, std::move(out), parts,
                   [nodes, widths, r, total](detail::TensorNode& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                           const NodePtr& p = nodes[k];
                           const std::size_t pc = widths[k];
                           if (p->requires_grad) {
                               p->ensure_grad();
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < pc; ++j)
                                       p->grad[i * pc + j] += self.grad[i * total + offset + j];
                           }
                           offset += pc;
                       }
                   });
}

// --- linear algebra ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    require(a.cols() == b.rows(), "matmul",
            "inner dimensions disagree: " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    mm_nn_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [pa, pb, m, k, n](detail::TensorNode& self) {
                       if (pa->requires_grad) {
                           pa->ensure_grad();
                           mm_nt_acc(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k);
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           mm_tn_acc(pa->data.data(), self.grad.data(), pb->grad.data(), m, k, n);
                       }
                   });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    require(a.cols() == b.cols(), "matmul_nt",
            "inner dimensions disagree: " + shape_str(a.shape()) + " . " + shape_str(b.shape()) +
                "^T");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n, 0.0);
    mm_nt_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return make_op("matmul_nt", {m, n}, std::move(out), {a, b},
                   [pa, pb, m, k, n](detail::TensorNode& self) {
                       if (pa->requires_grad) {
                           pa->ensure_grad();
                           mm_nn_acc(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k);
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           mm_tn_acc(self.grad.data(), pa->data.data(), pb->grad.data(), m, n, k);
                       }
                   });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_2d(x, "linear");
    require_2d(weight, "linear");
    require(bias.ndim() == 1, "linear", "bias must be 1-D");
    require(x.cols() == weight.cols(), "linear",
            "input width " + std::to_string(x.cols()) + " vs weight in-dim " +
                std::to_string(weight.cols()));
    require(bias.shape()[0] == weight.rows(), "linear", "bias/out-dim mismatch");
    const std::size_t t = x.rows(), in = x.cols(), out_dim = weight.rows();
    std::vector<double> out(t * out_dim, 0.0);
    mm_nt_acc(x.values().data(), weight.values().data(), out.data(), t, in, out_dim);
    const auto& bv = bias.values();
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += bv[j];
    auto px = x.node(), pw = weight.node(), pb = bias.node();
    return make_op("linear", {t, out_dim}, std::move(out), {x, weight, bias},
                   [px, pw, pb, t, in, out_dim](detail::TensorNode& self) {
                       if (px->requires_grad) {
                           px->ensure_grad();
                           mm_nn_acc(self.grad.data(), pw->data.data(), px->grad.data(), t,
                                     out_dim, in);
                       }
                       if (pw->requires_grad) {
                           pw->ensure_grad();
                           mm_tn_acc(self.grad.data(), px->data.data(), pw->grad.data(), t,
                                     out_dim, in);
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           for (std::size_t i = 0; i < t; ++i)
                               for (std::size_t j = 0; j < out_dim; ++j)
                                   pb->grad[j] += self.grad[i * out_dim + j];
                       }
                   });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    require_2d(x, "add_rowvec");
    require(v.ndim() == 1 && v.shape()[0] == x.cols(), "add_rowvec", "vector width mismatch");
    const std::size_t r = x.rows(), c = x.cols();
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + vv[j];
    auto px = x.node(), pv = v.node();
    return make_op("add_rowvec", x.shape(), std::move(out), {x, v},
                   [px, pv, r, c](detail::TensorNode& self) {
                       accumulate(px, self.grad);
                       if (pv->requires_grad) {
                           pv->ensure_grad();
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                   pv->grad[j] += self.grad[i * c + j];
                       }
                   });
}

// --- reductions / losses ---

Tensor sum(const Tensor& a) {
    const auto& x = a.values();
    double total = std::accumulate(x.begin(), x.end(), 0.0);
    auto pa = a.node();
    return make_op("sum", {1}, {total}, {a}, [pa](detail::TensorNode& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (double& g : pa->grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const auto& x = a.values();
    require(!x.empty(), "mean", "empty tensor");
    double total = std::accumulate(x.begin(), x.end(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(x.size());
    auto pa = a.node();
    return make_op("mean", {1}, {total * inv_n}, {a}, [pa, inv_n](detail::TensorNode& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (double& g : pa->grad) g += self.grad[0] * inv_n;
    });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse");
    const auto& p = pred.values();
    const auto& t = target.values();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        total += d * d;
    }
    const double inv_n = 1.0 / static_cast<double>(p.size());
    auto pp = pred.node(), pt = target.node();
    return make_op("mse", {1}, {total * inv_n}, {pred, target},
                   [pp, pt, inv_n](detail::TensorNode& self) {
                       const double s = 2.0 * inv_n * self.grad[0];
                       if (pp->requires_grad) {
                           pp->ensure_grad();
                           for (std::size_t i = 0; i < pp->data.size(); ++i)
                               pp->grad[i] += s * (pp->data[i] - pt->data[i]);
                       }
                       if (pt->requires_grad) {
                           pt->ensure_grad();
                           for (std::size_t i = 0; i < pt->data.size(); ++i)
                               pt->grad[i] -= s * (pp->data[i] - pt->data[i]);
                       }
                   });
}

Tensor mean_abs_error(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mean_abs_error");
    const auto& p = pred.values();
    const auto& t = target.values();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += std::fabs(p[i] - t[i]);
    const double inv_n = 1.0 / static_cast<double>(p.size());
    auto pp = pred.node(), pt = target.node();
    return make_op("mean_abs_error", {1}, {total * inv_n}, {pred, target},
                   [pp, pt, inv_n](detail::TensorNode& self) {
                       const double s = inv_n * self.grad[0];
                       for (std::size_t i = 0; i < pp->data.size(); ++i) {
                           const double d = pp->data[i] - pt->data[i];
                           const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                           if (pp->requires_grad) {
                               pp->ensure_grad();
                               pp->grad[i] += s * sg;
                           }
                           if (pt->requires_grad) {
                               pt->ensure_grad();
                               pt->grad[i] -= s * sg;
                           }
                       }
                   });
}

// --- normalization ---

Tensor softmax(const Tensor& a, std::size_t axis) {
    require(a.ndim() >= 1 && a.ndim() <= 2, "softmax", "expected 1-D or 2-D tensor");
    require(axis < a.ndim(), "softmax", "axis out of range");

    const std::size_t n_slices = a.ndim() == 1 ? 1 : (axis == 1 ? a.shape()[0] : a.shape()[1]);
    const std::size_t slice_len = a.ndim() == 1 ? a.shape()[0] : a.shape()[axis];
    const std::size_t stride = (a.ndim() == 2 && axis == 0) ? a.shape()[1] : 1;
    const std::size_t slice_step =
        (a.ndim() == 2 && axis == 0) ? 1 : slice_len;  // offset between slices

    const auto& x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t s = 0; s < n_slices; ++s) {
        const std::size_t base = s * slice_step;
        double mx = x[base];
        for (std::size_t i = 1; i < slice_len; ++i) mx = std::max(mx, x[base + i * stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < slice_len; ++i) {
            const double e = std::exp(x[base + i * stride] - mx);
            out[base + i * stride] = e;
            z += e;
        }
        const double inv_z = 1.0 / z;
        for (std::size_t i = 0; i < slice_len; ++i) out[base + i * stride] *= inv_z;
    }
    auto pa = a.node();
    return make_op("softmax", a.shape(), std::move(out), {a},
                   [pa, n_slices, slice_len, stride, slice_step](detail::TensorNode& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (std::size_t s = 0; s < n_slices; ++s) {
                           const std::size_t base = s * slice_step;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < slice_len; ++i) {
                               const std::size_t idx = base + i * stride;
                               dot += self.grad[idx] * self.data[idx];
                           }
                           for (std::size_t i = 0; i < slice_len; ++i) {
                               const std::size_t idx = base + i * stride;
                               pa->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                           }
                       }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layer_norm");
    const std::size_t r = x.rows(), c = x.cols();
    require(c >= 2, "layer_norm", "last axis must have length >= 2");
    require(gain.ndim() == 1 && gain.shape()[0] == c, "layer_norm", "gain width mismatch");
    require(bias.ndim() == 1 && bias.shape()[0] == c, "layer_norm", "bias width mismatch");

    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(xv.size());
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = xv.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (row[j] - mu) * inv;
            (*xhat)[i * c + j] = h;
            out[i * c + j] = h * gv[j] + bv[j];
        }
    }
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    return make_op(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [px, pg, pb, xhat, inv_std, r, c](detail::TensorNode& self) {
            for (std::size_t i = 0; i < r; ++i) {
                const double* dy = self.grad.data() + i * c;
                const double* h = xhat->data() + i * c;
                const double inv = (*inv_std)[i];
                if (pg->requires_grad) {
                    pg->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) pg->grad[j] += dy[j] * h[j];
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) pb->grad[j] += dy[j];
                }
                if (px->requires_grad) {
                    px->ensure_grad();
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dh = dy[j] * pg->data[j];
                        sum_dh += dh;
                        sum_dh_h += dh * h[j];
                    }
                    const double inv_c = 1.0 / static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dh = dy[j] * pg->data[j];
                        px->grad[i * c + j] +=
                            inv * (dh - inv_c * sum_dh - h[j] * inv_c * sum_dh_h);
                    }
                }
            }
        });
}

// --- optimizer ---

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].is_leaf()) throw ValueError("Adam: parameters must be leaf tensors");
        m_[i].assign(params_[i].size(), 0.0);
        v_[i].assign(params_[i].size(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        auto& data = p.values_mut();
        const bool has = p.has_grad();
        const std::vector<double>* g = has ? &p.grad() : nullptr;
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double gj = has ? (*g)[j] : 0.0;
            m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * gj;
            v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * gj * gj;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            data[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
            if (!std::isfinite(data[j])) {
                throw NumericalError("Adam: non-finite parameter after update");
            }
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace mtlk
