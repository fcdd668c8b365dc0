#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mtlk/errors.hpp"
#include "mtlk/rng.hpp"

namespace mtlk {

using Shape = std::vector<std::size_t>;

namespace detail {

// One record of the dynamic tape. A forward op produces a node holding the
// result values plus, when gradients are required, the parent links and a
// closure that pushes the node's gradient into its parents. The DAG of nodes
// is rebuilt on every forward pass and torn down when the handles go away.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first needed; same length as data
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Disables graph recording for the current thread while alive. Forward math
// inside the guard produces plain value tensors; used for inference.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Dense row-major tensor of 64-bit floats with reverse-mode autodiff.
// Value-semantic handle onto a shared node; copying a Tensor aliases storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(Shape shape, std::vector<double> values);
    static Tensor randn(Shape shape, Rng& rng);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t size() const;
    std::size_t rows() const;  // 2-D only
    std::size_t cols() const;  // 2-D only

    const std::vector<double>& values() const;
    std::vector<double>& values_mut();  // leaf tensors only
    double item() const;                // size-1 tensors
    double at(std::size_t r, std::size_t c) const;

    Tensor& set_requires_grad(bool enabled);
    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    // Leaf copy of the values; no graph connection, no gradient.
    Tensor detach() const;

    // Reverse-mode accumulation from a size-1 tensor into every reachable
    // tensor with requires_grad. Visits each node exactly once; repeated
    // calls without zero_grad accumulate.
    void backward() const;

    const void* node_id() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend Tensor make_op(const char* name, Shape shape, std::vector<double> values,
                          std::vector<Tensor> parents,
                          std::function<void(detail::TensorNode&)> backward_fn);
};

// Builds an op-result node. Throws NumericalError if any output value is
// non-finite. Parents and the backward closure are attached only when
// gradients are enabled and at least one parent requires them.
Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backward_fn);

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_act(const Tensor& a);
Tensor abs_val(const Tensor& a);
Tensor softplus(const Tensor& a);

// --- shape ---
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a . b^T
// y = x . w^T + bias broadcast over rows; w is out x in, bias is out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// --- reductions / losses ---
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& pred, const Tensor& target);
Tensor mean_abs_error(const Tensor& pred, const Tensor& target);

// --- normalization ---
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a fixed parameter list. Missing gradients count as zero, so
// params untouched by the last backward decay their moments and stay put
// once the moments are zero.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig config = {});

    void step();
    void zero_grad();

    std::size_t step_count() const { return step_count_; }
    const std::vector<Tensor>& params() const { return params_; }
    AdamConfig& config() { return config_; }

    // Serialization access; moment buffers are index-aligned with params().
    std::vector<double>& moment1(std::size_t i) { return m_[i]; }
    std::vector<double>& moment2(std::size_t i) { return v_[i]; }
    void set_step_count(std::size_t n) { step_count_ = n; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_count_ = 0;
    AdamConfig config_;
};

}  // namespace mtlk
