#pragma once

// Reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tensor is a cheap shared handle to a graph node. Every op records a node
// (with a numeric backward closure) whenever at least one input requires
// gradients and gradient recording is enabled. A subset of ops also records a
// graph-building vector-Jacobian product, which is what `grad(..., true)` uses
// to produce gradients that are themselves differentiable (the gradient
// penalty of WGAN-GP needs exactly this).
//
// Broadcasting is limited to: identical shapes, a one-element operand, or an
// operand whose shape is a trailing suffix of the other's shape. Everything
// else goes through explicit reshape/expand.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace slopestrike::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;
struct Node;

using NumericBackward = std::function<void(Node& self, const std::vector<double>& grad_out,
                                           std::vector<std::vector<double>*>& grad_in)>;
using GraphVjp = std::function<std::vector<Tensor>(const Tensor& self, const Tensor& grad_out)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // leaves only; empty until first accumulation
    bool requires_grad = false;
    bool backward_called = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    NumericBackward backward;
    GraphVjp vjp;  // empty when the op has no second-order support

    bool is_leaf() const { return inputs.empty(); }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> values() const;
    /// In-place access; only legal on leaves (parameters, attack inputs).
    std::span<double> mutable_values();
    double item() const;
    double operator[](std::size_t i) const { return values()[i]; }
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    const std::string& op() const;
    bool is_leaf() const;
    /// Same values, no history, requires_grad = false.
    Tensor detach() const;

    /// Accumulates d(this)/d(leaf) into every requires_grad leaf. `this` must be
    /// a one-element tensor; calling twice on the same root is an error.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Gradients of `root` with respect to each tensor in `wrt` (leaf or interior).
/// Leaf .grad buffers are left untouched. With `create_graph` the returned
/// gradients carry history and can be differentiated again; every op between
/// `wrt` and `root` must then have second-order support.
std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& wrt, bool create_graph = false);

/// Differentiates `then(d root / d wrt)` with respect to `params`.
/// Returns the gradients (one per param) and writes the scalar objective to
/// `objective` when non-null.
std::vector<Tensor> grad_of_grad(const Tensor& root, const Tensor& wrt,
                                 const std::function<Tensor(const Tensor&)>& then,
                                 const std::vector<Tensor>& params, Tensor* objective = nullptr);

bool grad_enabled();

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- elementwise binary -------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// ---- tensor/scalar -------------------------------------------------------
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);

// ---- unary ---------------------------------------------------------------
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
/// Derivative is zero everywhere.
Tensor sign(const Tensor& x);
/// Gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);
/// Elementwise bounds; lo/hi are treated as constants.
Tensor clamp(const Tensor& x, const Tensor& lo, const Tensor& hi);

// ---- linear algebra ------------------------------------------------------
/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// x [m,k] * w [k,n] + b [n]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

struct Conv1dOptions {
    std::size_t stride = 1;
    std::size_t dilation = 1;
    /// Left-pad by dilation*(kernel-1) so output[t] only sees input[<= t].
    bool causal = false;
};

/// x [batch, c_in, length], w [c_out, c_in, kernel], b [c_out] (optional).
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Conv1dOptions options = {});

/// Max over non-overlapping (or strided) windows of the last axis. Ties route to
/// the lowest index.
Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride = 0);

// ---- reductions ----------------------------------------------------------
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);

// ---- shape ---------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
/// Numpy-style expansion of size-1 (or missing leading) dims.
Tensor expand(const Tensor& x, Shape shape);
/// Sums `x` down to `shape` (inverse of expand / trailing broadcast).
Tensor reduce_to(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// out.flat[i] = x.flat[indices[i]]
Tensor gather(const Tensor& x, std::vector<std::size_t> indices, Shape out_shape);
/// out.flat[indices[i]] += x.flat[i]
Tensor scatter_add(const Tensor& x, std::vector<std::size_t> indices, Shape out_shape);

// ---- operators -----------------------------------------------------------
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return scale(a, 1.0 / s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }

} // namespace slopestrike::ad
