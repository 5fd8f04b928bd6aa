#include "slopestrike/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "slopestrike/error.hpp"

namespace slopestrike::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != numel(shape)) {
        throw DimensionError("tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!t_grad_enabled) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

bool recording(const std::vector<Tensor>& inputs) {
    if (!t_grad_enabled) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

/// Builds the output node. History is attached only when `record` is set.
Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs, bool record,
                   NumericBackward backward, GraphVjp vjp = {}) {
    auto node = make_leaf(std::move(shape), std::move(values), false);
    node->op = op;
    if (record) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            node->inputs.push_back(in.node_ptr());
        }
        node->backward = std::move(backward);
        node->vjp = std::move(vjp);
    }
    return Tensor(std::move(node));
}

Tensor input_of(const Tensor& self, std::size_t i) { return Tensor(self.node()->inputs.at(i)); }

void require_finite_domain(bool ok, const char* op, const std::string& what) {
    if (!ok) {
        throw DomainError(std::string(op) + ": " + what);
    }
}

// ---- broadcasting -----------------------------------------------------------

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    if (a == b) {
        return a;
    }
    const auto na = numel(a);
    const auto nb = numel(b);
    if (nb == 1 && na >= 1) {
        return a;
    }
    if (na == 1) {
        return b;
    }
    if (is_suffix(b, a)) {
        return a;
    }
    if (is_suffix(a, b)) {
        return b;
    }
    throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db, GraphVjp vjp) {
    Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
    const std::size_t n = numel(out_shape);
    const std::size_t na = a.numel();
    const std::size_t nb = b.numel();
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(av[i % na], bv[i % nb]);
    }
    const bool rec = recording({&a, &b});
    NumericBackward bw;
    if (rec) {
        bw = [da, db, n, na, nb](Node& self, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            const auto& x = self.inputs[0]->value;
            const auto& y = self.inputs[1]->value;
            if (gin[0] != nullptr) {
                auto& ga = *gin[0];
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i % na] += g[i] * da(x[i % na], y[i % nb], self.value[i]);
                }
            }
            if (gin[1] != nullptr) {
                auto& gb = *gin[1];
                for (std::size_t i = 0; i < n; ++i) {
                    gb[i % nb] += g[i] * db(x[i % na], y[i % nb], self.value[i]);
                }
            }
        };
    }
    return make_result(op, std::move(out_shape), std::move(out), {a, b}, rec, std::move(bw), std::move(vjp));
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv, GraphVjp vjp) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = fwd(xv[i]);
    }
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [deriv](Node& self, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            const auto& xin = self.inputs[0]->value;
            auto& gx = *gin[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * deriv(xin[i], self.value[i]);
            }
        };
    }
    return make_result(op, x.shape(), std::move(out), {x}, rec, std::move(bw), std::move(vjp));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

struct AxisSplit {
    std::size_t outer;
    std::size_t len;
    std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

// ---- graph traversal --------------------------------------------------------

std::vector<std::shared_ptr<Node>> topo_order(const std::shared_ptr<Node>& root) {
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->inputs.size()) {
            const auto& child = top.first->inputs[top.second++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(std::move(top.first));
            stack.pop_back();
        }
    }
    return order;  // inputs before consumers
}

/// Numeric reverse sweep. Returns the accumulated gradient of every node in
/// `keep` (interior or leaf); leaf gradients are also returned for all leaves
/// when `keep_leaves` is set.
std::unordered_map<Node*, std::vector<double>> sweep(const std::shared_ptr<Node>& root,
                                                     const std::unordered_set<Node*>& keep, bool keep_leaves) {
    auto order = topo_order(root);
    std::unordered_map<Node*, std::vector<double>> acc;
    acc[root.get()] = std::vector<double>(root->value.size(), 1.0);
    std::unordered_map<Node*, std::vector<double>> result;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = it->get();
        auto found = acc.find(node);
        if (found == acc.end()) {
            continue;
        }
        if (!node->is_leaf()) {
            std::vector<std::vector<double>*> gin(node->inputs.size(), nullptr);
            for (std::size_t i = 0; i < node->inputs.size(); ++i) {
                Node* in = node->inputs[i].get();
                if (!in->requires_grad) {
                    continue;
                }
                auto& buf = acc[in];
                if (buf.empty()) {
                    buf.assign(in->value.size(), 0.0);
                }
                gin[i] = &buf;
            }
            node->backward(*node, found->second, gin);
        }
        if (keep.count(node) != 0 || (keep_leaves && node->is_leaf())) {
            result[node] = std::move(found->second);
        }
        acc.erase(node);
    }
    return result;
}

} // namespace

// ---- shape helpers -----------------------------------------------------------

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = ad::numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    Shape shape{values.size()};
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " + to_string(node_->shape));
    }
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
    if (!node_->is_leaf()) {
        throw ContractError("mutable_values: only leaf tensors may be modified in place (op '" + node_->op + "')");
    }
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    }
    return node_->value[0];
}

std::vector<double> Tensor::to_vector() const { return node_->value; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    if (!node_->is_leaf()) {
        throw ContractError("set_requires_grad: only valid on leaves");
    }
    node_->requires_grad = flag;
    if (!flag) {
        node_->grad.clear();
    }
    return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

const std::string& Tensor::op() const { return node_->op; }

bool Tensor::is_leaf() const { return node_->is_leaf(); }

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward: root must be a scalar, got shape " + to_string(shape()));
    }
    if (!requires_grad()) {
        throw ContractError("backward: root was not produced by a recorded graph");
    }
    if (node_->backward_called) {
        throw UnsupportedError("backward: graph already differentiated; re-run the forward pass first");
    }
    node_->backward_called = true;
    auto grads = sweep(node_, {}, true);
    for (auto& [node, g] : grads) {
        if (!node->is_leaf() || !node->requires_grad) {
            continue;
        }
        if (node->grad.empty()) {
            node->grad = std::move(g);
        } else {
            for (std::size_t i = 0; i < g.size(); ++i) {
                node->grad[i] += g[i];
            }
        }
    }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& wrt, bool create_graph) {
    if (root.numel() != 1) {
        throw ContractError("grad: root must be a scalar, got shape " + to_string(root.shape()));
    }
    std::vector<Tensor> out(wrt.size());
    if (!root.requires_grad()) {
        throw ContractError("grad: root was not produced by a recorded graph");
    }
    if (!create_graph) {
        std::unordered_set<Node*> keep;
        for (const auto& w : wrt) {
            keep.insert(w.node());
        }
        auto grads = sweep(root.node_ptr(), keep, false);
        for (std::size_t i = 0; i < wrt.size(); ++i) {
            auto it = grads.find(wrt[i].node());
            out[i] = it == grads.end() ? Tensor::zeros(wrt[i].shape()) : Tensor::from(wrt[i].shape(), it->second);
        }
        return out;
    }

    auto order = topo_order(root.node_ptr());
    std::unordered_set<Node*> targets;
    for (const auto& w : wrt) {
        targets.insert(w.node());
    }
    std::unordered_set<Node*> reaches;
    for (const auto& owned : order) {
        Node* node = owned.get();
        bool r = targets.count(node) != 0;
        for (const auto& in : node->inputs) {
            r = r || reaches.count(in.get()) != 0;
        }
        if (r) {
            reaches.insert(node);
        }
    }
    std::unordered_map<Node*, Tensor> acc;
    acc[root.node()] = Tensor::ones(root.shape());
    std::unordered_map<Node*, Tensor> found;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = it->get();
        if (reaches.count(node) == 0) {
            continue;
        }
        auto a = acc.find(node);
        if (a == acc.end()) {
            continue;
        }
        if (targets.count(node) != 0) {
            found[node] = a->second;
        }
        bool upstream = false;
        for (const auto& in : node->inputs) {
            upstream = upstream || reaches.count(in.get()) != 0;
        }
        if (!upstream) {
            continue;
        }
        if (!node->vjp) {
            throw UnsupportedError("grad(create_graph): op '" + node->op +
                                   "' on the differentiated path has no second-order support");
        }
        auto grads = node->vjp(Tensor(*it), a->second);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            Node* in = node->inputs[i].get();
            if (reaches.count(in) == 0 || !grads[i].defined()) {
                continue;
            }
            auto& slot = acc[in];
            slot = slot.defined() ? add(slot, grads[i]) : grads[i];
        }
    }
    for (std::size_t i = 0; i < wrt.size(); ++i) {
        auto it = found.find(wrt[i].node());
        out[i] = it == found.end() ? Tensor::zeros(wrt[i].shape()) : it->second;
    }
    return out;
}

std::vector<Tensor> grad_of_grad(const Tensor& root, const Tensor& wrt,
                                 const std::function<Tensor(const Tensor&)>& then,
                                 const std::vector<Tensor>& params, Tensor* objective) {
    auto first = grad(root, {wrt}, true);
    Tensor value = then(first[0]);
    if (objective != nullptr) {
        *objective = value;
    }
    if (!value.requires_grad()) {
        std::vector<Tensor> zeros;
        for (const auto& p : params) {
            zeros.push_back(Tensor::zeros(p.shape()));
        }
        return zeros;
    }
    return grad(value, params, false);
}

// ---- elementwise binary ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; },
        [](const Tensor& self, const Tensor& g) {
            return std::vector<Tensor>{reduce_to(g, input_of(self, 0).shape()), reduce_to(g, input_of(self, 1).shape())};
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; },
        [](const Tensor& self, const Tensor& g) {
            return std::vector<Tensor>{reduce_to(g, input_of(self, 0).shape()),
                                       reduce_to(neg(g), input_of(self, 1).shape())};
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; },
        [](const Tensor& self, const Tensor& g) {
            auto x = input_of(self, 0);
            auto y = input_of(self, 1);
            return std::vector<Tensor>{reduce_to(mul(g, y), x.shape()), reduce_to(mul(g, x), y.shape())};
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : b.values()) {
        if (v == 0.0) {
            require_finite_domain(false, "div", "division by zero");
        }
    }
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; },
        [](const Tensor& self, const Tensor& g) {
            auto x = input_of(self, 0);
            auto y = input_of(self, 1);
            auto gx = div(g, y);
            auto gy = neg(div(mul(g, x), mul(y, y)));
            return std::vector<Tensor>{reduce_to(gx, x.shape()), reduce_to(gy, y.shape())};
        });
}

// ---- tensor/scalar -------------------------------------------------------------

Tensor scale(const Tensor& x, double factor) {
    return unary(
        "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; },
        [factor](const Tensor&, const Tensor& g) { return std::vector<Tensor>{scale(g, factor)}; });
}

Tensor add_scalar(const Tensor& x, double offset) {
    return unary(
        "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; },
        [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

// ---- unary ---------------------------------------------------------------------

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; },
        [](const Tensor& self, const Tensor& g) {
            auto xin = input_of(self, 0).values();
            std::vector<double> mask(xin.size());
            for (std::size_t i = 0; i < xin.size(); ++i) {
                mask[i] = xin[i] > 0.0 ? 1.0 : 0.0;
            }
            return std::vector<Tensor>{mul(g, Tensor::from(self.shape(), std::move(mask)))};
        });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
    return unary(
        "leaky_relu", x, [negative_slope](double v) { return v > 0.0 ? v : negative_slope * v; },
        [negative_slope](double v, double) { return v > 0.0 ? 1.0 : negative_slope; },
        [negative_slope](const Tensor& self, const Tensor& g) {
            auto xin = input_of(self, 0).values();
            std::vector<double> mask(xin.size());
            for (std::size_t i = 0; i < xin.size(); ++i) {
                mask[i] = xin[i] > 0.0 ? 1.0 : negative_slope;
            }
            return std::vector<Tensor>{mul(g, Tensor::from(self.shape(), std::move(mask)))};
        });
}

Tensor tanh(const Tensor& x) {
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; },
        [](const Tensor& self, const Tensor& g) {
            return std::vector<Tensor>{mul(g, 1.0 - mul(self, self))};
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        "sigmoid", x,
        [](double v) {
            if (v >= 0.0) {
                return 1.0 / (1.0 + std::exp(-v));
            }
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); },
        [](const Tensor& self, const Tensor& g) {
            return std::vector<Tensor>{mul(g, mul(self, 1.0 - self))};
        });
}

Tensor exp(const Tensor& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; },
        [](const Tensor& self, const Tensor& g) { return std::vector<Tensor>{mul(g, self)}; });
}

Tensor log(const Tensor& x) {
    for (double v : x.values()) {
        if (!(v > 0.0)) {
            require_finite_domain(false, "log", "non-positive argument " + std::to_string(v));
        }
    }
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; },
        [](const Tensor& self, const Tensor& g) { return std::vector<Tensor>{div(g, input_of(self, 0))}; });
}

Tensor pow(const Tensor& x, double exponent) {
    const bool integral = std::floor(exponent) == exponent;
    for (double v : x.values()) {
        const bool ok = integral ? (v != 0.0 || exponent >= 0.0) : (v > 0.0 || (v == 0.0 && exponent > 0.0));
        if (!ok) {
            require_finite_domain(false, "pow", "base " + std::to_string(v) + " with exponent " + std::to_string(exponent));
        }
    }
    return unary(
        "pow", x, [exponent](double v) { return std::pow(v, exponent); },
        [exponent](double v, double) { return exponent == 0.0 ? 0.0 : exponent * std::pow(v, exponent - 1.0); },
        [exponent](const Tensor& self, const Tensor& g) {
            auto xin = input_of(self, 0);
            if (exponent == 0.0) {
                return std::vector<Tensor>{scale(g, 0.0)};
            }
            if (exponent == 1.0) {
                return std::vector<Tensor>{g};
            }
            return std::vector<Tensor>{mul(g, scale(pow(xin, exponent - 1.0), exponent))};
        });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.values()) {
        if (!(v >= 0.0)) {
            require_finite_domain(false, "sqrt", "negative argument " + std::to_string(v));
        }
    }
    // d sqrt(0) is taken as 0 so degenerate inputs (constant windows) stay finite.
    return unary(
        "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; },
        [](const Tensor& self, const Tensor& g) {
            for (double y : self.values()) {
                if (y <= 0.0) {
                    throw UnsupportedError("grad(create_graph): sqrt at 0 has no second-order support");
                }
            }
            return std::vector<Tensor>{mul(g, scale(pow(self, -1.0), 0.5))};
        });
}

Tensor abs(const Tensor& x) {
    return unary(
        "abs", x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); },
        [](const Tensor& self, const Tensor& g) {
            auto xin = input_of(self, 0).values();
            std::vector<double> s(xin.size());
            for (std::size_t i = 0; i < xin.size(); ++i) {
                s[i] = xin[i] > 0.0 ? 1.0 : (xin[i] < 0.0 ? -1.0 : 0.0);
            }
            return std::vector<Tensor>{mul(g, Tensor::from(self.shape(), std::move(s)))};
        });
}

Tensor sign(const Tensor& x) {
    return unary(
        "sign", x, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }, [](double, double) { return 0.0; },
        {});
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) {
        throw ContractError("clamp: lo > hi");
    }
    return unary(
        "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; }, {});
}

Tensor clamp(const Tensor& x, const Tensor& lo, const Tensor& hi) {
    if (lo.shape() != x.shape() || hi.shape() != x.shape()) {
        throw DimensionError("clamp: bounds " + to_string(lo.shape()) + "/" + to_string(hi.shape()) +
                             " do not match " + to_string(x.shape()));
    }
    auto xv = x.values();
    auto lv = lo.values();
    auto hv = hi.values();
    std::vector<double> out(xv.size());
    std::vector<double> pass(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (lv[i] > hv[i]) {
            throw ContractError("clamp: lo > hi at index " + std::to_string(i));
        }
        out[i] = std::clamp(xv[i], lv[i], hv[i]);
        pass[i] = (xv[i] >= lv[i] && xv[i] <= hv[i]) ? 1.0 : 0.0;
    }
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [pass = std::move(pass)](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gin[0])[i] += g[i] * pass[i];
            }
        };
    }
    return make_result("clamp", x.shape(), std::move(out), {x}, rec, std::move(bw));
}

// ---- linear algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    const auto m = a.dim(0);
    const auto k = a.dim(1);
    const auto n = b.dim(1);
    std::vector<double> out(m * n);
    MatMap(out.data(), m, n).noalias() = ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
    const bool rec = recording({&a, &b});
    NumericBackward bw;
    if (rec) {
        bw = [m, k, n](Node& self, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            ConstMatMap gm(g.data(), m, n);
            if (gin[0] != nullptr) {
                MatMap(gin[0]->data(), m, k).noalias() += gm * ConstMatMap(self.inputs[1]->value.data(), k, n).transpose();
            }
            if (gin[1] != nullptr) {
                MatMap(gin[1]->data(), k, n).noalias() += ConstMatMap(self.inputs[0]->value.data(), m, k).transpose() * gm;
            }
        };
    }
    return make_result("matmul", {m, n}, std::move(out), {a, b}, rec, std::move(bw),
                       [](const Tensor& self, const Tensor& g) {
                           auto x = input_of(self, 0);
                           auto y = input_of(self, 1);
                           return std::vector<Tensor>{matmul(g, transpose(y)), matmul(transpose(x), g)};
                       });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) {
        throw DimensionError("transpose: expected rank 2, got " + to_string(x.shape()));
    }
    const auto r = x.dim(0);
    const auto c = x.dim(1);
    std::vector<double> out(r * c);
    MatMap(out.data(), c, r) = ConstMatMap(x.values().data(), r, c).transpose();
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [r, c](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] != nullptr) {
                MatMap(gin[0]->data(), r, c) += ConstMatMap(g.data(), c, r).transpose();
            }
        };
    }
    return make_result("transpose", {c, r}, std::move(out), {x}, rec, std::move(bw),
                       [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.numel() != w.dim(1)) {
        throw DimensionError("affine: incompatible shapes x" + to_string(x.shape()) + " w" + to_string(w.shape()) +
                             " b" + to_string(b.shape()));
    }
    const auto m = x.dim(0);
    const auto k = x.dim(1);
    const auto n = w.dim(1);
    std::vector<double> out(m * n);
    MatMap om(out.data(), m, n);
    om.noalias() = ConstMatMap(x.values().data(), m, k) * ConstMatMap(w.values().data(), k, n);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), n);
    const bool rec = recording({&x, &w, &b});
    NumericBackward bw;
    if (rec) {
        bw = [m, k, n](Node& self, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            ConstMatMap gm(g.data(), m, n);
            if (gin[0] != nullptr) {
                MatMap(gin[0]->data(), m, k).noalias() += gm * ConstMatMap(self.inputs[1]->value.data(), k, n).transpose();
            }
            if (gin[1] != nullptr) {
                MatMap(gin[1]->data(), k, n).noalias() += ConstMatMap(self.inputs[0]->value.data(), m, k).transpose() * gm;
            }
            if (gin[2] != nullptr) {
                Eigen::Map<Eigen::RowVectorXd>(gin[2]->data(), n) += gm.colwise().sum();
            }
        };
    }
    return make_result("affine", {m, n}, std::move(out), {x, w, b}, rec, std::move(bw),
                       [](const Tensor& self, const Tensor& g) {
                           auto xin = input_of(self, 0);
                           auto win = input_of(self, 1);
                           auto bin = input_of(self, 2);
                           return std::vector<Tensor>{matmul(g, transpose(win)), matmul(transpose(xin), g),
                                                      reshape(sum(g, 0), bin.shape())};
                       });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Conv1dOptions options) {
    if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(1)) {
        throw DimensionError("conv1d: incompatible shapes x" + to_string(x.shape()) + " w" + to_string(w.shape()));
    }
    if (b.defined() && b.numel() != w.dim(0)) {
        throw DimensionError("conv1d: bias " + to_string(b.shape()) + " does not match c_out " +
                             std::to_string(w.dim(0)));
    }
    if (options.stride == 0 || options.dilation == 0) {
        throw ContractError("conv1d: stride and dilation must be >= 1");
    }
    const auto batch = x.dim(0);
    const auto cin = x.dim(1);
    const auto len = x.dim(2);
    const auto cout = w.dim(0);
    const auto kernel = w.dim(2);
    const auto span = options.dilation * (kernel - 1);
    const auto pad = options.causal ? span : 0;
    if (len + pad < span + 1) {
        throw DimensionError("conv1d: input length " + std::to_string(len) + " shorter than receptive field " +
                             std::to_string(span + 1));
    }
    const auto lout = (len + pad - span - 1) / options.stride + 1;
    const auto rows = cin * kernel;
    const auto stride = options.stride;
    const auto dilation = options.dilation;

    // col[(c*kernel + k), t] = x[c, t*stride + k*dilation - pad]
    auto im2col = [=](const double* xb, double* col) {
        for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t k = 0; k < kernel; ++k) {
                double* row = col + (c * kernel + k) * lout;
                for (std::size_t t = 0; t < lout; ++t) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k * dilation) -
                                               static_cast<std::ptrdiff_t>(pad);
                    row[t] = (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) ? xb[c * len + src] : 0.0;
                }
            }
        }
    };

    std::vector<double> out(batch * cout * lout);
    std::vector<double> col(rows * lout);
    ConstMatMap wm(w.values().data(), cout, rows);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        im2col(x.values().data() + bi * cin * len, col.data());
        MatMap om(out.data() + bi * cout * lout, cout, lout);
        om.noalias() = wm * ConstMatMap(col.data(), rows, lout);
        if (b.defined()) {
            om.colwise() += Eigen::Map<const Eigen::VectorXd>(b.values().data(), cout);
        }
    }
    std::vector<Tensor> inputs{x, w};
    if (b.defined()) {
        inputs.push_back(b);
    }
    const bool rec = recording(inputs);
    NumericBackward bw;
    if (rec) {
        bw = [=](Node& self, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            const auto& xv = self.inputs[0]->value;
            const auto& wv = self.inputs[1]->value;
            std::vector<double> colb(rows * lout);
            std::vector<double> gcol(rows * lout);
            ConstMatMap wmat(wv.data(), cout, rows);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                ConstMatMap gm(g.data() + bi * cout * lout, cout, lout);
                if (gin[1] != nullptr) {
                    im2col(xv.data() + bi * cin * len, colb.data());
                    MatMap(gin[1]->data(), cout, rows).noalias() += gm * ConstMatMap(colb.data(), rows, lout).transpose();
                }
                if (gin.size() > 2 && gin[2] != nullptr) {
                    Eigen::Map<Eigen::VectorXd>(gin[2]->data(), cout) += gm.rowwise().sum();
                }
                if (gin[0] != nullptr) {
                    MatMap(gcol.data(), rows, lout).noalias() = wmat.transpose() * gm;
                    double* gx = gin[0]->data() + bi * cin * len;
                    for (std::size_t c = 0; c < cin; ++c) {
                        for (std::size_t k = 0; k < kernel; ++k) {
                            const double* row = gcol.data() + (c * kernel + k) * lout;
                            for (std::size_t t = 0; t < lout; ++t) {
                                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k * dilation) -
                                                           static_cast<std::ptrdiff_t>(pad);
                                if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) {
                                    gx[c * len + src] += row[t];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return make_result("conv1d", {batch, cout, lout}, std::move(out), std::move(inputs), rec, std::move(bw));
}

Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
    if (stride == 0) {
        stride = kernel;
    }
    if (kernel == 0 || x.rank() == 0) {
        throw ContractError("maxpool1d: kernel must be >= 1 and input non-scalar");
    }
    const auto len = x.shape().back();
    if (len < kernel) {
        throw DimensionError("maxpool1d: length " + std::to_string(len) + " shorter than kernel " +
                             std::to_string(kernel));
    }
    const auto lout = (len - kernel) / stride + 1;
    const auto rows = x.numel() / len;
    auto xv = x.values();
    std::vector<double> out(rows * lout);
    std::vector<std::size_t> argmax(rows * lout);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t t = 0; t < lout; ++t) {
            std::size_t best = r * len + t * stride;
            for (std::size_t k = 1; k < kernel; ++k) {
                const std::size_t idx = r * len + t * stride + k;
                if (xv[idx] > xv[best]) {
                    best = idx;
                }
            }
            out[r * lout + t] = xv[best];
            argmax[r * lout + t] = best;
        }
    }
    Shape shape = x.shape();
    shape.back() = lout;
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [argmax = std::move(argmax)](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gin[0])[argmax[i]] += g[i];
            }
        };
    }
    return make_result("maxpool1d", std::move(shape), std::move(out), {x}, rec, std::move(bw));
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto xv = x.values();
    const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (auto& v : *gin[0]) {
                v += g[0];
            }
        };
    }
    return make_result("sum", {1}, {total}, {x}, rec, std::move(bw), [](const Tensor& self, const Tensor& g) {
        auto xin = input_of(self, 0);
        return std::vector<Tensor>{expand(g, xin.shape())};
    });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
    if (axis >= x.rank()) {
        throw DimensionError("sum: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
    }
    const auto s = split_axis(x.shape(), axis);
    auto xv = x.values();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.len; ++l) {
            const double* src = xv.data() + (o * s.len + l) * s.inner;
            double* dst = out.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) {
                dst[i] += src[i];
            }
        }
    }
    Shape kept = x.shape();
    kept[axis] = 1;
    Shape shape = kept;
    if (!keepdim) {
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
        if (shape.empty()) {
            shape = {1};
        }
    }
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [s](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t l = 0; l < s.len; ++l) {
                    double* dst = gin[0]->data() + (o * s.len + l) * s.inner;
                    const double* src = g.data() + o * s.inner;
                    for (std::size_t i = 0; i < s.inner; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
        };
    }
    return make_result("sum", std::move(shape), std::move(out), {x}, rec, std::move(bw),
                       [kept](const Tensor& self, const Tensor& g) {
                           auto xin = input_of(self, 0);
                           return std::vector<Tensor>{expand(reshape(g, kept), xin.shape())};
                       });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
    return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.dim(axis)));
}

// ---- shape ---------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    if (shape == x.shape()) {
        return x;
    }
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gin[0])[i] += g[i];
            }
        };
    }
    return make_result("reshape", std::move(shape), x.to_vector(), {x}, rec, std::move(bw),
                       [](const Tensor& self, const Tensor& g) {
                           return std::vector<Tensor>{reshape(g, input_of(self, 0).shape())};
                       });
}

Tensor expand(const Tensor& x, Shape shape) {
    const auto& src = x.shape();
    if (src.size() > shape.size()) {
        throw DimensionError("expand: cannot expand " + to_string(src) + " to " + to_string(shape));
    }
    const std::size_t lead = shape.size() - src.size();
    std::vector<std::size_t> src_strides = strides_of(src);
    std::vector<std::size_t> eff(shape.size(), 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] == shape[lead + i]) {
            eff[lead + i] = src_strides[i];
        } else if (src[i] != 1) {
            throw DimensionError("expand: cannot expand " + to_string(src) + " to " + to_string(shape));
        }
    }
    if (src == shape) {
        return x;
    }
    const auto n = numel(shape);
    std::vector<std::size_t> map(n);
    // Odometer walk over the output coordinates.
    std::vector<std::size_t> coord(shape.size(), 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        map[i] = off;
        for (std::size_t d = shape.size(); d-- > 0;) {
            if (++coord[d] < shape[d]) {
                off += eff[d];
                break;
            }
            off -= eff[d] * (shape[d] - 1);
            coord[d] = 0;
        }
    }
    auto xv = x.values();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = xv[map[i]];
    }
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [map = std::move(map)](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gin[0])[map[i]] += g[i];
            }
        };
    }
    return make_result("expand", std::move(shape), std::move(out), {x}, rec, std::move(bw),
                       [](const Tensor& self, const Tensor& g) {
                           return std::vector<Tensor>{reduce_to(g, input_of(self, 0).shape())};
                       });
}

Tensor reduce_to(const Tensor& x, const Shape& shape) {
    if (x.shape() == shape) {
        return x;
    }
    if (numel(shape) == 1) {
        return reshape(sum(x), shape);
    }
    Tensor cur = x;
    while (cur.rank() > shape.size()) {
        cur = sum(cur, 0, false);
    }
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (shape[d] == 1 && cur.dim(d) != 1) {
            cur = sum(cur, d, true);
        } else if (shape[d] != cur.dim(d)) {
            throw DimensionError("reduce_to: cannot reduce " + to_string(x.shape()) + " to " + to_string(shape));
        }
    }
    return reshape(cur, shape);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
        throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " of " + to_string(x.shape()));
    }
    const auto s = split_axis(x.shape(), axis);
    const auto width = end - begin;
    auto xv = x.values();
    std::vector<double> out(s.outer * width * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xv.data() + (o * s.len + begin) * s.inner, width * s.inner, out.data() + o * width * s.inner);
    }
    Shape shape = x.shape();
    shape[axis] = width;
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [s, begin, width](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t o = 0; o < s.outer; ++o) {
                double* dst = gin[0]->data() + (o * s.len + begin) * s.inner;
                const double* src = g.data() + o * width * s.inner;
                for (std::size_t i = 0; i < width * s.inner; ++i) {
                    dst[i] += src[i];
                }
            }
        };
    }
    return make_result("slice", std::move(shape), std::move(out), {x}, rec, std::move(bw),
                       [axis, begin, end](const Tensor& self, const Tensor& g) {
                           auto xin = input_of(self, 0);
                           std::vector<Tensor> parts;
                           if (begin > 0) {
                               Shape before = xin.shape();
                               before[axis] = begin;
                               parts.push_back(Tensor::zeros(before));
                           }
                           parts.push_back(g);
                           if (end < xin.dim(axis)) {
                               Shape after = xin.shape();
                               after[axis] = xin.dim(axis) - end;
                               parts.push_back(Tensor::zeros(after));
                           }
                           return std::vector<Tensor>{parts.size() == 1 ? g : concat(parts, axis)};
                       });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw ContractError("concat: no inputs");
    }
    Shape shape = parts[0].shape();
    if (axis >= shape.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(shape));
    }
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape a = p.shape();
        Shape b = shape;
        if (a.size() != b.size()) {
            throw DimensionError("concat: rank mismatch " + to_string(a) + " vs " + to_string(b));
        }
        a[axis] = 0;
        b[axis] = 0;
        if (a != b) {
            throw DimensionError("concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(shape));
        }
        total += p.dim(axis);
    }
    shape[axis] = total;
    const auto s = split_axis(shape, axis);
    std::vector<double> out(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const auto w = p.dim(axis);
        auto pv = p.values();
        for (std::size_t o = 0; o < s.outer; ++o) {
            std::copy_n(pv.data() + o * w * s.inner, w * s.inner, out.data() + (o * total + off) * s.inner);
        }
        off += w;
    }
    const bool rec = recording(parts);
    NumericBackward bw;
    if (rec) {
        bw = [s, total, offsets](Node& self, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            for (std::size_t pi = 0; pi < gin.size(); ++pi) {
                if (gin[pi] == nullptr) {
                    continue;
                }
                const auto w = self.inputs[pi]->value.size() / (s.outer * s.inner);
                for (std::size_t o = 0; o < s.outer; ++o) {
                    const double* src = g.data() + (o * total + offsets[pi]) * s.inner;
                    double* dst = gin[pi]->data() + o * w * s.inner;
                    for (std::size_t i = 0; i < w * s.inner; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
        };
    }
    return make_result("concat", std::move(shape), std::move(out), parts, rec, std::move(bw),
                       [axis, offsets](const Tensor& self, const Tensor& g) {
                           std::vector<Tensor> grads;
                           for (std::size_t pi = 0; pi < self.node()->inputs.size(); ++pi) {
                               const auto w = self.node()->inputs[pi]->shape[axis];
                               grads.push_back(slice(g, axis, offsets[pi], offsets[pi] + w));
                           }
                           return grads;
                       });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> indices, Shape out_shape) {
    if (numel(out_shape) != indices.size()) {
        throw DimensionError("gather: " + std::to_string(indices.size()) + " indices for shape " +
                             to_string(out_shape));
    }
    auto xv = x.values();
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= xv.size()) {
            throw DimensionError("gather: index " + std::to_string(indices[i]) + " out of range " +
                                 std::to_string(xv.size()));
        }
        out[i] = xv[indices[i]];
    }
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [indices = std::move(indices)](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gin[0])[indices[i]] += g[i];
            }
        };
    }
    return make_result("gather", std::move(out_shape), std::move(out), {x}, rec, std::move(bw));
}

Tensor scatter_add(const Tensor& x, std::vector<std::size_t> indices, Shape out_shape) {
    if (x.numel() != indices.size()) {
        throw DimensionError("scatter_add: " + std::to_string(indices.size()) + " indices for " +
                             std::to_string(x.numel()) + " values");
    }
    const auto n = numel(out_shape);
    auto xv = x.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n) {
            throw DimensionError("scatter_add: index " + std::to_string(indices[i]) + " out of range " +
                                 std::to_string(n));
        }
        out[indices[i]] += xv[i];
    }
    const bool rec = recording({&x});
    NumericBackward bw;
    if (rec) {
        bw = [indices = std::move(indices)](Node&, const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
            if (gin[0] == nullptr) {
                return;
            }
            for (std::size_t i = 0; i < indices.size(); ++i) {
                (*gin[0])[i] += g[indices[i]];
            }
        };
    }
    return make_result("scatter_add", std::move(out_shape), std::move(out), {x}, rec, std::move(bw));
}

} // namespace slopestrike::ad
