#include "featherpoint/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "featherpoint/error.hpp"

namespace featherpoint {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

NodePtr new_node(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    node->shape = std::move(shape);
    node->data = std::move(data);
    return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

std::span<double> Node::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    auto node = new_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from(Shape{1}, {value}, requires_grad);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
    auto t = from(std::move(shape), std::move(data), true);
    t.node_->is_parameter = true;
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(node_->shape));
    }
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::uint64_t Tensor::id() const { return node_->id; }
const char* Tensor::op() const { return node_->op; }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
    if (node_->data.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(node_->shape));
    }
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& sh = node_->shape;
    if (index.size() != sh.size()) throw ShapeError("index rank mismatch for " + shape_str(sh));
    auto st = strides_of(sh);
    std::size_t off = 0, i = 0;
    for (auto v : index) {
        if (v >= sh[i]) throw ShapeError("index out of range on axis " + std::to_string(i));
        off += v * st[i++];
    }
    return node_->data[off];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::is_parameter() const { return node_->is_parameter; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
    auto node = new_node(node_->shape, node_->data);
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

std::size_t Tensor::backward() {
    if (numel() != 1) throw ShapeError("backward() without seed needs a scalar, got " + shape_str(shape()));
    const double one = 1.0;
    return backward(std::span<const double>(&one, 1));
}

std::size_t Tensor::backward(std::span<const double> seed) {
    if (seed.size() != numel()) throw ShapeError("backward seed length mismatch");
    if (!node_->requires_grad) return 0;

    // Iterative post-order DFS gives a topological order with each node once.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    auto g = node_->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];

    std::size_t visited = 0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
            ++visited;
        }
    }
    return visited;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward) {
    auto node = new_node(std::move(shape), std::move(data));
    node->op = op;
    bool needs = false;
    if (t_grad_enabled) {
        for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward);
    }
    return Tensor(std::move(node));
}

void check_finite(const Tensor& t, const std::string& what) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
    }
}

}  // namespace featherpoint
