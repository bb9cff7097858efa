#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace featherpoint {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One entry of the autograd tape. Parents are held strongly so the graph
/// stays alive as long as its root does; the backward closure receives the
/// node by reference and never captures it.
struct Node {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    bool is_parameter = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    std::span<double> ensure_grad();
};

/// Dense row-major (NCHW) double tensor with optional tape participation.
///
/// Copies are shallow: two Tensor values can refer to the same node. Forward
/// ops never mutate their inputs; optimizers mutate parameter leaves in place
/// through mutable_data().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor parameter(Shape shape, std::vector<double> data);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::uint64_t id() const;
    const char* op() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    std::vector<double> to_vector() const;
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_parameter() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, cut from the tape.
    Tensor detach() const;
    /// Deep copy of values into a fresh leaf.
    Tensor clone() const;

    /// Reverse-mode sweep from this scalar (or from `seed` for non-scalars).
    /// Returns the number of tape nodes whose backward closure ran.
    std::size_t backward();
    std::size_t backward(std::span<const double> seed);

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Builds an op result. When grad mode is on and any parent requires grad the
/// result joins the tape with `backward`; otherwise parents are dropped.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward);

/// Row-major strides for a shape.
std::vector<std::size_t> strides_of(const Shape& shape);

/// Debug check: throws NumericError if any value is NaN/Inf.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace featherpoint
