#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace latshield {

enum class Dtype { f32, f64 };

struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DomainError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ValueError : std::runtime_error { using std::runtime_error::runtime_error; };

class Tape;

/// Dense row-major float tensor. Values are held as doubles; tensors tagged
/// Dtype::f32 are rounded to float precision after every primitive, so their
/// bit pattern survives a float serialization round trip.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<double> data, Dtype dt = Dtype::f32);

    static Tensor zeros(std::vector<int> shape, Dtype dt = Dtype::f32);
    static Tensor full(std::vector<int> shape, double v, Dtype dt = Dtype::f32);
    static Tensor scalar(double v, Dtype dt = Dtype::f32);

    const std::vector<int>& shape() const { return shape_; }
    int size() const { return static_cast<int>(data_ ? data_->size() : 0); }
    Dtype dtype() const { return dtype_; }
    bool defined() const { return static_cast<bool>(data_); }

    bool requires_grad() const { return node_ >= 0; }
    int node() const { return node_; }
    Tape* tape() const { return tape_; }

    const std::vector<double>& data() const { return *data_; }
    std::vector<double>& mutable_data() { return *data_; }
    double at(int i) const { return (*data_)[i]; }
    /// Value of a scalar (size-1) tensor.
    double item() const;

    Tensor astype(Dtype dt) const;
    Tensor clone() const;
    /// Same values, no graph attachment.
    Tensor constant() const;

    std::string shape_str() const;

    friend class Tape;
    friend Tensor record_op(Tape* tp, std::vector<int> shape, std::vector<double> vals,
                            Dtype dt, std::function<void(const std::vector<double>&, Tape&)> back);

private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<double>> data_;
    Dtype dtype_ = Dtype::f32;
    int node_ = -1;
    Tape* tape_ = nullptr;
};

/// Reverse-mode tape. Nodes are appended in forward order, so iterating the
/// node list backwards is a valid topological order for backpropagation.
/// One tape per logical thread of work; tapes are never shared across tasks.
class Tape {
public:
    using BackFn = std::function<void(const std::vector<double>& grad_out, Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a tensor as a differentiable leaf and returns the tracked handle.
    Tensor leaf(const Tensor& t);

    /// Backpropagates from a scalar output. Gradients of all reachable leaves
    /// become available through grad(). Accumulation order is append order.
    void backward(const Tensor& output);

    /// Gradient of the last backward() w.r.t. a tracked tensor (zeros if the
    /// output did not depend on it).
    Tensor grad(const Tensor& t) const;

    int num_nodes() const { return static_cast<int>(nodes_.size()); }

    // Internal: used by primitive implementations.
    int add_node(std::vector<int> shape, int size, Dtype dt, BackFn back);
    std::vector<double>& grad_buf(int node);

private:
    struct Node {
        std::vector<int> shape;
        int size = 0;
        Dtype dtype = Dtype::f32;
        BackFn back;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

// ---- primitive catalog ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
/// axis = -1 sums everything to a scalar; axis 0/1 reduce one axis of a 2-D
/// tensor keeping it as extent 1.
Tensor sum(const Tensor& a, int axis = -1);
Tensor mean(const Tensor& a, int axis = -1);
Tensor broadcast(const Tensor& a, const std::vector<int>& shape);
Tensor reshape(const Tensor& a, const std::vector<int>& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor relu(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor sin_(const Tensor& a);
Tensor cos_(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor square(const Tensor& a);
Tensor l2norm(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor detach(const Tensor& a);

// Scalar-constant conveniences (constant takes the tensor's dtype).
Tensor add(const Tensor& a, double c);
Tensor sub(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);
Tensor div(const Tensor& a, double c);

/// Op attributes for the string-tag dispatcher.
struct OpAttrs {
    int axis = -1;
    std::vector<int> shape;
    int start = 0, len = 0;
    double lo = 0.0, hi = 1.0;
};

const std::vector<std::string>& primitive_catalog();

/// Dispatches a primitive by tag. Unknown tags and arity mismatches raise
/// ValueError; shape problems raise ShapeError naming the op and shapes.
Tensor apply_primitive(const std::string& tag, const std::vector<Tensor>& inputs,
                       const OpAttrs& attrs = {});

/// Max relative error between the analytic gradient of f and central finite
/// differences at x (f64). Throws DomainError naming the index if a
/// non-finite value is encountered.
double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                         const Tensor& x, double h);

} // namespace latshield
