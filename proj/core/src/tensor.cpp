#include "latshield/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <numeric>
#include <sstream>

namespace latshield {

namespace {

int shape_product(const std::vector<int>& shape) {
    int n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape");
        n *= e;
    }
    return n;
}

inline double round_val(double v, Dtype dt) {
    return dt == Dtype::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void round_vec(std::vector<double>& v, Dtype dt) {
    if (dt == Dtype::f32)
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

std::string shape_to_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

[[noreturn]] void shape_fail(const std::string& op, const std::vector<int>& a,
                             const std::vector<int>& b) {
    throw ShapeError(op + ": incompatible shapes " + shape_to_str(a) + " and " + shape_to_str(b));
}

Dtype common_dtype(const std::string& op, const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype())
        throw ValueError(op + ": mixed dtypes");
    return a.dtype();
}

Tape* common_tape(const std::string& op, const Tensor& a, const Tensor& b) {
    Tape* ta = a.requires_grad() ? a.tape() : nullptr;
    Tape* tb = b.requires_grad() ? b.tape() : nullptr;
    if (ta && tb && ta != tb) throw ValueError(op + ": operands live on different tapes");
    return ta ? ta : tb;
}

// Right-aligned broadcast of two shapes of rank <= 2; returns per-element
// input index maps (empty map means identity).
struct BcastPlan {
    std::vector<int> out_shape;
    int out_size = 0;
    std::vector<int> map_a, map_b; // empty -> identity
};

std::vector<int> bcast_map(const std::vector<int>& in_shape, const std::vector<int>& out_shape) {
    // in_shape broadcasts to out_shape (right aligned, extents equal or 1)
    if (in_shape == out_shape) return {};
    const int out_rank = static_cast<int>(out_shape.size());
    const int in_rank = static_cast<int>(in_shape.size());
    std::vector<int> in_stride(out_rank, 0);
    int stride = 1;
    for (int d = in_rank - 1, od = out_rank - 1; d >= 0; --d, --od) {
        in_stride[od] = (in_shape[d] == 1) ? 0 : stride;
        stride *= in_shape[d];
    }
    std::vector<int> map(shape_product(out_shape));
    if (out_rank == 1) {
        for (int i = 0; i < out_shape[0]; ++i) map[i] = i * in_stride[0];
    } else {
        int idx = 0;
        for (int i = 0; i < out_shape[0]; ++i)
            for (int j = 0; j < out_shape[1]; ++j)
                map[idx++] = i * in_stride[0] + j * in_stride[1];
    }
    return map;
}

BcastPlan make_bcast(const std::string& op, const std::vector<int>& sa, const std::vector<int>& sb) {
    if (sa.size() > 2 || sb.size() > 2) shape_fail(op, sa, sb);
    BcastPlan p;
    const int rank = static_cast<int>(std::max(sa.size(), sb.size()));
    p.out_shape.resize(rank);
    for (int od = rank - 1, da = static_cast<int>(sa.size()) - 1,
             db = static_cast<int>(sb.size()) - 1;
         od >= 0; --od, --da, --db) {
        const int ea = da >= 0 ? sa[da] : 1;
        const int eb = db >= 0 ? sb[db] : 1;
        if (ea != eb && ea != 1 && eb != 1) shape_fail(op, sa, sb);
        p.out_shape[od] = std::max(ea, eb);
    }
    p.out_size = shape_product(p.out_shape);
    p.map_a = bcast_map(sa, p.out_shape);
    p.map_b = bcast_map(sb, p.out_shape);
    return p;
}

} // namespace

// ---- Tensor ----

Tensor::Tensor(std::vector<int> shape, std::vector<double> data, Dtype dt) {
    const int n = shape_product(shape);
    if (n != static_cast<int>(data.size()))
        throw ShapeError("tensor: shape " + shape_to_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    round_vec(data, dt);
    shape_ = std::move(shape);
    data_ = std::make_shared<std::vector<double>>(std::move(data));
    dtype_ = dt;
}

Tensor Tensor::zeros(std::vector<int> shape, Dtype dt) {
    const int n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), dt);
}

Tensor Tensor::full(std::vector<int> shape, double v, Dtype dt) {
    const int n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), dt);
}

Tensor Tensor::scalar(double v, Dtype dt) { return Tensor({1}, {v}, dt); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str() + " is not scalar");
    return (*data_)[0];
}

Tensor Tensor::astype(Dtype dt) const {
    if (dt == dtype_) return constant();
    return Tensor(shape_, *data_, dt);
}

Tensor Tensor::clone() const { return Tensor(shape_, *data_, dtype_); }

Tensor Tensor::constant() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    t.dtype_ = dtype_;
    return t;
}

std::string Tensor::shape_str() const { return shape_to_str(shape_); }

// ---- Tape ----

int Tape::add_node(std::vector<int> shape, int size, Dtype dt, BackFn back) {
    nodes_.push_back(Node{std::move(shape), size, dt, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buf(int node) {
    if (grads_[node].empty()) grads_[node].assign(nodes_[node].size, 0.0);
    return grads_[node];
}

Tensor Tape::leaf(const Tensor& t) {
    if (!t.defined()) throw ValueError("leaf: undefined tensor");
    Tensor out = t.constant();
    out.node_ = add_node(t.shape(), t.size(), t.dtype(), nullptr);
    out.tape_ = this;
    return out;
}

void Tape::backward(const Tensor& output) {
    if (output.tape() != this || output.node() < 0)
        throw ValueError("backward: output is not on this graph");
    if (output.size() != 1)
        throw ValueError("backward: output of shape " + output.shape_str() + " is not scalar");
    grads_.assign(nodes_.size(), {});
    grad_buf(output.node())[0] = 1.0;
    for (int i = output.node(); i >= 0; --i) {
        if (grads_[i].empty() || !nodes_[i].back) continue;
        nodes_[i].back(grads_[i], *this);
    }
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (!grads_[i].empty()) round_vec(grads_[i], nodes_[i].dtype);
}

Tensor Tape::grad(const Tensor& t) const {
    if (t.tape() != this || t.node() < 0)
        throw ValueError("grad: tensor is not tracked on this tape");
    if (grads_.empty()) throw ValueError("grad: backward() has not run");
    const auto& g = grads_[t.node()];
    if (g.empty()) return Tensor::zeros(t.shape(), t.dtype());
    return Tensor(t.shape(), g, t.dtype());
}

Tensor record_op(Tape* tp, std::vector<int> shape, std::vector<double> vals, Dtype dt,
                 Tape::BackFn back) {
    round_vec(vals, dt);
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = std::make_shared<std::vector<double>>(std::move(vals));
    out.dtype_ = dt;
    if (tp) {
        out.node_ = tp->add_node(out.shape_, out.size(), dt, std::move(back));
        out.tape_ = tp;
    }
    return out;
}

Tensor record_op(Tape* tp, std::vector<int> shape, std::vector<double> vals, Dtype dt,
                 Tape::BackFn back);

// ---- elementwise helpers ----

namespace {

using Fwd2 = double (*)(double, double);

Tensor binary_op(const std::string& op, const Tensor& a, const Tensor& b, Fwd2 f,
                 Fwd2 dfda, Fwd2 dfdb) {
    const Dtype dt = common_dtype(op, a, b);
    Tape* tp = common_tape(op, a, b);
    BcastPlan p = make_bcast(op, a.shape(), b.shape());
    std::vector<double> out(p.out_size);
    const auto& da = a.data();
    const auto& db = b.data();
    for (int i = 0; i < p.out_size; ++i) {
        const double va = da[p.map_a.empty() ? i : p.map_a[i]];
        const double vb = db[p.map_b.empty() ? i : p.map_b[i]];
        out[i] = f(va, vb);
    }
    Tape::BackFn back;
    if (tp) {
        const int na = a.node(), nb = b.node();
        auto plan = std::make_shared<BcastPlan>(std::move(p));
        back = [na, nb, dfda, dfdb, plan, pa = a.constant(), pb = b.constant()](
                   const std::vector<double>& g, Tape& t) {
            const auto& xa = pa.data();
            const auto& xb = pb.data();
            if (na >= 0) {
                auto& ga = t.grad_buf(na);
                for (int i = 0; i < plan->out_size; ++i) {
                    const int ia = plan->map_a.empty() ? i : plan->map_a[i];
                    const int ib = plan->map_b.empty() ? i : plan->map_b[i];
                    ga[ia] += g[i] * dfda(xa[ia], xb[ib]);
                }
            }
            if (nb >= 0) {
                auto& gb = t.grad_buf(nb);
                for (int i = 0; i < plan->out_size; ++i) {
                    const int ia = plan->map_a.empty() ? i : plan->map_a[i];
                    const int ib = plan->map_b.empty() ? i : plan->map_b[i];
                    gb[ib] += g[i] * dfdb(xa[ia], xb[ib]);
                }
            }
        };
        return record_op(tp, plan->out_shape, std::move(out), dt, std::move(back));
    }
    return record_op(nullptr, p.out_shape, std::move(out), dt, nullptr);
}

} // namespace

// Unary ops need the output value in their backward; implement without the
// broken helper above by computing values first, then recording.
static Tensor unary(const std::string& op, const Tensor& a,
                    const std::function<double(double)>& f,
                    const std::function<double(double, double)>& dfdx) {
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    std::vector<double> out(a.size());
    const auto& dx = a.data();
    for (int i = 0; i < a.size(); ++i) out[i] = f(dx[i]);
    Tape::BackFn back;
    if (tp) {
        // y values recomputed cheaply from rounded outputs captured below.
        auto yvals = std::make_shared<std::vector<double>>(out);
        round_vec(*yvals, a.dtype());
        const int na = a.node();
        back = [na, pa = a.constant(), yvals, dfdx](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buf(na);
            const auto& x = pa.data();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], (*yvals)[i]);
        };
    }
    return record_op(tp, a.shape(), std::move(out), a.dtype(), std::move(back));
}

// ---- primitives ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
    return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c, a.dtype())); }
Tensor sub(const Tensor& a, double c) { return sub(a, Tensor::scalar(c, a.dtype())); }
Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c, a.dtype())); }
Tensor div(const Tensor& a, double c) { return div(a, Tensor::scalar(c, a.dtype())); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        shape_fail("matmul", a.shape(), b.shape());
    const Dtype dt = common_dtype("matmul", a, b);
    Tape* tp = common_tape("matmul", a, b);
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(static_cast<size_t>(m) * n);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.data().data(), k,
                b.data().data(), n, 0.0, out.data(), n);
    Tape::BackFn back;
    if (tp) {
        const int na = a.node(), nb = b.node();
        back = [na, nb, m, k, n, pa = a.constant(), pb = b.constant()](
                   const std::vector<double>& g, Tape& t) {
            if (na >= 0) { // gA += g . B^T
                auto& ga = t.grad_buf(na);
                cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0, g.data(), n,
                            pb.data().data(), n, 1.0, ga.data(), k);
            }
            if (nb >= 0) { // gB += A^T . g
                auto& gb = t.grad_buf(nb);
                cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0,
                            pa.data().data(), k, g.data(), n, 1.0, gb.data(), n);
            }
        };
    }
    return record_op(tp, {m, n}, std::move(out), dt, std::move(back));
}

static void check_reduce_axis(const std::string& op, const Tensor& a, int axis) {
    if (axis == -1) return;
    if (a.shape().size() != 2 || (axis != 0 && axis != 1))
        throw ShapeError(op + ": axis " + std::to_string(axis) + " invalid for shape " +
                         a.shape_str());
}

Tensor sum(const Tensor& a, int axis) {
    check_reduce_axis("sum", a, axis);
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    const int na = a.node();
    if (axis == -1) {
        double s = 0.0;
        for (double v : a.data()) s += v;
        Tape::BackFn back;
        if (tp)
            back = [na, n = a.size()](const std::vector<double>& g, Tape& t) {
                auto& ga = t.grad_buf(na);
                for (int i = 0; i < n; ++i) ga[i] += g[0];
            };
        return record_op(tp, {1}, {s}, a.dtype(), std::move(back));
    }
    const int m = a.shape()[0], n = a.shape()[1];
    std::vector<int> oshape = axis == 0 ? std::vector<int>{1, n} : std::vector<int>{m, 1};
    std::vector<double> out(axis == 0 ? n : m, 0.0);
    const auto& d = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[axis == 0 ? j : i] += d[i * n + j];
    Tape::BackFn back;
    if (tp)
        back = [na, m, n, axis](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buf(na);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[i * n + j] += g[axis == 0 ? j : i];
        };
    return record_op(tp, oshape, std::move(out), a.dtype(), std::move(back));
}

Tensor mean(const Tensor& a, int axis) {
    check_reduce_axis("mean", a, axis);
    const double denom = axis == -1 ? a.size() : a.shape()[axis];
    return div(sum(a, axis), denom);
}

Tensor broadcast(const Tensor& a, const std::vector<int>& shape) {
    BcastPlan p = make_bcast("broadcast", a.shape(), shape);
    if (p.out_shape != shape) shape_fail("broadcast", a.shape(), shape);
    auto map = bcast_map(a.shape(), shape);
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    const int n = shape_product(shape);
    std::vector<double> out(n);
    const auto& d = a.data();
    for (int i = 0; i < n; ++i) out[i] = d[map.empty() ? i : map[i]];
    Tape::BackFn back;
    if (tp) {
        const int na = a.node();
        auto m = std::make_shared<std::vector<int>>(std::move(map));
        back = [na, m, n](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buf(na);
            for (int i = 0; i < n; ++i) ga[m->empty() ? i : (*m)[i]] += g[i];
        };
    }
    return record_op(tp, shape, std::move(out), a.dtype(), std::move(back));
}

Tensor reshape(const Tensor& a, const std::vector<int>& shape) {
    if (shape_product(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    Tape::BackFn back;
    if (tp) {
        const int na = a.node();
        back = [na](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buf(na);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return record_op(tp, shape, a.data(), a.dtype(), std::move(back));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ValueError("concat: no inputs");
    if (parts.size() == 1) return reshape(parts[0], parts[0].shape());
    const Dtype dt = parts[0].dtype();
    Tape* tp = nullptr;
    for (const auto& p : parts) {
        if (p.dtype() != dt) throw ValueError("concat: mixed dtypes");
        if (p.requires_grad()) {
            if (tp && tp != p.tape()) throw ValueError("concat: operands on different tapes");
            tp = p.tape();
        }
        if (p.shape().size() != parts[0].shape().size())
            shape_fail("concat", parts[0].shape(), p.shape());
    }
    const int rank = static_cast<int>(parts[0].shape().size());
    if (axis < 0 || axis >= rank || rank > 2)
        throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
    if (rank == 1) {
        int total = 0;
        for (const auto& p : parts) total += p.shape()[0];
        std::vector<double> out;
        out.reserve(total);
        for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
        Tape::BackFn back;
        if (tp) {
            std::vector<std::pair<int, int>> segs; // node, size
            for (const auto& p : parts) segs.emplace_back(p.node(), p.size());
            back = [segs](const std::vector<double>& g, Tape& t) {
                int off = 0;
                for (auto [node, sz] : segs) {
                    if (node >= 0) {
                        auto& gp = t.grad_buf(node);
                        for (int i = 0; i < sz; ++i) gp[i] += g[off + i];
                    }
                    off += sz;
                }
            };
        }
        return record_op(tp, {total}, std::move(out), dt, std::move(back));
    }
    // rank 2
    const int other = axis == 0 ? 1 : 0;
    const int fixed = parts[0].shape()[other];
    int total = 0;
    for (const auto& p : parts) {
        if (p.shape()[other] != fixed) shape_fail("concat", parts[0].shape(), p.shape());
        total += p.shape()[axis];
    }
    std::vector<int> oshape = axis == 0 ? std::vector<int>{total, fixed}
                                        : std::vector<int>{fixed, total};
    std::vector<double> out(static_cast<size_t>(total) * fixed);
    if (axis == 0) {
        int off = 0;
        for (const auto& p : parts) {
            std::copy(p.data().begin(), p.data().end(), out.begin() + off);
            off += p.size();
        }
    } else {
        int col_off = 0;
        for (const auto& p : parts) {
            const int cols = p.shape()[1];
            for (int i = 0; i < fixed; ++i)
                for (int j = 0; j < cols; ++j)
                    out[static_cast<size_t>(i) * total + col_off + j] = p.data()[i * cols + j];
            col_off += cols;
        }
    }
    Tape::BackFn back;
    if (tp) {
        struct Seg { int node, extent; };
        std::vector<Seg> segs;
        for (const auto& p : parts) segs.push_back({p.node(), p.shape()[axis]});
        back = [segs, axis, fixed, total](const std::vector<double>& g, Tape& t) {
            int off = 0;
            for (const auto& s : segs) {
                if (s.node >= 0) {
                    auto& gp = t.grad_buf(s.node);
                    if (axis == 0) {
                        for (int i = 0; i < s.extent * fixed; ++i) gp[i] += g[off * fixed + i];
                    } else {
                        for (int i = 0; i < fixed; ++i)
                            for (int j = 0; j < s.extent; ++j)
                                gp[i * s.extent + j] += g[static_cast<size_t>(i) * total + off + j];
                    }
                }
                off += s.extent;
            }
        };
    }
    return record_op(tp, oshape, std::move(out), dt, std::move(back));
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    const int rank = static_cast<int>(a.shape().size());
    if (axis < 0 || axis >= rank || rank > 2)
        throw ShapeError("slice: axis " + std::to_string(axis) + " invalid for shape " +
                         a.shape_str());
    if (start < 0 || len <= 0 || start + len > a.shape()[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds shape " + a.shape_str());
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    const int na = a.node();
    if (rank == 1) {
        std::vector<double> out(a.data().begin() + start, a.data().begin() + start + len);
        Tape::BackFn back;
        if (tp)
            back = [na, start, len](const std::vector<double>& g, Tape& t) {
                auto& ga = t.grad_buf(na);
                for (int i = 0; i < len; ++i) ga[start + i] += g[i];
            };
        return record_op(tp, {len}, std::move(out), a.dtype(), std::move(back));
    }
    const int rows = a.shape()[0], cols = a.shape()[1];
    std::vector<int> oshape = axis == 0 ? std::vector<int>{len, cols}
                                        : std::vector<int>{rows, len};
    std::vector<double> out(shape_product(oshape));
    if (axis == 0) {
        std::copy(a.data().begin() + static_cast<size_t>(start) * cols,
                  a.data().begin() + static_cast<size_t>(start + len) * cols, out.begin());
    } else {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < len; ++j) out[i * len + j] = a.data()[i * cols + start + j];
    }
    Tape::BackFn back;
    if (tp)
        back = [na, axis, start, len, rows, cols](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buf(na);
            if (axis == 0) {
                for (int i = 0; i < len * cols; ++i) ga[start * cols + i] += g[i];
            } else {
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < len; ++j) ga[i * cols + start + j] += g[i * len + j];
            }
        };
    return record_op(tp, oshape, std::move(out), a.dtype(), std::move(back));
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh_(const Tensor& a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sin_(const Tensor& a) {
    return unary(
        "sin", a, [](double x) { return std::sin(x); },
        [](double x, double) { return std::cos(x); });
}

Tensor cos_(const Tensor& a) {
    return unary(
        "cos", a, [](double x) { return std::cos(x); },
        [](double x, double) { return -std::sin(x); });
}

Tensor exp_(const Tensor& a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_(const Tensor& a) {
    for (int i = 0; i < a.size(); ++i)
        if (a.at(i) < 0.0) throw DomainError("log: negative input at index " + std::to_string(i));
    return unary(
        "log", a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_(const Tensor& a) {
    for (int i = 0; i < a.size(); ++i)
        if (a.at(i) < 0.0) throw DomainError("sqrt: negative input at index " + std::to_string(i));
    return unary(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor l2norm(const Tensor& a) { return sqrt_(sum(square(a))); }

Tensor softmax(const Tensor& a) {
    const int rank = static_cast<int>(a.shape().size());
    const int rows = rank == 2 ? a.shape()[0] : 1;
    const int cols = rank == 2 ? a.shape()[1] : a.size();
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    std::vector<double> out(a.size());
    const auto& d = a.data();
    for (int i = 0; i < rows; ++i) {
        double mx = d[i * cols];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, d[i * cols + j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += (out[i * cols + j] = std::exp(d[i * cols + j] - mx));
        for (int j = 0; j < cols; ++j) out[i * cols + j] /= s;
    }
    Tape::BackFn back;
    if (tp) {
        const int na = a.node();
        auto yvals = std::make_shared<std::vector<double>>(out);
        round_vec(*yvals, a.dtype());
        back = [na, rows, cols, yvals](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buf(na);
            for (int i = 0; i < rows; ++i) {
                double dot = 0.0;
                for (int j = 0; j < cols; ++j) dot += g[i * cols + j] * (*yvals)[i * cols + j];
                for (int j = 0; j < cols; ++j)
                    ga[i * cols + j] += (*yvals)[i * cols + j] * (g[i * cols + j] - dot);
            }
        };
    }
    return record_op(tp, a.shape(), std::move(out), a.dtype(), std::move(back));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mse", a.shape(), b.shape());
    return mean(square(sub(a, b)));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw ValueError("clamp: lo > hi");
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    std::vector<double> out(a.size());
    const auto& d = a.data();
    for (int i = 0; i < a.size(); ++i) out[i] = std::min(hi, std::max(lo, d[i]));
    Tape::BackFn back;
    if (tp) {
        const int na = a.node();
        back = [na, lo, hi, pa = a.constant()](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buf(na);
            const auto& x = pa.data();
            for (size_t i = 0; i < g.size(); ++i)
                if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
        };
    }
    return record_op(tp, a.shape(), std::move(out), a.dtype(), std::move(back));
}

Tensor detach(const Tensor& a) {
    // Recorded as a node with no incoming gradient edges: values flow forward,
    // nothing flows back.
    Tape* tp = a.requires_grad() ? a.tape() : nullptr;
    return record_op(tp, a.shape(), a.data(), a.dtype(), nullptr);
}

// ---- dispatcher ----

const std::vector<std::string>& primitive_catalog() {
    static const std::vector<std::string> cat = {
        "add",  "sub",    "mul",   "div",     "neg",  "matmul", "sum",    "mean",
        "broadcast", "reshape", "concat", "slice", "relu", "tanh",   "sin",    "cos",
        "exp",  "log",    "sqrt",  "square",  "l2norm", "softmax", "mse",  "clamp",
        "detach"};
    return cat;
}

Tensor apply_primitive(const std::string& tag, const std::vector<Tensor>& in, const OpAttrs& at) {
    auto need = [&](size_t n) {
        if (in.size() != n)
            throw ValueError("apply_primitive(" + tag + "): expected " + std::to_string(n) +
                             " inputs, got " + std::to_string(in.size()));
    };
    if (tag == "add") { need(2); return add(in[0], in[1]); }
    if (tag == "sub") { need(2); return sub(in[0], in[1]); }
    if (tag == "mul") { need(2); return mul(in[0], in[1]); }
    if (tag == "div") { need(2); return div(in[0], in[1]); }
    if (tag == "neg") { need(1); return neg(in[0]); }
    if (tag == "matmul") { need(2); return matmul(in[0], in[1]); }
    if (tag == "sum") { need(1); return sum(in[0], at.axis); }
    if (tag == "mean") { need(1); return mean(in[0], at.axis); }
    if (tag == "broadcast") { need(1); return broadcast(in[0], at.shape); }
    if (tag == "reshape") { need(1); return reshape(in[0], at.shape); }
    if (tag == "concat") { return concat(in, at.axis < 0 ? 0 : at.axis); }
    if (tag == "slice") { need(1); return slice(in[0], at.axis < 0 ? 0 : at.axis, at.start, at.len); }
    if (tag == "relu") { need(1); return relu(in[0]); }
    if (tag == "tanh") { need(1); return tanh_(in[0]); }
    if (tag == "sin") { need(1); return sin_(in[0]); }
    if (tag == "cos") { need(1); return cos_(in[0]); }
    if (tag == "exp") { need(1); return exp_(in[0]); }
    if (tag == "log") { need(1); return log_(in[0]); }
    if (tag == "sqrt") { need(1); return sqrt_(in[0]); }
    if (tag == "square") { need(1); return square(in[0]); }
    if (tag == "l2norm") { need(1); return l2norm(in[0]); }
    if (tag == "softmax") { need(1); return softmax(in[0]); }
    if (tag == "mse") { need(2); return mse(in[0], in[1]); }
    if (tag == "clamp") { need(1); return clamp(in[0], at.lo, at.hi); }
    if (tag == "detach") { need(1); return detach(in[0]); }
    throw ValueError("apply_primitive: unknown op tag '" + tag + "'");
}

// ---- finite differences ----

double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                         double h) {
    if (x.dtype() != Dtype::f64) throw ValueError("finite_diff_check: x must be f64");
    Tensor analytic;
    {
        Tape tape;
        Tensor xt = tape.leaf(x);
        Tensor y = f(tape, xt);
        tape.backward(y);
        analytic = tape.grad(xt);
    }
    auto eval = [&](const Tensor& xv) {
        Tape tape;
        Tensor xt = tape.leaf(xv);
        return f(tape, xt).item();
    };
    double max_rel = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        Tensor xp = x.clone(), xm = x.clone();
        xp.mutable_data()[i] += h;
        xm.mutable_data()[i] -= h;
        const double central = (eval(xp) - eval(xm)) / (2.0 * h);
        const double ai = analytic.at(i);
        if (!std::isfinite(central) || !std::isfinite(ai))
            throw DomainError("finite_diff_check: non-finite value at index " + std::to_string(i));
        max_rel = std::max(max_rel, std::abs(ai - central) / (std::abs(central) + 1e-8));
    }
    return max_rel;
}

} // namespace latshield
