#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "zeroscm/tensor.hpp"

namespace zeroscm {

/// Named parameter store. Iteration order is the sorted name order, which
/// keeps optimizer updates and serialization deterministic.
template <typename T>
class ParamRegistry {
  public:
    Tensor<T>& create(const std::string& name, Tensor<T> init) {
        auto [it, fresh] = store_.emplace(name, std::move(init));
        if (!fresh) throw ShapeError("parameter already registered: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return store_.count(name) != 0; }
    Tensor<T>& get(const std::string& name) {
        auto it = store_.find(name);
        if (it == store_.end()) throw ShapeError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor<T>& get(const std::string& name) const {
        return const_cast<ParamRegistry*>(this)->get(name);
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(store_.size());
        for (auto& kv : store_) out.push_back(kv.first);
        return out;
    }
    std::map<std::string, Tensor<T>>& store() { return store_; }
    const std::map<std::string, Tensor<T>>& store() const { return store_; }

  private:
    std::map<std::string, Tensor<T>> store_;
};

enum class Op {
    Input,
    Param,
    Affine,        // x[...,k] * W[k,m] + b[m]
    MatMul,        // A[...,m,k] * B[...,k,n] (B may be rank-2, shared across batches)
    Transpose,     // swap two axes
    Reshape,
    Add,           // broadcasting, numpy right-aligned
    Mul,           // broadcasting
    Scale,         // x * static constant
    Gelu,
    LayerNorm,     // normalize last axis, eps 1e-5, no affine
    SoftmaxRows,   // softmax over last axis; blocked entries weigh exactly 0
    DagSoftmaxRows,// like SoftmaxRows but row denominator max(sum, 1)
    MaxPool,       // reduce-max over one axis
    Mse,           // mean squared error -> scalar
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Affine: return "affine";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Reshape: return "reshape";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Gelu: return "gelu";
        case Op::LayerNorm: return "layer_norm";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::DagSoftmaxRows: return "dag_softmax_rows";
        case Op::MaxPool: return "max_pool";
        case Op::Mse: return "mse";
    }
    return "?";
}

namespace detail {

inline std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                            const std::vector<int64_t>& b) {
    size_t r = std::max(a.size(), b.size());
    std::vector<int64_t> out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
        int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
        out[r - 1 - i] = std::max(ea, eb);
    }
    return out;
}

// Strides of `shape` viewed through `out_shape`; broadcast axes get stride 0.
inline std::vector<int64_t> broadcast_strides(const std::vector<int64_t>& shape,
                                              const std::vector<int64_t>& out_shape) {
    std::vector<int64_t> st = strides_of(shape);
    std::vector<int64_t> out(out_shape.size(), 0);
    for (size_t i = 0; i < out_shape.size(); ++i) {
        size_t oi = out_shape.size() - 1 - i;
        if (i < shape.size()) {
            size_t si = shape.size() - 1 - i;
            out[oi] = (shape[si] == 1 && out_shape[oi] != 1) ? 0 : st[si];
        }
    }
    return out;
}

// Visit every element of out_shape in row-major order, tracking offsets into
// two broadcast operands.
template <typename F>
void for_each_pair(const std::vector<int64_t>& out_shape, const std::vector<int64_t>& sa,
                   const std::vector<int64_t>& sb, F&& f) {
    int64_t total = numel_of(out_shape);
    int r = static_cast<int>(out_shape.size());
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t offa = 0, offb = 0;
    for (int64_t lin = 0; lin < total; ++lin) {
        f(lin, offa, offb);
        for (int ax = r - 1; ax >= 0; --ax) {
            idx[ax]++;
            offa += sa[ax];
            offb += sb[ax];
            if (idx[ax] < out_shape[ax]) break;
            offa -= sa[ax] * out_shape[ax];
            offb -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

}  // namespace detail

/// One recorded primitive application.
template <typename T>
struct TapeNode {
    Op op;
    int in0 = -1, in1 = -1, in2 = -1;
    Tensor<T> value;

    // static attributes
    std::string param_name;             // Param
    std::vector<int64_t> shape_attr;    // Reshape
    int axis0 = -1, axis1 = -1;         // Transpose / MaxPool axis in axis0
    T scalar{};                         // Scale
    Tensor<uint8_t> blocked;            // SoftmaxRows/DagSoftmaxRows; empty = unmasked
    // forward scratch reused by backward
    std::vector<uint8_t> row_flag;      // softmax: 0 diag-branch, 1 softmax-branch, 2 all-blocked
    std::vector<int64_t> arg_index;     // max-pool winners (absolute input offsets)
};

/// Append-only record of primitive applications (define-by-run). Re-running
/// `replay()` on the same leaf values reproduces every node value bit for bit.
template <typename T>
class Tape {
  public:
    explicit Tape(const ParamRegistry<T>* params = nullptr) : params_(params) {}

    int input(Tensor<T> v) {
        TapeNode<T> n;
        n.op = Op::Input;
        n.value = std::move(v);
        check_finite(n.value, Op::Input);
        nodes_.push_back(std::move(n));
        return last();
    }

    int param(const std::string& name) {
        auto it = param_nodes_.find(name);
        if (it != param_nodes_.end()) return it->second;
        if (!params_) throw ShapeError("tape has no parameter registry");
        TapeNode<T> n;
        n.op = Op::Param;
        n.param_name = name;
        n.value = params_->get(name);
        check_finite(n.value, Op::Param);
        nodes_.push_back(std::move(n));
        param_nodes_[name] = last();
        return last();
    }

    void set_input(int id, Tensor<T> v) {
        TapeNode<T>& n = node(id);
        if (n.op != Op::Input) throw ShapeError("set_input on non-input node");
        if (n.value.shape != v.shape)
            throw ShapeError("set_input shape " + shape_str(v.shape) + " != " +
                             shape_str(n.value.shape));
        check_finite(v, Op::Input);
        n.value = std::move(v);
    }

    int affine(int x, int w, int b) { return record(Op::Affine, x, w, b); }
    int matmul(int a, int b) { return record(Op::MatMul, a, b); }
    int transpose(int a, int ax0, int ax1) {
        TapeNode<T> n;
        n.op = Op::Transpose;
        n.in0 = a;
        n.axis0 = ax0;
        n.axis1 = ax1;
        return push(std::move(n));
    }
    int reshape(int a, std::vector<int64_t> shape) {
        TapeNode<T> n;
        n.op = Op::Reshape;
        n.in0 = a;
        n.shape_attr = std::move(shape);
        return push(std::move(n));
    }
    int add(int a, int b) { return record(Op::Add, a, b); }
    int mul(int a, int b) { return record(Op::Mul, a, b); }
    int scale(int a, T c) {
        TapeNode<T> n;
        n.op = Op::Scale;
        n.in0 = a;
        n.scalar = c;
        return push(std::move(n));
    }
    int gelu(int a) { return record(Op::Gelu, a); }
    int layer_norm(int a) { return record(Op::LayerNorm, a); }
    int softmax_rows(int logits, Tensor<uint8_t> blocked = {}) {
        TapeNode<T> n;
        n.op = Op::SoftmaxRows;
        n.in0 = logits;
        n.blocked = std::move(blocked);
        return push(std::move(n));
    }
    int dag_softmax_rows(int logits, Tensor<uint8_t> blocked = {}) {
        TapeNode<T> n;
        n.op = Op::DagSoftmaxRows;
        n.in0 = logits;
        n.blocked = std::move(blocked);
        return push(std::move(n));
    }
    int max_pool(int a, int axis) {
        TapeNode<T> n;
        n.op = Op::MaxPool;
        n.in0 = a;
        n.axis0 = axis;
        return push(std::move(n));
    }
    int mse(int pred, int target) { return record(Op::Mse, pred, target); }

    const Tensor<T>& value(int id) const { return node(id).value; }
    T scalar_value(int id) const {
        const Tensor<T>& v = node(id).value;
        if (v.numel() != 1) throw ShapeError("scalar_value on non-scalar node");
        return v.data[0];
    }
    size_t size() const { return nodes_.size(); }

    /// Recompute every node value in order. Inputs keep their stored values;
    /// Param nodes re-read the registry.
    void replay() {
        for (auto& n : nodes_) compute(n);
    }

    /// Forward-only replay that drops intermediate values as soon as their
    /// last consumer has run. Gradients are unavailable afterwards; the node
    /// ids in `keep` (plus leaves) stay materialized.
    void replay_inference(const std::vector<int>& keep) {
        std::vector<int> uses(nodes_.size(), 0);
        std::vector<char> kept(nodes_.size(), 0);
        for (int k : keep) kept[static_cast<size_t>(k)] = 1;
        for (auto& n : nodes_) {
            for (int in : {n.in0, n.in1, n.in2})
                if (in >= 0) uses[static_cast<size_t>(in)]++;
        }
        for (size_t i = 0; i < nodes_.size(); ++i) {
            compute(nodes_[i]);
            for (int in : {nodes_[i].in0, nodes_[i].in1, nodes_[i].in2}) {
                if (in < 0) continue;
                size_t j = static_cast<size_t>(in);
                if (--uses[j] == 0 && !kept[j] && nodes_[j].op != Op::Input &&
                    nodes_[j].op != Op::Param) {
                    nodes_[j].value.data.clear();
                    nodes_[j].value.data.shrink_to_fit();
                }
            }
        }
    }

    /// Reverse-mode sweep from a scalar loss. Returns one gradient tensor per
    /// registered parameter; parameters the loss does not reach get zeros.
    std::map<std::string, Tensor<T>> gradients(int loss) const {
        if (node(loss).value.numel() != 1) throw ShapeError("gradients: loss is not scalar");
        std::vector<Tensor<T>> g(nodes_.size());
        g[static_cast<size_t>(loss)] = node(loss).value;  // shape carrier
        std::fill(g[static_cast<size_t>(loss)].data.begin(),
                  g[static_cast<size_t>(loss)].data.end(), T(1));
        for (int i = loss; i >= 0; --i) {
            if (g[static_cast<size_t>(i)].empty()) continue;
            backward(static_cast<size_t>(i), g);
        }
        std::map<std::string, Tensor<T>> out;
        if (params_)
            for (auto& kv : params_->store()) out.emplace(kv.first, Tensor<T>::zeros(kv.second.shape));
        for (auto& kv : param_nodes_) {
            const Tensor<T>& gi = g[static_cast<size_t>(kv.second)];
            if (!gi.empty()) out[kv.first] = gi;
        }
        return out;
    }

  private:
    const ParamRegistry<T>* params_;
    std::vector<TapeNode<T>> nodes_;
    std::unordered_map<std::string, int> param_nodes_;

    using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<MatRM>;
    using MapCM = Eigen::Map<const MatRM>;

    int last() const { return static_cast<int>(nodes_.size()) - 1; }
    TapeNode<T>& node(int id) { return nodes_.at(static_cast<size_t>(id)); }
    const TapeNode<T>& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

    int record(Op op, int a, int b = -1, int c = -1) {
        TapeNode<T> n;
        n.op = op;
        n.in0 = a;
        n.in1 = b;
        n.in2 = c;
        return push(std::move(n));
    }

    int push(TapeNode<T> n) {
        nodes_.push_back(std::move(n));
        compute(nodes_.back());
        return last();
    }

    static void check_finite(const Tensor<T>& t, Op op) {
        if (!t.all_finite())
            throw NumericError(std::string(op_name(op)) + ": non-finite output");
    }

    const Tensor<T>& in_val(const TapeNode<T>& n, int which) const {
        int id = which == 0 ? n.in0 : which == 1 ? n.in1 : n.in2;
        return node(id).value;
    }

    void compute(TapeNode<T>& n) {
        switch (n.op) {
            case Op::Input:
                return;  // leaf, immutable during replay
            case Op::Param:
                n.value = params_->get(n.param_name);
                break;
            case Op::Affine: forward_affine(n); break;
            case Op::MatMul: forward_matmul(n); break;
            case Op::Transpose: forward_transpose(n); break;
            case Op::Reshape: forward_reshape(n); break;
            case Op::Add: forward_ewise(n, /*is_mul=*/false); break;
            case Op::Mul: forward_ewise(n, /*is_mul=*/true); break;
            case Op::Scale: {
                const Tensor<T>& a = in_val(n, 0);
                n.value.shape = a.shape;
                n.value.data.resize(a.data.size());
                for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] * n.scalar;
                break;
            }
            case Op::Gelu: forward_gelu(n); break;
            case Op::LayerNorm: forward_layer_norm(n); break;
            case Op::SoftmaxRows: forward_softmax(n, /*dag=*/false); break;
            case Op::DagSoftmaxRows: forward_softmax(n, /*dag=*/true); break;
            case Op::MaxPool: forward_max_pool(n); break;
            case Op::Mse: forward_mse(n); break;
        }
        check_finite(n.value, n.op);
    }

    // ---- forward implementations ----

    void forward_affine(TapeNode<T>& n) {
        const Tensor<T>& x = in_val(n, 0);
        const Tensor<T>& w = in_val(n, 1);
        const Tensor<T>& b = in_val(n, 2);
        if (x.rank() < 1 || w.rank() != 2 || b.rank() != 1)
            throw ShapeError("affine: ranks");
        int64_t k = x.shape.back(), m = w.shape[1];
        if (w.shape[0] != k || b.shape[0] != m)
            throw ShapeError("affine: " + shape_str(x.shape) + " * " + shape_str(w.shape));
        int64_t rows = x.numel() / k;
        std::vector<int64_t> out_shape = x.shape;
        out_shape.back() = m;
        n.value.shape = out_shape;
        n.value.data.resize(static_cast<size_t>(rows * m));
        MapCM X(x.data.data(), rows, k), W(w.data.data(), k, m);
        MapM Y(n.value.data.data(), rows, m);
        Y.noalias() = X * W;
        Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data.data(), m);
    }

    void forward_matmul(TapeNode<T>& n) {
        const Tensor<T>& a = in_val(n, 0);
        const Tensor<T>& b = in_val(n, 1);
        if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: ranks");
        int64_t m = a.shape[a.rank() - 2], k = a.shape[a.rank() - 1];
        int64_t k2 = b.shape[b.rank() - 2], nn = b.shape[b.rank() - 1];
        if (k != k2) throw ShapeError("matmul inner: " + shape_str(a.shape) + " x " + shape_str(b.shape));
        int64_t batch = a.numel() / (m * k);
        bool shared_b = b.rank() == 2;
        if (!shared_b) {
            std::vector<int64_t> la(a.shape.begin(), a.shape.end() - 2);
            std::vector<int64_t> lb(b.shape.begin(), b.shape.end() - 2);
            if (la != lb) throw ShapeError("matmul batch dims differ");
        }
        std::vector<int64_t> out_shape(a.shape.begin(), a.shape.end() - 1);
        out_shape.push_back(nn);
        n.value.shape = out_shape;
        n.value.data.resize(static_cast<size_t>(batch * m * nn));
        for (int64_t s = 0; s < batch; ++s) {
            MapCM A(a.data.data() + s * m * k, m, k);
            MapCM B(b.data.data() + (shared_b ? 0 : s * k * nn), k, nn);
            MapM Y(n.value.data.data() + s * m * nn, m, nn);
            Y.noalias() = A * B;
        }
    }

    void forward_transpose(TapeNode<T>& n) {
        const Tensor<T>& a = in_val(n, 0);
        int r = a.rank();
        int ax0 = n.axis0, ax1 = n.axis1;
        if (ax0 < 0 || ax1 < 0 || ax0 >= r || ax1 >= r) throw ShapeError("transpose axes");
        std::vector<int64_t> out_shape = a.shape;
        std::swap(out_shape[ax0], out_shape[ax1]);
        std::vector<int64_t> ist = strides_of(a.shape);
        std::swap(ist[ax0], ist[ax1]);  // stride of out axis i into input
        n.value.shape = out_shape;
        n.value.data.resize(a.data.size());
        std::vector<int64_t> zero(out_shape.size(), 0);
        detail::for_each_pair(out_shape, ist, zero, [&](int64_t lin, int64_t off, int64_t) {
            n.value.data[static_cast<size_t>(lin)] = a.data[static_cast<size_t>(off)];
        });
    }

    void forward_reshape(TapeNode<T>& n) {
        const Tensor<T>& a = in_val(n, 0);
        if (numel_of(n.shape_attr) != a.numel())
            throw ShapeError("reshape " + shape_str(a.shape) + " -> " + shape_str(n.shape_attr));
        n.value.shape = n.shape_attr;
        n.value.data = a.data;
    }

    void forward_ewise(TapeNode<T>& n, bool is_mul) {
        const Tensor<T>& a = in_val(n, 0);
        const Tensor<T>& b = in_val(n, 1);
        if (a.shape == b.shape) {
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            if (is_mul)
                for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] * b.data[i];
            else
                for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] + b.data[i];
            return;
        }
        std::vector<int64_t> out_shape = detail::broadcast_shape(a.shape, b.shape);
        auto sa = detail::broadcast_strides(a.shape, out_shape);
        auto sb = detail::broadcast_strides(b.shape, out_shape);
        n.value.shape = out_shape;
        n.value.data.resize(static_cast<size_t>(numel_of(out_shape)));
        if (is_mul)
            detail::for_each_pair(out_shape, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
                n.value.data[static_cast<size_t>(lin)] =
                    a.data[static_cast<size_t>(oa)] * b.data[static_cast<size_t>(ob)];
            });
        else
            detail::for_each_pair(out_shape, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
                n.value.data[static_cast<size_t>(lin)] =
                    a.data[static_cast<size_t>(oa)] + b.data[static_cast<size_t>(ob)];
            });
    }

    static T gelu_cdf(T x) {
        return T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
    }

    void forward_gelu(TapeNode<T>& n) {
        const Tensor<T>& a = in_val(n, 0);
        n.value.shape = a.shape;
        n.value.data.resize(a.data.size());
        for (size_t i = 0; i < a.data.size(); ++i)
            n.value.data[i] = a.data[i] * gelu_cdf(a.data[i]);
    }

    static constexpr T kLayerNormEps = T(1e-5);

    void forward_layer_norm(TapeNode<T>& n) {
        const Tensor<T>& a = in_val(n, 0);
        if (a.rank() < 1) throw ShapeError("layer_norm: rank 0");
        int64_t c = a.shape.back();
        int64_t rows = a.numel() / c;
        n.value.shape = a.shape;
        n.value.data.resize(a.data.size());
        for (int64_t r = 0; r < rows; ++r) {
            const T* x = a.data.data() + r * c;
            T* y = n.value.data.data() + r * c;
            T mean = 0;
            for (int64_t j = 0; j < c; ++j) mean += x[j];
            mean /= T(c);
            T var = 0;
            for (int64_t j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
            var /= T(c);
            T inv = T(1) / std::sqrt(var + kLayerNormEps);
            for (int64_t j = 0; j < c; ++j) y[j] = (x[j] - mean) * inv;
        }
    }

    // Masked row softmax and its DAG-normalized variant. Blocked entries
    // contribute exp == exactly 0, so fully blocked rows come out all-zero
    // instead of NaN. The DAG variant divides by max(row sum, 1); when the
    // unmasked row maximum is positive the sum already exceeds 1 and the
    // stable shifted softmax path is exact.
    void forward_softmax(TapeNode<T>& n, bool dag) {
        const Tensor<T>& a = in_val(n, 0);
        if (a.rank() < 2) throw ShapeError("softmax: rank < 2");
        int64_t cols = a.shape.back();
        int64_t rows_per = a.shape[a.rank() - 2];
        int64_t batch = a.numel() / (rows_per * cols);
        const Tensor<uint8_t>& blk = n.blocked;
        if (!blk.empty() && (blk.rank() != 2 || blk.shape[0] != rows_per || blk.shape[1] != cols))
            throw ShapeError("softmax mask shape " + shape_str(blk.shape));
        n.value.shape = a.shape;
        n.value.data.resize(a.data.size());
        n.row_flag.assign(static_cast<size_t>(batch * rows_per), 0);
        for (int64_t s = 0; s < batch; ++s) {
            for (int64_t r = 0; r < rows_per; ++r) {
                const T* z = a.data.data() + (s * rows_per + r) * cols;
                T* y = n.value.data.data() + (s * rows_per + r) * cols;
                const uint8_t* brow = blk.empty() ? nullptr : blk.data.data() + r * cols;
                uint8_t& flag = n.row_flag[static_cast<size_t>(s * rows_per + r)];
                T mx = -std::numeric_limits<T>::infinity();
                bool any = false;
                for (int64_t j = 0; j < cols; ++j) {
                    if (brow && brow[j]) continue;
                    any = true;
                    mx = std::max(mx, z[j]);
                }
                if (!any) {
                    for (int64_t j = 0; j < cols; ++j) y[j] = T(0);
                    flag = 2;
                    continue;
                }
                if (!dag || mx > T(0)) {
                    T sum = 0;
                    for (int64_t j = 0; j < cols; ++j) {
                        y[j] = (brow && brow[j]) ? T(0) : std::exp(z[j] - mx);
                        sum += y[j];
                    }
                    T inv = T(1) / sum;
                    for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
                    flag = 1;
                } else {
                    // all unmasked logits <= 0: exp() cannot overflow
                    T sum = 0;
                    for (int64_t j = 0; j < cols; ++j) {
                        y[j] = (brow && brow[j]) ? T(0) : std::exp(z[j]);
                        sum += y[j];
                    }
                    if (sum >= T(1)) {
                        T inv = T(1) / sum;
                        for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
                        flag = 1;
                    } else {
                        flag = 0;  // denominator clamped to 1
                    }
                }
            }
        }
    }

    void forward_max_pool(TapeNode<T>& n) {
        const Tensor<T>& a = in_val(n, 0);
        int axis = n.axis0;
        if (axis < 0 || axis >= a.rank()) throw ShapeError("max_pool axis");
        int64_t extent = a.shape[axis];
        int64_t inner = 1, outer = 1;
        for (int i = axis + 1; i < a.rank(); ++i) inner *= a.shape[i];
        for (int i = 0; i < axis; ++i) outer *= a.shape[i];
        std::vector<int64_t> out_shape;
        for (int i = 0; i < a.rank(); ++i)
            if (i != axis) out_shape.push_back(a.shape[i]);
        n.value.shape = out_shape;
        n.value.data.resize(static_cast<size_t>(outer * inner));
        n.arg_index.resize(static_cast<size_t>(outer * inner));
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t i = 0; i < inner; ++i) {
                int64_t base = o * extent * inner + i;
                T best = a.data[static_cast<size_t>(base)];
                int64_t best_off = base;
                for (int64_t k = 1; k < extent; ++k) {
                    int64_t off = base + k * inner;
                    if (a.data[static_cast<size_t>(off)] > best) {
                        best = a.data[static_cast<size_t>(off)];
                        best_off = off;
                    }
                }
                n.value.data[static_cast<size_t>(o * inner + i)] = best;
                n.arg_index[static_cast<size_t>(o * inner + i)] = best_off;
            }
        }
    }

    void forward_mse(TapeNode<T>& n) {
        const Tensor<T>& a = in_val(n, 0);
        const Tensor<T>& b = in_val(n, 1);
        if (a.shape != b.shape) throw ShapeError("mse shapes differ");
        T acc = 0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            T d = a.data[i] - b.data[i];
            acc += d * d;
        }
        n.value.shape.clear();
        n.value.data.assign(1, acc / T(a.numel()));
    }

    // ---- backward ----

    static void accum(Tensor<T>& g, const std::vector<int64_t>& shape) {
        if (g.empty()) {
            g.shape = shape;
            g.data.assign(static_cast<size_t>(numel_of(shape)), T(0));
        }
    }

    void backward(size_t i, std::vector<Tensor<T>>& g) const {
        const TapeNode<T>& n = nodes_[i];
        const Tensor<T>& go = g[i];
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                return;
            case Op::Affine: {
                const Tensor<T>& x = in_val(n, 0);
                const Tensor<T>& w = in_val(n, 1);
                int64_t k = x.shape.back(), m = w.shape[1];
                int64_t rows = x.numel() / k;
                Tensor<T>& gx = g[static_cast<size_t>(n.in0)];
                Tensor<T>& gw = g[static_cast<size_t>(n.in1)];
                Tensor<T>& gb = g[static_cast<size_t>(n.in2)];
                accum(gx, x.shape);
                accum(gw, w.shape);
                accum(gb, {m});
                MapCM X(x.data.data(), rows, k), W(w.data.data(), k, m),
                    GO(go.data.data(), rows, m);
                MapM GX(gx.data.data(), rows, k), GW(gw.data.data(), k, m);
                GX.noalias() += GO * W.transpose();
                GW.noalias() += X.transpose() * GO;
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(gb.data.data(), m);
                GB += GO.colwise().sum();
                break;
            }
            case Op::MatMul: {
                const Tensor<T>& a = in_val(n, 0);
                const Tensor<T>& b = in_val(n, 1);
                int64_t m = a.shape[a.rank() - 2], k = a.shape[a.rank() - 1];
                int64_t nn = b.shape[b.rank() - 1];
                int64_t batch = a.numel() / (m * k);
                bool shared_b = b.rank() == 2;
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                Tensor<T>& gb = g[static_cast<size_t>(n.in1)];
                accum(ga, a.shape);
                accum(gb, b.shape);
                for (int64_t s = 0; s < batch; ++s) {
                    MapCM A(a.data.data() + s * m * k, m, k);
                    MapCM B(b.data.data() + (shared_b ? 0 : s * k * nn), k, nn);
                    MapCM GO(go.data.data() + s * m * nn, m, nn);
                    MapM GA(ga.data.data() + s * m * k, m, k);
                    MapM GB(gb.data.data() + (shared_b ? 0 : s * k * nn), k, nn);
                    GA.noalias() += GO * B.transpose();
                    GB.noalias() += A.transpose() * GO;
                }
                break;
            }
            case Op::Transpose: {
                const Tensor<T>& a = in_val(n, 0);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                accum(ga, a.shape);
                std::vector<int64_t> ist = strides_of(a.shape);
                std::swap(ist[n.axis0], ist[n.axis1]);
                std::vector<int64_t> zero(n.value.shape.size(), 0);
                detail::for_each_pair(n.value.shape, ist, zero,
                                      [&](int64_t lin, int64_t off, int64_t) {
                                          ga.data[static_cast<size_t>(off)] +=
                                              go.data[static_cast<size_t>(lin)];
                                      });
                break;
            }
            case Op::Reshape: {
                const Tensor<T>& a = in_val(n, 0);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                accum(ga, a.shape);
                for (size_t j = 0; j < go.data.size(); ++j) ga.data[j] += go.data[j];
                break;
            }
            case Op::Add:
            case Op::Mul: {
                const Tensor<T>& a = in_val(n, 0);
                const Tensor<T>& b = in_val(n, 1);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                Tensor<T>& gb = g[static_cast<size_t>(n.in1)];
                accum(ga, a.shape);
                accum(gb, b.shape);
                auto sa = detail::broadcast_strides(a.shape, n.value.shape);
                auto sb = detail::broadcast_strides(b.shape, n.value.shape);
                if (n.op == Op::Add) {
                    detail::for_each_pair(n.value.shape, sa, sb,
                                          [&](int64_t lin, int64_t oa, int64_t ob) {
                                              ga.data[static_cast<size_t>(oa)] +=
                                                  go.data[static_cast<size_t>(lin)];
                                              gb.data[static_cast<size_t>(ob)] +=
                                                  go.data[static_cast<size_t>(lin)];
                                          });
                } else {
                    detail::for_each_pair(
                        n.value.shape, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
                            ga.data[static_cast<size_t>(oa)] +=
                                go.data[static_cast<size_t>(lin)] * b.data[static_cast<size_t>(ob)];
                            gb.data[static_cast<size_t>(ob)] +=
                                go.data[static_cast<size_t>(lin)] * a.data[static_cast<size_t>(oa)];
                        });
                }
                break;
            }
            case Op::Scale: {
                const Tensor<T>& a = in_val(n, 0);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                accum(ga, a.shape);
                for (size_t j = 0; j < go.data.size(); ++j) ga.data[j] += go.data[j] * n.scalar;
                break;
            }
            case Op::Gelu: {
                const Tensor<T>& a = in_val(n, 0);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                accum(ga, a.shape);
                const T inv_sqrt2pi = T(0.3989422804014327);
                for (size_t j = 0; j < a.data.size(); ++j) {
                    T x = a.data[j];
                    T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                    ga.data[j] += go.data[j] * (gelu_cdf(x) + x * pdf);
                }
                break;
            }
            case Op::LayerNorm: {
                const Tensor<T>& a = in_val(n, 0);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                accum(ga, a.shape);
                int64_t c = a.shape.back();
                int64_t rows = a.numel() / c;
                for (int64_t r = 0; r < rows; ++r) {
                    const T* x = a.data.data() + r * c;
                    const T* y = n.value.data.data() + r * c;
                    const T* gy = go.data.data() + r * c;
                    T* gx = ga.data.data() + r * c;
                    T mean = 0, var = 0;
                    for (int64_t j = 0; j < c; ++j) mean += x[j];
                    mean /= T(c);
                    for (int64_t j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
                    var /= T(c);
                    T inv = T(1) / std::sqrt(var + kLayerNormEps);
                    T gmean = 0, gymean = 0;
                    for (int64_t j = 0; j < c; ++j) {
                        gmean += gy[j];
                        gymean += gy[j] * y[j];
                    }
                    gmean /= T(c);
                    gymean /= T(c);
                    for (int64_t j = 0; j < c; ++j)
                        gx[j] += inv * (gy[j] - gmean - y[j] * gymean);
                }
                break;
            }
            case Op::SoftmaxRows:
            case Op::DagSoftmaxRows: {
                const Tensor<T>& a = in_val(n, 0);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                accum(ga, a.shape);
                int64_t cols = a.shape.back();
                int64_t nrows = a.numel() / cols;
                for (int64_t r = 0; r < nrows; ++r) {
                    uint8_t flag = n.row_flag[static_cast<size_t>(r)];
                    if (flag == 2) continue;  // all blocked, constant zero row
                    const T* y = n.value.data.data() + r * cols;
                    const T* gy = go.data.data() + r * cols;
                    T* gz = ga.data.data() + r * cols;
                    if (flag == 1) {
                        T dot = 0;
                        for (int64_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
                        for (int64_t j = 0; j < cols; ++j) gz[j] += y[j] * (gy[j] - dot);
                    } else {
                        // denominator clamped: out_j = exp(z_j)
                        for (int64_t j = 0; j < cols; ++j) gz[j] += gy[j] * y[j];
                    }
                }
                break;
            }
            case Op::MaxPool: {
                const Tensor<T>& a = in_val(n, 0);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                accum(ga, a.shape);
                for (size_t j = 0; j < n.arg_index.size(); ++j)
                    ga.data[static_cast<size_t>(n.arg_index[j])] += go.data[j];
                break;
            }
            case Op::Mse: {
                const Tensor<T>& a = in_val(n, 0);
                const Tensor<T>& b = in_val(n, 1);
                Tensor<T>& ga = g[static_cast<size_t>(n.in0)];
                Tensor<T>& gb = g[static_cast<size_t>(n.in1)];
                accum(ga, a.shape);
                accum(gb, b.shape);
                T go0 = go.data[0];
                T c = T(2) / T(a.numel());
                for (size_t j = 0; j < a.data.size(); ++j) {
                    T d = (a.data[j] - b.data[j]) * c * go0;
                    ga.data[j] += d;
                    gb.data[j] -= d;
                }
                break;
            }
        }
    }
};

/// Central finite-difference verification for one named parameter. Returns the
/// worst entrywise |analytic - cfd| / (|cfd| + 1e-8). 64-bit tapes only make
/// sense here; float tapes drown in rounding noise.
template <typename T>
double finite_difference_check(Tape<T>& tape, ParamRegistry<T>& params, int loss,
                               const std::string& name, double eps) {
    auto grads = tape.gradients(loss);
    Tensor<T> analytic = grads.at(name);
    Tensor<T>& p = params.get(name);
    double worst = 0;
    for (size_t i = 0; i < p.data.size(); ++i) {
        T orig = p.data[i];
        p.data[i] = orig + T(eps);
        tape.replay();
        double up = static_cast<double>(tape.scalar_value(loss));
        p.data[i] = orig - T(eps);
        tape.replay();
        double down = static_cast<double>(tape.scalar_value(loss));
        p.data[i] = orig;
        double cfd = (up - down) / (2.0 * eps);
        double rel = std::abs(static_cast<double>(analytic.data[i]) - cfd) /
                     (std::abs(cfd) + 1e-8);
        worst = std::max(worst, rel);
    }
    tape.replay();
    return worst;
}

}  // namespace zeroscm
