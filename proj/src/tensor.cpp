#include "endovid/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "endovid/errors.hpp"
#include "endovid/kernels.hpp"

namespace endovid::ag {

namespace kp = kernels::parallel;

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

std::atomic<std::uint64_t> g_next_id{1};

template <typename T>
std::shared_ptr<Node<T>> new_node(Shape shape, std::vector<T> value) {
    if (numel(shape) != value.size()) {
        throw ShapeError("tensor shape " + to_string(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(value.size()));
    }
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive: " + to_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

template <typename T>
void accumulate_into(Node<T>& node, std::span<const T> g) {
    auto& buf = node.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

// Maps every output element of a broadcast binary op onto its two operands.
struct Broadcast {
    Shape out;
    enum class Mode { same, b_suffix, a_suffix, general } mode = Mode::same;
    std::size_t na = 0, nb = 0;
    std::vector<std::size_t> ia, ib;  // only filled in general mode

    std::size_t a_index(std::size_t i) const {
        switch (mode) {
            case Mode::same: return i;
            case Mode::b_suffix: return i;
            case Mode::a_suffix: return i % na;
            default: return ia[i];
        }
    }
    std::size_t b_index(std::size_t i) const {
        switch (mode) {
            case Mode::same: return i;
            case Mode::b_suffix: return i % nb;
            case Mode::a_suffix: return i;
            default: return ib[i];
        }
    }
};

Shape strip_leading_ones(const Shape& s) {
    std::size_t i = 0;
    while (i + 1 < s.size() && s[i] == 1) ++i;
    return Shape(s.begin() + std::ptrdiff_t(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Broadcast make_broadcast(const Shape& a, const Shape& b) {
    Broadcast bc;
    bc.na = numel(a);
    bc.nb = numel(b);
    if (a == b) {
        bc.out = a;
        return bc;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
    pa.insert(pa.end(), a.begin(), a.end());
    pb.insert(pb.end(), b.begin(), b.end());
    bc.out.resize(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
            throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
        }
        bc.out[d] = std::max(pa[d], pb[d]);
    }
    if (bc.out == a && is_suffix(strip_leading_ones(b), a)) {
        bc.mode = Broadcast::Mode::b_suffix;
        return bc;
    }
    if (bc.out == b && is_suffix(strip_leading_ones(a), b)) {
        bc.mode = Broadcast::Mode::a_suffix;
        return bc;
    }
    bc.mode = Broadcast::Mode::general;
    const std::size_t n = numel(bc.out);
    bc.ia.resize(n);
    bc.ib.resize(n);
    std::vector<std::size_t> sa(rank), sb(rank);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t d = rank; d-- > 0;) {
        sa[d] = pa[d] == 1 ? 0 : acc_a;
        sb[d] = pb[d] == 1 ? 0 : acc_b;
        acc_a *= pa[d];
        acc_b *= pb[d];
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off_a = 0, off_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bc.ia[i] = off_a;
        bc.ib[i] = off_b;
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            off_a += sa[d];
            off_b += sb[d];
            if (idx[d] < bc.out[d]) break;
            off_a -= sa[d] * idx[d];
            off_b -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    return bc;
}

template <typename T, typename Fwd, typename GradA, typename GradB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, GradA ga, GradB gb) {
    auto bc = std::make_shared<Broadcast>(make_broadcast(a.shape(), b.shape()));
    const std::size_t n = numel(bc->out);
    std::vector<T> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[bc->a_index(i)], bv[bc->b_index(i)]);
    return make_op_result<T>(bc->out, std::move(out), {&a, &b}, [bc, ga, gb](Node<T>& o) {
        Node<T>& na = *o.inputs[0];
        Node<T>& nb = *o.inputs[1];
        const std::size_t n = o.value.size();
        if (na.requires_grad) {
            auto& g = na.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ai = bc->a_index(i), bi = bc->b_index(i);
                g[ai] += ga(o.grad[i], na.value[ai], nb.value[bi]);
            }
        }
        if (nb.requires_grad) {
            auto& g = nb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ai = bc->a_index(i), bi = bc->b_index(i);
                g[bi] += gb(o.grad[i], na.value[ai], nb.value[bi]);
            }
        }
    });
}

std::size_t normalize_axis(int axis, std::size_t rank) {
    const int r = int(rank);
    if (axis < -r || axis >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return std::size_t(axis < 0 ? axis + r : axis);
}

// (outer, extent, inner) split of a shape around one axis.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
    r.extent = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
    return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    auto node = new_node<T>(std::move(shape), std::move(values));
    node->requires_grad = requires_grad;
    return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = ag::numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
    return node_->shape[normalize_axis(axis, rank())];
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
    if (!is_leaf()) throw ContractError("only leaf tensors may be mutated in place");
    return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch for " + to_string(shape()));
    std::size_t off = 0, d = 0;
    for (auto i : index) {
        if (i >= shape()[d]) throw ShapeError("index out of range for " + to_string(shape()));
        off = off * shape()[d] + i;
        ++d;
    }
    return node_->value[off];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from(shape(), node_->value, false);
}

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> value, std::vector<const Tensor<T>*> inputs,
                         std::function<void(Node<T>&)> backward) {
    auto node = new_node<T>(std::move(shape), std::move(value));
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor<T>* t) { return t->requires_grad(); });
    if (any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (const auto* t : inputs) node->inputs.push_back(t->node_ptr());
        node->backward_fn = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& root) {
    if (root.numel() != 1) {
        throw ContractError("backward() needs a scalar root, got shape " + to_string(root.shape()));
    }
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root.node()};
    seen.insert(root.node());
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    // Ids grow with creation, so descending id is a valid reverse topological order.
    std::sort(order.begin(), order.end(), [](auto* x, auto* y) { return x->id > y->id; });

    root.node()->grad_buffer()[0] += T(1);
    for (Node<T>* n : order) {
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    return make_op_result<T>(a.shape(), std::move(out), {&a}, [factor](Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
    });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    }
    const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul inner extents differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
    }
    const bool shared_b = b.rank() == 2;
    if (!shared_b) {
        if (a.rank() != b.rank() ||
            !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
            throw ShapeError("matmul batch extents differ: " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
        }
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    const std::size_t batch = numel(Shape(a.shape().begin(), a.shape().end() - 2));

    std::vector<T> out(batch * m * n);
    auto av = a.values();
    auto bv = b.values();
    if (shared_b) {
        kp::matmul_nn<T>(av, bv, out, batch * m, k, n, false);
    } else {
        for (std::size_t s = 0; s < batch; ++s) {
            kp::matmul_nn<T>(av.subspan(s * m * k, m * k), bv.subspan(s * k * n, k * n),
                             std::span<T>(out).subspan(s * m * n, m * n), m, k, n, false);
        }
    }
    return make_op_result<T>(out_shape, std::move(out), {&a, &b},
                             [shared_b, batch, m, k, n](Node<T>& o) {
        Node<T>& na = *o.inputs[0];
        Node<T>& nb = *o.inputs[1];
        std::span<const T> g = o.grad;
        if (shared_b) {
            if (na.requires_grad)
                kp::matmul_nt<T>(g, nb.value, na.grad_buffer(), batch * m, n, k, true);
            if (nb.requires_grad)
                kp::matmul_tn<T>(na.value, g, nb.grad_buffer(), batch * m, k, n, true);
            return;
        }
        for (std::size_t s = 0; s < batch; ++s) {
            auto gs = g.subspan(s * m * n, m * n);
            if (na.requires_grad) {
                kp::matmul_nt<T>(gs, std::span<const T>(nb.value).subspan(s * k * n, k * n),
                                 std::span<T>(na.grad_buffer()).subspan(s * m * k, m * k), m, n,
                                 k, true);
            }
            if (nb.requires_grad) {
                kp::matmul_tn<T>(std::span<const T>(na.value).subspan(s * m * k, m * k), gs,
                                 std::span<T>(nb.grad_buffer()).subspan(s * k * n, k * n), m, k,
                                 n, true);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, T tau) {
    if (!(tau > T(0))) throw DomainError("softmax temperature must be positive");
    const std::size_t cols = x.dim(-1), rows = x.numel() / cols;
    std::vector<T> out(x.numel());
    kp::softmax_rows<T>(x.values(), out, rows, cols, T(1) / tau);
    return make_op_result<T>(x.shape(), std::move(out), {&x}, [rows, cols, tau](Node<T>& o) {
        auto& gx = o.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = o.value.data() + r * cols;
            const T* g = o.grad.data() + r * cols;
            T dot = 0;
            for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (g[j] - dot) / tau;
        }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, T tau) {
    if (!(tau > T(0))) throw DomainError("softmax temperature must be positive");
    const std::size_t cols = x.dim(-1), rows = x.numel() / cols;
    std::vector<T> out(x.numel());
    kp::log_softmax_rows<T>(x.values(), out, rows, cols, T(1) / tau);
    return make_op_result<T>(x.shape(), std::move(out), {&x}, [rows, cols, tau](Node<T>& o) {
        auto& gx = o.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = o.value.data() + r * cols;
            const T* g = o.grad.data() + r * cols;
            T gsum = 0;
            for (std::size_t j = 0; j < cols; ++j) gsum += g[j];
            for (std::size_t j = 0; j < cols; ++j)
                gx[r * cols + j] += (g[j] - std::exp(y[j]) * gsum) / tau;
        }
    });
}

// ---------------------------------------------------------------------------
// layer norm / activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t cols = x.dim(-1), rows = x.numel() / cols;
    if (gamma.numel() != cols || beta.numel() != cols) {
        throw ShapeError("layer_norm affine extents " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " do not match input " + to_string(x.shape()));
    }
    std::vector<T> out(x.numel());
    auto stats = std::make_shared<std::pair<std::vector<T>, std::vector<T>>>(
        std::vector<T>(rows), std::vector<T>(rows));
    kp::layer_norm_rows<T>(x.values(), gamma.values(), beta.values(), out, stats->first,
                           stats->second, rows, cols, eps);
    return make_op_result<T>(x.shape(), std::move(out), {&x, &gamma, &beta},
                             [rows, cols, stats](Node<T>& o) {
        Node<T>& nx = *o.inputs[0];
        Node<T>& ng = *o.inputs[1];
        Node<T>& nb = *o.inputs[2];
        const auto& mean = stats->first;
        const auto& rstd = stats->second;
        std::vector<T> xhat(cols), dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = nx.value.data() + r * cols;
            const T* g = o.grad.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) xhat[j] = (xr[j] - mean[r]) * rstd[r];
            if (ng.requires_grad) {
                auto& gg = ng.grad_buffer();
                for (std::size_t j = 0; j < cols; ++j) gg[j] += g[j] * xhat[j];
            }
            if (nb.requires_grad) {
                auto& gb = nb.grad_buffer();
                for (std::size_t j = 0; j < cols; ++j) gb[j] += g[j];
            }
            if (nx.requires_grad) {
                T m1 = 0, m2 = 0;
                for (std::size_t j = 0; j < cols; ++j) {
                    dxhat[j] = g[j] * ng.value[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[j];
                }
                m1 /= T(cols);
                m2 /= T(cols);
                auto& gx = nx.grad_buffer();
                for (std::size_t j = 0; j < cols; ++j)
                    gx[r * cols + j] += rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
            }
        }
    });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    kp::gelu<T>(x.values(), out);
    return make_op_result<T>(x.shape(), std::move(out), {&x}, [](Node<T>& o) {
        Node<T>& nx = *o.inputs[0];
        auto& gx = nx.grad_buffer();
        const T inv_sqrt2 = T(1) / std::sqrt(T(2));
        const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T v = nx.value[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            gx[i] += o.grad[i] * (cdf + v * pdf);
        }
    });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
    const std::size_t cols = x.dim(-1), rows = x.numel() / cols;
    std::vector<T> out(x.numel());
    auto norms = std::make_shared<std::vector<T>>(rows);
    auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        T ss = 0;
        for (std::size_t j = 0; j < cols; ++j) ss += xv[r * cols + j] * xv[r * cols + j];
        const T nrm = std::max(std::sqrt(ss), eps);
        (*norms)[r] = nrm;
        for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = xv[r * cols + j] / nrm;
    }
    return make_op_result<T>(x.shape(), std::move(out), {&x}, [rows, cols, norms, eps](Node<T>& o) {
        auto& gx = o.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T nrm = (*norms)[r];
            const T* y = o.value.data() + r * cols;
            const T* g = o.grad.data() + r * cols;
            if (nrm <= eps) {
                for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += g[j] / nrm;
                continue;
            }
            T dot = 0;
            for (std::size_t j = 0; j < cols; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += (g[j] - y[j] * dot) / nrm;
        }
    });
}

// ---------------------------------------------------------------------------
// layout
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
    }
    std::vector<T> out(x.values().begin(), x.values().end());
    return make_op_result<T>(std::move(shape), std::move(out), {&x}, [](Node<T>& o) {
        accumulate_into<T>(*o.inputs[0], o.grad);
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t rank = x.rank();
    std::vector<std::size_t> check(axes);
    std::sort(check.begin(), check.end());
    if (axes.size() != rank || std::adjacent_find(check.begin(), check.end()) != check.end() ||
        check.back() >= rank) {
        throw ShapeError("invalid permutation for shape " + to_string(x.shape()));
    }
    const Shape& in = x.shape();
    Shape out_shape(rank);
    std::vector<std::size_t> in_stride(rank), src_stride(rank);
    std::size_t acc = 1;
    for (std::size_t d = rank; d-- > 0;) {
        in_stride[d] = acc;
        acc *= in[d];
    }
    for (std::size_t d = 0; d < rank; ++d) {
        out_shape[d] = in[axes[d]];
        src_stride[d] = in_stride[axes[d]];
    }
    const std::size_t n = x.numel();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (*src)[i] = off;
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            off += src_stride[d];
            if (idx[d] < out_shape[d]) break;
            off -= src_stride[d] * idx[d];
            idx[d] = 0;
        }
    }
    std::vector<T> out(n);
    auto xv = x.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*src)[i]];
    return make_op_result<T>(std::move(out_shape), std::move(out), {&x}, [src](Node<T>& o) {
        auto& gx = o.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < src->size(); ++i) gx[(*src)[i]] += o.grad[i];
    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= x.rank() || begin >= end || end > x.shape()[axis]) {
        throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
    }
    const AxisSplit sp = split_at(x.shape(), axis);
    const std::size_t len = end - begin;
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    std::vector<T> out(sp.outer * len * sp.inner);
    auto xv = x.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(xv.begin() + std::ptrdiff_t((o * sp.extent + begin) * sp.inner),
                    len * sp.inner, out.begin() + std::ptrdiff_t(o * len * sp.inner));
    }
    return make_op_result<T>(std::move(out_shape), std::move(out), {&x},
                             [sp, begin, len](Node<T>& o) {
        auto& gx = o.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < sp.outer; ++r) {
            for (std::size_t i = 0; i < len * sp.inner; ++i)
                gx[(r * sp.extent + begin) * sp.inner + i] += o.grad[r * len * sp.inner + i];
        }
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw ShapeError("concat axis out of range for " + to_string(ref));
    Shape out_shape = ref;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = ref;
        if (a.size() != b.size()) throw ShapeError("concat rank mismatch");
        a[axis] = b[axis] = 0;
        if (a != b) {
            throw ShapeError("concat extents differ: " + to_string(ref) + " vs " +
                             to_string(p.shape()));
        }
        extents.push_back(p.shape()[axis]);
        out_shape[axis] += p.shape()[axis];
    }
    const AxisSplit sp = split_at(out_shape, axis);
    std::vector<T> out(numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto pv = parts[i].values();
        const std::size_t block = extents[i] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(pv.begin() + std::ptrdiff_t(o * block), block,
                        out.begin() + std::ptrdiff_t((o * sp.extent + offset) * sp.inner));
        }
        offset += extents[i];
    }
    std::vector<const Tensor<T>*> inputs;
    for (const auto& p : parts) inputs.push_back(&p);
    return make_op_result<T>(std::move(out_shape), std::move(out), inputs,
                             [sp, extents](Node<T>& o) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < extents.size(); ++i) {
            Node<T>& in = *o.inputs[i];
            const std::size_t block = extents[i] * sp.inner;
            if (in.requires_grad) {
                auto& g = in.grad_buffer();
                for (std::size_t r = 0; r < sp.outer; ++r) {
                    for (std::size_t j = 0; j < block; ++j)
                        g[r * block + j] += o.grad[(r * sp.extent + offset) * sp.inner + j];
                }
            }
            offset += extents[i];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.values()) s += v;
    return make_op_result<T>({1}, {s}, {&x}, [](Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        for (auto& v : g) v += o.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) throw ShapeError("mean axis out of range for " + to_string(x.shape()));
    const AxisSplit sp = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + std::ptrdiff_t(axis));
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<T> out(sp.outer * sp.inner, T(0));
    auto xv = x.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t e = 0; e < sp.extent; ++e) {
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += xv[(o * sp.extent + e) * sp.inner + i];
        }
    }
    for (auto& v : out) v /= T(sp.extent);
    return make_op_result<T>(std::move(out_shape), std::move(out), {&x}, [sp](Node<T>& o) {
        auto& g = o.inputs[0]->grad_buffer();
        const T inv = T(1) / T(sp.extent);
        for (std::size_t r = 0; r < sp.outer; ++r) {
            for (std::size_t e = 0; e < sp.extent; ++e) {
                for (std::size_t i = 0; i < sp.inner; ++i)
                    g[(r * sp.extent + e) * sp.inner + i] += o.grad[r * sp.inner + i] * inv;
            }
        }
    });
}

// ---------------------------------------------------------------------------

#define ENDOVID_INSTANTIATE_TENSOR(T)                                                          \
    template class Tensor<T>;                                                                   \
    template Tensor<T> make_op_result<T>(Shape, std::vector<T>, std::vector<const Tensor<T>*>,  \
                                         std::function<void(Node<T>&)>);                        \
    template void backward<T>(const Tensor<T>&);                                                \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                           \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> softmax<T>(const Tensor<T>&, T);                                         \
    template Tensor<T> log_softmax<T>(const Tensor<T>&, T);                                     \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                               \
    template Tensor<T> l2_normalize<T>(const Tensor<T>&, T);                                    \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                     \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);           \
    template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);       \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                   \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                \
    template Tensor<T> mean<T>(const Tensor<T>&, std::size_t);

ENDOVID_INSTANTIATE_TENSOR(float)
ENDOVID_INSTANTIATE_TENSOR(double)

}  // namespace endovid::ag
