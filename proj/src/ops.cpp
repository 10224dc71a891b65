#include "lvt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>

namespace lvt {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

std::string two_shapes(const char* op, const Shape& a, const Shape& b) {
    return std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " + shape_to_string(b);
}

// ---------------------------------------------------------------------------
// matmul

struct MatmulPlan {
    std::size_t batch = 1;
    std::size_t a_stride = 0;  // elements between consecutive batch slices
    std::size_t b_stride = 0;
    std::size_t a_rows = 0, a_cols = 0;  // storage layout of one slice
    std::size_t b_rows = 0, b_cols = 0;
    std::size_t m = 0, k = 0, n = 0;
    Shape out_shape;
};

MatmulPlan plan_matmul(const Shape& as, const Shape& bs, bool ta, bool tb) {
    MatmulPlan p;
    if (as.size() < 2 || bs.size() < 2 || bs.size() > 3) throw DimensionError(two_shapes("matmul", as, bs));
    if (bs.size() == 2) {
        if (as.size() > 2 && ta) throw DimensionError(two_shapes("matmul (transposed batched lhs)", as, bs));
        p.a_cols = as.back();
        p.a_rows = shape_numel(as) / p.a_cols;
        p.b_rows = bs[0];
        p.b_cols = bs[1];
    } else {
        if (as.size() != 3) throw DimensionError(two_shapes("matmul", as, bs));
        const std::size_t ba = as[0], bb = bs[0];
        if (ba != bb && ba != 1 && bb != 1) throw DimensionError(two_shapes("matmul (batch)", as, bs));
        p.batch = std::max(ba, bb);
        p.a_rows = as[1];
        p.a_cols = as[2];
        p.b_rows = bs[1];
        p.b_cols = bs[2];
        p.a_stride = ba == 1 ? 0 : p.a_rows * p.a_cols;
        p.b_stride = bb == 1 ? 0 : p.b_rows * p.b_cols;
    }
    p.m = ta ? p.a_cols : p.a_rows;
    p.k = ta ? p.a_rows : p.a_cols;
    const std::size_t kb = tb ? p.b_cols : p.b_rows;
    p.n = tb ? p.b_rows : p.b_cols;
    if (p.k != kb) throw DimensionError(two_shapes("matmul (inner)", as, bs));
    if (bs.size() == 2) {
        if (as.size() == 2) {
            p.out_shape = {p.m, p.n};
        } else {
            p.out_shape.assign(as.begin(), as.end() - 1);
            p.out_shape.push_back(p.n);
        }
    } else {
        p.out_shape = {p.batch, p.m, p.n};
    }
    return p;
}

template <typename T>
void gemm_slice(const T* a, const T* b, T* c, const MatmulPlan& p, bool ta, bool tb) {
    MapC<T> A(a, static_cast<Eigen::Index>(p.a_rows), static_cast<Eigen::Index>(p.a_cols));
    MapC<T> B(b, static_cast<Eigen::Index>(p.b_rows), static_cast<Eigen::Index>(p.b_cols));
    Map<T> C(c, static_cast<Eigen::Index>(p.m), static_cast<Eigen::Index>(p.n));
    if (!ta && !tb) C.noalias() = A * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
}

// ---------------------------------------------------------------------------
// broadcasting

struct BroadcastPlan {
    Shape out;
    enum class Kind { Same, ScalarB, ScalarA, SuffixB, SuffixA, General } kind = Kind::General;
    std::vector<std::size_t> a_strides, b_strides;  // aligned to out rank; 0 where broadcast
};

bool is_suffix(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t axis = s.size() - 1 - i;
        const std::size_t out_axis = out.size() - 1 - i;
        strides[out_axis] = s[axis] == 1 ? 0 : stride;
        stride *= s[axis];
    }
    return strides;
}

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan p;
    const std::size_t na = shape_numel(a), nb = shape_numel(b);
    if (a == b) {
        p.out = a;
        p.kind = BroadcastPlan::Kind::Same;
        return p;
    }
    if (nb == 1 && a.size() >= b.size()) {
        p.out = a;
        p.kind = BroadcastPlan::Kind::ScalarB;
        return p;
    }
    if (na == 1 && b.size() >= a.size()) {
        p.out = b;
        p.kind = BroadcastPlan::Kind::ScalarA;
        return p;
    }
    if (is_suffix(a, b)) {
        p.out = a;
        p.kind = BroadcastPlan::Kind::SuffixB;
        return p;
    }
    if (is_suffix(b, a)) {
        p.out = b;
        p.kind = BroadcastPlan::Kind::SuffixA;
        return p;
    }
    const std::size_t r = std::max(a.size(), b.size());
    p.out.assign(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (ea != eb && ea != 1 && eb != 1) throw DimensionError(two_shapes(op, a, b));
        p.out[r - 1 - i] = std::max(ea, eb);
    }
    p.a_strides = aligned_strides(a, p.out);
    p.b_strides = aligned_strides(b, p.out);
    return p;
}

/// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, std::size_t na, std::size_t nb, Fn&& fn) {
    const std::size_t n = shape_numel(p.out);
    using K = BroadcastPlan::Kind;
    switch (p.kind) {
    case K::Same:
        for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
        return;
    case K::ScalarB:
        for (std::size_t i = 0; i < n; ++i) fn(i, i, std::size_t{0});
        return;
    case K::ScalarA:
        for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0}, i);
        return;
    case K::SuffixB:
        for (std::size_t i = 0; i < n; ++i) fn(i, i, i % nb);
        return;
    case K::SuffixA:
        for (std::size_t i = 0; i < n; ++i) fn(i, i % na, i);
        return;
    case K::General: {
        const std::size_t r = p.out.size();
        std::vector<std::size_t> idx(r, 0);
        std::size_t ia = 0, ib = 0;
        for (std::size_t o = 0; o < n; ++o) {
            fn(o, ia, ib);
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                ia += p.a_strides[ax];
                ib += p.b_strides[ax];
                if (idx[ax] < p.out[ax]) break;
                ia -= p.a_strides[ax] * idx[ax];
                ib -= p.b_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        return;
    }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary(const char* name, BinOp op, const Tensor<T>& a, const Tensor<T>& b) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(name, a.shape(), b.shape()));
    const std::size_t na = a.numel(), nb = b.numel();
    std::vector<T> out(shape_numel(plan->out));
    const T* av = a.data().data();
    const T* bv = b.data().data();
    if (op == BinOp::Div) {
        for (const T x : b.data()) {
            if (x == T(0)) throw DomainError("div: division by zero");
        }
    }
    for_each_broadcast(*plan, na, nb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        switch (op) {
        case BinOp::Add: out[o] = av[ia] + bv[ib]; break;
        case BinOp::Sub: out[o] = av[ia] - bv[ib]; break;
        case BinOp::Mul: out[o] = av[ia] * bv[ib]; break;
        case BinOp::Div: out[o] = av[ia] / bv[ib]; break;
        }
    });
    return make_result<T>(name, plan->out, std::move(out), {a, b}, [plan, op, na, nb](Node<T>& self) {
        std::vector<T>* ga = parent_grad(self, 0);
        std::vector<T>* gb = parent_grad(self, 1);
        const std::vector<T>& av = self.parents[0]->value;
        const std::vector<T>& bv = self.parents[1]->value;
        const std::vector<T>& g = self.grad;
        for_each_broadcast(*plan, na, nb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            const T go = g[o];
            switch (op) {
            case BinOp::Add:
                if (ga) (*ga)[ia] += go;
                if (gb) (*gb)[ib] += go;
                break;
            case BinOp::Sub:
                if (ga) (*ga)[ia] += go;
                if (gb) (*gb)[ib] -= go;
                break;
            case BinOp::Mul:
                if (ga) (*ga)[ia] += go * bv[ib];
                if (gb) (*gb)[ib] += go * av[ia];
                break;
            case BinOp::Div:
                if (ga) (*ga)[ia] += go / bv[ib];
                if (gb) (*gb)[ib] -= go * av[ia] / (bv[ib] * bv[ib]);
                break;
            }
        });
    });
}

/// Pointwise op with derivative expressed through input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, D dfdx) {
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result<T>(name, x.shape(), std::move(out), {x}, [dfdx](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
    });
}

} // namespace

// -----------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
    auto plan = std::make_shared<MatmulPlan>(plan_matmul(a.shape(), b.shape(), ta, tb));
    std::vector<T> out(shape_numel(plan->out_shape));
    const std::size_t c_stride = plan->m * plan->n;
    for (std::size_t i = 0; i < plan->batch; ++i) {
        gemm_slice(a.data().data() + i * plan->a_stride, b.data().data() + i * plan->b_stride,
                   out.data() + i * c_stride, *plan, ta, tb);
    }
    return make_result<T>("matmul", plan->out_shape, std::move(out), {a, b}, [plan, ta, tb](Node<T>& self) {
        const MatmulPlan& p = *plan;
        std::vector<T>* ga = parent_grad(self, 0);
        std::vector<T>* gb = parent_grad(self, 1);
        const auto ar = static_cast<Eigen::Index>(p.a_rows), ac = static_cast<Eigen::Index>(p.a_cols);
        const auto br = static_cast<Eigen::Index>(p.b_rows), bc = static_cast<Eigen::Index>(p.b_cols);
        const auto m = static_cast<Eigen::Index>(p.m), n = static_cast<Eigen::Index>(p.n);
        for (std::size_t i = 0; i < p.batch; ++i) {
            MapC<T> A(self.parents[0]->value.data() + i * p.a_stride, ar, ac);
            MapC<T> B(self.parents[1]->value.data() + i * p.b_stride, br, bc);
            MapC<T> G(self.grad.data() + i * p.m * p.n, m, n);
            if (ga) {
                Map<T> GA(ga->data() + i * p.a_stride, ar, ac);
                if (!ta && !tb) GA.noalias() += G * B.transpose();
                else if (!ta && tb) GA.noalias() += G * B;
                else if (ta && !tb) GA.noalias() += B * G.transpose();
                else GA.noalias() += B.transpose() * G.transpose();
            }
            if (gb) {
                Map<T> GB(gb->data() + i * p.b_stride, br, bc);
                if (!ta && !tb) GB.noalias() += A.transpose() * G;
                else if (!ta && tb) GB.noalias() += G.transpose() * A;
                else if (ta && !tb) GB.noalias() += A * G;
                else GB.noalias() += G.transpose() * A.transpose();
            }
        }
    });
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary("add", BinOp::Add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary("sub", BinOp::Sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary("mul", BinOp::Mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary("div", BinOp::Div, a, b); }

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return unary("add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
    return unary("mul_scalar", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return mul_scalar(x, T(-1));
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return unary("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return unary("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    for (const T v : x.data()) {
        if (!(v > T(0))) throw DomainError("log of non-positive value " + std::to_string(static_cast<double>(v)));
    }
    return unary("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = static_cast<T>(0.044715);
    return unary(
        "gelu", x,
        [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v))); },
        [](T v, T) {
            const T t = std::tanh(c * (v + k * v * v * v));
            return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
        });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    if (lo > hi) throw ContractError("clamp: lo > hi");
    return unary(
        "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1); });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& x, T floor) {
    return unary(
        "maximum", x, [floor](T v) { return std::max(v, floor); },
        [floor](T v, T) { return v < floor ? T(0) : T(1); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (const T v : x.data()) acc += v;
    return make_result<T>("sum", {1}, {acc}, {x}, [](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        for (T& g : *gx) g += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& x) {
    const std::size_t inner = x.dim(-1);
    const std::size_t outer = x.numel() / inner;
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<T> out(outer, T(0));
    const auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        T acc = 0;
        for (std::size_t i = 0; i < inner; ++i) acc += in[o * inner + i];
        out[o] = acc;
    }
    return make_result<T>("sum_last", out_shape, std::move(out), {x}, [inner, outer](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) (*gx)[o * inner + i] += self.grad[o];
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int r = static_cast<int>(x.rank());
    const int ax = axis < 0 ? r + axis : axis;
    if (ax < 0 || ax >= r) throw DimensionError("softmax axis out of range for " + shape_to_string(x.shape()));
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < r; ++i) inner *= s[static_cast<std::size_t>(i)];
    const std::size_t n = s[static_cast<std::size_t>(ax)];
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
            T z = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const T e = std::exp(in[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
        }
    }
    return make_result<T>("softmax", s, std::move(out), {x}, [outer, inner, n](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * n * inner + i;
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * g[base + j * inner];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t at = base + j * inner;
                    (*gx)[at] += y[at] * (g[at] - dot);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
    const std::size_t n = x.dim(-1);
    const std::size_t rows = x.numel() / n;
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = in.data() + r * n;
        const T mx = *std::max_element(row, row + n);
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        const T lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
    }
    return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [rows, n](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            T gs = 0;
            for (std::size_t j = 0; j < n; ++j) gs += self.grad[r * n + j];
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t at = r * n + j;
                (*gx)[at] += self.grad[at] - std::exp(self.value[at]) * gs;
            }
        }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t d = x.dim(-1);
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError(two_shapes("layer_norm", x.shape(), gamma.shape()));
    }
    const std::size_t rows = x.numel() / d;
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    std::vector<T> out(x.numel());
    const auto in = x.data();
    const auto g = gamma.data();
    const auto b = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = in.data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                          [xhat, inv_std, rows, d](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        std::vector<T>* gg = parent_grad(self, 1);
        std::vector<T>* gb = parent_grad(self, 2);
        const auto& gamma_v = self.parents[1]->value;
        const auto& dy = self.grad;
        for (std::size_t r = 0; r < rows; ++r) {
            T mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const std::size_t at = r * d + j;
                const T dxh = dy[at] * gamma_v[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * (*xhat)[at];
                if (gg) (*gg)[j] += dy[at] * (*xhat)[at];
                if (gb) (*gb)[j] += dy[at];
            }
            if (!gx) continue;
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
                const std::size_t at = r * d + j;
                const T dxh = dy[at] * gamma_v[j];
                (*gx)[at] += (*inv_std)[r] * (dxh - mean_dxhat - (*xhat)[at] * mean_dxhat_xhat);
            }
        }
    });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> rows) {
    if (table.rank() != 2) throw DimensionError("gather_rows expects a rank-2 table, got " + shape_to_string(table.shape()));
    if (rows.empty()) throw DimensionError("gather_rows with no indices");
    const std::size_t v = table.dim(0), d = table.dim(1);
    auto idx = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
    std::vector<T> out(idx->size() * d);
    const auto in = table.data();
    for (std::size_t r = 0; r < idx->size(); ++r) {
        const int i = (*idx)[r];
        if (i < 0 || static_cast<std::size_t>(i) >= v) {
            throw DimensionError("gather_rows index " + std::to_string(i) + " outside table of " + std::to_string(v) + " rows");
        }
        std::copy_n(in.data() + static_cast<std::size_t>(i) * d, d, out.data() + r * d);
    }
    return make_result<T>("gather_rows", {idx->size(), d}, std::move(out), {table}, [idx, d](Node<T>& self) {
        std::vector<T>* gt = parent_grad(self, 0);
        if (!gt) return;
        for (std::size_t r = 0; r < idx->size(); ++r) {
            T* dst = gt->data() + static_cast<std::size_t>((*idx)[r]) * d;
            const T* src = self.grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
    if (x.rank() != 2 || times == 0) throw DimensionError("repeat_rows expects rank 2, got " + shape_to_string(x.shape()));
    const std::size_t b = x.dim(0), d = x.dim(1);
    std::vector<T> out(b * times * d);
    const auto in = x.data();
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < times; ++t) std::copy_n(in.data() + i * d, d, out.data() + (i * times + t) * d);
    }
    return make_result<T>("repeat_rows", {b * times, d}, std::move(out), {x}, [b, d, times](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t t = 0; t < times; ++t) {
                const T* src = self.grad.data() + (i * times + t) * d;
                for (std::size_t j = 0; j < d; ++j) (*gx)[i * d + j] += src[j];
            }
        }
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) throw DimensionError(two_shapes("reshape", x.shape(), shape));
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_last of nothing");
    const std::size_t rows = parts[0].dim(0);
    auto widths = std::make_shared<std::vector<std::size_t>>();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) throw DimensionError(two_shapes("concat_last", parts[0].shape(), p.shape()));
        widths->push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<T> out(rows * total);
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = (*widths)[k];
        const auto in = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(in.data() + r * w, w, out.data() + r * total + col);
        col += w;
    }
    return make_result<T>("concat_last", {rows, total}, std::move(out), parts, [widths, rows, total](Node<T>& self) {
        std::size_t c = 0;
        for (std::size_t k = 0; k < widths->size(); ++k) {
            const std::size_t w = (*widths)[k];
            if (std::vector<T>* gp = parent_grad(self, k)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < w; ++j) (*gp)[r * w + j] += self.grad[r * total + c + j];
                }
            }
            c += w;
        }
    });
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    if (x.rank() != 2 || begin >= end || end > x.dim(1)) {
        throw DimensionError("slice_last [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_to_string(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1), w = end - begin;
    std::vector<T> out(rows * w);
    const auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(in.data() + r * cols + begin, w, out.data() + r * w);
    return make_result<T>("slice_last", {rows, w}, std::move(out), {x}, [rows, cols, w, begin](Node<T>& self) {
        std::vector<T>* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) (*gx)[r * cols + begin + j] += self.grad[r * w + j];
        }
    });
}

template <typename T>
Tensor<T> nll_rows(const Tensor<T>& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || targets.size() != logits.dim(0)) {
        throw DimensionError("nll_rows: logits " + shape_to_string(logits.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    }
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    auto probs = std::make_shared<std::vector<T>>(n * v);
    std::vector<T> out(n, T(0));
    const auto in = logits.data();
    for (std::size_t r = 0; r < n; ++r) {
        const int t = (*tg)[r];
        if (t == kIgnoreTarget) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= v) throw DimensionError("nll_rows: target id " + std::to_string(t) + " >= vocab");
        const T* row = in.data() + r * v;
        const T mx = *std::max_element(row, row + v);
        T z = 0;
        for (std::size_t j = 0; j < v; ++j) {
            const T e = std::exp(row[j] - mx);
            (*probs)[r * v + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] /= z;
        out[r] = mx + std::log(z) - row[static_cast<std::size_t>(t)];
    }
    return make_result<T>("nll_rows", {n}, std::move(out), {logits}, [tg, probs, n, v](Node<T>& self) {
        std::vector<T>* gl = parent_grad(self, 0);
        if (!gl) return;
        for (std::size_t r = 0; r < n; ++r) {
            const int t = (*tg)[r];
            if (t == kIgnoreTarget) continue;
            const T g = self.grad[r];
            for (std::size_t j = 0; j < v; ++j) (*gl)[r * v + j] += g * (*probs)[r * v + j];
            (*gl)[r * v + static_cast<std::size_t>(t)] -= g;
        }
    });
}

template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const AttentionSpec<T>& spec) {
    const std::size_t B = spec.batch, S = spec.seq, H = spec.heads;
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() || q.dim(0) != B * S) {
        throw DimensionError("attention: q/k/v shapes " + shape_to_string(q.shape()) + ", " + shape_to_string(k.shape()) +
                             ", " + shape_to_string(v.shape()) + " for batch " + std::to_string(B) + " x seq " + std::to_string(S));
    }
    const std::size_t d = q.dim(1);
    if (H == 0 || d % H != 0) throw DimensionError("attention: width " + std::to_string(d) + " not divisible by heads");
    if (!spec.key_valid.empty() && spec.key_valid.size() != B * S) {
        throw DimensionError("attention: mask length " + std::to_string(spec.key_valid.size()) + " != batch*seq " + std::to_string(B * S));
    }
    const bool has_slot = spec.slot_key.defined();
    if (has_slot && (!spec.slot_value.defined() || spec.slot_key.shape() != Shape{B, d} || spec.slot_value.shape() != Shape{B, d})) {
        throw DimensionError("attention: memory slot must be [batch, d]");
    }
    const std::size_t dh = d / H;
    const std::size_t K = S + (has_slot ? 1 : 0);
    const std::size_t off = has_slot ? 1 : 0;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    auto weights = std::make_shared<std::vector<T>>(B * H * S * K, T(0));
    std::vector<T> out(B * S * d, T(0));
    const T* qv = q.data().data();
    const T* kv = k.data().data();
    const T* vv = v.data().data();
    const T* sk = has_slot ? spec.slot_key.data().data() : nullptr;
    const T* sv = has_slot ? spec.slot_value.data().data() : nullptr;
    auto valid = std::make_shared<std::vector<std::uint8_t>>(spec.key_valid);
    const bool causal = spec.causal;
    const bool slot_on = has_slot && !spec.slot_masked;

    auto key_row = [=](std::size_t b, std::size_t j) -> const T* {
        return (has_slot && j == 0) ? sk + b * d : kv + (b * S + (j - off)) * d;
    };
    auto value_row = [=](std::size_t b, std::size_t j) -> const T* {
        return (has_slot && j == 0) ? sv + b * d : vv + (b * S + (j - off)) * d;
    };
    auto visible = [=](std::size_t b, std::size_t i, std::size_t j) -> bool {
        if (has_slot && j == 0) return slot_on;
        const std::size_t pos = j - off;
        if (causal && pos > i) return false;
        return valid->empty() || (*valid)[b * S + pos] != 0;
    };

    std::vector<T> logits(K);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t ho = h * dh;
            for (std::size_t i = 0; i < S; ++i) {
                const T* qi = qv + (b * S + i) * d + ho;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < K; ++j) {
                    if (!visible(b, i, j)) continue;
                    const T* kj = key_row(b, j) + ho;
                    T dot = 0;
                    for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                    logits[j] = dot * scale;
                    mx = std::max(mx, logits[j]);
                }
                if (!std::isfinite(mx)) throw ContractError("attention: query with no visible keys");
                T* w = weights->data() + ((b * H + h) * S + i) * K;
                T z = 0;
                for (std::size_t j = 0; j < K; ++j) {
                    if (!visible(b, i, j)) continue;
                    w[j] = std::exp(logits[j] - mx);
                    z += w[j];
                }
                T* oi = out.data() + (b * S + i) * d + ho;
                for (std::size_t j = 0; j < K; ++j) {
                    if (w[j] == T(0)) continue;
                    w[j] /= z;
                    const T* vj = value_row(b, j) + ho;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += w[j] * vj[c];
                }
            }
        }
    }

    std::vector<Tensor<T>> inputs{q, k, v};
    if (has_slot) {
        inputs.push_back(spec.slot_key);
        inputs.push_back(spec.slot_value);
    }
    AttentionResult<T> res;
    res.weights = weights;
    res.keys = K;
    res.has_slot = has_slot;
    res.out = make_result<T>("attention", {B * S, d}, std::move(out), std::move(inputs),
                             [=](Node<T>& self) {
        std::vector<T>* gq = parent_grad(self, 0);
        std::vector<T>* gk = parent_grad(self, 1);
        std::vector<T>* gv = parent_grad(self, 2);
        std::vector<T>* gsk = has_slot ? parent_grad(self, 3) : nullptr;
        std::vector<T>* gsv = has_slot ? parent_grad(self, 4) : nullptr;
        const T* qd = self.parents[0]->value.data();
        const T* kd = self.parents[1]->value.data();
        const T* vd = self.parents[2]->value.data();
        const T* skd = has_slot ? self.parents[3]->value.data() : nullptr;
        const T* svd = has_slot ? self.parents[4]->value.data() : nullptr;
        auto krow = [&](std::size_t b, std::size_t j) {
            return (has_slot && j == 0) ? skd + b * d : kd + (b * S + (j - off)) * d;
        };
        auto vrow = [&](std::size_t b, std::size_t j) {
            return (has_slot && j == 0) ? svd + b * d : vd + (b * S + (j - off)) * d;
        };
        auto kgrad = [&](std::size_t b, std::size_t j) -> T* {
            if (has_slot && j == 0) return gsk ? gsk->data() + b * d : nullptr;
            return gk ? gk->data() + (b * S + (j - off)) * d : nullptr;
        };
        auto vgrad = [&](std::size_t b, std::size_t j) -> T* {
            if (has_slot && j == 0) return gsv ? gsv->data() + b * d : nullptr;
            return gv ? gv->data() + (b * S + (j - off)) * d : nullptr;
        };
        std::vector<T> dp(K);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t ho = h * dh;
                for (std::size_t i = 0; i < S; ++i) {
                    const T* w = weights->data() + ((b * H + h) * S + i) * K;
                    const T* go = self.grad.data() + (b * S + i) * d + ho;
                    T dot = 0;
                    for (std::size_t j = 0; j < K; ++j) {
                        if (w[j] == T(0)) {
                            dp[j] = 0;
                            continue;
                        }
                        const T* vj = vrow(b, j) + ho;
                        T acc = 0;
                        for (std::size_t c = 0; c < dh; ++c) acc += go[c] * vj[c];
                        dp[j] = acc;
                        dot += w[j] * acc;
                        if (T* gvj = vgrad(b, j)) {
                            for (std::size_t c = 0; c < dh; ++c) gvj[ho + c] += w[j] * go[c];
                        }
                    }
                    const T* qi = qd + (b * S + i) * d + ho;
                    T* gqi = gq ? gq->data() + (b * S + i) * d + ho : nullptr;
                    for (std::size_t j = 0; j < K; ++j) {
                        if (w[j] == T(0)) continue;
                        const T dl = w[j] * (dp[j] - dot) * scale;
                        const T* kj = krow(b, j) + ho;
                        if (gqi) {
                            for (std::size_t c = 0; c < dh; ++c) gqi[c] += dl * kj[c];
                        }
                        if (T* gkj = kgrad(b, j)) {
                            for (std::size_t c = 0; c < dh; ++c) gkj[ho + c] += dl * qi[c];
                        }
                    }
                }
            }
        }
    });
    return res;
}

#define LVT_INSTANTIATE_OPS(T)                                                                          \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                     \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> neg<T>(const Tensor<T>&);                                                      \
    template Tensor<T> square<T>(const Tensor<T>&);                                                   \
    template Tensor<T> tanh<T>(const Tensor<T>&);                                                     \
    template Tensor<T> exp<T>(const Tensor<T>&);                                                      \
    template Tensor<T> log<T>(const Tensor<T>&);                                                      \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                                     \
    template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                              \
    template Tensor<T> maximum<T>(const Tensor<T>&, T);                                               \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                      \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                     \
    template Tensor<T> sum_last<T>(const Tensor<T>&);                                                 \
    template Tensor<T> softmax<T>(const Tensor<T>&, int);                                             \
    template Tensor<T> log_softmax<T>(const Tensor<T>&);                                              \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const int>);                        \
    template Tensor<T> repeat_rows<T>(const Tensor<T>&, std::size_t);                                 \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                           \
    template Tensor<T> concat_last<T>(const std::vector<Tensor<T>>&);                                 \
    template Tensor<T> slice_last<T>(const Tensor<T>&, std::size_t, std::size_t);                     \
    template Tensor<T> nll_rows<T>(const Tensor<T>&, std::span<const int>);                           \
    template AttentionResult<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                        const AttentionSpec<T>&);

LVT_INSTANTIATE_OPS(float)
LVT_INSTANTIATE_OPS(double)

} // namespace lvt
