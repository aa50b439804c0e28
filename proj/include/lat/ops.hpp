#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lat/error.hpp"
#include "lat/tensor.hpp"

// Differentiable operations. Each op validates shapes, computes the forward
// value eagerly, and registers a closure that accumulates dL/dinput into the
// parents' grad buffers. All loops are sequential; results are deterministic.

namespace lat {

namespace detail {

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

// Interprets a tensor as a matrix of rows over its last dimension.
template <typename T>
std::pair<std::size_t, std::size_t> row_view(const TensorT<T>& x, const char* op) {
    if (x.ndim() == 0) throw ShapeError(std::string(op) + ": scalar input");
    const std::size_t d = x.shape().back();
    return {x.size() / d, d};
}

}  // namespace detail

// ==================== elementwise / arithmetic ====================

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (int p = 0; p < 2; ++p) {
            Node& in = *self.parents[p];
            if (!in.requires_grad) continue;
            TensorT<T>::ensure_grad(in);
            for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
        }
    });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            TensorT<T>::ensure_grad(pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            TensorT<T>::ensure_grad(pb);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
        }
    });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            TensorT<T>::ensure_grad(pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            TensorT<T>::ensure_grad(pb);
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] += self.grad[i] * pa.data[i];
        }
    });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [s](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * s;
    });
}

// m[R x C] + v[C] broadcast over rows (bias add).
template <typename T>
TensorT<T> add_rowvec(const TensorT<T>& m, const TensorT<T>& v) {
    if (m.ndim() != 2 || v.ndim() != 1 || m.cols() != v.shape()[0]) {
        throw ShapeError("add_rowvec: want [RxC] + [C], got " + shape_str(m.shape()) +
                         " + " + shape_str(v.shape()));
    }
    const std::size_t R = m.rows(), C = m.cols();
    std::vector<T> out(m.size());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = m[r * C + c] + v[c];
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(m.shape(), std::move(out), {m, v}, [R, C](Node& self) {
        Node& pm = *self.parents[0];
        Node& pv = *self.parents[1];
        if (pm.requires_grad) {
            TensorT<T>::ensure_grad(pm);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
        }
        if (pv.requires_grad) {
            TensorT<T>::ensure_grad(pv);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) pv.grad[c] += self.grad[r * C + c];
        }
    });
}

// x[C x H x W] + b[C] broadcast over the spatial plane.
template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& b) {
    if (x.ndim() != 3 || b.ndim() != 1 || x.shape()[0] != b.shape()[0]) {
        throw ShapeError("add_channel_bias: want [CxHxW] + [C], got " +
                         shape_str(x.shape()) + " + " + shape_str(b.shape()));
    }
    const std::size_t C = x.shape()[0], plane = x.shape()[1] * x.shape()[2];
    std::vector<T> out(x.size());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = x[c * plane + i] + b[c];
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(x.shape(), std::move(out), {x, b}, [C, plane](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad) {
            TensorT<T>::ensure_grad(px);
            for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            TensorT<T>::ensure_grad(pb);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < plane; ++i) pb.grad[c] += self.grad[c * plane + i];
        }
    });
}

// ==================== shape ops ====================

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.size()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    }
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(std::move(new_shape), a.data(), {a}, [](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
    const std::size_t R = a.rows(), C = a.cols();
    std::vector<T> out(a.size());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[c * R + r] = a[r * C + c];
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({C, R}, std::move(out), {a}, [R, C](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) in.grad[r * C + c] += self.grad[c * R + r];
    });
}

// Rows [r0, r1) of a 2-d tensor.
template <typename T>
TensorT<T> slice_rows(const TensorT<T>& a, std::size_t r0, std::size_t r1) {
    const std::size_t R = a.rows(), C = a.cols();
    if (r0 >= r1 || r1 > R) {
        throw ShapeError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") out of range for " + shape_str(a.shape()));
    }
    std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(r0 * C),
                       a.data().begin() + static_cast<std::ptrdiff_t>(r1 * C));
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({r1 - r0, C}, std::move(out), {a}, [r0, C](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            in.grad[r0 * C + i] += self.grad[i];
    });
}

// Columns [c0, c1) of a 2-d tensor.
template <typename T>
TensorT<T> slice_cols(const TensorT<T>& a, std::size_t c0, std::size_t c1) {
    const std::size_t R = a.rows(), C = a.cols();
    if (c0 >= c1 || c1 > C) {
        throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of range for " + shape_str(a.shape()));
    }
    const std::size_t W = c1 - c0;
    std::vector<T> out(R * W);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < W; ++c) out[r * W + c] = a[r * C + c0 + c];
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({R, W}, std::move(out), {a}, [R, C, c0, W](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < W; ++c)
                in.grad[r * C + c0 + c] += self.grad[r * W + c];
    });
}

// Stacks inputs along rows. 1-d inputs count as single rows.
template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::size_t C = 0, R = 0;
    for (const auto& p : parts) {
        const auto [pr, pc] = detail::row_view(p, "concat_rows");
        if (C == 0) C = pc;
        if (pc != C) throw ShapeError("concat_rows: inconsistent row width");
        R += pr;
    }
    std::vector<T> out;
    out.reserve(R * C);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({R, C}, std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        for (auto& pp : self.parents) {
            Node& in = *pp;
            if (in.requires_grad) {
                TensorT<T>::ensure_grad(in);
                for (std::size_t i = 0; i < in.data.size(); ++i)
                    in.grad[i] += self.grad[offset + i];
            }
            offset += in.data.size();
        }
    });
}

// Stacks 2-d inputs along columns; all must share the row count.
template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t R = parts.front().rows();
    std::size_t C = 0;
    for (const auto& p : parts) {
        if (p.rows() != R) throw ShapeError("concat_cols: inconsistent row count");
        C += p.cols();
    }
    std::vector<T> out(R * C);
    std::size_t c_off = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < pc; ++c) out[r * C + c_off + c] = p[r * pc + c];
        c_off += pc;
    }
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({R, C}, std::move(out), parts, [R, C](Node& self) {
        std::size_t c_off = 0;
        for (auto& pp : self.parents) {
            Node& in = *pp;
            const std::size_t pc = in.shape[1];
            if (in.requires_grad) {
                TensorT<T>::ensure_grad(in);
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < pc; ++c)
                        in.grad[r * pc + c] += self.grad[r * C + c_off + c];
            }
            c_off += pc;
        }
    });
}

// ==================== reductions ====================

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    T acc = T(0);
    for (T v : a.data()) acc += v;
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({}, {acc}, {a}, [](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (auto& g : in.grad) g += self.grad[0];
    });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    T acc = T(0);
    for (T v : a.data()) acc += v;
    const T inv = T(1) / static_cast<T>(a.size());
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({}, {acc * inv}, {a}, [inv](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (auto& g : in.grad) g += self.grad[0] * inv;
    });
}

// Column means of a [R x C] matrix -> [C].
template <typename T>
TensorT<T> mean_axis0(const TensorT<T>& a) {
    const std::size_t R = a.rows(), C = a.cols();
    std::vector<T> out(C, T(0));
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[c] += a[r * C + c];
    const T inv = T(1) / static_cast<T>(R);
    for (auto& v : out) v *= inv;
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({C}, std::move(out), {a}, [R, C, inv](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) in.grad[r * C + c] += self.grad[c] * inv;
    });
}

// ==================== linear algebra ====================

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const std::size_t M = a.rows(), K = a.cols();
    if (b.rows() != K) {
        throw ShapeError("matmul: inner extents " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const std::size_t N = b.cols();
    std::vector<T> out(M * N, T(0));
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const T av = a[i * K + k];
            const T* brow = b.data().data() + k * N;
            T* orow = out.data() + i * N;
            for (std::size_t j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    }
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({M, N}, std::move(out), {a, b}, [M, K, N](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            // dA = dY . B^T
            TensorT<T>::ensure_grad(pa);
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const T g = self.grad[i * N + j];
                    const T* brow = pb.data.data() + 0;
                    for (std::size_t k = 0; k < K; ++k)
                        pa.grad[i * K + k] += g * brow[k * N + j];
                }
        }
        if (pb.requires_grad) {
            // dB = A^T . dY
            TensorT<T>::ensure_grad(pb);
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t i = 0; i < M; ++i) {
                    const T av = pa.data[i * K + k];
                    for (std::size_t j = 0; j < N; ++j)
                        pb.grad[k * N + j] += av * self.grad[i * N + j];
                }
        }
    });
}

// ==================== nonlinearities ====================

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (in.data[i] > T(0)) in.grad[i] += self.grad[i];
    });
}

// Exact (erf) GELU.
template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = static_cast<double>(in.data[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            in.grad[i] += self.grad[i] * static_cast<T>(cdf + x * pdf);
        }
    });
}

// Softmax over the last dimension, max-subtracted for stability.
template <typename T>
TensorT<T> softmax(const TensorT<T>& a) {
    const auto [R, C] = detail::row_view(a, "softmax");
    std::vector<T> out(a.size());
    for (std::size_t r = 0; r < R; ++r) {
        const T* x = a.data().data() + r * C;
        T* y = out.data() + r * C;
        T mx = x[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        T denom = T(0);
        for (std::size_t c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - mx);
            denom += y[c];
        }
        const T inv = T(1) / denom;
        for (std::size_t c = 0; c < C; ++c) y[c] *= inv;
    }
    using Node = typename TensorT<T>::Node;
    const std::size_t Rc = R, Cc = C;
    return TensorT<T>::make_op(a.shape(), std::move(out), {a}, [Rc, Cc](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        for (std::size_t r = 0; r < Rc; ++r) {
            const T* s = self.data.data() + r * Cc;
            const T* g = self.grad.data() + r * Cc;
            T dot = T(0);
            for (std::size_t c = 0; c < Cc; ++c) dot += g[c] * s[c];
            for (std::size_t c = 0; c < Cc; ++c)
                in.grad[r * Cc + c] += s[c] * (g[c] - dot);
        }
    });
}

// Per-row normalization over the last dimension, then affine with gamma/beta.
template <typename T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     T eps = T(1e-6)) {
    const auto [R, D] = detail::row_view(x, "layernorm");
    if (gamma.ndim() != 1 || gamma.shape()[0] != D || beta.ndim() != 1 ||
        beta.shape()[0] != D) {
        throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(D) + "]");
    }
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(R);
    for (std::size_t r = 0; r < R; ++r) {
        const T* xr = x.data().data() + r * D;
        T mu = T(0);
        for (std::size_t d = 0; d < D; ++d) mu += xr[d];
        mu /= static_cast<T>(D);
        T var = T(0);
        for (std::size_t d = 0; d < D; ++d) {
            const T dv = xr[d] - mu;
            var += dv * dv;
        }
        var /= static_cast<T>(D);
        const T istd = T(1) / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (std::size_t d = 0; d < D; ++d) {
            const T h = (xr[d] - mu) * istd;
            xhat[r * D + d] = h;
            out[r * D + d] = gamma[d] * h + beta[d];
        }
    }
    using Node = typename TensorT<T>::Node;
    const std::size_t Rc = R, Dc = D;
    return TensorT<T>::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [Rc, Dc, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            if (pg.requires_grad) TensorT<T>::ensure_grad(pg);
            if (pb.requires_grad) TensorT<T>::ensure_grad(pb);
            if (px.requires_grad) TensorT<T>::ensure_grad(px);
            for (std::size_t r = 0; r < Rc; ++r) {
                const T* g = self.grad.data() + r * Dc;
                const T* h = xhat.data() + r * Dc;
                if (pg.requires_grad || pb.requires_grad) {
                    for (std::size_t d = 0; d < Dc; ++d) {
                        if (pg.requires_grad) pg.grad[d] += g[d] * h[d];
                        if (pb.requires_grad) pb.grad[d] += g[d];
                    }
                }
                if (px.requires_grad) {
                    T mean_gg = T(0), mean_ggh = T(0);
                    for (std::size_t d = 0; d < Dc; ++d) {
                        const T gg = g[d] * pg.data[d];
                        mean_gg += gg;
                        mean_ggh += gg * h[d];
                    }
                    mean_gg /= static_cast<T>(Dc);
                    mean_ggh /= static_cast<T>(Dc);
                    for (std::size_t d = 0; d < Dc; ++d) {
                        const T gg = g[d] * pg.data[d];
                        px.grad[r * Dc + d] +=
                            inv_std[r] * (gg - mean_gg - h[d] * mean_ggh);
                    }
                }
            }
        });
}

// ==================== batch normalization ====================

// Train-mode batchnorm over the batch dimension of x[B x D] using biased
// batch variance. Running-stat maintenance lives in the BatchNorm1d module.
template <typename T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const TensorT<T>& gamma,
                           const TensorT<T>& beta, T eps) {
    const std::size_t B = x.rows(), D = x.cols();
    if (B < 2) {
        throw DegenerateBatchError("batchnorm_train: batch of " + std::to_string(B) +
                                   " has no usable statistics");
    }
    if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
        throw ShapeError("batchnorm_train: gamma/beta must be [" + std::to_string(D) + "]");
    }
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(D);
    std::vector<T> out(x.size());
    for (std::size_t d = 0; d < D; ++d) {
        T mu = T(0);
        for (std::size_t b = 0; b < B; ++b) mu += x[b * D + d];
        mu /= static_cast<T>(B);
        T var = T(0);
        for (std::size_t b = 0; b < B; ++b) {
            const T dv = x[b * D + d] - mu;
            var += dv * dv;
        }
        var /= static_cast<T>(B);
        const T istd = T(1) / std::sqrt(var + eps);
        inv_std[d] = istd;
        for (std::size_t b = 0; b < B; ++b) {
            const T h = (x[b * D + d] - mu) * istd;
            xhat[b * D + d] = h;
            out[b * D + d] = gamma[d] * h + beta[d];
        }
    }
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [B, D, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            if (px.requires_grad) TensorT<T>::ensure_grad(px);
            if (pg.requires_grad) TensorT<T>::ensure_grad(pg);
            if (pb.requires_grad) TensorT<T>::ensure_grad(pb);
            for (std::size_t d = 0; d < D; ++d) {
                T sum_g = T(0), sum_gh = T(0);
                for (std::size_t b = 0; b < B; ++b) {
                    const T g = self.grad[b * D + d];
                    sum_g += g;
                    sum_gh += g * xhat[b * D + d];
                }
                if (pg.requires_grad) pg.grad[d] += sum_gh;
                if (pb.requires_grad) pb.grad[d] += sum_g;
                if (px.requires_grad) {
                    const T mean_g = sum_g / static_cast<T>(B);
                    const T mean_gh = sum_gh / static_cast<T>(B);
                    const T k = pg.data[d] * inv_std[d];
                    for (std::size_t b = 0; b < B; ++b) {
                        const T g = self.grad[b * D + d];
                        px.grad[b * D + d] +=
                            k * (g - mean_g - xhat[b * D + d] * mean_gh);
                    }
                }
            }
        });
}

// Eval-mode batchnorm: affine transform by frozen running statistics.
template <typename T>
TensorT<T> batchnorm_eval(const TensorT<T>& x, const TensorT<T>& gamma,
                          const TensorT<T>& beta, const std::vector<T>& running_mean,
                          const std::vector<T>& running_var, T eps) {
    const std::size_t B = x.rows(), D = x.cols();
    if (gamma.shape() != Shape{D} || beta.shape() != Shape{D} ||
        running_mean.size() != D || running_var.size() != D) {
        throw ShapeError("batchnorm_eval: parameter/stat width mismatch");
    }
    std::vector<T> istd(D);
    for (std::size_t d = 0; d < D; ++d) istd[d] = T(1) / std::sqrt(running_var[d] + eps);
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t d = 0; d < D; ++d) {
            const T h = (x[b * D + d] - running_mean[d]) * istd[d];
            xhat[b * D + d] = h;
            out[b * D + d] = gamma[d] * h + beta[d];
        }
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [B, D, xhat = std::move(xhat), istd = std::move(istd)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            if (px.requires_grad) TensorT<T>::ensure_grad(px);
            if (pg.requires_grad) TensorT<T>::ensure_grad(pg);
            if (pb.requires_grad) TensorT<T>::ensure_grad(pb);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t d = 0; d < D; ++d) {
                    const T g = self.grad[b * D + d];
                    if (pg.requires_grad) pg.grad[d] += g * xhat[b * D + d];
                    if (pb.requires_grad) pb.grad[d] += g;
                    if (px.requires_grad)
                        px.grad[b * D + d] += g * pg.data[d] * istd[d];
                }
        });
}

// ==================== convolution ====================

struct ConvGeometry {
    std::size_t out_h, out_w;
};

// Output extents with exact-tiling enforcement; used by conv2d and by the
// backbone's patch-count arithmetic.
inline ConvGeometry conv_output_geometry(std::size_t in_h, std::size_t in_w,
                                         std::size_t k_h, std::size_t k_w,
                                         std::size_t stride, std::size_t padding) {
    if (stride == 0) throw GeometryError("conv: stride must be positive");
    const std::size_t span_h = in_h + 2 * padding;
    const std::size_t span_w = in_w + 2 * padding;
    if (span_h < k_h || span_w < k_w) {
        throw GeometryError("conv: kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) +
                            " larger than padded input " + std::to_string(span_h) + "x" +
                            std::to_string(span_w));
    }
    if ((span_h - k_h) % stride != 0 || (span_w - k_w) % stride != 0) {
        throw GeometryError("conv: geometry does not tile exactly (input " +
                            std::to_string(in_h) + "x" + std::to_string(in_w) + ", kernel " +
                            std::to_string(k_h) + "x" + std::to_string(k_w) + ", stride " +
                            std::to_string(stride) + ", padding " + std::to_string(padding) +
                            ")");
    }
    return {(span_h - k_h) / stride + 1, (span_w - k_w) / stride + 1};
}

// x[Cin x H x W] * k[Cout x Cin x KH x KW] -> [Cout x OH x OW].
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& kernel, std::size_t stride,
                  std::size_t padding = 0) {
    if (x.ndim() != 3 || kernel.ndim() != 4) {
        throw ShapeError("conv2d: want x[CinxHxW], kernel[CoutxCinxKHxKW], got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
    }
    const std::size_t Ci = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const std::size_t Co = kernel.shape()[0], KH = kernel.shape()[2], KW = kernel.shape()[3];
    if (kernel.shape()[1] != Ci) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.shape()[1]) +
                         " input channels, image has " + std::to_string(Ci));
    }
    const auto geo = conv_output_geometry(H, W, KH, KW, stride, padding);
    const std::size_t OH = geo.out_h, OW = geo.out_w;

    std::vector<T> out(Co * OH * OW, T(0));
    const long pad = static_cast<long>(padding);
    for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
                T acc = T(0);
                for (std::size_t ci = 0; ci < Ci; ++ci)
                    for (std::size_t kh = 0; kh < KH; ++kh) {
                        const long ih = static_cast<long>(oh * stride + kh) - pad;
                        if (ih < 0 || ih >= static_cast<long>(H)) continue;
                        for (std::size_t kw = 0; kw < KW; ++kw) {
                            const long iw = static_cast<long>(ow * stride + kw) - pad;
                            if (iw < 0 || iw >= static_cast<long>(W)) continue;
                            acc += x[(ci * H + static_cast<std::size_t>(ih)) * W +
                                     static_cast<std::size_t>(iw)] *
                                   kernel[((co * Ci + ci) * KH + kh) * KW + kw];
                        }
                    }
                out[(co * OH + oh) * OW + ow] = acc;
            }

    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op(
        {Co, OH, OW}, std::move(out), {x, kernel},
        [Ci, H, W, Co, KH, KW, OH, OW, stride, pad](Node& self) {
            Node& px = *self.parents[0];
            Node& pk = *self.parents[1];
            if (px.requires_grad) TensorT<T>::ensure_grad(px);
            if (pk.requires_grad) TensorT<T>::ensure_grad(pk);
            for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t oh = 0; oh < OH; ++oh)
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        const T g = self.grad[(co * OH + oh) * OW + ow];
                        if (g == T(0)) continue;
                        for (std::size_t ci = 0; ci < Ci; ++ci)
                            for (std::size_t kh = 0; kh < KH; ++kh) {
                                const long ih = static_cast<long>(oh * stride + kh) - pad;
                                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                for (std::size_t kw = 0; kw < KW; ++kw) {
                                    const long iw =
                                        static_cast<long>(ow * stride + kw) - pad;
                                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                    const std::size_t xi =
                                        (ci * H + static_cast<std::size_t>(ih)) * W +
                                        static_cast<std::size_t>(iw);
                                    const std::size_t ki =
                                        ((co * Ci + ci) * KH + kh) * KW + kw;
                                    if (pk.requires_grad) pk.grad[ki] += g * px.data[xi];
                                    if (px.requires_grad) px.grad[xi] += g * pk.data[ki];
                                }
                            }
                    }
        });
}

// ==================== loss ====================

// Mean negative log softmax probability of the labeled class.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
    const std::size_t B = logits.rows(), C = logits.cols();
    if (labels.size() != B) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= C) {
            throw LabelError("cross_entropy: label " + std::to_string(y) +
                             " outside [0, " + std::to_string(C) + ")");
        }
    }
    T loss = T(0);
    for (std::size_t b = 0; b < B; ++b) {
        const T* x = logits.data().data() + b * C;
        T mx = x[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        T lse = T(0);
        for (std::size_t c = 0; c < C; ++c) lse += std::exp(x[c] - mx);
        lse = mx + std::log(lse);
        loss += lse - x[static_cast<std::size_t>(labels[b])];
    }
    loss /= static_cast<T>(B);
    using Node = typename TensorT<T>::Node;
    return TensorT<T>::make_op({}, {loss}, {logits}, [B, C, labels](Node& self) {
        Node& in = *self.parents[0];
        if (!in.requires_grad) return;
        TensorT<T>::ensure_grad(in);
        const T g = self.grad[0] / static_cast<T>(B);
        for (std::size_t b = 0; b < B; ++b) {
            const T* x = in.data.data() + b * C;
            T mx = x[0];
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
            T denom = T(0);
            for (std::size_t c = 0; c < C; ++c) denom += std::exp(x[c] - mx);
            for (std::size_t c = 0; c < C; ++c) {
                T p = std::exp(x[c] - mx) / denom;
                if (c == static_cast<std::size_t>(labels[b])) p -= T(1);
                in.grad[b * C + c] += g * p;
            }
        }
    });
}

}  // namespace lat
