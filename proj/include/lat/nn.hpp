#pragma once

#include <string>
#include <vector>

#include "lat/ops.hpp"
#include "lat/param.hpp"
#include "lat/rng.hpp"
#include "lat/tensor.hpp"

// Small parameter-owning modules shared by the backbone and the head.

namespace lat {

enum class Mode { train, eval };

template <typename T>
struct LayerNormT {
    ParamT<T> gamma, beta;
    T eps = T(1e-6);

    LayerNormT() = default;
    LayerNormT(const std::string& prefix, std::size_t dim, T eps_ = T(1e-6))
        : gamma(prefix + ".gamma", TensorT<T>::full({dim}, T(1))),
          beta(prefix + ".beta", TensorT<T>::zeros({dim})),
          eps(eps_) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        return layernorm(x, gamma.value, beta.value, eps);
    }

    void collect(ParamList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// Affine map x[B x in] -> x.W + b with W[in x out].
template <typename T>
struct LinearT {
    ParamT<T> weight, bias;

    LinearT() = default;
    LinearT(const std::string& prefix, std::size_t in_dim, std::size_t out_dim, Rng& rng,
            T init_std = T(0.02))
        : weight(prefix + ".weight", TensorT<T>::randn({in_dim, out_dim}, rng, init_std)),
          bias(prefix + ".bias", TensorT<T>::zeros({out_dim})) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        return add_rowvec(matmul(x, weight.value), bias.value);
    }

    void collect(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// 1-d batchnorm with running statistics. Train mode normalizes by batch
// statistics (biased variance) and advances the running stats with an
// exponential moving average (unbiased variance, torch convention);
// eval mode applies the running stats.
template <typename T>
struct BatchNorm1dT {
    ParamT<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    std::string name_prefix;
    T eps = T(1e-5);
    T momentum = T(0.1);

    BatchNorm1dT() = default;
    BatchNorm1dT(const std::string& prefix, std::size_t dim)
        : gamma(prefix + ".gamma", TensorT<T>::full({dim}, T(1))),
          beta(prefix + ".beta", TensorT<T>::zeros({dim})),
          running_mean(dim, T(0)),
          running_var(dim, T(1)),
          name_prefix(prefix) {}

    TensorT<T> forward(const TensorT<T>& x, Mode mode) {
        if (mode == Mode::eval) {
            return batchnorm_eval(x, gamma.value, beta.value, running_mean, running_var, eps);
        }
        TensorT<T> y = batchnorm_train(x, gamma.value, beta.value, eps);
        update_running_stats(x);
        return y;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    void collect_buffers(std::vector<BufferRefT<T>>& out) {
        out.push_back({name_prefix + ".running_mean", &running_mean});
        out.push_back({name_prefix + ".running_var", &running_var});
    }

private:
    void update_running_stats(const TensorT<T>& x) {
        const std::size_t B = x.rows(), D = x.cols();
        for (std::size_t d = 0; d < D; ++d) {
            T mu = T(0);
            for (std::size_t b = 0; b < B; ++b) mu += x[b * D + d];
            mu /= static_cast<T>(B);
            T var = T(0);
            for (std::size_t b = 0; b < B; ++b) {
                const T dv = x[b * D + d] - mu;
                var += dv * dv;
            }
            const T unbiased = var / static_cast<T>(B - 1);
            running_mean[d] = (T(1) - momentum) * running_mean[d] + momentum * mu;
            running_var[d] = (T(1) - momentum) * running_var[d] + momentum * unbiased;
        }
    }
};

}  // namespace lat
