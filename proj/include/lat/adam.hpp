#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lat/error.hpp"
#include "lat/param.hpp"

namespace lat {

// Adam with bias correction. Frozen (trainable == false) parameters are
// skipped outright: their data stays bit-identical and their moments are
// not touched. Moments are keyed by parameter name and each carries its
// own update count, so a block unfrozen mid-run gets correct bias
// correction from its first update.
template <typename T>
class AdamT {
public:
    struct Moments {
        std::vector<T> m, v;
        std::uint64_t updates = 0;
    };

    T learning_rate = T(3e-5);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);

    std::uint64_t step_count() const { return step_count_; }
    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }
    void set_step_count(std::uint64_t n) { step_count_ = n; }

    void step(const ParamList<T>& params) {
        ++step_count_;
        for (auto* p : params) {
            if (!p->trainable) continue;
            if (!p->value.has_grad()) {
                throw OptimizerError("adam: trainable parameter '" + p->name +
                                     "' has no gradient");
            }
            auto& st = moments_[p->name];
            auto& data = p->value.data();
            const auto& grad = p->value.grad();
            if (st.m.empty()) {
                st.m.assign(data.size(), T(0));
                st.v.assign(data.size(), T(0));
            } else if (st.m.size() != data.size()) {
                throw OptimizerError("adam: moment size mismatch for '" + p->name + "'");
            }
            ++st.updates;
            const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1),
                                                         static_cast<double>(st.updates)));
            const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2),
                                                         static_cast<double>(st.updates)));
            for (std::size_t i = 0; i < data.size(); ++i) {
                st.m[i] = beta1 * st.m[i] + (T(1) - beta1) * grad[i];
                st.v[i] = beta2 * st.v[i] + (T(1) - beta2) * grad[i] * grad[i];
                const T mhat = st.m[i] / bc1;
                const T vhat = st.v[i] / bc2;
                data[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
            }
        }
    }

private:
    std::uint64_t step_count_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace lat
