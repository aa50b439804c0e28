#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lat/param.hpp"
#include "lat/tensor.hpp"

namespace lat {

// Central-difference verification of reverse-mode gradients. Always run at
// double precision so truncation error of the difference quotient is the
// only noise source.

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::string worst_location;  // "<param or input>[i]"

    bool passes(double tol) const { return max_rel_err < tol; }
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

// Checks d f / d x for a scalar-valued f. The step is scaled per
// coordinate: h_i = h * max(1, |x_i|).
inline GradcheckReport gradcheck(
    const std::function<TensorT<double>(const TensorT<double>&)>& f, TensorT<double> x,
    double h = 1e-5) {
    x.set_requires_grad(true);
    x.zero_grad();
    TensorT<double> y = f(x);
    y.backward();
    const std::vector<double> analytic = x.grad();

    x.set_requires_grad(false);  // probe evaluations build no graph
    GradcheckReport report;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        const double hi = h * std::max(1.0, std::abs(orig));
        x[i] = orig + hi;
        const double fp = f(x).item();
        x[i] = orig - hi;
        const double fm = f(x).item();
        x[i] = orig;
        const double numeric = (fp - fm) / (2.0 * hi);
        const double e = detail::rel_err(analytic[i], numeric);
        if (e > report.max_rel_err) {
            report.max_rel_err = e;
            report.worst_location = "x[" + std::to_string(i) + "]";
        }
    }
    return report;
}

// Checks d loss / d theta for every coordinate of every parameter. The
// loss closure must re-evaluate the model from current parameter data.
inline GradcheckReport gradcheck_params(const std::function<TensorT<double>()>& loss,
                                        const ParamList<double>& params, double h = 1e-5) {
    zero_grads(params);
    TensorT<double> y = loss();
    y.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) {
        analytic.push_back(p->value.has_grad()
                               ? p->value.grad()
                               : std::vector<double>(p->value.size(), 0.0));
    }

    // No-graph probes.
    std::vector<bool> saved_rg;
    for (auto* p : params) {
        saved_rg.push_back(p->value.requires_grad());
        p->value.set_requires_grad(false);
    }

    GradcheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi]->value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value[i];
            const double hi = h * std::max(1.0, std::abs(orig));
            value[i] = orig + hi;
            const double fp = loss().item();
            value[i] = orig - hi;
            const double fm = loss().item();
            value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * hi);
            const double e = detail::rel_err(analytic[pi][i], numeric);
            if (e > report.max_rel_err) {
                report.max_rel_err = e;
                report.worst_location = params[pi]->name + "[" + std::to_string(i) + "]";
            }
        }
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        params[pi]->value.set_requires_grad(saved_rg[pi]);
    }
    return report;
}

}  // namespace lat
