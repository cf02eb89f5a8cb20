#ifndef MLDR_GRADCHECK_HPP
#define MLDR_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mldr/layers.hpp"
#include "mldr/tensor.hpp"

// Finite-difference gradient checking. Analytic gradients are compared
// element by element against central differences (f(t+e)-f(t-e))/2e.

namespace mldr {

inline double gradcheck_relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  // "tensor_name[flat_index]"
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline void gradcheck_validate_epsilon(double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
        throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");
}

/// Probes every element of every listed tensor. `compute_loss` must
/// re-evaluate the forward pass from the tensors' current values;
/// `analytic_grads[i]` is the already-computed gradient for `probe_list[i]`.
inline GradCheckResult grad_check_probe(const std::function<double()>& compute_loss,
                                        const std::vector<ParamRef>& probe_list,
                                        const std::vector<Tensor>& analytic_grads,
                                        double epsilon) {
    gradcheck_validate_epsilon(epsilon);
    GradCheckResult res;
    for (std::size_t pi = 0; pi < probe_list.size(); ++pi) {
        Tensor& value = *probe_list[pi].value;
        const Tensor& grad = analytic_grads[pi];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + epsilon;
            const double lp = compute_loss();
            value[i] = saved - epsilon;
            const double lm = compute_loss();
            value[i] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw std::runtime_error("grad_check: non-finite loss while probing " +
                                         probe_list[pi].name);
            const double numeric = (lp - lm) / (2.0 * epsilon);
            const double rel = gradcheck_relative_error(grad[i], numeric);
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = probe_list[pi].name + "[" + std::to_string(i) + "]";
                res.worst_analytic = grad[i];
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

/// Checks a single layer: loss is the inner product of the layer output with
/// a fixed random tensor, so the upstream gradient is exact and smooth.
/// Inputs are resampled while any cached value sits within 10*epsilon of a
/// ReLU/max-pool switching point.
inline GradCheckResult grad_check_layer(Layer& layer, Tensor input, Rng& rng,
                                        double epsilon = 1e-5) {
    gradcheck_validate_epsilon(epsilon);
    const double margin = 10.0 * epsilon;
    Tensor out;
    for (int attempt = 0;; ++attempt) {
        out = layer.forward(input);
        if (layer.kink_margin() > margin) break;
        if (attempt >= 200)
            throw std::runtime_error("grad_check: could not sample inputs clear of kinks");
        for (auto& v : input.values()) v = rng.uniform(-1.0, 1.0);
    }

    Tensor upstream(out.shape());
    for (auto& v : upstream.values()) v = rng.uniform(-1.0, 1.0);

    const auto loss = [&]() {
        Tensor o = layer.forward(input);
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * upstream[i];
        return s;
    };

    layer.zero_grads();
    layer.forward(input);
    Tensor input_grad = layer.backward(upstream);

    std::vector<ParamRef> probes = layer.params();
    std::vector<Tensor> analytic;
    analytic.reserve(probes.size() + 1);
    for (auto& p : probes) analytic.push_back(*p.grad);
    Tensor input_grad_copy = input_grad;
    probes.push_back({"input", &input, &input_grad});
    analytic.push_back(input_grad_copy);

    return grad_check_probe(loss, probes, analytic, epsilon);
}

}  // namespace mldr

#endif  // MLDR_GRADCHECK_HPP
