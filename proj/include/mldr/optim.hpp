#ifndef MLDR_OPTIM_HPP
#define MLDR_OPTIM_HPP

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mldr/layers.hpp"
#include "mldr/tensor.hpp"

// Stochastic gradient descent with classical (coupled) momentum and weight
// decay: g <- grad + wd*theta; v <- momentum*v + g; theta <- theta - lr*v.

namespace mldr {

struct SgdConfig {
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.0005;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("sgd: lr must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("sgd: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("sgd: weight_decay must be >= 0");
    }
};

class Sgd {
public:
    explicit Sgd(SgdConfig config) : config_(config) { config_.validate(); }

    const SgdConfig& config() const { return config_; }
    void set_lr(double lr) {
        config_.lr = lr;
        config_.validate();
    }

    /// One update over all parameters. Velocities are created lazily (zero)
    /// per parameter name. Grads are zeroed afterwards, so
    /// accumulate-then-step is the only calling pattern.
    void step(const std::vector<ParamRef>& params) {
        for (const auto& p : params) {
            Tensor& theta = *p.value;
            Tensor& grad = *p.grad;
            if (!theta.same_shape(grad))
                throw std::invalid_argument("sgd: grad shape " + grad.shape_str() +
                                            " does not match param " + p.name + " " +
                                            theta.shape_str());
            auto [it, inserted] = velocity_.try_emplace(p.name, Tensor(theta.shape()));
            Tensor& v = it->second;
            if (!inserted && !v.same_shape(theta))
                throw std::invalid_argument("sgd: velocity shape " + v.shape_str() +
                                            " does not match param " + p.name);
            const double lr = config_.lr, mu = config_.momentum, wd = config_.weight_decay;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double g = grad[i] + wd * theta[i];
                v[i] = mu * v[i] + g;
                theta[i] -= lr * v[i];
            }
            grad.fill(0.0);
        }
    }

    std::map<std::string, Tensor>& velocity() { return velocity_; }
    const std::map<std::string, Tensor>& velocity() const { return velocity_; }

private:
    SgdConfig config_;
    std::map<std::string, Tensor> velocity_;
};

// ---------------------------------------------------------------------------

struct LrPolicy {
    enum class Kind { constant, step_decay };
    Kind kind = Kind::constant;
    double factor = 0.1;  // step_decay only
    int every = 10;       // step_decay only

    static LrPolicy parse(const std::string& name, double factor, int every) {
        LrPolicy p;
        if (name == "constant") {
            p.kind = Kind::constant;
        } else if (name == "step_decay") {
            p.kind = Kind::step_decay;
            p.factor = factor;
            p.every = every;
            if (every < 1) throw std::invalid_argument("lr_policy: every must be >= 1");
            if (factor <= 0.0) throw std::invalid_argument("lr_policy: factor must be positive");
        } else {
            throw std::invalid_argument("lr_policy: unknown policy '" + name + "'");
        }
        return p;
    }

    std::string name() const { return kind == Kind::constant ? "constant" : "step_decay"; }
};

inline double lr_schedule(int epoch, double base_lr, const LrPolicy& policy) {
    if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be >= 0");
    if (policy.kind == LrPolicy::Kind::constant) return base_lr;
    return base_lr * std::pow(policy.factor, static_cast<double>(epoch / policy.every));
}

}  // namespace mldr

#endif  // MLDR_OPTIM_HPP
