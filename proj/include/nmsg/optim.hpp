#ifndef NMSG_OPTIM_HPP
#define NMSG_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nmsg/autodiff.hpp"

namespace nmsg {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const
    {
        if (!(lr > 0)) throw ConfigError("optimizer: learning rate must be > 0");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
            throw ConfigError("optimizer: betas must lie in (0, 1)");
        if (!(eps > 0)) throw ConfigError("optimizer: eps must be > 0");
    }
};

struct AdamState {
    Tensor m;
    Tensor v;
    std::uint64_t t = 0;
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& st, const OptimizerConfig& cfg)
{
    if (grad.shape() != param.shape())
        throw DimensionError("adam: gradient " + shape_str(grad.shape()) + " vs parameter " + shape_str(param.shape()));
    if (st.m.empty()) {
        st.m = Tensor(param.shape());
        st.v = Tensor(param.shape());
    } else if (st.m.shape() != param.shape()) {
        throw DimensionError("adam: state " + shape_str(st.m.shape()) + " vs parameter " + shape_str(param.shape()));
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

inline void sgd_step(Tensor& param, const Tensor& grad, double lr)
{
    if (grad.shape() != param.shape())
        throw DimensionError("sgd: gradient " + shape_str(grad.shape()) + " vs parameter " + shape_str(param.shape()));
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

/// Optimizer over a fixed parameter list. Parameters absent from a gradient map are left alone.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(std::vector<Parameter*> params, OptimizerConfig cfg)
        : cfg_(cfg), params_(std::move(params)), state_(params_.size())
    {
        cfg_.validate();
    }

    void step(const GradientMap& grads)
    {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto it = grads.params.find(params_[i]);
            if (it == grads.params.end()) continue;
            if (cfg_.kind == OptimizerKind::Adam)
                adam_step(params_[i]->value, it->second, state_[i], cfg_);
            else
                sgd_step(params_[i]->value, it->second, cfg_.lr);
        }
    }

    /// Same configuration and state, bound to a parallel list of parameters (for deep copies).
    Optimizer rebound(std::vector<Parameter*> params) const
    {
        if (params.size() != params_.size()) throw ContractError("optimizer: rebind with a different parameter count");
        Optimizer o = *this;
        o.params_ = std::move(params);
        return o;
    }

    const std::vector<Parameter*>& params() const { return params_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    std::vector<Parameter*> params_;
    std::vector<AdamState> state_;
};

/// Global L2 norm over the listed parameters' gradients.
inline double global_norm(const GradientMap& grads, const std::vector<Parameter*>& params)
{
    double s = 0.0;
    for (const Parameter* p : params) {
        auto it = grads.params.find(p);
        if (it == grads.params.end()) continue;
        for (double v : it->second.values()) s += v * v;
    }
    return std::sqrt(s);
}

/// Rescales the listed gradients so their global norm is at most `max_norm`.
inline void clip_global_norm(GradientMap& grads, const std::vector<Parameter*>& params, double max_norm)
{
    const double n = global_norm(grads, params);
    if (n <= max_norm || n == 0.0) return;
    const double scale = max_norm / n;
    for (const Parameter* p : params) {
        auto it = grads.params.find(p);
        if (it == grads.params.end()) continue;
        for (double& v : it->second.values()) v *= scale;
    }
}

} // namespace nmsg

#endif
