#ifndef NMSG_SYNTHGRAD_HPP
#define NMSG_SYNTHGRAD_HPP

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "nmsg/layers.hpp"
#include "nmsg/optim.hpp"

namespace nmsg {

/// Controller roles that own a synthetic-gradient predictor.
enum class Role : std::uint8_t { IC, OC, WC };

inline constexpr std::array<Role, 3> all_roles{Role::IC, Role::OC, Role::WC};

inline Group controller_group(Role r)
{
    switch (r) {
    case Role::IC: return Group::IC;
    case Role::OC: return Group::OC;
    case Role::WC: return Group::WC;
    }
    return Group::IC;
}

inline Group predictor_group(Role r)
{
    switch (r) {
    case Role::IC: return Group::SgIC;
    case Role::OC: return Group::SgOC;
    case Role::WC: return Group::SgWC;
    }
    return Group::SgIC;
}

inline const char* role_name(Role r)
{
    switch (r) {
    case Role::IC: return "ic";
    case Role::OC: return "oc";
    case Role::WC: return "wc";
    }
    return "?";
}

/// Recurrent predictor of dL/d(controller output) from (controller output, ground truth).
class SGPredictor {
public:
    SGPredictor() = default;
    SGPredictor(const std::string& name, std::size_t ctrl, std::size_t target, std::size_t hidden)
        : ctrl_(ctrl), target_(target), cell_(name + ".lstm", ctrl + target, hidden),
          head_(name + ".head", hidden, ctrl, Activation::Identity)
    {
    }

    std::size_t ctrl_size() const { return ctrl_; }
    std::size_t target_size() const { return target_; }

    /// One recurrent step. Inputs enter `tape` as constants, so the prediction never
    /// carries gradient back into the main model.
    Var step(Tape& tape, const Tensor& ctrl_out, const Tensor& y, LstmState& state)
    {
        if (ctrl_out.size() != ctrl_ || y.size() != target_)
            throw DimensionError("sg predictor: controller output " + shape_str(ctrl_out.shape()) + " and target " +
                                 shape_str(y.shape()) + " do not match sizes " + std::to_string(ctrl_) + "/" +
                                 std::to_string(target_));
        Tensor in({1, ctrl_ + target_});
        std::copy(ctrl_out.values().begin(), ctrl_out.values().end(), in.data());
        std::copy(y.values().begin(), y.values().end(), in.data() + ctrl_);
        state = cell_.step(tape, tape.constant(std::move(in)), state);
        return head_.forward(tape, state.h);
    }

    /// Predictions for one sequence from a zero state.
    std::vector<Var> run(Tape& tape, std::span<const Tensor> ctrl, std::span<const Tensor> y)
    {
        if (ctrl.size() != y.size()) throw DimensionError("sg predictor: sequence length mismatch");
        LstmState st = cell_.zero_state(tape);
        std::vector<Var> out;
        out.reserve(ctrl.size());
        for (std::size_t t = 0; t < ctrl.size(); ++t) out.push_back(step(tape, ctrl[t], y[t], st));
        return out;
    }

    void collect(ParamRegistry& reg, Group g)
    {
        cell_.collect(reg, g);
        head_.collect(reg, g, InitKind::Zeros); // predictions start at zero
    }

    LstmCell& cell() { return cell_; }
    Dense& head() { return head_; }

private:
    std::size_t ctrl_ = 0, target_ = 0;
    LstmCell cell_;
    Dense head_;
};

/// Single-step prediction from a zero state, detached from any tape.
inline Tensor sg_predict(SGPredictor& sg, const Tensor& ctrl_out, const Tensor& y)
{
    Tape tape;
    LstmState st = sg.cell().zero_state(tape);
    return sg.step(tape, ctrl_out, y, st).value().reshaped(ctrl_out.shape());
}

/// L2 regression loss between predicted and true gradients, averaged over steps.
inline Var sg_regression_loss(Tape& tape, std::span<const Var> predicted, std::span<const Tensor> truth)
{
    if (predicted.size() != truth.size() || predicted.empty())
        throw DimensionError("sg loss: " + std::to_string(predicted.size()) + " predictions vs " +
                             std::to_string(truth.size()) + " targets");
    Var total;
    for (std::size_t t = 0; t < predicted.size(); ++t) {
        Var target = tape.constant(truth[t].reshaped(predicted[t].shape()));
        Var d = sub(predicted[t], target);
        Var sq = sum(mul(d, d));
        total = total.valid() ? add(total, sq) : sq;
    }
    return mul_scalar(total, 1.0 / static_cast<double>(predicted.size()));
}

/// One optimizer step on a predictor's parameters against captured true gradients.
/// Returns the loss before the step.
inline double sg_train_step(SGPredictor& sg, Optimizer& opt, std::span<const Tensor> ctrl, std::span<const Tensor> y,
                            std::span<const Tensor> true_grads)
{
    for (std::size_t t = 0; t < ctrl.size() && t < true_grads.size(); ++t)
        if (true_grads[t].size() != ctrl[t].size())
            throw DimensionError("sg train: true gradient " + shape_str(true_grads[t].shape()) + " vs output " +
                                 shape_str(ctrl[t].shape()));
    Tape tape;
    std::vector<Var> pred = sg.run(tape, ctrl, y);
    Var loss = sg_regression_loss(tape, pred, true_grads);
    opt.step(tape.backward(loss));
    return loss.value().item();
}

/// Secondary-feedback update for one controller: contract the predicted gradients with the
/// controller's Jacobian (an injection pass restricted to its parameter group), then
/// step the group's optimizer. Returns the gradient that was applied.
inline GradientMap sg_apply(Tape& tape, std::span<const GradientSeed> seeds, const std::vector<Parameter*>& group,
                            Optimizer& opt)
{
    for (const auto& s : seeds)
        if (!tape.is_marked(s.node)) throw ContractError("sg_apply: seed node is not a marked controller output");
    std::unordered_set<const Parameter*> members(group.begin(), group.end());
    GradientMap g = tape.inject_gradient(seeds, [&](const Parameter& p) { return members.count(&p) != 0; });
    opt.step(g);
    return g;
}

/// The three predictors of one model, with their own optimizers. Shared between models
/// for knowledge sharing; updates are serialized through `mutex`.
class SGBundle {
public:
    SGBundle(std::size_t ctrl, std::size_t target, std::size_t hidden, const OptimizerConfig& opt, std::uint64_t seed)
        : ic_("sg_ic", ctrl, target, hidden), oc_("sg_oc", ctrl, target, hidden), wc_("sg_wc", ctrl, target, hidden),
          opt_cfg_(opt), token_(next_token())
    {
        ParamRegistry reg;
        collect(reg);
        init_params(reg, seed);
        rebuild_optimizers(nullptr);
    }

    SGBundle(const SGBundle&) = delete;
    SGBundle& operator=(const SGBundle&) = delete;

    SGPredictor& predictor(Role r) { return r == Role::IC ? ic_ : r == Role::OC ? oc_ : wc_; }
    Optimizer& optimizer(Role r) { return opts_[static_cast<std::size_t>(r)]; }

    std::size_t ctrl_size() const { return ic_.ctrl_size(); }
    std::size_t target_size() const { return ic_.target_size(); }
    std::uint64_t token() const { return token_; }
    std::mutex& mutex() { return mutex_; }

    void collect(ParamRegistry& reg)
    {
        ic_.collect(reg, Group::SgIC);
        oc_.collect(reg, Group::SgOC);
        wc_.collect(reg, Group::SgWC);
    }

    /// Deep copy of parameters and optimizer state under a fresh share token.
    std::shared_ptr<SGBundle> clone()
    {
        std::lock_guard lock(mutex_);
        auto out = std::shared_ptr<SGBundle>(new SGBundle(*this, CopyTag{}));
        return out;
    }

private:
    struct CopyTag {};

    SGBundle(const SGBundle& o, CopyTag)
        : ic_(o.ic_), oc_(o.oc_), wc_(o.wc_), opt_cfg_(o.opt_cfg_), token_(next_token())
    {
        rebuild_optimizers(&o);
    }

    void rebuild_optimizers(const SGBundle* from)
    {
        for (Role r : all_roles) {
            const auto i = static_cast<std::size_t>(r);
            ParamRegistry reg;
            predictor(r).collect(reg, predictor_group(r));
            if (from)
                opts_[i] = from->opts_[i].rebound(reg.all());
            else
                opts_[i] = Optimizer(reg.all(), opt_cfg_);
        }
    }

    static std::uint64_t next_token()
    {
        static std::atomic<std::uint64_t> counter{1};
        return counter++;
    }

    SGPredictor ic_, oc_, wc_;
    OptimizerConfig opt_cfg_;
    std::array<Optimizer, 3> opts_;
    std::uint64_t token_;
    std::mutex mutex_;
};

} // namespace nmsg

#endif
