#ifndef NMSG_TRAINING_HPP
#define NMSG_TRAINING_HPP

#include <array>
#include <cmath>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nmsg/losses.hpp"
#include "nmsg/model.hpp"

namespace nmsg {

/// How controllers are updated.
enum class Mode { TrueOnly, SgOnly, Hybrid };

inline std::string_view mode_name(Mode m)
{
    switch (m) {
    case Mode::TrueOnly: return "true-only";
    case Mode::SgOnly: return "sg-only";
    case Mode::Hybrid: return "hybrid";
    }
    return "?";
}

inline Mode parse_mode(std::string_view s)
{
    if (s == "true-only") return Mode::TrueOnly;
    if (s == "sg-only") return Mode::SgOnly;
    if (s == "hybrid") return Mode::Hybrid;
    throw ConfigError("unknown mode '" + std::string(s) + "' (expected hybrid, true-only or sg-only)");
}

struct TrainConfig {
    Mode mode = Mode::Hybrid;
    OptimizerConfig opt{OptimizerKind::Adam, 5e-6};
    double sg_alpha = 0.0; // step size of the predicted-gradient update; 0 means "same as opt.lr"
    bool clip = false;
    double clip_norm = 5.0;
    bool persist_memory = false;

    double alpha() const { return sg_alpha > 0 ? sg_alpha : opt.lr; }

    void validate() const
    {
        opt.validate();
        if (sg_alpha < 0) throw ConfigError("train: sg_alpha must be >= 0");
        if (clip && !(clip_norm > 0)) throw ConfigError("train: clip_norm must be > 0");
    }
};

/// One element of a sequence. Loss and accuracy only count `scored` steps.
struct Step {
    Tensor input;
    Tensor target; // [1 x output]
    Tensor aux;    // optional side input, [1 x aux_dim]
    bool scored = true;
};

using Sequence = std::vector<Step>;

struct MetricsRecord {
    std::size_t iter = 0;
    double task_loss = 0.0;
    std::array<double, 3> sg_loss{};
    std::array<double, 3> gnorm_true{};
    std::array<double, 3> gnorm_sg{};
    double metric = 0.0;
    bool rare = false;
    std::string phase;

    bool all_finite() const
    {
        auto ok = [](const std::array<double, 3>& a) {
            return std::isfinite(a[0]) && std::isfinite(a[1]) && std::isfinite(a[2]);
        };
        return std::isfinite(task_loss) && std::isfinite(metric) && ok(sg_loss) && ok(gnorm_true) && ok(gnorm_sg);
    }
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t scored = 0;
};

inline std::size_t argmax(std::span<const double> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

/// Tape record of one forward pass over a batch of sequences.
struct ForwardPass {
    Var loss;
    std::vector<std::array<Var, 3>> ctrl;   // per step: q, m, m'
    std::vector<const Tensor*> targets;     // per step
    std::vector<std::size_t> seq_begin;     // step offset of each sequence
    std::size_t correct = 0;
    std::size_t scored = 0;
    std::optional<Tensor> final_memory;
};

/// Couples a model with its optimizers and runs training / evaluation passes.
class Trainer {
public:
    Trainer(MemoryNetwork& model, const TrainConfig& cfg) : model_(model), cfg_(cfg)
    {
        cfg.validate();
        ParamRegistry reg = model.task_registry();
        task_params_ = reg.all();
        main_opt_ = Optimizer(task_params_, cfg.opt);
        OptimizerConfig sgc = cfg.opt;
        sgc.lr = cfg.alpha();
        for (Role r : all_roles) {
            group_params_[idx(r)] = reg.group(controller_group(r));
            apply_opt_[idx(r)] = Optimizer(group_params_[idx(r)], sgc);
        }
    }

    const TrainConfig& config() const { return cfg_; }
    MemoryNetwork& model() { return model_; }

    /// Memory carried between sequences when persistence is on.
    const std::optional<Tensor>& carried_memory() const { return carried_; }
    void reset_memory() { carried_.reset(); }

    /// Forward, true backward, predictor regression and the mode-dependent updates.
    MetricsRecord train_iteration(std::span<const Sequence> batch)
    {
        Tape tape;
        ForwardPass fp = forward(tape, batch, true);
        GradientMap grads = tape.backward(fp.loss);

        const std::size_t n = fp.ctrl.size();
        std::array<std::vector<Tensor>, 3> truth, outs;
        MetricsRecord rec;
        rec.task_loss = fp.loss.value().item();
        for (Role r : all_roles) {
            const auto i = idx(r);
            truth[i].reserve(n);
            outs[i].reserve(n);
            double s = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                truth[i].push_back(tape.capture_gradient(fp.ctrl[t][i]));
                outs[i].push_back(fp.ctrl[t][i].value());
                s += l2_norm(truth[i].back());
            }
            rec.gnorm_true[i] = n ? s / static_cast<double>(n) : 0.0;
        }

        std::array<std::vector<Tensor>, 3> predicted;
        {
            SGBundle& bundle = model_.sg();
            std::lock_guard lock(bundle.mutex());
            for (Role r : all_roles) {
                const auto i = idx(r);
                Tape sg_tape;
                std::vector<Var> pred;
                pred.reserve(n);
                for (std::size_t s = 0; s < fp.seq_begin.size(); ++s) {
                    const std::size_t b = fp.seq_begin[s];
                    const std::size_t e = s + 1 < fp.seq_begin.size() ? fp.seq_begin[s + 1] : n;
                    std::vector<Tensor> ys;
                    for (std::size_t t = b; t < e; ++t) ys.push_back(*fp.targets[t]);
                    auto part = bundle.predictor(r).run(sg_tape, std::span<const Tensor>(outs[i]).subspan(b, e - b), ys);
                    pred.insert(pred.end(), part.begin(), part.end());
                }
                double s = 0.0;
                for (const Var& p : pred) {
                    predicted[i].push_back(p.value().reshaped(outs[i][predicted[i].size()].shape()));
                    s += l2_norm(predicted[i].back());
                }
                rec.gnorm_sg[i] = n ? s / static_cast<double>(n) : 0.0;
                Var sl = sg_regression_loss(sg_tape, pred, truth[i]);
                rec.sg_loss[i] = sl.value().item();
                bundle.optimizer(r).step(sg_tape.backward(sl));
            }
        }

        if (cfg_.mode == Mode::SgOnly)
            for (Role r : all_roles)
                for (Parameter* p : group_params_[idx(r)]) grads.params.erase(p);
        if (cfg_.clip) clip_global_norm(grads, task_params_, cfg_.clip_norm);
        main_opt_.step(grads);

        if (cfg_.mode != Mode::TrueOnly) {
            for (Role r : all_roles) {
                const auto i = idx(r);
                std::vector<GradientSeed> seeds;
                seeds.reserve(n);
                for (std::size_t t = 0; t < n; ++t) seeds.push_back({fp.ctrl[t][i], predicted[i][t]});
                sg_apply(tape, seeds, group_params_[i], apply_opt_[i]);
            }
        }

        if (cfg_.persist_memory) carried_ = fp.final_memory;
        rec.metric = fp.scored ? static_cast<double>(fp.correct) / static_cast<double>(fp.scored) : 0.0;
        return rec;
    }

    /// Forward-only pass with evaluation-mode batch norm. Does not touch carried memory.
    EvalResult evaluate(std::span<const Sequence> batch)
    {
        Tape tape;
        ForwardPass fp = forward(tape, batch, false);
        EvalResult r;
        r.loss = fp.loss.value().item();
        r.scored = fp.scored;
        r.accuracy = fp.scored ? static_cast<double>(fp.correct) / static_cast<double>(fp.scored) : 0.0;
        return r;
    }

    /// Builds the tape for `batch`. Sequences run one after another, each over its own memory.
    ForwardPass forward(Tape& tape, std::span<const Sequence> batch, bool training)
    {
        if (batch.empty()) throw DataError("training: empty batch");
        const bool classify = model_.config().head == Head::Classification;
        ForwardPass fp;
        Var total;
        std::optional<Tensor> memory = carried_;
        for (const Sequence& seq : batch) {
            if (seq.empty()) throw DataError("training: empty sequence");
            std::vector<const Tensor*> raw;
            raw.reserve(seq.size());
            for (const Step& s : seq) raw.push_back(&s.input);
            Var encoded = model_.encode(tape, raw, training);
            MemoryState st = model_.initial_state(tape, memory ? &*memory : nullptr);
            fp.seq_begin.push_back(fp.ctrl.size());
            for (std::size_t t = 0; t < seq.size(); ++t) {
                const Step& s = seq[t];
                Var x = seq.size() == 1 ? encoded : slice(encoded, 0, t, t + 1);
                StepTrace tr = model_.core_step(tape, x, st, s.aux.empty() ? nullptr : &s.aux);
                fp.ctrl.push_back({tr.q, tr.m, tr.mprime});
                fp.targets.push_back(&s.target);
                if (!s.scored) continue;
                Var l = classify ? cross_entropy(tr.yhat, s.target) : mse(tr.yhat, s.target);
                total = total.valid() ? add(total, l) : l;
                ++fp.scored;
                if (classify && argmax(tr.yhat.value().values()) == argmax(s.target.values())) ++fp.correct;
            }
            if (cfg_.persist_memory) memory = st.M.value();
            fp.final_memory = st.M.value();
        }
        if (!fp.scored) throw DataError("training: batch has no scored steps");
        fp.loss = mul_scalar(total, 1.0 / static_cast<double>(fp.scored));
        if (!classify) fp.correct = 0;
        return fp;
    }

private:
    static std::size_t idx(Role r) { return static_cast<std::size_t>(r); }

    MemoryNetwork& model_;
    TrainConfig cfg_;
    std::vector<Parameter*> task_params_;
    Optimizer main_opt_;
    std::array<std::vector<Parameter*>, 3> group_params_;
    std::array<Optimizer, 3> apply_opt_;
    std::optional<Tensor> carried_;
};

} // namespace nmsg

#endif
