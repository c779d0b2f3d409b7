// Fixtures shared by the unit tests and the acceptance runner.
#ifndef NMSG_TESTS_SUPPORT_HPP
#define NMSG_TESTS_SUPPORT_HPP

#include <cmath>
#include <vector>

#include "nmsg/episode.hpp"
#include "nmsg/training.hpp"

namespace nmsg::testing {

inline ModelConfig tiny_config(std::size_t input = 6, std::size_t classes = 3)
{
    ModelConfig c;
    c.encoder = EncoderKind::Identity;
    c.input_dim = input;
    c.slots = 4;
    c.width = 8;
    c.output_dim = classes;
    c.sg_hidden = 16;
    return c;
}

/// Class-dependent inputs, so that the task is learnable.
inline Sequence random_sequence(Rng& rng, std::size_t len, std::size_t input, std::size_t classes)
{
    Sequence s;
    for (std::size_t t = 0; t < len; ++t) {
        const std::size_t c = rng.index(classes);
        Tensor x({1, input});
        for (std::size_t i = 0; i < input; ++i) x[i] = 0.3 * rng.normal() + (i % classes == c ? 1.0 : 0.0);
        s.push_back({x, one_hot(c, classes), {}, true});
    }
    return s;
}

inline double cosine(const std::vector<Tensor>& a, const std::vector<Tensor>& b)
{
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t i = 0; i < a[t].size(); ++i) {
            ab += a[t][i] * b[t][i];
            aa += a[t][i] * a[t][i];
            bb += b[t][i] * b[t][i];
        }
    return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

struct Captured {
    std::vector<Tensor> outputs;
    std::vector<Tensor> truth;
    std::vector<Tensor> targets;
};

/// Controller outputs and true gradients of one role for a single sequence, with the model frozen.
inline Captured capture_role(MemoryNetwork& net, const Sequence& seq, Role role)
{
    Trainer tr(net, TrainConfig{});
    Tape tape;
    const Sequence* one = &seq;
    ForwardPass fp = tr.forward(tape, std::span<const Sequence>(one, 1), true);
    tape.backward(fp.loss);
    Captured c;
    for (std::size_t t = 0; t < fp.ctrl.size(); ++t) {
        Var v = fp.ctrl[t][static_cast<std::size_t>(role)];
        c.outputs.push_back(v.value());
        c.truth.push_back(tape.capture_gradient(v));
        c.targets.push_back(*fp.targets[t]);
    }
    return c;
}

inline std::vector<Tensor> predict_role(SGPredictor& sg, const Captured& c)
{
    Tape tape;
    std::vector<Tensor> out;
    for (const Var& v : sg.run(tape, c.outputs, c.targets)) out.push_back(v.value());
    return out;
}

struct FidelityResult {
    double cosine = 0.0;
    std::size_t steps = 0;
};

/// Regresses `role`'s predictor onto a fixed set of true gradients until the cosine passes
/// `target` or `max_steps` is reached.
inline FidelityResult sg_fidelity(MemoryNetwork& net, const Sequence& seq, Role role, std::size_t max_steps, double target,
                                  double lr = 1e-3)
{
    const Captured c = capture_role(net, seq, role);
    SGPredictor& sg = net.sg().predictor(role);
    ParamRegistry reg;
    sg.collect(reg, predictor_group(role));
    Optimizer opt(reg.all(), OptimizerConfig{OptimizerKind::Adam, lr});
    FidelityResult r;
    for (r.steps = 0; r.steps < max_steps; ++r.steps) {
        if (r.steps % 10 == 0) {
            r.cosine = cosine(predict_role(sg, c), c.truth);
            if (r.cosine > target) return r;
        }
        sg_train_step(sg, opt, c.outputs, c.targets, c.truth);
    }
    r.cosine = cosine(predict_role(sg, c), c.truth);
    return r;
}

/// Plain backprop baseline: the task components driven directly, with its own Adam.
class ReferenceTrainer {
public:
    ReferenceTrainer(MemoryNetwork& net, double lr) : net_(net), params_(net.task_registry().all()), lr_(lr)
    {
        m_.resize(params_.size());
        v_.resize(params_.size());
    }

    double step(std::span<const Sequence> batch)
    {
        Tape tape;
        const bool classify = net_.config().head == Head::Classification;
        Var total;
        std::size_t scored = 0;
        for (const Sequence& seq : batch) {
            std::vector<const Tensor*> raw;
            for (const Step& s : seq) raw.push_back(&s.input);
            Var enc = net_.encode(tape, raw, true);
            MemoryState st = net_.initial_state(tape);
            for (std::size_t t = 0; t < seq.size(); ++t) {
                Var x = seq.size() == 1 ? enc : slice(enc, 0, t, t + 1);
                StepTrace tr = net_.core_step(tape, x, st, seq[t].aux.empty() ? nullptr : &seq[t].aux);
                if (!seq[t].scored) continue;
                Var l = classify ? cross_entropy(tr.yhat, seq[t].target) : mse(tr.yhat, seq[t].target);
                total = total.valid() ? add(total, l) : l;
                ++scored;
            }
        }
        Var loss = mul_scalar(total, 1.0 / static_cast<double>(scored));
        GradientMap g = tape.backward(loss);
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = params_[k]->value;
            const Tensor& gk = g.at(*params_[k]);
            if (m_[k].empty()) m_[k] = v_[k] = Tensor(p.shape());
            for (std::size_t i = 0; i < p.size(); ++i) {
                m_[k][i] = b1 * m_[k][i] + (1.0 - b1) * gk[i];
                v_[k][i] = b2 * v_[k][i] + (1.0 - b2) * gk[i] * gk[i];
                p[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps);
            }
        }
        return loss.value().item();
    }

private:
    MemoryNetwork& net_;
    std::vector<Parameter*> params_;
    double lr_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

inline std::vector<Tensor> values_of(const std::vector<Parameter*>& ps)
{
    std::vector<Tensor> out;
    for (const Parameter* p : ps) out.push_back(p->value);
    return out;
}

inline bool same_values(const std::vector<Parameter*>& ps, const std::vector<Tensor>& before)
{
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (!(ps[i]->value == before[i])) return false;
    return true;
}

} // namespace nmsg::testing

#endif
