#ifndef NMSG_GRADCHECK_HPP
#define NMSG_GRADCHECK_HPP

// Central finite-difference verification of reverse-mode gradients.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nmsg/losses.hpp"
#include "nmsg/model.hpp"

namespace nmsg {

/// A differentiable computation over a set of tensors to perturb. Inputs are
/// wrapped as Parameters so their gradients come back in the GradientMap.
struct GradcheckCase {
    std::string name;
    std::function<Var(Tape&)> forward;
    std::vector<Parameter*> wrt;
    std::shared_ptr<void> owner;
};

struct GradcheckResult {
    std::string name;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Max over tensors of ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, floor).
/// The floor keeps identically-zero gradients (e.g. a bias in front of batch norm) from
/// being judged on finite-difference roundoff alone. The scalar objective is sum(w * out)
/// for a fixed random projection w.
inline GradcheckResult run_gradcheck(GradcheckCase& c, std::uint64_t seed, double eps = 1e-5, double tol = 1e-4,
                                     double floor = 1e-5)
{
    Tensor w;
    auto objective = [&](Tape& tape) {
        Var out = c.forward(tape);
        if (w.empty()) {
            Rng rng(seed);
            w = Tensor(out.shape());
            for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
        }
        return sum(mul(out, tape.constant(w)));
    };
    GradientMap analytic;
    {
        Tape tape;
        analytic = tape.backward(objective(tape));
    }
    auto eval = [&] {
        Tape tape;
        return objective(tape).value().item();
    };
    GradcheckResult r{c.name, 0.0, true};
    for (Parameter* p : c.wrt) {
        Tensor a = analytic.contains(*p) ? analytic.at(*p) : Tensor(p->value.shape());
        Tensor num(p->value.shape());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double fp = eval();
            p->value[i] = orig - eps;
            const double fm = eval();
            p->value[i] = orig;
            num[i] = (fp - fm) / (2.0 * eps);
        }
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            diff = std::max(diff, std::abs(a[i] - num[i]));
            na = std::max(na, std::abs(a[i]));
            nn = std::max(nn, std::abs(num[i]));
        }
        r.max_rel_error = std::max(r.max_rel_error, diff / std::max({na, nn, floor}));
    }
    r.passed = r.max_rel_error < tol;
    return r;
}

/// Every differentiable primitive of the tensor module, in report order.
inline const std::vector<std::string>& primitive_names()
{
    static const std::vector<std::string> names{
        "matmul", "add", "sub", "mul", "add_scalar", "mul_scalar", "sigmoid", "tanh", "relu", "exp", "log",
        "transpose", "softmax_rows", "reshape", "concat", "slice", "sum", "mean", "conv2d", "maxpool2x2",
        "batch_norm_train", "batch_norm_eval"};
    return names;
}

namespace detail {

struct CaseBuilder {
    Rng rng;
    std::vector<GradcheckCase> cases;

    explicit CaseBuilder(std::uint64_t seed) : rng(seed) {}

    std::shared_ptr<std::vector<Parameter>> inputs(const std::vector<Shape>& shapes, double lo = -1.0, double hi = 1.0)
    {
        auto ps = std::make_shared<std::vector<Parameter>>();
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            Tensor t(shapes[i]);
            for (double& v : t.values()) v = rng.uniform(lo, hi);
            ps->push_back(Parameter{"in" + std::to_string(i), std::move(t)});
        }
        return ps;
    }

    template <typename F>
    void op(const std::string& name, const std::vector<Shape>& shapes, F f, double lo = -1.0, double hi = 1.0)
    {
        auto ps = inputs(shapes, lo, hi);
        GradcheckCase c;
        c.name = name;
        for (auto& p : *ps) c.wrt.push_back(&p);
        c.forward = [ps, f](Tape& t) {
            std::vector<Var> v;
            for (auto& p : *ps) v.push_back(t.param(p));
            return f(t, v);
        };
        c.owner = ps;
        cases.push_back(std::move(c));
    }

    /// A layer object plus extra inputs; all registered parameters are checked too.
    template <typename Obj, typename F>
    void layer(const std::string& name, std::shared_ptr<Obj> obj, const ParamRegistry& reg, const std::vector<Shape>& shapes, F f)
    {
        init_params(reg, rng.next());
        // Perturb biases and gains away from their structured initial values.
        for (Parameter* p : reg.all())
            for (double& v : p->value.values()) v += rng.uniform(-0.3, 0.3);
        auto ps = inputs(shapes);
        GradcheckCase c;
        c.name = name;
        for (auto& p : *ps) c.wrt.push_back(&p);
        for (Parameter* p : reg.all()) c.wrt.push_back(p);
        c.forward = [ps, obj, f](Tape& t) {
            std::vector<Var> v;
            for (auto& p : *ps) v.push_back(t.param(p));
            return f(t, *obj, v);
        };
        c.owner = std::make_shared<std::pair<std::shared_ptr<Obj>, std::shared_ptr<std::vector<Parameter>>>>(obj, ps);
        cases.push_back(std::move(c));
    }
};

} // namespace detail

/// The standard suite: every primitive once, then layers, losses and the composed memory step.
inline std::vector<GradcheckCase> builtin_gradcheck_cases(std::uint64_t seed = 1)
{
    detail::CaseBuilder b(seed);
    using V = std::vector<Var>;
    b.op("matmul", {{3, 4}, {4, 2}}, [](Tape&, V& v) { return matmul(v[0], v[1]); });
    b.op("add", {{3, 4}, {1, 4}}, [](Tape&, V& v) { return add(v[0], v[1]); });
    b.op("sub", {{3, 1}, {3, 4}}, [](Tape&, V& v) { return sub(v[0], v[1]); });
    b.op("mul", {{3, 4}, {3, 4}}, [](Tape&, V& v) { return mul(v[0], v[1]); });
    b.op("add_scalar", {{2, 3}}, [](Tape&, V& v) { return add_scalar(v[0], 0.7); });
    b.op("mul_scalar", {{2, 3}}, [](Tape&, V& v) { return mul_scalar(v[0], -1.3); });
    b.op("sigmoid", {{2, 5}}, [](Tape&, V& v) { return sigmoid(v[0]); });
    b.op("tanh", {{2, 5}}, [](Tape&, V& v) { return nmsg::tanh(v[0]); });
    b.op("relu", {{2, 5}}, [](Tape&, V& v) { return relu(v[0]); });
    b.op("exp", {{2, 5}}, [](Tape&, V& v) { return nmsg::exp(v[0]); });
    b.op("log", {{2, 5}}, [](Tape&, V& v) { return nmsg::log(v[0]); }, 0.2, 2.0);
    b.op("transpose", {{3, 4}}, [](Tape&, V& v) { return transpose(v[0]); });
    b.op("softmax_rows", {{3, 5}}, [](Tape&, V& v) { return softmax_rows(v[0]); });
    b.op("reshape", {{3, 4}}, [](Tape&, V& v) { return reshape(v[0], {2, 6}); });
    b.op("concat", {{2, 3}, {2, 2}}, [](Tape&, V& v) { return concat({v[0], v[1]}, 1); });
    b.op("slice", {{4, 5}}, [](Tape&, V& v) { return slice(v[0], 1, 1, 4); });
    b.op("sum", {{3, 4}}, [](Tape&, V& v) { return sum(v[0]); });
    b.op("mean", {{3, 4}}, [](Tape&, V& v) { return mean(v[0]); });
    b.op("conv2d", {{2, 5, 5, 2}, {3, 3, 2, 3}}, [](Tape&, V& v) { return conv2d(v[0], v[1]); });
    b.op("maxpool2x2", {{2, 5, 4, 2}}, [](Tape&, V& v) { return maxpool2x2(v[0]); });
    b.op("batch_norm_train", {{3, 4, 4, 2}, {2}, {2}}, [](Tape&, V& v) {
        BatchNormStats st{Tensor({2}), Tensor({2}, 1.0)};
        return batch_norm(v[0], v[1], v[2], st, true);
    });
    b.op("batch_norm_eval", {{3, 4, 4, 2}, {2}, {2}}, [](Tape&, V& v) {
        BatchNormStats st{Tensor(Shape{2}, std::vector<double>{0.1, -0.2}), Tensor(Shape{2}, std::vector<double>{0.5, 1.5})};
        return batch_norm(v[0], v[1], v[2], st, false);
    });

    for (Activation act : {Activation::Identity, Activation::Relu, Activation::Softmax}) {
        auto d = std::make_shared<Dense>("dense", 4, 3, act);
        ParamRegistry reg;
        d->collect(reg, Group::Decoder);
        const char* tag = act == Activation::Identity ? "identity" : act == Activation::Relu ? "relu" : "softmax";
        b.layer(std::string("dense_") + tag, d, reg, {{2, 4}}, [](Tape& t, Dense& l, V& v) { return l.forward(t, v[0]); });
    }
    {
        auto cell = std::make_shared<LstmCell>("lstm", 3, 4);
        ParamRegistry reg;
        cell->collect(reg, Group::IC);
        b.layer("lstm_step", cell, reg, {{2, 3}, {2, 4}, {2, 4}, {2, 3}}, [](Tape& t, LstmCell& l, V& v) {
            LstmState s1 = l.step(t, v[0], {v[1], v[2]});
            LstmState s2 = l.step(t, v[3], s1);
            return concat({s2.h, s2.c}, 1);
        });
    }
    {
        ConvEncoderConfig cc{8, 8, 1, 3, 2};
        auto enc = std::make_shared<ConvEncoder>(cc);
        ParamRegistry reg;
        enc->collect(reg, Group::Encoder);
        b.layer("conv_encoder", enc, reg, {{2, 8, 8, 1}}, [](Tape& t, ConvEncoder& e, V& v) { return e.forward(t, v[0], true); });
    }
    {
        auto enc = std::make_shared<SequenceEncoder>(2, 3);
        ParamRegistry reg;
        enc->collect(reg, Group::Encoder);
        b.layer("sequence_encoder", enc, reg, {{2, 4, 2}}, [](Tape& t, SequenceEncoder& e, V& v) { return e.forward(t, v[0]); });
    }
    b.op("cross_entropy", {{2, 4}}, [](Tape&, V& v) {
        Tensor y = Tensor::matrix({{0, 1, 0, 0}, {0, 0, 0, 1}});
        return cross_entropy(softmax_rows(v[0]), y);
    });
    b.op("mse", {{2, 3}}, [](Tape&, V& v) { return mse(v[0], Tensor::matrix({{0.1, -0.2, 0.3}, {0.0, 0.5, -0.5}})); });
    b.op("attend", {{1, 4}, {3, 4}}, [](Tape&, V& v) { return attend(v[0], v[1]); });
    b.op("write_rule", {{3, 4}, {1, 3}, {1, 4}}, [](Tape&, V& v) { return write_rule(v[0], softmax_rows(v[1]), v[2]); });
    {
        struct Net {
            ModelConfig cfg;
            std::unique_ptr<MemoryNetwork> model;
            Parameter memory;
            Tensor chi[2];
        };
        auto net = std::make_shared<Net>();
        net->cfg.encoder = EncoderKind::Conv;
        net->cfg.conv = ConvEncoderConfig{8, 8, 1, 2, 2};
        net->cfg.slots = 3;
        net->cfg.width = 4;
        net->cfg.output_dim = 3;
        net->cfg.sg_hidden = 2;
        net->model = std::make_unique<MemoryNetwork>(net->cfg, b.rng.next());
        net->memory = Parameter{"memory/M0", net->model->initial_memory()};
        for (auto& chi : net->chi) {
            chi = Tensor({8, 8, 1});
            for (double& v : chi.values()) v = b.rng.uniform(0.0, 1.0);
        }
        ParamRegistry reg = net->model->task_registry();
        for (Parameter* p : reg.all())
            for (double& v : p->value.values()) v += b.rng.uniform(-0.3, 0.3);
        GradcheckCase c;
        c.name = "memory_step";
        c.wrt = reg.all();
        c.wrt.push_back(&net->memory);
        c.forward = [net](Tape& t) {
            MemoryNetwork& m = *net->model;
            MemoryState st = m.initial_state(t);
            st.M = t.param(net->memory);
            StepTrace a = m.memory_step(t, net->chi[0], st);
            StepTrace b2 = m.memory_step(t, net->chi[1], st);
            return concat({a.yhat, b2.yhat, reshape(st.M, {1, 12})}, 1);
        };
        c.owner = net;
        b.cases.push_back(std::move(c));
    }
    return std::move(b.cases);
}

} // namespace nmsg

#endif
