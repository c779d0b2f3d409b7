#include <gtest/gtest.h>

#include "nmsg/gradcheck.hpp"
#include "nmsg/model.hpp"

using namespace nmsg;

namespace {

// Row-by-row scalar evaluation of the write rule.
std::vector<double> write_oracle(const std::vector<double>& M, const std::vector<double>& z, const std::vector<double>& w,
                                 std::size_t l, std::size_t k)
{
    std::vector<double> out(l * k);
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = (1.0 - z[i]) * M[i * k + j] + z[i] * w[j];
    return out;
}

Tensor softmax_draw(std::size_t n, Rng& rng)
{
    Tensor z({1, n});
    double s = 0;
    for (double& v : z.values()) s += (v = std::exp(rng.uniform(-3, 3)));
    for (double& v : z.values()) v /= s;
    return z;
}

ModelConfig small_config()
{
    ModelConfig c;
    c.encoder = EncoderKind::Identity;
    c.input_dim = 5;
    c.slots = 4;
    c.width = 6;
    c.output_dim = 3;
    return c;
}

void zero_controller(LstmCell& c)
{
    c.input_weights().value.fill(0);
    c.recurrent_weights().value.fill(0);
    c.bias().value.fill(0);
}

} // namespace

TEST(Attend, ZeroQueryIsUniform)
{
    Tape t;
    Var z = attend(t.constant(Tensor({1, 3})), t.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}, {1, 1, 1}})));
    for (double v : z.value().values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Attend, HandEvaluated)
{
    Tape t;
    Var z = attend(t.constant(Tensor::row({1, 0})), t.constant(Tensor::matrix({{1, 0}, {0, 1}})));
    EXPECT_NEAR(z.value()[0], 0.73106, 1e-5);
    EXPECT_NEAR(z.value()[1], 0.26894, 1e-5);
}

TEST(Attend, WeightsSumToOne)
{
    Rng rng(1);
    for (int n = 0; n < 100; ++n) {
        Tensor q({1, 4}), M({5, 4});
        for (double& v : q.values()) v = rng.uniform(-3, 3);
        for (double& v : M.values()) v = rng.uniform(-3, 3);
        Tape t;
        double s = 0;
        for (double v : attend(t.constant(q), t.constant(M)).value().values()) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Attend, MismatchedWidths)
{
    Tape t;
    EXPECT_THROW(attend(t.constant(Tensor({1, 3})), t.constant(Tensor({4, 2}))), DimensionError);
}

TEST(Retrieve, OneHotSelectsRow)
{
    LstmCell oc("oc", 2, 2);
    Tape t;
    LstmState st = oc.zero_state(t);
    const Tensor M = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
    auto [mbar, m] = retrieve(t, oc, t.constant(Tensor::row({0, 1, 0})), t.constant(M), st);
    EXPECT_EQ(mbar.value(), Tensor::row({3, 4}));
    EXPECT_EQ(m.value(), Tensor::row({0, 0}));
    EXPECT_TRUE(t.is_marked(m));
}

TEST(Retrieve, HalfHalfMixture)
{
    LstmCell oc("oc", 2, 2);
    Tape t;
    LstmState st = oc.zero_state(t);
    auto [mbar, m] = retrieve(t, oc, t.constant(Tensor::row({0.5, 0.5})), t.constant(Tensor::matrix({{2, 0}, {0, 2}})), st);
    EXPECT_EQ(mbar.value(), Tensor::row({1, 1}));
}

TEST(WriteRule, HandEvaluated)
{
    Tape t;
    Var M = write_rule(t.constant(Tensor::matrix({{1, 0}, {0, 1}})), t.constant(Tensor::row({0.75, 0.25})),
                       t.constant(Tensor::row({1, 1})));
    EXPECT_EQ(M.value(), Tensor::matrix({{1, 0.75}, {0.25, 1}}));
}

TEST(WriteRule, OneHotReplacesRow)
{
    Rng rng(2);
    Tensor M({3, 4}), w({1, 4});
    for (double& v : M.values()) v = rng.uniform(-1, 1);
    for (double& v : w.values()) v = rng.uniform(-1, 1);
    Tape t;
    Var out = write_rule(t.constant(M), t.constant(Tensor::row({0, 0, 1})), t.constant(w));
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(out.value().at(0, j), M.at(0, j));
        EXPECT_EQ(out.value().at(1, j), M.at(1, j));
        EXPECT_EQ(out.value().at(2, j), w[j]);
    }
}

TEST(WriteRule, MatchesScalarOracle)
{
    Rng rng(3);
    for (std::size_t l : {1, 2, 3})
        for (std::size_t k : {1, 2, 4})
            for (int n = 0; n < 100; ++n) {
                Tensor M({l, k}), w({1, k});
                for (double& v : M.values()) v = rng.uniform(-2, 2);
                for (double& v : w.values()) v = rng.uniform(-2, 2);
                const Tensor z = softmax_draw(l, rng);
                Tape t;
                Var out = write_rule(t.constant(M), t.constant(z), t.constant(w));
                const auto ref = write_oracle(M.storage(), z.storage(), w.storage(), l, k);
                for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LT(std::abs(out.value()[i] - ref[i]), 1e-12);
            }
}

TEST(WriteRule, RowsStayInConvexHull)
{
    Rng rng(4);
    for (int n = 0; n < 100; ++n) {
        Tensor M({3, 2}), w({1, 2});
        for (double& v : M.values()) v = rng.uniform(-2, 2);
        for (double& v : w.values()) v = rng.uniform(-2, 2);
        Tape t;
        Var out = write_rule(t.constant(M), t.constant(softmax_draw(3, rng)), t.constant(w));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const double lo = std::min(M.at(i, j), w[j]), hi = std::max(M.at(i, j), w[j]);
                EXPECT_GE(out.value().at(i, j), lo - 1e-15);
                EXPECT_LE(out.value().at(i, j), hi + 1e-15);
            }
    }
}

TEST(WriteRule, WriteBackIsFixedPoint)
{
    Rng rng(5);
    Tensor M({3, 2});
    for (std::size_t j = 0; j < 2; ++j) {
        const double v = rng.uniform(-1, 1);
        for (std::size_t i = 0; i < 3; ++i) M.at(i, j) = v;
    }
    Tensor w({1, 2});
    w[0] = M.at(0, 0);
    w[1] = M.at(0, 1);
    Tape t;
    EXPECT_EQ(write_rule(t.constant(M), t.constant(softmax_draw(3, rng)), t.constant(w)).value(), M);
}

TEST(MemoryStep, ZeroControllersScaleMemory)
{
    ModelConfig cfg = small_config();
    MemoryNetwork net(cfg, 1);
    zero_controller(net.input_controller());
    zero_controller(net.output_controller());
    zero_controller(net.write_controller());
    Tape t;
    MemoryState st = net.initial_state(t);
    StepTrace tr = net.memory_step(t, Tensor::row({1, 2, 3, 4, 5}), st);
    EXPECT_EQ(tr.q.value(), Tensor({1, cfg.width}));
    const double f = 1.0 - 1.0 / static_cast<double>(cfg.slots);
    for (std::size_t i = 0; i < net.initial_memory().size(); ++i)
        EXPECT_NEAR(st.M.value()[i], net.initial_memory()[i] * f, 1e-15);
}

TEST(MemoryStep, DeterministicAndShaped)
{
    for (std::size_t l : {1, 3}) {
        for (std::size_t k : {2, 5}) {
            ModelConfig cfg = small_config();
            cfg.slots = l;
            cfg.width = k;
            MemoryNetwork net(cfg, 2);
            Tape t;
            MemoryState a = net.initial_state(t), b = net.initial_state(t);
            const Tensor x = Tensor::row({0.1, -0.2, 0.3, 0.4, -0.5});
            StepTrace ta = net.memory_step(t, x, a), tb = net.memory_step(t, x, b);
            EXPECT_EQ(ta.yhat.value(), tb.yhat.value());
            EXPECT_EQ(a.M.value(), b.M.value());
            EXPECT_EQ(ta.q.shape(), (Shape{1, k}));
            EXPECT_EQ(ta.yhat.shape(), (Shape{1, cfg.output_dim}));
            EXPECT_EQ(a.M.shape(), (Shape{l, k}));
            double s = 0;
            for (double v : ta.yhat.value().values()) s += v;
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(MemoryStep, RegressionHeadIsNonNegative)
{
    ModelConfig cfg = small_config();
    cfg.head = Head::RegressionRelu;
    MemoryNetwork net(cfg, 3);
    Rng rng(1);
    Tape t;
    MemoryState st = net.initial_state(t);
    for (int i = 0; i < 5; ++i) {
        Tensor x({1, 5});
        for (double& v : x.values()) v = rng.uniform(-3, 3);
        for (double v : net.memory_step(t, x, st).yhat.value().values()) EXPECT_GE(v, 0.0);
    }
}

TEST(MemoryStep, ZeroDecoderIsUniform)
{
    MemoryNetwork net(small_config(), 4);
    net.decoder().weight().value.fill(0);
    Tape t;
    MemoryState st = net.initial_state(t);
    for (double v : net.memory_step(t, Tensor::row({1, 1, 1, 1, 1}), st).yhat.value().values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(MemoryStep, GradientReachesInitialMemory)
{
    MemoryNetwork net(small_config(), 5);
    const Tensor M0 = net.initial_memory();
    auto loss = [&](Tape& t, const Tensor& M) {
        MemoryState st = net.initial_state(t, &M, true);
        Var leaf = st.M;
        Var total;
        for (double s : {0.5, -1.0, 2.0}) {
            StepTrace tr = net.memory_step(t, Tensor({1, 5}, s), st);
            Var l = sum(mul(tr.yhat, tr.yhat));
            total = total.valid() ? add(total, l) : l;
        }
        return std::pair{total, leaf};
    };
    Tape t;
    auto [L, leaf] = loss(t, M0);
    t.backward(L);
    const Tensor g = t.grad(leaf);
    EXPECT_GT(l2_norm(g), 0.0);
    Tensor M = M0;
    const double eps = 1e-6;
    for (std::size_t i = 0; i < M.size(); ++i) {
        const double o = M[i];
        M[i] = o + eps;
        Tape a;
        const double fp = loss(a, M).first.value().item();
        M[i] = o - eps;
        Tape b;
        const double fm = loss(b, M).first.value().item();
        M[i] = o;
        EXPECT_NEAR(g[i], (fp - fm) / (2 * eps), 1e-6 + 1e-4 * std::abs(g[i]));
    }
}

TEST(MemoryStep, MarksAllThreeControllerOutputs)
{
    MemoryNetwork net(small_config(), 6);
    Tape t;
    MemoryState st = net.initial_state(t);
    StepTrace tr = net.memory_step(t, Tensor({1, 5}, 0.3), st);
    EXPECT_TRUE(t.is_marked(tr.q));
    EXPECT_TRUE(t.is_marked(tr.m));
    EXPECT_TRUE(t.is_marked(tr.mprime));
    EXPECT_FALSE(t.is_marked(tr.yhat));
}

TEST(MemoryStep, ComposedStepPassesGradcheck)
{
    for (auto& c : builtin_gradcheck_cases(2))
        if (c.name == "memory_step") {
            const GradcheckResult r = run_gradcheck(c, 5);
            EXPECT_TRUE(r.passed) << r.max_rel_error;
            return;
        }
    FAIL() << "memory_step case missing";
}
