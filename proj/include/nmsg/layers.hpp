#ifndef NMSG_LAYERS_HPP
#define NMSG_LAYERS_HPP

#include <string>
#include <utility>
#include <vector>

#include "nmsg/ops.hpp"
#include "nmsg/params.hpp"

namespace nmsg {

enum class Activation { Identity, Relu, Softmax };

/// y = act(x W + b) on row-major batches x: [B x in].
class Dense {
public:
    Dense() = default;
    Dense(std::string name, std::size_t in, std::size_t out, Activation act)
        : in_(in), out_(out), act_(act),
          W_(name + ".W", Tensor({in, out})),
          b_(name + ".b", Tensor({1, out}))
    {
    }

    Var forward(Tape& tape, Var x)
    {
        const Shape& s = x.shape();
        if (s.size() != 2 || s[1] != in_)
            throw DimensionError("dense " + W_.name + ": input " + shape_str(s) + ", expected [Bx" + std::to_string(in_) + "]");
        Var y = add(matmul(x, tape.param(W_)), tape.param(b_));
        switch (act_) {
        case Activation::Relu: return relu(y);
        case Activation::Softmax: return softmax_rows(y);
        case Activation::Identity: break;
        }
        return y;
    }

    void collect(ParamRegistry& reg, Group g, InitKind weight_init = InitKind::Uniform)
    {
        reg.add(g, W_, weight_init, in_);
        reg.add(g, b_, InitKind::Zeros);
    }

    Parameter& weight() { return W_; }
    Parameter& bias() { return b_; }
    std::size_t in_size() const { return in_; }
    std::size_t out_size() const { return out_; }
    Activation activation() const { return act_; }

private:
    std::size_t in_ = 0, out_ = 0;
    Activation act_ = Activation::Identity;
    Parameter W_, b_;
};

inline Var dense_forward(Tape& tape, Dense& layer, Var x) { return layer.forward(tape, x); }

struct LstmState {
    Var h;
    Var c;
};

/// Standard LSTM cell. Gate blocks in the fused weights are ordered input, forget, output, candidate.
class LstmCell {
public:
    LstmCell() = default;
    LstmCell(std::string name, std::size_t in, std::size_t hidden)
        : in_(in), hidden_(hidden),
          Wx_(name + ".Wx", Tensor({in, 4 * hidden})),
          Wh_(name + ".Wh", Tensor({hidden, 4 * hidden})),
          b_(name + ".b", Tensor({1, 4 * hidden}))
    {
    }

    LstmState zero_state(Tape& tape, std::size_t batch = 1) const
    {
        return {tape.constant(Tensor({batch, hidden_})), tape.constant(Tensor({batch, hidden_}))};
    }

    /// One step; returns the new state, whose `h` is the cell output.
    LstmState step(Tape& tape, Var x, const LstmState& st)
    {
        const Shape& xs = x.shape();
        if (xs.size() != 2 || xs[1] != in_)
            throw DimensionError("lstm " + Wx_.name + ": input " + shape_str(xs) + ", expected [Bx" + std::to_string(in_) + "]");
        if (st.h.shape() != Shape{xs[0], hidden_} || st.c.shape() != Shape{xs[0], hidden_})
            throw DimensionError("lstm " + Wx_.name + ": state " + shape_str(st.h.shape()) + " does not match hidden size " +
                                 std::to_string(hidden_));
        const std::size_t H = hidden_;
        Var gates = add(add(matmul(x, tape.param(Wx_)), matmul(st.h, tape.param(Wh_))), tape.param(b_));
        Var i = sigmoid(slice(gates, 1, 0, H));
        Var f = sigmoid(slice(gates, 1, H, 2 * H));
        Var o = sigmoid(slice(gates, 1, 2 * H, 3 * H));
        Var g = nmsg::tanh(slice(gates, 1, 3 * H, 4 * H));
        Var c = add(mul(f, st.c), mul(i, g));
        Var h = mul(o, nmsg::tanh(c));
        return {h, c};
    }

    void collect(ParamRegistry& reg, Group g)
    {
        reg.add(g, Wx_, InitKind::Uniform, in_);
        reg.add(g, Wh_, InitKind::Uniform, hidden_);
        reg.add(g, b_, InitKind::LstmBias, 1, hidden_);
    }

    Parameter& input_weights() { return Wx_; }
    Parameter& recurrent_weights() { return Wh_; }
    Parameter& bias() { return b_; }
    std::size_t in_size() const { return in_; }
    std::size_t hidden_size() const { return hidden_; }

private:
    std::size_t in_ = 0, hidden_ = 0;
    Parameter Wx_, Wh_, b_;
};

/// Returns (y, state') with y = h'.
inline std::pair<Var, LstmState> lstm_step(Tape& tape, LstmCell& cell, Var x, const LstmState& st)
{
    LstmState next = cell.step(tape, x, st);
    return {next.h, next};
}

struct ConvEncoderConfig {
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t channels = 1;
    std::size_t filters = 8;
    std::size_t stages = 3;
};

/// Stages of conv3x3 -> batch norm -> relu -> maxpool2x2, flattened.
class ConvEncoder {
public:
    ConvEncoder() = default;
    explicit ConvEncoder(const ConvEncoderConfig& cfg) : cfg_(cfg)
    {
        std::size_t h = cfg.height, w = cfg.width, c = cfg.channels;
        if (cfg.stages == 0 || cfg.filters == 0 || c == 0) throw ConfigError("conv encoder: stages, filters and channels must be positive");
        for (std::size_t s = 0; s < cfg.stages; ++s) {
            if (h < 2 || w < 2)
                throw ConfigError("conv encoder: stage " + std::to_string(s + 1) + " input " + std::to_string(h) + "x" +
                                  std::to_string(w) + " is too small for 2x2 pooling");
            const std::string p = "conv" + std::to_string(s + 1);
            Stage st;
            st.filter = Parameter(p + ".filter", Tensor({3, 3, c, cfg.filters}));
            st.bias = Parameter(p + ".bias", Tensor({1, 1, 1, cfg.filters}));
            st.gamma = Parameter(p + ".bn_gamma", Tensor({cfg.filters}, 1.0));
            st.beta = Parameter(p + ".bn_beta", Tensor({cfg.filters}));
            st.stats.mean = Tensor({cfg.filters});
            st.stats.var = Tensor({cfg.filters}, 1.0);
            st.in_channels = c;
            stages_.push_back(std::move(st));
            h /= 2;
            w /= 2;
            c = cfg.filters;
        }
        out_h_ = h;
        out_w_ = w;
    }

    std::size_t feature_size() const { return out_h_ * out_w_ * cfg_.filters; }
    std::size_t out_height() const { return out_h_; }
    std::size_t out_width() const { return out_w_; }
    const ConvEncoderConfig& config() const { return cfg_; }

    /// images: [B,H,W,C] -> [B, feature_size()]
    Var forward(Tape& tape, Var images, bool training)
    {
        const Shape& s = images.shape();
        if (s.size() == 3) images = reshape(images, {1, s[0], s[1], s[2]});
        const Shape& is = images.shape();
        if (is.size() != 4 || is[1] != cfg_.height || is[2] != cfg_.width || is[3] != cfg_.channels)
            throw DimensionError("conv encoder: input " + shape_str(is) + ", expected [B," + std::to_string(cfg_.height) +
                                 "," + std::to_string(cfg_.width) + "," + std::to_string(cfg_.channels) + "]");
        const std::size_t B = is[0];
        Var x = images;
        for (auto& st : stages_) {
            x = add(conv2d(x, tape.param(st.filter)), tape.param(st.bias));
            x = batch_norm(x, tape.param(st.gamma), tape.param(st.beta), st.stats, training);
            x = maxpool2x2(relu(x));
        }
        return reshape(x, {B, feature_size()});
    }

    void collect(ParamRegistry& reg, Group g)
    {
        for (auto& st : stages_) {
            reg.add(g, st.filter, InitKind::Uniform, 9 * st.in_channels);
            reg.add(g, st.bias, InitKind::Zeros);
            reg.add(g, st.gamma, InitKind::Ones);
            reg.add(g, st.beta, InitKind::Zeros);
        }
    }

    /// Non-trainable running statistics, for checkpoints.
    std::vector<std::pair<std::string, Tensor*>> buffers()
    {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (std::size_t i = 0; i < stages_.size(); ++i) {
            const std::string p = "conv" + std::to_string(i + 1);
            out.emplace_back(p + ".bn_running_mean", &stages_[i].stats.mean);
            out.emplace_back(p + ".bn_running_var", &stages_[i].stats.var);
        }
        return out;
    }

private:
    struct Stage {
        Parameter filter, bias, gamma, beta;
        BatchNormStats stats;
        std::size_t in_channels = 1;
    };

    ConvEncoderConfig cfg_;
    std::vector<Stage> stages_;
    std::size_t out_h_ = 0, out_w_ = 0;
};

inline Var conv_encoder_forward(Tape& tape, ConvEncoder& enc, Var img, bool training = true)
{
    return enc.forward(tape, img, training);
}

/// Unrolls an LSTM over [B,T,D] sequences; the final hidden state is the feature.
class SequenceEncoder {
public:
    SequenceEncoder() = default;
    SequenceEncoder(std::size_t input, std::size_t hidden) : cell_("seq_lstm", input, hidden) {}

    std::size_t feature_size() const { return cell_.hidden_size(); }
    std::size_t input_size() const { return cell_.in_size(); }

    Var forward(Tape& tape, const Tensor& seqs)
    {
        if (seqs.rank() != 3 || seqs.dim(2) != cell_.in_size())
            throw DimensionError("sequence encoder: input " + shape_str(seqs.shape()) + ", expected [B,T," +
                                 std::to_string(cell_.in_size()) + "]");
        const std::size_t B = seqs.dim(0), T = seqs.dim(1), D = seqs.dim(2);
        LstmState st = cell_.zero_state(tape, B);
        for (std::size_t t = 0; t < T; ++t) {
            Tensor xt({B, D});
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t d = 0; d < D; ++d) xt[b * D + d] = seqs[(b * T + t) * D + d];
            st = cell_.step(tape, tape.constant(std::move(xt)), st);
        }
        return st.h;
    }

    /// Same computation with the sequences as a tape node, so inputs can receive gradients.
    Var forward(Tape& tape, Var seqs)
    {
        const Shape s = seqs.shape();
        if (s.size() != 3 || s[2] != cell_.in_size())
            throw DimensionError("sequence encoder: input " + shape_str(s) + ", expected [B,T," +
                                 std::to_string(cell_.in_size()) + "]");
        Var flat = reshape(seqs, {s[0], s[1] * s[2]});
        LstmState st = cell_.zero_state(tape, s[0]);
        for (std::size_t t = 0; t < s[1]; ++t) st = cell_.step(tape, slice(flat, 1, t * s[2], (t + 1) * s[2]), st);
        return st.h;
    }

    void collect(ParamRegistry& reg, Group g) { cell_.collect(reg, g); }
    LstmCell& cell() { return cell_; }

private:
    LstmCell cell_;
};

} // namespace nmsg

#endif
