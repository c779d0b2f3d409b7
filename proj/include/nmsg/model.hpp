#ifndef NMSG_MODEL_HPP
#define NMSG_MODEL_HPP

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmsg/checkpoint.hpp"
#include "nmsg/memory.hpp"
#include "nmsg/synthgrad.hpp"

namespace nmsg {

enum class EncoderKind { Conv, Sequence, Identity };

/// Task head of the decoder.
enum class Head { Classification, RegressionRelu, RegressionIdentity };

struct ModelConfig {
    EncoderKind encoder = EncoderKind::Conv;
    ConvEncoderConfig conv;
    std::size_t seq_input = 2;
    std::size_t seq_hidden = 30;
    std::size_t input_dim = 0; // identity encoder only
    std::size_t aux_dim = 0;   // side input appended to the encoded feature (e.g. episode labels)
    std::size_t slots = 10;
    std::size_t width = 32;
    Head head = Head::Classification;
    std::size_t output_dim = 10;
    std::size_t sg_hidden = 16;
    double memory_init = 0.1;

    void validate() const
    {
        if (slots == 0 || width == 0 || output_dim == 0 || sg_hidden == 0)
            throw ConfigError("model: slots, width, output size and sg hidden size must be positive");
        if (encoder == EncoderKind::Identity && input_dim == 0) throw ConfigError("model: identity encoder needs input_dim");
        if (encoder == EncoderKind::Sequence && (seq_input == 0 || seq_hidden == 0))
            throw ConfigError("model: sequence encoder needs positive input and hidden sizes");
    }
};

/// Encoder, three memory controllers, decoder, initial memory and a (possibly shared)
/// bundle of synthetic-gradient predictors.
class MemoryNetwork {
public:
    MemoryNetwork(const ModelConfig& cfg, std::uint64_t seed, const OptimizerConfig& sg_opt = {})
        : cfg_(cfg)
    {
        cfg.validate();
        std::size_t feat = 0;
        switch (cfg.encoder) {
        case EncoderKind::Conv:
            conv_ = ConvEncoder(cfg.conv);
            feat = conv_.feature_size();
            break;
        case EncoderKind::Sequence:
            seq_ = SequenceEncoder(cfg.seq_input, cfg.seq_hidden);
            feat = seq_.feature_size();
            break;
        case EncoderKind::Identity: feat = cfg.input_dim; break;
        }
        encoded_size_ = feat;
        ic_ = LstmCell("ic", feat + cfg.aux_dim, cfg.width);
        oc_ = LstmCell("oc", cfg.width, cfg.width);
        wc_ = LstmCell("wc", cfg.width, cfg.width);
        const Activation act = cfg.head == Head::Classification ? Activation::Softmax
                               : cfg.head == Head::RegressionRelu ? Activation::Relu
                                                                  : Activation::Identity;
        decoder_ = Dense("decoder", cfg.width, cfg.output_dim, act);
        init_params(task_registry(), seed);

        Rng mem_rng(derive_seed(seed, 100));
        M0_ = Tensor({cfg.slots, cfg.width});
        for (double& v : M0_.values()) v = mem_rng.uniform(-cfg.memory_init, cfg.memory_init);

        sg_ = std::make_shared<SGBundle>(cfg.width, cfg.output_dim, cfg.sg_hidden, sg_opt, derive_seed(seed, 200));
    }

    MemoryNetwork(const MemoryNetwork&) = delete;
    MemoryNetwork& operator=(const MemoryNetwork&) = delete;

    const ModelConfig& config() const { return cfg_; }
    std::size_t feature_size() const { return encoded_size_ + cfg_.aux_dim; }
    std::size_t encoded_size() const { return encoded_size_; }
    const Tensor& initial_memory() const { return M0_; }

    LstmCell& input_controller() { return ic_; }
    LstmCell& output_controller() { return oc_; }
    LstmCell& write_controller() { return wc_; }
    Dense& decoder() { return decoder_; }
    ConvEncoder& conv_encoder() { return conv_; }
    SequenceEncoder& sequence_encoder() { return seq_; }

    SGBundle& sg() { return *sg_; }
    const std::shared_ptr<SGBundle>& sg_handle() const { return sg_; }
    void set_sg(std::shared_ptr<SGBundle> b)
    {
        if (!b || b->ctrl_size() != cfg_.width || b->target_size() != cfg_.output_dim)
            throw ConfigError("model: predictor bundle sizes do not match the model");
        sg_ = std::move(b);
    }

    /// Encoder, controllers and decoder.
    ParamRegistry task_registry()
    {
        ParamRegistry reg;
        if (cfg_.encoder == EncoderKind::Conv) conv_.collect(reg, Group::Encoder);
        if (cfg_.encoder == EncoderKind::Sequence) seq_.collect(reg, Group::Encoder);
        ic_.collect(reg, Group::IC);
        oc_.collect(reg, Group::OC);
        wc_.collect(reg, Group::WC);
        decoder_.collect(reg, Group::Decoder);
        return reg;
    }

    /// All eight sub-models.
    ParamRegistry registry()
    {
        ParamRegistry reg = task_registry();
        sg_->collect(reg);
        return reg;
    }

    /// Raw inputs -> [B x encoded_size()].
    Var encode(Tape& tape, std::span<const Tensor* const> raw, bool training)
    {
        if (raw.empty()) throw DimensionError("encode: empty batch");
        const Shape& s0 = raw[0]->shape();
        std::vector<double> buf;
        buf.reserve(raw.size() * raw[0]->size());
        for (const Tensor* r : raw) {
            if (r->shape() != s0) throw DimensionError("encode: mixed input shapes " + shape_str(s0) + " and " + shape_str(r->shape()));
            buf.insert(buf.end(), r->values().begin(), r->values().end());
        }
        Shape bs{raw.size()};
        bs.insert(bs.end(), s0.begin(), s0.end());
        Tensor batch(bs, std::move(buf));
        switch (cfg_.encoder) {
        case EncoderKind::Conv: return conv_.forward(tape, tape.constant(std::move(batch)), training);
        case EncoderKind::Sequence: return seq_.forward(tape, batch);
        case EncoderKind::Identity: break;
        }
        if (batch.size() != raw.size() * cfg_.input_dim)
            throw DimensionError("encode: input " + shape_str(s0) + " does not have " + std::to_string(cfg_.input_dim) + " values");
        return tape.constant(batch.reshaped({raw.size(), cfg_.input_dim}));
    }

    /// Fresh controller states over the initial memory (or `memory`, when given).
    /// With `track_memory` the memory enters as a differentiable leaf.
    MemoryState initial_state(Tape& tape, const Tensor* memory = nullptr, bool track_memory = false)
    {
        const Tensor& M = memory ? *memory : M0_;
        if (M.shape() != Shape{cfg_.slots, cfg_.width})
            throw DimensionError("memory: state " + shape_str(M.shape()) + " does not match " + std::to_string(cfg_.slots) +
                                 "x" + std::to_string(cfg_.width));
        MemoryState st;
        st.M = track_memory ? tape.leaf(M) : tape.constant(M);
        st.ic = ic_.zero_state(tape);
        st.oc = oc_.zero_state(tape);
        st.wc = wc_.zero_state(tape);
        return st;
    }

    /// Query, attend, retrieve, write and decode for one encoded input row.
    StepTrace core_step(Tape& tape, Var x, MemoryState& state, const Tensor* aux = nullptr)
    {
        if (cfg_.aux_dim > 0) {
            Tensor a({1, cfg_.aux_dim});
            if (aux) {
                if (aux->size() != cfg_.aux_dim)
                    throw DimensionError("memory step: side input " + shape_str(aux->shape()) + ", expected " + std::to_string(cfg_.aux_dim));
                std::copy(aux->values().begin(), aux->values().end(), a.data());
            }
            x = concat({x, tape.constant(std::move(a))}, 1);
        }
        StepTrace tr;
        tr.x = x;
        tr.q = read_query(tape, ic_, x, state.ic);
        tr.z = attend(tr.q, state.M);
        std::tie(tr.mbar, tr.m) = retrieve(tape, oc_, tr.z, state.M, state.oc);
        std::tie(tr.mprime, state.M) = write(tape, wc_, tr.m, tr.z, state.M, state.wc);
        tr.yhat = decode(tape, decoder_, tr.m);
        return tr;
    }

    /// Encode a single raw input and run one memory step.
    StepTrace memory_step(Tape& tape, const Tensor& chi, MemoryState& state, bool training = true, const Tensor* aux = nullptr)
    {
        const Tensor* one[] = {&chi};
        Var x = encode(tape, one, training);
        return core_step(tape, x, state, aux);
    }

    /// Parameters, batch-norm buffers, the initial memory and optionally a memory snapshot.
    std::vector<NamedTensor> checkpoint(const Tensor* memory = nullptr)
    {
        std::vector<NamedTensor> out = snapshot(registry());
        if (cfg_.encoder == EncoderKind::Conv)
            for (auto& [name, t] : conv_.buffers()) out.push_back({"encoder/" + name, *t});
        out.push_back({"memory/M0", M0_});
        if (memory) out.push_back({"memory/M", *memory});
        return out;
    }

    void load(const std::vector<NamedTensor>& items)
    {
        restore(registry(), items);
        auto find = [&](const std::string& n) -> const Tensor* {
            for (const auto& it : items)
                if (it.name == n) return &it.value;
            return nullptr;
        };
        if (cfg_.encoder == EncoderKind::Conv)
            for (auto& [name, t] : conv_.buffers())
                if (const Tensor* v = find("encoder/" + name)) *t = *v;
        if (const Tensor* m = find("memory/M0")) {
            if (m->shape() != M0_.shape()) throw DimensionError("checkpoint: memory/M0 has shape " + shape_str(m->shape()));
            M0_ = *m;
        }
    }

private:
    ModelConfig cfg_;
    std::size_t encoded_size_ = 0;
    ConvEncoder conv_;
    SequenceEncoder seq_;
    LstmCell ic_, oc_, wc_;
    Dense decoder_;
    Tensor M0_;
    std::shared_ptr<SGBundle> sg_;
};

/// Point every model at one predictor bundle.
inline void share_bundle(std::span<MemoryNetwork* const> models, const std::shared_ptr<SGBundle>& bundle)
{
    if (!bundle) throw ConfigError("share: null bundle");
    for (MemoryNetwork* m : models)
        if (m->config().width != bundle->ctrl_size() || m->config().output_dim != bundle->target_size())
            throw ConfigError("share: model with width " + std::to_string(m->config().width) + " and output size " +
                              std::to_string(m->config().output_dim) + " cannot use a bundle sized " +
                              std::to_string(bundle->ctrl_size()) + "/" + std::to_string(bundle->target_size()));
    for (MemoryNetwork* m : models) m->set_sg(bundle);
}

/// Give a model its own copy of whatever bundle it currently references.
inline void unshare_bundle(MemoryNetwork& model) { model.set_sg(model.sg().clone()); }

} // namespace nmsg

#endif
