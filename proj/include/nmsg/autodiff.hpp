#ifndef NMSG_AUTODIFF_HPP
#define NMSG_AUTODIFF_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nmsg/errors.hpp"
#include "nmsg/parameter.hpp"
#include "nmsg/tensor.hpp"

namespace nmsg {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; invalidated by Tape::clear().
class Var {
public:
    Var() = default;

    Tape& tape() const;
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id, std::uint64_t gen) : tape_(t), id_(id), generation_(gen) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
    std::uint64_t generation_ = 0;
};

/// Parameter gradients produced by a backward or injection pass.
struct GradientMap {
    std::unordered_map<const Parameter*, Tensor> params;

    bool contains(const Parameter& p) const { return params.count(&p) != 0; }

    const Tensor& at(const Parameter& p) const
    {
        auto it = params.find(&p);
        if (it == params.end()) throw ContractError("gradient map: no entry for parameter '" + p.name + "'");
        return it->second;
    }
};

/// Seed for an injection pass: an interior node and the gradient to start from.
struct GradientSeed {
    Var node;
    Tensor grad;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
/// every node's inputs precede it and a single reverse sweep is a valid backward pass.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;
    using ParamFilter = std::function<bool(const Parameter&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Node that never receives a gradient.
    Var constant(Tensor value) { return push(std::move(value), {}, nullptr, nullptr, false, "const"); }

    /// Free input that receives a gradient but is not a registered parameter.
    Var leaf(Tensor value) { return push(std::move(value), {}, nullptr, nullptr, true, "leaf"); }

    /// Leaf node bound to a parameter. Repeated calls return the same node so the
    /// gradient accumulates across every use within one pass.
    Var param(Parameter& p)
    {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return Var(this, it->second, generation_);
        Var v = push(p.value, {}, nullptr, &p, true, "param");
        param_nodes_.emplace(&p, v.id_);
        return v;
    }

    /// Append an operation node. `value` must be fully computed before the call.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op)
    {
        return record(std::move(value), std::vector<Var>(inputs), std::move(fn), op);
    }

    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn, const char* op)
    {
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        bool rg = false;
        for (const Var& v : inputs) {
            check(v);
            ids.push_back(v.id_);
            rg = rg || nodes_[v.id_].requires_grad;
        }
        if (!value.all_finite())
            throw NumericalError(std::string(op) + ": non-finite value produced");
        return push(std::move(value), std::move(ids), rg ? std::move(fn) : nullptr, nullptr, rg, op);
    }

    /// Flag a node as a gradient capture/injection point.
    void mark(Var v)
    {
        check(v);
        nodes_[v.id_].marked = true;
    }

    bool is_marked(Var v) const
    {
        check(v);
        return nodes_[v.id_].marked;
    }

    /// Full backward pass from a scalar loss.
    GradientMap backward(Var loss)
    {
        check(loss);
        const Node& n = nodes_[loss.id_];
        if (n.value.size() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(n.value.shape()));
        reset_grads();
        active_.assign(nodes_.size(), 0);
        for (std::size_t i = 0; i < nodes_.size(); ++i) active_[i] = nodes_[i].requires_grad ? 1 : 0;
        nodes_[loss.id_].grad = Tensor(n.value.shape(), 1.0);
        sweep(loss.id_);
        loss_pass_ = true;
        return collect();
    }

    /// True gradient at a marked node from the most recent backward(). Detached copy.
    Tensor capture_gradient(Var v) const
    {
        check(v);
        const Node& n = nodes_[v.id_];
        if (!n.marked) throw ContractError("capture_gradient: node " + std::to_string(v.id_) + " (" + n.op + ") was not marked");
        if (!loss_pass_) throw ContractError("capture_gradient: no backward pass has been run on this tape");
        return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
    }

    /// Backward pass seeded at interior nodes instead of a loss. Nodes recorded after the
    /// latest seed receive nothing. When `wrt` is given, propagation is restricted to the
    /// sub-graph that reaches a parameter accepted by the filter.
    GradientMap inject_gradient(std::span<const GradientSeed> seeds, const ParamFilter& wrt = {})
    {
        if (seeds.empty()) throw ContractError("inject_gradient: no seeds");
        std::size_t start = 0;
        for (const auto& s : seeds) {
            check(s.node);
            if (s.grad.shape() != nodes_[s.node.id_].value.shape())
                throw DimensionError("inject_gradient: seed " + shape_str(s.grad.shape()) + " vs node " +
                                     shape_str(nodes_[s.node.id_].value.shape()));
            start = std::max(start, s.node.id_);
        }
        reset_grads();
        active_.assign(nodes_.size(), 0);
        for (std::size_t i = 0; i <= start; ++i) {
            const Node& n = nodes_[i];
            if (!n.requires_grad) continue;
            if (!wrt) {
                active_[i] = 1;
            } else if (n.param) {
                active_[i] = wrt(*n.param) ? 1 : 0;
            } else {
                for (std::size_t in : n.inputs)
                    if (active_[in]) { active_[i] = 1; break; }
            }
        }
        for (const auto& s : seeds) {
            Tensor& g = grad_slot(s.node.id_);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i];
        }
        sweep(start);
        loss_pass_ = false;
        return collect(wrt);
    }

    GradientMap inject_gradient(Var node, const Tensor& g, const ParamFilter& wrt = {})
    {
        GradientSeed s{node, g};
        return inject_gradient(std::span<const GradientSeed>(&s, 1), wrt);
    }

    /// Gradient held at a node after the latest pass (zeros when it received none).
    Tensor grad(Var v) const
    {
        check(v);
        const Node& n = nodes_[v.id_];
        return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
    }

    void clear()
    {
        nodes_.clear();
        param_nodes_.clear();
        active_.clear();
        loss_pass_ = false;
        ++generation_;
    }

    std::size_t size() const noexcept { return nodes_.size(); }

    // ---- used by op implementations -------------------------------------------------

    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
    std::size_t input(std::size_t self, std::size_t k) const { return nodes_[self].inputs[k]; }

    /// Whether the current pass propagates into node `id`.
    bool wants_grad(std::size_t id) const { return active_[id] != 0; }

    /// Gradient accumulator of node `id`, zero-initialized on first touch.
    Tensor& grad_slot(std::size_t id)
    {
        Node& n = nodes_[id];
        if (n.grad.empty() && n.value.size() != 0) n.grad = Tensor(n.value.shape());
        return n.grad;
    }

    void check(const Var& v) const
    {
        if (v.tape_ != this) throw ContractError("variable belongs to a different tape");
        if (v.generation_ != generation_ || v.id_ >= nodes_.size())
            throw ContractError("stale variable: tape was cleared after it was recorded");
    }

private:
    friend class Var;

    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
        bool marked = false;
        const char* op = "";
    };

    Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, Parameter* p, bool rg, const char* op)
    {
        Node n;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
        n.param = p;
        n.requires_grad = rg;
        n.op = op;
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1, generation_);
    }

    void reset_grads()
    {
        for (auto& n : nodes_) n.grad = Tensor();
    }

    void sweep(std::size_t start)
    {
        for (std::size_t i = start + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!active_[i] || !n.backward || n.grad.empty()) continue;
            n.backward(*this, i);
        }
    }

    GradientMap collect(const ParamFilter& wrt = {}) const
    {
        GradientMap out;
        for (const auto& [p, id] : param_nodes_) {
            if (wrt && !wrt(*p)) continue;
            const Node& n = nodes_[id];
            out.params.emplace(p, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
        }
        return out;
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    std::vector<char> active_;
    bool loss_pass_ = false;
    std::uint64_t generation_ = 0;
};

inline Tape& Var::tape() const
{
    if (!tape_) throw ContractError("unbound variable");
    return *tape_;
}

inline const Tensor& Var::value() const
{
    tape().check(*this);
    return tape_->value_of(id_);
}

// Free-function spellings matching the public operation names.

inline GradientMap backward(Tape& tape, Var loss) { return tape.backward(loss); }

inline Tensor capture_gradient(const Tape& tape, Var node) { return tape.capture_gradient(node); }

inline GradientMap inject_gradient(Tape& tape, Var node, const Tensor& g, const Tape::ParamFilter& wrt = {})
{
    return tape.inject_gradient(node, g, wrt);
}

} // namespace nmsg

#endif
