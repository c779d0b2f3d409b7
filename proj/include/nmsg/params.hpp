#ifndef NMSG_PARAMS_HPP
#define NMSG_PARAMS_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "nmsg/errors.hpp"
#include "nmsg/parameter.hpp"
#include "nmsg/rng.hpp"

namespace nmsg {

/// The eight sub-models every trainable tensor belongs to.
enum class Group : std::uint8_t { Encoder, IC, OC, WC, Decoder, SgIC, SgOC, SgWC };

inline constexpr std::array<Group, 8> all_groups{Group::Encoder, Group::IC,   Group::OC,   Group::WC,
                                                 Group::Decoder, Group::SgIC, Group::SgOC, Group::SgWC};

inline std::string_view group_name(Group g)
{
    switch (g) {
    case Group::Encoder: return "encoder";
    case Group::IC: return "IC";
    case Group::OC: return "OC";
    case Group::WC: return "WC";
    case Group::Decoder: return "decoder";
    case Group::SgIC: return "SG-IC";
    case Group::SgOC: return "SG-OC";
    case Group::SgWC: return "SG-WC";
    }
    return "?";
}

inline bool is_sg_group(Group g) { return g == Group::SgIC || g == Group::SgOC || g == Group::SgWC; }

enum class InitKind : std::uint8_t {
    Uniform,   // U[-s, s], s = 1/sqrt(fan_in)
    Zeros,
    Ones,
    LstmBias,  // zeros except the forget-gate block, which is 1
};

struct ParamEntry {
    Group group;
    std::string name; // "<group>/<local name>"
    Parameter* param;
    InitKind init = InitKind::Uniform;
    std::size_t fan_in = 1;
    std::size_t hidden = 0; // LstmBias only
};

/// Flat view over a model's parameters, grouped by sub-model.
class ParamRegistry {
public:
    void add(Group g, Parameter& p, InitKind init, std::size_t fan_in = 1, std::size_t hidden = 0)
    {
        std::string full = std::string(group_name(g)) + "/" + p.name;
        if (!names_.insert(full).second) throw ConfigError("duplicate parameter name '" + full + "'");
        if (!ptrs_.insert(&p).second) throw ConfigError("parameter '" + full + "' registered twice");
        entries_.push_back({g, std::move(full), &p, init, fan_in, hidden});
    }

    const std::vector<ParamEntry>& entries() const noexcept { return entries_; }

    std::vector<Parameter*> group(Group g) const
    {
        std::vector<Parameter*> out;
        for (const auto& e : entries_)
            if (e.group == g) out.push_back(e.param);
        return out;
    }

    std::vector<Parameter*> all() const
    {
        std::vector<Parameter*> out;
        for (const auto& e : entries_) out.push_back(e.param);
        return out;
    }

    const ParamEntry* find(std::string_view full_name) const
    {
        for (const auto& e : entries_)
            if (e.name == full_name) return &e;
        return nullptr;
    }

    bool contains(const Parameter* p) const { return ptrs_.count(p) != 0; }

    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<ParamEntry> entries_;
    std::unordered_set<std::string> names_;
    std::unordered_set<const Parameter*> ptrs_;
};

/// Deterministic initialization. Each group draws from its own stream derived from
/// `seed`, so adding or removing one sub-model never perturbs the others.
inline void init_params(const ParamRegistry& registry, std::uint64_t seed)
{
    std::array<Rng, all_groups.size()> streams{
        Rng(derive_seed(seed, 0)), Rng(derive_seed(seed, 1)), Rng(derive_seed(seed, 2)), Rng(derive_seed(seed, 3)),
        Rng(derive_seed(seed, 4)), Rng(derive_seed(seed, 5)), Rng(derive_seed(seed, 6)), Rng(derive_seed(seed, 7))};
    for (const auto& e : registry.entries()) {
        Rng& rng = streams[static_cast<std::size_t>(e.group)];
        Tensor& v = e.param->value;
        switch (e.init) {
        case InitKind::Uniform: {
            const double s = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
            for (double& x : v.values()) x = rng.uniform(-s, s);
            break;
        }
        case InitKind::Zeros: v.fill(0.0); break;
        case InitKind::Ones: v.fill(1.0); break;
        case InitKind::LstmBias:
            v.fill(0.0);
            for (std::size_t i = e.hidden; i < 2 * e.hidden && i < v.size(); ++i) v[i] = 1.0;
            break;
        }
    }
}

} // namespace nmsg

#endif
