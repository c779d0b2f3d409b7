#ifndef NMSG_EPISODE_HPP
#define NMSG_EPISODE_HPP

#include <span>
#include <vector>

#include "nmsg/data/images.hpp"
#include "nmsg/rng.hpp"
#include "nmsg/training.hpp"

namespace nmsg {

struct EpisodeItem {
    Tensor image;
    std::size_t label = 0;     // episode label in [0, N)
    std::size_t sample_id = 0; // index into the source dataset
};

/// N-way S-shot task. `classes[j]` is the dataset class behind episode label j.
struct Episode {
    std::vector<EpisodeItem> support;
    std::vector<EpisodeItem> query;
    std::vector<std::size_t> classes;
};

/// Draws N of `allowed` classes without replacement, S support and `query_per_class`
/// query samples per class (disjoint), and rotates every image by a random multiple of 90 degrees.
inline Episode sample_episode(const ImageDataset& ds, std::span<const std::size_t> allowed, std::size_t N, std::size_t S,
                              std::size_t query_per_class, Rng& rng, bool augment = true)
{
    if (N == 0 || S == 0) throw ConfigError("episode: N and S must be positive");
    std::vector<std::size_t> pool;
    for (std::size_t c : allowed)
        if (c < ds.class_index.size() && ds.class_index[c].size() >= S + query_per_class) pool.push_back(c);
    if (pool.size() < N)
        throw DataError("episode: need " + std::to_string(N) + " classes with at least " + std::to_string(S + query_per_class) +
                        " samples, found " + std::to_string(pool.size()));
    rng.shuffle(pool);
    Episode ep;
    ep.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(N));
    auto item = [&](std::size_t id, std::size_t label) {
        Tensor img = augment ? rot90(ds.images[id], static_cast<unsigned>(rng.index(4))) : ds.images[id];
        return EpisodeItem{std::move(img), label, id};
    };
    for (std::size_t j = 0; j < N; ++j) {
        std::vector<std::size_t> members = ds.class_index[ep.classes[j]];
        rng.shuffle(members);
        for (std::size_t s = 0; s < S; ++s) ep.support.push_back(item(members[s], j));
        for (std::size_t q = 0; q < query_per_class; ++q) ep.query.push_back(item(members[S + q], j));
    }
    rng.shuffle(ep.support);
    rng.shuffle(ep.query);
    return ep;
}

inline Tensor one_hot(std::size_t label, std::size_t n)
{
    if (label >= n) throw DimensionError("one_hot: label " + std::to_string(label) + " out of range " + std::to_string(n));
    Tensor t({1, n});
    t[label] = 1.0;
    return t;
}

/// Support steps carry their one-hot label as side input and are not scored; query
/// steps get a zero side input and are scored.
inline Sequence episode_sequence(const Episode& ep)
{
    const std::size_t n = ep.classes.size();
    Sequence seq;
    for (const auto& it : ep.support) seq.push_back({it.image, one_hot(it.label, n), one_hot(it.label, n), false});
    for (const auto& it : ep.query) seq.push_back({it.image, one_hot(it.label, n), Tensor({1, n}), true});
    return seq;
}

} // namespace nmsg

#endif
