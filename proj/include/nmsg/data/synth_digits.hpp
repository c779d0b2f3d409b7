#ifndef NMSG_DATA_SYNTH_DIGITS_HPP
#define NMSG_DATA_SYNTH_DIGITS_HPP

// Procedural 28x28 glyph classes. Each class is a fixed set of strokes (line
// segments and circular arcs) drawn from a stream keyed by the class id; samples
// apply seeded rotation, scale, translation, stroke-width and pixel noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "nmsg/data/images.hpp"
#include "nmsg/rng.hpp"

namespace nmsg {

namespace detail {

using Point = std::array<double, 2>;

/// Polyline strokes of one glyph class in a 28x28 frame.
inline std::vector<std::vector<Point>> glyph_template(std::size_t cls)
{
    Rng rng(derive_seed(0x6e6d7367ULL, cls));
    const std::size_t strokes = 3 + rng.index(2);
    std::vector<std::vector<Point>> out;
    for (std::size_t s = 0; s < strokes; ++s) {
        std::vector<Point> line;
        if (rng.uniform01() < 0.5) {
            const Point a{rng.uniform(6, 22), rng.uniform(6, 22)};
            Point b{rng.uniform(6, 22), rng.uniform(6, 22)};
            while (std::hypot(b[0] - a[0], b[1] - a[1]) < 7) b = {rng.uniform(6, 22), rng.uniform(6, 22)};
            line = {a, b};
        } else {
            const Point c{rng.uniform(10, 18), rng.uniform(10, 18)};
            const double r = rng.uniform(3.5, 7.5);
            const double a0 = rng.uniform(0, 2 * std::numbers::pi);
            const double span = rng.uniform(0.6, 1.8) * std::numbers::pi;
            for (int k = 0; k <= 12; ++k) {
                const double a = a0 + span * k / 12.0;
                line.push_back({c[0] + r * std::cos(a), c[1] + r * std::sin(a)});
            }
        }
        out.push_back(std::move(line));
    }
    return out;
}

inline double segment_distance(const Point& p, const Point& a, const Point& b)
{
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p[0] - a[0] - t * dx, p[1] - a[1] - t * dy);
}

inline Tensor render_glyph(const std::vector<std::vector<Point>>& strokes, Rng& rng)
{
    const double angle = rng.uniform(-12.0, 12.0) * std::numbers::pi / 180.0;
    const double scale = rng.uniform(0.9, 1.1);
    const double tx = rng.uniform(-2.0, 2.0), ty = rng.uniform(-2.0, 2.0);
    const double width = rng.uniform(1.5, 2.5);
    const double ca = std::cos(angle), sa = std::sin(angle);

    std::vector<std::vector<Point>> moved;
    for (const auto& s : strokes) {
        std::vector<Point> m;
        for (const Point& p : s) {
            const double x = (p[0] - 14.0) * scale, y = (p[1] - 14.0) * scale;
            m.push_back({14.0 + ca * x - sa * y + tx, 14.0 + sa * x + ca * y + ty});
        }
        moved.push_back(std::move(m));
    }

    Tensor img({28, 28, 1});
    for (std::size_t r = 0; r < 28; ++r)
        for (std::size_t c = 0; c < 28; ++c) {
            const Point p{c + 0.5, r + 0.5};
            double d = 1e9;
            for (const auto& s : moved)
                for (std::size_t k = 0; k + 1 < s.size(); ++k) d = std::min(d, segment_distance(p, s[k], s[k + 1]));
            const double ink = std::clamp(1.0 - (d - width / 2.0), 0.0, 1.0);
            img[r * 28 + c] = std::clamp(ink + 0.05 * rng.normal(), 0.0, 1.0);
        }
    return img;
}

} // namespace detail

/// `per_class` samples for each of `classes` glyph classes, deterministic in `seed`.
inline ImageDataset synth_digits(std::size_t classes, std::size_t per_class, std::uint64_t seed)
{
    ImageDataset ds;
    for (std::size_t c = 0; c < classes; ++c) {
        const auto strokes = detail::glyph_template(c);
        Rng rng(derive_seed(seed, c));
        for (std::size_t i = 0; i < per_class; ++i) ds.add(detail::render_glyph(strokes, rng), c);
    }
    ds.classes = classes;
    ds.build_index();
    return ds;
}

/// Accuracy of a nearest-class-mean classifier on raw pixels, fit on `train`.
inline double nearest_centroid_accuracy(const ImageDataset& train, const ImageDataset& test)
{
    if (train.classes == 0 || test.size() == 0) throw DataError("nearest centroid: empty dataset");
    const std::size_t d = train.images.front().size();
    std::vector<std::vector<double>> mu(train.classes, std::vector<double>(d, 0.0));
    for (std::size_t c = 0; c < train.classes; ++c) {
        for (std::size_t i : train.class_index[c])
            for (std::size_t p = 0; p < d; ++p) mu[c][p] += train.images[i][p];
        if (!train.class_index[c].empty())
            for (double& v : mu[c]) v /= static_cast<double>(train.class_index[c].size());
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t best = 0;
        double bd = 1e300;
        for (std::size_t c = 0; c < train.classes; ++c) {
            if (train.class_index[c].empty()) continue;
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                const double e = test.images[i][p] - mu[c][p];
                s += e * e;
            }
            if (s < bd) {
                bd = s;
                best = c;
            }
        }
        hit += best == test.labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

} // namespace nmsg

#endif
