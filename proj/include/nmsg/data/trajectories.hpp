#ifndef NMSG_DATA_TRAJECTORIES_HPP
#define NMSG_DATA_TRAJECTORIES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "nmsg/errors.hpp"
#include "nmsg/rng.hpp"
#include "nmsg/tensor.hpp"

namespace nmsg {

enum class AgentClass { Cyclist, Pedestrian, Other };

inline AgentClass parse_agent_class(const std::string& s)
{
    if (s == "cyclist" || s == "bicycle") return AgentClass::Cyclist;
    if (s == "pedestrian") return AgentClass::Pedestrian;
    return AgentClass::Other;
}

inline const char* agent_class_name(AgentClass c)
{
    switch (c) {
    case AgentClass::Cyclist: return "cyclist";
    case AgentClass::Pedestrian: return "pedestrian";
    case AgentClass::Other: return "other";
    }
    return "other";
}

struct TrajectoryRow {
    std::string track_id;
    long frame = 0;
    std::string agent_class;
    double x = 0.0, y = 0.0;
};

/// Per-scene affine map of each axis from [min, max] onto [-0.5, 0.5].
struct Normalization {
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;

    static double fwd(double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) - 0.5 : 0.0; }
    static double inv(double v, double lo, double hi) { return hi > lo ? (v + 0.5) * (hi - lo) + lo : lo; }

    std::array<double, 2> normalize(double x, double y) const { return {fwd(x, xmin, xmax), fwd(y, ymin, ymax)}; }
    std::array<double, 2> denormalize(double x, double y) const { return {inv(x, xmin, xmax), inv(y, ymin, ymax)}; }
};

struct Track {
    std::string id;
    AgentClass cls = AgentClass::Other;
    std::vector<long> frames;
    std::vector<std::array<double, 2>> points; // normalized
};

struct TrajectoryDataset {
    std::vector<Track> tracks;
    Normalization norm;
};

/// Groups rows by track id (first-appearance order) and normalizes the whole scene.
inline TrajectoryDataset build_trajectories(const std::vector<TrajectoryRow>& rows)
{
    if (rows.empty()) throw DataError("trajectories: no rows");
    TrajectoryDataset ds;
    auto& n = ds.norm;
    n.xmin = n.xmax = rows[0].x;
    n.ymin = n.ymax = rows[0].y;
    for (const auto& r : rows) {
        n.xmin = std::min(n.xmin, r.x);
        n.xmax = std::max(n.xmax, r.x);
        n.ymin = std::min(n.ymin, r.y);
        n.ymax = std::max(n.ymax, r.y);
    }
    std::map<std::string, std::size_t> slot;
    for (const auto& r : rows) {
        auto [it, fresh] = slot.try_emplace(r.track_id, ds.tracks.size());
        if (fresh) ds.tracks.push_back({r.track_id, parse_agent_class(r.agent_class), {}, {}});
        Track& t = ds.tracks[it->second];
        if (!t.frames.empty() && r.frame <= t.frames.back())
            throw FormatError("trajectories: frames of track '" + r.track_id + "' are not increasing (frame " +
                              std::to_string(r.frame) + " after " + std::to_string(t.frames.back()) + ")");
        t.frames.push_back(r.frame);
        t.points.push_back(n.normalize(r.x, r.y));
    }
    return ds;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace detail

/// CSV with at least the columns track_id, frame, agent_class, x, y (any order).
inline TrajectoryDataset parse_trajectories(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) throw FormatError("trajectories: missing header");
    const auto head = detail::split_csv(line);
    const char* need[] = {"track_id", "frame", "agent_class", "x", "y"};
    std::array<std::size_t, 5> col{};
    for (int k = 0; k < 5; ++k) {
        auto it = std::find(head.begin(), head.end(), need[k]);
        if (it == head.end()) throw FormatError(std::string("trajectories: missing column '") + need[k] + "'");
        col[k] = static_cast<std::size_t>(it - head.begin());
    }
    std::vector<TrajectoryRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv(line);
        if (f.size() < head.size())
            throw FormatError("trajectories: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        TrajectoryRow r;
        r.track_id = f[col[0]];
        try {
            std::size_t used = 0;
            r.frame = std::stol(f[col[1]], &used);
            r.x = std::stod(f[col[3]]);
            r.y = std::stod(f[col[4]]);
        } catch (const std::exception&) {
            throw FormatError("trajectories: bad number on line " + std::to_string(lineno) + " (track '" + r.track_id + "')");
        }
        if (!std::isfinite(r.x) || !std::isfinite(r.y))
            throw FormatError("trajectories: non-finite coordinate on line " + std::to_string(lineno) + " (track '" + r.track_id + "')");
        r.agent_class = f[col[2]];
        rows.push_back(std::move(r));
    }
    return build_trajectories(rows);
}

inline TrajectoryDataset load_trajectories(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("trajectories: cannot open '" + path + "'");
    return parse_trajectories(in);
}

inline void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows)
{
    out << "track_id,frame,agent_class,x,y\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.track_id << ',' << r.frame << ',' << r.agent_class << ',';
        std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.x, r.y);
        out << buf << '\n';
    }
}

/// Observed [obs, 2] input and flattened [1, 2*fut] target.
struct TrajWindow {
    Tensor input;
    Tensor target;
    AgentClass cls = AgentClass::Other;
};

struct WindowSet {
    std::vector<TrajWindow> windows;
    std::size_t skipped = 0;
};

/// Cuts obs+fut windows from each track. `stride` 0 means obs+fut (non-overlapping).
/// Tracks shorter than one window are skipped and counted.
inline WindowSet window_tracks(const TrajectoryDataset& ds, std::size_t obs = 50, std::size_t fut = 50, std::size_t stride = 0)
{
    if (obs == 0 || fut == 0) throw ConfigError("window: obs and fut must be positive");
    const std::size_t len = obs + fut;
    if (stride == 0) stride = len;
    WindowSet out;
    for (const Track& t : ds.tracks) {
        if (t.points.size() < len) {
            ++out.skipped;
            continue;
        }
        for (std::size_t s = 0; s + len <= t.points.size(); s += stride) {
            TrajWindow w;
            w.cls = t.cls;
            w.input = Tensor({obs, 2});
            w.target = Tensor({1, 2 * fut});
            for (std::size_t k = 0; k < obs; ++k) {
                w.input[2 * k] = t.points[s + k][0];
                w.input[2 * k + 1] = t.points[s + k][1];
            }
            for (std::size_t k = 0; k < fut; ++k) {
                w.target[2 * k] = t.points[s + obs + k][0];
                w.target[2 * k + 1] = t.points[s + obs + k][1];
            }
            out.windows.push_back(std::move(w));
        }
    }
    return out;
}

struct SynthTrajectoryConfig {
    std::size_t cyclists = 40;
    std::size_t pedestrians = 40;
    std::size_t length = 100;
    double scene = 100.0; // side of the square scene, metres
};

/// Two motion families in one scene: smooth constant-curvature arcs (cyclists) and
/// slow piecewise paths with heading changes and per-frame jitter (pedestrians).
inline std::vector<TrajectoryRow> synth_trajectories(const SynthTrajectoryConfig& cfg, std::uint64_t seed)
{
    std::vector<TrajectoryRow> rows;
    Rng rng(derive_seed(seed, 0x7472616aULL));
    const double pi = std::numbers::pi;
    auto emit = [&](const std::string& id, const char* cls, double x, double y, std::size_t f) {
        rows.push_back({id, static_cast<long>(f), cls, x, y});
    };
    for (std::size_t i = 0; i < cfg.cyclists; ++i) {
        double x = rng.uniform(0.2, 0.8) * cfg.scene, y = rng.uniform(0.2, 0.8) * cfg.scene;
        double h = rng.uniform(0, 2 * pi);
        const double v = rng.uniform(0.25, 0.45);
        const double k = rng.uniform(-0.02, 0.02);
        const std::string id = "c" + std::to_string(i);
        for (std::size_t f = 0; f < cfg.length; ++f) {
            emit(id, "cyclist", x, y, f);
            x += v * std::cos(h);
            y += v * std::sin(h);
            h += k;
        }
    }
    for (std::size_t i = 0; i < cfg.pedestrians; ++i) {
        double x = rng.uniform(0.3, 0.7) * cfg.scene, y = rng.uniform(0.3, 0.7) * cfg.scene;
        double h = rng.uniform(0, 2 * pi);
        double v = rng.uniform(0.08, 0.18);
        std::size_t next_turn = 10 + rng.index(16);
        const std::string id = "p" + std::to_string(i);
        for (std::size_t f = 0; f < cfg.length; ++f) {
            emit(id, "pedestrian", x, y, f);
            if (f == next_turn) {
                h += rng.uniform(-pi / 2, pi / 2);
                v = rng.uniform(0.08, 0.18);
                next_turn += 10 + rng.index(16);
            }
            x += v * std::cos(h) + 0.03 * rng.normal();
            y += v * std::sin(h) + 0.03 * rng.normal();
        }
    }
    return rows;
}

} // namespace nmsg

#endif
