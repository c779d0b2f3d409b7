#ifndef NMSG_CONFIG_HPP
#define NMSG_CONFIG_HPP

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "nmsg/data/trajectories.hpp"
#include "nmsg/training.hpp"

namespace nmsg {

enum class DataSource { Synthetic, Idx, Nmim, Csv };

struct DataConfig {
    DataSource source = DataSource::Synthetic;
    std::string images, labels, raw, trajectories;
    std::size_t synth_classes = 10;
    std::size_t synth_per_class = 60;
    std::uint64_t data_seed = 20240601;
    SynthTrajectoryConfig synth_traj;
};

struct FewshotConfig {
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t query_per_class = 0; // 0: 1 for one-shot, 5 otherwise
    std::size_t eval_episodes = 50;
    double train_fraction = 0.6;
    bool augment = true;

    std::size_t queries() const { return query_per_class ? query_per_class : (k_shot == 1 ? 1 : 5); }
};

struct RareConfig {
    std::size_t period = 50;
    std::size_t eval_every = 50;
    double train_fraction = 0.8;
};

struct TrajectoryConfig {
    std::size_t obs = 50;
    std::size_t fut = 50;
    std::size_t stride = 0;
    std::size_t pretrain_iterations = 100;
    std::size_t adapt_iterations = 50;
    std::size_t adapt_samples = 10;
};

struct ShareConfig {
    std::size_t period = 10;
    std::size_t feed_samples = 10;
};

struct ExperimentConfig {
    std::string task = "fewshot";
    std::vector<std::uint64_t> seeds{1};
    std::string out = "out";
    bool parallel = false;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    std::size_t iterations = 300;
    std::size_t batch_size = 10;
    FewshotConfig fewshot;
    RareConfig rare;
    TrajectoryConfig trajectory;
    ShareConfig share;
    std::optional<double> lr; // explicit [train] lr; otherwise the task family's default

    /// Sets the task and the settings that follow from it: encoder, head, output size
    /// and the default learning rate.
    void set_task(const std::string& t)
    {
        task = t;
        const bool regression = task == "trajectory" || task == "share-sg";
        train.opt.lr = lr ? *lr : (regression ? 1e-5 : 5e-6);
        if (regression) {
            model.encoder = EncoderKind::Sequence;
            if (model.head == Head::Classification) model.head = Head::RegressionRelu;
            model.seq_input = 2;
            model.output_dim = 2 * trajectory.fut;
        } else {
            model.encoder = EncoderKind::Conv;
            model.head = Head::Classification;
        }
    }

    /// Semantic checks, including that referenced data files exist.
    void validate() const
    {
        static const std::set<std::string> tasks{"fewshot", "trajectory", "rare-class", "share-sg", "gradcheck"};
        if (!tasks.count(task)) throw ConfigError("experiment.task: unknown task '" + task + "'");
        if (seeds.empty()) throw ConfigError("experiment.seeds: seed list is empty");
        if (task == "gradcheck") return;
        train.validate();
        if (iterations == 0 || batch_size == 0) throw ConfigError("train: iterations and batch_size must be positive");
        if (model.slots == 0 || model.width == 0) throw ConfigError("model: slots and width must be positive");
        auto need = [](const std::string& key, const std::string& path) {
            if (path.empty()) throw ConfigError("data." + key + " is required for this source");
            if (!std::filesystem::exists(path)) throw DataError("data." + key + ": file not found: " + path);
        };
        const bool images = task == "fewshot" || task == "rare-class";
        switch (data.source) {
        case DataSource::Synthetic: break;
        case DataSource::Idx:
            if (!images) throw ConfigError("data.source = idx needs an image task");
            need("images", data.images);
            need("labels", data.labels);
            break;
        case DataSource::Nmim:
            if (!images) throw ConfigError("data.source = nmim needs an image task");
            need("raw", data.raw);
            break;
        case DataSource::Csv:
            if (images) throw ConfigError("data.source = csv needs a trajectory task");
            need("trajectories", data.trajectories);
            break;
        }
        if (task == "fewshot") {
            if (fewshot.n_way < 2 || fewshot.k_shot == 0) throw ConfigError("fewshot: n_way >= 2 and k_shot >= 1 required");
            if (!(fewshot.train_fraction > 0 && fewshot.train_fraction < 1))
                throw ConfigError("fewshot.train_fraction must lie in (0, 1)");
        }
        if (task == "rare-class") {
            if (rare.period == 0 || rare.eval_every == 0) throw ConfigError("rare: period and eval_every must be positive");
            if (!(rare.train_fraction > 0 && rare.train_fraction < 1))
                throw ConfigError("rare.train_fraction must lie in (0, 1)");
        }
        if (task == "share-sg" && (share.period == 0 || share.feed_samples == 0))
            throw ConfigError("share: period and feed_samples must be positive");
        if ((task == "trajectory" || task == "share-sg") && (trajectory.obs == 0 || trajectory.fut == 0))
            throw ConfigError("trajectory: obs and fut must be positive");
    }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text)
{
    T v{};
    const char* b = text.data();
    const char* e = b + text.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::string trim(std::string s)
{
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

} // namespace detail

/// Parses INI text. Every key must be known; sections are [experiment], [data],
/// [model], [train], [fewshot], [rare], [trajectory] and [share].
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>")
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }

    ExperimentConfig c;
    std::optional<double>& lr = c.lr;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto sz = [](std::size_t& f) -> Setter {
        return [&f](const std::string& k, const std::string& v) { f = detail::parse_number<std::size_t>(k, v); };
    };
    auto dbl = [](double& f) -> Setter {
        return [&f](const std::string& k, const std::string& v) { f = detail::parse_number<double>(k, v); };
    };
    auto u64 = [](std::uint64_t& f) -> Setter {
        return [&f](const std::string& k, const std::string& v) { f = detail::parse_number<std::uint64_t>(k, v); };
    };
    auto boolean = [](bool& f) -> Setter {
        return [&f](const std::string& k, const std::string& v) { f = detail::parse_bool(k, v); };
    };
    auto str = [](std::string& f) -> Setter { return [&f](const std::string&, const std::string& v) { f = v; }; };

    const std::map<std::string, std::map<std::string, Setter>> schema{
        {"experiment",
         {{"task", str(c.task)},
          {"out", str(c.out)},
          {"parallel", boolean(c.parallel)},
          {"mode", [&](const std::string&, const std::string& v) { c.train.mode = parse_mode(v); }},
          {"seeds",
           [&](const std::string& k, const std::string& v) {
               c.seeds.clear();
               std::stringstream ss(v);
               std::string item;
               while (std::getline(ss, item, ','))
                   if (!detail::trim(item).empty()) c.seeds.push_back(detail::parse_number<std::uint64_t>(k, detail::trim(item)));
           }}}},
        {"data",
         {{"source",
           [&](const std::string& k, const std::string& v) {
               if (v == "synthetic") c.data.source = DataSource::Synthetic;
               else if (v == "idx") c.data.source = DataSource::Idx;
               else if (v == "nmim") c.data.source = DataSource::Nmim;
               else if (v == "csv") c.data.source = DataSource::Csv;
               else throw ConfigError(k + ": unknown source '" + v + "' (synthetic, idx, nmim, csv)");
           }},
          {"images", str(c.data.images)},
          {"labels", str(c.data.labels)},
          {"raw", str(c.data.raw)},
          {"trajectories", str(c.data.trajectories)},
          {"synth_classes", sz(c.data.synth_classes)},
          {"synth_per_class", sz(c.data.synth_per_class)},
          {"data_seed", u64(c.data.data_seed)},
          {"cyclists", sz(c.data.synth_traj.cyclists)},
          {"pedestrians", sz(c.data.synth_traj.pedestrians)},
          {"track_length", sz(c.data.synth_traj.length)}}},
        {"model",
         {{"slots", sz(c.model.slots)},
          {"width", sz(c.model.width)},
          {"filters", sz(c.model.conv.filters)},
          {"stages", sz(c.model.conv.stages)},
          {"sg_hidden", sz(c.model.sg_hidden)},
          {"seq_hidden", sz(c.model.seq_hidden)},
          {"memory_init", dbl(c.model.memory_init)},
          {"regression_head",
           [&](const std::string& k, const std::string& v) {
               if (v == "relu") c.model.head = Head::RegressionRelu;
               else if (v == "identity") c.model.head = Head::RegressionIdentity;
               else throw ConfigError(k + ": expected relu or identity, got '" + v + "'");
           }}}},
        {"train",
         {{"lr", [&](const std::string& k, const std::string& v) { lr = detail::parse_number<double>(k, v); }},
          {"sg_alpha", dbl(c.train.sg_alpha)},
          {"optimizer",
           [&](const std::string& k, const std::string& v) {
               if (v == "adam") c.train.opt.kind = OptimizerKind::Adam;
               else if (v == "sgd") c.train.opt.kind = OptimizerKind::Sgd;
               else throw ConfigError(k + ": expected adam or sgd, got '" + v + "'");
           }},
          {"beta1", dbl(c.train.opt.beta1)},
          {"beta2", dbl(c.train.opt.beta2)},
          {"eps", dbl(c.train.opt.eps)},
          {"iterations", sz(c.iterations)},
          {"batch_size", sz(c.batch_size)},
          {"clip", boolean(c.train.clip)},
          {"clip_norm", dbl(c.train.clip_norm)},
          {"persist_memory", boolean(c.train.persist_memory)}}},
        {"fewshot",
         {{"n_way", sz(c.fewshot.n_way)},
          {"k_shot", sz(c.fewshot.k_shot)},
          {"query_per_class", sz(c.fewshot.query_per_class)},
          {"eval_episodes", sz(c.fewshot.eval_episodes)},
          {"train_fraction", dbl(c.fewshot.train_fraction)},
          {"augment", boolean(c.fewshot.augment)}}},
        {"rare", {{"period", sz(c.rare.period)}, {"eval_every", sz(c.rare.eval_every)}, {"train_fraction", dbl(c.rare.train_fraction)}}},
        {"trajectory",
         {{"obs", sz(c.trajectory.obs)},
          {"fut", sz(c.trajectory.fut)},
          {"stride", sz(c.trajectory.stride)},
          {"pretrain_iterations", sz(c.trajectory.pretrain_iterations)},
          {"adapt_iterations", sz(c.trajectory.adapt_iterations)},
          {"adapt_samples", sz(c.trajectory.adapt_samples)}}},
        {"share", {{"period", sz(c.share.period)}, {"feed_samples", sz(c.share.feed_samples)}}},
    };

    for (const auto& [section, body] : tree) {
        auto sec = schema.find(section);
        if (sec == schema.end()) {
            if (body.empty()) throw ConfigError(origin + ": key '" + section + "' outside any section");
            throw ConfigError(origin + ": unknown section [" + section + "]");
        }
        for (const auto& [key, val] : body) {
            auto it = sec->second.find(key);
            if (it == sec->second.end()) throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]");
            it->second(section + "." + key, detail::trim(val.get_value<std::string>()));
        }
    }

    c.set_task(c.task);
    return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

} // namespace nmsg

#endif
