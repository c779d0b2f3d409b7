#ifndef NMSG_EXPERIMENTS_HPP
#define NMSG_EXPERIMENTS_HPP

#include <cmath>
#include <filesystem>
#include <future>
#include <ostream>
#include <string>
#include <vector>

#include "nmsg/config.hpp"
#include "nmsg/data/images.hpp"
#include "nmsg/data/synth_digits.hpp"
#include "nmsg/data/trajectories.hpp"
#include "nmsg/episode.hpp"
#include "nmsg/gradcheck.hpp"
#include "nmsg/report.hpp"

namespace nmsg {

struct RunResult {
    std::string label;
    std::vector<MetricsRecord> records;
    double final_metric = 0.0;
    bool phase_column = false;
    std::string initial_task_params; // encoded checkpoint of every task model before training
};

inline ImageDataset load_image_data(const ExperimentConfig& cfg)
{
    switch (cfg.data.source) {
    case DataSource::Idx: return load_idx(cfg.data.images, cfg.data.labels);
    case DataSource::Nmim: return load_raw_classes(cfg.data.raw);
    case DataSource::Synthetic: return synth_digits(cfg.data.synth_classes, cfg.data.synth_per_class, cfg.data.data_seed);
    case DataSource::Csv: break;
    }
    throw ConfigError("image task cannot use a trajectory CSV source");
}

struct TrajectoryData {
    std::vector<TrajWindow> source; // cyclists
    std::vector<TrajWindow> target; // pedestrians
    std::size_t skipped = 0;
};

inline TrajectoryData load_trajectory_data(const ExperimentConfig& cfg)
{
    TrajectoryDataset ds = cfg.data.source == DataSource::Csv
                               ? load_trajectories(cfg.data.trajectories)
                               : build_trajectories(synth_trajectories(cfg.data.synth_traj, cfg.data.data_seed));
    WindowSet ws = window_tracks(ds, cfg.trajectory.obs, cfg.trajectory.fut, cfg.trajectory.stride);
    TrajectoryData out;
    out.skipped = ws.skipped;
    for (auto& w : ws.windows) {
        if (w.cls == AgentClass::Cyclist) out.source.push_back(std::move(w));
        else if (w.cls == AgentClass::Pedestrian) out.target.push_back(std::move(w));
    }
    if (out.source.empty()) throw DataError("trajectory: no cyclist windows of length " + std::to_string(cfg.trajectory.obs + cfg.trajectory.fut));
    if (out.target.empty()) throw DataError("trajectory: no pedestrian windows of length " + std::to_string(cfg.trajectory.obs + cfg.trajectory.fut));
    return out;
}

namespace detail {

inline OptimizerConfig sg_optimizer(const ExperimentConfig& cfg) { return cfg.train.opt; }

inline ModelConfig image_model(const ExperimentConfig& cfg, const ImageDataset& ds, std::size_t out, std::size_t aux)
{
    ModelConfig mc = cfg.model;
    mc.encoder = EncoderKind::Conv;
    mc.conv.height = ds.height;
    mc.conv.width = ds.width;
    mc.conv.channels = ds.channels;
    mc.head = Head::Classification;
    mc.output_dim = out;
    mc.aux_dim = aux;
    return mc;
}

inline ModelConfig trajectory_model(const ExperimentConfig& cfg)
{
    ModelConfig mc = cfg.model;
    mc.encoder = EncoderKind::Sequence;
    mc.seq_input = 2;
    if (mc.head == Head::Classification) mc.head = Head::RegressionRelu;
    mc.output_dim = 2 * cfg.trajectory.fut;
    mc.aux_dim = 0;
    return mc;
}

inline Sequence window_sequence(const std::vector<TrajWindow>& pool, const std::vector<std::size_t>& ids)
{
    Sequence s;
    for (std::size_t i : ids) s.push_back({pool[i].input, pool[i].target, {}, true});
    return s;
}

inline std::string encode_params(std::initializer_list<MemoryNetwork*> models)
{
    std::string out;
    for (MemoryNetwork* m : models) out += encode_checkpoint(snapshot(m->task_registry()));
    return out;
}

} // namespace detail

/// Episodic N-way S-shot training on a random split of classes; the headline number is
/// query accuracy on held-out-class episodes.
inline RunResult run_fewshot(const ExperimentConfig& cfg, const ImageDataset& ds, std::uint64_t seed, Mode mode)
{
    const auto& f = cfg.fewshot;
    std::vector<std::size_t> classes(ds.classes);
    for (std::size_t c = 0; c < ds.classes; ++c) classes[c] = c;
    Rng split(derive_seed(cfg.data.data_seed, 1));
    split.shuffle(classes);
    if (ds.classes < 2 * f.n_way)
        throw DataError("fewshot: " + std::to_string(ds.classes) + " classes cannot be split into two sets of " + std::to_string(f.n_way));
    auto ntrain = static_cast<std::size_t>(std::lround(f.train_fraction * static_cast<double>(ds.classes)));
    ntrain = std::clamp(ntrain, f.n_way, ds.classes - f.n_way);
    const std::vector<std::size_t> train_cls(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(ntrain));
    const std::vector<std::size_t> test_cls(classes.begin() + static_cast<std::ptrdiff_t>(ntrain), classes.end());

    MemoryNetwork net(detail::image_model(cfg, ds, f.n_way, f.n_way), derive_seed(seed, 1), detail::sg_optimizer(cfg));
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    Trainer tr(net, tc);
    RunResult res;
    res.label = std::string(mode_name(mode));
    res.initial_task_params = detail::encode_params({&net});
    Rng rng(derive_seed(seed, 2));
    for (std::size_t i = 1; i <= cfg.iterations; ++i) {
        const Sequence seq = episode_sequence(sample_episode(ds, train_cls, f.n_way, f.k_shot, f.queries(), rng, f.augment));
        MetricsRecord rec = tr.train_iteration(std::span<const Sequence>(&seq, 1));
        rec.iter = i;
        res.records.push_back(rec);
    }
    Rng erng(derive_seed(seed, 3));
    double acc = 0.0;
    for (std::size_t e = 0; e < f.eval_episodes; ++e) {
        const Sequence seq = episode_sequence(sample_episode(ds, test_cls, f.n_way, f.k_shot, f.queries(), erng, f.augment));
        acc += tr.evaluate(std::span<const Sequence>(&seq, 1)).accuracy;
    }
    res.final_metric = f.eval_episodes ? acc / static_cast<double>(f.eval_episodes) : 0.0;
    return res;
}

/// Classes 0-4 every iteration, a batch from classes 5-9 every `period`-th iteration.
/// The metric column is held-out accuracy on classes 5-9, refreshed every `eval_every`
/// iterations (and at the first and last) and carried forward in between.
inline RunResult run_rare_class(const ExperimentConfig& cfg, const ImageDataset& ds, std::uint64_t seed, Mode mode)
{
    const auto& rc = cfg.rare;
    if (ds.classes < 10) throw DataError("rare-class: need 10 classes, dataset has " + std::to_string(ds.classes));
    std::vector<std::vector<std::size_t>> train(10), test(10);
    Rng split(derive_seed(cfg.data.data_seed, 2));
    for (std::size_t c = 0; c < 10; ++c) {
        std::vector<std::size_t> m = ds.class_index[c];
        if (m.size() < 2) throw DataError("rare-class: class " + std::to_string(c) + " has fewer than 2 samples");
        split.shuffle(m);
        auto k = static_cast<std::size_t>(std::lround(rc.train_fraction * static_cast<double>(m.size())));
        k = std::clamp<std::size_t>(k, 1, m.size() - 1);
        train[c].assign(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(k));
        test[c].assign(m.begin() + static_cast<std::ptrdiff_t>(k), m.end());
    }
    std::vector<std::size_t> eval_ids;
    for (std::size_t c = 5; c < 10; ++c) eval_ids.insert(eval_ids.end(), test[c].begin(), test[c].end());
    Rng order(derive_seed(cfg.data.data_seed, 3));
    order.shuffle(eval_ids);
    std::vector<Sequence> eval_seqs;
    for (std::size_t b = 0; b < eval_ids.size(); b += cfg.batch_size) {
        Sequence s;
        for (std::size_t k = b; k < std::min(eval_ids.size(), b + cfg.batch_size); ++k)
            s.push_back({ds.images[eval_ids[k]], one_hot(ds.labels[eval_ids[k]], 10), {}, true});
        eval_seqs.push_back(std::move(s));
    }

    MemoryNetwork net(detail::image_model(cfg, ds, 10, 0), derive_seed(seed, 1), detail::sg_optimizer(cfg));
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    Trainer tr(net, tc);
    RunResult res;
    res.label = std::string(mode_name(mode));
    res.initial_task_params = detail::encode_params({&net});
    Rng common(derive_seed(seed, 20)), rare(derive_seed(seed, 21));
    double acc = 0.0;
    for (std::size_t i = 1; i <= cfg.iterations; ++i) {
        const bool is_rare = i % rc.period == 0;
        Rng& r = is_rare ? rare : common;
        Sequence seq;
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
            const std::size_t c = (is_rare ? 5 : 0) + r.index(5);
            const std::size_t id = train[c][r.index(train[c].size())];
            seq.push_back({ds.images[id], one_hot(c, 10), {}, true});
        }
        MetricsRecord rec = tr.train_iteration(std::span<const Sequence>(&seq, 1));
        if (i == 1 || i % rc.eval_every == 0 || i == cfg.iterations) acc = tr.evaluate(eval_seqs).accuracy;
        rec.iter = i;
        rec.rare = is_rare;
        rec.metric = acc;
        res.records.push_back(rec);
    }
    res.final_metric = acc;
    return res;
}

/// Pretraining on the source family, then adaptation on a fixed handful of target
/// windows. Metric: MSE on the iteration's batch after the update.
inline RunResult run_trajectory(const ExperimentConfig& cfg, const TrajectoryData& data, std::uint64_t seed, Mode mode)
{
    const auto& tj = cfg.trajectory;
    if (data.target.size() < tj.adapt_samples)
        throw DataError("trajectory: " + std::to_string(data.target.size()) + " target windows, need " + std::to_string(tj.adapt_samples));
    MemoryNetwork net(detail::trajectory_model(cfg), derive_seed(seed, 1), detail::sg_optimizer(cfg));
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    Trainer tr(net, tc);
    RunResult res;
    res.label = std::string(mode_name(mode));
    res.phase_column = true;
    res.initial_task_params = detail::encode_params({&net});

    std::vector<std::size_t> pick(data.target.size());
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    Rng prng(derive_seed(seed, 31));
    prng.shuffle(pick);
    pick.resize(tj.adapt_samples);
    const Sequence adapt = detail::window_sequence(data.target, pick);

    Rng rng(derive_seed(seed, 30));
    std::size_t iter = 0;
    for (std::size_t i = 0; i < tj.pretrain_iterations; ++i) {
        std::vector<std::size_t> ids(cfg.batch_size);
        for (auto& id : ids) id = rng.index(data.source.size());
        const Sequence seq = detail::window_sequence(data.source, ids);
        MetricsRecord rec = tr.train_iteration(std::span<const Sequence>(&seq, 1));
        rec.iter = ++iter;
        rec.metric = tr.evaluate(std::span<const Sequence>(&seq, 1)).loss;
        rec.phase = "pretrain";
        res.records.push_back(rec);
    }
    for (std::size_t i = 0; i < tj.adapt_iterations; ++i) {
        MetricsRecord rec = tr.train_iteration(std::span<const Sequence>(&adapt, 1));
        rec.iter = ++iter;
        rec.metric = tr.evaluate(std::span<const Sequence>(&adapt, 1)).loss;
        rec.phase = "adapt";
        res.final_metric = rec.metric;
        res.records.push_back(rec);
    }
    return res;
}

/// Two models: stream A trains on source windows every iteration; stream B trains on a
/// fixed set of target windows only at iterations divisible by `period`. With `shared`
/// both use A's predictor bundle. Rows carry phase A or B; B rows are flagged.
inline RunResult run_share_sg(const ExperimentConfig& cfg, const TrajectoryData& data, std::uint64_t seed, bool shared)
{
    const auto& sc = cfg.share;
    if (data.target.size() < sc.feed_samples)
        throw DataError("share-sg: " + std::to_string(data.target.size()) + " target windows, need " + std::to_string(sc.feed_samples));
    const ModelConfig mc = detail::trajectory_model(cfg);
    MemoryNetwork a(mc, derive_seed(seed, 41), detail::sg_optimizer(cfg));
    MemoryNetwork b(mc, derive_seed(seed, 42), detail::sg_optimizer(cfg));
    if (shared) {
        MemoryNetwork* models[] = {&a, &b};
        share_bundle(models, a.sg_handle());
    }
    Trainer ta(a, cfg.train), tb(b, cfg.train);
    RunResult res;
    res.label = shared ? "shared" : "separate";
    res.phase_column = true;
    res.initial_task_params = detail::encode_params({&a, &b});

    std::vector<std::size_t> pick(data.target.size());
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    Rng prng(derive_seed(seed, 44));
    prng.shuffle(pick);
    pick.resize(sc.feed_samples);
    const Sequence feed = detail::window_sequence(data.target, pick);

    Rng rng(derive_seed(seed, 43));
    for (std::size_t i = 1; i <= cfg.iterations; ++i) {
        std::vector<std::size_t> ids(cfg.batch_size);
        for (auto& id : ids) id = rng.index(data.source.size());
        const Sequence seq = detail::window_sequence(data.source, ids);
        MetricsRecord ra = ta.train_iteration(std::span<const Sequence>(&seq, 1));
        ra.iter = i;
        ra.metric = ta.evaluate(std::span<const Sequence>(&seq, 1)).loss;
        ra.phase = "A";
        res.records.push_back(ra);
        if (i % sc.period == 0) {
            MetricsRecord rb = tb.train_iteration(std::span<const Sequence>(&feed, 1));
            rb.iter = i;
            rb.metric = tb.evaluate(std::span<const Sequence>(&feed, 1)).loss;
            rb.phase = "B";
            rb.rare = true;
            res.final_metric = rb.metric;
            res.records.push_back(rb);
        }
    }
    return res;
}

struct GradcheckReport {
    std::vector<GradcheckResult> results;
    bool passed = true;
};

inline GradcheckReport run_gradcheck_suite(std::uint64_t seed = 1)
{
    GradcheckReport rep;
    auto cases = builtin_gradcheck_cases(seed);
    for (auto& c : cases) {
        rep.results.push_back(run_gradcheck(c, derive_seed(seed, rep.results.size())));
        rep.passed = rep.passed && rep.results.back().passed;
    }
    return rep;
}

// Output writing --------------------------------------------------------------

namespace detail {

inline Series series_of(const std::vector<MetricsRecord>& recs, const std::string& name, const std::string& color,
                        double (*get)(const MetricsRecord&), const char* phase = nullptr)
{
    Series s{name, color, {}, {}};
    for (const auto& r : recs) {
        if (phase && r.phase != phase) continue;
        s.x.push_back(static_cast<double>(r.iter));
        s.y.push_back(get(r));
    }
    return s;
}

inline std::vector<double> rare_markers(const std::vector<MetricsRecord>& recs)
{
    std::vector<double> m;
    for (const auto& r : recs)
        if (r.rare) m.push_back(static_cast<double>(r.iter));
    return m;
}

inline double get_loss(const MetricsRecord& r) { return r.task_loss; }
inline double get_metric(const MetricsRecord& r) { return r.metric; }
inline double get_sg_oc(const MetricsRecord& r) { return r.gnorm_sg[1]; }
inline double get_true_oc(const MetricsRecord& r) { return r.gnorm_true[1]; }

inline void write_run(const std::filesystem::path& dir, const RunResult& run, const std::string& title, const std::string& metric_name)
{
    std::filesystem::create_directories(dir);
    write_text((dir / "metrics.csv").string(), metrics_csv(run.records, run.phase_column));
    std::vector<Panel> panels;
    if (run.phase_column && !run.records.empty() && (run.records[0].phase == "A" || run.records[0].phase == "B")) {
        panels.push_back({"stream A", metric_name, {series_of(run.records, "A", "#1f77b4", get_metric, "A")}, {}});
        panels.push_back({"stream B", metric_name, {series_of(run.records, "B", "#d62728", get_metric, "B")},
                          rare_markers(run.records)});
    } else {
        panels.push_back({"task loss", "loss", {series_of(run.records, "task loss", "#1f77b4", get_loss)}, rare_markers(run.records)});
        panels.push_back({metric_name, metric_name, {series_of(run.records, metric_name, "#2ca02c", get_metric)}, rare_markers(run.records)});
    }
    write_text((dir / "curve.svg").string(), svg_chart(title + " (" + run.label + ")", panels));
}

inline std::string summary_stats(const std::vector<double>& v)
{
    double m = 0.0, s = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) s += (x - m) * (x - m);
    s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    return "mean=" + fmt_num(m) + " std=" + fmt_num(s) + " n=" + std::to_string(v.size());
}

} // namespace detail

/// Per-seed results of one subcommand invocation.
struct SeedOutcome {
    std::uint64_t seed = 0;
    std::vector<std::string> lines;             // summary lines
    std::vector<std::pair<std::string, double>> finals; // (label, headline metric)
};

/// Runs every configured seed, writes out/seed_N/<label>/{metrics.csv,curve.svg} and
/// out/summary.txt. Returns the process exit status.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log)
{
    cfg.validate();
    if (cfg.task == "gradcheck") {
        GradcheckReport rep = run_gradcheck_suite();
        std::vector<std::string> failed;
        for (const auto& r : rep.results) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%-20s max_rel_error=%.3e %s", r.name.c_str(), r.max_rel_error, r.passed ? "PASS" : "FAIL");
            log << buf << '\n';
            if (!r.passed) failed.push_back(r.name);
        }
        if (!failed.empty()) {
            log << "gradcheck failed:";
            for (const auto& n : failed) log << ' ' << n;
            log << '\n';
            return 1;
        }
        log << "gradcheck: all " << rep.results.size() << " checks within 1e-4\n";
        return 0;
    }

    const bool images = cfg.task == "fewshot" || cfg.task == "rare-class";
    ImageDataset ids;
    TrajectoryData tds;
    if (images) ids = load_image_data(cfg);
    else tds = load_trajectory_data(cfg);
    const std::filesystem::path out(cfg.out);
    std::filesystem::create_directories(out);

    auto one_seed = [&](std::uint64_t seed) {
        SeedOutcome so;
        so.seed = seed;
        const std::filesystem::path dir = out / ("seed_" + std::to_string(seed));
        std::vector<RunResult> runs;
        if (cfg.task == "fewshot") {
            runs.push_back(run_fewshot(cfg, ids, seed, cfg.train.mode));
            detail::write_run(dir / runs.back().label, runs.back(), "few-shot seed " + std::to_string(seed), "query accuracy");
        } else if (cfg.task == "rare-class") {
            for (Mode m : {Mode::Hybrid, Mode::TrueOnly}) {
                runs.push_back(run_rare_class(cfg, ids, seed, m));
                detail::write_run(dir / runs.back().label, runs.back(), "rare-class seed " + std::to_string(seed), "held-out accuracy");
            }
            std::vector<Panel> panels;
            panels.push_back({"hybrid: predicted OC gradient norm", "norm",
                              {detail::series_of(runs[0].records, "SG-OC", "#1f77b4", detail::get_sg_oc)},
                              detail::rare_markers(runs[0].records)});
            panels.push_back({"true-only: predicted OC gradient norm", "norm",
                              {detail::series_of(runs[1].records, "SG-OC", "#ff7f0e", detail::get_sg_oc)},
                              detail::rare_markers(runs[1].records)});
            write_text((dir / "curve.svg").string(), svg_chart("rare-class seed " + std::to_string(seed), panels));
        } else if (cfg.task == "trajectory") {
            runs.push_back(run_trajectory(cfg, tds, seed, cfg.train.mode));
            detail::write_run(dir / runs.back().label, runs.back(), "trajectory seed " + std::to_string(seed), "mse");
        } else {
            for (bool shared : {true, false}) {
                runs.push_back(run_share_sg(cfg, tds, seed, shared));
                detail::write_run(dir / runs.back().label, runs.back(), "share-sg seed " + std::to_string(seed), "mse");
            }
        }
        for (const auto& r : runs) {
            for (const auto& rec : r.records)
                if (!rec.all_finite()) throw NumericalError("non-finite metrics at iteration " + std::to_string(rec.iter));
            so.finals.emplace_back(r.label, r.final_metric);
            so.lines.push_back("seed=" + std::to_string(seed) + " run=" + r.label + " final=" + fmt_num(r.final_metric));
        }
        return so;
    };

    std::vector<SeedOutcome> outcomes;
    if (cfg.parallel && cfg.seeds.size() > 1) {
        std::vector<std::future<SeedOutcome>> jobs;
        for (auto s : cfg.seeds) jobs.push_back(std::async(std::launch::async, one_seed, s));
        for (auto& j : jobs) outcomes.push_back(j.get());
    } else {
        for (auto s : cfg.seeds) outcomes.push_back(one_seed(s));
    }

    std::string summary;
    std::map<std::string, std::vector<double>> by_label;
    for (const auto& o : outcomes) {
        for (const auto& l : o.lines) summary += l + '\n';
        for (const auto& [label, v] : o.finals) by_label[label].push_back(v);
    }
    for (const auto& [label, v] : by_label) summary += "aggregate run=" + label + ' ' + detail::summary_stats(v) + '\n';
    write_text((out / "summary.txt").string(), summary);
    log << summary;
    return 0;
}

} // namespace nmsg

#endif
