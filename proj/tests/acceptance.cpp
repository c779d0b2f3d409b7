// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   nmsg_acceptance [--out DIR]
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "nmsg/experiments.hpp"
#include "support.hpp"

#ifndef NMSG_CONFIG_DIR
#error "NMSG_CONFIG_DIR must point at the configs directory"
#endif

using namespace nmsg;
using namespace nmsg::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

ExperimentConfig config(const std::string& name)
{
    return load_config(std::string(NMSG_CONFIG_DIR) + "/" + name + ".ini");
}

// Metrics CSV of every experimental run, keyed by criterion/seed/label, for the re-run check.
using CsvStore = std::map<std::string, std::string>;

void keep(CsvStore& store, const std::string& key, const RunResult& r)
{
    store[key] = metrics_csv(r.records, r.phase_column);
}

// 1 -----------------------------------------------------------------------------

Outcome gradients()
{
    const auto t0 = Clock::now();
    const GradcheckReport rep = run_gradcheck_suite(1);
    const double secs = seconds_since(t0);
    double worst = 0.0;
    std::string worst_name, failed;
    bool memory_step = false;
    for (const auto& r : rep.results) {
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
        if (!(r.max_rel_error < 1e-4)) failed += " " + r.name;
        memory_step = memory_step || r.name == "memory_step";
    }
    std::size_t covered = 0;
    for (const auto& p : primitive_names())
        for (const auto& r : rep.results) covered += r.name == p;
    const bool ok = failed.empty() && memory_step && covered == primitive_names().size() && secs < 60.0;
    return {ok, std::to_string(rep.results.size()) + " cases, max rel error " + fmt(worst) + " (" + worst_name + ")" +
                    (failed.empty() ? "" : ", failing:" + failed) + ", " + fmt(secs) + " s"};
}

// 2 -----------------------------------------------------------------------------

double write_error(const Tensor& M, const Tensor& z, const Tensor& mp)
{
    Tape t;
    const Tensor got = write_rule(t.constant(M), t.constant(z), t.constant(mp)).value();
    const std::size_t l = M.shape()[0], k = M.shape()[1];
    double err = 0.0;
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double zi = z[i], old = M[i * k + j], nw = mp[j];
            const double want = (1.0 - zi) * old + zi * nw;
            err = std::max(err, std::abs(got[i * k + j] - want));
        }
    return err;
}

Outcome write_oracle()
{
    Rng rng(2);
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t l : {1, 2, 3})
        for (std::size_t k : {1, 2, 4}) {
            for (int d = 0; d < 100; ++d) {
                Tensor M({l, k}), mp({1, k}), logits({1, l});
                for (double& v : M.values()) v = rng.uniform(-2, 2);
                for (double& v : mp.values()) v = rng.uniform(-2, 2);
                for (double& v : logits.values()) v = rng.normal();
                Tape t;
                const Tensor z = softmax_rows(t.constant(logits)).value();
                worst = std::max(worst, write_error(M, z, mp));
                ++cases;
            }
            for (std::size_t s = 0; s < l; ++s) {
                Tensor M({l, k}), mp({1, k});
                for (double& v : M.values()) v = rng.uniform(-2, 2);
                for (double& v : mp.values()) v = rng.uniform(-2, 2);
                Tape t;
                const Tensor out = write_rule(t.constant(M), t.constant(one_hot(s, l)), t.constant(mp)).value();
                for (std::size_t i = 0; i < l; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        worst = std::max(worst, std::abs(out[i * k + j] - (i == s ? mp[j] : M[i * k + j])));
                worst = std::max(worst, write_error(M, one_hot(s, l), mp));
                ++cases;
            }
            Tensor row({1, k}), M({l, k}), logits({1, l});
            for (double& v : row.values()) v = rng.uniform(-2, 2);
            for (std::size_t i = 0; i < l; ++i)
                for (std::size_t j = 0; j < k; ++j) M[i * k + j] = row[j];
            for (double& v : logits.values()) v = rng.normal();
            Tape t;
            const Tensor z = softmax_rows(t.constant(logits)).value();
            worst = std::max(worst, max_abs_diff(write_rule(t.constant(M), t.constant(z), t.constant(row)).value(), M));
            ++cases;
        }
    return {worst < 1e-12, std::to_string(cases) + " cases, max abs error " + fmt(worst)};
}

// 3 -----------------------------------------------------------------------------

Outcome decoupling()
{
    MemoryNetwork a(tiny_config(), 31), b(tiny_config(), 31);
    TrainConfig tc;
    tc.mode = Mode::TrueOnly;
    tc.opt.lr = 1e-3;
    Trainer tr(a, tc);
    ReferenceTrainer ref(b, 1e-3);
    Rng rng(32);
    const auto pa = a.task_registry().all(), pb = b.task_registry().all();
    std::size_t identical_iters = 0;
    for (int i = 0; i < 100; ++i) {
        const Sequence seq = random_sequence(rng, 5, 6, 3);
        tr.train_iteration(std::span<const Sequence>(&seq, 1));
        ref.step(std::span<const Sequence>(&seq, 1));
        bool same = true;
        for (std::size_t p = 0; p < pa.size(); ++p) same = same && pa[p]->value == pb[p]->value;
        if (!same) break;
        ++identical_iters;
    }

    MemoryNetwork c(tiny_config(), 33);
    const Sequence seq = random_sequence(rng, 6, 6, 3);
    const auto task = c.task_registry().all();
    const auto task_before = values_of(task);
    for (Role r : all_roles) {
        const Captured cap = capture_role(c, seq, r);
        sg_train_step(c.sg().predictor(r), c.sg().optimizer(r), cap.outputs, cap.targets, cap.truth);
    }
    const bool sg_leaves_task = same_values(task, task_before);

    ParamRegistry reg = c.registry();
    std::vector<Parameter*> preds;
    for (Group g : {Group::SgIC, Group::SgOC, Group::SgWC})
        for (Parameter* p : reg.group(g)) preds.push_back(p);
    const auto pred_before = values_of(preds);
    Trainer main(c, tc);
    Tape tape;
    GradientMap g = tape.backward(main.forward(tape, std::span<const Sequence>(&seq, 1), true).loss);
    bool task_leaves_sg = true;
    for (Parameter* p : preds) task_leaves_sg = task_leaves_sg && !g.contains(*p);
    Optimizer task_opt(task, tc.opt);
    task_opt.step(g);
    task_leaves_sg = task_leaves_sg && same_values(preds, pred_before) && !same_values(task, task_before);

    const bool ok = identical_iters == 100 && sg_leaves_task && task_leaves_sg;
    return {ok, "bit-identical for " + std::to_string(identical_iters) + "/100 iterations, predictor step leaves task " +
                    (sg_leaves_task ? "unchanged" : "CHANGED") + ", task step leaves predictors " +
                    (task_leaves_sg ? "unchanged" : "CHANGED")};
}

// 4 -----------------------------------------------------------------------------

Outcome injection()
{
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (std::uint64_t seed : {41, 42, 43}) {
        MemoryNetwork net(tiny_config(), seed);
        Rng rng(seed);
        const Sequence step = random_sequence(rng, 1, 6, 3);
        Trainer tr(net, TrainConfig{});
        Tape tape;
        ForwardPass fp = tr.forward(tape, std::span<const Sequence>(&step, 1), true);
        GradientMap full = tape.backward(fp.loss);
        ParamRegistry reg = net.registry();
        for (Role r : all_roles) {
            const Var node = fp.ctrl[0][static_cast<std::size_t>(r)];
            const Tensor truth = tape.capture_gradient(node);
            tape.backward(fp.loss);
            const Group grp = controller_group(r);
            GradientMap inj = tape.inject_gradient(node, truth, [&](const Parameter& p) {
                for (Parameter* q : reg.group(grp))
                    if (q == &p) return true;
                return false;
            });
            for (Parameter* p : reg.group(grp)) worst = std::max(worst, max_abs_diff(inj.at(*p), full.at(*p)));
            tape.backward(fp.loss);
        }
    }

    std::string fid;
    bool fid_ok = true;
    for (Role r : all_roles) {
        MemoryNetwork net(tiny_config(), 44);
        Rng rng(45);
        const Sequence seq = random_sequence(rng, 8, 6, 3);
        const FidelityResult f = sg_fidelity(net, seq, r, 2000, 0.8);
        fid_ok = fid_ok && f.cosine > 0.8;
        fid += std::string(" ") + role_name(r) + " cos " + fmt(f.cosine) + " at " + std::to_string(f.steps);
    }
    const double secs = seconds_since(t0);
    const bool ok = worst < 1e-10 && fid_ok && secs < 120.0;
    return {ok, "injection max abs diff " + fmt(worst) + ", fidelity:" + fid + ", " + fmt(secs) + " s"};
}

// 5, 6 --------------------------------------------------------------------------

struct RarePair {
    RunResult hybrid, true_only;
};

std::vector<RarePair> rare_runs(const ExperimentConfig& cfg, CsvStore& store)
{
    const ImageDataset ds = load_image_data(cfg);
    std::vector<RarePair> out;
    for (std::uint64_t s : cfg.seeds) {
        RarePair p{run_rare_class(cfg, ds, s, Mode::Hybrid), run_rare_class(cfg, ds, s, Mode::TrueOnly)};
        keep(store, "rare/" + std::to_string(s) + "/hybrid", p.hybrid);
        keep(store, "rare/" + std::to_string(s) + "/true-only", p.true_only);
        out.push_back(std::move(p));
    }
    return out;
}

std::pair<double, double> oc_means(const RunResult& r)
{
    double rare = 0, common = 0;
    std::size_t nr = 0, nc = 0;
    for (const auto& rec : r.records) {
        const double g = rec.gnorm_sg[static_cast<std::size_t>(Role::OC)];
        if (rec.rare) {
            rare += g;
            ++nr;
        } else {
            common += g;
            ++nc;
        }
    }
    return {nr ? rare / nr : 0.0, nc ? common / nc : 0.0};
}

Outcome fast_slow(const std::vector<RarePair>& runs, double secs)
{
    std::size_t hybrid_ordered = 0, true_ordered = 0;
    std::string per;
    for (const auto& p : runs) {
        const auto [hr, hc] = oc_means(p.hybrid);
        const auto [tr, tc] = oc_means(p.true_only);
        hybrid_ordered += hr > hc;
        true_ordered += tr > tc;
        per += " [" + fmt(hr) + "/" + fmt(hc) + " vs " + fmt(tr) + "/" + fmt(tc) + "]";
    }
    const bool ok = hybrid_ordered >= 4 && true_ordered < 4 && secs < 600.0;
    return {ok, "rare>common: hybrid " + std::to_string(hybrid_ordered) + "/" + std::to_string(runs.size()) +
                    ", true-only " + std::to_string(true_ordered) + "/" + std::to_string(runs.size()) +
                    "; rare/common hybrid vs true-only" + per + ", " + fmt(secs) + " s"};
}

Outcome rare_accuracy(const std::vector<RarePair>& runs, double secs)
{
    std::size_t wins = 0;
    std::string per;
    for (const auto& p : runs) {
        wins += p.hybrid.final_metric > p.true_only.final_metric;
        per += " " + fmt(p.hybrid.final_metric) + "/" + fmt(p.true_only.final_metric);
    }
    return {wins >= 4 && secs < 600.0, "hybrid > true-only in " + std::to_string(wins) + "/" + std::to_string(runs.size()) +
                                           " seeds; accuracy hybrid/true-only" + per + ", " + fmt(secs) + " s"};
}

// 7 -----------------------------------------------------------------------------

Outcome adaptation(CsvStore& store)
{
    const auto t0 = Clock::now();
    const ExperimentConfig cfg = config("trajectory");
    const TrajectoryData data = load_trajectory_data(cfg);
    std::size_t wins = 0;
    std::string per;
    for (std::uint64_t s : cfg.seeds) {
        const RunResult h = run_trajectory(cfg, data, s, Mode::Hybrid), t = run_trajectory(cfg, data, s, Mode::TrueOnly);
        keep(store, "trajectory/" + std::to_string(s) + "/hybrid", h);
        keep(store, "trajectory/" + std::to_string(s) + "/true-only", t);
        wins += h.final_metric < t.final_metric;
        per += " " + fmt(h.final_metric) + "/" + fmt(t.final_metric);
    }
    const double secs = seconds_since(t0);
    return {wins >= 4 && secs < 600.0, "hybrid < true-only in " + std::to_string(wins) + "/" + std::to_string(cfg.seeds.size()) +
                                           " seeds; adaptation MSE hybrid/true-only" + per + ", " + fmt(secs) + " s"};
}

// 8 -----------------------------------------------------------------------------

Outcome sharing(CsvStore& store)
{
    const auto t0 = Clock::now();
    const ExperimentConfig cfg = config("share-sg");
    const TrajectoryData data = load_trajectory_data(cfg);
    std::size_t wins = 0, identical = 0;
    std::string per;
    for (std::uint64_t s : cfg.seeds) {
        const RunResult sh = run_share_sg(cfg, data, s, true), sep = run_share_sg(cfg, data, s, false);
        keep(store, "share/" + std::to_string(s) + "/shared", sh);
        keep(store, "share/" + std::to_string(s) + "/separate", sep);
        wins += sh.final_metric < sep.final_metric;
        identical += sh.initial_task_params == sep.initial_task_params;
        per += " " + fmt(sh.final_metric) + "/" + fmt(sep.final_metric);
    }
    const double secs = seconds_since(t0);
    const std::size_t n = cfg.seeds.size();
    return {wins >= 4 && identical == n && secs < 600.0,
            "shared < separate in " + std::to_string(wins) + "/" + std::to_string(n) + " seeds; identical initialization " +
                std::to_string(identical) + "/" + std::to_string(n) + "; stream-B loss shared/separate" + per + ", " +
                fmt(secs) + " s"};
}

void write_outputs(const std::filesystem::path& dir, const CsvStore& store)
{
    for (const auto& [key, csv] : store) {
        const auto p = dir / (key + ".csv");
        std::filesystem::create_directories(p.parent_path());
        write_text(p.string(), csv);
    }
}

} // namespace

int main(int argc, char** argv)
{
    std::string out_dir;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--out") out_dir = argv[i + 1];

    bool all = true;
    auto report = [&](int id, const std::function<Outcome()>& f) {
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    };

    report(1, gradients);
    report(2, write_oracle);
    report(3, decoupling);
    report(4, injection);

    CsvStore first, second;
    std::vector<RarePair> rare;
    double rare_secs = 0.0;
    try {
        const auto t0 = Clock::now();
        rare = rare_runs(config("rare-class"), first);
        rare_secs = seconds_since(t0);
    } catch (const std::exception& e) {
        std::cout << "rare-class runs failed: " << e.what() << std::endl;
    }
    report(5, [&] { return rare.empty() ? Outcome{false, "no runs"} : fast_slow(rare, rare_secs); });
    report(6, [&] { return rare.empty() ? Outcome{false, "no runs"} : rare_accuracy(rare, rare_secs); });
    report(7, [&] { return adaptation(first); });
    report(8, [&] { return sharing(first); });

    report(9, [&] {
        rare_runs(config("rare-class"), second);
        adaptation(second);
        sharing(second);
        std::size_t same = 0;
        std::string diff;
        for (const auto& [key, csv] : first) {
            const auto it = second.find(key);
            if (it != second.end() && it->second == csv) ++same;
            else diff += " " + key;
        }
        const bool ok = !first.empty() && same == first.size() && first.size() == second.size();
        return Outcome{ok, std::to_string(same) + "/" + std::to_string(first.size()) + " metrics.csv files byte-identical" +
                               (diff.empty() ? "" : ", differing:" + diff)};
    });

    if (!out_dir.empty()) write_outputs(out_dir, first);
    std::cout << (all ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL") << std::endl;
    return all ? 0 : 1;
}
