// nmsg: experiment runner.
//
//   nmsg <fewshot|trajectory|rare-class|share-sg|gradcheck> --config FILE [--seed N] [--out DIR] [--mode M]
//
// Exit status: 0 success, 1 divergence or failed check, 2 configuration or data error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nmsg/experiments.hpp"

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string mode;
    std::vector<std::uint64_t> seeds;
    bool parallel = false;
};

int run(const std::string& task, const Options& o)
{
    nmsg::ExperimentConfig cfg;
    if (!o.config.empty()) cfg = nmsg::load_config(o.config);
    else if (task != "gradcheck") throw nmsg::ConfigError("--config is required for " + task);
    if (!o.config.empty() && cfg.task != task)
        std::cerr << "note: config task '" << cfg.task << "' replaced by subcommand '" << task << "'\n";
    cfg.set_task(task);
    if (!o.out.empty()) cfg.out = o.out;
    if (!o.mode.empty()) cfg.train.mode = nmsg::parse_mode(o.mode);
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (o.parallel) cfg.parallel = true;
    return nmsg::run_experiment(cfg, std::cout);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Neural memory networks with synthetic-gradient controller feedback"};
    app.require_subcommand(1);
    Options o;
    const char* tasks[] = {"fewshot", "trajectory", "rare-class", "share-sg", "gradcheck"};
    for (const char* t : tasks) {
        auto* sub = app.add_subcommand(t, std::string("run the ") + t + " protocol");
        sub->add_option("--config", o.config, "experiment config (INI)");
        sub->add_option("--seed", o.seeds, "seed (repeatable; overrides the config seed list)");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--mode", o.mode, "hybrid | true-only | sg-only");
        sub->add_flag("--parallel", o.parallel, "run seeds concurrently");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    const std::string task = app.get_subcommands().front()->get_name();
    try {
        return run(task, o);
    } catch (const nmsg::NumericalError& e) {
        std::cerr << "DIVERGED: " << e.what() << '\n';
        return 1;
    } catch (const nmsg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const nmsg::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const nmsg::FormatError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
