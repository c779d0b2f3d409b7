#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "nmsg/experiments.hpp"

#ifndef NMSG_CLI_PATH
#error "NMSG_CLI_PATH must point at the built nmsg executable"
#endif

using namespace nmsg;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int status = -1;
    std::string output;
};

CliResult run_cli(const std::string& args)
{
    const std::string cmd = std::string(NMSG_CLI_PATH) + " " + args + " 2>&1";
    CliResult r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        rows.push_back(f);
    }
    return rows;
}

class CliTest : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("nmsg_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }

    void TearDown() override { fs::remove_all(dir); }

    std::string write_config(const std::string& name, const std::string& text)
    {
        const fs::path p = dir / name;
        std::ofstream(p) << text;
        return p.string();
    }
};

const char* fewshot_ini = R"([experiment]
task = fewshot
seeds = 1
[data]
synth_classes = 10
synth_per_class = 6
[model]
filters = 2
slots = 3
width = 6
sg_hidden = 4
[train]
lr = 0.001
iterations = 4
[fewshot]
n_way = 3
eval_episodes = 2
)";

const char* trajectory_ini = R"([experiment]
task = trajectory
seeds = 1
[data]
cyclists = 3
pedestrians = 12
[model]
slots = 3
width = 4
seq_hidden = 4
sg_hidden = 4
[train]
lr = 0.001
batch_size = 2
[trajectory]
pretrain_iterations = 100
adapt_iterations = 50
adapt_samples = 2
)";

const char* share_ini = R"([experiment]
task = share-sg
seeds = 1
[data]
cyclists = 3
pedestrians = 4
[model]
slots = 3
width = 4
seq_hidden = 4
sg_hidden = 4
[train]
lr = 0.001
iterations = 9
batch_size = 2
[share]
period = 3
feed_samples = 2
)";

} // namespace

TEST(Config, ParsesKnownKeys)
{
    const ExperimentConfig c = parse_config(fewshot_ini);
    EXPECT_EQ(c.task, "fewshot");
    EXPECT_EQ(c.fewshot.n_way, 3u);
    EXPECT_EQ(c.model.conv.filters, 2u);
    EXPECT_DOUBLE_EQ(c.train.opt.lr, 0.001);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1}));
}

TEST(Config, TaskDefaults)
{
    ExperimentConfig c = parse_config("[experiment]\ntask = trajectory\n");
    EXPECT_DOUBLE_EQ(c.train.opt.lr, 1e-5);
    EXPECT_EQ(c.model.encoder, EncoderKind::Sequence);
    EXPECT_EQ(c.model.output_dim, 100u);
    c.set_task("fewshot");
    EXPECT_DOUBLE_EQ(c.train.opt.lr, 5e-6);
    EXPECT_EQ(c.model.head, Head::Classification);
}

TEST(Config, UnknownKeysAndSectionsRejected)
{
    EXPECT_THROW(parse_config("[train]\nlearning_rate = 0.1\n"), ConfigError);
    EXPECT_THROW(parse_config("[optimizer]\nlr = 0.1\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\nlr = fast\n"), ConfigError);
    EXPECT_THROW(parse_config("[experiment]\nmode = both\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\nclip = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("[train\nlr = 1\n"), ConfigError);
}

TEST(Config, SeedList)
{
    EXPECT_EQ(parse_config("[experiment]\nseeds = 3, 1,4\n").seeds, (std::vector<std::uint64_t>{3, 1, 4}));
}

TEST(Config, MissingDataPathIsDataError)
{
    ExperimentConfig c = parse_config("[experiment]\ntask = fewshot\n[data]\nsource = nmim\nraw = /no/such/file.nmim\n");
    try {
        c.validate();
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("/no/such/file.nmim"), std::string::npos);
    }
}

TEST(Report, CsvHeaderAndRows)
{
    MetricsRecord r;
    r.iter = 3;
    r.task_loss = 0.5;
    r.rare = true;
    r.phase = "B";
    const std::string csv = metrics_csv({r}, true);
    const auto rows = csv_rows(csv);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), std::string(metrics_header) + ",phase");
    EXPECT_EQ(rows[0].size(), 14u);
    EXPECT_EQ(rows[1].size(), 14u);
    EXPECT_EQ(rows[1][0], "3");
    EXPECT_EQ(rows[1][12], "1");
    EXPECT_EQ(rows[1][13], "B");
    EXPECT_EQ(csv_rows(metrics_csv({r}))[0].size(), 13u);
}

TEST(Report, SvgIsWellFormedXml)
{
    Panel p{"a <b> & \"c\"", "norm", {{"s", "#123456", {1, 2, 3}, {0.5, std::nan(""), 2.0}}}, {2}};
    const std::string svg = svg_chart("title & <more>", {p, p});
    boost::property_tree::ptree tree;
    std::istringstream in(svg);
    ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
    EXPECT_EQ(tree.count("svg"), 1u);
    EXPECT_NE(svg.find("stroke=\"red\""), std::string::npos);
}

TEST(Gradcheck, ReportCoversEveryPrimitiveOnce)
{
    const GradcheckReport rep = run_gradcheck_suite(1);
    EXPECT_TRUE(rep.passed);
    for (const auto& name : primitive_names()) {
        std::size_t n = 0;
        for (const auto& r : rep.results) n += r.name == name;
        EXPECT_EQ(n, 1u) << name;
    }
}

TEST(Gradcheck, CorruptedBackwardIsNamed)
{
    auto params = std::make_shared<Parameter>("x", Tensor::row({0.3, -0.8, 1.1}));
    GradcheckCase bad{"corrupted_tanh",
                      [p = params.get()](Tape& t) {
                          Var x = t.param(*p);
                          Tensor y = x.value();
                          for (double& v : y.values()) v = std::tanh(v);
                          return t.record(std::move(y), {x},
                                          [](Tape& tp, std::size_t self) {
                                              const std::size_t in = tp.input(self, 0);
                                              if (!tp.wants_grad(in)) return;
                                              const Tensor& g = tp.grad_of(self);
                                              const Tensor& yv = tp.value_of(self);
                                              Tensor& gi = tp.grad_slot(in);
                                              for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * (1.0 - yv[i]);
                                          },
                                          "tanh");
                      },
                      {params.get()},
                      params};
    const GradcheckResult r = run_gradcheck(bad, 1);
    EXPECT_FALSE(r.passed);
    EXPECT_EQ(r.name, "corrupted_tanh");
    EXPECT_GT(r.max_rel_error, 1e-4);
}

TEST_F(CliTest, GradcheckExitsZero)
{
    const CliResult r = run_cli("gradcheck");
    EXPECT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("memory_step"), std::string::npos);
    EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, UsageAndConfigErrorsExitTwo)
{
    EXPECT_EQ(run_cli("").status, 2);
    EXPECT_EQ(run_cli("fewshot --bogus").status, 2);
    EXPECT_EQ(run_cli("fewshot").status, 2);
    EXPECT_EQ(run_cli("fewshot --config " + (dir / "absent.ini").string()).status, 2);
    const std::string bad = write_config("bad.ini", "[train]\nlearning_rate = 1\n");
    const CliResult r = run_cli("fewshot --config " + bad);
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.output.find("learning_rate"), std::string::npos);
}

TEST_F(CliTest, MissingDatasetExitsTwoNamingPath)
{
    const std::string missing = (dir / "nowhere" / "digits.nmim").string();
    const std::string cfg = write_config("m.ini", "[experiment]\ntask = fewshot\n[data]\nsource = nmim\nraw = " + missing + "\n");
    const CliResult r = run_cli("fewshot --config " + cfg + " --out " + (dir / "o").string());
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
}

TEST_F(CliTest, DivergenceExitsOne)
{
    std::string text = trajectory_ini;
    text.replace(text.find("lr = 0.001"), 10, "lr = 1e300\noptimizer = sgd");
    const std::string cfg = write_config("div.ini", text);
    const CliResult r = run_cli("trajectory --config " + cfg + " --out " + (dir / "o").string());
    EXPECT_EQ(r.status, 1) << r.output;
    EXPECT_NE(r.output.find("DIVERGED"), std::string::npos) << r.output;
}

TEST_F(CliTest, FewshotIsReproducibleAndSummarized)
{
    const std::string cfg = write_config("fs.ini", fewshot_ini);
    const CliResult a = run_cli("fewshot --config " + cfg + " --seed 1 --seed 2 --out " + (dir / "a").string());
    const CliResult b = run_cli("fewshot --config " + cfg + " --seed 1 --seed 2 --out " + (dir / "b").string());
    ASSERT_EQ(a.status, 0) << a.output;
    ASSERT_EQ(b.status, 0) << b.output;
    for (const char* s : {"seed_1", "seed_2"}) {
        const std::string ca = slurp(dir / "a" / s / "hybrid" / "metrics.csv");
        EXPECT_FALSE(ca.empty());
        EXPECT_EQ(ca, slurp(dir / "b" / s / "hybrid" / "metrics.csv"));
        EXPECT_EQ(csv_rows(ca).size(), 5u);
    }
    const std::string summary = slurp(dir / "a" / "summary.txt");
    EXPECT_NE(summary.find("aggregate run=hybrid mean="), std::string::npos) << summary;
    EXPECT_NE(summary.find("std="), std::string::npos);
    EXPECT_NE(summary.find("n=2"), std::string::npos);
}

TEST_F(CliTest, ParallelSeedsMatchSequential)
{
    const std::string cfg = write_config("fs.ini", fewshot_ini);
    ASSERT_EQ(run_cli("fewshot --config " + cfg + " --seed 1 --seed 2 --out " + (dir / "s").string()).status, 0);
    ASSERT_EQ(run_cli("fewshot --config " + cfg + " --seed 1 --seed 2 --parallel --out " + (dir / "p").string()).status, 0);
    for (const char* s : {"seed_1", "seed_2"})
        EXPECT_EQ(slurp(dir / "s" / s / "hybrid" / "metrics.csv"), slurp(dir / "p" / s / "hybrid" / "metrics.csv"));
    EXPECT_EQ(slurp(dir / "s" / "summary.txt"), slurp(dir / "p" / "summary.txt"));
}

TEST_F(CliTest, TrajectoryHas150RowsWithPhases)
{
    const std::string cfg = write_config("t.ini", trajectory_ini);
    const CliResult r = run_cli("trajectory --config " + cfg + " --mode true-only --out " + (dir / "o").string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto rows = csv_rows(slurp(dir / "o" / "seed_1" / "true-only" / "metrics.csv"));
    ASSERT_EQ(rows.size(), 151u);
    EXPECT_EQ(rows[0].back(), "phase");
    std::size_t pre = 0, adapt = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        ASSERT_EQ(rows[i].size(), 14u);
        (rows[i].back() == "pretrain" ? pre : adapt)++;
    }
    EXPECT_EQ(pre, 100u);
    EXPECT_EQ(adapt, 50u);
    boost::property_tree::ptree tree;
    std::ifstream svg(dir / "o" / "seed_1" / "true-only" / "curve.svg");
    EXPECT_NO_THROW(boost::property_tree::read_xml(svg, tree));
}

TEST_F(CliTest, ShareSgFeedsStreamBOnPeriod)
{
    const std::string cfg = write_config("s.ini", share_ini);
    const CliResult r = run_cli("share-sg --config " + cfg + " --out " + (dir / "o").string());
    ASSERT_EQ(r.status, 0) << r.output;
    for (const char* run : {"shared", "separate"}) {
        const auto rows = csv_rows(slurp(dir / "o" / "seed_1" / run / "metrics.csv"));
        std::vector<std::size_t> b_iters;
        std::size_t a_rows = 0;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].back() == "B") {
                b_iters.push_back(std::stoul(rows[i][0]));
                EXPECT_EQ(rows[i][12], "1");
            } else {
                ++a_rows;
            }
        }
        EXPECT_EQ(b_iters, (std::vector<std::size_t>{3, 6, 9})) << run;
        EXPECT_EQ(a_rows, 9u);
    }
}

TEST(ShareSg, TaskInitialisationIdenticalAcrossPair)
{
    ExperimentConfig c = parse_config(share_ini);
    const TrajectoryData data = load_trajectory_data(c);
    const RunResult shared = run_share_sg(c, data, 5, true), separate = run_share_sg(c, data, 5, false);
    EXPECT_EQ(shared.initial_task_params, separate.initial_task_params);
    EXPECT_FALSE(shared.initial_task_params.empty());
}

TEST_F(CliTest, RareClassWritesPairedRunsAndChart)
{
    const std::string cfg = write_config("r.ini", R"([experiment]
task = rare-class
seeds = 1
[data]
synth_per_class = 5
[model]
filters = 2
slots = 3
width = 6
sg_hidden = 4
[train]
lr = 0.001
iterations = 10
batch_size = 3
[rare]
period = 5
eval_every = 5
)");
    const CliResult r = run_cli("rare-class --config " + cfg + " --out " + (dir / "o").string());
    ASSERT_EQ(r.status, 0) << r.output;
    for (const char* run : {"hybrid", "true-only"}) {
        const auto rows = csv_rows(slurp(dir / "o" / "seed_1" / run / "metrics.csv"));
        ASSERT_EQ(rows.size(), 11u);
        for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i][12], i % 5 == 0 ? "1" : "0");
    }
    boost::property_tree::ptree tree;
    std::ifstream svg(dir / "o" / "seed_1" / "curve.svg");
    ASSERT_NO_THROW(boost::property_tree::read_xml(svg, tree));
    EXPECT_EQ(tree.get_child("svg").count("g"), 2u);
}
