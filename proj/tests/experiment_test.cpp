#include "cmdp/experiment.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace cmdp;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("cmdp_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CMDP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(CmdpJson, RoundTripIsBitExact) {
  Cmdp m = random_cmdp(3, 4, 3, 0.87, 0.4);
  Cmdp back = cmdp_from_string(cmdp_to_json(m));
  EXPECT_EQ(back.transition, m.transition);
  EXPECT_EQ(back.reward, m.reward);
  EXPECT_EQ(back.utility, m.utility);
  EXPECT_EQ(back.initial_dist, m.initial_dist);
  EXPECT_EQ(back.offset, m.offset);
  EXPECT_EQ(back.discount, m.discount);
  EXPECT_EQ(cmdp_to_json(back), cmdp_to_json(m));
}

TEST(CmdpJson, RejectsMalformedDocuments) {
  const std::string good = cmdp_to_json(figure1_cmdp(0.9, 0.8));
  Json j = Json::parse(good);
  j["extra"] = 1;
  EXPECT_THROW(cmdp_from_json(j), ConfigError);

  j = Json::parse(good);
  j.erase("rho");
  EXPECT_THROW(cmdp_from_json(j), ConfigError);

  j = Json::parse(good);
  j["P"][0][0][3] = 0.5;
  EXPECT_THROW(cmdp_from_json(j), ConfigError);

  j = Json::parse(good);
  j["gamma"] = 1.0;
  EXPECT_THROW(cmdp_from_json(j), ConfigError);

  j = Json::parse(good);
  j["r"][0] = Json::array({0.0});
  EXPECT_THROW(cmdp_from_json(j), ConfigError);

  EXPECT_THROW(cmdp_from_string("{not json"), ConfigError);
}

TEST(FeatureJson, RoundTripAndBoundCheck) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix phi(6, 2);
  for (int i = 0; i < phi.size(); ++i) phi.data()[i] = n(gen);
  auto f = FeatureMap::from_rows(3, 2, phi);
  auto back = feature_map_from_json(Json::parse(feature_map_to_json(f)));
  EXPECT_EQ(back.phi, f.phi);
  EXPECT_EQ(back.bound, f.bound);
  Json j = Json::parse(feature_map_to_json(f));
  j["B"] = 0.5 * f.bound;
  EXPECT_THROW(feature_map_from_json(j), ConfigError);
}

TEST(Figure1, IsValidAndMatchesClosedForm) {
  Cmdp m = figure1_cmdp(0.9, 0.8);
  EXPECT_TRUE(validate(m).empty());
  const double x = 3.0, g = 0.9;
  auto v1 = evaluate_policy(m, softmax_policy(figure1_params(0.0, std::log(x), std::log(x), 0.0)));
  const double p = x / (1 + x), q = x / (1 + x);
  EXPECT_NEAR(v1.v_r(0), g * p * q, 1e-14);
  EXPECT_NEAR(v1.v_g(0), (1 - p) + g * p * q, 1e-14);
  EXPECT_THROW(figure1_cmdp(1.0, 0.8), Error);
  EXPECT_THROW(figure1_cmdp(0.9, 0.0), Error);
}

TEST(RandomCmdp, DeterministicFeasibleAndValid) {
  Cmdp a = random_cmdp(17, 6, 3, 0.9, 0.5);
  Cmdp b = random_cmdp(17, 6, 3, 0.9, 0.5);
  EXPECT_EQ(cmdp_to_json(a), cmdp_to_json(b));
  EXPECT_NE(cmdp_to_json(a), cmdp_to_json(random_cmdp(18, 6, 3, 0.9, 0.5)));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Cmdp m = random_cmdp(seed, 5, 3, 0.9, 0.5);
    EXPECT_TRUE(validate(m).empty());
    auto lp = solve_lp(m);
    EXPECT_EQ(lp.status, LpStatus::optimal);
    EXPECT_GT(lp.slater_slack, 0.0);
  }
  EXPECT_THROW(random_cmdp(0, 0, 3, 0.9, 0.5), Error);
  EXPECT_THROW(random_cmdp(0, 3, 3, 0.9, 1.0), Error);
}

TEST(RandomCmdp, SlackMatchesQuantileConstruction) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Cmdp m = random_cmdp(seed, 6, 3, 0.9, 0.3);
    const double hi = optimize_occupancy(m, m.utility).objective;
    const double lo = -optimize_occupancy(m, -m.utility).objective;
    EXPECT_NEAR(solve_lp(m).slater_slack, 0.7 * (hi - lo), 1e-9);
  }
}

TEST(RandomCmdp, MeanSlackRegressionBand) {
  // Recorded from the first run over seeds 0..19 at 10 states, 5 actions.
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) sum += solve_lp(random_cmdp(seed, 10, 5, 0.9, 0.5)).slater_slack;
  EXPECT_NEAR(sum / 20.0, 3.4362963808437499, 1e-9);
}

TEST(TheoremBounds, Formulae) {
  auto b = theorem_bounds(0.9, 1.0, 10000);
  EXPECT_NEAR(b.gap, 7.0, 1e-12);
  EXPECT_NEAR(b.violation, 6.0, 1e-12);
  auto b4 = theorem_bounds(0.9, 0.3, 40000);
  auto b1 = theorem_bounds(0.9, 0.3, 10000);
  EXPECT_NEAR(b4.gap, 0.5 * b1.gap, 1e-12);
  EXPECT_NEAR(b4.violation, 0.5 * b1.violation, 1e-12);
  EXPECT_NEAR(b1.violation, (2.0 / 0.3 + 1.2) / (0.01 * 100.0), 1e-12);
  EXPECT_THROW(theorem_bounds(0.9, 0.0, 10), Error);
}

TEST(ExperimentConfig, ParsesAllSourcesAndRejectsUnknownKeys) {
  auto c = experiment_from_json(Json::parse(R"({"instance":{"source":"random","seed":4,"states":3,"actions":2},
      "algorithm":"npg_pd_fa","T":20,"seeds":[1,2],"output":"x","W":3.5})"));
  EXPECT_EQ(c.algorithm, Algorithm::npg_pd_fa);
  EXPECT_EQ(std::get<RandomInstance>(c.instance).n_states, 3);
  EXPECT_EQ(c.seeds.size(), 2u);
  EXPECT_EQ(c.W, 3.5);

  auto f = experiment_from_json(Json::parse(R"({"instance":{"source":"file","path":"m.json"},"algorithm":"dual","T":5})"),
                                "/base");
  EXPECT_EQ(std::get<FileInstance>(f.instance).path, "/base/m.json");

  for (const char* bad : {
           R"({"instance":{"source":"figure1"},"algorithm":"npg_pd","T":5,"typo":1})",
           R"({"instance":{"source":"figure1","gama":0.9},"algorithm":"npg_pd","T":5})",
           R"({"instance":{"source":"moon"},"algorithm":"npg_pd","T":5})",
           R"({"instance":{"source":"figure1"},"algorithm":"sgd","T":5})",
           R"({"instance":{"source":"figure1"},"algorithm":"npg_pd","T":0})",
           R"({"instance":{"source":"figure1"},"algorithm":"npg_pd","T":5,"seeds":[]})",
           R"({"instance":{"source":"figure1"},"algorithm":"npg_pd","T":"five"})",
           R"({"instance":{"source":"figure1"},"algorithm":"dual","T":5,"delta":0.1})",
           R"({"algorithm":"npg_pd","T":5})"})
    EXPECT_THROW(experiment_from_json(Json::parse(bad)), ConfigError) << bad;
}

TEST(RunExperiment, WritesCsvAndConsistentSummary) {
  TempDir tmp;
  ExperimentConfig c;
  c.instance = Figure1Instance{0.9, 0.8};
  c.algorithm = Algorithm::npg_pd;
  c.T = 100;
  c.seeds = {0, 1};
  c.output = (tmp.path() / "run").string();
  auto res = run_experiment(c);

  ASSERT_EQ(res.seeds.size(), 2u);
  std::ifstream in(res.seeds[0].csv_path);
  auto table = read_csv(in);
  ASSERT_EQ(table.rows.size(), 100u);
  const int gap = table.column("gap"), viol = table.column("violation");
  const int vr = table.column("v_r"), avg = table.column("avg_v_r");
  EXPECT_EQ(table.rows.back()[gap], res.seeds[0].gap);
  EXPECT_EQ(table.rows.back()[viol], res.seeds[0].violation);

  double sum = 0.0;
  for (std::size_t t = 0; t < table.rows.size(); ++t) {
    sum += table.rows[t][vr];
    EXPECT_NEAR(table.rows[t][avg], sum / (t + 1), 1e-12);
  }

  Json summary = Json::parse(slurp(res.summary_path));
  EXPECT_EQ(summary["runs"].size(), 2u);
  EXPECT_EQ(summary["runs"][0]["gap"].get<double>(), res.seeds[0].gap);
  const double bound_gap = summary["bounds"]["gap"].get<double>();
  EXPECT_EQ(summary["runs"][0]["pass_gap"].get<bool>(), table.rows.back()[gap] <= bound_gap);
  EXPECT_EQ(summary["pass"].get<bool>(), res.pass);
  EXPECT_NEAR(summary["oracle"]["v_r_star"].get<double>(), 0.9, 1e-9);
}

TEST(RunExperiment, RerunIsByteIdentical) {
  TempDir tmp;
  ExperimentConfig c;
  c.instance = RandomInstance{2, 4, 3, 0.9, 0.5};
  c.algorithm = Algorithm::sample_loglinear;
  c.T = 10;
  c.K = 10;
  c.seeds = {3, 4, 5};
  c.output = (tmp.path() / "a").string();
  auto a = run_experiment(c);
  c.output = (tmp.path() / "b").string();
  auto b = run_experiment(c);
  for (std::size_t i = 0; i < a.seeds.size(); ++i) {
    EXPECT_TRUE(a.seeds[i].error.empty()) << a.seeds[i].error;
    EXPECT_EQ(slurp(a.seeds[i].csv_path), slurp(b.seeds[i].csv_path));
  }
}

TEST(RunExperiment, CadenceKeepsFinalRow) {
  TempDir tmp;
  ExperimentConfig c;
  c.algorithm = Algorithm::npg_pd_fa;
  c.T = 25;
  c.eval_every = 10;
  c.output = tmp.path().string();
  auto res = run_experiment(c);
  std::ifstream in(res.seeds[0].csv_path);
  auto table = read_csv(in);
  ASSERT_EQ(table.rows.size(), 4u);
  EXPECT_EQ(table.rows.back()[table.column("t")], 24.0);
  EXPECT_GE(table.column("kappa"), 0);
}

TEST(RunExperiment, SeedFailuresLandInSummary) {
  TempDir tmp;
  ExperimentConfig c;
  c.instance = RandomInstance{1, 3, 2, 0.9, 0.5};
  c.algorithm = Algorithm::sample_general;  // one-hot scores are rank deficient without sigma_F
  c.T = 3;
  c.output = tmp.path().string();
  auto res = run_experiment(c);
  EXPECT_FALSE(res.pass);
  EXPECT_FALSE(res.seeds[0].error.empty());
  Json summary = Json::parse(slurp(res.summary_path));
  EXPECT_TRUE(summary["runs"][0].contains("error"));
}

TEST(Cli, ExitCodes) {
  TempDir tmp;
  const fs::path inst = tmp.path() / "m.json";
  save_cmdp(inst.string(), figure1_cmdp(0.9, 0.8));
  EXPECT_EQ(run_cli("oracle --instance " + inst.string()), 0);
  EXPECT_EQ(run_cli("gen --seed 1 --states 3 --actions 2"), 0);
  EXPECT_EQ(run_cli("figure1 --gamma 0.5 --b 0.3"), 0);

  const fs::path ok = tmp.path() / "ok.json";
  write_file(ok, R"({"instance":{"source":"file","path":"m.json"},"algorithm":"npg_pd","T":50,"output":"out"})");
  EXPECT_EQ(run_cli("solve --config " + ok.string()), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "out" / "summary.json"));

  const fs::path bad = tmp.path() / "bad.json";
  write_file(bad, R"({"instance":{"source":"figure1"},"algorithm":"npg_pd","T":10,"colour":"red"})");
  EXPECT_EQ(run_cli("solve --config " + bad.string()), 2);
  EXPECT_EQ(run_cli("solve --config " + (tmp.path() / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("figure1 --gamma 1.5"), 2);

  // Rank-deficient one-hot scores without sigma_F make every seed fail.
  const fs::path fail = tmp.path() / "fail.json";
  write_file(fail, R"({"instance":{"source":"figure1"},"algorithm":"sample_general","T":2,"output":"f"})");
  EXPECT_EQ(run_cli("solve --config " + fail.string()), 1);
  EXPECT_TRUE(fs::exists(tmp.path() / "f" / "summary.json"));
}
