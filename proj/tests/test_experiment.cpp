#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "bcil/experiment.hpp"
#include "bcil/plot.hpp"

using namespace bcil;
namespace fs = std::filesystem;

namespace {
ExperimentSpec parse(const std::string& text) {
  std::istringstream in(text);
  return parse_experiment_spec(in);
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    for (auto f : split(line, ',')) row.emplace_back(f);
    out.push_back(row);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentSpec tiny_spec() {
  return parse(R"(
[experiment]
task = draw
seed = 5
train_grid = 20
eval_grid = 0, 20
trials = 1
duration = 1.5
[demo]
trials = 1
[model]
layers = 1
units = 4
window = 20
batch = 2
epochs = 3
)");
}
}  // namespace

TEST(Spec, ParsesAllSections) {
  const auto s = parse(R"(
; comment
[experiment]
task = write
letter = B
seed = 9
train_grid = 35, 75
eval_grid = 35,55,75
trials = 4
[demo]
trials = 3
jitter = 0.002
[model]
layers = 2, 6
units = 16
ar_period = 5
lr = 0.003
)");
  EXPECT_EQ(s.task, TaskKind::Write);
  EXPECT_EQ(s.letter, 'B');
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.train_grid, (std::vector<double>{35, 75}));
  EXPECT_EQ(s.eval_grid.size(), 3u);
  EXPECT_EQ(s.trials, 4);
  EXPECT_EQ(s.demo_trials, 3);
  EXPECT_EQ(s.operator_jitter, 0.002);
  EXPECT_EQ(s.layers, (std::vector<int>{2, 6}));
  EXPECT_EQ(s.units, 16);
  EXPECT_EQ(s.model_config(model_slots()[4], 2).ar_period, 5);
  EXPECT_EQ(s.model_config(model_slots()[4], 2).adam.lr, 0.003);
}

TEST(Spec, DefaultsFollowTheTask) {
  const auto draw = parse("[experiment]\ntask = draw\n");
  EXPECT_EQ(draw.eval_grid.size(), 12u);
  EXPECT_EQ(draw.eval_grid.front(), -30);
  EXPECT_EQ(draw.eval_grid.back(), 80);
  const auto erase = parse("[experiment]\ntask = erase\n");
  EXPECT_EQ(erase.train_grid, (std::vector<double>{35, 55, 75}));
}

TEST(Spec, Errors) {
  EXPECT_THROW(parse("[experiment]\ntask = cook\n"), Error);
  EXPECT_THROW(parse("[model]\nunits = many\n"), Error);
  EXPECT_THROW(parse("[model]\nunit = 4\n"), Error);
  EXPECT_THROW(parse("[experiment]\ntrain_grid = 10\neval_grid = 20, 30\n"), Error);
  EXPECT_THROW(parse("[model]\nlayers = 0\n"), Error);
  EXPECT_THROW(load_experiment_spec("/nonexistent/spec.ini"), Error);
}

TEST(SuccessTable, LayoutAndArithmetic) {
  MetricsReport r;
  r.spec = parse("[experiment]\ntask = draw\ntrain_grid = 0\neval_grid = 0, 40\n");
  // S2S-AR: 2/2 at 0, 1/2 at 40
  for (int i = 0; i < 2; ++i) {
    r.trials.push_back({6, "S2S-AR", 0, true, i, true});
    r.trials.push_back({6, "S2S-AR", 40, false, i, i == 0});
  }
  const auto rows = csv_rows(success_table_csv(r, 6));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"model", "input_dims", "output_dims", "0*", "40", "subtotal_learned",
                                               "subtotal_unlearned", "total"}));
  const std::vector<std::string> names{"S2S-w/o-AR", "S2S-AR", "S2M-w/o-AR", "SM2SM-w/o-AR", "SM2SM-AR"};
  const std::vector<std::string> in{"9", "9", "9", "18", "18"};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(rows[i + 1][0], names[i]);
    EXPECT_EQ(rows[i + 1][1], in[i]);
    EXPECT_EQ(rows[i + 1][2], in[i]);
  }
  EXPECT_EQ(rows[2][3], "100");
  EXPECT_EQ(rows[2][4], "50");
  EXPECT_EQ(rows[2][5], "100 (2/2)");
  EXPECT_EQ(rows[2][6], "50 (1/2)");
  EXPECT_EQ(rows[2][7], "75 (3/4)");
}

TEST(SuccessTable, TrainingGridOnlyHasNoUnlearnedColumn) {
  MetricsReport r;
  r.spec = parse("[experiment]\ntask = erase\ntrain_grid = 35, 55\neval_grid = 35, 55\n");
  const auto rows = csv_rows(success_table_csv(r, 6));
  EXPECT_EQ(rows[0], (std::vector<std::string>{"model", "input_dims", "output_dims", "35*", "55*", "subtotal_learned",
                                               "total"}));
}

TEST(Plot, EmptyCsvRejected) {
  std::istringstream empty("");
  EXPECT_THROW(parse_plot_csv(empty), Error);
  std::istringstream header_only("epoch,loss\n");
  EXPECT_THROW(render_svg(parse_plot_csv(header_only)), Error);
}

TEST(Plot, TwoPointsTwoVertices) {
  std::istringstream in("t_ms,s_th1\n0,0.1\n1,0.2\n");
  const std::string svg = render_svg(parse_plot_csv(in));
  const std::regex poly("<polyline[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, poly));
  std::istringstream pts(m[1].str());
  std::string v;
  int n = 0;
  while (pts >> v) ++n;
  EXPECT_EQ(n, 2);
  EXPECT_NE(svg.find("rad"), std::string::npos);
  EXPECT_NE(svg.find("ms"), std::string::npos);
}

TEST(Plot, ByteIdentical) {
  const std::string csv = "epoch,S2S-AR,SM2SM-AR\n0,0.5,0.4\n1,0.3,\n2,0.1,0.2\n";
  std::istringstream a(csv), b(csv);
  EXPECT_EQ(render_svg(parse_plot_csv(a)), render_svg(parse_plot_csv(b)));
}

TEST(Matrix, WritesFiveRowTableAndIsReproducible) {
  const auto spec = tiny_spec();
  const fs::path a = fs::temp_directory_path() / "bcil_matrix_a";
  const fs::path b = fs::temp_directory_path() / "bcil_matrix_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto report = run_matrix(spec, a.string());
  run_matrix(spec, b.string());
  EXPECT_EQ(report.models.size(), 5u);
  EXPECT_EQ(report.trials.size(), 10u);

  const auto rows = csv_rows(slurp(a / "success_L1.csv"));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0][3], "0");
  EXPECT_EQ(rows[0][4], "20*");
  // totals agree with a recount of the trial flags
  for (std::size_t i = 1; i < rows.size(); ++i) {
    int s = 0, n = 0;
    for (const auto& t : report.trials)
      if (t.model == rows[i][0]) {
        ++n;
        s += t.success;
      }
    EXPECT_EQ(rows[i].back(), percent(s, n) + " (" + std::to_string(s) + "/" + std::to_string(n) + ")");
  }

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  EXPECT_GE(files.size(), 5u + 4u + 1u);
  for (const auto& f : files) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}
