#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mvspline.h"

// End-to-end tests of the installed command-line tool; the binary path and
// the fixture directory come from the build system.

namespace {

using nlohmann::json;

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MVSPLINE_CLI_PATH) + " " + args + " 2>&1";
  RunResult res;
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe) != nullptr) res.out += buf;
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string fixture(const std::string& name) {
  return std::string(MVSPLINE_TEST_DATA) + "/" + name;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Balanced null-data CSV written through the C API.
std::string write_toy_csv(const std::string& path, bool unbalanced = false) {
  mvs_dataset* ds = nullptr;
  REQUIRE(mvs_generate_dataset(20, 2, 0.25, "null", "normal", 31, &ds) == MVS_OK);
  REQUIRE(mvs_dataset_write_csv(ds, path.c_str()) == MVS_OK);
  mvs_dataset_free(ds);
  if (unbalanced) {
    // Blank one outcome cell.
    std::ifstream in(path);
    std::stringstream content;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      if (++row == 3) {
        const auto last = line.rfind(',');
        line = line.substr(0, last + 1);
      }
      content << line << "\n";
    }
    in.close();
    std::ofstream out(path);
    out << content.str();
  }
  return path;
}

std::vector<std::vector<double>> parse_curve_csv(const std::string& text,
                                                 std::vector<std::string>* header) {
  std::istringstream in(text);
  std::string line;
  REQUIRE(std::getline(in, line));
  if (header != nullptr) {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header->push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream r(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(r, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("cli: version flag") {
  const auto res = run_cli("--version");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find(mvs_version()) != std::string::npos);
}

TEST_CASE("cli: joint test produces a lattice p-value and is deterministic") {
  const std::string csv = write_toy_csv("cli_toy.csv");
  const std::string flags =
      " test --data cli_toy.csv --method covariate --m 99 --seed 1 --knots 5 "
      "--workers 2 --out ";
  auto first = run_cli(flags + "cli_rep1.json");
  REQUIRE_MESSAGE(first.exit_code == 0, first.out);
  auto second = run_cli(flags + "cli_rep2.json");
  REQUIRE(second.exit_code == 0);

  json a = json::parse(slurp("cli_rep1.json"));
  json b = json::parse(slurp("cli_rep2.json"));
  const double p = a["joint_test"]["p_value"].get<double>();
  const double scaled = p * 99.0;
  CHECK(std::fabs(scaled - std::round(scaled)) < 1e-9);

  // Structural check against the shipped report schema: every required key at
  // the top level and inside config/data/joint_test must be present.
  const json schema = json::parse(slurp(fixture("../../docs/report.schema.json")));
  for (const auto& key : schema["required"])
    CHECK_MESSAGE(a.contains(key.get<std::string>()),
                  "missing key " << key.get<std::string>());
  for (const char* section : {"config", "data", "joint_test"})
    for (const auto& key : schema["properties"][section]["required"])
      CHECK_MESSAGE(a[section].contains(key.get<std::string>()),
                    section << " missing key " << key.get<std::string>());
  CHECK(a["alt_fit"]["spline_var"].is_array());
  CHECK(a["null_fit"]["loglik"].is_number());
  CHECK(a["joint_test"]["n_failed_fits"].is_number_integer());
  CHECK(a["data"]["balanced"].get<bool>());

  // Byte-identical apart from the timestamp.
  a.erase("generated_at");
  b.erase("generated_at");
  CHECK(a.dump() == b.dump());

  std::remove("cli_toy.csv");
  std::remove("cli_rep1.json");
  std::remove("cli_rep2.json");
}

TEST_CASE("cli: univariate flag adds per-outcome tests with bonferroni") {
  write_toy_csv("cli_uni.csv");
  const auto res = run_cli(
      "test --data cli_uni.csv --m 39 --seed 2 --knots 4 --univariate --out "
      "cli_uni.json");
  REQUIRE_MESSAGE(res.exit_code == 0, res.out);
  const json rep = json::parse(slurp("cli_uni.json"));
  REQUIRE(rep.contains("univariate_tests"));
  REQUIRE(rep["univariate_tests"].size() == 2);
  for (const auto& t : rep["univariate_tests"]) {
    const double p = t["p_value"].get<double>();
    const double pb = t["p_bonferroni"].get<double>();
    CHECK(pb == doctest::Approx(std::min(1.0, 2.0 * p)));
  }
  CHECK(rep.contains("bonferroni_joint_p"));
  std::remove("cli_uni.csv");
  std::remove("cli_uni.json");
}

TEST_CASE("cli: exit codes for data problems") {
  auto missing = run_cli("test --data nope.csv");
  CHECK(missing.exit_code == 2);

  write_toy_csv("cli_unbal.csv", true);
  auto residual = run_cli("test --data cli_unbal.csv --method residual --m 19");
  CHECK(residual.exit_code == 2);
  CHECK(residual.out.find("balanced") != std::string::npos);
  // Covariate and cholesky methods accept the same unbalanced file.
  auto covariate = run_cli(
      "test --data cli_unbal.csv --method covariate --m 19 --seed 3 --knots 4");
  CHECK(covariate.exit_code == 0);
  std::remove("cli_unbal.csv");

  auto bad_method = run_cli("test --data cli_unbal.csv --method bogus");
  CHECK(bad_method.exit_code == 2);
}

TEST_CASE("cli: exit code 3 for fit errors") {
  // Duplicate covariate column makes the fixed design collinear.
  std::ofstream out("cli_collinear.csv");
  out << "id,s,x_1,x_2,y_1\n";
  for (int i = 0; i < 12; ++i)
    out << "s" << i << "," << 0.1 * i << "," << i << "," << 2 * i << ","
        << (i % 3) << "\n";
  out.close();
  const auto res = run_cli("test --data cli_collinear.csv --m 19 --knots 3");
  CHECK(res.exit_code == 3);
  CHECK(res.out.find("collinear") != std::string::npos);
  std::remove("cli_collinear.csv");
}

TEST_CASE("cli: pinned uniform-signal fixture rejects at alpha = 0.05") {
  // Fixture generated from the uniform scenario (N=200, K=5, rho=0.25,
  // gamma=0.75) with a seed verified to give p <= 0.05 at M=99.
  const auto res = run_cli("test --data " + fixture("uniform_n200_k5.csv") +
                           " --m 99 --seed 12345 --knots 30 --knot-range -2,2 "
                           "--workers 2 --out cli_power.json");
  REQUIRE_MESSAGE(res.exit_code == 0, res.out);
  const json rep = json::parse(slurp("cli_power.json"));
  CHECK(rep["joint_test"]["p_value"].get<double>() <= 0.05);
  CHECK(rep["joint_test"]["reject_at_alpha"].get<bool>());
  std::remove("cli_power.json");
}

TEST_CASE("cli: fit-curve output shape, flatness on null data, reference shift") {
  const std::string data = fixture("null_n200_k2.csv");
  const auto res = run_cli("fit-curve --data " + data +
                           " --knots 30 --grid 80 --reference-x zero --out "
                           "cli_curve0.csv");
  REQUIRE_MESSAGE(res.exit_code == 0, res.out);
  std::vector<std::string> header;
  const auto rows = parse_curve_csv(slurp("cli_curve0.csv"), &header);
  REQUIRE(rows.size() == 80);
  REQUIRE(header.size() == 3);  // s + K outcomes
  CHECK(header[0] == "s");
  for (std::size_t k = 1; k < 3; ++k) {
    double lo = 1e300, hi = -1e300;
    for (const auto& row : rows) {
      lo = std::min(lo, row[k]);
      hi = std::max(hi, row[k]);
    }
    CHECK(hi - lo < 0.5);  // near-flat under the null fixture
  }

  const auto res_mean = run_cli("fit-curve --data " + data +
                                " --knots 30 --grid 80 --reference-x mean --out "
                                "cli_curve_mean.csv");
  REQUIRE(res_mean.exit_code == 0);
  const auto rows_mean = parse_curve_csv(slurp("cli_curve_mean.csv"), nullptr);

  // The reference-x change shifts each curve by beta_1' x_mean, a constant.
  mvs_dataset* ds = nullptr;
  REQUIRE(mvs_dataset_read_csv(data.c_str(), &ds) == MVS_OK);
  double xbar = 0.0;
  REQUIRE(mvs_dataset_covariate_means(ds, &xbar, 1) == MVS_OK);
  mvs_fit_options opts;
  mvs_fit_options_init(&opts);
  opts.n_knots = 30;
  opts.reml = 1;
  mvs_fit* fit = nullptr;
  REQUIRE(mvs_fit_model(ds, &opts, &fit) == MVS_OK);
  double beta[6];  // 3 coefficient rows x K=2
  REQUIRE(mvs_fit_beta(fit, beta, 6) == MVS_OK);
  for (std::size_t k = 1; k < 3; ++k) {
    const double want_shift = beta[2 + (k - 1)] * xbar;  // x-coefficient row
    for (std::size_t i = 0; i < rows.size(); ++i)
      CHECK(rows_mean[i][k] - rows[i][k] == doctest::Approx(want_shift).epsilon(1e-9));
  }
  mvs_fit_free(fit);
  mvs_dataset_free(ds);
  std::remove("cli_curve0.csv");
  std::remove("cli_curve_mean.csv");
}

TEST_CASE("cli: synthetic application-shaped workflow (unbalanced, explicit range)") {
  // Synthetic stand-in for a multi-outcome trial: 5 outcomes, indicator and
  // baseline covariates, missing outcome cells, s on [0, 1].
  const std::string data = fixture("../../data/synthetic_ccts_like.csv");
  const auto res = run_cli("test --data " + data +
                           " --method covariate --m 19 --seed 11 --knots 5 "
                           "--knot-range 0,1 --workers 2 --out cli_app.json");
  REQUIRE_MESSAGE(res.exit_code == 0, res.out);
  const json rep = json::parse(slurp("cli_app.json"));
  CHECK_FALSE(rep["data"]["balanced"].get<bool>());
  CHECK(rep["data"]["k"] == 5);
  CHECK(rep["data"]["p"] == 6);
  const auto knots = rep["alt_fit"]["knots"];
  REQUIRE(knots.size() == 5);
  CHECK(knots[0].get<double>() == doctest::Approx(1.0 / 6.0));
  CHECK(knots[4].get<double>() == doctest::Approx(5.0 / 6.0));
  std::remove("cli_app.json");
}

TEST_CASE("cli: simulate runs plans and rejects unknown keys") {
  std::ofstream plan("cli_plan.txt");
  plan << "n = 20\nk = 2\nr = 2\nm = 19\nknots = 3\nseed = 4\nmethods = covariate\n";
  plan.close();
  const auto res = run_cli("simulate --plan cli_plan.txt --workers 2 --out cli_sim.csv");
  REQUIRE_MESSAGE(res.exit_code == 0, res.out);
  CHECK(res.out.find("(20,2)") != std::string::npos);
  const std::string csv = slurp("cli_sim.csv");
  CHECK(csv.find("rejection_rate") != std::string::npos);
  // rejection rate over two replications is 0, .5, or 1
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  REQUIRE(std::getline(in, line));
  std::istringstream row(line);
  std::string cell;
  std::vector<std::string> cells;
  while (std::getline(row, cell, ',')) cells.push_back(cell);
  const double rate = std::stod(cells[11]);
  CHECK((rate == 0.0 || rate == 0.5 || rate == 1.0));
  std::remove("cli_plan.txt");
  std::remove("cli_sim.csv");

  std::ofstream bad("cli_badplan.txt");
  bad << "rho_ = 1\n";
  bad.close();
  const auto err = run_cli("simulate --plan cli_badplan.txt");
  CHECK(err.exit_code == 2);
  CHECK(err.out.find("rho") != std::string::npos);
  std::remove("cli_badplan.txt");
}
