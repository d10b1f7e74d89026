#include <doctest.h>

#include <algorithm>
#include <random>

#include <Eigen/Cholesky>

#include "support.h"
#include "wbm/errors.h"

using namespace wbm;

namespace {

// sum_i c_i |x_k(i) - a_i| + sum_j d_j (x_k(j) - b_j)^2 over a small parameter vector.
class ToyObjective final : public LeastAbsoluteObjective {
 public:
  struct Row {
    int param;
    ResidualKind kind;
    double coeff;
    double target;
  };
  ToyObjective(int n, std::vector<Row> rows) : n_(n), rows_(std::move(rows)) {}

  int num_params() const override { return n_; }
  std::vector<std::string> term_names() const override { return {"abs", "sq"}; }
  std::vector<double> term_weights() const override { return {1.0, 1.0}; }
  void evaluate(const Eigen::VectorXd& x, ResidualSet& out) const override {
    for (const auto& r : rows_) {
      out.add_row(r.kind == ResidualKind::kAbsolute ? 0 : 1, 0, r.kind, r.coeff, x(r.param) - r.target);
      out.add_derivative(r.param, 1.0);
    }
  }
  std::unique_ptr<NormalSystem> make_system() const override { return make_dense_system(n_); }

 private:
  int n_;
  std::vector<Row> rows_;
};

class PoisonObjective final : public LeastAbsoluteObjective {
 public:
  int num_params() const override { return 1; }
  std::vector<std::string> term_names() const override { return {"good", "bad"}; }
  std::vector<double> term_weights() const override { return {1.0, 1.0}; }
  void evaluate(const Eigen::VectorXd& x, ResidualSet& out) const override {
    out.add_row(0, 0, ResidualKind::kSquared, 1.0, x(0));
    out.add_derivative(0, 1.0);
    out.add_row(1, 7, ResidualKind::kAbsolute, 1.0, std::nan(""));
    out.add_derivative(0, 1.0);
  }
  std::unique_ptr<NormalSystem> make_system() const override { return make_dense_system(1); }
};

}  // namespace

TEST_CASE("block-banded and dense systems solve alike") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int block = 4, blocks = 6, bandwidth = 1, n = block * blocks;
  auto dense = make_dense_system(n);
  auto banded = make_block_banded_system(block, blocks, bandwidth);
  for (int row = 0; row < 200; ++row) {
    const int b = std::uniform_int_distribution<int>(0, blocks - 2)(rng);
    std::vector<int> params;
    std::vector<double> values;
    for (int k = 0; k < 2 * block; ++k) {
      if (n01(rng) > 0.0) {
        params.push_back(b * block + k);
        values.push_back(n01(rng));
      }
    }
    const double w = std::abs(n01(rng)) + 0.1;
    dense->add_outer(params.data(), values.data(), params.size(), w);
    banded->add_outer(params.data(), values.data(), params.size(), w);
  }
  Eigen::VectorXd rhs(n);
  for (int i = 0; i < n; ++i) rhs(i) = n01(rng);
  Eigen::VectorXd a, b;
  REQUIRE(dense->solve(rhs, 1e-3, 1e-9, a));
  REQUIRE(banded->solve(rhs, 1e-3, 1e-9, b));
  CHECK((a - b).norm() <= 1e-9 * std::max(1.0, a.norm()));
}

TEST_CASE("L1 rows are minimized at the median") {
  std::vector<ToyObjective::Row> rows;
  for (double a : {3.0, -1.0, 7.0, 2.0, 10.0}) rows.push_back({0, ResidualKind::kAbsolute, 1.0, a});
  const ToyObjective objective(1, rows);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, -20.0);
  SolverOptions opts;
  opts.relative_tolerance = 1e-12;
  const SolveReport report = minimize(objective, x, opts);
  CHECK(x(0) == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(report.final_loss() <= report.initial_loss());
  for (std::size_t i = 1; i < report.history.size(); ++i) CHECK(report.history[i].total <= report.history[i - 1].total);
}

TEST_CASE("squared rows are minimized at the mean for both methods") {
  std::vector<ToyObjective::Row> rows;
  for (double b : {1.0, 2.0, 6.0}) rows.push_back({0, ResidualKind::kSquared, 1.0, b});
  for (double b : {-4.0, 0.0}) rows.push_back({1, ResidualKind::kSquared, 2.0, b});
  const ToyObjective objective(2, rows);
  for (SolverMethod m : {SolverMethod::kIrls, SolverMethod::kGradientDescent}) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
    SolverOptions opts;
    opts.method = m;
    opts.relative_tolerance = 1e-14;
    opts.max_iterations = 2000;
    const SolveReport report = minimize(objective, x, opts);
    CHECK(x(0) == doctest::Approx(3.0).epsilon(1e-5));
    CHECK(x(1) == doctest::Approx(-2.0).epsilon(1e-5));
    for (std::size_t i = 1; i < report.history.size(); ++i) CHECK(report.history[i].total <= report.history[i - 1].total);
  }
}

TEST_CASE("a zero-loss start stops immediately") {
  const ToyObjective objective(1, {{0, ResidualKind::kAbsolute, 1.0, 0.5}});
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.5);
  const SolveReport report = minimize(objective, x, {});
  CHECK(report.iterations == 0);
  CHECK(report.converged);
  CHECK(report.stop_reason == "zero loss");
}

TEST_CASE("non-finite residuals name the term and frame") {
  const PoisonObjective objective;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.0);
  try {
    minimize(objective, x, {});
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad") != std::string::npos);
    CHECK(msg.find('7') != std::string::npos);
  }
}

TEST_CASE("report json lists the per-term history") {
  const ToyObjective objective(1, {{0, ResidualKind::kAbsolute, 1.0, 2.0}, {0, ResidualKind::kSquared, 1.0, 0.0}});
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 5.0);
  const auto j = solve_report_json(minimize(objective, x, {}));
  REQUIRE(j["history"].size() >= 2);
  CHECK(j["history"][0]["terms"].contains("abs"));
  CHECK(j["history"][0]["terms"].contains("sq"));
  CHECK(j["final_loss"].get<double>() <= j["initial_loss"].get<double>());
}
