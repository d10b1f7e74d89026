#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace wbm {

/// How a scalar residual enters the loss: coeff * |r| or coeff * r^2.
enum class ResidualKind { kAbsolute, kSquared };

/// Flat storage of scalar residuals with optional sparse gradients.
///
/// Each row belongs to a loss term and a frame (for diagnostics). Gradient
/// entries added with add_derivative() attach to the most recent row and are
/// dropped when the set was created without Jacobians.
class ResidualSet {
 public:
  ResidualSet(int num_terms, bool with_jacobian);

  void add_row(int term, int frame, ResidualKind kind, double coeff, double value);
  void add_derivative(int param, double derivative);

  bool with_jacobian() const { return with_jacobian_; }
  std::size_t num_rows() const { return values_.size(); }
  int num_terms() const { return num_terms_; }

  /// Unweighted per-term sums of coeff * rho(value).
  std::vector<double> term_values() const;

  int term(std::size_t row) const { return terms_[row]; }
  int frame(std::size_t row) const { return frames_[row]; }
  ResidualKind kind(std::size_t row) const { return kinds_[row]; }
  double coeff(std::size_t row) const { return coeffs_[row]; }
  double value(std::size_t row) const { return values_[row]; }
  /// Gradient entries of a row as [begin, end) into params()/derivatives().
  std::size_t row_begin(std::size_t row) const { return offsets_[row]; }
  std::size_t row_end(std::size_t row) const {
    return row + 1 < offsets_.size() ? offsets_[row + 1] : params_.size();
  }
  const std::vector<int>& params() const { return params_; }
  const std::vector<double>& derivatives() const { return derivatives_; }

 private:
  int num_terms_;
  bool with_jacobian_;
  std::vector<int> terms_;
  std::vector<int> frames_;
  std::vector<ResidualKind> kinds_;
  std::vector<double> coeffs_;
  std::vector<double> values_;
  std::vector<std::size_t> offsets_;
  std::vector<int> params_;
  std::vector<double> derivatives_;
};

/// Symmetric positive semi-definite system assembled from weighted outer
/// products of sparse gradient rows.
class NormalSystem {
 public:
  virtual ~NormalSystem() = default;
  virtual int size() const = 0;
  virtual void clear() = 0;
  /// H += weight * g g^T for the sparse row g = (params, values).
  virtual void add_outer(const int* params, const double* values, std::size_t count, double weight) = 0;
  /// Solves (H + damping * diag(H) + floor * I) x = rhs. Returns false when
  /// the damped matrix is not positive definite.
  virtual bool solve(const Eigen::VectorXd& rhs, double damping, double floor, Eigen::VectorXd& x) const = 0;
};

std::unique_ptr<NormalSystem> make_dense_system(int size);
/// Block-banded system: `num_blocks` diagonal blocks of `block_size`, with
/// couplings only between blocks at most `bandwidth` apart.
std::unique_ptr<NormalSystem> make_block_banded_system(int block_size, int num_blocks, int bandwidth);

/// A loss made of weighted residual terms.
class LeastAbsoluteObjective {
 public:
  virtual ~LeastAbsoluteObjective() = default;
  virtual int num_params() const = 0;
  virtual std::vector<std::string> term_names() const = 0;
  /// Per-term multipliers applied on top of the row coefficients.
  virtual std::vector<double> term_weights() const = 0;
  virtual void evaluate(const Eigen::VectorXd& x, ResidualSet& out) const = 0;
  virtual std::unique_ptr<NormalSystem> make_system() const = 0;
};

enum class SolverMethod {
  /// Iteratively reweighted Gauss-Newton with Levenberg-Marquardt damping.
  kIrls,
  kGradientDescent,
};

struct SolverOptions {
  SolverMethod method = SolverMethod::kIrls;
  int max_iterations = 500;
  /// Terminate when an accepted step changes the loss by less than this fraction.
  double relative_tolerance = 1e-6;
  /// |r| below this is clamped when forming reweighting factors 1/|r|.
  double irls_epsilon = 1e-4;
  int max_backtracks = 12;
};

struct IterationRecord {
  int iteration = 0;
  double total = 0.0;
  std::vector<double> terms;  // unweighted term values
};

struct SolveReport {
  std::vector<std::string> term_names;
  std::vector<double> term_weights;
  /// Entry 0 is the initial point; one entry per accepted iterate after that.
  std::vector<IterationRecord> history;
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;

  double initial_loss() const { return history.front().total; }
  double final_loss() const { return history.back().total; }
};

/// Iteration count, stop reason and the per-iteration per-term loss history.
nlohmann::json solve_report_json(const SolveReport& report);

/// Weighted total and unweighted per-term values of `x`.
IterationRecord evaluate_loss(const LeastAbsoluteObjective& objective, const Eigen::VectorXd& x);

/// Gradient of the weighted total (sign(r) used for absolute rows, 0 at r = 0).
Eigen::VectorXd evaluate_gradient(const LeastAbsoluteObjective& objective, const Eigen::VectorXd& x);

/// Minimizes the objective in place. Every accepted step satisfies
/// loss(new) <= loss(old). Throws FitError when a residual or derivative is
/// not finite, naming the term and frame.
SolveReport minimize(const LeastAbsoluteObjective& objective, Eigen::VectorXd& x, const SolverOptions& options);

}  // namespace wbm
