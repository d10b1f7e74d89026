#include "wbm/least_squares.h"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "wbm/errors.h"

namespace wbm {

ResidualSet::ResidualSet(int num_terms, bool with_jacobian) : num_terms_(num_terms), with_jacobian_(with_jacobian) {}

void ResidualSet::add_row(int term, int frame, ResidualKind kind, double coeff, double value) {
  terms_.push_back(term);
  frames_.push_back(frame);
  kinds_.push_back(kind);
  coeffs_.push_back(coeff);
  values_.push_back(value);
  offsets_.push_back(params_.size());
}

void ResidualSet::add_derivative(int param, double derivative) {
  if (!with_jacobian_ || derivative == 0.0) return;
  params_.push_back(param);
  derivatives_.push_back(derivative);
}

std::vector<double> ResidualSet::term_values() const {
  std::vector<double> out(num_terms_, 0.0);
  for (std::size_t r = 0; r < values_.size(); ++r) {
    const double v = values_[r];
    out[terms_[r]] += coeffs_[r] * (kinds_[r] == ResidualKind::kAbsolute ? std::abs(v) : v * v);
  }
  return out;
}

namespace {

class DenseSystem final : public NormalSystem {
 public:
  explicit DenseSystem(int n) : h_(Eigen::MatrixXd::Zero(n, n)) {}
  int size() const override { return static_cast<int>(h_.rows()); }
  void clear() override { h_.setZero(); }
  void add_outer(const int* params, const double* values, std::size_t count, double weight) override {
    for (std::size_t a = 0; a < count; ++a) {
      const double wa = weight * values[a];
      for (std::size_t b = 0; b < count; ++b) h_(params[a], params[b]) += wa * values[b];
    }
  }
  bool solve(const Eigen::VectorXd& rhs, double damping, double floor, Eigen::VectorXd& x) const override {
    Eigen::MatrixXd m = h_;
    for (int i = 0; i < size(); ++i) m(i, i) += damping * h_(i, i) + floor;
    const Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return false;
    x = llt.solve(rhs);
    return x.allFinite();
  }

 private:
  Eigen::MatrixXd h_;
};

class BlockBandedSystem final : public NormalSystem {
 public:
  BlockBandedSystem(int block_size, int num_blocks, int bandwidth)
      : bs_(block_size), nb_(num_blocks), bw_(bandwidth), upper_(num_blocks) {
    for (int i = 0; i < nb_; ++i) {
      const int count = std::min(bw_, nb_ - 1 - i) + 1;
      upper_[i].assign(count, Eigen::MatrixXd::Zero(bs_, bs_));
    }
  }
  int size() const override { return bs_ * nb_; }
  void clear() override {
    for (auto& row : upper_) {
      for (auto& b : row) b.setZero();
    }
  }
  void add_outer(const int* params, const double* values, std::size_t count, double weight) override {
    for (std::size_t a = 0; a < count; ++a) {
      const int ba = params[a] / bs_;
      const int oa = params[a] % bs_;
      const double wa = weight * values[a];
      for (std::size_t b = 0; b < count; ++b) {
        const int bb = params[b] / bs_;
        if (bb < ba) continue;
        const int d = bb - ba;
        if (d > bw_) throw std::logic_error("block-banded system: coupling exceeds bandwidth");
        upper_[ba][d](oa, params[b] % bs_) += wa * values[b];
      }
    }
  }
  bool solve(const Eigen::VectorXd& rhs, double damping, double floor, Eigen::VectorXd& x) const override {
    // Block Cholesky M = L L^T; lower[j][j - i] holds L(j, i).
    std::vector<std::vector<Eigen::MatrixXd>> lower(nb_);
    std::vector<Eigen::LLT<Eigen::MatrixXd>> diag(nb_);
    for (int i = 0; i < nb_; ++i) {
      lower[i].resize(std::min(i, bw_) + 1);
      Eigen::MatrixXd s = upper_[i][0];
      for (int k = 0; k < bs_; ++k) s(k, k) += damping * upper_[i][0](k, k) + floor;
      for (int k = std::max(0, i - bw_); k < i; ++k) {
        const Eigen::MatrixXd& lik = lower[i][i - k];
        s.noalias() -= lik * lik.transpose();
      }
      diag[i].compute(s);
      if (diag[i].info() != Eigen::Success) return false;
      lower[i][0] = diag[i].matrixL();
      for (int j = i + 1; j <= std::min(nb_ - 1, i + bw_); ++j) {
        if (static_cast<int>(lower[j].size()) == 0) lower[j].resize(std::min(j, bw_) + 1);
        Eigen::MatrixXd t = upper_[i][j - i].transpose();  // A(j, i)
        for (int k = std::max(0, j - bw_); k < i; ++k) t.noalias() -= lower[j][j - k] * lower[i][i - k].transpose();
        // L(j, i) = T * L(i, i)^{-T}
        lower[j][j - i] = diag[i].matrixL().solve(t.transpose()).transpose();
      }
    }
    Eigen::VectorXd y(size());
    for (int i = 0; i < nb_; ++i) {
      Eigen::VectorXd b = rhs.segment(i * bs_, bs_);
      for (int k = std::max(0, i - bw_); k < i; ++k) b.noalias() -= lower[i][i - k] * y.segment(k * bs_, bs_);
      y.segment(i * bs_, bs_) = diag[i].matrixL().solve(b);
    }
    x.resize(size());
    for (int i = nb_ - 1; i >= 0; --i) {
      Eigen::VectorXd b = y.segment(i * bs_, bs_);
      for (int j = i + 1; j <= std::min(nb_ - 1, i + bw_); ++j) {
        b.noalias() -= lower[j][j - i].transpose() * x.segment(j * bs_, bs_);
      }
      x.segment(i * bs_, bs_) = diag[i].matrixU().solve(b);
    }
    return x.allFinite();
  }

 private:
  int bs_;
  int nb_;
  int bw_;
  std::vector<std::vector<Eigen::MatrixXd>> upper_;  // upper_[i][d] = A(i, i + d)
};

void check_finite(const LeastAbsoluteObjective& objective, const ResidualSet& rows) {
  const auto names = objective.term_names();
  for (std::size_t r = 0; r < rows.num_rows(); ++r) {
    bool ok = std::isfinite(rows.value(r));
    for (std::size_t e = rows.row_begin(r); ok && e < rows.row_end(r); ++e) ok = std::isfinite(rows.derivatives()[e]);
    if (!ok) {
      throw FitError("non-finite " + std::string(std::isfinite(rows.value(r)) ? "gradient" : "loss") +
                     " in term '" + names.at(rows.term(r)) + "' at frame " + std::to_string(rows.frame(r)));
    }
  }
}

IterationRecord record_from(const ResidualSet& rows, const std::vector<double>& weights, int iteration) {
  IterationRecord rec;
  rec.iteration = iteration;
  rec.terms = rows.term_values();
  rec.total = 0.0;
  for (std::size_t t = 0; t < rec.terms.size(); ++t) rec.total += weights[t] * rec.terms[t];
  return rec;
}

Eigen::VectorXd gradient_from(const ResidualSet& rows, const std::vector<double>& weights, int n) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  for (std::size_t r = 0; r < rows.num_rows(); ++r) {
    const double v = rows.value(r);
    const double w = weights[rows.term(r)] * rows.coeff(r);
    const double scale = rows.kind(r) == ResidualKind::kAbsolute ? w * ((v > 0.0) - (v < 0.0)) : 2.0 * w * v;
    if (scale == 0.0) continue;
    for (std::size_t e = rows.row_begin(r); e < rows.row_end(r); ++e) {
      g[rows.params()[e]] += scale * rows.derivatives()[e];
    }
  }
  return g;
}

double loss_only(const LeastAbsoluteObjective& objective, const Eigen::VectorXd& x, const std::vector<double>& weights,
                 IterationRecord* rec) {
  ResidualSet rows(static_cast<int>(weights.size()), false);
  objective.evaluate(x, rows);
  IterationRecord r = record_from(rows, weights, 0);
  if (rec != nullptr) *rec = r;
  return std::isfinite(r.total) ? r.total : std::numeric_limits<double>::infinity();
}

}  // namespace

std::unique_ptr<NormalSystem> make_dense_system(int size) { return std::make_unique<DenseSystem>(size); }

std::unique_ptr<NormalSystem> make_block_banded_system(int block_size, int num_blocks, int bandwidth) {
  return std::make_unique<BlockBandedSystem>(block_size, num_blocks, bandwidth);
}

nlohmann::json solve_report_json(const SolveReport& report) {
  nlohmann::json j;
  j["iterations"] = report.iterations;
  j["converged"] = report.converged;
  j["stop_reason"] = report.stop_reason;
  j["initial_loss"] = report.initial_loss();
  j["final_loss"] = report.final_loss();
  nlohmann::json w = nlohmann::json::object();
  for (std::size_t i = 0; i < report.term_names.size(); ++i) w[report.term_names[i]] = report.term_weights[i];
  j["term_weights"] = w;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& rec : report.history) {
    nlohmann::json terms = nlohmann::json::object();
    for (std::size_t i = 0; i < report.term_names.size(); ++i) terms[report.term_names[i]] = rec.terms[i];
    history.push_back({{"iteration", rec.iteration}, {"total", rec.total}, {"terms", terms}});
  }
  j["history"] = history;
  return j;
}

IterationRecord evaluate_loss(const LeastAbsoluteObjective& objective, const Eigen::VectorXd& x) {
  const auto weights = objective.term_weights();
  ResidualSet rows(static_cast<int>(weights.size()), false);
  objective.evaluate(x, rows);
  return record_from(rows, weights, 0);
}

Eigen::VectorXd evaluate_gradient(const LeastAbsoluteObjective& objective, const Eigen::VectorXd& x) {
  const auto weights = objective.term_weights();
  ResidualSet rows(static_cast<int>(weights.size()), true);
  objective.evaluate(x, rows);
  return gradient_from(rows, weights, objective.num_params());
}

SolveReport minimize(const LeastAbsoluteObjective& objective, Eigen::VectorXd& x, const SolverOptions& options) {
  const int n = objective.num_params();
  if (x.size() != n) throw StructuralError("minimize: parameter vector has the wrong size");
  const auto weights = objective.term_weights();
  SolveReport report;
  report.term_names = objective.term_names();
  report.term_weights = weights;

  auto rows = std::make_unique<ResidualSet>(static_cast<int>(weights.size()), true);
  objective.evaluate(x, *rows);
  check_finite(objective, *rows);
  report.history.push_back(record_from(*rows, weights, 0));
  double loss = report.history.back().total;

  std::unique_ptr<NormalSystem> system;
  if (options.method == SolverMethod::kIrls) system = objective.make_system();
  double damping = 1e-4;
  double step_scale = -1.0;  // gradient descent step length memory

  report.stop_reason = "max iterations";
  int stalled = 0;  // consecutive small changes after shortened steps
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    if (loss == 0.0) {
      report.converged = true;
      report.stop_reason = "zero loss";
      break;
    }
    const Eigen::VectorXd g = gradient_from(*rows, weights, n);
    if (g.squaredNorm() == 0.0) {
      report.converged = true;
      report.stop_reason = "zero gradient";
      break;
    }

    bool accepted = false;
    bool full_step = false;
    Eigen::VectorXd candidate;
    IterationRecord candidate_rec;
    if (options.method == SolverMethod::kIrls) {
      system->clear();
      double max_diag_weight = 0.0;
      for (std::size_t r = 0; r < rows->num_rows(); ++r) {
        const double w = weights[rows->term(r)] * rows->coeff(r);
        if (w == 0.0) continue;
        const double h = rows->kind(r) == ResidualKind::kAbsolute
                             ? w / std::max(std::abs(rows->value(r)), options.irls_epsilon)
                             : 2.0 * w;
        const std::size_t b = rows->row_begin(r);
        system->add_outer(rows->params().data() + b, rows->derivatives().data() + b, rows->row_end(r) - b, h);
        max_diag_weight = std::max(max_diag_weight, h);
      }
      const double floor = 1e-12 * (1.0 + max_diag_weight);
      Eigen::VectorXd delta;
      for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
        if (!system->solve(-g, damping, floor, delta)) {
          damping = std::max(damping * 10.0, 1e-6);
          continue;
        }
        double alpha = 1.0;
        for (int bt = 0; bt <= options.max_backtracks; ++bt, alpha *= 0.5) {
          candidate = x + alpha * delta;
          const double l = loss_only(objective, candidate, weights, &candidate_rec);
          if (l <= loss) {
            accepted = true;
            full_step = bt == 0;
            if (full_step) damping = std::max(damping / 3.0, 1e-9);
            break;
          }
        }
        if (!accepted) damping = std::max(damping * 10.0, 1e-6);
      }
    } else {
      if (step_scale < 0.0) step_scale = 1e-2 / std::max(g.norm(), 1e-12);
      double alpha = 2.0 * step_scale;
      const double gg = g.squaredNorm();
      for (int bt = 0; bt <= 4 * options.max_backtracks; ++bt, alpha *= 0.5) {
        candidate = x - alpha * g;
        const double l = loss_only(objective, candidate, weights, &candidate_rec);
        if (l <= loss - 1e-4 * alpha * gg || (bt == 4 * options.max_backtracks && l <= loss)) {
          accepted = true;
          step_scale = alpha;
          break;
        }
      }
    }

    if (!accepted) {
      report.converged = true;
      report.stop_reason = "no descent step found";
      break;
    }

    const double change = loss - candidate_rec.total;
    x = candidate;
    loss = candidate_rec.total;
    candidate_rec.iteration = iter;
    report.history.push_back(candidate_rec);
    report.iterations = iter;

    rows = std::make_unique<ResidualSet>(static_cast<int>(weights.size()), true);
    objective.evaluate(x, *rows);
    check_finite(objective, *rows);

    if (change <= options.relative_tolerance * std::max(std::abs(report.history[iter - 1].total), 1e-300)) {
      // a heavily shortened step says more about the model than about convergence
      if (options.method == SolverMethod::kIrls && !full_step && ++stalled < 3) {
        damping = std::max(damping * 10.0, 1e-6);
        continue;
      }
      report.converged = true;
      report.stop_reason = "relative change below tolerance";
      break;
    }
    stalled = 0;
  }
  return report;
}

}  // namespace wbm
