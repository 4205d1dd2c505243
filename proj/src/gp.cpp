#include "ffsim/gp.hpp"

#include <cmath>
#include <sstream>

#include "ffsim/error.hpp"

namespace ffsim {

double GpModel::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  const double sq = ((a - b).array() / hyper_.lengthscale.array()).square().sum();
  return hyper_.signal_var * std::exp(-0.5 * sq);
}

Eigen::MatrixXd GpModel::kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const {
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      k(i, j) = kernel(a.row(i).transpose(), b.row(j).transpose());
    }
  }
  return k;
}

GpModel gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const GpHyperparameters& hyper) {
  if (inputs.rows() < 1) throw InvalidInputError("gp_fit: need at least one training point");
  if (inputs.rows() != targets.size()) throw InvalidInputError("gp_fit: inputs/targets length mismatch");
  if (hyper.lengthscale.size() != inputs.cols()) {
    throw InvalidInputError("gp_fit: lengthscale dimension does not match inputs");
  }
  if (!(hyper.lengthscale.array() > 0.0).all() || !(hyper.signal_var > 0.0) || !(hyper.noise_var >= 0.0)) {
    throw InvalidInputError("gp_fit: hyperparameters must satisfy lengthscale > 0, signal_var > 0, noise_var >= 0");
  }
  if (!inputs.allFinite() || !targets.allFinite()) throw InvalidInputError("gp_fit: non-finite training data");

  GpModel m;
  m.inputs_ = inputs;
  m.targets_ = targets;
  m.hyper_ = hyper;
  Eigen::MatrixXd k = m.kernel_matrix(inputs, inputs);
  k.diagonal().array() += hyper.noise_var;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(
        "gp_fit: Gram matrix is not positive definite (duplicate inputs at zero noise?); "
        "add jitter via noise_var");
  }
  m.chol_ = llt.matrixL();
  m.alpha_ = llt.solve(targets);
  return m;
}

GpPrediction gp_predict(const GpModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.dim()) {
    std::ostringstream os;
    os << "gp_predict: query has dimension " << x.size() << ", model expects " << model.dim();
    throw InvalidInputError(os.str());
  }
  Eigen::VectorXd ks(model.size());
  for (int i = 0; i < model.size(); ++i) ks[i] = model.kernel(model.inputs_.row(i).transpose(), x);
  GpPrediction p;
  p.mean = ks.dot(model.alpha_);
  const Eigen::VectorXd v = model.chol_.triangularView<Eigen::Lower>().solve(ks);
  p.variance = std::max(0.0, model.hyper_.signal_var - v.squaredNorm());
  return p;
}

Eigen::VectorXd gp_posterior_mean(const GpModel& model, const Eigen::MatrixXd& grid) {
  if (grid.cols() != model.dim()) throw InvalidInputError("gp_posterior_mean: grid dimension mismatch");
  return model.kernel_matrix(grid, model.inputs()) * model.alpha_;
}

Eigen::MatrixXd gp_posterior_covariance(const GpModel& model, const Eigen::MatrixXd& grid) {
  if (grid.cols() != model.dim()) throw InvalidInputError("gp_posterior_covariance: grid dimension mismatch");
  const Eigen::MatrixXd kgx = model.kernel_matrix(model.inputs(), grid);
  const Eigen::MatrixXd v = model.chol().triangularView<Eigen::Lower>().solve(kgx);
  Eigen::MatrixXd cov = model.kernel_matrix(grid, grid) - v.transpose() * v;
  return 0.5 * (cov + cov.transpose());
}

Eigen::VectorXd gp_sample_path(const GpModel& model, const Eigen::MatrixXd& grid, Rng& rng) {
  if (!grid.allFinite()) throw InvalidInputError("gp_sample_path: grid must be finite");
  const Eigen::VectorXd mean = gp_posterior_mean(model, grid);
  const Eigen::MatrixXd cov = gp_posterior_covariance(model, grid);
  const Eigen::Index m = grid.rows();

  double jitter = 1e-8;
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd c = cov;
    c.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) continue;
    Eigen::VectorXd z(m);
    for (Eigen::Index i = 0; i < m; ++i) z[i] = rng.normal();
    return mean + llt.matrixL() * z;
  }
  throw NumericalError("gp_sample_path: posterior covariance Cholesky failed after jitter escalation");
}

}  // namespace ffsim
