#pragma once

#include <Eigen/Dense>

#include "ffsim/rng.hpp"

namespace ffsim {

struct GpHyperparameters {
  Eigen::VectorXd lengthscale;  // one per input dimension, > 0
  double signal_var = 1.0;      // > 0
  double noise_var = 0.0;       // >= 0

  bool operator==(const GpHyperparameters& o) const {
    return lengthscale.size() == o.lengthscale.size() && lengthscale == o.lengthscale && signal_var == o.signal_var &&
           noise_var == o.noise_var;
  }
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact GP regression with the RBF kernel
///   k(x, x') = s^2 exp(-1/2 sum_d (x_d - x'_d)^2 / l_d^2).
/// Immutable after `gp_fit`.
class GpModel {
 public:
  int size() const { return static_cast<int>(inputs_.rows()); }
  int dim() const { return static_cast<int>(inputs_.cols()); }
  const Eigen::MatrixXd& inputs() const { return inputs_; }
  const Eigen::VectorXd& targets() const { return targets_; }
  const GpHyperparameters& hyper() const { return hyper_; }
  /// Lower Cholesky factor of K + noise_var I.
  const Eigen::MatrixXd& chol() const { return chol_; }

  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  /// Cross-covariance between the rows of `a` and the rows of `b`.
  Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const;

 private:
  friend GpModel gp_fit(const Eigen::MatrixXd&, const Eigen::VectorXd&, const GpHyperparameters&);

  Eigen::MatrixXd inputs_;
  Eigen::VectorXd targets_;
  GpHyperparameters hyper_;
  Eigen::MatrixXd chol_;
  Eigen::VectorXd alpha_;  // (K + noise I)^-1 y

  friend GpPrediction gp_predict(const GpModel&, const Eigen::VectorXd&);
  friend Eigen::VectorXd gp_posterior_mean(const GpModel&, const Eigen::MatrixXd&);
};

/// Rows of `inputs` are training points. Throws InvalidInputError on bad
/// shapes or hyperparameters and NumericalError when K + noise I is not
/// positive definite (duplicate inputs at zero noise: add jitter / noise_var).
GpModel gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const GpHyperparameters& hyper);

/// Posterior mean and variance at x. Variance is clamped at 0.
GpPrediction gp_predict(const GpModel& model, const Eigen::VectorXd& x);

Eigen::VectorXd gp_posterior_mean(const GpModel& model, const Eigen::MatrixXd& grid);
Eigen::MatrixXd gp_posterior_covariance(const GpModel& model, const Eigen::MatrixXd& grid);

/// Joint posterior draw over the rows of `grid`. Jitter starts at 1e-8 and is
/// raised x10 up to three times; throws NumericalError if Cholesky still fails.
Eigen::VectorXd gp_sample_path(const GpModel& model, const Eigen::MatrixXd& grid, Rng& rng);

}  // namespace ffsim
