#pragma once

#include "endonet/numeric.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace endonet::hhmm {

using Eigen::Index;

/// log N(x; mean, diag(var))
template <typename DX, typename DM, typename DV>
typename DX::Scalar diag_gaussian_log_density(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DM>& mean,
                                              const Eigen::MatrixBase<DV>& var) {
  using Scalar = typename DX::Scalar;
  const Scalar log_2pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  const auto diff = (x.derived().array() - mean.derived().array());
  return Scalar(-0.5) * ((diff.square() / var.derived().array()).sum() + var.derived().array().log().sum() +
                         static_cast<Scalar>(x.size()) * log_2pi);
}

/// Gaussian mixture with diagonal covariances; components are rows.
struct Gmm {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  Eigen::MatrixXd variances;

  Index components() const { return weights.size(); }
  Index dimension() const { return means.cols(); }

  double log_density(const Eigen::VectorXd& x) const;
  /// Per-row log density of a (N x D) sample matrix.
  Eigen::VectorXd log_density(const Eigen::MatrixXd& samples) const;
  /// Mean per-sample log-likelihood.
  double mean_log_likelihood(const Eigen::MatrixXd& samples) const;

  nlohmann::json to_json() const;
  static Gmm from_json(const nlohmann::json& j);
  friend bool operator==(const Gmm&, const Gmm&) = default;
};

struct EmConfig {
  int max_iterations = 50;
  double tolerance = 1e-6;  // relative change of the mean log-likelihood
  double variance_floor = 1e-6;
};

void to_json(nlohmann::json& j, const EmConfig& c);
void from_json(const nlohmann::json& j, EmConfig& c);

struct GmmFit {
  Gmm gmm;
  /// Mean log-likelihood of the initial model followed by one entry per EM
  /// iteration.
  std::vector<double> log_likelihood;
};

/// EM with k-means++ seeding and floored diagonal variances. K = 1 is solved
/// in closed form. Throws if K exceeds the sample count.
GmmFit fit_gmm(const Eigen::MatrixXd& samples, int components, std::uint64_t seed, const EmConfig& config = {});

}  // namespace endonet::hhmm
