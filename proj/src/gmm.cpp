#include "endonet/gmm.hpp"

#include <limits>
#include <random>
#include <stdexcept>

namespace endonet::hhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// (N x K) matrix of log w_k + log N(x_n | k).
Eigen::MatrixXd joint_log(const Gmm& g, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), g.components());
  for (Index k = 0; k < g.components(); ++k) {
    const double lw = g.weights(k) > 0.0 ? std::log(g.weights(k)) : kNegInf;
    for (Index n = 0; n < x.rows(); ++n)
      out(n, k) = lw == kNegInf ? kNegInf
                                : lw + diag_gaussian_log_density(x.row(n), g.means.row(k), g.variances.row(k));
  }
  return out;
}

// M-step from responsibilities (N x K). Components with no mass keep their
// previous mean and variance and get weight 0.
void maximize(Gmm& g, const Eigen::MatrixXd& x, const Eigen::MatrixXd& resp, double floor) {
  const double n = static_cast<double>(x.rows());
  const Eigen::VectorXd mass = resp.colwise().sum().transpose();
  for (Index k = 0; k < g.components(); ++k) {
    if (!(mass(k) > 0.0)) {
      g.weights(k) = 0.0;
      continue;
    }
    g.weights(k) = mass(k) / n;
    const Eigen::RowVectorXd mean = (resp.col(k).transpose() * x) / mass(k);
    const Eigen::MatrixXd dev = x.rowwise() - mean;
    Eigen::RowVectorXd var = (resp.col(k).transpose() * dev.array().square().matrix()) / mass(k);
    g.means.row(k) = mean;
    g.variances.row(k) = var.cwiseMax(floor);
  }
  g.weights /= g.weights.sum();
}

}  // namespace

double Gmm::log_density(const Eigen::VectorXd& x) const {
  Eigen::VectorXd terms(components());
  for (Index k = 0; k < components(); ++k)
    terms(k) = weights(k) > 0.0
                   ? std::log(weights(k)) + diag_gaussian_log_density(x.transpose(), means.row(k), variances.row(k))
                   : kNegInf;
  return log_sum_exp(terms);
}

Eigen::VectorXd Gmm::log_density(const Eigen::MatrixXd& samples) const {
  const Eigen::MatrixXd j = joint_log(*this, samples);
  Eigen::VectorXd out(samples.rows());
  for (Index n = 0; n < samples.rows(); ++n) out(n) = log_sum_exp(j.row(n));
  return out;
}

double Gmm::mean_log_likelihood(const Eigen::MatrixXd& samples) const { return log_density(samples).mean(); }

nlohmann::json Gmm::to_json() const {
  auto rows = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> r(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i) r[static_cast<std::size_t>(i)].assign(m.row(i).begin(), m.row(i).end());
    return r;
  };
  return {{"weights", std::vector<double>(weights.begin(), weights.end())},
          {"means", rows(means)},
          {"variances", rows(variances)}};
}

Gmm Gmm::from_json(const nlohmann::json& j) {
  auto mat = [](const nlohmann::json& a) {
    auto r = a.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(static_cast<Index>(r.size()), r.empty() ? 0 : static_cast<Index>(r[0].size()));
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (static_cast<Index>(r[i].size()) != m.cols()) throw std::runtime_error("gmm: ragged matrix");
      for (std::size_t c = 0; c < r[i].size(); ++c) m(static_cast<Index>(i), static_cast<Index>(c)) = r[i][c];
    }
    return m;
  };
  Gmm g;
  auto w = j.at("weights").get<std::vector<double>>();
  g.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Index>(w.size()));
  g.means = mat(j.at("means"));
  g.variances = mat(j.at("variances"));
  if (g.means.rows() != g.weights.size() || g.variances.rows() != g.weights.size() ||
      g.variances.cols() != g.means.cols())
    throw std::runtime_error("gmm: inconsistent component shapes");
  return g;
}

void to_json(nlohmann::json& j, const EmConfig& c) {
  j = {{"max_iterations", c.max_iterations}, {"tolerance", c.tolerance}, {"variance_floor", c.variance_floor}};
}

void from_json(const nlohmann::json& j, EmConfig& c) {
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.variance_floor = j.value("variance_floor", c.variance_floor);
}

GmmFit fit_gmm(const Eigen::MatrixXd& samples, int components, std::uint64_t seed, const EmConfig& config) {
  const Index n = samples.rows();
  const Index d = samples.cols();
  if (components < 1) throw std::invalid_argument("fit_gmm: need at least one component");
  if (components > n)
    throw std::invalid_argument("fit_gmm: " + std::to_string(components) + " components but only " +
                                std::to_string(n) + " samples");
  if (!samples.allFinite()) throw std::invalid_argument("fit_gmm: non-finite sample");

  GmmFit fit;
  Gmm& g = fit.gmm;
  const Index k_count = components;
  g.weights = Eigen::VectorXd::Constant(k_count, 1.0 / static_cast<double>(k_count));
  g.means.resize(k_count, d);
  g.variances.resize(k_count, d);

  if (k_count == 1) {
    const Eigen::RowVectorXd mean = samples.colwise().mean();
    g.means.row(0) = mean;
    g.variances.row(0) =
        ((samples.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n)).matrix().cwiseMax(
            config.variance_floor);
    fit.log_likelihood.push_back(g.mean_log_likelihood(samples));
    return fit;
  }

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::vector<Index> centers;
  centers.push_back(std::uniform_int_distribution<Index>(0, n - 1)(rng));
  Eigen::VectorXd dist2 = (samples.rowwise() - samples.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<Index>(centers.size()) < k_count) {
    const double total = dist2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        u -= dist2(pick);
        if (u <= 0.0) break;
      }
    } else {
      pick = std::uniform_int_distribution<Index>(0, n - 1)(rng);
    }
    centers.push_back(pick);
    dist2 = dist2.cwiseMin((samples.rowwise() - samples.row(pick)).rowwise().squaredNorm());
  }

  // Hard assignment to the nearest seed gives the initial responsibilities.
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k_count);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < k_count; ++k) {
      const double dd = (samples.row(i) - samples.row(centers[static_cast<std::size_t>(k)])).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = k;
      }
    }
    resp(i, best) = 1.0;
  }
  const Eigen::RowVectorXd global_mean = samples.colwise().mean();
  const Eigen::RowVectorXd global_var =
      ((samples.rowwise() - global_mean).array().square().colwise().sum() / static_cast<double>(n))
          .matrix()
          .cwiseMax(config.variance_floor);
  for (Index k = 0; k < k_count; ++k) {
    g.means.row(k) = samples.row(centers[static_cast<std::size_t>(k)]);
    g.variances.row(k) = global_var;
  }
  maximize(g, samples, resp, config.variance_floor);

  double previous = 0.0;
  for (int it = 0; it <= config.max_iterations; ++it) {
    // E-step; the log-likelihood is that of the current parameters.
    const Eigen::MatrixXd jl = joint_log(g, samples);
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double lse = log_sum_exp(jl.row(i));
      ll += lse;
      resp.row(i) = (jl.row(i).array() - lse).exp();
    }
    ll /= static_cast<double>(n);
    fit.log_likelihood.push_back(ll);
    if (it > 0 && std::abs(ll - previous) <= config.tolerance * std::abs(previous)) break;
    if (it == config.max_iterations) break;
    previous = ll;
    maximize(g, samples, resp, config.variance_floor);
  }
  return fit;
}

}  // namespace endonet::hhmm
