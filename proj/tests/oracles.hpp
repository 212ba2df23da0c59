#pragma once

// Straightforward reference implementations used to check the library.
// They favour obviousness over speed and share no code with src/.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracle {

inline double tool_loss(const Eigen::MatrixXd& v, const Eigen::MatrixXd& k) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index t = 0; t < v.cols(); ++t) {
      const double s = 1.0 / (1.0 + std::exp(-v(i, t)));
      sum += k(i, t) * std::log(s) + (1.0 - k(i, t)) * std::log(1.0 - s);
    }
  return -sum / static_cast<double>(v.rows());
}

inline double phase_loss(const Eigen::MatrixXd& w, const Eigen::MatrixXd& l) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double z = 0.0;
    for (Eigen::Index p = 0; p < w.cols(); ++p) z += std::exp(w(i, p));
    for (Eigen::Index p = 0; p < w.cols(); ++p) sum += l(i, p) * std::log(std::exp(w(i, p)) / z);
  }
  return -sum / static_cast<double>(w.rows());
}

/// Plain probabilities: initial (S), transition (S x S, row = from),
/// emission (T x S) likelihoods of the observed symbols.
struct Enumeration {
  double best = 0.0;
  std::vector<int> best_path;
  double total = 0.0;
};

inline Enumeration enumerate_paths(const Eigen::VectorXd& initial, const Eigen::MatrixXd& transition,
                                   const Eigen::MatrixXd& emission) {
  const int s = static_cast<int>(initial.size());
  const int t_len = static_cast<int>(emission.rows());
  Enumeration out;
  std::vector<int> path(static_cast<std::size_t>(t_len), 0);
  long combos = 1;
  for (int t = 0; t < t_len; ++t) combos *= s;
  for (long c = 0; c < combos; ++c) {
    long rest = c;
    for (int t = t_len - 1; t >= 0; --t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(rest % s);
      rest /= s;
    }
    double p = initial(path[0]) * emission(0, path[0]);
    for (int t = 1; t < t_len; ++t)
      p *= transition(path[static_cast<std::size_t>(t - 1)], path[static_cast<std::size_t>(t)]) *
           emission(t, path[static_cast<std::size_t>(t)]);
    out.total += p;
    if (p > out.best) {
      out.best = p;
      out.best_path = path;
    }
  }
  return out;
}

/// AP by sweeping every distinct score as a threshold, counting from scratch.
inline double brute_force_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  long positives = std::count(labels.begin(), labels.end(), 1);
  double ap = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] < th) continue;
      labels[i] == 1 ? ++tp : ++fp;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

/// Central difference of f at x along coordinate `i` of the buffer `p`.
inline double central_difference(const std::function<double()>& f, double& p, double h = 1e-5) {
  const double saved = p;
  p = saved + h;
  const double up = f();
  p = saved - h;
  const double down = f();
  p = saved;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("endonet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
