#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace endonet::svm {

using Eigen::Index;

struct SvmConfig {
  double C = 1.0;
  int epochs = 300;
  std::uint64_t seed = 0;
  bool standardize = true;
};

void to_json(nlohmann::json& j, const SvmConfig& c);
void from_json(const nlohmann::json& j, SvmConfig& c);

/// Primal objective (1/(2C))*|w|^2 + mean_i max(0, 1 - y_i (w.x_i + b)).
double hinge_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       double C);

struct BinarySvm {
  Eigen::VectorXd w;
  double b = 0.0;
  std::vector<double> objective_history;  // best objective after each epoch
};

/// Full-batch subgradient descent with step C/k, i.e. 1/(lambda k) for
/// lambda = 1/C. A k-weighted running average is tracked next to the plain
/// iterate, and whichever point has the lowest objective so far is kept, so
/// objective_history never increases. y entries are +1/-1.
BinarySvm train_binary(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double C, int epochs);

/// One linear classifier per phase; scores are raw margins w.x + b.
struct OvrSvmModel {
  Eigen::MatrixXd weights;  // classes x feature width
  Eigen::VectorXd bias;     // classes
  double C = 1.0;
  std::vector<int> absent_classes;  // classes with no positive training frame

  Index classes() const { return weights.rows(); }
  Index feature_width() const { return weights.cols(); }

  nlohmann::json to_json() const;
  static OvrSvmModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static OvrSvmModel load(const std::filesystem::path& path);
};

struct TrainReport {
  std::vector<std::vector<double>> objective_history;  // per class, standardized space
};

/// Classes absent from `labels` get the constant classifier w = 0, b = -1 and
/// are listed in absent_classes. Throws if fewer than two samples or only one
/// class is present.
OvrSvmModel train_ovr(const Eigen::MatrixXd& features, std::span<const int> labels, int classes,
                      const SvmConfig& config, TrainReport* report = nullptr);

Eigen::VectorXd score(const OvrSvmModel& model, const Eigen::VectorXd& feature);
/// Row-wise scores, one row per feature row.
Eigen::MatrixXd score(const OvrSvmModel& model, const Eigen::MatrixXd& features);

}  // namespace endonet::svm
