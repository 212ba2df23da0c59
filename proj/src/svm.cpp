#include "endonet/svm.hpp"

#include "endonet/container.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace endonet::svm {

namespace {
constexpr const char* kSvmKind = "ovr-svm";
}

void to_json(nlohmann::json& j, const SvmConfig& c) {
  j = {{"C", c.C}, {"epochs", c.epochs}, {"seed", c.seed}, {"standardize", c.standardize}};
}

void from_json(const nlohmann::json& j, SvmConfig& c) {
  c.C = j.value("C", c.C);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.standardize = j.value("standardize", c.standardize);
}

double hinge_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       double C) {
  const Eigen::ArrayXd margins = 1.0 - y.array() * ((x * w).array() + b);
  return 0.5 * w.squaredNorm() / C + margins.max(0.0).mean();
}

BinarySvm train_binary(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double C, int epochs) {
  if (!(C > 0.0)) throw std::invalid_argument("svm: C must be positive");
  if (x.rows() != y.size() || x.rows() == 0) throw std::invalid_argument("svm: features and labels differ in length");
  const Index d = x.cols();
  const double m = static_cast<double>(x.rows());

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  Eigen::VectorXd avg_w = w;
  double avg_b = 0.0;
  double weight_sum = 0.0;

  BinarySvm best;
  best.w = w;
  best.b = b;
  double best_obj = hinge_objective(w, b, x, y, C);

  for (int k = 1; k <= epochs; ++k) {
    const Eigen::ArrayXd margins = y.array() * ((x * w).array() + b);
    const Eigen::VectorXd active = (margins < 1.0).cast<double>().matrix().cwiseProduct(y);
    const Eigen::VectorXd g_w = w / C - x.transpose() * active / m;
    const double g_b = -active.sum() / m;
    const double step = C / static_cast<double>(k);
    w -= step * g_w;
    b -= step * g_b;

    const double kk = static_cast<double>(k);
    weight_sum += kk;
    avg_w += (kk / weight_sum) * (w - avg_w);
    avg_b += (kk / weight_sum) * (b - avg_b);

    const double obj = hinge_objective(w, b, x, y, C);
    const double obj_avg = hinge_objective(avg_w, avg_b, x, y, C);
    if (obj < best_obj) {
      best_obj = obj;
      best.w = w;
      best.b = b;
    }
    if (obj_avg < best_obj) {
      best_obj = obj_avg;
      best.w = avg_w;
      best.b = avg_b;
    }
    best.objective_history.push_back(best_obj);
  }
  return best;
}

OvrSvmModel train_ovr(const Eigen::MatrixXd& features, std::span<const int> labels, int classes,
                      const SvmConfig& config, TrainReport* report) {
  const Index m = features.rows();
  if (m < 2) throw std::invalid_argument("svm: need at least two training samples");
  if (static_cast<Index>(labels.size()) != m) throw std::invalid_argument("svm: features and labels differ in length");
  if (classes < 2) throw std::invalid_argument("svm: need at least two classes");
  if (!features.allFinite()) throw std::invalid_argument("svm: non-finite feature value");

  std::vector<Index> counts(static_cast<std::size_t>(classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= classes) throw std::invalid_argument("svm: label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  const auto present = std::count_if(counts.begin(), counts.end(), [](Index c) { return c > 0; });
  if (present < 2) throw std::invalid_argument("svm: every binary problem is single-class");

  // Fixed row order per seed; only the summation order depends on it.
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);

  Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(features.cols());
  Eigen::RowVectorXd sigma = Eigen::RowVectorXd::Ones(features.cols());
  if (config.standardize) {
    mu = features.colwise().mean();
    sigma = ((features.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(m)).sqrt();
    for (Index j = 0; j < sigma.size(); ++j)
      if (!(sigma(j) > 1e-12)) sigma(j) = 1.0;
  }
  Eigen::MatrixXd x(m, features.cols());
  for (Index r = 0; r < m; ++r)
    x.row(r) = (features.row(order[static_cast<std::size_t>(r)]) - mu).cwiseQuotient(sigma);

  OvrSvmModel model;
  model.C = config.C;
  model.weights = Eigen::MatrixXd::Zero(classes, features.cols());
  model.bias = Eigen::VectorXd::Constant(classes, -1.0);
  if (report) report->objective_history.assign(static_cast<std::size_t>(classes), {});

  for (int p = 0; p < classes; ++p) {
    if (counts[static_cast<std::size_t>(p)] == 0) {
      model.absent_classes.push_back(p);
      continue;
    }
    Eigen::VectorXd y(m);
    for (Index r = 0; r < m; ++r) y(r) = labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] == p ? 1.0 : -1.0;
    BinarySvm bin = train_binary(x, y, config.C, config.epochs);
    // Fold the standardization into raw-space weights.
    const Eigen::VectorXd w_raw = bin.w.array() / sigma.transpose().array();
    model.weights.row(p) = w_raw.transpose();
    model.bias(p) = bin.b - mu.dot(w_raw);
    if (report) report->objective_history[static_cast<std::size_t>(p)] = std::move(bin.objective_history);
  }
  return model;
}

Eigen::VectorXd score(const OvrSvmModel& model, const Eigen::VectorXd& feature) {
  if (feature.size() != model.feature_width())
    throw std::invalid_argument("svm score: feature width " + std::to_string(feature.size()) + " != trained width " +
                                std::to_string(model.feature_width()));
  return model.weights * feature + model.bias;
}

Eigen::MatrixXd score(const OvrSvmModel& model, const Eigen::MatrixXd& features) {
  if (features.cols() != model.feature_width())
    throw std::invalid_argument("svm score: feature width " + std::to_string(features.cols()) +
                                " != trained width " + std::to_string(model.feature_width()));
  Eigen::MatrixXd s = features * model.weights.transpose();
  s.rowwise() += model.bias.transpose();
  return s;
}

nlohmann::json OvrSvmModel::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Index p = 0; p < weights.rows(); ++p) {
    std::vector<double> r(static_cast<std::size_t>(weights.cols()));
    for (Index j = 0; j < weights.cols(); ++j) r[static_cast<std::size_t>(j)] = weights(p, j);
    rows.push_back(r);
  }
  return {{"C", C},
          {"feature_width", weights.cols()},
          {"weights", rows},
          {"bias", std::vector<double>(bias.begin(), bias.end())},
          {"absent_classes", absent_classes}};
}

OvrSvmModel OvrSvmModel::from_json(const nlohmann::json& j) {
  OvrSvmModel m;
  m.C = j.at("C").get<double>();
  const auto width = j.at("feature_width").get<Index>();
  const auto& rows = j.at("weights");
  m.weights.resize(static_cast<Index>(rows.size()), width);
  for (std::size_t p = 0; p < rows.size(); ++p) {
    auto r = rows[p].get<std::vector<double>>();
    if (static_cast<Index>(r.size()) != width) throw io::ContainerError("svm: weight row width mismatch");
    for (Index c = 0; c < width; ++c) m.weights(static_cast<Index>(p), c) = r[static_cast<std::size_t>(c)];
  }
  auto b = j.at("bias").get<std::vector<double>>();
  if (b.size() != rows.size()) throw io::ContainerError("svm: bias length mismatch");
  m.bias = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Index>(b.size()));
  m.absent_classes = j.at("absent_classes").get<std::vector<int>>();
  return m;
}

void OvrSvmModel::save(const std::filesystem::path& path) const { io::write_container(path, kSvmKind, to_json()); }

OvrSvmModel OvrSvmModel::load(const std::filesystem::path& path) {
  return from_json(io::read_container(path, kSvmKind));
}

}  // namespace endonet::svm
