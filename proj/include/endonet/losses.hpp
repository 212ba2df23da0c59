#pragma once

#include "endonet/numeric.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace endonet {

inline constexpr int kToolCount = 7;
inline constexpr int kPhaseCount = 7;

/// Coefficients of the combined objective a * L_T + b * L_P.
struct LossWeights {
  double tool = 1.0;
  double phase = 1.0;

  void validate() const {
    if (!(tool >= 0.0) || !(phase >= 0.0) || !(tool + phase > 0.0))
      throw std::invalid_argument("loss weights must be non-negative with a positive sum");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

namespace detail {

template <typename DL, typename DT>
void check_batch(const Eigen::MatrixBase<DL>& logits, const Eigen::MatrixBase<DT>& targets) {
  if (logits.rows() == 0) throw std::invalid_argument("loss: empty batch");
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw std::invalid_argument("loss: logits and targets differ in shape");
}

template <typename DT>
void check_binary(const Eigen::MatrixBase<DT>& targets) {
  for (Eigen::Index i = 0; i < targets.rows(); ++i)
    for (Eigen::Index t = 0; t < targets.cols(); ++t)
      if (targets(i, t) != 0 && targets(i, t) != 1) throw std::invalid_argument("tool loss: targets must be 0 or 1");
}

template <typename DT>
void check_one_hot(const Eigen::MatrixBase<DT>& targets) {
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index p = 0; p < targets.cols(); ++p) {
      const auto v = targets(i, p);
      if (v == 1) ++ones;
      else if (v != 0) throw std::invalid_argument("phase loss: target row " + std::to_string(i) + " is not one-hot");
    }
    if (ones != 1) throw std::invalid_argument("phase loss: target row " + std::to_string(i) + " is not one-hot");
  }
}

}  // namespace detail

/// Multi-label cross-entropy summed over tools and averaged over images,
/// evaluated from the logits: k*softplus(-v) + (1-k)*softplus(v).
template <typename DL, typename DT>
typename DL::Scalar tool_loss(const Eigen::MatrixBase<DL>& logits, const Eigen::MatrixBase<DT>& targets) {
  using Scalar = typename DL::Scalar;
  detail::check_batch(logits, targets);
  detail::check_binary(targets);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index t = 0; t < logits.cols(); ++t) {
      const Scalar v = logits(i, t);
      const Scalar k = static_cast<Scalar>(targets(i, t));
      total += k * softplus(-v) + (Scalar(1) - k) * softplus(v);
    }
  return total / static_cast<Scalar>(logits.rows());
}

/// dL_T/dv = (sigmoid(v) - k) / N_i
template <typename DL, typename DT>
Eigen::Matrix<typename DL::Scalar, Eigen::Dynamic, Eigen::Dynamic> tool_loss_grad(
    const Eigen::MatrixBase<DL>& logits, const Eigen::MatrixBase<DT>& targets) {
  using Scalar = typename DL::Scalar;
  detail::check_batch(logits, targets);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> g =
      logits.unaryExpr([](Scalar v) { return sigmoid(v); }) - targets.template cast<Scalar>();
  return g / static_cast<Scalar>(logits.rows());
}

/// Softmax cross-entropy averaged over images, via log-softmax.
template <typename DL, typename DT>
typename DL::Scalar phase_loss(const Eigen::MatrixBase<DL>& logits, const Eigen::MatrixBase<DT>& targets) {
  using Scalar = typename DL::Scalar;
  detail::check_batch(logits, targets);
  detail::check_one_hot(targets);
  const auto log_p = log_softmax_rows(logits);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index p = 0; p < logits.cols(); ++p)
      if (targets(i, p) == 1) total -= log_p(i, p);
  return total / static_cast<Scalar>(logits.rows());
}

/// dL_P/dw = (softmax(w) - l) / N_i
template <typename DL, typename DT>
Eigen::Matrix<typename DL::Scalar, Eigen::Dynamic, Eigen::Dynamic> phase_loss_grad(
    const Eigen::MatrixBase<DL>& logits, const Eigen::MatrixBase<DT>& targets) {
  using Scalar = typename DL::Scalar;
  detail::check_batch(logits, targets);
  auto g = softmax_rows(logits);
  g -= targets.template cast<Scalar>();
  return g / static_cast<Scalar>(logits.rows());
}

inline double total_loss(double tool, double phase, const LossWeights& w) {
  if (!std::isfinite(tool) || !std::isfinite(phase)) throw std::invalid_argument("total_loss: non-finite input");
  return w.tool * tool + w.phase * phase;
}

}  // namespace endonet
