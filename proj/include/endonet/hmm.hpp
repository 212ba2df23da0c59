#pragma once

#include "endonet/numeric.hpp"

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace endonet::hhmm {

using Eigen::Index;

/// Raised when every state has zero probability at some timestep.
class DecodeError : public std::runtime_error {
 public:
  explicit DecodeError(Index timestep)
      : std::runtime_error("decode: every state is impossible at timestep " + std::to_string(timestep)),
        timestep_(timestep) {}
  Index timestep() const { return timestep_; }

 private:
  Index timestep_;
};

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct ViterbiPath {
  std::vector<int> states;
  Scalar log_probability = 0;
};

/// Max-product decoding in log space. log_emission is (T x S); transitions
/// are row = from, column = to. Ties resolve to the lowest state index.
template <typename Scalar>
ViterbiPath<Scalar> viterbi_decode(const Vec<Scalar>& log_initial, const Mat<Scalar>& log_transition,
                                   const Mat<Scalar>& log_emission) {
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  const Index s = log_initial.size();
  const Index t_len = log_emission.rows();
  if (log_transition.rows() != s || log_transition.cols() != s || log_emission.cols() != s)
    throw std::invalid_argument("viterbi: inconsistent state counts");
  ViterbiPath<Scalar> out;
  if (t_len == 0) return out;

  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> back(t_len, s);
  Vec<Scalar> delta = log_initial + log_emission.row(0).transpose();
  if (delta.maxCoeff() == neg_inf) throw DecodeError(0);
  Vec<Scalar> next(s);
  for (Index t = 1; t < t_len; ++t) {
    for (Index j = 0; j < s; ++j) {
      Scalar best = neg_inf;
      int arg = 0;
      for (Index i = 0; i < s; ++i) {
        if (log_transition(i, j) == neg_inf || delta(i) == neg_inf) continue;
        const Scalar v = delta(i) + log_transition(i, j);
        if (v > best) {
          best = v;
          arg = static_cast<int>(i);
        }
      }
      back(t, j) = arg;
      next(j) = best == neg_inf ? neg_inf : best + log_emission(t, j);
    }
    if (next.maxCoeff() == neg_inf) throw DecodeError(t);
    delta.swap(next);
  }
  Index last = 0;
  out.log_probability = delta.maxCoeff(&last);
  out.states.resize(static_cast<std::size_t>(t_len));
  out.states.back() = static_cast<int>(last);
  for (Index t = t_len - 1; t > 0; --t)
    out.states[static_cast<std::size_t>(t - 1)] = back(t, out.states[static_cast<std::size_t>(t)]);
  return out;
}

/// Causal forward recursion over one observation at a time. The filtering
/// distribution is renormalized in log space after every step.
template <typename Scalar>
class ForwardFilter {
 public:
  ForwardFilter(Vec<Scalar> log_initial, Mat<Scalar> log_transition)
      : log_initial_(std::move(log_initial)), log_transition_(std::move(log_transition)) {
    if (log_transition_.rows() != log_initial_.size() || log_transition_.cols() != log_initial_.size())
      throw std::invalid_argument("forward: inconsistent state counts");
  }

  /// Consumes the log emission row of the next timestep; returns the log
  /// filtering distribution over states.
  const Vec<Scalar>& step(const Vec<Scalar>& log_emission) {
    if (log_emission.size() != log_initial_.size()) throw std::invalid_argument("forward: emission width mismatch");
    Vec<Scalar> alpha(log_initial_.size());
    if (steps_ == 0) {
      alpha = log_initial_ + log_emission;
    } else {
      for (Index j = 0; j < alpha.size(); ++j)
        alpha(j) = log_sum_exp((log_filter_ + log_transition_.col(j)).eval()) + log_emission(j);
    }
    const Scalar c = log_sum_exp(alpha);
    if (c == -std::numeric_limits<Scalar>::infinity()) throw DecodeError(steps_);
    log_filter_ = alpha.array() - c;
    log_likelihood_ += c;
    ++steps_;
    return log_filter_;
  }

  const Vec<Scalar>& log_filter() const { return log_filter_; }
  Scalar log_likelihood() const { return log_likelihood_; }
  Index steps() const { return steps_; }

 private:
  Vec<Scalar> log_initial_;
  Mat<Scalar> log_transition_;
  Vec<Scalar> log_filter_;
  Scalar log_likelihood_ = 0;
  Index steps_ = 0;
};

template <typename Scalar>
struct ForwardPass {
  Mat<Scalar> log_filtering;  // T x S
  Scalar log_likelihood = 0;
};

template <typename Scalar>
ForwardPass<Scalar> forward_decode(const Vec<Scalar>& log_initial, const Mat<Scalar>& log_transition,
                                   const Mat<Scalar>& log_emission) {
  ForwardFilter<Scalar> filter(log_initial, log_transition);
  ForwardPass<Scalar> out;
  out.log_filtering.resize(log_emission.rows(), log_initial.size());
  for (Index t = 0; t < log_emission.rows(); ++t)
    out.log_filtering.row(t) = filter.step(log_emission.row(t).transpose()).transpose();
  out.log_likelihood = filter.log_likelihood();
  return out;
}

}  // namespace endonet::hhmm
