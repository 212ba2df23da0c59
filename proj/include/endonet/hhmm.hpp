#pragma once

#include "endonet/gmm.hpp"
#include "endonet/hmm.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

namespace endonet::hhmm {

/// Top level of the model: one state per phase.
struct PhaseTopology {
  Eigen::MatrixXd transition;  // row-stochastic, row = from
  Eigen::VectorXd initial;
  Eigen::MatrixXd counts;      // observed bigram counts, kept for routing

  int phases() const { return static_cast<int>(initial.size()); }
  /// Non-zero transitions as (from, to, probability), row-major order.
  std::vector<std::tuple<int, int, double>> edges() const;
  /// One "from to probability" line per non-zero transition, using the
  /// given display names when provided.
  std::string dump(const std::vector<std::string>& names = {}) const;
  void validate() const;
};

/// Bigram estimate over annotated label sequences. Only observed transitions
/// and self-loops are smoothed by `epsilon`; everything else stays exactly 0.
PhaseTopology learn_topology(const std::vector<std::vector<int>>& sequences, int phases, double epsilon = 1e-3);

struct BottomStatePolicy {
  bool data_driven = true;
  int fixed_count = 1;
  double seconds_per_state = 30.0;
  int max_states = 8;

  /// clamp(ceil(median / seconds_per_state), 1, max_states) when data driven.
  int states_for(double median_duration) const;
};

struct HhmmConfig {
  int phases = 7;
  int gmm_components = 5;
  BottomStatePolicy bottom;
  EmConfig em;
  double epsilon = 1e-3;
  double emission_floor = -700.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const HhmmConfig& c);
void from_json(const nlohmann::json& j, HhmmConfig& c);

struct LabeledSequence {
  Eigen::MatrixXd observations;  // T x D
  std::vector<int> phases;       // T
};

/// Two-level model decoded through its flat equivalent: flat states are
/// (phase, sub-state) pairs with left-to-right chains inside each phase and
/// phase exits leaving from the last sub-state, routed by the top level.
struct Hhmm {
  PhaseTopology topology;
  std::vector<int> substates;                 // per phase
  std::vector<Eigen::VectorXd> stay;          // per phase, per sub-state self-loop probability
  std::vector<double> exit;                   // per phase, exit probability of the last sub-state
  std::vector<Gmm> emissions;                 // per flat state
  double emission_floor = -700.0;
  std::vector<std::string> warnings;

  // Derived by finalize().
  std::vector<int> state_phase;
  std::vector<int> state_offset;
  Eigen::VectorXd log_initial;
  Eigen::MatrixXd log_transition;

  /// Rebuilds the flat parameters from topology, sub-state counts, stay and
  /// exit probabilities. Validates row-stochasticity.
  void finalize();

  int phases() const { return topology.phases(); }
  Index states() const { return static_cast<Index>(state_phase.size()); }
  Index dimension() const { return emissions.empty() ? 0 : emissions.front().dimension(); }
  Eigen::MatrixXd transition() const { return log_transition.array().exp(); }

  /// (T x S) per-state log densities, clamped below at emission_floor.
  Eigen::MatrixXd log_emissions(const Eigen::MatrixXd& observations) const;
  Eigen::VectorXd log_emissions(const Eigen::VectorXd& observation) const;

  nlohmann::json to_json() const;
  static Hhmm from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Hhmm load(const std::filesystem::path& path);
};

Hhmm train_hhmm(const std::vector<LabeledSequence>& data, const HhmmConfig& config);

struct DecodeResult {
  std::vector<int> phases;
  std::vector<int> states;
  Eigen::MatrixXd log_filtering;  // T x phases (online only)
  double log_probability = 0.0;   // best joint path (offline)
  double log_likelihood = 0.0;    // sequence log-likelihood (online)
};

DecodeResult viterbi(const Hhmm& model, const Eigen::MatrixXd& observations);

/// Online phase estimation: observations are pushed one at a time and the
/// estimate only ever depends on what has been pushed so far.
class OnlineDecoder {
 public:
  explicit OnlineDecoder(const Hhmm& model);
  /// Returns the phase with the highest filtered probability after `obs`.
  int push(const Eigen::VectorXd& observation);
  /// Log filtering distribution over phases (bottom states marginalized).
  const Eigen::VectorXd& phase_log_posterior() const { return phase_log_posterior_; }
  const Eigen::VectorXd& state_log_posterior() const { return filter_.log_filter(); }
  double log_likelihood() const { return filter_.log_likelihood(); }
  Index steps() const { return filter_.steps(); }

 private:
  const Hhmm& model_;
  ForwardFilter<double> filter_;
  Eigen::VectorXd phase_log_posterior_;
};

DecodeResult forward_filter(const Hhmm& model, const Eigen::MatrixXd& observations);

}  // namespace endonet::hhmm
