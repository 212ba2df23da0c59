#include "endonet/hhmm.hpp"

#include "endonet/container.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace endonet::hhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr const char* kHhmmKind = "hhmm";

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) rows[static_cast<std::size_t>(i)].assign(m.row(i).begin(), m.row(i).end());
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c) m(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

struct Run {
  std::size_t sequence;
  Index start;
  Index length;
  int phase;
};

std::vector<Run> phase_runs(const std::vector<LabeledSequence>& data) {
  std::vector<Run> runs;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& labels = data[s].phases;
    Index start = 0;
    for (Index t = 1; t <= static_cast<Index>(labels.size()); ++t)
      if (t == static_cast<Index>(labels.size()) ||
          labels[static_cast<std::size_t>(t)] != labels[static_cast<std::size_t>(start)]) {
        runs.push_back({s, start, t - start, labels[static_cast<std::size_t>(start)]});
        start = t;
      }
  }
  return runs;
}

double median(std::vector<Index> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? static_cast<double>(v[n / 2]) : 0.5 * static_cast<double>(v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<std::tuple<int, int, double>> PhaseTopology::edges() const {
  std::vector<std::tuple<int, int, double>> out;
  for (Index p = 0; p < transition.rows(); ++p)
    for (Index q = 0; q < transition.cols(); ++q)
      if (transition(p, q) > 0.0) out.emplace_back(static_cast<int>(p), static_cast<int>(q), transition(p, q));
  return out;
}

std::string PhaseTopology::dump(const std::vector<std::string>& names) const {
  auto name = [&](int p) {
    return p < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(p)] : std::to_string(p);
  };
  std::ostringstream out;
  out.precision(9);
  out << "# phase successor probability\n";
  for (const auto& [p, q, prob] : edges()) out << name(p) << ' ' << name(q) << ' ' << prob << '\n';
  return out.str();
}

void PhaseTopology::validate() const {
  if (transition.rows() != initial.size() || transition.cols() != initial.size())
    throw std::invalid_argument("topology: shape mismatch");
  if (std::abs(initial.sum() - 1.0) > 1e-9) throw std::invalid_argument("topology: initial distribution must sum to 1");
  for (Index p = 0; p < transition.rows(); ++p) {
    if (std::abs(transition.row(p).sum() - 1.0) > 1e-9)
      throw std::invalid_argument("topology: row " + std::to_string(p) + " is not stochastic");
    if (!(transition(p, p) > 0.0)) throw std::invalid_argument("topology: missing self-loop");
  }
}

PhaseTopology learn_topology(const std::vector<std::vector<int>>& sequences, int phases, double epsilon) {
  if (sequences.empty()) throw std::invalid_argument("learn_topology: no sequences");
  if (phases < 1) throw std::invalid_argument("learn_topology: need at least one phase");
  if (!(epsilon > 0.0)) throw std::invalid_argument("learn_topology: epsilon must be positive");
  PhaseTopology topo;
  topo.counts = Eigen::MatrixXd::Zero(phases, phases);
  Eigen::VectorXd first = Eigen::VectorXd::Zero(phases);
  for (const auto& seq : sequences) {
    if (seq.empty()) throw std::invalid_argument("learn_topology: empty sequence");
    for (int l : seq)
      if (l < 0 || l >= phases) throw std::invalid_argument("learn_topology: label " + std::to_string(l) + " outside vocabulary");
    first(seq.front()) += 1.0;
    for (std::size_t t = 1; t < seq.size(); ++t) topo.counts(seq[t - 1], seq[t]) += 1.0;
  }
  topo.transition = Eigen::MatrixXd::Zero(phases, phases);
  for (int p = 0; p < phases; ++p) {
    for (int q = 0; q < phases; ++q)
      if (topo.counts(p, q) > 0.0 || p == q) topo.transition(p, q) = topo.counts(p, q) + epsilon;
    topo.transition.row(p) /= topo.transition.row(p).sum();
  }
  topo.initial = Eigen::VectorXd::Zero(phases);
  for (int p = 0; p < phases; ++p)
    if (first(p) > 0.0) topo.initial(p) = first(p) + epsilon;
  topo.initial /= topo.initial.sum();
  return topo;
}

int BottomStatePolicy::states_for(double median_duration) const {
  if (!data_driven) return std::max(1, fixed_count);
  const int k = static_cast<int>(std::ceil(median_duration / seconds_per_state));
  return std::clamp(k, 1, max_states);
}

void to_json(nlohmann::json& j, const HhmmConfig& c) {
  j = {{"phases", c.phases},
       {"gmm_components", c.gmm_components},
       {"bottom_states", c.bottom.data_driven ? nlohmann::json("data-driven") : nlohmann::json(c.bottom.fixed_count)},
       {"seconds_per_state", c.bottom.seconds_per_state},
       {"max_bottom_states", c.bottom.max_states},
       {"em", c.em},
       {"epsilon", c.epsilon},
       {"emission_floor", c.emission_floor},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, HhmmConfig& c) {
  c.phases = j.value("phases", c.phases);
  c.gmm_components = j.value("gmm_components", c.gmm_components);
  if (j.contains("bottom_states")) {
    const auto& b = j.at("bottom_states");
    if (b.is_string()) {
      if (b.get<std::string>() != "data-driven") throw std::invalid_argument("hhmm: unknown bottom_states policy");
      c.bottom.data_driven = true;
    } else {
      c.bottom.data_driven = false;
      c.bottom.fixed_count = b.get<int>();
    }
  }
  c.bottom.seconds_per_state = j.value("seconds_per_state", c.bottom.seconds_per_state);
  c.bottom.max_states = j.value("max_bottom_states", c.bottom.max_states);
  if (j.contains("em")) c.em = j.at("em").get<EmConfig>();
  c.epsilon = j.value("epsilon", c.epsilon);
  c.emission_floor = j.value("emission_floor", c.emission_floor);
  c.seed = j.value("seed", c.seed);
}

void Hhmm::finalize() {
  const int n_phases = topology.phases();
  topology.validate();
  if (static_cast<int>(substates.size()) != n_phases || static_cast<int>(stay.size()) != n_phases ||
      static_cast<int>(exit.size()) != n_phases)
    throw std::invalid_argument("hhmm: per-phase parameters do not match the phase count");

  state_phase.clear();
  state_offset.assign(static_cast<std::size_t>(n_phases), 0);
  for (int p = 0; p < n_phases; ++p) {
    if (substates[static_cast<std::size_t>(p)] < 1) throw std::invalid_argument("hhmm: every phase needs a bottom state");
    if (stay[static_cast<std::size_t>(p)].size() != substates[static_cast<std::size_t>(p)])
      throw std::invalid_argument("hhmm: stay vector length mismatch");
    state_offset[static_cast<std::size_t>(p)] = static_cast<int>(state_phase.size());
    for (int j = 0; j < substates[static_cast<std::size_t>(p)]; ++j) state_phase.push_back(p);
  }
  const Index s = states();
  if (static_cast<Index>(emissions.size()) != s) throw std::invalid_argument("hhmm: one emission model per bottom state required");

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(s, s);
  Eigen::VectorXd pi = Eigen::VectorXd::Zero(s);
  for (int p = 0; p < n_phases; ++p) {
    const auto pu = static_cast<std::size_t>(p);
    const int off = state_offset[pu];
    const int k = substates[pu];
    pi(off) = topology.initial(p);
    for (int j = 0; j + 1 < k; ++j) {
      a(off + j, off + j) = stay[pu](j);
      a(off + j, off + j + 1) = 1.0 - stay[pu](j);
    }
    const int last = off + k - 1;
    const double off_diag = topology.transition.row(p).sum() - topology.transition(p, p);
    const double leave = off_diag > 0.0 ? exit[pu] : 0.0;
    a(last, last) = 1.0 - leave;
    if (leave > 0.0)
      for (int q = 0; q < n_phases; ++q)
        if (q != p && topology.transition(p, q) > 0.0)
          a(last, state_offset[static_cast<std::size_t>(q)]) += leave * topology.transition(p, q) / off_diag;
  }
  for (Index i = 0; i < s; ++i)
    if (std::abs(a.row(i).sum() - 1.0) > 1e-9) throw std::logic_error("hhmm: flattened row is not stochastic");
  log_initial = pi.unaryExpr([](double v) { return safe_log(v); });
  log_transition = a.unaryExpr([](double v) { return safe_log(v); });
}

Eigen::MatrixXd Hhmm::log_emissions(const Eigen::MatrixXd& observations) const {
  if (observations.cols() != dimension())
    throw std::invalid_argument("hhmm: observation width " + std::to_string(observations.cols()) +
                                " does not match model dimension " + std::to_string(dimension()));
  Eigen::MatrixXd out(observations.rows(), states());
  for (Index s = 0; s < states(); ++s)
    out.col(s) = emissions[static_cast<std::size_t>(s)].log_density(observations).cwiseMax(emission_floor);
  return out;
}

Eigen::VectorXd Hhmm::log_emissions(const Eigen::VectorXd& observation) const {
  if (observation.size() != dimension())
    throw std::invalid_argument("hhmm: observation width " + std::to_string(observation.size()) +
                                " does not match model dimension " + std::to_string(dimension()));
  Eigen::VectorXd out(states());
  for (Index s = 0; s < states(); ++s)
    out(s) = std::max(emissions[static_cast<std::size_t>(s)].log_density(observation), emission_floor);
  return out;
}

nlohmann::json Hhmm::to_json() const {
  nlohmann::json stays = nlohmann::json::array();
  for (const auto& v : stay) stays.push_back(std::vector<double>(v.begin(), v.end()));
  nlohmann::json em = nlohmann::json::array();
  for (const auto& g : emissions) em.push_back(g.to_json());
  return {{"topology",
           {{"transition", matrix_json(topology.transition)},
            {"initial", std::vector<double>(topology.initial.begin(), topology.initial.end())},
            {"counts", matrix_json(topology.counts)}}},
          {"substates", substates},
          {"stay", stays},
          {"exit", exit},
          {"emissions", em},
          {"emission_floor", emission_floor},
          {"warnings", warnings}};
}

Hhmm Hhmm::from_json(const nlohmann::json& j) {
  Hhmm m;
  m.topology.transition = matrix_from_json(j.at("topology").at("transition"));
  m.topology.initial = vector_from_json(j.at("topology").at("initial"));
  m.topology.counts = matrix_from_json(j.at("topology").at("counts"));
  m.substates = j.at("substates").get<std::vector<int>>();
  for (const auto& s : j.at("stay")) m.stay.push_back(vector_from_json(s));
  m.exit = j.at("exit").get<std::vector<double>>();
  for (const auto& g : j.at("emissions")) m.emissions.push_back(Gmm::from_json(g));
  m.emission_floor = j.at("emission_floor").get<double>();
  m.warnings = j.at("warnings").get<std::vector<std::string>>();
  m.finalize();
  return m;
}

void Hhmm::save(const std::filesystem::path& path) const { io::write_container(path, kHhmmKind, to_json()); }

Hhmm Hhmm::load(const std::filesystem::path& path) { return from_json(io::read_container(path, kHhmmKind)); }

Hhmm train_hhmm(const std::vector<LabeledSequence>& data, const HhmmConfig& config) {
  const int n_phases = config.phases;
  if (data.empty()) throw std::invalid_argument("train_hhmm: no training sequences");
  const Index dim = data.front().observations.cols();
  Index total_frames = 0;
  std::vector<std::vector<int>> labels;
  for (const auto& seq : data) {
    if (seq.observations.rows() != static_cast<Index>(seq.phases.size()) || seq.phases.empty())
      throw std::invalid_argument("train_hhmm: observations and annotations are not aligned");
    if (seq.observations.cols() != dim) throw std::invalid_argument("train_hhmm: inconsistent observation width");
    total_frames += seq.observations.rows();
    labels.push_back(seq.phases);
  }
  if (config.gmm_components < 1) throw std::invalid_argument("train_hhmm: need at least one mixture component");

  Hhmm model;
  model.emission_floor = config.emission_floor;
  model.topology = learn_topology(labels, n_phases, config.epsilon);

  const auto runs = phase_runs(data);
  std::vector<std::vector<Index>> durations(static_cast<std::size_t>(n_phases));
  for (const auto& r : runs) durations[static_cast<std::size_t>(r.phase)].push_back(r.length);
  model.substates.resize(static_cast<std::size_t>(n_phases));
  for (int p = 0; p < n_phases; ++p) {
    const auto& d = durations[static_cast<std::size_t>(p)];
    model.substates[static_cast<std::size_t>(p)] = d.empty() ? 1 : config.bottom.states_for(median(d));
  }

  // Uniform temporal segmentation of every run into the phase's sub-states.
  // Runs shorter than the chain occupy its last sub-states.
  std::vector<std::vector<int>> substate_of(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) substate_of[s].resize(data[s].phases.size());
  for (const auto& r : runs) {
    const Index k = model.substates[static_cast<std::size_t>(r.phase)];
    for (Index j = 0; j < r.length; ++j) {
      const Index sub = r.length >= k ? (j * k) / r.length : k - r.length + j;
      substate_of[r.sequence][static_cast<std::size_t>(r.start + j)] = static_cast<int>(sub);
    }
  }

  // Intra-phase pair counts.
  std::vector<Eigen::VectorXd> n_stay(static_cast<std::size_t>(n_phases)), n_adv(static_cast<std::size_t>(n_phases));
  for (int p = 0; p < n_phases; ++p) {
    n_stay[static_cast<std::size_t>(p)] = Eigen::VectorXd::Zero(model.substates[static_cast<std::size_t>(p)]);
    n_adv[static_cast<std::size_t>(p)] = Eigen::VectorXd::Zero(model.substates[static_cast<std::size_t>(p)]);
  }
  for (std::size_t s = 0; s < data.size(); ++s)
    for (std::size_t t = 1; t < data[s].phases.size(); ++t) {
      const int p = data[s].phases[t];
      if (data[s].phases[t - 1] != p) continue;
      const int a = substate_of[s][t - 1], b = substate_of[s][t];
      if (a == b) n_stay[static_cast<std::size_t>(p)](a) += 1.0;
      else n_adv[static_cast<std::size_t>(p)](a) += 1.0;
    }

  const double eps = config.epsilon;
  model.stay.resize(static_cast<std::size_t>(n_phases));
  model.exit.resize(static_cast<std::size_t>(n_phases));
  for (int p = 0; p < n_phases; ++p) {
    const auto pu = static_cast<std::size_t>(p);
    const int k = model.substates[pu];
    model.stay[pu].resize(k);
    for (int j = 0; j + 1 < k; ++j)
      model.stay[pu](j) = (n_stay[pu](j) + eps) / (n_stay[pu](j) + n_adv[pu](j) + 2.0 * eps);
    // The last sub-state leaves with the top level's observed exits, so a
    // single sub-state reproduces the phase-level transition row exactly.
    double leave = 0.0;
    for (int q = 0; q < n_phases; ++q)
      if (q != p && model.topology.counts(p, q) > 0.0) leave += model.topology.counts(p, q) + eps;
    const double stay_w = n_stay[pu](k - 1) + eps;
    model.stay[pu](k - 1) = stay_w / (stay_w + leave);
    model.exit[pu] = leave / (stay_w + leave);
  }

  // Observation models.
  Eigen::RowVectorXd global_mean = Eigen::RowVectorXd::Zero(dim);
  for (const auto& seq : data) global_mean += seq.observations.colwise().sum();
  global_mean /= static_cast<double>(total_frames);
  Eigen::RowVectorXd global_var = Eigen::RowVectorXd::Zero(dim);
  for (const auto& seq : data) global_var += (seq.observations.rowwise() - global_mean).array().square().colwise().sum().matrix();
  global_var /= static_cast<double>(total_frames);

  auto gather = [&](auto&& keep) {
    Index count = 0;
    for (std::size_t s = 0; s < data.size(); ++s)
      for (std::size_t t = 0; t < data[s].phases.size(); ++t)
        if (keep(s, t)) ++count;
    Eigen::MatrixXd out(count, dim);
    Index r = 0;
    for (std::size_t s = 0; s < data.size(); ++s)
      for (std::size_t t = 0; t < data[s].phases.size(); ++t)
        if (keep(s, t)) out.row(r++) = data[s].observations.row(static_cast<Index>(t));
    return out;
  };

  for (int p = 0; p < n_phases; ++p) {
    const auto pu = static_cast<std::size_t>(p);
    if (durations[pu].empty()) {
      model.warnings.push_back("phase " + std::to_string(p) + " has no training frames; using a broad prior emission");
      Gmm g;
      g.weights = Eigen::VectorXd::Ones(1);
      g.means = global_mean;
      g.variances = (10.0 * global_var).cwiseMax(config.em.variance_floor);
      model.emissions.push_back(std::move(g));
      continue;
    }
    for (int j = 0; j < model.substates[pu]; ++j) {
      Eigen::MatrixXd samples =
          gather([&](std::size_t s, std::size_t t) { return data[s].phases[t] == p && substate_of[s][t] == j; });
      if (samples.rows() == 0) {
        model.warnings.push_back("phase " + std::to_string(p) + " sub-state " + std::to_string(j) +
                                 " received no frames; fitted on the whole phase");
        samples = gather([&](std::size_t s, std::size_t t) { return data[s].phases[t] == p; });
      }
      const int k = std::min<int>(config.gmm_components, static_cast<int>(samples.rows()));
      const std::uint64_t seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(model.emissions.size());
      model.emissions.push_back(fit_gmm(samples, k, seed, config.em).gmm);
    }
  }
  model.finalize();
  return model;
}

DecodeResult viterbi(const Hhmm& model, const Eigen::MatrixXd& observations) {
  const Eigen::MatrixXd e = model.log_emissions(observations);
  const auto path = viterbi_decode<double>(model.log_initial, model.log_transition, e);
  DecodeResult out;
  out.states = path.states;
  out.log_probability = path.log_probability;
  out.phases.reserve(path.states.size());
  for (int s : path.states) out.phases.push_back(model.state_phase[static_cast<std::size_t>(s)]);
  return out;
}

OnlineDecoder::OnlineDecoder(const Hhmm& model)
    : model_(model), filter_(model.log_initial, model.log_transition) {}

int OnlineDecoder::push(const Eigen::VectorXd& observation) {
  const auto& f = filter_.step(model_.log_emissions(observation));
  const int n_phases = model_.phases();
  phase_log_posterior_.resize(n_phases);
  for (int p = 0; p < n_phases; ++p) {
    const auto pu = static_cast<std::size_t>(p);
    phase_log_posterior_(p) = log_sum_exp(f.segment(model_.state_offset[pu], model_.substates[pu]));
  }
  Index arg = 0;
  phase_log_posterior_.maxCoeff(&arg);
  return static_cast<int>(arg);
}

DecodeResult forward_filter(const Hhmm& model, const Eigen::MatrixXd& observations) {
  if (observations.cols() != model.dimension())
    throw std::invalid_argument("hhmm: observation width " + std::to_string(observations.cols()) +
                                " does not match model dimension " + std::to_string(model.dimension()));
  OnlineDecoder decoder(model);
  DecodeResult out;
  out.log_filtering.resize(observations.rows(), model.phases());
  for (Index t = 0; t < observations.rows(); ++t) {
    out.phases.push_back(decoder.push(observations.row(t).transpose()));
    Index arg = 0;
    decoder.state_log_posterior().maxCoeff(&arg);
    out.states.push_back(static_cast<int>(arg));
    out.log_filtering.row(t) = decoder.phase_log_posterior().transpose();
  }
  out.log_likelihood = decoder.log_likelihood();
  return out;
}

}  // namespace endonet::hhmm
