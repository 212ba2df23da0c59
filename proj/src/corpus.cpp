#include "endonet/corpus.hpp"

#include "endonet/seed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace endonet::corpus {

namespace {

Eigen::VectorXd random_unit(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (Index i = 0; i < d; ++i) v(i) = n(rng);
  return v / v.norm();
}

// Image-mode generating parameters are stored in the anchor/offset rows.
// Phase row: r, g, b, stripe frequency, stripe angle, texture amplitude.
// Tool row: r, g, b, x0, y0, vertical (0/1).
constexpr Index kImagePhaseParams = 6;
constexpr Index kImageToolParams = 6;

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

int PhaseVocabulary::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < phases.size(); ++i)
    if (phases[i].id == id) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> PhaseVocabulary::ids() const {
  std::vector<std::string> out;
  for (const auto& p : phases) out.push_back(p.id);
  return out;
}

void PhaseVocabulary::validate() const {
  if (phases.size() < 2) throw std::invalid_argument("vocabulary '" + name + "': needs at least two phases");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const auto& p = phases[i];
    if (p.id.empty() || p.id.find_first_of(",\n ") != std::string::npos)
      throw std::invalid_argument("vocabulary '" + name + "': invalid phase id '" + p.id + "'");
    if (!(p.mean_duration > 0.0) || !(p.std_duration > 0.0))
      throw std::invalid_argument("vocabulary '" + name + "': phase " + p.id + " needs positive duration moments");
    for (std::size_t j = 0; j < i; ++j)
      if (phases[j].id == p.id) throw std::invalid_argument("vocabulary '" + name + "': duplicate phase id " + p.id);
  }
}

PhaseVocabulary PhaseVocabulary::cholec80() {
  return {"cholec80",
          {{"P1", "Preparation", 125, 95},
           {"P2", "Calot triangle dissection", 954, 538},
           {"P3", "Clipping and cutting", 168, 152},
           {"P4", "Gallbladder dissection", 857, 551},
           {"P5", "Gallbladder packaging", 98, 53},
           {"P6", "Cleaning and coagulation", 178, 166},
           {"P7", "Gallbladder retraction", 83, 56}}};
}

PhaseVocabulary PhaseVocabulary::endovis() {
  return {"endovis",
          {{"P0", "Placement trocars", 180, 118},
           {"P12", "Preparation", 419, 215},
           {"P3", "Clipping and cutting", 390, 194},
           {"P4", "Gallbladder dissection", 563, 436},
           {"P5", "Retrieving gallbladder", 391, 246},
           {"P6", "Hemostasis", 336, 62},
           {"P7", "Drainage and closing", 171, 128}}};
}

PhaseVocabulary PhaseVocabulary::builtin(const std::string& name) {
  if (name == "cholec80") return cholec80();
  if (name == "endovis") return endovis();
  throw std::invalid_argument("unknown phase vocabulary '" + name + "'");
}

void to_json(nlohmann::json& j, const PhaseVocabulary& v) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : v.phases)
    phases.push_back({{"id", p.id}, {"name", p.name}, {"mean", p.mean_duration}, {"std", p.std_duration}});
  j = {{"name", v.name}, {"phases", phases}};
}

void from_json(const nlohmann::json& j, PhaseVocabulary& v) {
  v.name = j.at("name").get<std::string>();
  v.phases.clear();
  for (const auto& p : j.at("phases"))
    v.phases.push_back({p.at("id").get<std::string>(), p.value("name", std::string()), p.at("mean").get<double>(),
                        p.at("std").get<double>()});
  v.validate();
}

// ---------------------------------------------------------------------------
// Tool usage

void ToolUsageProfile::validate(int phases) const {
  if (probability.rows() != phases || probability.cols() != kTools)
    throw std::invalid_argument("tool usage profile must be phases x 7");
  if ((probability.array() < 0.0).any() || (probability.array() > 1.0).any())
    throw std::invalid_argument("tool usage probabilities must lie in [0, 1]");
  if (!(persistence >= 0.0 && persistence < 1.0)) throw std::invalid_argument("tool persistence must lie in [0, 1)");
}

ToolUsageProfile ToolUsageProfile::cholec80() {
  ToolUsageProfile u;
  u.probability.resize(7, kTools);
  // grasper bipolar hook scissors clipper irrigator bag
  u.probability << 0.60, 0.02, 0.30, 0.01, 0.01, 0.02, 0.00,  //
      0.90, 0.05, 0.95, 0.02, 0.02, 0.03, 0.00,               //
      0.85, 0.03, 0.10, 0.35, 0.60, 0.05, 0.00,               //
      0.90, 0.08, 0.90, 0.02, 0.02, 0.05, 0.00,               //
      0.80, 0.02, 0.05, 0.01, 0.01, 0.02, 0.90,               //
      0.50, 0.60, 0.05, 0.02, 0.05, 0.70, 0.05,               //
      0.70, 0.05, 0.02, 0.01, 0.01, 0.10, 0.85;
  return u;
}

ToolUsageProfile ToolUsageProfile::endovis() {
  ToolUsageProfile u = cholec80();
  Eigen::MatrixXd p(7, kTools);
  p.row(0) << 0.20, 0.01, 0.10, 0.01, 0.01, 0.01, 0.00;
  p.row(1) = 0.3 * u.probability.row(0) + 0.7 * u.probability.row(1);
  p.bottomRows(5) = u.probability.bottomRows(5);
  u.probability = p;
  return u;
}

ToolUsageProfile ToolUsageProfile::for_vocabulary(const PhaseVocabulary& v) {
  if (v.name == "cholec80") return cholec80();
  if (v.name == "endovis") return endovis();
  throw std::invalid_argument("no default tool usage profile for vocabulary '" + v.name + "'");
}

// ---------------------------------------------------------------------------
// Grammar

void PhaseGrammar::validate(int phases) const {
  if (successor.rows() != phases || successor.cols() != phases)
    throw std::invalid_argument("phase grammar must be phases x phases");
  if (start < 0 || start >= phases) throw std::invalid_argument("phase grammar start out of range");
  if (max_visits < 1) throw std::invalid_argument("phase grammar max_visits must be positive");
  for (Index p = 0; p < phases; ++p) {
    const double s = successor.row(p).sum();
    if ((successor.row(p).array() < 0.0).any() || (s != 0.0 && std::abs(s - 1.0) > 1e-9))
      throw std::invalid_argument("phase grammar row " + std::to_string(p) + " is neither terminal nor stochastic");
    if (successor(p, p) != 0.0) throw std::invalid_argument("phase grammar: segments cannot follow themselves");
  }
}

PhaseGrammar PhaseGrammar::cholec80() {
  PhaseGrammar g;
  g.successor = Eigen::MatrixXd::Zero(7, 7);
  g.successor(0, 1) = 1.0;
  g.successor(1, 2) = 1.0;
  g.successor(2, 3) = 1.0;
  g.successor(3, 4) = 1.0;
  g.successor(4, 5) = 0.7;  // packaging then cleaning
  g.successor(4, 6) = 0.3;  // cleaning skipped
  g.successor(5, 4) = 0.3;  // back to packaging
  g.successor(5, 6) = 0.7;
  g.max_visits = 2;
  return g;
}

PhaseGrammar PhaseGrammar::endovis() {
  PhaseGrammar g;
  g.successor = Eigen::MatrixXd::Zero(7, 7);
  for (int p = 0; p < 6; ++p) g.successor(p, p + 1) = 1.0;
  g.max_visits = 1;
  return g;
}

PhaseGrammar PhaseGrammar::for_vocabulary(const PhaseVocabulary& v) {
  if (v.name == "cholec80") return cholec80();
  if (v.name == "endovis") return endovis();
  throw std::invalid_argument("no default phase grammar for vocabulary '" + v.name + "'");
}

std::vector<std::pair<int, int>> PhaseGrammar::allowed_transitions() const {
  std::vector<std::pair<int, int>> out;
  for (Index p = 0; p < successor.rows(); ++p)
    for (Index q = 0; q < successor.cols(); ++q)
      if (p == q || successor(p, q) > 0.0) out.emplace_back(static_cast<int>(p), static_cast<int>(q));
  return out;
}

std::vector<int> sample_phase_sequence(const PhaseGrammar& grammar, std::mt19937_64& rng) {
  const Index n = grammar.successor.rows();
  std::vector<int> visits(static_cast<std::size_t>(n), 0);
  std::vector<int> out{grammar.start};
  visits[static_cast<std::size_t>(grammar.start)] = 1;
  for (;;) {
    Eigen::VectorXd w = grammar.successor.row(out.back()).transpose();
    for (Index q = 0; q < n; ++q)
      if (visits[static_cast<std::size_t>(q)] >= grammar.max_visits) w(q) = 0.0;
    const double total = w.sum();
    if (total <= 0.0) break;
    const int next = std::discrete_distribution<int>(w.data(), w.data() + n)(rng);
    out.push_back(next);
    ++visits[static_cast<std::size_t>(next)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Durations and observations

Index sample_duration(const PhaseInfo& phase, double scale, std::mt19937_64& rng) {
  if (!(scale > 0.0)) throw std::invalid_argument("sample_duration: scale must be positive");
  std::normal_distribution<double> d(phase.mean_duration * scale, phase.std_duration * scale);
  return std::max<Index>(1, static_cast<Index>(std::llround(d(rng))));
}

double expected_duration(const PhaseInfo& phase, double scale) { return phase.mean_duration * scale; }

std::string to_string(ObservationKind k) { return k == ObservationKind::feature ? "feature" : "image"; }

ObservationKind observation_kind_from_string(const std::string& s) {
  if (s == "feature") return ObservationKind::feature;
  if (s == "image") return ObservationKind::image;
  throw std::invalid_argument("unknown observation kind '" + s + "'");
}

nn::Shape ObservationModel::frame_shape() const {
  if (kind == ObservationKind::feature) return {dimension};
  return {3, image_size, image_size};
}

ObservationModel ObservationModel::make(ObservationKind kind, int phases, std::uint64_t seed, Index dimension,
                                        double separation, double tool_offset, double noise, Index image_size) {
  if (phases < 1) throw std::invalid_argument("observation model: need phases");
  if (!(noise > 0.0)) throw std::invalid_argument("observation model: noise must be positive");
  ObservationModel m;
  m.kind = kind;
  m.dimension = dimension;
  m.separation = separation;
  m.tool_offset = tool_offset;
  m.noise = noise;
  m.image_size = image_size;
  std::mt19937_64 rng(seed);
  if (kind == ObservationKind::feature) {
    if (dimension < 1) throw std::invalid_argument("observation model: dimension must be positive");
    m.anchors.resize(phases, dimension);
    m.offsets.resize(kTools, dimension);
    // Near-orthogonal anchors at pairwise distance close to `separation`.
    for (int p = 0; p < phases; ++p) m.anchors.row(p) = separation / std::numbers::sqrt2 * random_unit(dimension, rng);
    for (int t = 0; t < kTools; ++t) m.offsets.row(t) = tool_offset * random_unit(dimension, rng);
    return m;
  }
  if (image_size < 8) throw std::invalid_argument("observation model: image tiles must be at least 8 pixels");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  m.anchors.resize(phases, kImagePhaseParams);
  for (int p = 0; p < phases; ++p)
    m.anchors.row(p) << 0.15 + 0.7 * u(rng), 0.15 + 0.7 * u(rng), 0.15 + 0.7 * u(rng), 0.3 + 1.2 * u(rng),
        std::numbers::pi * u(rng), 0.1 + 0.2 * u(rng);
  m.offsets.resize(kTools, kImageToolParams);
  for (int t = 0; t < kTools; ++t)
    m.offsets.row(t) << u(rng), u(rng), u(rng), std::floor(u(rng) * static_cast<double>(image_size - 6)),
        std::floor(u(rng) * static_cast<double>(image_size - 6)), static_cast<double>(t % 2);
  return m;
}

Eigen::VectorXd sample_observation(const ObservationModel& obs, int phase, const Eigen::VectorXi& tools,
                                   std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  if (obs.kind == ObservationKind::feature) {
    Eigen::VectorXd x = obs.anchors.row(phase).transpose();
    for (int t = 0; t < kTools; ++t)
      if (tools(t)) x += obs.offsets.row(t).transpose();
    for (Index i = 0; i < x.size(); ++i) x(i) += obs.noise * n(rng);
    return x;
  }
  const Index s = obs.image_size;
  const auto a = obs.anchors.row(phase);
  const double c = std::cos(a(4)), sn = std::sin(a(4));
  const double shift = 2.0 * std::numbers::pi * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  Eigen::VectorXd img(3 * s * s);
  for (Index ch = 0; ch < 3; ++ch)
    for (Index y = 0; y < s; ++y)
      for (Index x = 0; x < s; ++x)
        img((ch * s + y) * s + x) =
            a(ch) + a(5) * std::sin(a(3) * (static_cast<double>(x) * c + static_cast<double>(y) * sn) + shift);
  const Index long_side = s / 2, short_side = 3;
  for (int t = 0; t < kTools; ++t) {
    if (!tools(t)) continue;
    const auto o = obs.offsets.row(t);
    const bool vertical = o(5) > 0.5;
    const Index w = vertical ? short_side : long_side, h = vertical ? long_side : short_side;
    const Index x0 = std::min<Index>(static_cast<Index>(o(3)), s - w), y0 = std::min<Index>(static_cast<Index>(o(4)), s - h);
    for (Index ch = 0; ch < 3; ++ch)
      for (Index y = y0; y < y0 + h; ++y)
        for (Index x = x0; x < x0 + w; ++x) img((ch * s + y) * s + x) = o(ch);
  }
  for (Index i = 0; i < img.size(); ++i) img(i) += 0.1 * obs.noise * n(rng);
  return img;
}

Video sample_surgery(const PhaseVocabulary& vocab, const ToolUsageProfile& usage, const PhaseGrammar& grammar,
                     const ObservationModel& obs, const SurgeryOptions& options) {
  if (!(options.scale > 0.0)) throw std::invalid_argument("sample_surgery: scale must be positive");
  vocab.validate();
  usage.validate(vocab.size());
  grammar.validate(vocab.size());
  std::mt19937_64 rng(options.seed);
  std::bernoulli_distribution keep(usage.persistence);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  Video v;
  v.id = options.id;
  std::vector<Eigen::VectorXi> flags;
  for (int phase : sample_phase_sequence(grammar, rng)) {
    const Index len = sample_duration(vocab.phases[static_cast<std::size_t>(phase)], options.scale, rng);
    Eigen::VectorXi current(kTools);
    for (Index k = 0; k < len; ++k) {
      for (int t = 0; t < kTools; ++t) {
        // Two-state chain whose stationary distribution is the usage
        // probability; each segment starts from the stationary state.
        if (k == 0 || !keep(rng)) current(t) = u(rng) < usage.probability(phase, t) ? 1 : 0;
      }
      v.phases.push_back(phase);
      flags.push_back(current);
    }
  }
  const Index t_len = v.frames();
  v.tools.resize(t_len, kTools);
  v.observations.resize(t_len, obs.payload_width());
  for (Index t = 0; t < t_len; ++t) {
    v.tools.row(t) = flags[static_cast<std::size_t>(t)].transpose();
    v.observations.row(t) = sample_observation(obs, v.phases[static_cast<std::size_t>(t)], flags[static_cast<std::size_t>(t)], rng).transpose();
  }
  return v;
}

BayesPhaseClassifier::BayesPhaseClassifier(const ObservationModel& obs, const ToolUsageProfile& usage,
                                           Eigen::VectorXd prior)
    : obs_(obs) {
  if (obs.kind != ObservationKind::feature) throw std::invalid_argument("Bayes classifier needs feature observations");
  const Index phases = obs.anchors.rows();
  if (prior.size() != phases) throw std::invalid_argument("Bayes classifier: prior length mismatch");
  std::vector<Eigen::VectorXd> means;
  std::vector<double> weights;
  for (Index p = 0; p < phases; ++p) {
    if (!(prior(p) > 0.0)) continue;
    for (int set = 0; set < (1 << kTools); ++set) {
      double lw = std::log(prior(p));
      Eigen::VectorXd mean = obs.anchors.row(p).transpose();
      for (int t = 0; t < kTools; ++t) {
        const bool on = (set >> t) & 1;
        const double q = on ? usage.probability(p, t) : 1.0 - usage.probability(p, t);
        lw += std::log(q);
        if (on) mean += obs.offsets.row(t).transpose();
      }
      if (!std::isfinite(lw)) continue;
      means.push_back(mean);
      weights.push_back(lw);
      phase_of_.push_back(static_cast<int>(p));
    }
  }
  means_.resize(static_cast<Index>(means.size()), obs.dimension);
  log_weight_.resize(static_cast<Index>(means.size()));
  for (std::size_t i = 0; i < means.size(); ++i) {
    means_.row(static_cast<Index>(i)) = means[i].transpose();
    log_weight_(static_cast<Index>(i)) = weights[i];
  }
}

int BayesPhaseClassifier::classify(const Eigen::VectorXd& x) const {
  const Index phases = obs_.anchors.rows();
  const double inv_var = 1.0 / (obs_.noise * obs_.noise);
  Eigen::VectorXd comp = log_weight_ - 0.5 * inv_var * (means_.rowwise() - x.transpose()).rowwise().squaredNorm();
  Eigen::VectorXd best = Eigen::VectorXd::Constant(phases, -std::numeric_limits<double>::infinity());
  // Log-sum-exp per phase.
  Eigen::VectorXd maxv = best;
  for (Index i = 0; i < comp.size(); ++i) maxv(phase_of_[static_cast<std::size_t>(i)]) = std::max(maxv(phase_of_[static_cast<std::size_t>(i)]), comp(i));
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(phases);
  for (Index i = 0; i < comp.size(); ++i) {
    const int p = phase_of_[static_cast<std::size_t>(i)];
    acc(p) += std::exp(comp(i) - maxv(p));
  }
  for (Index p = 0; p < phases; ++p)
    if (std::isfinite(maxv(p))) best(p) = maxv(p) + std::log(acc(p));
  Index arg = 0;
  best.maxCoeff(&arg);
  return static_cast<int>(arg);
}

// ---------------------------------------------------------------------------
// Splits and corpora

void to_json(nlohmann::json& j, const CorpusSplit& s) {
  j = {{"finetune", s.finetune}, {"evaluation", s.evaluation}, {"folds", s.folds}};
}

void from_json(const nlohmann::json& j, CorpusSplit& s) {
  s.finetune = j.at("finetune").get<std::vector<std::string>>();
  s.evaluation = j.at("evaluation").get<std::vector<std::string>>();
  s.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
}

CorpusSplit make_split(const std::vector<std::string>& video_ids, double finetune_fraction, int folds,
                       std::uint64_t seed) {
  const auto n = static_cast<long>(video_ids.size());
  if (folds < 1) throw std::invalid_argument("make_split: need at least one fold");
  if (n < 2L * folds)
    throw std::invalid_argument("make_split: " + std::to_string(n) + " videos is too few for " + std::to_string(folds) +
                                " folds");
  if (!(finetune_fraction > 0.0 && finetune_fraction < 1.0))
    throw std::invalid_argument("make_split: fine-tune fraction must lie in (0, 1)");
  std::vector<std::string> ids = video_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw std::invalid_argument("make_split: duplicate video id");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const long n_ft = std::clamp(std::lround(finetune_fraction * static_cast<double>(n)), 1L, n - folds);

  CorpusSplit s;
  s.finetune.assign(ids.begin(), ids.begin() + n_ft);
  s.evaluation.assign(ids.begin() + n_ft, ids.end());
  s.folds.resize(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < s.evaluation.size(); ++i) s.folds[i % static_cast<std::size_t>(folds)].push_back(s.evaluation[i]);
  std::sort(s.finetune.begin(), s.finetune.end());
  std::sort(s.evaluation.begin(), s.evaluation.end());
  for (auto& f : s.folds) std::sort(f.begin(), f.end());
  return s;
}

const Video& Dataset::video(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return v;
  throw std::out_of_range("dataset has no video '" + id + "'");
}

void to_json(nlohmann::json& j, const GenerateOptions& o) {
  j = {{"vocabulary", o.vocabulary}, {"videos", o.videos},         {"scale", o.scale},
       {"kind", to_string(o.kind)},  {"dimension", o.dimension},   {"separation", o.separation},
       {"tool_offset", o.tool_offset}, {"noise", o.noise},          {"finetune_fraction", o.finetune_fraction},
       {"folds", o.folds},           {"seed", o.seed}};
}

void from_json(const nlohmann::json& j, GenerateOptions& o) {
  o.vocabulary = j.value("vocabulary", o.vocabulary);
  o.videos = j.value("videos", o.videos);
  o.scale = j.value("scale", o.scale);
  if (j.contains("kind")) o.kind = observation_kind_from_string(j.at("kind").get<std::string>());
  o.dimension = j.value("dimension", o.dimension);
  o.separation = j.value("separation", o.separation);
  o.tool_offset = j.value("tool_offset", o.tool_offset);
  o.noise = j.value("noise", o.noise);
  o.finetune_fraction = j.value("finetune_fraction", o.finetune_fraction);
  o.folds = j.value("folds", o.folds);
  o.seed = j.value("seed", o.seed);
}

GeneratedCorpus generate_corpus(const GenerateOptions& o) {
  GeneratedCorpus g;
  auto& d = g.dataset;
  d.vocabulary = PhaseVocabulary::builtin(o.vocabulary);
  d.kind = o.kind;
  g.usage = ToolUsageProfile::for_vocabulary(d.vocabulary);
  g.grammar = PhaseGrammar::for_vocabulary(d.vocabulary);
  g.observation_model = ObservationModel::make(o.kind, d.vocabulary.size(), derive_seed(o.seed, {1}), o.dimension,
                                               o.separation, o.tool_offset, o.noise);
  d.frame_shape = g.observation_model.frame_shape();
  std::vector<std::string> ids;
  for (int i = 0; i < o.videos; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "video%02d", i + 1);
    SurgeryOptions so{o.scale, derive_seed(o.seed, {2, static_cast<std::uint64_t>(i)}), name};
    d.videos.push_back(sample_surgery(d.vocabulary, g.usage, g.grammar, g.observation_model, so));
    ids.emplace_back(name);
  }
  d.split = make_split(ids, o.finetune_fraction, o.folds, derive_seed(o.seed, {3}));
  return g;
}

ProxyCorpus make_proxy_corpus(const nn::Shape& frame_shape, int classes, Index samples, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("proxy corpus: need at least two classes");
  if (samples < classes) throw std::invalid_argument("proxy corpus: fewer samples than classes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ProxyCorpus c;
  c.classes = classes;
  nn::Shape shape{samples};
  shape.insert(shape.end(), frame_shape.begin(), frame_shape.end());
  c.inputs = nn::TensorD(shape);
  auto m = c.inputs.matrix();

  if (frame_shape.size() == 1) {
    // Overlapping Gaussian clusters: learnable but not trivially separable.
    const Index d = frame_shape[0];
    Eigen::MatrixXd centers(classes, d);
    for (int k = 0; k < classes; ++k) centers.row(k) = 2.5 * random_unit(d, rng).transpose();
    for (Index i = 0; i < samples; ++i) {
      const int k = static_cast<int>(i % classes);
      c.labels.push_back(k);
      for (Index j = 0; j < d; ++j) m(i, j) = centers(k, j) + n(rng);
    }
  } else if (frame_shape.size() == 3) {
    // Texture/shape categories: pattern (horizontal stripes, vertical
    // stripes, checkerboard, centred blob) crossed with a colour scheme.
    const Index ch = frame_shape[0], h = frame_shape[1], w = frame_shape[2];
    if (classes > 8) throw std::invalid_argument("proxy corpus: image mode supports at most 8 categories");
    for (Index i = 0; i < samples; ++i) {
      const int k = static_cast<int>(i % classes);
      c.labels.push_back(k);
      const int pattern = k % 4;
      const int scheme = k / 4;
      const double freq = 0.6 + 0.3 * u(rng);
      const double shift = 6.28 * u(rng);
      for (Index cc = 0; cc < ch; ++cc)
        for (Index y = 0; y < h; ++y)
          for (Index x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x), fy = static_cast<double>(y);
            double v = 0.0;
            switch (pattern) {
              case 0: v = std::sin(freq * fy + shift); break;
              case 1: v = std::sin(freq * fx + shift); break;
              case 2: v = std::sin(freq * fx + shift) * std::sin(freq * fy + shift); break;
              default: {
                const double dx = fx - static_cast<double>(w) / 2.0, dy = fy - static_cast<double>(h) / 2.0;
                v = std::exp(-(dx * dx + dy * dy) / (static_cast<double>(w * h) / 8.0)) * 2.0 - 1.0;
              }
            }
            const double tint = scheme == 0 ? (cc == 0 ? 1.0 : 0.3) : (cc == 2 ? 1.0 : 0.3);
            m(i, (cc * h + y) * w + x) = tint * v + 0.3 * n(rng);
          }
    }
  } else {
    throw std::invalid_argument("proxy corpus: frames must be rank 1 or rank 3");
  }
  return c;
}

}  // namespace endonet::corpus
