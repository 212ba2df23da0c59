#pragma once

#include "endonet/model.hpp"
#include "endonet/tensor.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace endonet::corpus {

using Eigen::Index;

inline constexpr int kTools = 7;
inline constexpr std::array<const char*, kTools> kToolNames{"grasper", "bipolar",  "hook",       "scissors",
                                                            "clipper", "irrigator", "specimen_bag"};

struct PhaseInfo {
  std::string id;
  std::string name;
  double mean_duration = 0.0;  // seconds
  double std_duration = 0.0;
  friend bool operator==(const PhaseInfo&, const PhaseInfo&) = default;
};

struct PhaseVocabulary {
  std::string name;
  std::vector<PhaseInfo> phases;

  int size() const { return static_cast<int>(phases.size()); }
  /// Index of a phase id; -1 if unknown.
  int index_of(const std::string& id) const;
  std::vector<std::string> ids() const;
  void validate() const;

  static PhaseVocabulary cholec80();
  static PhaseVocabulary endovis();
  static PhaseVocabulary builtin(const std::string& name);
  friend bool operator==(const PhaseVocabulary&, const PhaseVocabulary&) = default;
};

void to_json(nlohmann::json& j, const PhaseVocabulary& v);
void from_json(const nlohmann::json& j, PhaseVocabulary& v);

/// Per-phase presence probability of every tool, plus how sticky the
/// presence signal is from one second to the next.
struct ToolUsageProfile {
  Eigen::MatrixXd probability;  // phases x 7
  double persistence = 0.9;     // probability of keeping the previous frame's flag

  void validate(int phases) const;
  static ToolUsageProfile cholec80();
  static ToolUsageProfile endovis();
  static ToolUsageProfile for_vocabulary(const PhaseVocabulary& v);
};

/// Segment-level phase grammar: a Markov chain over phase segments with a
/// cap on how often a phase may be revisited.
struct PhaseGrammar {
  int start = 0;
  Eigen::MatrixXd successor;  // phases x phases; an all-zero row is terminal
  int max_visits = 3;

  void validate(int phases) const;
  static PhaseGrammar cholec80();
  static PhaseGrammar endovis();
  static PhaseGrammar for_vocabulary(const PhaseVocabulary& v);
  /// Every (from, to) segment transition the grammar can produce, plus self-loops.
  std::vector<std::pair<int, int>> allowed_transitions() const;
};

enum class ObservationKind { feature, image };

std::string to_string(ObservationKind k);
ObservationKind observation_kind_from_string(const std::string& s);

/// Generating parameters for frame observations. Feature mode draws
/// anchor[phase] + sum of offset[tool] over present tools + noise. Image
/// mode renders a small textured tile whose colours and texture come from
/// the phase and whose overlaid bars come from the tools.
struct ObservationModel {
  ObservationKind kind = ObservationKind::feature;
  Index dimension = 16;
  double separation = 5.0;   // distance scale between phase anchors
  double tool_offset = 2.0;  // norm of each tool offset
  double noise = 1.0;
  Index image_size = 32;
  Eigen::MatrixXd anchors;  // phases x dimension
  Eigen::MatrixXd offsets;  // 7 x dimension

  nn::Shape frame_shape() const;
  Index payload_width() const { return nn::shape_size(frame_shape()); }

  static ObservationModel make(ObservationKind kind, int phases, std::uint64_t seed, Index dimension = 16,
                               double separation = 5.0, double tool_offset = 2.0, double noise = 1.0,
                               Index image_size = 32);
};

struct Video {
  std::string id;
  std::vector<int> phases;  // per second
  Eigen::MatrixXi tools;    // T x 7, entries 0/1
  Eigen::MatrixXd observations;  // T x payload width
  Index frames() const { return static_cast<Index>(phases.size()); }
  friend bool operator==(const Video& a, const Video& b) {
    return a.id == b.id && a.phases == b.phases && a.tools == b.tools && a.observations == b.observations;
  }
};

struct SurgeryOptions {
  double scale = 1.0;
  std::uint64_t seed = 0;
  std::string id = "video00";
};

std::vector<int> sample_phase_sequence(const PhaseGrammar& grammar, std::mt19937_64& rng);
/// normal(mean*scale, std*scale), rounded, clamped below at 1 s.
Index sample_duration(const PhaseInfo& phase, double scale, std::mt19937_64& rng);
double expected_duration(const PhaseInfo& phase, double scale);

Video sample_surgery(const PhaseVocabulary& vocab, const ToolUsageProfile& usage, const PhaseGrammar& grammar,
                     const ObservationModel& obs, const SurgeryOptions& options);

/// Draws one observation for a phase and tool set.
Eigen::VectorXd sample_observation(const ObservationModel& obs, int phase, const Eigen::VectorXi& tools,
                                   std::mt19937_64& rng);

/// Frame-level Bayes classifier on the generating feature-mode mixture:
/// argmax_p prior_p * sum over tool sets of P(set | p) N(x; anchor_p + offsets, noise^2 I).
class BayesPhaseClassifier {
 public:
  BayesPhaseClassifier(const ObservationModel& obs, const ToolUsageProfile& usage, Eigen::VectorXd prior);
  int classify(const Eigen::VectorXd& x) const;

 private:
  const ObservationModel& obs_;
  Eigen::MatrixXd means_;      // (phase, toolset) rows
  Eigen::VectorXd log_weight_;  // log prior_p + log P(set | p)
  std::vector<int> phase_of_;
};

struct CorpusSplit {
  std::vector<std::string> finetune;
  std::vector<std::string> evaluation;
  std::vector<std::vector<std::string>> folds;
  friend bool operator==(const CorpusSplit&, const CorpusSplit&) = default;
};

void to_json(nlohmann::json& j, const CorpusSplit& s);
void from_json(const nlohmann::json& j, CorpusSplit& s);

CorpusSplit make_split(const std::vector<std::string>& video_ids, double finetune_fraction, int folds,
                       std::uint64_t seed);

struct Dataset {
  PhaseVocabulary vocabulary;
  ObservationKind kind = ObservationKind::feature;
  nn::Shape frame_shape;
  std::vector<Video> videos;
  std::optional<CorpusSplit> split;

  const Video& video(const std::string& id) const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GenerateOptions {
  std::string vocabulary = "cholec80";
  int videos = 16;
  double scale = 0.1;
  ObservationKind kind = ObservationKind::feature;
  Index dimension = 16;
  double separation = 5.0;
  double tool_offset = 2.0;
  double noise = 1.0;
  double finetune_fraction = 0.5;
  int folds = 4;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const GenerateOptions& o);
void from_json(const nlohmann::json& j, GenerateOptions& o);

struct GeneratedCorpus {
  Dataset dataset;
  ObservationModel observation_model;
  ToolUsageProfile usage;
  PhaseGrammar grammar;
};

GeneratedCorpus generate_corpus(const GenerateOptions& options);

/// Proxy classification task for pre-training, unrelated to phases/tools:
/// Gaussian clusters in feature mode, texture/shape categories in image mode.
ProxyCorpus make_proxy_corpus(const nn::Shape& frame_shape, int classes, Index samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset files

class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::filesystem::path& file, long line, const std::string& reason)
      : std::runtime_error(file.string() + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + reason),
        file_(file),
        line_(line),
        reason_(reason) {}
  const std::filesystem::path& file() const { return file_; }
  long line() const { return line_; }
  const std::string& reason() const { return reason_; }

 private:
  std::filesystem::path file_;
  long line_;
  std::string reason_;
};

struct Diagnostic {
  std::filesystem::path file;
  long line = 0;
  std::string message;
  std::string str() const;
};

inline constexpr int kDatasetFormatVersion = 1;

/// Writes manifest.json plus one <video>.frames file per video.
void write_dataset(const Dataset& dataset, const std::filesystem::path& directory);
/// Throws DatasetError at the first violation.
Dataset read_dataset(const std::filesystem::path& directory);
/// Reports every violation instead of stopping at the first.
std::vector<Diagnostic> validate_dataset(const std::filesystem::path& directory);

}  // namespace endonet::corpus
