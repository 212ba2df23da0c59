#pragma once

#include "endonet/corpus.hpp"
#include "endonet/hhmm.hpp"
#include "endonet/metrics.hpp"
#include "endonet/model.hpp"
#include "endonet/svm.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace endonet::pipeline {

namespace fs = std::filesystem;

enum class DecodeMode { offline, online, both };

std::string to_string(DecodeMode m);
DecodeMode decode_mode_from_string(const std::string& s);

inline const std::vector<std::string> kVariants{"gt_tools", "fc7", "fc8", "fc7_gt"};

struct PretrainConfig {
  bool enabled = true;
  int classes = 10;
  Index samples = 2000;
  Index held_out = 500;
  nn::SgdSchedule schedule{5e-3, 0.1, 2000, 2000, 50, 0.0};
};

struct EvaluationConfig {
  Index block_gap = 15;
  double block_min_precision = 0.95;
  std::vector<double> boundary_tolerances{30, 60, 90, 120};
  bool ribbons = true;
};

struct ExperimentConfig {
  fs::path dataset;
  fs::path output = "runs";
  std::string vocabulary = "cholec80";
  LossWeights loss_weights;
  ArchConfig arch;
  nn::SgdSchedule schedule{1e-3, 0.1, 2000, 5000, 50, 0.0};
  PretrainConfig pretrain;
  svm::SvmConfig svm;
  hhmm::HhmmConfig hhmm;
  DecodeMode mode = DecodeMode::both;
  int runs = 5;
  std::uint64_t seed = 0;
  /// "cross-validation": SVM and HHMM are trained on the other evaluation
  /// folds. "finetune": both are trained once on the fine-tuning videos.
  std::string svm_training = "cross-validation";
  /// "svm" or "fc_phase"; the latter feeds the phase-head logits of the
  /// fc8 variant to the HHMM directly instead of SVM margins.
  std::string confidence_source = "svm";
  std::vector<std::string> variants{"fc8"};
  EvaluationConfig evaluation;
  bool resume = true;
  std::string inject_failure;  // stage name; used to exercise crash-resume
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Applies "dotted.key=value" to a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Checks invariants and that referenced paths exist. Throws ConfigError.
void validate(const ExperimentConfig& c);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int run, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed in run " + std::to_string(run) + ": " + what),
        stage_(std::move(stage)),
        run_(run) {}
  const std::string& stage() const { return stage_; }
  int run() const { return run_; }

 private:
  std::string stage_;
  int run_;
};

// ---------------------------------------------------------------------------
// Results

struct VariantResult {
  std::string variant;
  std::string mode;  // "offline" or "online"
  metrics::PhaseScores scores;
  metrics::BoundaryTable boundary;
  Index feature_width = 0;
};

struct ToolResult {
  std::optional<double> ap;  // empty when the evaluation frames have no positive
  double threshold = 0.5;    // block-detection threshold actually used
  bool threshold_fallback = false;  // no threshold reached the precision target
  metrics::BlockDetectionReport blocks;
};

struct RunResult {
  int run = 0;
  double pretrain_accuracy = 0.0;
  double pretrain_windows_non_increasing = 0.0;  // fraction of 100-iteration windows
  double finetune_first_window = 0.0;
  double finetune_last_window = 0.0;
  std::vector<ToolResult> tools;
  std::vector<VariantResult> variants;
  std::vector<std::string> warnings;

  const VariantResult& find(const std::string& variant, const std::string& mode) const;
};

nlohmann::json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::json& j);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over runs
  int count = 0;
};

Summary summarize(const std::vector<double>& values);

struct AggregateReport {
  int runs = 0;
  struct Row {
    std::string variant;
    std::string mode;
    Summary precision, recall, accuracy, within_first_tolerance;
  };
  std::vector<Row> phase_rows;
  std::vector<Summary> tool_ap;  // per tool
  Summary pretrain_accuracy;

  const Row& find(const std::string& variant, const std::string& mode) const;
  std::string text() const;
  std::string csv() const;
};

AggregateReport aggregate(const std::vector<RunResult>& runs);

struct RunArtifacts {
  fs::path directory;
  fs::path backbone, endonet, phasenet, loss_log, results, report;
  std::vector<fs::path> svm_models, hhmm_models;
  std::vector<std::string> reused;  // artifacts loaded from disk instead of rebuilt
  RunResult result;
};

struct ExperimentResult {
  std::vector<RunArtifacts> runs;
  AggregateReport aggregate;
  std::string report_text;
  fs::path report_path;
};

/// Online decoding input: observations become visible one at a time.
class ObservationStream {
 public:
  explicit ObservationStream(const Eigen::MatrixXd& observations) : obs_(observations) {}
  bool done() const { return next_ >= obs_.rows(); }
  Eigen::VectorXd next();
  Index consumed() const { return next_; }

 private:
  const Eigen::MatrixXd& obs_;
  Index next_ = 0;
};

/// Causal decoding; `on_estimate(t, phase)` fires after each observation.
std::vector<int> decode_online(const hhmm::Hhmm& model, ObservationStream& stream,
                               const std::function<void(Index, int)>& on_estimate = {});

struct Progress {
  std::function<void(const std::string&)> log;
  void operator()(const std::string& msg) const {
    if (log) log(msg);
  }
};

/// Trains (or reuses) every model of one run.
RunArtifacts train_run(const ExperimentConfig& config, const corpus::Dataset& data, int run,
                       const Progress& progress = {});
/// train_run followed by decoding, metrics and per-run report files.
RunArtifacts evaluate_run(const ExperimentConfig& config, const corpus::Dataset& data, int run,
                          const Progress& progress = {});

ExperimentResult run_experiment(const ExperimentConfig& config, const Progress& progress = {});

/// Rebuilds the aggregate report from persisted per-run results.
ExperimentResult report_experiment(const ExperimentConfig& config);

/// Networks a config needs: "endonet" always, "phasenet" for the fc7 variant.
std::vector<std::string> required_models(const ExperimentConfig& config);

}  // namespace endonet::pipeline
