#pragma once

#include "endonet/losses.hpp"
#include "endonet/network.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace endonet {

using nn::Index;

/// Desk-scale backbone. Rank-3 inputs (C,H,W) get conv-relu-conv-relu-pool
/// before the two dense layers; rank-1 inputs go straight to fc6/fc7.
struct ArchConfig {
  nn::Shape input_shape{3, 32, 32};
  Index conv1_channels = 8;
  Index conv1_kernel = 5;
  Index conv1_stride = 2;
  Index conv2_channels = 16;
  Index conv2_kernel = 3;
  Index pool = 2;
  Index hidden_width = 64;   // fc6
  Index feature_width = 64;  // fc7
  double head_lr_multiplier = 10.0;
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

std::vector<nn::LayerSpec> backbone_layers(const ArchConfig& arch);
nn::Network build_backbone(const ArchConfig& arch, std::mt19937_64& rng);

/// Layer indices of the heads. fc7 is the last backbone layer; fc8 is the
/// concat [fc7, fc_tool].
struct HeadLayout {
  std::size_t fc7 = 0;
  std::size_t fc_tool = 0;
  std::size_t fc8 = 0;
  std::size_t fc_phase = 0;
  Index feature_width = 0;
  friend bool operator==(const HeadLayout&, const HeadLayout&) = default;
};

/// Appends fc_tool, fc8 and fc_phase with fresh random weights.
HeadLayout attach_heads(nn::Network& net, std::mt19937_64& rng, double lr_multiplier);

/// Per-channel standardization (channel = leading per-sample axis).
struct InputNormalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static InputNormalizer fit(const nn::TensorD& batch);
  nn::TensorD apply(const nn::TensorD& batch) const;
  bool empty() const { return mean.size() == 0; }
  friend bool operator==(const InputNormalizer&, const InputNormalizer&) = default;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long iteration, const std::string& what)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

struct LossLogEntry {
  long iteration = 0;
  double tool = 0.0;
  double phase = 0.0;
  double total = 0.0;
};

/// Mean of consecutive non-overlapping windows; a trailing partial window is dropped.
std::vector<double> window_means(const std::vector<double>& values, std::size_t window);

struct EndoNetModel {
  nn::Network network;
  HeadLayout heads;
  LossWeights weights;
  InputNormalizer normalizer;
  bool has_heads = false;

  void save(const std::filesystem::path& path) const;
  static EndoNetModel load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  static EndoNetModel from_json(const nlohmann::json& j);
};

struct ProxyCorpus {
  nn::TensorD inputs;
  std::vector<int> labels;
  int classes = 0;
};

struct PretrainResult {
  nn::Network backbone;
  InputNormalizer normalizer;
  std::vector<double> losses;
  double accuracy(const ProxyCorpus& held_out) const;
  nn::Network classifier;  // backbone + proxy head, kept for evaluation
};

/// Trains backbone + a proxy softmax head on an unrelated classification
/// task, then strips the head.
PretrainResult pretrain(const ProxyCorpus& corpus, const ArchConfig& arch, const nn::SgdSchedule& schedule,
                        std::uint64_t seed);

struct FinetuneData {
  nn::TensorD inputs;
  Eigen::MatrixXd tools;    // N x 7, entries in {0,1}
  std::vector<int> phases;  // N, in [0, 7)
};

struct FinetuneResult {
  EndoNetModel model;
  std::vector<LossLogEntry> log;
};

/// Attaches fresh heads to a copy of `backbone` and trains everything on
/// a*L_T + b*L_P. Heads use the architecture's learning-rate multiplier.
FinetuneResult finetune(const nn::Network& backbone, const FinetuneData& data, const LossWeights& weights,
                        const nn::SgdSchedule& schedule, double head_lr_multiplier, std::uint64_t seed);

struct Features {
  Eigen::MatrixXd fc7;           // N x F
  Eigen::MatrixXd fc8;           // N x (F + 7)
  Eigen::MatrixXd tool_logits;   // N x 7
  Eigen::MatrixXd phase_logits;  // N x 7
  Eigen::MatrixXd tool_probabilities() const;
};

/// Batched feature extraction; rejects networks without heads.
Features extract(const EndoNetModel& model, const nn::TensorD& inputs, Index batch = 256);

/// Writes "iteration L_T L_P L" lines.
void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogEntry>& log);

}  // namespace endonet
