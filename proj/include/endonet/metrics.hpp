#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace endonet::metrics {

using Eigen::Index;

// ---------------------------------------------------------------------------
// Tool presence

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// One point per distinct score, in descending threshold order. Frames with
/// score >= threshold are positives.
std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

/// Step-integrated area under the PR curve, sum of (R_n - R_{n-1}) * P_n.
/// Empty when there is no positive label.
std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Phase recognition

struct PhaseScores {
  std::vector<double> precision;  // percent, NaN where undefined
  std::vector<double> recall;     // percent, NaN for phases absent from truth
  std::vector<bool> in_truth;
  std::vector<int> undefined_precision;  // phases present in truth but never predicted
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double accuracy = 0.0;  // percent
};

PhaseScores phase_scores(std::span<const int> predicted, std::span<const int> truth, int phases);

/// Counts of first-occurrence boundary errors per phase. Buckets are
/// [0, e0), [e0, e1), ..., [e_last, inf); a phase never predicted lands in
/// the last bucket and is also counted as missed.
struct BoundaryTable {
  std::vector<double> edges{30, 60, 90, 120};
  std::vector<std::vector<long>> counts;  // phase x (edges + 1)
  std::vector<long> missed;
  std::vector<long> totals;

  static BoundaryTable empty(int phases, std::vector<double> edges = {30, 60, 90, 120});
  void add(const BoundaryTable& other);
  std::vector<std::string> bucket_labels() const;
};

struct BoundaryError {
  int phase = 0;
  Index truth_start = 0;
  std::optional<Index> predicted_start;
  double error() const;  // infinity when missed
};

std::vector<BoundaryError> boundary_errors(std::span<const int> predicted, std::span<const int> truth, int phases);
BoundaryTable boundary_table(std::span<const int> predicted, std::span<const int> truth, int phases,
                             std::vector<double> edges = {30, 60, 90, 120});

// ---------------------------------------------------------------------------
// Tool blocks

inline constexpr Index kDefaultBlockGap = 15;

struct ToolBlock {
  int tool = 0;
  Index start = 0;
  Index end = 0;  // inclusive
  friend bool operator==(const ToolBlock&, const ToolBlock&) = default;
};

/// Maximal runs of presence; runs separated by fewer than `gap` absent
/// frames are merged.
std::vector<ToolBlock> tool_blocks(std::span<const int> presence, int tool = 0, Index gap = kDefaultBlockGap);
/// Merges an ordered list of blocks of one tool under the same rule.
std::vector<ToolBlock> merge_blocks(std::vector<ToolBlock> blocks, Index gap = kDefaultBlockGap);
std::vector<int> presence_from_blocks(const std::vector<ToolBlock>& blocks, Index length);

struct BlockDetectionReport {
  std::vector<double> edges{5, 30, 60};  // latency buckets [0,5), [5,30), [30,60), [60,inf)
  std::vector<long> latency_counts = std::vector<long>(4, 0);
  long missed = 0;
  long truth_blocks = 0;
  long detected_blocks = 0;
  long false_positives = 0;

  bool empty() const { return truth_blocks == 0; }
  double false_positive_rate() const;
  void add(const BlockDetectionReport& other);
  std::vector<std::string> bucket_labels() const;
};

BlockDetectionReport block_detection_report(const std::vector<ToolBlock>& truth, std::span<const double> confidence,
                                            double threshold, Index gap = kDefaultBlockGap);

/// Smallest threshold whose frame-level precision reaches `min_precision`.
/// Empty if no threshold does (or there are no positives).
std::optional<double> select_threshold(std::span<const double> scores, std::span<const int> labels,
                                       double min_precision = 0.95);

// ---------------------------------------------------------------------------
// Output

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) { rows.push_back(std::move(row)); }
  /// Space-aligned columns; the first column is left-aligned, the rest right-aligned.
  std::string aligned() const;
  std::string csv() const;
};

/// Fixed-precision rendering; NaN prints as "-".
std::string fmt(double value, int precision = 1);
std::string fmt_mean_std(double mean, double stddev, int precision = 1);

/// Per-frame ribbon: video,t,truth,<one column per named prediction>.
struct RibbonTrack {
  std::string name;
  std::vector<int> phases;
};
void write_ribbon(std::ostream& out, const std::string& video, std::span<const int> truth,
                  const std::vector<RibbonTrack>& tracks, const std::vector<std::string>& phase_names,
                  bool header = true);

}  // namespace endonet::metrics
