#include "endonet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace endonet::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_binary_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("metrics: " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("metrics: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("metrics: non-finite score");
  }
}

void check_phases(std::span<const int> seq, int phases, const char* what) {
  for (int p : seq)
    if (p < 0 || p >= phases)
      throw std::invalid_argument(std::string("metrics: ") + what + " phase " + std::to_string(p) + " out of range");
}

std::size_t bucket_of(const std::vector<double>& edges, double value) {
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), value) - edges.begin());
}

std::vector<std::string> labels_for(const std::vector<double>& edges) {
  std::vector<std::string> out;
  auto num = [](double v) {
    std::ostringstream s;
    s << v;
    return s.str();
  };
  out.push_back("<" + num(edges.front()));
  for (std::size_t i = 1; i < edges.size(); ++i) out.push_back(num(edges[i - 1]) + "-" + num(edges[i]));
  out.push_back(">=" + num(edges.back()));
  return out;
}

}  // namespace

std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  check_binary_scores(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const long positives = std::count(labels.begin(), labels.end(), 1);
  std::vector<PrPoint> out;
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] ? tp : fp) += 1;
    if (i + 1 < order.size() && scores[order[i + 1]] == scores[order[i]]) continue;
    out.push_back({scores[order[i]], static_cast<double>(tp) / static_cast<double>(tp + fp),
                   positives > 0 ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0});
  }
  return out;
}

std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels) {
  const auto curve = pr_curve(scores, labels);
  if (std::find(labels.begin(), labels.end(), 1) == labels.end()) return std::nullopt;
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& pt : curve) {
    ap += (pt.recall - prev_recall) * pt.precision;
    prev_recall = pt.recall;
  }
  return ap;
}

PhaseScores phase_scores(std::span<const int> predicted, std::span<const int> truth, int phases) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("phase_scores: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(truth.size()) + " frames");
  if (truth.empty()) throw std::invalid_argument("phase_scores: empty sequence");
  check_phases(predicted, phases, "predicted");
  check_phases(truth, phases, "truth");

  std::vector<long> hit(static_cast<std::size_t>(phases)), in_truth(static_cast<std::size_t>(phases)),
      in_pred(static_cast<std::size_t>(phases));
  long correct = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    ++in_truth[static_cast<std::size_t>(truth[t])];
    ++in_pred[static_cast<std::size_t>(predicted[t])];
    if (truth[t] == predicted[t]) {
      ++hit[static_cast<std::size_t>(truth[t])];
      ++correct;
    }
  }

  PhaseScores s;
  s.precision.assign(static_cast<std::size_t>(phases), kNaN);
  s.recall.assign(static_cast<std::size_t>(phases), kNaN);
  s.in_truth.assign(static_cast<std::size_t>(phases), false);
  double sum_p = 0.0, sum_r = 0.0;
  int n_p = 0, n_r = 0;
  for (std::size_t p = 0; p < static_cast<std::size_t>(phases); ++p) {
    if (in_pred[p] > 0) s.precision[p] = 100.0 * static_cast<double>(hit[p]) / static_cast<double>(in_pred[p]);
    if (in_truth[p] == 0) continue;
    s.in_truth[p] = true;
    s.recall[p] = 100.0 * static_cast<double>(hit[p]) / static_cast<double>(in_truth[p]);
    sum_r += s.recall[p];
    ++n_r;
    if (in_pred[p] == 0) {
      s.undefined_precision.push_back(static_cast<int>(p));
    } else {
      sum_p += s.precision[p];
      ++n_p;
    }
  }
  s.mean_recall = sum_r / n_r;
  s.mean_precision = n_p > 0 ? sum_p / n_p : kNaN;
  s.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
  return s;
}

BoundaryTable BoundaryTable::empty(int phases, std::vector<double> edges) {
  if (edges.empty() || !std::is_sorted(edges.begin(), edges.end()))
    throw std::invalid_argument("boundary_table: tolerance edges must be non-empty and ascending");
  BoundaryTable t;
  t.edges = std::move(edges);
  t.counts.assign(static_cast<std::size_t>(phases), std::vector<long>(t.edges.size() + 1, 0));
  t.missed.assign(static_cast<std::size_t>(phases), 0);
  t.totals.assign(static_cast<std::size_t>(phases), 0);
  return t;
}

void BoundaryTable::add(const BoundaryTable& other) {
  if (other.edges != edges || other.counts.size() != counts.size())
    throw std::invalid_argument("boundary_table: incompatible tables");
  for (std::size_t p = 0; p < counts.size(); ++p) {
    for (std::size_t b = 0; b < counts[p].size(); ++b) counts[p][b] += other.counts[p][b];
    missed[p] += other.missed[p];
    totals[p] += other.totals[p];
  }
}

std::vector<std::string> BoundaryTable::bucket_labels() const { return labels_for(edges); }

double BoundaryError::error() const {
  return predicted_start ? static_cast<double>(std::abs(*predicted_start - truth_start)) : kInf;
}

std::vector<BoundaryError> boundary_errors(std::span<const int> predicted, std::span<const int> truth, int phases) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("boundary_table: sequences are not aligned");
  check_phases(predicted, phases, "predicted");
  check_phases(truth, phases, "truth");
  std::vector<std::optional<Index>> first_truth(static_cast<std::size_t>(phases)),
      first_pred(static_cast<std::size_t>(phases));
  for (std::size_t t = 0; t < truth.size(); ++t) {
    auto& ft = first_truth[static_cast<std::size_t>(truth[t])];
    if (!ft) ft = static_cast<Index>(t);
    auto& fp = first_pred[static_cast<std::size_t>(predicted[t])];
    if (!fp) fp = static_cast<Index>(t);
  }
  std::vector<BoundaryError> out;
  for (int p = 0; p < phases; ++p)
    if (first_truth[static_cast<std::size_t>(p)])
      out.push_back({p, *first_truth[static_cast<std::size_t>(p)], first_pred[static_cast<std::size_t>(p)]});
  return out;
}

BoundaryTable boundary_table(std::span<const int> predicted, std::span<const int> truth, int phases,
                             std::vector<double> edges) {
  BoundaryTable table = BoundaryTable::empty(phases, std::move(edges));
  for (const auto& e : boundary_errors(predicted, truth, phases)) {
    const auto p = static_cast<std::size_t>(e.phase);
    ++table.totals[p];
    if (!e.predicted_start) {
      ++table.missed[p];
      ++table.counts[p].back();
    } else {
      ++table.counts[p][bucket_of(table.edges, e.error())];
    }
  }
  return table;
}

std::vector<ToolBlock> merge_blocks(std::vector<ToolBlock> blocks, Index gap) {
  std::vector<ToolBlock> out;
  for (const auto& b : blocks) {
    if (b.start > b.end) throw std::invalid_argument("tool_blocks: block ends before it starts");
    if (!out.empty() && b.start <= out.back().end) throw std::invalid_argument("tool_blocks: blocks overlap or are unordered");
    if (!out.empty() && b.start - out.back().end - 1 < gap)
      out.back().end = b.end;
    else
      out.push_back(b);
  }
  return out;
}

std::vector<ToolBlock> tool_blocks(std::span<const int> presence, int tool, Index gap) {
  std::vector<ToolBlock> runs;
  const Index n = static_cast<Index>(presence.size());
  for (Index t = 0; t < n;) {
    if (!presence[static_cast<std::size_t>(t)]) {
      ++t;
      continue;
    }
    Index end = t;
    while (end + 1 < n && presence[static_cast<std::size_t>(end + 1)]) ++end;
    runs.push_back({tool, t, end});
    t = end + 1;
  }
  return merge_blocks(std::move(runs), gap);
}

std::vector<int> presence_from_blocks(const std::vector<ToolBlock>& blocks, Index length) {
  std::vector<int> out(static_cast<std::size_t>(length), 0);
  for (const auto& b : blocks) {
    if (b.end >= length) throw std::invalid_argument("tool_blocks: block beyond stream length");
    std::fill(out.begin() + b.start, out.begin() + b.end + 1, 1);
  }
  return out;
}

double BlockDetectionReport::false_positive_rate() const {
  return detected_blocks > 0 ? static_cast<double>(false_positives) / static_cast<double>(detected_blocks) : 0.0;
}

void BlockDetectionReport::add(const BlockDetectionReport& other) {
  if (other.edges != edges) throw std::invalid_argument("block_detection_report: incompatible buckets");
  for (std::size_t i = 0; i < latency_counts.size(); ++i) latency_counts[i] += other.latency_counts[i];
  missed += other.missed;
  truth_blocks += other.truth_blocks;
  detected_blocks += other.detected_blocks;
  false_positives += other.false_positives;
}

std::vector<std::string> BlockDetectionReport::bucket_labels() const { return labels_for(edges); }

BlockDetectionReport block_detection_report(const std::vector<ToolBlock>& truth, std::span<const double> confidence,
                                            double threshold, Index gap) {
  BlockDetectionReport r;
  const Index n = static_cast<Index>(confidence.size());
  std::vector<int> detected(confidence.size());
  for (std::size_t t = 0; t < confidence.size(); ++t) detected[t] = confidence[t] >= threshold ? 1 : 0;

  for (const auto& b : truth) {
    if (b.end >= n) throw std::invalid_argument("block_detection_report: truth block beyond confidence stream");
    ++r.truth_blocks;
    std::optional<Index> first;
    for (Index t = b.start; t <= b.end && !first; ++t)
      if (detected[static_cast<std::size_t>(t)]) first = t;
    if (!first)
      ++r.missed;
    else
      ++r.latency_counts[bucket_of(r.edges, static_cast<double>(*first - b.start))];
  }

  const int tool = truth.empty() ? 0 : truth.front().tool;
  for (const auto& d : tool_blocks(detected, tool, gap)) {
    ++r.detected_blocks;
    const bool overlaps =
        std::any_of(truth.begin(), truth.end(), [&](const ToolBlock& b) { return d.start <= b.end && b.start <= d.end; });
    if (!overlaps) ++r.false_positives;
  }
  return r;
}

std::optional<double> select_threshold(std::span<const double> scores, std::span<const int> labels,
                                       double min_precision) {
  std::optional<double> best;
  if (std::find(labels.begin(), labels.end(), 1) == labels.end()) {
    check_binary_scores(scores, labels);
    return best;
  }
  for (const auto& pt : pr_curve(scores, labels))
    if (pt.precision >= min_precision) best = pt.threshold;
  return best;
}

std::string Table::aligned() const {
  std::vector<std::size_t> width(header.size(), 0);
  auto widen = [&](const std::vector<std::string>& row) {
    if (row.size() > width.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  };
  widen(header);
  for (const auto& r : rows) widen(r);
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out << "  ";
      if (c == 0)
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      else
        out << std::right << std::setw(static_cast<int>(width[c])) << row[c];
    }
    out << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c > 0 ? 2 : 0);
  out << std::string(total, '-') << '\n';
  for (const auto& r : rows) emit(r);
  return out.str();
}

std::string Table::csv() const {
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out << ',';
      const auto& cell = row[c];
      if (cell.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char ch : cell) out << (ch == '"' ? "\"\"" : std::string(1, ch));
        out << '"';
      } else {
        out << cell;
      }
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out.str();
}

std::string fmt(double value, int precision) {
  if (std::isnan(value)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << value;
  return s.str();
}

std::string fmt_mean_std(double mean, double stddev, int precision) {
  if (std::isnan(mean)) return "-";
  return fmt(mean, precision) + "+-" + fmt(stddev, precision);
}

void write_ribbon(std::ostream& out, const std::string& video, std::span<const int> truth,
                  const std::vector<RibbonTrack>& tracks, const std::vector<std::string>& phase_names, bool header) {
  for (const auto& tr : tracks)
    if (tr.phases.size() != truth.size()) throw std::invalid_argument("ribbon: track '" + tr.name + "' is not aligned");
  auto name = [&](int p) {
    return p >= 0 && p < static_cast<int>(phase_names.size()) ? phase_names[static_cast<std::size_t>(p)]
                                                               : std::to_string(p);
  };
  if (header) {
    out << "video,t,truth";
    for (const auto& tr : tracks) out << ',' << tr.name;
    out << '\n';
  }
  for (std::size_t t = 0; t < truth.size(); ++t) {
    out << video << ',' << t << ',' << name(truth[t]);
    for (const auto& tr : tracks) out << ',' << name(tr.phases[t]);
    out << '\n';
  }
}

}  // namespace endonet::metrics
