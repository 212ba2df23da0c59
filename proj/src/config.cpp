#include "endonet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace endonet::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::set<std::string> kStages{"pretrain", "finetune", "phasenet", "svm", "hhmm", "decode", "report"};

const std::set<std::string> kTopLevelKeys{
    "dataset", "output",   "vocabulary",   "loss_weights",     "arch",     "schedule",   "pretrain",
    "svm",     "hhmm",     "mode",         "runs",             "seed",     "svm_training", "confidence_source",
    "variants", "evaluation", "resume",     "inject_failure"};

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json scores_json(const metrics::PhaseScores& s) {
  nlohmann::json precision = nlohmann::json::array(), recall = nlohmann::json::array();
  for (double v : s.precision) precision.push_back(number_or_null(v));
  for (double v : s.recall) recall.push_back(number_or_null(v));
  return {{"precision", precision},
          {"recall", recall},
          {"in_truth", std::vector<int>(s.in_truth.begin(), s.in_truth.end())},
          {"undefined_precision", s.undefined_precision},
          {"mean_precision", number_or_null(s.mean_precision)},
          {"mean_recall", s.mean_recall},
          {"accuracy", s.accuracy}};
}

metrics::PhaseScores scores_from_json(const nlohmann::json& j) {
  metrics::PhaseScores s;
  for (const auto& v : j.at("precision")) s.precision.push_back(number_or_nan(v));
  for (const auto& v : j.at("recall")) s.recall.push_back(number_or_nan(v));
  for (int v : j.at("in_truth").get<std::vector<int>>()) s.in_truth.push_back(v != 0);
  s.undefined_precision = j.at("undefined_precision").get<std::vector<int>>();
  s.mean_precision = number_or_nan(j.at("mean_precision"));
  s.mean_recall = j.at("mean_recall").get<double>();
  s.accuracy = j.at("accuracy").get<double>();
  return s;
}

nlohmann::json boundary_json(const metrics::BoundaryTable& b) {
  return {{"edges", b.edges}, {"counts", b.counts}, {"missed", b.missed}, {"totals", b.totals}};
}

metrics::BoundaryTable boundary_from_json(const nlohmann::json& j) {
  metrics::BoundaryTable b;
  b.edges = j.at("edges").get<std::vector<double>>();
  b.counts = j.at("counts").get<std::vector<std::vector<long>>>();
  b.missed = j.at("missed").get<std::vector<long>>();
  b.totals = j.at("totals").get<std::vector<long>>();
  return b;
}

nlohmann::json blocks_json(const metrics::BlockDetectionReport& r) {
  return {{"edges", r.edges},
          {"latency_counts", r.latency_counts},
          {"missed", r.missed},
          {"truth_blocks", r.truth_blocks},
          {"detected_blocks", r.detected_blocks},
          {"false_positives", r.false_positives}};
}

metrics::BlockDetectionReport blocks_from_json(const nlohmann::json& j) {
  metrics::BlockDetectionReport r;
  r.edges = j.at("edges").get<std::vector<double>>();
  r.latency_counts = j.at("latency_counts").get<std::vector<long>>();
  r.missed = j.at("missed").get<long>();
  r.truth_blocks = j.at("truth_blocks").get<long>();
  r.detected_blocks = j.at("detected_blocks").get<long>();
  r.false_positives = j.at("false_positives").get<long>();
  return r;
}

}  // namespace

std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::offline: return "offline";
    case DecodeMode::online: return "online";
    default: return "both";
  }
}

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "offline") return DecodeMode::offline;
  if (s == "online") return DecodeMode::online;
  if (s == "both") return DecodeMode::both;
  throw ConfigError("mode must be offline, online or both, got '" + s + "'");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"dataset", c.dataset.string()},
          {"output", c.output.string()},
          {"vocabulary", c.vocabulary},
          {"loss_weights", {{"a", c.loss_weights.tool}, {"b", c.loss_weights.phase}}},
          {"arch", c.arch},
          {"schedule", c.schedule},
          {"pretrain",
           {{"enabled", c.pretrain.enabled},
            {"classes", c.pretrain.classes},
            {"samples", c.pretrain.samples},
            {"held_out", c.pretrain.held_out},
            {"schedule", c.pretrain.schedule}}},
          {"svm", c.svm},
          {"hhmm", c.hhmm},
          {"mode", to_string(c.mode)},
          {"runs", c.runs},
          {"seed", c.seed},
          {"svm_training", c.svm_training},
          {"confidence_source", c.confidence_source},
          {"variants", c.variants},
          {"evaluation",
           {{"block_gap", c.evaluation.block_gap},
            {"block_min_precision", c.evaluation.block_min_precision},
            {"boundary_tolerances", c.evaluation.boundary_tolerances},
            {"ribbons", c.evaluation.ribbons}}},
          {"resume", c.resume},
          {"inject_failure", c.inject_failure}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kTopLevelKeys.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    c.vocabulary = j.value("vocabulary", c.vocabulary);
    if (j.contains("loss_weights")) {
      c.loss_weights.tool = j.at("loss_weights").value("a", c.loss_weights.tool);
      c.loss_weights.phase = j.at("loss_weights").value("b", c.loss_weights.phase);
    }
    if (j.contains("arch")) c.arch = j.at("arch").get<ArchConfig>();
    if (j.contains("schedule")) c.schedule = j.at("schedule").get<nn::SgdSchedule>();
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      c.pretrain.enabled = p.value("enabled", c.pretrain.enabled);
      c.pretrain.classes = p.value("classes", c.pretrain.classes);
      c.pretrain.samples = p.value("samples", c.pretrain.samples);
      c.pretrain.held_out = p.value("held_out", c.pretrain.held_out);
      if (p.contains("schedule")) c.pretrain.schedule = p.at("schedule").get<nn::SgdSchedule>();
    }
    if (j.contains("svm")) c.svm = j.at("svm").get<svm::SvmConfig>();
    if (j.contains("hhmm")) c.hhmm = j.at("hhmm").get<hhmm::HhmmConfig>();
    if (j.contains("mode")) c.mode = decode_mode_from_string(j.at("mode").get<std::string>());
    c.runs = j.value("runs", c.runs);
    c.seed = j.value("seed", c.seed);
    c.svm_training = j.value("svm_training", c.svm_training);
    c.confidence_source = j.value("confidence_source", c.confidence_source);
    if (j.contains("variants")) c.variants = j.at("variants").get<std::vector<std::string>>();
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      c.evaluation.block_gap = e.value("block_gap", c.evaluation.block_gap);
      c.evaluation.block_min_precision = e.value("block_min_precision", c.evaluation.block_min_precision);
      if (e.contains("boundary_tolerances"))
        c.evaluation.boundary_tolerances = e.at("boundary_tolerances").get<std::vector<double>>();
      c.evaluation.ribbons = e.value("ribbons", c.evaluation.ribbons);
    }
    c.resume = j.value("resume", c.resume);
    c.inject_failure = j.value("inject_failure", c.inject_failure);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  }
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  nlohmann::json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    path.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &(*node)[path[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  (*node)[path.back()] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.dataset.empty()) fail("dataset path is not set");
  if (!fs::exists(c.dataset)) fail("dataset path '" + c.dataset.string() + "' does not exist");
  if (!fs::exists(c.dataset / "manifest.json")) fail("dataset '" + c.dataset.string() + "' has no manifest.json");
  if (c.output.empty()) fail("output path is not set");
  if (c.runs < 1) fail("runs must be at least 1");
  try {
    corpus::PhaseVocabulary::builtin(c.vocabulary);
    c.loss_weights.validate();
    c.schedule.validate();
    if (c.pretrain.enabled) c.pretrain.schedule.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  if (c.pretrain.enabled && (c.pretrain.classes < 2 || c.pretrain.samples < c.pretrain.classes || c.pretrain.held_out < 1))
    fail("pretrain needs at least two classes, one sample per class and a held-out set");
  if (!(c.svm.C > 0.0) || c.svm.epochs < 1) fail("svm needs C > 0 and at least one epoch");
  if (c.hhmm.gmm_components < 1) fail("hhmm needs at least one mixture component");
  if (c.hhmm.phases != kPhaseCount) fail("hhmm phases must equal the vocabulary size (7)");
  if (c.svm_training != "cross-validation" && c.svm_training != "finetune")
    fail("svm_training must be 'cross-validation' or 'finetune'");
  if (c.confidence_source != "svm" && c.confidence_source != "fc_phase")
    fail("confidence_source must be 'svm' or 'fc_phase'");
  if (c.variants.empty()) fail("at least one feature variant is required");
  std::set<std::string> seen;
  for (const auto& v : c.variants) {
    if (std::find(kVariants.begin(), kVariants.end(), v) == kVariants.end())
      fail("unknown feature variant '" + v + "'");
    if (!seen.insert(v).second) fail("feature variant '" + v + "' listed twice");
  }
  const auto& t = c.evaluation.boundary_tolerances;
  if (t.empty() || !std::is_sorted(t.begin(), t.end()) || std::adjacent_find(t.begin(), t.end()) != t.end())
    fail("boundary tolerances must be strictly ascending");
  if (!(c.evaluation.block_min_precision > 0.0 && c.evaluation.block_min_precision <= 1.0))
    fail("block_min_precision must lie in (0, 1]");
  if (c.evaluation.block_gap < 1) fail("block_gap must be positive");
  if (!c.inject_failure.empty() && !kStages.count(c.inject_failure))
    fail("inject_failure names unknown stage '" + c.inject_failure + "'");
}

const VariantResult& RunResult::find(const std::string& variant, const std::string& mode) const {
  for (const auto& v : variants)
    if (v.variant == variant && v.mode == mode) return v;
  throw std::out_of_range("run result has no " + variant + "/" + mode + " entry");
}

nlohmann::json to_json(const RunResult& r) {
  nlohmann::json tools = nlohmann::json::array();
  for (const auto& t : r.tools)
    tools.push_back({{"ap", t.ap ? nlohmann::json(*t.ap) : nlohmann::json(nullptr)},
                     {"threshold", t.threshold},
                     {"threshold_fallback", t.threshold_fallback},
                     {"blocks", blocks_json(t.blocks)}});
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : r.variants)
    variants.push_back({{"variant", v.variant},
                        {"mode", v.mode},
                        {"feature_width", v.feature_width},
                        {"scores", scores_json(v.scores)},
                        {"boundary", boundary_json(v.boundary)}});
  return {{"run", r.run},
          {"pretrain_accuracy", r.pretrain_accuracy},
          {"pretrain_windows_non_increasing", r.pretrain_windows_non_increasing},
          {"finetune_first_window", r.finetune_first_window},
          {"finetune_last_window", r.finetune_last_window},
          {"tools", tools},
          {"variants", variants},
          {"warnings", r.warnings}};
}

RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.run = j.at("run").get<int>();
  r.pretrain_accuracy = j.at("pretrain_accuracy").get<double>();
  r.pretrain_windows_non_increasing = j.at("pretrain_windows_non_increasing").get<double>();
  r.finetune_first_window = j.at("finetune_first_window").get<double>();
  r.finetune_last_window = j.at("finetune_last_window").get<double>();
  for (const auto& t : j.at("tools")) {
    ToolResult tr;
    if (!t.at("ap").is_null()) tr.ap = t.at("ap").get<double>();
    tr.threshold = t.at("threshold").get<double>();
    tr.threshold_fallback = t.at("threshold_fallback").get<bool>();
    tr.blocks = blocks_from_json(t.at("blocks"));
    r.tools.push_back(tr);
  }
  for (const auto& v : j.at("variants"))
    r.variants.push_back({v.at("variant").get<std::string>(), v.at("mode").get<std::string>(),
                          scores_from_json(v.at("scores")), boundary_from_json(v.at("boundary")),
                          v.at("feature_width").get<Index>()});
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  double sum = 0.0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++s.count;
    }
  if (s.count == 0) return {kNaN, kNaN, 0};
  s.mean = sum / s.count;
  double sq = 0.0;
  for (double v : values)
    if (!std::isnan(v)) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / s.count);
  return s;
}

const AggregateReport::Row& AggregateReport::find(const std::string& variant, const std::string& mode) const {
  for (const auto& r : phase_rows)
    if (r.variant == variant && r.mode == mode) return r;
  throw std::out_of_range("aggregate report has no " + variant + "/" + mode + " row");
}

AggregateReport aggregate(const std::vector<RunResult>& runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  AggregateReport a;
  a.runs = static_cast<int>(runs.size());
  for (const auto& v : runs.front().variants) {
    std::vector<double> p, r, acc, within;
    for (const auto& run : runs) {
      const auto& x = run.find(v.variant, v.mode);
      p.push_back(x.scores.mean_precision);
      r.push_back(x.scores.mean_recall);
      acc.push_back(x.scores.accuracy);
      long total = 0, first = 0;
      for (std::size_t ph = 0; ph < x.boundary.totals.size(); ++ph) {
        total += x.boundary.totals[ph];
        first += x.boundary.counts[ph].front();
      }
      within.push_back(total > 0 ? 100.0 * static_cast<double>(first) / static_cast<double>(total) : kNaN);
    }
    a.phase_rows.push_back({v.variant, v.mode, summarize(p), summarize(r), summarize(acc), summarize(within)});
  }
  for (std::size_t t = 0; t < runs.front().tools.size(); ++t) {
    std::vector<double> ap;
    for (const auto& run : runs) ap.push_back(run.tools[t].ap ? 100.0 * *run.tools[t].ap : kNaN);
    a.tool_ap.push_back(summarize(ap));
  }
  std::vector<double> pre;
  for (const auto& run : runs) pre.push_back(100.0 * run.pretrain_accuracy);
  a.pretrain_accuracy = summarize(pre);
  return a;
}

std::string AggregateReport::text() const {
  std::ostringstream out;
  out << "Aggregate over " << runs << " run" << (runs == 1 ? "" : "s") << " (mean+-std)\n\n";
  out << "Phase recognition\n";
  metrics::Table t{{"feature", "mode", "avg precision", "avg recall", "accuracy", "boundaries in first bucket"}, {}};
  for (const auto& r : phase_rows)
    t.add_row({r.variant, r.mode, metrics::fmt_mean_std(r.precision.mean, r.precision.stddev),
               metrics::fmt_mean_std(r.recall.mean, r.recall.stddev),
               metrics::fmt_mean_std(r.accuracy.mean, r.accuracy.stddev),
               metrics::fmt_mean_std(r.within_first_tolerance.mean, r.within_first_tolerance.stddev)});
  out << t.aligned() << '\n';
  out << "Tool presence (AP, %)\n";
  metrics::Table tools{{"tool", "AP"}, {}};
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < tool_ap.size(); ++i) {
    tools.add_row({corpus::kToolNames[i], metrics::fmt_mean_std(tool_ap[i].mean, tool_ap[i].stddev)});
    if (!std::isnan(tool_ap[i].mean)) {
      sum += tool_ap[i].mean;
      ++n;
    }
  }
  tools.add_row({"mean", metrics::fmt(n > 0 ? sum / n : kNaN)});
  out << tools.aligned() << '\n';
  out << "Proxy pre-training held-out accuracy: "
      << metrics::fmt_mean_std(pretrain_accuracy.mean, pretrain_accuracy.stddev) << "\n";
  return out.str();
}

std::string AggregateReport::csv() const {
  metrics::Table t{{"feature", "mode", "precision_mean", "precision_std", "recall_mean", "recall_std", "accuracy_mean",
                    "accuracy_std", "within_first_tolerance_mean", "within_first_tolerance_std"},
                   {}};
  for (const auto& r : phase_rows)
    t.add_row({r.variant, r.mode, metrics::fmt(r.precision.mean, 4), metrics::fmt(r.precision.stddev, 4),
               metrics::fmt(r.recall.mean, 4), metrics::fmt(r.recall.stddev, 4), metrics::fmt(r.accuracy.mean, 4),
               metrics::fmt(r.accuracy.stddev, 4), metrics::fmt(r.within_first_tolerance.mean, 4),
               metrics::fmt(r.within_first_tolerance.stddev, 4)});
  return t.csv();
}

}  // namespace endonet::pipeline
