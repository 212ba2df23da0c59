#include "endonet/pipeline.hpp"

#include "endonet/container.hpp"
#include "endonet/seed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace endonet::pipeline {

namespace {

constexpr const char* kResultsKind = "run-results";
constexpr const char* kPretrainKind = "pretrain-summary";

enum SeedStream : std::uint64_t {
  kSeedProxy = 1,
  kSeedPretrain,
  kSeedEndoNet,
  kSeedPhaseNet,
  kSeedSvm,
  kSeedHhmm,
  kSeedInit
};

std::uint64_t stage_seed(const ExperimentConfig& c, int run, SeedStream stream, std::uint64_t extra = 0) {
  return derive_seed(c.seed, {static_cast<std::uint64_t>(run), static_cast<std::uint64_t>(stream), extra});
}

fs::path run_directory(const ExperimentConfig& c, int run) { return c.output / ("run_" + std::to_string(run)); }

// Fields that do not influence any trained model.
nlohmann::json model_fingerprint(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  for (const char* k : {"runs", "output", "resume", "inject_failure", "mode", "variants", "evaluation"}) j.erase(k);
  return j;
}

std::vector<std::string> modes_of(DecodeMode m) {
  if (m == DecodeMode::offline) return {"offline"};
  if (m == DecodeMode::online) return {"online"};
  return {"offline", "online"};
}

nn::TensorD frames_tensor(const corpus::Dataset& d, const std::vector<const corpus::Video*>& videos) {
  Index rows = 0;
  for (const auto* v : videos) rows += v->frames();
  nn::Shape shape{rows};
  shape.insert(shape.end(), d.frame_shape.begin(), d.frame_shape.end());
  nn::TensorD t(shape);
  Index r = 0;
  for (const auto* v : videos) {
    t.matrix().middleRows(r, v->frames()) = v->observations;
    r += v->frames();
  }
  return t;
}

struct PlannedFold {
  int index = 0;
  std::vector<std::string> train;
  std::vector<std::string> test;
};

std::vector<PlannedFold> plan_folds(const ExperimentConfig& c, const corpus::CorpusSplit& split) {
  std::vector<PlannedFold> out;
  if (c.svm_training == "finetune") {
    out.push_back({0, split.finetune, split.evaluation});
    return out;
  }
  if (split.folds.size() < 2) throw ConfigError("cross-validation needs at least two evaluation folds");
  for (std::size_t k = 0; k < split.folds.size(); ++k) {
    PlannedFold f{static_cast<int>(k), {}, split.folds[k]};
    for (std::size_t o = 0; o < split.folds.size(); ++o)
      if (o != k) f.train.insert(f.train.end(), split.folds[o].begin(), split.folds[o].end());
    std::sort(f.train.begin(), f.train.end());
    out.push_back(std::move(f));
  }
  return out;
}

// Per-run working state shared by training and evaluation.
struct RunState {
  RunArtifacts artifacts;
  EndoNetModel endonet;
  std::optional<EndoNetModel> phasenet;
  std::map<std::string, Features> endonet_features;
  std::map<std::string, Features> phasenet_features;
  corpus::CorpusSplit split;
  std::vector<PlannedFold> folds;
  // (variant, fold) -> models
  std::map<std::pair<std::string, int>, svm::OvrSvmModel> svms;
  std::map<std::pair<std::string, int>, hhmm::Hhmm> hhmms;
};

class StageRunner {
 public:
  StageRunner(const ExperimentConfig& c, int run, bool can_reuse, RunArtifacts& a, const Progress& progress)
      : config_(c), run_(run), can_reuse_(can_reuse), artifacts_(a), progress_(progress) {}

  template <typename F>
  void stage(const std::string& name, F&& body) {
    if (config_.inject_failure == name) throw StageError(name, run_, "injected failure");
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, run_, e.what());
    }
  }

  /// Loads `path` when resuming and it verifies; otherwise builds and saves.
  template <typename T, typename Load, typename Build>
  T load_or_build(const fs::path& path, const std::string& label, Load&& load, Build&& build) {
    if (can_reuse_ && fs::exists(path)) {
      try {
        T value = load(path);
        artifacts_.reused.push_back(label);
        progress_("run " + std::to_string(run_) + ": reusing " + label);
        return value;
      } catch (const std::exception& e) {
        progress_("run " + std::to_string(run_) + ": rebuilding " + label + " (" + e.what() + ")");
      }
    }
    progress_("run " + std::to_string(run_) + ": building " + label);
    return build(path);
  }

 private:
  const ExperimentConfig& config_;
  int run_;
  bool can_reuse_;
  RunArtifacts& artifacts_;
  const Progress& progress_;
};

std::vector<double> read_loss_column(const fs::path& path, int column) {
  std::vector<double> out;
  std::istringstream in(io::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    double v = 0.0;
    for (int i = 0; i <= column; ++i) fields >> v;
    out.push_back(v);
  }
  return out;
}

Eigen::MatrixXd variant_features(const std::string& variant, const corpus::Video& v, const RunState& s) {
  if (variant == "gt_tools") return v.tools.cast<double>();
  if (variant == "fc7") return s.phasenet_features.at(v.id).fc7;
  if (variant == "fc8") return s.endonet_features.at(v.id).fc8;
  const auto& f7 = s.endonet_features.at(v.id).fc7;
  Eigen::MatrixXd out(f7.rows(), f7.cols() + corpus::kTools);
  out << f7, v.tools.cast<double>();
  return out;
}

bool uses_svm(const ExperimentConfig& c, const std::string& variant) {
  return !(variant == "fc8" && c.confidence_source == "fc_phase");
}

std::string fold_tag(const std::string& variant, int fold) { return variant + "_fold" + std::to_string(fold); }

Eigen::MatrixXd confidences(const ExperimentConfig& c, const RunState& s, const std::string& variant, int fold,
                            const corpus::Video& v) {
  if (!uses_svm(c, variant)) return s.endonet_features.at(v.id).phase_logits;
  return svm::score(s.svms.at({variant, fold}), variant_features(variant, v, s));
}

RunState prepare_run(const ExperimentConfig& config, const corpus::Dataset& data, int run, const Progress& progress) {
  RunState s;
  RunArtifacts& a = s.artifacts;
  a.directory = run_directory(config, run);
  fs::create_directories(a.directory);

  const fs::path fingerprint_path = a.directory / "fingerprint.json";
  const std::string fingerprint = model_fingerprint(config).dump(2) + "\n";
  const bool can_reuse =
      config.resume && fs::exists(fingerprint_path) && io::read_text(fingerprint_path) == fingerprint;
  io::write_text_atomic(fingerprint_path, fingerprint);
  nlohmann::json resolved = to_json(config);
  resolved["run"] = run;
  io::write_text_atomic(a.directory / "resolved_config.json", resolved.dump(2) + "\n");

  StageRunner runner(config, run, can_reuse, a, progress);
  ArchConfig arch = config.arch;
  arch.input_shape = data.frame_shape;

  s.split =
      data.split ? *data.split
                 : corpus::make_split([&] {
                     std::vector<std::string> ids;
                     for (const auto& v : data.videos) ids.push_back(v.id);
                     return ids;
                   }(), 0.5, 4, config.seed);
  const corpus::CorpusSplit& split = s.split;
  std::vector<const corpus::Video*> finetune_videos;
  for (const auto& id : split.finetune) finetune_videos.push_back(&data.video(id));

  // Pre-training on the proxy task.
  a.backbone = a.directory / "backbone.model";
  EndoNetModel backbone;
  runner.stage("pretrain", [&] {
    backbone = runner.load_or_build<EndoNetModel>(
        a.backbone, "backbone", [](const fs::path& p) { return EndoNetModel::load(p); },
        [&](const fs::path& p) {
          EndoNetModel m;
          nlohmann::json summary = {{"accuracy", 0.0}, {"windows_non_increasing", 0.0}};
          if (config.pretrain.enabled) {
            const Index n_train = config.pretrain.samples;
            const auto all = corpus::make_proxy_corpus(data.frame_shape, config.pretrain.classes,
                                                       n_train + config.pretrain.held_out,
                                                       stage_seed(config, run, kSeedProxy));
            ProxyCorpus train, held;
            train.classes = held.classes = all.classes;
            auto rows = all.inputs.matrix();
            nn::Shape ts = all.inputs.shape(), hs = all.inputs.shape();
            ts[0] = n_train;
            hs[0] = config.pretrain.held_out;
            train.inputs = nn::TensorD(ts);
            held.inputs = nn::TensorD(hs);
            train.inputs.matrix() = rows.topRows(n_train);
            held.inputs.matrix() = rows.bottomRows(config.pretrain.held_out);
            train.labels.assign(all.labels.begin(), all.labels.begin() + n_train);
            held.labels.assign(all.labels.begin() + n_train, all.labels.end());
            auto res = pretrain(train, arch, config.pretrain.schedule, stage_seed(config, run, kSeedPretrain));
            const auto windows = window_means(res.losses, 100);
            long ok = 0;
            for (std::size_t i = 1; i < windows.size(); ++i) ok += windows[i] <= windows[i - 1];
            summary["accuracy"] = res.accuracy(held);
            summary["windows_non_increasing"] =
                windows.size() > 1 ? static_cast<double>(ok) / static_cast<double>(windows.size() - 1) : 1.0;
            std::ostringstream log;
            log.precision(10);
            log << "# iteration loss\n";
            for (std::size_t i = 0; i < res.losses.size(); ++i) log << i << ' ' << res.losses[i] << '\n';
            io::write_text_atomic(a.directory / "pretrain_loss_log.txt", log.str());
            m.network = std::move(res.backbone);
            m.normalizer = res.normalizer;
          } else {
            std::mt19937_64 rng(stage_seed(config, run, kSeedInit));
            m.network = build_backbone(arch, rng);
          }
          io::write_container(a.directory / "pretrain_summary.json", kPretrainKind, summary);
          m.save(p);
          return m;
        });
    const auto summary = io::read_container(a.directory / "pretrain_summary.json", kPretrainKind);
    a.result.pretrain_accuracy = summary.at("accuracy").get<double>();
    a.result.pretrain_windows_non_increasing = summary.at("windows_non_increasing").get<double>();
  });

  FinetuneData ft;
  auto finetune_data = [&]() -> const FinetuneData& {
    if (ft.phases.empty()) {
      ft.inputs = frames_tensor(data, finetune_videos);
      ft.tools.resize(ft.inputs.rows(), corpus::kTools);
      Index r = 0;
      for (const auto* v : finetune_videos) {
        ft.tools.middleRows(r, v->frames()) = v->tools.cast<double>();
        ft.phases.insert(ft.phases.end(), v->phases.begin(), v->phases.end());
        r += v->frames();
      }
    }
    return ft;
  };

  auto train_network = [&](const std::string& label, const fs::path& path, const fs::path& log_path,
                           const LossWeights& w, SeedStream stream) {
    return runner.load_or_build<EndoNetModel>(
        path, label, [](const fs::path& p) { return EndoNetModel::load(p); },
        [&](const fs::path& p) {
          auto res = finetune(backbone.network, finetune_data(), w, config.schedule, arch.head_lr_multiplier,
                              stage_seed(config, run, stream));
          write_loss_log(log_path, res.log);
          res.model.save(p);
          return res.model;
        });
  };

  a.endonet = a.directory / "endonet.model";
  a.loss_log = a.directory / "loss_log.txt";
  runner.stage("finetune", [&] {
    s.endonet = train_network("endonet", a.endonet, a.loss_log, config.loss_weights, kSeedEndoNet);
    const auto losses = read_loss_column(a.loss_log, 3);
    const auto windows = window_means(losses, 100);
    if (!windows.empty()) {
      a.result.finetune_first_window = windows.front();
      a.result.finetune_last_window = windows.back();
    }
  });

  const auto needed = required_models(config);
  if (std::find(needed.begin(), needed.end(), "phasenet") != needed.end()) {
    a.phasenet = a.directory / "phasenet.model";
    runner.stage("phasenet", [&] {
      s.phasenet = train_network("phasenet", a.phasenet, a.directory / "phasenet_loss_log.txt", LossWeights{0.0, 1.0},
                                 kSeedPhaseNet);
    });
  }

  runner.stage("svm", [&] {
    for (const auto& v : data.videos) {
      if (v.frames() == 0) throw std::invalid_argument("video '" + v.id + "' has no frames");
      const auto x = frames_tensor(data, {&v});
      s.endonet_features.emplace(v.id, extract(s.endonet, x));
      if (s.phasenet) s.phasenet_features.emplace(v.id, extract(*s.phasenet, x));
    }
    s.folds = plan_folds(config, split);
    for (const auto& variant : config.variants) {
      if (!uses_svm(config, variant)) continue;
      for (const auto& fold : s.folds) {
        const fs::path path = a.directory / ("svm_" + fold_tag(variant, fold.index) + ".svm");
        a.svm_models.push_back(path);
        s.svms.emplace(std::make_pair(variant, fold.index),
                       runner.load_or_build<svm::OvrSvmModel>(
                           path, "svm " + fold_tag(variant, fold.index),
                           [](const fs::path& p) { return svm::OvrSvmModel::load(p); },
                           [&](const fs::path& p) {
                             std::vector<Eigen::MatrixXd> blocks;
                             std::vector<int> labels;
                             Index rows = 0;
                             for (const auto& id : fold.train) {
                               const auto& v = data.video(id);
                               blocks.push_back(variant_features(variant, v, s));
                               labels.insert(labels.end(), v.phases.begin(), v.phases.end());
                               rows += v.frames();
                             }
                             Eigen::MatrixXd x(rows, blocks.front().cols());
                             Index r = 0;
                             for (const auto& b : blocks) {
                               x.middleRows(r, b.rows()) = b;
                               r += b.rows();
                             }
                             svm::SvmConfig sc = config.svm;
                             sc.seed = stage_seed(config, run, kSeedSvm, static_cast<std::uint64_t>(fold.index));
                             auto model = svm::train_ovr(x, labels, kPhaseCount, sc);
                             model.save(p);
                             return model;
                           }));
      }
    }
  });

  runner.stage("hhmm", [&] {
    for (const auto& variant : config.variants) {
      for (const auto& fold : s.folds) {
        const std::string tag = fold_tag(variant, fold.index);
        const fs::path path = a.directory / ("hhmm_" + tag + ".hhmm");
        a.hhmm_models.push_back(path);
        auto model = runner.load_or_build<hhmm::Hhmm>(
            path, "hhmm " + tag, [](const fs::path& p) { return hhmm::Hhmm::load(p); },
            [&](const fs::path& p) {
              std::vector<hhmm::LabeledSequence> seqs;
              for (const auto& id : fold.train) {
                const auto& v = data.video(id);
                seqs.push_back({confidences(config, s, variant, fold.index, v), v.phases});
              }
              hhmm::HhmmConfig hc = config.hhmm;
              hc.seed = stage_seed(config, run, kSeedHhmm, static_cast<std::uint64_t>(fold.index));
              if (variant == "gt_tools") hc.gmm_components = 1;
              auto m = hhmm::train_hhmm(seqs, hc);
              m.save(p);
              io::write_text_atomic(a.directory / ("topology_" + tag + ".txt"), m.topology.dump(data.vocabulary.ids()));
              return m;
            });
        for (const auto& w : model.warnings) a.result.warnings.push_back(tag + ": " + w);
        s.hhmms.emplace(std::make_pair(variant, fold.index), std::move(model));
      }
    }
  });
  return s;
}

std::string phase_table(const VariantResult& v, const std::vector<std::string>& ids) {
  metrics::Table t{{"phase", "precision", "recall"}, {}};
  for (std::size_t p = 0; p < ids.size(); ++p)
    t.add_row({ids[p], metrics::fmt(v.scores.precision[p]), metrics::fmt(v.scores.recall[p])});
  t.add_row({"mean", metrics::fmt(v.scores.mean_precision), metrics::fmt(v.scores.mean_recall)});
  std::string out = t.aligned();
  out += "accuracy " + metrics::fmt(v.scores.accuracy) + "\n";
  if (!v.scores.undefined_precision.empty()) {
    out += "precision undefined (never predicted):";
    for (int p : v.scores.undefined_precision) out += " " + ids[static_cast<std::size_t>(p)];
    out += "\n";
  }
  return out;
}

std::string boundary_text(const metrics::BoundaryTable& b, const std::vector<std::string>& ids) {
  metrics::Table t{{"phase"}, {}};
  for (const auto& l : b.bucket_labels()) t.header.push_back(l);
  t.header.push_back("missed");
  t.header.push_back("total");
  for (std::size_t p = 0; p < ids.size(); ++p) {
    if (b.totals[p] == 0) continue;
    std::vector<std::string> row{ids[p]};
    for (long c : b.counts[p]) row.push_back(std::to_string(c));
    row.push_back(std::to_string(b.missed[p]));
    row.push_back(std::to_string(b.totals[p]));
    t.add_row(row);
  }
  return t.aligned();
}

std::string run_report(const RunResult& r, const std::vector<std::string>& ids) {
  std::ostringstream out;
  out << "Run " << r.run << "\n\n";
  out << "Proxy pre-training held-out accuracy " << metrics::fmt(100.0 * r.pretrain_accuracy) << "%, "
      << metrics::fmt(100.0 * r.pretrain_windows_non_increasing) << "% of 100-iteration windows non-increasing\n";
  out << "Fine-tuning loss, first window " << metrics::fmt(r.finetune_first_window, 4) << ", last window "
      << metrics::fmt(r.finetune_last_window, 4) << "\n\n";

  out << "Tool presence\n";
  metrics::Table tools{{"tool", "AP", "threshold", "<5", "5-30", "30-60", ">=60", "missed", "FP rate"}, {}};
  for (std::size_t t = 0; t < r.tools.size(); ++t) {
    const auto& tr = r.tools[t];
    std::vector<std::string> row{corpus::kToolNames[t], tr.ap ? metrics::fmt(100.0 * *tr.ap) : "-",
                                 metrics::fmt(tr.threshold, 3) + (tr.threshold_fallback ? "*" : "")};
    for (long c : tr.blocks.latency_counts) row.push_back(std::to_string(c));
    row.push_back(std::to_string(tr.blocks.missed));
    row.push_back(tr.blocks.empty() ? "-" : metrics::fmt(100.0 * tr.blocks.false_positive_rate()));
    tools.add_row(row);
  }
  out << tools.aligned();
  if (std::any_of(r.tools.begin(), r.tools.end(), [](const ToolResult& t) { return t.threshold_fallback; }))
    out << "(* no threshold reached the precision target)\n";
  out << '\n';

  for (const auto& v : r.variants) {
    out << "Phase recognition: " << v.variant << " (" << v.mode << ", feature width " << v.feature_width << ")\n";
    out << phase_table(v, ids) << '\n';
    out << "Boundary errors (s)\n" << boundary_text(v.boundary, ids) << '\n';
  }
  if (!r.warnings.empty()) {
    out << "Warnings\n";
    for (const auto& w : r.warnings) out << "  " << w << '\n';
  }
  return out.str();
}

std::string phase_csv(const RunResult& r, const std::vector<std::string>& ids) {
  metrics::Table t{{"feature", "mode", "phase", "precision", "recall"}, {}};
  for (const auto& v : r.variants) {
    for (std::size_t p = 0; p < ids.size(); ++p)
      t.add_row({v.variant, v.mode, ids[p], metrics::fmt(v.scores.precision[p], 4), metrics::fmt(v.scores.recall[p], 4)});
    t.add_row({v.variant, v.mode, "mean", metrics::fmt(v.scores.mean_precision, 4), metrics::fmt(v.scores.mean_recall, 4)});
    t.add_row({v.variant, v.mode, "accuracy", metrics::fmt(v.scores.accuracy, 4), ""});
  }
  return t.csv();
}

std::string tools_csv(const RunResult& r) {
  metrics::Table t{{"tool", "ap", "threshold", "threshold_fallback", "lt5", "5to30", "30to60", "ge60", "missed",
                    "truth_blocks", "detected_blocks", "false_positives"},
                   {}};
  for (std::size_t i = 0; i < r.tools.size(); ++i) {
    const auto& tr = r.tools[i];
    std::vector<std::string> row{corpus::kToolNames[i], tr.ap ? metrics::fmt(*tr.ap, 6) : "",
                                 metrics::fmt(tr.threshold, 6), tr.threshold_fallback ? "1" : "0"};
    for (long c : tr.blocks.latency_counts) row.push_back(std::to_string(c));
    for (long c : {tr.blocks.missed, tr.blocks.truth_blocks, tr.blocks.detected_blocks, tr.blocks.false_positives})
      row.push_back(std::to_string(c));
    t.add_row(row);
  }
  return t.csv();
}

std::string boundary_csv(const RunResult& r, const std::vector<std::string>& ids) {
  metrics::Table t{{"feature", "mode", "phase"}, {}};
  if (!r.variants.empty())
    for (const auto& l : r.variants.front().boundary.bucket_labels()) t.header.push_back(l);
  t.header.push_back("missed");
  t.header.push_back("total");
  for (const auto& v : r.variants)
    for (std::size_t p = 0; p < ids.size(); ++p) {
      std::vector<std::string> row{v.variant, v.mode, ids[p]};
      for (long c : v.boundary.counts[p]) row.push_back(std::to_string(c));
      row.push_back(std::to_string(v.boundary.missed[p]));
      row.push_back(std::to_string(v.boundary.totals[p]));
      t.add_row(row);
    }
  return t.csv();
}

corpus::Dataset load_dataset(const ExperimentConfig& config) {
  auto d = corpus::read_dataset(config.dataset);
  if (d.vocabulary.name != config.vocabulary)
    throw ConfigError("dataset vocabulary '" + d.vocabulary.name + "' does not match configured '" + config.vocabulary + "'");
  if (d.vocabulary.size() != kPhaseCount) throw ConfigError("the model expects a vocabulary of 7 phases");
  return d;
}

void write_aggregate(const ExperimentConfig& config, ExperimentResult& out) {
  std::vector<RunResult> results;
  for (const auto& r : out.runs) results.push_back(r.result);
  out.aggregate = aggregate(results);
  out.report_text = out.aggregate.text();
  out.report_path = config.output / "aggregate_report.txt";
  io::write_text_atomic(out.report_path, out.report_text);
  io::write_text_atomic(config.output / "aggregate.csv", out.aggregate.csv());
}

}  // namespace

Eigen::VectorXd ObservationStream::next() {
  if (done()) throw std::out_of_range("observation stream exhausted");
  return obs_.row(next_++).transpose();
}

std::vector<int> decode_online(const hhmm::Hhmm& model, ObservationStream& stream,
                               const std::function<void(Index, int)>& on_estimate) {
  hhmm::OnlineDecoder decoder(model);
  std::vector<int> out;
  while (!stream.done()) {
    const int phase = decoder.push(stream.next());
    out.push_back(phase);
    if (on_estimate) on_estimate(static_cast<Index>(out.size()) - 1, phase);
  }
  return out;
}

std::vector<std::string> required_models(const ExperimentConfig& config) {
  std::vector<std::string> out{"endonet"};
  if (std::find(config.variants.begin(), config.variants.end(), "fc7") != config.variants.end())
    out.push_back("phasenet");
  return out;
}

RunArtifacts train_run(const ExperimentConfig& config, const corpus::Dataset& data, int run, const Progress& progress) {
  return prepare_run(config, data, run, progress).artifacts;
}

RunArtifacts evaluate_run(const ExperimentConfig& config, const corpus::Dataset& data, int run,
                          const Progress& progress) {
  RunState s = prepare_run(config, data, run, progress);
  RunArtifacts& a = s.artifacts;
  RunResult& r = a.result;
  r.run = run;
  const auto ids = data.vocabulary.ids();
  StageRunner runner(config, run, false, a, progress);
  const auto& split = s.split;

  runner.stage("decode", [&] {
    // Tool presence from the fc_tool head.
    const Index gap = config.evaluation.block_gap;
    r.tools.assign(corpus::kTools, ToolResult{});
    for (int t = 0; t < corpus::kTools; ++t) {
      std::vector<double> val_scores, eval_scores;
      std::vector<int> val_labels, eval_labels;
      for (const auto& id : split.finetune) {
        const auto& v = data.video(id);
        const Eigen::MatrixXd p = s.endonet_features.at(id).tool_probabilities();
        for (Index k = 0; k < v.frames(); ++k) {
          val_scores.push_back(p(k, t));
          val_labels.push_back(v.tools(k, t));
        }
      }
      auto& tr = r.tools[static_cast<std::size_t>(t)];
      const auto chosen = metrics::select_threshold(val_scores, val_labels, config.evaluation.block_min_precision);
      if (chosen) {
        tr.threshold = *chosen;
      } else {
        // Highest-precision threshold instead, or 0.5 without any positive.
        tr.threshold_fallback = true;
        if (std::find(val_labels.begin(), val_labels.end(), 1) != val_labels.end()) {
          double best = -1.0;
          for (const auto& pt : metrics::pr_curve(val_scores, val_labels))
            if (pt.precision >= best) {
              best = pt.precision;
              tr.threshold = pt.threshold;
            }
        }
      }
      for (const auto& id : split.evaluation) {
        const auto& v = data.video(id);
        const Eigen::MatrixXd p = s.endonet_features.at(id).tool_probabilities();
        std::vector<int> truth(static_cast<std::size_t>(v.frames()));
        std::vector<double> conf(static_cast<std::size_t>(v.frames()));
        for (Index k = 0; k < v.frames(); ++k) {
          truth[static_cast<std::size_t>(k)] = v.tools(k, t);
          conf[static_cast<std::size_t>(k)] = p(k, t);
        }
        eval_scores.insert(eval_scores.end(), conf.begin(), conf.end());
        eval_labels.insert(eval_labels.end(), truth.begin(), truth.end());
        tr.blocks.add(metrics::block_detection_report(metrics::tool_blocks(truth, t, gap), conf, tr.threshold, gap));
      }
      tr.ap = metrics::average_precision(eval_scores, eval_labels);
    }

    // Phase recognition.
    for (const auto& variant : config.variants) {
      for (const auto& mode : modes_of(config.mode)) {
        VariantResult vr;
        vr.variant = variant;
        vr.mode = mode;
        vr.boundary = metrics::BoundaryTable::empty(kPhaseCount, config.evaluation.boundary_tolerances);
        std::vector<int> all_pred, all_truth;
        std::ostringstream ribbon;
        bool first = true;
        for (const auto& fold : s.folds) {
          const auto& model = s.hhmms.at({variant, fold.index});
          for (const auto& id : fold.test) {
            const auto& v = data.video(id);
            const Eigen::MatrixXd conf = confidences(config, s, variant, fold.index, v);
            vr.feature_width = uses_svm(config, variant) ? variant_features(variant, v, s).cols() : conf.cols();
            std::vector<int> pred;
            if (mode == "offline") {
              pred = hhmm::viterbi(model, conf).phases;
            } else {
              ObservationStream stream(conf);
              pred = decode_online(model, stream);
            }
            all_pred.insert(all_pred.end(), pred.begin(), pred.end());
            all_truth.insert(all_truth.end(), v.phases.begin(), v.phases.end());
            vr.boundary.add(metrics::boundary_table(pred, v.phases, kPhaseCount, config.evaluation.boundary_tolerances));
            if (config.evaluation.ribbons) {
              metrics::write_ribbon(ribbon, v.id, v.phases, {{"predicted", pred}}, ids, first);
              first = false;
            }
          }
        }
        vr.scores = metrics::phase_scores(all_pred, all_truth, kPhaseCount);
        if (config.evaluation.ribbons)
          io::write_text_atomic(a.directory / ("ribbon_" + variant + "_" + mode + ".csv"), ribbon.str());
        r.variants.push_back(std::move(vr));
      }
    }
  });

  runner.stage("report", [&] {
    a.results = a.directory / "results.json";
    a.report = a.directory / "report.txt";
    io::write_container(a.results, kResultsKind, to_json(r));
    io::write_text_atomic(a.report, run_report(r, ids));
    io::write_text_atomic(a.directory / "phase_scores.csv", phase_csv(r, ids));
    io::write_text_atomic(a.directory / "tools.csv", tools_csv(r));
    io::write_text_atomic(a.directory / "boundary.csv", boundary_csv(r, ids));
  });
  return a;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Progress& progress) {
  validate(config);
  const auto data = load_dataset(config);
  fs::create_directories(config.output);
  io::write_text_atomic(config.output / "resolved_config.json", to_json(config).dump(2) + "\n");
  ExperimentResult out;
  for (int run = 0; run < config.runs; ++run) out.runs.push_back(evaluate_run(config, data, run, progress));
  write_aggregate(config, out);
  return out;
}

ExperimentResult report_experiment(const ExperimentConfig& config) {
  if (config.runs < 1) throw ConfigError("runs must be at least 1");
  ExperimentResult out;
  for (int run = 0; run < config.runs; ++run) {
    RunArtifacts a;
    a.directory = run_directory(config, run);
    a.results = a.directory / "results.json";
    a.result = run_result_from_json(io::read_container(a.results, kResultsKind));
    out.runs.push_back(std::move(a));
  }
  write_aggregate(config, out);
  return out;
}

}  // namespace endonet::pipeline
