// Command-line front end: generate, validate, train, evaluate, report.

#include "endonet/container.hpp"
#include "endonet/corpus.hpp"
#include "endonet/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

namespace fs = std::filesystem;
using namespace endonet;

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides, "override a config key, e.g. --set svm.C=0.5")->take_all();
  cmd->add_flag("-q,--quiet", args.quiet, "suppress progress messages");
}

pipeline::ExperimentConfig resolve(const ConfigArgs& args) {
  nlohmann::json doc = nlohmann::json::object();
  if (!args.config.empty()) {
    try {
      doc = nlohmann::json::parse(io::read_text(args.config));
    } catch (const nlohmann::json::exception& e) {
      throw pipeline::ConfigError(args.config + ": " + e.what());
    }
  }
  for (const auto& o : args.overrides) pipeline::apply_override(doc, o);
  auto config = pipeline::config_from_json(doc);
  std::cout << "resolved config:\n" << pipeline::to_json(config).dump(2) << "\n";
  return config;
}

pipeline::Progress progress(const ConfigArgs& args) {
  if (args.quiet) return {};
  return {[](const std::string& m) { std::cerr << m << '\n'; }};
}

int cmd_generate(const fs::path& out, const std::string& options_file, const corpus::GenerateOptions& flags,
                 const std::vector<std::string>& overrides) {
  nlohmann::json doc = flags;
  if (!options_file.empty()) doc.update(nlohmann::json::parse(io::read_text(options_file)));
  for (const auto& o : overrides) pipeline::apply_override(doc, o);
  const auto options = doc.get<corpus::GenerateOptions>();
  const auto generated = corpus::generate_corpus(options);
  corpus::write_dataset(generated.dataset, out);
  std::cout << "wrote " << generated.dataset.videos.size() << " videos to " << out.string() << "\n";
  return 0;
}

int cmd_validate(const fs::path& dir) {
  const auto diagnostics = corpus::validate_dataset(dir);
  for (const auto& d : diagnostics) std::cout << d.str() << '\n';
  if (diagnostics.empty()) {
    std::cout << dir.string() << ": ok\n";
    return 0;
  }
  std::cout << diagnostics.size() << " problem(s)\n";
  return 1;
}

int cmd_train(const ConfigArgs& args) {
  auto config = resolve(args);
  pipeline::validate(config);
  const auto data = corpus::read_dataset(config.dataset);
  for (int run = 0; run < config.runs; ++run) {
    const auto a = pipeline::train_run(config, data, run, progress(args));
    std::cout << "run " << run << ": models in " << a.directory.string() << "\n";
  }
  return 0;
}

int cmd_evaluate(const ConfigArgs& args) {
  const auto config = resolve(args);
  const auto result = pipeline::run_experiment(config, progress(args));
  std::cout << result.report_text;
  std::cout << "report written to " << result.report_path.string() << "\n";
  return 0;
}

int cmd_report(const ConfigArgs& args) {
  const auto config = resolve(args);
  const auto result = pipeline::report_experiment(config);
  std::cout << result.report_text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surgical workflow phase recognition pipeline"};
  app.require_subcommand(1);

  auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
  fs::path out;
  std::string options_file;
  std::string kind = "feature";
  std::vector<std::string> gen_overrides;
  corpus::GenerateOptions gen;
  generate->add_option("-o,--out", out, "output directory")->required();
  generate->add_option("--options", options_file, "generator options (JSON)")->check(CLI::ExistingFile);
  generate->add_option("--vocabulary", gen.vocabulary, "cholec80 or endovis")->capture_default_str();
  generate->add_option("--videos", gen.videos)->capture_default_str();
  generate->add_option("--scale", gen.scale, "duration scale")->capture_default_str();
  generate->add_option("--kind", kind, "feature or image")->capture_default_str();
  generate->add_option("--dimension", gen.dimension)->capture_default_str();
  generate->add_option("--separation", gen.separation)->capture_default_str();
  generate->add_option("--noise", gen.noise)->capture_default_str();
  generate->add_option("--finetune-fraction", gen.finetune_fraction)->capture_default_str();
  generate->add_option("--folds", gen.folds)->capture_default_str();
  generate->add_option("--seed", gen.seed)->capture_default_str();
  generate->add_option("-s,--set", gen_overrides, "override an option key")->take_all();

  auto* validate = app.add_subcommand("validate", "check a dataset directory");
  fs::path dataset;
  validate->add_option("dataset", dataset, "dataset directory")->required();

  ConfigArgs train_args, eval_args, report_args;
  auto* train = app.add_subcommand("train", "train every model of every run");
  add_config_options(train, train_args);
  auto* evaluate = app.add_subcommand("evaluate", "train (or reuse), decode, score and report");
  add_config_options(evaluate, eval_args);
  auto* report = app.add_subcommand("report", "rebuild the aggregate report from saved run results");
  add_config_options(report, report_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors count as validation failures.
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*generate) {
      gen.kind = corpus::observation_kind_from_string(kind);
      return cmd_generate(out, options_file, gen, gen_overrides);
    }
    if (*validate) return cmd_validate(dataset);
    if (*train) return cmd_train(train_args);
    if (*evaluate) return cmd_evaluate(eval_args);
    if (*report) return cmd_report(report_args);
  } catch (const pipeline::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
