#include "oracles.hpp"

#include "endonet/corpus.hpp"
#include "endonet/hhmm.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace endonet;
using namespace endonet::corpus;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

// Replaces line `n` (1-based) of a text file.
void replace_line(const std::filesystem::path& p, int n, const std::string& line) {
  std::istringstream in(read_file(p));
  std::string out, cur;
  for (int i = 1; std::getline(in, cur); ++i) out += (i == n ? line : cur) + "\n";
  write_file(p, out);
}

std::string line_of(const std::filesystem::path& p, int n) {
  std::istringstream in(read_file(p));
  std::string cur;
  for (int i = 1; std::getline(in, cur); ++i)
    if (i == n) return cur;
  return {};
}

GeneratedCorpus small_corpus(int videos = 4, std::uint64_t seed = 1) {
  GenerateOptions o;
  o.videos = videos;
  o.seed = seed;
  o.folds = videos >= 8 ? 4 : 1;
  return generate_corpus(o);
}

}  // namespace

TEST_CASE("built-in vocabularies carry the published duration statistics") {
  const auto c = PhaseVocabulary::cholec80();
  REQUIRE(c.size() == 7);
  CHECK(c.ids() == std::vector<std::string>{"P1", "P2", "P3", "P4", "P5", "P6", "P7"});
  const std::vector<std::pair<double, double>> table{{125, 95}, {954, 538}, {168, 152}, {857, 551},
                                                     {98, 53},   {178, 166}, {83, 56}};
  for (std::size_t p = 0; p < 7; ++p) {
    CHECK(c.phases[p].mean_duration == table[p].first);
    CHECK(c.phases[p].std_duration == table[p].second);
  }
  CHECK(c.phases[1].name == "Calot triangle dissection");

  const auto e = PhaseVocabulary::endovis();
  CHECK(e.ids() == std::vector<std::string>{"P0", "P12", "P3", "P4", "P5", "P6", "P7"});
  CHECK(e.phases[1].mean_duration == 419);
  CHECK(e.phases[5].std_duration == 62);
  CHECK(PhaseVocabulary::builtin("endovis") == e);
  CHECK_THROWS(PhaseVocabulary::builtin("nope"));
  CHECK(c.index_of("P3") == 2);
  CHECK(c.index_of("P9") == -1);
}

TEST_CASE("expected P1 duration at scale 0.1") {
  CHECK(expected_duration(PhaseVocabulary::cholec80().phases[0], 0.1) == doctest::Approx(12.5));
}

TEST_CASE("sampled P2 durations match the published mean") {
  const auto p2 = PhaseVocabulary::cholec80().phases[1];
  for (double scale : {0.1, 1.0}) {
    std::mt19937_64 rng(42);
    double sum = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
      const auto d = sample_duration(p2, scale, rng);
      CHECK(d >= 1);
      sum += static_cast<double>(d);
    }
    const double se = p2.std_duration * scale / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(sum / n - 954.0 * scale) < 3.0 * se);
  }
  std::mt19937_64 rng(0);
  CHECK_THROWS(sample_duration(p2, 0.0, rng));
}

TEST_CASE("tool flag marginals converge to the usage profile") {
  const auto vocab = PhaseVocabulary::cholec80();
  const auto usage = ToolUsageProfile::cholec80();
  const auto grammar = PhaseGrammar::cholec80();
  const auto obs = ObservationModel::make(ObservationKind::feature, 7, 5);
  Eigen::MatrixXd on = Eigen::MatrixXd::Zero(7, kTools);
  Eigen::VectorXd frames = Eigen::VectorXd::Zero(7);
  for (int v = 0; v < 60; ++v) {
    const auto video = sample_surgery(vocab, usage, grammar, obs, {0.2, static_cast<std::uint64_t>(100 + v), "v"});
    for (Index t = 0; t < video.frames(); ++t) {
      const int p = video.phases[static_cast<std::size_t>(t)];
      frames(p) += 1;
      for (int k = 0; k < kTools; ++k) on(p, k) += video.tools(t, k);
    }
  }
  // Sticky flags are positively correlated in time; inflate the standard
  // error by the AR(1) variance factor.
  const double rho = usage.persistence;
  const double inflation = std::sqrt((1.0 + rho) / (1.0 - rho));
  for (int p = 0; p < 7; ++p) {
    REQUIRE(frames(p) > 100);
    for (int k = 0; k < kTools; ++k) {
      const double q = usage.probability(p, k);
      const double se = std::sqrt(std::max(q * (1.0 - q), 1e-4) / frames(p)) * inflation;
      CHECK(std::abs(on(p, k) / frames(p) - q) < 3.0 * se);
    }
  }
}

TEST_CASE("the default feature corpus is separable by a Bayes classifier") {
  const auto g = small_corpus(16, 0);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(7);
  for (const auto& v : g.dataset.videos)
    for (int p : v.phases) counts(p) += 1;
  const BayesPhaseClassifier bayes(g.observation_model, g.usage, counts / counts.sum());
  long correct = 0, total = 0;
  for (const auto& v : g.dataset.videos)
    for (Index t = 0; t < v.frames(); ++t) {
      correct += bayes.classify(v.observations.row(t).transpose()) == v.phases[static_cast<std::size_t>(t)];
      ++total;
    }
  CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("generated sequences only use transitions the grammar allows") {
  const auto grammar = PhaseGrammar::cholec80();
  const auto allowed = grammar.allowed_transitions();
  std::vector<std::vector<int>> sequences;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 300; ++i) sequences.push_back(sample_phase_sequence(grammar, rng));
  const auto grammar_topology = hhmm::learn_topology(sequences, 7);
  for (const auto& [from, to, prob] : grammar_topology.edges())
    CHECK(std::find(allowed.begin(), allowed.end(), std::pair{from, to}) != allowed.end());

  // A topology learned from the grammar's own sequences accepts every fresh one.
  std::mt19937_64 fresh(7);
  for (int i = 0; i < 200; ++i) {
    const auto s = sample_phase_sequence(grammar, fresh);
    CHECK(grammar_topology.initial(s.front()) > 0.0);
    for (std::size_t t = 1; t < s.size(); ++t) CHECK(grammar_topology.transition(s[t - 1], s[t]) > 0.0);
  }
  // Some surgeries skip P6 and some alternate between P5 and P6.
  CHECK(grammar_topology.transition(4, 6) > 0.0);
  CHECK(grammar_topology.transition(4, 5) > 0.0);
  CHECK(grammar_topology.transition(5, 4) > 0.0);
}

TEST_CASE("generation is bit-reproducible") {
  const auto a = small_corpus(3, 11);
  const auto b = small_corpus(3, 11);
  const auto c = small_corpus(3, 12);
  CHECK(a.dataset == b.dataset);
  CHECK_FALSE(a.dataset == c.dataset);
  for (const auto& v : a.dataset.videos) {
    CHECK(v.observations.cols() == 16);
    CHECK(v.tools.rows() == v.frames());
    CHECK(v.frames() > 0);
  }
}

TEST_CASE("image mode renders tiles") {
  GenerateOptions o;
  o.videos = 2;
  o.kind = ObservationKind::image;
  o.folds = 1;
  const auto g = generate_corpus(o);
  CHECK(g.dataset.frame_shape == nn::Shape{3, 32, 32});
  CHECK(g.dataset.videos[0].observations.cols() == 3 * 32 * 32);
  CHECK(g.dataset.videos[0].observations.allFinite());
}

TEST_CASE("splits") {
  std::vector<std::string> ids;
  for (int i = 0; i < 80; ++i) ids.push_back("video" + std::to_string(i));
  SUBCASE("80 videos") {
    const auto s = make_split(ids, 0.5, 4, 3);
    CHECK(s.finetune.size() == 40);
    CHECK(s.evaluation.size() == 40);
    for (const auto& f : s.folds) CHECK(f.size() == 10);
    std::vector<std::string> all = s.finetune;
    all.insert(all.end(), s.evaluation.begin(), s.evaluation.end());
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
    CHECK(all.size() == 80);
    std::vector<std::string> folded;
    for (const auto& f : s.folds) folded.insert(folded.end(), f.begin(), f.end());
    std::sort(folded.begin(), folded.end());
    CHECK(folded == s.evaluation);
    CHECK(make_split(ids, 0.5, 4, 3) == s);
    CHECK_FALSE(make_split(ids, 0.5, 4, 4) == s);
  }
  SUBCASE("8 evaluation videos, 4 folds: folds of 2") {
    const auto s = make_split(std::vector<std::string>(ids.begin(), ids.begin() + 16), 0.5, 4, 0);
    for (const auto& f : s.folds) CHECK(f.size() == 2);
  }
  SUBCASE("8 videos, 4 folds: the minimum, one evaluation video per fold") {
    const auto s = make_split(std::vector<std::string>(ids.begin(), ids.begin() + 8), 0.5, 4, 0);
    for (const auto& f : s.folds) CHECK(f.size() == 1);
    CHECK(s.evaluation.size() == 4);
  }
  SUBCASE("odd count balances within one") {
    const auto s = make_split(std::vector<std::string>(ids.begin(), ids.begin() + 23), 0.5, 4, 0);
    CHECK(std::abs(static_cast<long>(s.finetune.size()) - static_cast<long>(s.evaluation.size())) <= 1);
    auto [mn, mx] = std::minmax_element(s.folds.begin(), s.folds.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    CHECK(mx->size() - mn->size() <= 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS(make_split(std::vector<std::string>(ids.begin(), ids.begin() + 7), 0.5, 4, 0));
    CHECK_THROWS(make_split({"a", "a", "b", "c"}, 0.5, 1, 0));
    CHECK_THROWS(make_split(ids, 1.0, 4, 0));
  }
}

TEST_CASE("dataset files round-trip bit-exactly") {
  const auto dir = oracle::scratch_dir("dataset_rt");
  SUBCASE("empty corpus") {
    Dataset d;
    d.vocabulary = PhaseVocabulary::cholec80();
    d.frame_shape = {16};
    write_dataset(d, dir / "empty");
    CHECK(read_dataset(dir / "empty") == d);
    CHECK(validate_dataset(dir / "empty").empty());
  }
  SUBCASE("three videos with awkward doubles") {
    auto d = small_corpus(3, 2).dataset;
    d.videos[0].observations(0, 0) = 0.1 + 0.2;
    d.videos[0].observations(1, 1) = -1e-300;
    d.videos[0].observations(2, 2) = 123456789.123456789;
    write_dataset(d, dir / "three");
    const auto back = read_dataset(dir / "three");
    CHECK(back == d);
    CHECK(back.split == d.split);
  }
}

TEST_CASE("malformed dataset files are rejected with their line") {
  const auto dir = oracle::scratch_dir("dataset_bad");
  const auto d = small_corpus(2, 3).dataset;
  write_dataset(d, dir);
  const auto file = dir / (d.videos[0].id + ".frames");
  CHECK(validate_dataset(dir).empty());

  SUBCASE("wrong tool-flag count") {
    // Line 5 is the third frame; drop its payload and one flag.
    replace_line(file, 5, d.videos[0].id + ",2,P1,0,0,1,0,0,0");
    try {
      read_dataset(dir);
      FAIL("expected a dataset error");
    } catch (const DatasetError& e) {
      CHECK(e.line() == 5);
      CHECK(e.reason().find("7 tool flags") != std::string::npos);
    }
  }
  SUBCASE("out-of-vocabulary phase") {
    auto line = line_of(file, 4);
    const auto first = line.find(',', line.find(',') + 1);
    line = line.substr(0, first + 1) + "P9" + line.substr(line.find(',', first + 1));
    replace_line(file, 4, line);
    const auto diags = validate_dataset(dir);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].line == 4);
    CHECK(diags[0].message.find("P9") != std::string::npos);
    CHECK(diags[0].str().find(".frames:4:") != std::string::npos);
  }
  SUBCASE("non-consecutive timestamps") {
    auto line = line_of(file, 6);
    const auto a = line.find(',') + 1;
    line = line.substr(0, a) + "40" + line.substr(line.find(',', a));
    replace_line(file, 6, line);
    const auto diags = validate_dataset(dir);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags[0].line == 6);
    CHECK(diags[0].message.find("consecutive") != std::string::npos);
    CHECK_THROWS_AS(read_dataset(dir), DatasetError);
  }
  SUBCASE("missing manifest") {
    std::filesystem::remove(dir / "manifest.json");
    CHECK(validate_dataset(dir).size() == 1);
  }
}

TEST_CASE("proxy corpus") {
  const auto p = make_proxy_corpus({16}, 5, 200, 1);
  const auto q = make_proxy_corpus({16}, 5, 200, 1);
  CHECK(p.labels == q.labels);
  CHECK_THROWS(make_proxy_corpus({16}, 1, 200, 1));
}
