#include "endonet/model.hpp"

#include "endonet/container.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace endonet {

namespace {

constexpr const char* kModelKind = "endonet-model";

// Gathers rows `idx` of a batch tensor.
nn::TensorD gather(const nn::TensorD& all, std::span<const std::size_t> idx) {
  nn::Shape shape = all.shape();
  shape[0] = static_cast<Index>(idx.size());
  nn::TensorD out(shape);
  auto src = all.matrix();
  auto dst = out.matrix();
  for (std::size_t r = 0; r < idx.size(); ++r) dst.row(static_cast<Index>(r)) = src.row(static_cast<Index>(idx[r]));
  return out;
}

nn::TensorD slice(const nn::TensorD& all, Index begin, Index end) {
  nn::Shape shape = all.shape();
  shape[0] = end - begin;
  nn::TensorD out(shape);
  out.matrix() = all.matrix().middleRows(begin, end - begin);
  return out;
}

/// Sequential minibatches over a shuffled index permutation, reshuffled at
/// the end of every pass.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Index batch, std::mt19937_64& rng) : order_(n), batch_(batch), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(batch_));
    while (out.size() < static_cast<std::size_t>(batch_)) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Index batch_;
  std::mt19937_64& rng_;
};

Eigen::MatrixXd one_hot(std::span<const int> labels, int classes) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Index>(i), labels[i]) = 1.0;
  return m;
}

}  // namespace

void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = {{"input_shape", a.input_shape},       {"conv1_channels", a.conv1_channels},
       {"conv1_kernel", a.conv1_kernel},     {"conv1_stride", a.conv1_stride},
       {"conv2_channels", a.conv2_channels}, {"conv2_kernel", a.conv2_kernel},
       {"pool", a.pool},                     {"hidden_width", a.hidden_width},
       {"feature_width", a.feature_width},   {"head_lr_multiplier", a.head_lr_multiplier}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
  a.input_shape = j.value("input_shape", a.input_shape);
  a.conv1_channels = j.value("conv1_channels", a.conv1_channels);
  a.conv1_kernel = j.value("conv1_kernel", a.conv1_kernel);
  a.conv1_stride = j.value("conv1_stride", a.conv1_stride);
  a.conv2_channels = j.value("conv2_channels", a.conv2_channels);
  a.conv2_kernel = j.value("conv2_kernel", a.conv2_kernel);
  a.pool = j.value("pool", a.pool);
  a.hidden_width = j.value("hidden_width", a.hidden_width);
  a.feature_width = j.value("feature_width", a.feature_width);
  a.head_lr_multiplier = j.value("head_lr_multiplier", a.head_lr_multiplier);
}

std::vector<nn::LayerSpec> backbone_layers(const ArchConfig& arch) {
  using nn::LayerSpec;
  std::vector<LayerSpec> layers;
  if (arch.input_shape.size() == 3) {
    layers.push_back(LayerSpec::convolution("conv1", arch.conv1_channels, arch.conv1_kernel, arch.conv1_stride));
    layers.push_back(LayerSpec::relu("relu1"));
    layers.push_back(LayerSpec::convolution("conv2", arch.conv2_channels, arch.conv2_kernel));
    layers.push_back(LayerSpec::relu("relu2"));
    layers.push_back(LayerSpec::max_pool("pool2", arch.pool, arch.pool));
  } else if (arch.input_shape.size() != 1) {
    throw std::invalid_argument("backbone input must be (C,H,W) or (D)");
  }
  layers.push_back(LayerSpec::dense("fc6", arch.hidden_width));
  layers.push_back(LayerSpec::relu("relu6"));
  layers.push_back(LayerSpec::dense("fc7", arch.feature_width));
  layers.push_back(LayerSpec::relu("relu7"));
  return layers;
}

nn::Network build_backbone(const ArchConfig& arch, std::mt19937_64& rng) {
  nn::Network net(arch.input_shape);
  for (const auto& spec : backbone_layers(arch)) net.append(spec, rng);
  return net;
}

HeadLayout attach_heads(nn::Network& net, std::mt19937_64& rng, double lr_multiplier) {
  if (net.layer_count() == 0) throw std::invalid_argument("attach_heads: empty backbone");
  const std::size_t fc7 = net.layer_count() - 1;
  if (net.output_shape(fc7).size() != 1) throw std::invalid_argument("attach_heads: backbone must end in a vector");
  HeadLayout h;
  h.fc7 = fc7;
  h.feature_width = net.output_shape(fc7)[0];
  net.append(nn::LayerSpec::dense("fc_tool", kToolCount, lr_multiplier), rng);
  h.fc_tool = net.layer_count() - 1;
  net.append(nn::LayerSpec::concat("fc8", static_cast<int>(fc7)), rng);
  h.fc8 = net.layer_count() - 1;
  net.append(nn::LayerSpec::dense("fc_phase", kPhaseCount, lr_multiplier), rng);
  h.fc_phase = net.layer_count() - 1;
  return h;
}

InputNormalizer InputNormalizer::fit(const nn::TensorD& batch) {
  const Index n = batch.extent(0);
  const Index channels = batch.extent(1);
  const Index per_channel = batch.size() / (n * channels);
  InputNormalizer norm;
  norm.mean = Eigen::VectorXd::Zero(channels);
  norm.stddev = Eigen::VectorXd::Zero(channels);
  const double count = static_cast<double>(n * per_channel);
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < channels; ++c)
      norm.mean(c) += batch.data().segment((s * channels + c) * per_channel, per_channel).sum();
  norm.mean /= count;
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < channels; ++c)
      norm.stddev(c) +=
          (batch.data().segment((s * channels + c) * per_channel, per_channel).array() - norm.mean(c)).square().sum();
  for (Index c = 0; c < channels; ++c) {
    const double sd = std::sqrt(norm.stddev(c) / count);
    norm.stddev(c) = sd > 1e-12 ? sd : 1.0;
  }
  return norm;
}

nn::TensorD InputNormalizer::apply(const nn::TensorD& batch) const {
  if (empty()) return batch;
  const Index n = batch.extent(0);
  const Index channels = batch.extent(1);
  if (channels != mean.size()) throw std::invalid_argument("normalizer: channel count mismatch");
  const Index per_channel = batch.size() / (n * channels);
  nn::TensorD out = batch;
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < channels; ++c) {
      auto seg = out.data().segment((s * channels + c) * per_channel, per_channel);
      seg = (seg.array() - mean(c)) / stddev(c);
    }
  return out;
}

std::vector<double> window_means(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out;
  if (window == 0) return out;
  for (std::size_t start = 0; start + window <= values.size(); start += window)
    out.push_back(std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(start),
                                  values.begin() + static_cast<std::ptrdiff_t>(start + window), 0.0) /
                  static_cast<double>(window));
  return out;
}

nlohmann::json EndoNetModel::to_json() const {
  return {{"network", network.to_json()},
          {"has_heads", has_heads},
          {"heads",
           {{"fc7", heads.fc7},
            {"fc_tool", heads.fc_tool},
            {"fc8", heads.fc8},
            {"fc_phase", heads.fc_phase},
            {"feature_width", heads.feature_width}}},
          {"loss_weights", {{"a", weights.tool}, {"b", weights.phase}}},
          {"normalizer",
           {{"mean", std::vector<double>(normalizer.mean.begin(), normalizer.mean.end())},
            {"stddev", std::vector<double>(normalizer.stddev.begin(), normalizer.stddev.end())}}}};
}

EndoNetModel EndoNetModel::from_json(const nlohmann::json& j) {
  EndoNetModel m;
  m.network = nn::Network::from_json(j.at("network"));
  m.has_heads = j.at("has_heads").get<bool>();
  const auto& h = j.at("heads");
  m.heads.fc7 = h.at("fc7").get<std::size_t>();
  m.heads.fc_tool = h.at("fc_tool").get<std::size_t>();
  m.heads.fc8 = h.at("fc8").get<std::size_t>();
  m.heads.fc_phase = h.at("fc_phase").get<std::size_t>();
  m.heads.feature_width = h.at("feature_width").get<Index>();
  m.weights.tool = j.at("loss_weights").at("a").get<double>();
  m.weights.phase = j.at("loss_weights").at("b").get<double>();
  auto mean = j.at("normalizer").at("mean").get<std::vector<double>>();
  auto sd = j.at("normalizer").at("stddev").get<std::vector<double>>();
  m.normalizer.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Index>(mean.size()));
  m.normalizer.stddev = Eigen::Map<Eigen::VectorXd>(sd.data(), static_cast<Index>(sd.size()));
  if (m.has_heads && (m.heads.fc_phase >= m.network.layer_count() ||
                      m.network.layer(m.heads.fc_tool).name != "fc_tool" ||
                      m.network.layer(m.heads.fc_phase).name != "fc_phase"))
    throw io::ContainerError("model: head layout does not match the stored layers");
  return m;
}

void EndoNetModel::save(const std::filesystem::path& path) const { io::write_container(path, kModelKind, to_json()); }

EndoNetModel EndoNetModel::load(const std::filesystem::path& path) {
  return from_json(io::read_container(path, kModelKind));
}

double PretrainResult::accuracy(const ProxyCorpus& held_out) const {
  const auto acts = classifier.forward(normalizer.apply(held_out.inputs));
  const auto logits = acts.outputs.back().matrix();
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == held_out.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

PretrainResult pretrain(const ProxyCorpus& corpus, const ArchConfig& arch, const nn::SgdSchedule& schedule,
                        std::uint64_t seed) {
  schedule.validate();
  if (corpus.inputs.empty() || corpus.labels.size() != static_cast<std::size_t>(corpus.inputs.rows()))
    throw std::invalid_argument("pretrain: proxy corpus inputs and labels differ in length");
  if (corpus.classes < 2) throw std::invalid_argument("pretrain: proxy task needs at least two classes");

  std::mt19937_64 rng(seed);
  PretrainResult result;
  result.normalizer = InputNormalizer::fit(corpus.inputs);
  const nn::TensorD inputs = result.normalizer.apply(corpus.inputs);

  nn::Network net = build_backbone(arch, rng);
  const std::size_t backbone_layers = net.layer_count();
  net.append(nn::LayerSpec::dense("proxy", corpus.classes), rng);

  BatchSampler sampler(corpus.labels.size(), schedule.batch_size, rng);
  std::vector<int> batch_labels(static_cast<std::size_t>(schedule.batch_size));
  for (long it = 0; it < schedule.total_iterations; ++it) {
    const auto idx = sampler.next();
    for (std::size_t r = 0; r < idx.size(); ++r) batch_labels[r] = corpus.labels[idx[r]];
    const auto acts = net.forward(gather(inputs, idx));
    const auto logits = acts.outputs.back().matrix();
    const Eigen::MatrixXd targets = one_hot(batch_labels, corpus.classes);
    const double loss = phase_loss(logits, targets);
    if (!std::isfinite(loss)) throw TrainingDiverged(it, "pretrain: non-finite loss");
    result.losses.push_back(loss);
    const nn::TensorD grad = nn::TensorD::from_matrix(phase_loss_grad(logits, targets));
    net.backward(acts, grad);
    net.sgd_step(schedule, it);
  }
  result.classifier = net;
  net.truncate(backbone_layers);
  result.backbone = std::move(net);
  return result;
}

FinetuneResult finetune(const nn::Network& backbone, const FinetuneData& data, const LossWeights& weights,
                        const nn::SgdSchedule& schedule, double head_lr_multiplier, std::uint64_t seed) {
  weights.validate();
  schedule.validate();
  const auto n = static_cast<std::size_t>(data.inputs.empty() ? 0 : data.inputs.rows());
  if (n == 0) throw std::invalid_argument("finetune: empty corpus");
  if (data.tools.rows() != static_cast<Index>(n) || data.tools.cols() != kToolCount)
    throw std::invalid_argument("finetune: every frame needs 7 tool annotations");
  if (data.phases.size() != n) throw std::invalid_argument("finetune: every frame needs a phase annotation");
  for (std::size_t i = 0; i < n; ++i) {
    if (data.phases[i] < 0 || data.phases[i] >= kPhaseCount)
      throw std::invalid_argument("finetune: frame " + std::to_string(i) + " has a missing or invalid phase label");
    for (Index t = 0; t < kToolCount; ++t) {
      const double v = data.tools(static_cast<Index>(i), t);
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("finetune: frame " + std::to_string(i) + " has a missing or invalid tool label");
    }
  }

  std::mt19937_64 rng(seed);
  FinetuneResult result;
  EndoNetModel& model = result.model;
  model.network = backbone;
  model.heads = attach_heads(model.network, rng, head_lr_multiplier);
  model.has_heads = true;
  model.weights = weights;
  model.normalizer = InputNormalizer::fit(data.inputs);
  const nn::TensorD inputs = model.normalizer.apply(data.inputs);

  BatchSampler sampler(n, schedule.batch_size, rng);
  std::vector<int> batch_phases(static_cast<std::size_t>(schedule.batch_size));
  Eigen::MatrixXd batch_tools(schedule.batch_size, kToolCount);
  for (long it = 0; it < schedule.total_iterations; ++it) {
    const auto idx = sampler.next();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      batch_phases[r] = data.phases[idx[r]];
      batch_tools.row(static_cast<Index>(r)) = data.tools.row(static_cast<Index>(idx[r]));
    }
    const auto acts = model.network.forward(gather(inputs, idx));
    const auto tool_logits = acts.outputs[model.heads.fc_tool].matrix();
    const auto phase_logits = acts.outputs[model.heads.fc_phase].matrix();
    const Eigen::MatrixXd phase_targets = one_hot(batch_phases, kPhaseCount);
    const double lt = tool_loss(tool_logits, batch_tools);
    const double lp = phase_loss(phase_logits, phase_targets);
    if (!std::isfinite(lt) || !std::isfinite(lp)) throw TrainingDiverged(it, "finetune: non-finite loss");
    result.log.push_back({it, lt, lp, total_loss(lt, lp, weights)});

    const nn::TensorD g_tool = nn::TensorD::from_matrix(weights.tool * tool_loss_grad(tool_logits, batch_tools));
    const nn::TensorD g_phase =
        nn::TensorD::from_matrix(weights.phase * phase_loss_grad(phase_logits, phase_targets));
    const nn::GradientTap taps[] = {{model.heads.fc_tool, &g_tool}, {model.heads.fc_phase, &g_phase}};
    model.network.backward(acts, taps);
    model.network.sgd_step(schedule, it);
  }
  return result;
}

Eigen::MatrixXd Features::tool_probabilities() const {
  return tool_logits.unaryExpr([](double v) { return sigmoid(v); });
}

Features extract(const EndoNetModel& model, const nn::TensorD& inputs, Index batch) {
  if (!model.has_heads) throw std::invalid_argument("extract: network has no fc_tool/fc_phase heads");
  const Index n = inputs.rows();
  const Index f = model.heads.feature_width;
  Features out;
  out.fc7.resize(n, f);
  out.fc8.resize(n, f + kToolCount);
  out.tool_logits.resize(n, kToolCount);
  out.phase_logits.resize(n, kPhaseCount);
  for (Index begin = 0; begin < n; begin += batch) {
    const Index end = std::min(n, begin + batch);
    const auto acts = model.network.forward(model.normalizer.apply(slice(inputs, begin, end)));
    out.fc7.middleRows(begin, end - begin) = acts.outputs[model.heads.fc7].matrix();
    out.fc8.middleRows(begin, end - begin) = acts.outputs[model.heads.fc8].matrix();
    out.tool_logits.middleRows(begin, end - begin) = acts.outputs[model.heads.fc_tool].matrix();
    out.phase_logits.middleRows(begin, end - begin) = acts.outputs[model.heads.fc_phase].matrix();
  }
  return out;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogEntry>& log) {
  std::ostringstream out;
  out.precision(10);
  out << "# iteration L_T L_P L\n";
  for (const auto& e : log) out << e.iteration << ' ' << e.tool << ' ' << e.phase << ' ' << e.total << '\n';
  io::write_text_atomic(path, out.str());
}

}  // namespace endonet
