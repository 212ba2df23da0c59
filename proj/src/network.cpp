#include "endonet/network.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace endonet::nn {

namespace {

std::atomic<std::uint64_t> g_revision{1};

std::uint64_t next_revision() { return g_revision.fetch_add(1) + 1; }

using MatD = RowMatrix<double>;

struct ConvGeometry {
  Index channels, height, width;
  Index kernel, stride, padding;
  Index out_h, out_w;
  Index patch() const { return channels * kernel * kernel; }
  Index positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& in, const LayerSpec& spec) {
  ConvGeometry g{in[0], in[1], in[2], spec.kernel, spec.stride, spec.padding, 0, 0};
  g.out_h = (g.height + 2 * g.padding - g.kernel) / g.stride + 1;
  g.out_w = (g.width + 2 * g.padding - g.kernel) / g.stride + 1;
  return g;
}

// col is (patch x positions); sample is one (C, H, W) image in row-major order.
void im2col(const double* sample, const ConvGeometry& g, MatD& col) {
  col.resize(g.patch(), g.positions());
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const Index row = (c * g.kernel + ky) * g.kernel + kx;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index y = oy * g.stride + ky - g.padding;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index x = ox * g.stride + kx - g.padding;
            const bool inside = y >= 0 && y < g.height && x >= 0 && x < g.width;
            col(row, oy * g.out_w + ox) = inside ? sample[(c * g.height + y) * g.width + x] : 0.0;
          }
        }
      }
}

void col2im_add(const MatD& col, const ConvGeometry& g, double* sample) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const Index row = (c * g.kernel + ky) * g.kernel + kx;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index y = oy * g.stride + ky - g.padding;
          if (y < 0 || y >= g.height) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index x = ox * g.stride + kx - g.padding;
            if (x < 0 || x >= g.width) continue;
            sample[(c * g.height + y) * g.width + x] += col(row, oy * g.out_w + ox);
          }
        }
      }
}

Shape batched(Index n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::convolution: return "convolution";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softmax: return "softmax";
    case LayerKind::concat: return "concat";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::convolution, LayerKind::max_pool, LayerKind::dense, LayerKind::relu,
                 LayerKind::sigmoid, LayerKind::softmax, LayerKind::concat})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::convolution(std::string name, Index out_channels, Index kernel, Index stride,
                                 Index padding) {
  LayerSpec s;
  s.kind = LayerKind::convolution;
  s.name = std::move(name);
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::max_pool(std::string name, Index kernel, Index stride) {
  LayerSpec s;
  s.kind = LayerKind::max_pool;
  s.name = std::move(name);
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::dense(std::string name, Index units, double lr_multiplier) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.name = std::move(name);
  s.units = units;
  s.lr_multiplier = lr_multiplier;
  return s;
}

LayerSpec LayerSpec::relu(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::sigmoid(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::sigmoid;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::softmax(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::concat(std::string name, int source) {
  LayerSpec s;
  s.kind = LayerKind::concat;
  s.name = std::move(name);
  s.concat_source = source;
  return s;
}

double SgdSchedule::rate(long iteration) const {
  return base_rate * std::pow(decay_factor, static_cast<double>(iteration / decay_period));
}

void SgdSchedule::validate() const {
  if (!(base_rate > 0.0)) throw std::invalid_argument("sgd: base rate must be positive");
  if (!(decay_factor > 0.0 && decay_factor < 1.0))
    throw std::invalid_argument("sgd: decay factor must lie in (0,1)");
  if (decay_period <= 0) throw std::invalid_argument("sgd: decay period must be positive");
  if (total_iterations < 0) throw std::invalid_argument("sgd: total iterations must be non-negative");
  if (batch_size <= 0) throw std::invalid_argument("sgd: batch size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must lie in [0,1)");
}

void to_json(nlohmann::json& j, const SgdSchedule& s) {
  j = {{"base_rate", s.base_rate},         {"decay_factor", s.decay_factor},
       {"decay_period", s.decay_period},   {"total_iterations", s.total_iterations},
       {"batch_size", s.batch_size},       {"momentum", s.momentum}};
}

void from_json(const nlohmann::json& j, SgdSchedule& s) {
  s.base_rate = j.value("base_rate", s.base_rate);
  s.decay_factor = j.value("decay_factor", s.decay_factor);
  s.decay_period = j.value("decay_period", s.decay_period);
  s.total_iterations = j.value("total_iterations", s.total_iterations);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.momentum = j.value("momentum", s.momentum);
}

Network::Network(Shape input_shape) : input_shape_(std::move(input_shape)), revision_(next_revision()) {
  if (input_shape_.empty()) throw std::invalid_argument("network input shape must have rank >= 1");
  for (auto e : input_shape_)
    if (e <= 0) throw std::invalid_argument("network input extents must be positive");
}

Shape Network::infer_shape(const LayerSpec& spec, std::size_t index) const {
  const int li = static_cast<int>(index);
  const Shape& in = index == 0 ? input_shape_ : output_shapes_[index - 1];
  if (!(spec.lr_multiplier > 0.0)) throw ShapeError(li, "learning-rate multiplier must be positive");
  switch (spec.kind) {
    case LayerKind::convolution:
    case LayerKind::max_pool: {
      if (in.size() != 3) throw ShapeError(li, "expects (C,H,W) input, got " + shape_string(in));
      if (spec.kernel <= 0 || spec.stride <= 0 || spec.padding < 0)
        throw ShapeError(li, "invalid kernel/stride/padding");
      if (spec.kind == LayerKind::convolution && spec.out_channels <= 0)
        throw ShapeError(li, "convolution needs positive output channels");
      const Index pad = spec.kind == LayerKind::convolution ? spec.padding : 0;
      if (in[1] + 2 * pad < spec.kernel || in[2] + 2 * pad < spec.kernel)
        throw ShapeError(li, "kernel larger than input " + shape_string(in));
      const Index oh = (in[1] + 2 * pad - spec.kernel) / spec.stride + 1;
      const Index ow = (in[2] + 2 * pad - spec.kernel) / spec.stride + 1;
      return {spec.kind == LayerKind::convolution ? spec.out_channels : in[0], oh, ow};
    }
    case LayerKind::dense:
      if (spec.units <= 0) throw ShapeError(li, "dense layer needs positive units");
      return {spec.units};
    case LayerKind::relu:
    case LayerKind::sigmoid:
      return in;
    case LayerKind::softmax:
      return {shape_size(in)};
    case LayerKind::concat: {
      if (spec.concat_source < -1 || spec.concat_source >= li)
        throw ShapeError(li, "concat source must precede the layer");
      const Shape& src = spec.concat_source < 0 ? input_shape_
                                                : output_shapes_[static_cast<std::size_t>(spec.concat_source)];
      return {shape_size(src) + shape_size(in)};
    }
  }
  throw ShapeError(li, "unknown layer kind");
}

void Network::append(const LayerSpec& spec, std::mt19937_64& rng) {
  if (input_shape_.empty()) throw std::logic_error("network has no input shape");
  const std::size_t index = layers_.size();
  Shape out = infer_shape(spec, index);
  const Shape& in = index == 0 ? input_shape_ : output_shapes_[index - 1];

  std::vector<TensorD> params;
  if (spec.kind == LayerKind::dense) {
    const Index fan_in = shape_size(in);
    params.emplace_back(Shape{spec.units, fan_in});
    params.emplace_back(Shape{spec.units});
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + spec.units));
    std::uniform_real_distribution<double> u(-s, s);
    for (Index i = 0; i < params[0].size(); ++i) params[0].data()[i] = u(rng);
  } else if (spec.kind == LayerKind::convolution) {
    const Index k2 = spec.kernel * spec.kernel;
    params.emplace_back(Shape{spec.out_channels, in[0], spec.kernel, spec.kernel});
    params.emplace_back(Shape{spec.out_channels});
    const double s = std::sqrt(6.0 / static_cast<double>(in[0] * k2 + spec.out_channels * k2));
    std::uniform_real_distribution<double> u(-s, s);
    for (Index i = 0; i < params[0].size(); ++i) params[0].data()[i] = u(rng);
  }
  std::vector<TensorD> grads;
  for (const auto& p : params) grads.emplace_back(p.shape());

  layers_.push_back(spec);
  output_shapes_.push_back(std::move(out));
  velocity_.push_back(grads);
  grads_.push_back(std::move(grads));
  params_.push_back(std::move(params));
  revision_ = next_revision();
}

void Network::truncate(std::size_t n_layers) {
  if (n_layers > layers_.size()) throw std::out_of_range("truncate beyond layer count");
  layers_.resize(n_layers);
  output_shapes_.resize(n_layers);
  params_.resize(n_layers);
  grads_.resize(n_layers);
  velocity_.resize(n_layers);
  revision_ = next_revision();
}

std::size_t Network::find_layer(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == name) return i;
  throw std::out_of_range("no layer named '" + name + "'");
}

Index Network::parameter_count() const {
  Index n = 0;
  for (const auto& ps : params_)
    for (const auto& p : ps) n += p.size();
  return n;
}

TensorD Network::layer_forward(std::size_t i, const TensorD& in, const Activations& acts) const {
  const LayerSpec& spec = layers_[i];
  const Index n = in.rows();
  const Shape& in_shape = i == 0 ? input_shape_ : output_shapes_[i - 1];
  TensorD out(batched(n, output_shapes_[i]));

  switch (spec.kind) {
    case LayerKind::dense: {
      const auto& w = params_[i][0];
      const auto& b = params_[i][1];
      out.matrix().noalias() = in.matrix() * w.matrix().transpose();
      out.matrix().rowwise() += b.data().transpose();
      break;
    }
    case LayerKind::convolution: {
      const ConvGeometry g = conv_geometry(in_shape, spec);
      const auto& w = params_[i][0];
      const auto& b = params_[i][1];
      Eigen::Map<const MatD> wm(w.data().data(), spec.out_channels, g.patch());
      MatD col;
      const Index in_stride = shape_size(in_shape);
      const Index out_stride = spec.out_channels * g.positions();
      for (Index s = 0; s < n; ++s) {
        im2col(in.data().data() + s * in_stride, g, col);
        Eigen::Map<MatD> o(out.data().data() + s * out_stride, spec.out_channels, g.positions());
        o.noalias() = wm * col;
        o.colwise() += b.data();
      }
      break;
    }
    case LayerKind::max_pool: {
      const Index c = in_shape[0], h = in_shape[1], w = in_shape[2];
      const Index oh = output_shapes_[i][1], ow = output_shapes_[i][2];
      const double* src = in.data().data();
      double* dst = out.data().data();
      for (Index s = 0; s < n; ++s)
        for (Index ch = 0; ch < c; ++ch) {
          const double* plane = src + ((s * c + ch) * h) * w;
          for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox) {
              double m = -std::numeric_limits<double>::infinity();
              for (Index ky = 0; ky < spec.kernel; ++ky)
                for (Index kx = 0; kx < spec.kernel; ++kx)
                  m = std::max(m, plane[(oy * spec.stride + ky) * w + ox * spec.stride + kx]);
              dst[((s * c + ch) * oh + oy) * ow + ox] = m;
            }
        }
      break;
    }
    case LayerKind::relu:
      out.data() = in.data().cwiseMax(0.0);
      break;
    case LayerKind::sigmoid:
      out.data() = in.data().unaryExpr([](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                                                     : std::exp(x) / (1.0 + std::exp(x)); });
      break;
    case LayerKind::softmax: {
      auto x = in.matrix();
      auto y = out.matrix();
      for (Index r = 0; r < n; ++r) {
        const double m = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
      }
      break;
    }
    case LayerKind::concat: {
      const TensorD& src = spec.concat_source < 0 ? acts.input
                                                  : acts.outputs[static_cast<std::size_t>(spec.concat_source)];
      const Index a = src.cols();
      out.matrix().leftCols(a) = src.matrix();
      out.matrix().rightCols(in.cols()) = in.matrix();
      break;
    }
  }
  return out;
}

Activations Network::forward(const TensorD& input) const {
  if (input.rank() != static_cast<Index>(input_shape_.size()) + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), input.shape().begin() + 1))
    throw ShapeError(0, "input shape " + shape_string(input.shape()) + " does not match declared per-sample shape " +
                            shape_string(input_shape_));
  Activations acts;
  acts.input = input;
  acts.revision = revision_;
  acts.outputs.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const TensorD& in = i == 0 ? acts.input : acts.outputs[i - 1];
    acts.outputs.push_back(layer_forward(i, in, acts));
  }
  return acts;
}

void Network::backward(const Activations& acts, const TensorD& output_grad) {
  if (layers_.empty()) throw std::logic_error("backward on an empty network");
  const GradientTap tap{layers_.size() - 1, &output_grad};
  backward(acts, std::span<const GradientTap>(&tap, 1));
}

void Network::backward(const Activations& acts, std::span<const GradientTap> taps) {
  if (acts.revision != revision_ || acts.outputs.size() != layers_.size())
    throw std::invalid_argument("backward: activations are stale or come from a different network");
  const Index n = acts.input.rows();
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (acts.outputs[i].shape() != batched(n, output_shapes_[i]))
      throw ShapeError(static_cast<int>(i), "activation shape mismatch in backward");

  // Gradient w.r.t. each layer output; index 0 holds the network input.
  std::vector<TensorD> dout(layers_.size() + 1);
  auto slot = [&](int layer) -> TensorD& {
    auto& t = dout[static_cast<std::size_t>(layer + 1)];
    if (t.empty()) {
      const TensorD& ref = layer < 0 ? acts.input : acts.outputs[static_cast<std::size_t>(layer)];
      t = TensorD(ref.shape());
    }
    return t;
  };
  for (const auto& tap : taps) {
    if (tap.layer >= layers_.size()) throw std::out_of_range("gradient tap beyond last layer");
    TensorD& g = slot(static_cast<int>(tap.layer));
    if (tap.grad->shape() != g.shape())
      throw ShapeError(static_cast<int>(tap.layer), "loss gradient shape " + shape_string(tap.grad->shape()) +
                                                        " does not match output " + shape_string(g.shape()));
    g.data() += tap.grad->data();
  }

  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    TensorD& g_out = dout[ii + 1];
    if (g_out.empty()) continue;
    const LayerSpec& spec = layers_[ii];
    const TensorD& in = ii == 0 ? acts.input : acts.outputs[ii - 1];
    const TensorD& out = acts.outputs[ii];
    const Shape& in_shape = ii == 0 ? input_shape_ : output_shapes_[ii - 1];
    const int prev = static_cast<int>(ii) - 1;

    switch (spec.kind) {
      case LayerKind::dense: {
        grads_[ii][0].matrix().noalias() += g_out.matrix().transpose() * in.matrix();
        grads_[ii][1].data() += g_out.matrix().colwise().sum().transpose();
        TensorD& g_in = slot(prev);
        g_in.matrix().noalias() += g_out.matrix() * params_[ii][0].matrix();
        break;
      }
      case LayerKind::convolution: {
        const ConvGeometry geo = conv_geometry(in_shape, spec);
        Eigen::Map<const MatD> wm(params_[ii][0].data().data(), spec.out_channels, geo.patch());
        Eigen::Map<MatD> gw(grads_[ii][0].data().data(), spec.out_channels, geo.patch());
        TensorD& g_in = slot(prev);
        const Index in_stride = shape_size(in_shape);
        const Index out_stride = spec.out_channels * geo.positions();
        MatD col, dcol;
        for (Index s = 0; s < n; ++s) {
          im2col(in.data().data() + s * in_stride, geo, col);
          Eigen::Map<const MatD> go(g_out.data().data() + s * out_stride, spec.out_channels, geo.positions());
          gw.noalias() += go * col.transpose();
          grads_[ii][1].data() += go.rowwise().sum();
          dcol.noalias() = wm.transpose() * go;
          col2im_add(dcol, geo, g_in.data().data() + s * in_stride);
        }
        break;
      }
      case LayerKind::max_pool: {
        TensorD& g_in = slot(prev);
        const Index c = in_shape[0], h = in_shape[1], w = in_shape[2];
        const Index oh = output_shapes_[ii][1], ow = output_shapes_[ii][2];
        for (Index s = 0; s < n; ++s)
          for (Index ch = 0; ch < c; ++ch) {
            const Index base = ((s * c + ch) * h) * w;
            for (Index oy = 0; oy < oh; ++oy)
              for (Index ox = 0; ox < ow; ++ox) {
                Index arg = -1;
                double m = -std::numeric_limits<double>::infinity();
                for (Index ky = 0; ky < spec.kernel; ++ky)
                  for (Index kx = 0; kx < spec.kernel; ++kx) {
                    const Index idx = base + (oy * spec.stride + ky) * w + ox * spec.stride + kx;
                    if (in.data()[idx] > m) {
                      m = in.data()[idx];
                      arg = idx;
                    }
                  }
                g_in.data()[arg] += g_out.data()[((s * c + ch) * oh + oy) * ow + ox];
              }
          }
        break;
      }
      case LayerKind::relu: {
        TensorD& g_in = slot(prev);
        g_in.data().array() += (out.data().array() > 0.0).cast<double>() * g_out.data().array();
        break;
      }
      case LayerKind::sigmoid: {
        TensorD& g_in = slot(prev);
        g_in.data().array() += out.data().array() * (1.0 - out.data().array()) * g_out.data().array();
        break;
      }
      case LayerKind::softmax: {
        TensorD& g_in = slot(prev);
        auto y = out.matrix();
        auto g = g_out.matrix();
        auto gi = g_in.matrix();
        for (Index r = 0; r < n; ++r) {
          const double dot = y.row(r).dot(g.row(r));
          gi.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
        }
        break;
      }
      case LayerKind::concat: {
        TensorD& g_src = slot(spec.concat_source);
        const Index a = g_src.cols();
        g_src.matrix() += g_out.matrix().leftCols(a);
        TensorD& g_in = slot(prev);
        g_in.matrix() += g_out.matrix().rightCols(g_out.cols() - a);
        break;
      }
    }
  }
}

void Network::sgd_step(const SgdSchedule& schedule, long iteration) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (std::size_t k = 0; k < grads_[i].size(); ++k)
      if (!grads_[i][k].all_finite()) {
        std::ostringstream msg;
        msg << "sgd_step: non-finite gradient in layer " << i << " ('" << layers_[i].name << "'), "
            << (k == 0 ? "weights" : "bias") << ", iteration " << iteration;
        throw std::runtime_error(msg.str());
      }
  const double base = schedule.rate(iteration);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const double rate = base * layers_[i].lr_multiplier;
    for (std::size_t k = 0; k < params_[i].size(); ++k) {
      auto& p = params_[i][k].data();
      auto& g = grads_[i][k].data();
      if (schedule.momentum > 0.0) {
        auto& v = velocity_[i][k].data();
        v = schedule.momentum * v - rate * g;
        p += v;
      } else {
        p -= rate * g;
      }
      g.setZero();
    }
  }
  revision_ = next_revision();
}

void Network::zero_grad() {
  for (auto& gs : grads_)
    for (auto& g : gs) g.set_zero();
}

namespace {

nlohmann::json tensor_json(const TensorD& t) {
  return {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

TensorD tensor_from_json(const nlohmann::json& j) {
  Shape shape = j.at("shape").get<Shape>();
  auto values = j.at("data").get<std::vector<double>>();
  TensorD::Storage data = Eigen::Map<TensorD::Storage>(values.data(), static_cast<Index>(values.size()));
  return TensorD(std::move(shape), std::move(data));
}

}  // namespace

nlohmann::json Network::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& s = layers_[i];
    nlohmann::json p = nlohmann::json::array();
    for (const auto& t : params_[i]) p.push_back(tensor_json(t));
    layers.push_back({{"kind", to_string(s.kind)},
                      {"name", s.name},
                      {"out_channels", s.out_channels},
                      {"kernel", s.kernel},
                      {"stride", s.stride},
                      {"padding", s.padding},
                      {"units", s.units},
                      {"concat_source", s.concat_source},
                      {"lr_multiplier", s.lr_multiplier},
                      {"output_shape", output_shapes_[i]},
                      {"params", p}});
  }
  return {{"input_shape", input_shape_}, {"layers", layers}};
}

Network Network::from_json(const nlohmann::json& j) {
  Network net(j.at("input_shape").get<Shape>());
  std::mt19937_64 unused(0);
  for (const auto& l : j.at("layers")) {
    LayerSpec s;
    s.kind = layer_kind_from_string(l.at("kind").get<std::string>());
    s.name = l.at("name").get<std::string>();
    s.out_channels = l.at("out_channels").get<Index>();
    s.kernel = l.at("kernel").get<Index>();
    s.stride = l.at("stride").get<Index>();
    s.padding = l.at("padding").get<Index>();
    s.units = l.at("units").get<Index>();
    s.concat_source = l.at("concat_source").get<int>();
    s.lr_multiplier = l.at("lr_multiplier").get<double>();
    net.append(s, unused);
    const std::size_t i = net.layer_count() - 1;
    if (l.at("output_shape").get<Shape>() != net.output_shapes_[i])
      throw std::runtime_error("stored output shape of layer " + std::to_string(i) + " is inconsistent");
    const auto& p = l.at("params");
    if (p.size() != net.params_[i].size())
      throw std::runtime_error("parameter count mismatch in layer " + std::to_string(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      TensorD t = tensor_from_json(p[k]);
      if (t.shape() != net.params_[i][k].shape())
        throw std::runtime_error("parameter shape mismatch in layer " + std::to_string(i));
      net.params_[i][k] = std::move(t);
    }
  }
  net.revision_ = next_revision();
  return net;
}

}  // namespace endonet::nn
