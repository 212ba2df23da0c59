#pragma once

#include "endonet/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace endonet::nn {

enum class LayerKind { convolution, max_pool, dense, relu, sigmoid, softmax, concat };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Declarative description of one layer. Only the fields relevant to `kind`
/// are read; the named constructors fill them consistently.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  Index out_channels = 0;  // convolution
  Index kernel = 0;        // convolution, max_pool
  Index stride = 1;        // convolution, max_pool
  Index padding = 0;       // convolution
  Index units = 0;         // dense
  int concat_source = -1;  // concat: layer whose output is placed first; -1 is the network input
  double lr_multiplier = 1.0;

  static LayerSpec convolution(std::string name, Index out_channels, Index kernel, Index stride = 1,
                               Index padding = 0);
  static LayerSpec max_pool(std::string name, Index kernel, Index stride);
  static LayerSpec dense(std::string name, Index units, double lr_multiplier = 1.0);
  static LayerSpec relu(std::string name);
  static LayerSpec sigmoid(std::string name);
  static LayerSpec softmax(std::string name);
  static LayerSpec concat(std::string name, int source);

  bool has_parameters() const { return kind == LayerKind::convolution || kind == LayerKind::dense; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Step-decay learning rate: base * factor^floor(iteration / period).
struct SgdSchedule {
  double base_rate = 1e-3;
  double decay_factor = 0.1;
  long decay_period = 20000;
  long total_iterations = 50000;
  Index batch_size = 50;
  double momentum = 0.0;

  double rate(long iteration) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const SgdSchedule& s);
void from_json(const nlohmann::json& j, SgdSchedule& s);

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(int layer, const std::string& what)
      : std::invalid_argument("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

/// Result of a forward pass; tagged with the network revision that produced it.
struct Activations {
  TensorD input;
  std::vector<TensorD> outputs;  // one per layer
  std::uint64_t revision = 0;
};

/// Gradient of the loss with respect to the output of layer `layer`.
struct GradientTap {
  std::size_t layer;
  const TensorD* grad;
};

/// Sequential network with concat skip connections. Holds parameters with
/// matching gradient accumulators.
class Network {
 public:
  Network() = default;
  explicit Network(Shape input_shape);

  /// Appends a layer and initializes its parameters with Glorot-uniform
  /// weights and zero biases drawn from `rng`.
  void append(const LayerSpec& spec, std::mt19937_64& rng);
  /// Drops every layer from index `n_layers` on.
  void truncate(std::size_t n_layers);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t layer_count() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  /// Per-sample output shape of layer i.
  const Shape& output_shape(std::size_t i) const { return output_shapes_.at(i); }
  std::size_t find_layer(const std::string& name) const;

  std::vector<TensorD>& params(std::size_t i) { return params_.at(i); }
  const std::vector<TensorD>& params(std::size_t i) const { return params_.at(i); }
  std::vector<TensorD>& grads(std::size_t i) { return grads_.at(i); }
  const std::vector<TensorD>& grads(std::size_t i) const { return grads_.at(i); }
  Index parameter_count() const;

  Activations forward(const TensorD& input) const;

  /// Accumulates parameter gradients. Each tap injects dLoss/dOutput for one
  /// layer; contributions flow back through every earlier layer.
  void backward(const Activations& acts, std::span<const GradientTap> taps);
  void backward(const Activations& acts, const TensorD& output_grad);

  /// Applies one update and clears the gradient accumulators.
  void sgd_step(const SgdSchedule& schedule, long iteration);
  void zero_grad();

  std::uint64_t revision() const { return revision_; }

  friend bool operator==(const Network& a, const Network& b) {
    return a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_ && a.params_ == b.params_;
  }

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);

 private:
  Shape infer_shape(const LayerSpec& spec, std::size_t index) const;
  TensorD layer_forward(std::size_t i, const TensorD& in, const Activations& acts) const;

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> output_shapes_;
  std::vector<std::vector<TensorD>> params_;
  std::vector<std::vector<TensorD>> grads_;
  std::vector<std::vector<TensorD>> velocity_;
  std::uint64_t revision_ = 1;
};

}  // namespace endonet::nn
