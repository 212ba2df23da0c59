#include "oracles.hpp"

#include "endonet/container.hpp"
#include "endonet/network.hpp"

#include <doctest.h>

using namespace endonet;
using nn::LayerSpec;
using nn::Network;
using nn::Shape;
using nn::TensorD;

namespace {

TensorD random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

Shape batched(Eigen::Index n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Scalar loss sum(c .* output) and its gradient c.
double linear_loss(const Network& net, const TensorD& x, const TensorD& c) {
  const auto acts = net.forward(x);
  return acts.outputs.back().data().dot(c.data());
}

double max_gradient_error(Network& net, const TensorD& x, std::mt19937_64& rng, int coordinates) {
  const auto acts = net.forward(x);
  const TensorD c = random_tensor(acts.outputs.back().shape(), rng);
  net.zero_grad();
  net.backward(acts, c);
  double worst = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    for (std::size_t k = 0; k < net.params(l).size(); ++k) slots.emplace_back(l, k);
  std::uniform_int_distribution<std::size_t> pick_slot(0, slots.size() - 1);
  for (int n = 0; n < coordinates; ++n) {
    const auto [l, k] = slots[pick_slot(rng)];
    auto& p = net.params(l)[k];
    std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
    const Eigen::Index i = pick(rng);
    const double numeric = oracle::central_difference([&] { return linear_loss(net, x, c); }, p.data()[i]);
    worst = std::max(worst, oracle::relative_error(net.grads(l)[k].data()[i], numeric, 1e-6));
  }
  return worst;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  std::mt19937_64 rng(1);
  Network net(Shape{7});
  net.append(LayerSpec::softmax("sm"), rng);
  const auto out = net.forward(TensorD(Shape{1, 7})).outputs.back();
  for (int p = 0; p < 7; ++p) CHECK(out.data()[p] == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
}

TEST_CASE("sigmoid of zero is one half") {
  std::mt19937_64 rng(1);
  Network net(Shape{3});
  net.append(LayerSpec::sigmoid("s"), rng);
  const auto out = net.forward(TensorD(Shape{2, 3})).outputs.back();
  for (Eigen::Index i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.5);
}

TEST_CASE("dense layer with identity weights and zero bias is the identity") {
  std::mt19937_64 rng(2);
  Network net(Shape{4});
  net.append(LayerSpec::dense("fc", 4), rng);
  net.params(0)[0].matrix().setIdentity();
  net.params(0)[1].set_zero();
  const TensorD x = random_tensor({3, 4}, rng);
  CHECK(net.forward(x).outputs.back() == x);
}

TEST_CASE("relu outputs are non-negative and softmax rows sum to one") {
  std::mt19937_64 rng(3);
  Network net(Shape{6});
  net.append(LayerSpec::dense("fc1", 9), rng);
  net.append(LayerSpec::relu("r"), rng);
  net.append(LayerSpec::dense("fc2", 5), rng);
  net.append(LayerSpec::softmax("sm"), rng);
  for (int trial = 0; trial < 50; ++trial) {
    const auto acts = net.forward(random_tensor({8, 6}, rng, 5.0));
    CHECK(acts.outputs[1].data().minCoeff() >= 0.0);
    const auto& sm = acts.outputs[3];
    for (Eigen::Index i = 0; i < sm.rows(); ++i) {
      CHECK(std::abs(sm.matrix().row(i).sum() - 1.0) < 1e-9);
      CHECK(sm.matrix().row(i).minCoeff() >= 0.0);
      CHECK(sm.matrix().row(i).maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("forward rejects a mismatched input with the offending layer index") {
  std::mt19937_64 rng(4);
  Network net(Shape{4});
  net.append(LayerSpec::dense("fc", 2), rng);
  CHECK_THROWS_AS(net.forward(TensorD(Shape{2, 5})), nn::ShapeError);
  try {
    net.forward(TensorD(Shape{2, 5}));
  } catch (const nn::ShapeError& e) {
    CHECK(e.layer() == 0);
  }
  Network conv(Shape{3, 8, 8});
  CHECK_THROWS_AS(conv.append(LayerSpec::convolution("c", 4, 9), rng), nn::ShapeError);
  try {
    Network bad(Shape{3, 8, 8});
    bad.append(LayerSpec::relu("r"), rng);
    bad.append(LayerSpec::convolution("c", 4, 9), rng);
  } catch (const nn::ShapeError& e) {
    CHECK(e.layer() == 1);
  }
}

TEST_CASE("zero loss gradient leaves every parameter gradient at zero") {
  std::mt19937_64 rng(5);
  Network net(Shape{2, 6, 6});
  net.append(LayerSpec::convolution("c", 3, 3), rng);
  net.append(LayerSpec::relu("r"), rng);
  net.append(LayerSpec::max_pool("p", 2, 2), rng);
  net.append(LayerSpec::dense("fc", 4), rng);
  const auto acts = net.forward(random_tensor({2, 2, 6, 6}, rng));
  net.backward(acts, TensorD(acts.outputs.back().shape()));
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    for (const auto& g : net.grads(l)) CHECK(g.data().isZero(0.0));
}

TEST_CASE("single dense layer with squared error has gradient residual times input") {
  std::mt19937_64 rng(6);
  Network net(Shape{3});
  net.append(LayerSpec::dense("fc", 2), rng);
  const TensorD x = random_tensor({1, 3}, rng);
  const Eigen::Vector2d target(0.3, -1.2);
  const auto acts = net.forward(x);
  // L = 0.5 |y - target|^2, dL/dy = y - target
  const Eigen::Vector2d residual = acts.outputs[0].data() - target;
  net.backward(acts, TensorD::from_matrix(residual.transpose()));
  const Eigen::MatrixXd x_row = x.matrix();
  const Eigen::MatrixXd expected = residual * x_row;
  CHECK((net.grads(0)[0].matrix() - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((net.grads(0)[1].data() - residual).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("backward rejects stale activations") {
  std::mt19937_64 rng(7);
  Network net(Shape{3});
  net.append(LayerSpec::dense("fc", 2), rng);
  const auto acts = net.forward(random_tensor({2, 3}, rng));
  net.backward(acts, TensorD(Shape{2, 2}));
  net.sgd_step(nn::SgdSchedule{}, 0);
  CHECK_THROWS_AS(net.backward(acts, TensorD(Shape{2, 2})), std::invalid_argument);
}

TEST_CASE("finite differences match analytic gradients on random small networks") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Network net(Shape{2, 7, 7});
    net.append(LayerSpec::convolution("c1", 3, 3, 1, 1), rng);
    net.append(LayerSpec::relu("r1"), rng);
    net.append(LayerSpec::max_pool("p", 2, 2), rng);
    net.append(LayerSpec::dense("fc1", 6), rng);
    net.append(LayerSpec::sigmoid("s"), rng);
    net.append(LayerSpec::dense("fc2", 3), rng);
    net.append(LayerSpec::concat("cat", 4), rng);
    net.append(LayerSpec::dense("fc3", 4), rng);
    net.append(LayerSpec::softmax("sm"), rng);
    REQUIRE(net.parameter_count() <= 5000);
    CHECK(max_gradient_error(net, random_tensor({3, 2, 7, 7}, rng), rng, 100) < 1e-4);
  }
}

TEST_CASE("random layer sequences chain their declared shapes") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> kind(0, 4);
  std::uniform_int_distribution<Eigen::Index> width(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    Network net(Shape{width(rng)});
    for (int l = 0; l < 6; ++l) {
      const std::string name = "l" + std::to_string(l);
      switch (kind(rng)) {
        case 0: net.append(LayerSpec::dense(name, width(rng)), rng); break;
        case 1: net.append(LayerSpec::relu(name), rng); break;
        case 2: net.append(LayerSpec::sigmoid(name), rng); break;
        case 3: net.append(LayerSpec::softmax(name), rng); break;
        default: {
          std::uniform_int_distribution<int> src(-1, static_cast<int>(net.layer_count()) - 1);
          net.append(LayerSpec::concat(name, src(rng)), rng);
        }
      }
    }
    const auto acts = net.forward(random_tensor(batched(2, net.input_shape()), rng));
    for (std::size_t l = 0; l < net.layer_count(); ++l) CHECK(acts.outputs[l].shape() == batched(2, net.output_shape(l)));
  }
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<Eigen::Index> side(6, 12), ch(1, 4), k(1, 3);
    Network net(Shape{ch(rng), side(rng), side(rng)});
    net.append(LayerSpec::convolution("c", ch(rng), k(rng), k(rng), k(rng) - 1), rng);
    net.append(LayerSpec::relu("r"), rng);
    net.append(LayerSpec::max_pool("p", 2, 1), rng);
    net.append(LayerSpec::dense("fc", width(rng)), rng);
    const auto acts = net.forward(random_tensor(batched(3, net.input_shape()), rng));
    for (std::size_t l = 0; l < net.layer_count(); ++l) CHECK(acts.outputs[l].shape() == batched(3, net.output_shape(l)));
  }
}

TEST_CASE("learning-rate schedule") {
  // Base 1e-3, divided by 10 every 20K iterations; heads at 10x.
  nn::SgdSchedule s{1e-3, 0.1, 20000, 50000, 50, 0.0};
  CHECK(s.rate(25000) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.rate(0) == 1e-3);
  CHECK(s.rate(19999) == 1e-3);
  CHECK(s.rate(40000) == doctest::Approx(1e-5).epsilon(1e-12));

  std::mt19937_64 rng(10);
  Network net(Shape{2});
  net.append(LayerSpec::dense("body", 2), rng);
  net.append(LayerSpec::dense("head", 1, 10.0), rng);
  const auto before = net.params(1)[1].data()(0);
  const auto acts = net.forward(random_tensor({1, 2}, rng));
  net.backward(acts, TensorD::from_matrix(Eigen::MatrixXd::Ones(1, 1)));
  net.sgd_step(s, 0);
  // d(out)/d(bias) = 1, so the head bias moves by exactly its rate.
  CHECK(before - net.params(1)[1].data()(0) == doctest::Approx(1e-2).epsilon(1e-12));
}

TEST_CASE("sgd step with zero gradients leaves parameters unchanged and clears gradients") {
  std::mt19937_64 rng(11);
  Network net(Shape{4});
  net.append(LayerSpec::dense("fc", 3), rng);
  const Network before = net;
  net.sgd_step(nn::SgdSchedule{}, 0);
  CHECK(net == before);

  const auto acts = net.forward(random_tensor({2, 4}, rng));
  net.backward(acts, random_tensor({2, 3}, rng));
  net.sgd_step(nn::SgdSchedule{}, 1);
  for (const auto& g : net.grads(0)) CHECK(g.data().isZero(0.0));
}

TEST_CASE("sgd step aborts on a non-finite gradient") {
  std::mt19937_64 rng(12);
  Network net(Shape{2});
  net.append(LayerSpec::dense("fc", 1), rng);
  net.grads(0)[0].data()(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(net.sgd_step(nn::SgdSchedule{}, 3), doctest::Contains("non-finite gradient"), std::runtime_error);
}

TEST_CASE("schedule and layer validation") {
  CHECK_THROWS(nn::SgdSchedule{0.0, 0.1, 10, 10, 1, 0.0}.validate());
  CHECK_THROWS(nn::SgdSchedule{1e-3, 1.0, 10, 10, 1, 0.0}.validate());
  CHECK_THROWS(nn::SgdSchedule{1e-3, 0.1, 0, 10, 1, 0.0}.validate());
  CHECK_THROWS(nn::SgdSchedule{1e-3, 0.1, 10, 10, 0, 0.0}.validate());
  std::mt19937_64 rng(13);
  Network net(Shape{2});
  CHECK_THROWS_AS(net.append(LayerSpec::dense("fc", 2, 0.0), rng), nn::ShapeError);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  auto train = [] {
    std::mt19937_64 rng(14);
    Network net(Shape{5});
    net.append(LayerSpec::dense("fc1", 8), rng);
    net.append(LayerSpec::relu("r"), rng);
    net.append(LayerSpec::dense("fc2", 2), rng);
    nn::SgdSchedule s{1e-2, 0.5, 10, 30, 4, 0.9};
    for (long it = 0; it < s.total_iterations; ++it) {
      const auto acts = net.forward(random_tensor({4, 5}, rng));
      net.backward(acts, acts.outputs.back());
      net.sgd_step(s, it);
    }
    return net;
  };
  CHECK(train() == train());
}

TEST_CASE("network serialization round-trips and the container detects corruption") {
  std::mt19937_64 rng(15);
  Network net(Shape{1, 5, 5});
  net.append(LayerSpec::convolution("c", 2, 3), rng);
  net.append(LayerSpec::relu("r"), rng);
  net.append(LayerSpec::dense("fc", 3, 10.0), rng);
  CHECK(Network::from_json(net.to_json()) == net);

  const auto dir = oracle::scratch_dir("network_container");
  io::write_container(dir / "net.model", "network", net.to_json());
  CHECK(Network::from_json(io::read_container(dir / "net.model", "network")) == net);
  CHECK_THROWS_AS(io::read_container(dir / "net.model", "svm"), io::ContainerError);

  std::string text = io::read_text(dir / "net.model");
  text[text.size() / 2] = text[text.size() / 2] == '1' ? '2' : '1';
  io::write_text_atomic(dir / "bad.model", text);
  CHECK_THROWS_AS(io::read_container(dir / "bad.model", "network"), io::ContainerError);

  std::string versioned = io::read_text(dir / "net.model");
  versioned.replace(versioned.find(" 1 "), 3, " 9 ");
  io::write_text_atomic(dir / "future.model", versioned);
  CHECK_THROWS_AS(io::read_container(dir / "future.model", "network"), io::ContainerError);
}
