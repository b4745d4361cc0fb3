#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ocp/diff/gradcheck.hpp"
#include "ocp/diff/graph.hpp"
#include "ocp/diff/params.hpp"
#include "gradcases.hpp"

using namespace ocp::diff;
using ocp::testing::primitive_cases;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Tensor run_unary(OpKind kind, const Tensor& x) {
  Graph g;
  const NodeId in = g.input("x");
  NodeId out{};
  switch (kind) {
    case OpKind::Softmax: out = g.softmax(in); break;
    case OpKind::Relu: out = g.relu(in); break;
    default: throw std::logic_error("unsupported");
  }
  Bindings b;
  b.bind("x", x);
  return g.evaluate(b, out);
}

}  // namespace

TEST(Softmax, EqualLogitsGiveUniform) {
  const Tensor y = run_unary(OpKind::Softmax, Tensor::row({0, 0, 0}));
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  const Tensor a = run_unary(OpKind::Softmax, Tensor::row({1, 2, 3}));
  const Tensor b = run_unary(OpKind::Softmax, Tensor::row({11, 12, 13}));
  EXPECT_LT(max_abs_diff(a, b), 1e-15);
}

TEST(Softmax, NormalizedAndOrderPreservingOnRandomInputs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor z = random_tensor({1, 17}, rng, -30.0, 30.0);
    const Tensor y = run_unary(OpKind::Softmax, z);
    double s = 0.0;
    for (double v : y.values()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);

    Tensor shifted = z;
    const double c = std::uniform_real_distribution<double>(-100, 100)(rng);
    for (auto& v : shifted.values()) v += c;
    const Tensor ys = run_unary(OpKind::Softmax, shifted);
    std::vector<std::size_t> ia(17), ib(17);
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::stable_sort(ia.begin(), ia.end(), [&](auto i, auto j) { return y[i] > y[j]; });
    std::stable_sort(ib.begin(), ib.end(), [&](auto i, auto j) { return ys[i] > ys[j]; });
    EXPECT_EQ(ia, ib);
  }
}

TEST(Conv2d, OnesKernelOverOnesImageSumsToNine) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId w = g.input("w");
  const NodeId b = g.input("b");
  const NodeId y = g.conv2d(x, w, b, 1, 0);
  const Tensor xs({1, 3, 3}, 1.0), ws({1, 1, 3, 3}, 1.0), bs({1}, 0.0);
  Bindings bind;
  bind.bind("x", xs).bind("w", ws).bind("b", bs);
  const Tensor& out = g.evaluate(bind, y);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0], 9.0);
}

TEST(Conv2d, StridePaddingShapeAndDirectSum) {
  // brute-force convolution oracle
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 7, 6}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  Graph g;
  const NodeId y = g.conv2d(g.input("x"), g.input("w"), g.input("b"), 2, 1);
  Bindings bind;
  bind.bind("x", x).bind("w", w).bind("b", b);
  const Tensor& out = g.evaluate(bind, y);
  ASSERT_EQ(out.shape(), (Shape{3, 4, 3}));
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t oy = 0; oy < 4; ++oy) {
      for (std::size_t ox = 0; ox < 3; ++ox) {
        double s = b[o];
        for (std::size_t c = 0; c < 2; ++c) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(oy * 2 + ky) - 1, ix = static_cast<long>(ox * 2 + kx) - 1;
              if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
              s += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x[(c * 7 + static_cast<std::size_t>(iy)) * 6 + static_cast<std::size_t>(ix)];
            }
          }
        }
        EXPECT_NEAR(out[(o * 4 + oy) * 3 + ox], s, 1e-12);
      }
    }
  }
}

TEST(Backprop, ReluGate) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId loss = g.sum(g.relu(x));
  const Tensor xs = Tensor::row({-1, 2});
  Bindings b;
  b.bind("x", xs);
  g.evaluate(b, loss);
  const auto grads = g.backpropagate(loss);
  EXPECT_EQ(grads.at("x").values(), (std::vector<double>{0.0, 1.0}));
}

TEST(Backprop, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(11);
  for (std::size_t label = 0; label < 5; ++label) {
    const Tensor z = random_tensor({1, 5}, rng, -3, 3);
    Graph g;
    const NodeId loss = g.cross_entropy(g.input("z"), label);
    Bindings b;
    b.bind("z", z);
    g.evaluate(b, loss);
    const auto grads = g.backpropagate(loss);
    double denom = 0.0;
    for (double v : z.values()) denom += std::exp(v);
    for (std::size_t j = 0; j < 5; ++j) {
      const double expected = std::exp(z[j]) / denom - (j == label ? 1.0 : 0.0);
      EXPECT_NEAR(grads.at("z")[j], expected, 1e-14);
    }
  }
}

TEST(Backprop, ConvLayerMatchesFiniteDifferences) {
  GradCheckSpec spec;
  spec.input_shapes = {{2, 5, 5}, {3, 2, 3, 3}, {3}};
  spec.build = [](Graph& g, const std::vector<NodeId>& in) { return g.conv2d(in[0], in[1], in[2], 1, 1); };
  GradCheckOptions opt;
  opt.trials = 5;
  const auto r = gradient_check(spec, opt);
  EXPECT_LT(r.max_relative_error, 1e-5);
  EXPECT_GT(r.coordinates_checked, 5u * (50 + 54 + 3) - 1);
}

TEST(Backprop, RequiresScalarLoss) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.relu(x);
  const Tensor xs = Tensor::row({1, 2});
  Bindings b;
  b.bind("x", xs);
  g.evaluate(b, y);
  try {
    g.backpropagate(y);
    FAIL() << "expected NotScalar";
  } catch (const GraphError& e) {
    EXPECT_EQ(e.kind(), GraphError::Kind::NotScalar);
  }
}

TEST(Backprop, BeforeForwardIsAnError) {
  Graph g;
  const NodeId loss = g.sum(g.input("x"));
  try {
    g.backpropagate(loss);
    FAIL() << "expected NotEvaluated";
  } catch (const GraphError& e) {
    EXPECT_EQ(e.kind(), GraphError::Kind::NotEvaluated);
  }
}

TEST(Backprop, AccumulatorsZeroedBetweenPasses) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId loss = g.sum(g.scale(x, 3.0));
  const Tensor xs = Tensor::row({1, 2, 3});
  Bindings b;
  b.bind("x", xs);
  g.evaluate(b, loss);
  const auto first = g.backpropagate(loss);
  g.evaluate(b, loss);
  const auto second = g.backpropagate(loss);
  EXPECT_EQ(first.at("x"), second.at("x"));
  EXPECT_EQ(second.at("x").values(), (std::vector<double>{3, 3, 3}));
}

TEST(Evaluate, ShapeMismatchNamesTheNode) {
  Graph g;
  const NodeId y = g.matmul(g.input("a"), g.input("b"));
  g.set_name(y, "head");
  const Tensor a({2, 3}), bt({4, 1});
  Bindings b;
  b.bind("a", a).bind("b", bt);
  try {
    g.evaluate(b, y);
    FAIL() << "expected ShapeMismatch";
  } catch (const GraphError& e) {
    EXPECT_EQ(e.kind(), GraphError::Kind::ShapeMismatch);
    EXPECT_NE(e.node().find("matmul"), std::string::npos);
    EXPECT_NE(e.node().find("head"), std::string::npos);
  }
}

TEST(Evaluate, NonFiniteIntermediateNamesTheNode) {
  Graph g;
  const NodeId y = g.scale(g.input("x"), 1e308);
  const Tensor x = Tensor::row({10.0});
  Bindings b;
  b.bind("x", x);
  try {
    g.evaluate(b, y);
    FAIL() << "expected NonFinite";
  } catch (const GraphError& e) {
    EXPECT_EQ(e.kind(), GraphError::Kind::NonFinite);
    EXPECT_NE(e.node().find("scale"), std::string::npos);
  }
}

TEST(Evaluate, UnboundInputIsAnError) {
  Graph g;
  const NodeId y = g.relu(g.input("missing"));
  try {
    g.evaluate(Bindings{}, y);
    FAIL();
  } catch (const GraphError& e) {
    EXPECT_EQ(e.kind(), GraphError::Kind::UnboundInput);
  }
}

TEST(Evaluate, DeterministicBitwise) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({3, 12, 12}, rng), w = random_tensor({4, 3, 3, 3}, rng), bias = random_tensor({4}, rng);
  auto run = [&] {
    Graph g;
    const NodeId y = g.softmax(g.reshape(g.global_avg_pool(g.relu(g.conv2d(g.input("x"), g.input("w"), g.input("b"), 2, 1))), {1, 4}));
    Bindings b;
    b.bind("x", x).bind("w", w).bind("b", bias);
    return g.evaluate(b, y);
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientZeroDecayIsNoOp) {
  ParamSet p{{"w", Tensor::row({1.5, -2.0})}};
  AdamConfig c;
  c.weight_decay = 0.0;
  auto state = make_adam(p, c);
  const ParamSet before = p;
  adam_step(p, Gradients{{"w", Tensor({1, 2})}}, state);
  EXPECT_EQ(p.at("w"), before.at("w"));
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, DecoupledDecayOnly) {
  ParamSet p{{"w", Tensor::row({1.5, -2.0, 0.25})}};
  AdamConfig c;
  c.learning_rate = 0.001;
  c.weight_decay = 1e-4;
  auto state = make_adam(p, c);
  adam_step(p, Gradients{{"w", Tensor({1, 3})}}, state);
  EXPECT_DOUBLE_EQ(p.at("w")[0], 1.5 * (1.0 - 1e-7));
  EXPECT_DOUBLE_EQ(p.at("w")[1], -2.0 * (1.0 - 1e-7));
  EXPECT_DOUBLE_EQ(p.at("w")[2], 0.25 * (1.0 - 1e-7));
}

TEST(Adam, ConstantGradientMatchesScalarSimulation) {
  ParamSet p{{"w", Tensor::row({0.3})}};
  AdamConfig c;
  auto state = make_adam(p, c);
  // independent scalar re-derivation of the update rule
  double w = 0.3, m = 0.0, v = 0.0;
  double prev = w;
  for (int t = 1; t <= 1000; ++t) {
    adam_step(p, Gradients{{"w", Tensor::row({1.0})}}, state);
    w *= 1.0 - c.learning_rate * c.weight_decay;
    m = c.beta1 * m + (1 - c.beta1);
    v = c.beta2 * v + (1 - c.beta2);
    w -= c.learning_rate * (m / (1 - std::pow(c.beta1, t))) / (std::sqrt(v / (1 - std::pow(c.beta2, t))) + c.epsilon);
    ASSERT_LT(p.at("w")[0], prev);
    ASSERT_NEAR(p.at("w")[0], w, 1e-12);
    prev = p.at("w")[0];
  }
  EXPECT_EQ(state.step, 1000u);
}

TEST(Adam, RejectsNonFiniteGradientByName) {
  ParamSet p{{"head.weight", Tensor::row({1.0})}};
  auto state = make_adam(p);
  try {
    adam_step(p, Gradients{{"head.weight", Tensor::row({std::nan("")})}}, state);
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos);
  }
  EXPECT_EQ(state.step, 0u);
}

// ---------------------------------------------------------------------------
// gradient_check harness

TEST(GradientCheck, IdentityToRoundoff) {
  GradCheckSpec spec;
  spec.input_shapes = {{1, 6}};
  spec.build = [](Graph& g, const std::vector<NodeId>& in) { return g.reshape(in[0], {6, 1}); };
  GradCheckOptions opt;
  opt.trials = 10;
  EXPECT_LT(gradient_check(spec, opt).max_relative_error, 1e-8);
}

TEST(GradientCheck, SoftmaxCrossEntropy) {
  GradCheckSpec spec;
  spec.input_shapes = {{1, 9}};
  spec.build = [](Graph& g, const std::vector<NodeId>& in) { return g.cross_entropy(g.softmax(in[0]), 4); };
  const auto r = gradient_check(spec);
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(GradientCheck, RoiPoolingWithFixedBoxes) {
  GradCheckSpec spec;
  spec.input_shapes = {{3, 6, 6}};
  spec.build = [](Graph& g, const std::vector<NodeId>& in) {
    std::vector<kernels::RoiWindow> w{{0, 6, 0, 6, false}, {1, 4, 2, 5, false}, {5, 6, 5, 6, false}};
    return g.roi_max_pool(in[0], w, 2);
  };
  const auto r = gradient_check(spec);
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(GradientCheck, RejectsBadEps) {
  GradCheckSpec spec;
  spec.input_shapes = {{1, 2}};
  spec.build = [](Graph&, const std::vector<NodeId>& in) { return in[0]; };
  GradCheckOptions opt;
  opt.eps = 1e-2;
  EXPECT_THROW(gradient_check(spec, opt), std::invalid_argument);
}

TEST(GradientCheck, ResamplesAtReluKink) {
  GradCheckSpec spec;
  spec.input_shapes = {{1, 4}};
  spec.build = [](Graph& g, const std::vector<NodeId>& in) { return g.relu(in[0]); };
  int calls = 0;
  spec.sample = [&calls](std::vector<Tensor>& v, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (auto& x : v[0].values()) x = u(rng);
    if (calls++ % 2 == 0) v[0][1] = 0.0;  // every other draw sits exactly on the kink
  };
  GradCheckOptions opt;
  opt.trials = 6;
  const auto r = gradient_check(spec, opt);
  EXPECT_EQ(r.resampled, 6);
  EXPECT_LT(r.max_relative_error, 1e-9);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsByteIdentical) {
  std::mt19937_64 rng(9);
  ParamSet p{{"a.weight", random_tensor({3, 4}, rng)}, {"b", random_tensor({2, 1, 3, 3}, rng)}, {"c", Tensor({1}, -0.0)}};
  const auto bytes = encode_checkpoint(p);
  const ParamSet q = decode_checkpoint(bytes);
  EXPECT_EQ(p, q);
  EXPECT_EQ(encode_checkpoint(q), bytes);
}

TEST(Checkpoint, CorruptHeadersAreRejected) {
  ParamSet p{{"w", Tensor::row({1, 2, 3})}};
  const auto good = encode_checkpoint(p);
  auto expect_kind = [](std::vector<std::uint8_t> bytes, ocp::io::FormatError::Kind kind) {
    try {
      decode_checkpoint(bytes);
      FAIL() << "expected FormatError";
    } catch (const ocp::io::FormatError& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
    }
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  expect_kind(bad_magic, ocp::io::FormatError::Kind::BadMagic);

  std::string text(good.begin(), good.end());
  auto patch = [&](const std::string& from, const std::string& to) {
    std::string t = text;
    t.replace(t.find(from), from.size(), to);
    return std::vector<std::uint8_t>(t.begin(), t.end());
  };
  expect_kind(patch("version 1", "version 7"), ocp::io::FormatError::Kind::VersionMismatch);
  expect_kind(patch("tensors 1", "tensors 2"), ocp::io::FormatError::Kind::CountMismatch);

  auto truncated = good;
  truncated.resize(truncated.size() - 4);
  expect_kind(truncated, ocp::io::FormatError::Kind::Truncated);
}

// ---------------------------------------------------------------------------
// Every primitive against central differences.

class PrimitiveGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  auto cases = primitive_cases();
  const auto& pc = cases.at(GetParam());
  GradCheckOptions opt;
  opt.trials = 100;
  const auto r = gradient_check(pc.spec, opt);
  EXPECT_LT(r.max_relative_error, 1e-5) << pc.name;
  EXPECT_GT(r.coordinates_checked, 0u) << pc.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, PrimitiveGradient, ::testing::Range<std::size_t>(0, primitive_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return primitive_cases().at(info.param).name;
                         });
