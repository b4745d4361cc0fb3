#pragma once

// Policy network (backbone -> representation -> linear head), behavioural
// cloning and perplexity (mean held-out cross-entropy, not exponentiated).

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocp/datapipe.hpp"
#include "ocp/diff/gradcheck.hpp"
#include "ocp/diff/params.hpp"
#include "ocp/objectcentric.hpp"
#include "ocp/parallel.hpp"
#include "ocp/perception.hpp"

namespace ocp::policy {

using data::Head;
using diff::Graph;
using diff::NodeId;
using diff::ParamSet;
using diff::Tensor;
using objectcentric::RepresentationConfig;
using objectcentric::Variant;
using perception::BackboneConfig;
using perception::BoundingBox;

inline constexpr const char* kHeadWeight = "head.weight";
inline constexpr const char* kHeadBias = "head.bias";

struct PolicyConfig {
  RepresentationConfig representation;
  BackboneConfig backbone;
  Head head = Head::Action9;
  data::Binning binning;

  std::size_t classes() const { return static_cast<std::size_t>(data::head_classes(head, binning)); }

  void validate() const {
    representation.validate();
    if (representation.global_dim != backbone.depth()) {
      throw std::invalid_argument("policy: representation global_dim " + std::to_string(representation.global_dim) +
                                  " != backbone depth " + std::to_string(backbone.depth()));
    }
  }
};

/// Uniform +-1/sqrt(fan_in) everywhere; `zero_head` zeroes the final layer
/// so every class starts equally likely.
inline ParamSet init_policy(const PolicyConfig& cfg, std::uint64_t seed, bool zero_head = false) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  perception::init_backbone(p, cfg.backbone, rng);
  if (cfg.representation.variant == Variant::PixelAttention) perception::init_attention(p, cfg.backbone.depth(), rng);
  if (objectcentric::uses_selector(cfg.representation.variant)) objectcentric::init_selector(p, cfg.representation, rng);
  const std::size_t in = cfg.representation.output_dim();
  const std::size_t out = cfg.classes();
  if (zero_head) {
    p[kHeadWeight] = Tensor({in, out});
    p[kHeadBias] = Tensor({1, out});
  } else {
    p[kHeadWeight] = diff::uniform_init({in, out}, in, rng);
    p[kHeadBias] = diff::uniform_init({1, out}, in, rng);
  }
  return p;
}

/// Parameter names the configuration needs, with their expected shapes.
inline void check_params(const ParamSet& params, const PolicyConfig& cfg) {
  cfg.validate();
  const ParamSet expected = init_policy(cfg, 0, true);
  for (const auto& [name, t] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("policy: checkpoint lacks '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw std::invalid_argument("policy: '" + name + "' has shape " + diff::shape_string(it->second.shape()) +
                                  ", config expects " + diff::shape_string(t.shape()));
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.count(name)) throw std::invalid_argument("policy: unexpected parameter '" + name + "'");
  }
}

struct PolicyNodes {
  NodeId logits;
  objectcentric::RepresentationNodes representation;
};

struct PolicyGraph {
  Graph graph;
  NodeId logits;
  objectcentric::RepresentationNodes representation;
};

/// Adds the policy to `g`. The image is read from input "image" (not
/// differentiated), parameters from inputs named after them.
inline PolicyNodes build_policy(Graph& g, const PolicyConfig& cfg, const Tensor& image,
                                const std::vector<BoundingBox>& boxes) {
  perception::check_image(image, cfg.backbone);
  const NodeId in = g.input("image", false);
  const NodeId map = perception::backbone(g, in, cfg.backbone);
  PolicyNodes out;
  out.representation = objectcentric::build_representation_graph(
      g, cfg.representation, map, cfg.backbone.out_extent(image.dim(1)), cfg.backbone.out_extent(image.dim(2)), boxes,
      static_cast<double>(image.dim(2)), static_cast<double>(image.dim(1)));
  out.logits = g.add(g.matmul(out.representation.output, g.input(kHeadWeight)), g.input(kHeadBias));
  return out;
}

inline void build_policy_graph(PolicyGraph& pg, const PolicyConfig& cfg, const Tensor& image,
                               const std::vector<BoundingBox>& boxes) {
  auto nodes = build_policy(pg.graph, cfg, image, boxes);
  pg.logits = nodes.logits;
  pg.representation = std::move(nodes.representation);
}

struct Prediction {
  Tensor logits;                        // 1 x classes
  std::vector<double> object_weights;   // per pooled box, empty without objects
  std::vector<BoundingBox> boxes;       // pooled boxes, detection order
  std::vector<std::size_t> kept;        // indices into boxes kept by top-k
  std::vector<double> attention;        // per feature-map cell, pixel attention only
};

inline Prediction predict_full(const Tensor& image, const std::vector<BoundingBox>& boxes, const ParamSet& params,
                               const PolicyConfig& cfg) {
  PolicyGraph pg;
  build_policy_graph(pg, cfg, image, boxes);
  diff::Bindings b = diff::bind_all(params);
  b.bind("image", image);
  Prediction out;
  out.logits = pg.graph.evaluate(b, pg.logits);
  const auto& rep = pg.representation;
  out.boxes = rep.boxes;
  if (rep.weights) out.object_weights = pg.graph.value(*rep.weights).values();
  if (rep.selection) out.kept = pg.graph.selected_rows(*rep.selection);
  if (rep.attention) out.attention = pg.graph.value(*rep.attention).values();
  return out;
}

inline Tensor predict(const Tensor& image, const std::vector<BoundingBox>& boxes, const ParamSet& params,
                      const PolicyConfig& cfg) {
  return predict_full(image, boxes, params, cfg).logits;
}

inline std::size_t argmax(const Tensor& logits) {
  const auto& v = logits.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Softmax cross-entropy of `logits` at `label`.
inline double bc_loss(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::out_of_range("bc_loss: label " + std::to_string(label) + " outside " + std::to_string(logits.size()) +
                            " classes");
  }
  return diff::kernels::log_sum_exp(logits.data().data(), logits.size()) - logits[label];
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  bool zero_head = false;
  double stop_below = 0.0;  // end early once an epoch's mean loss drops below this

  void validate() const {
    if (!(learning_rate >= 0) || !(weight_decay >= 0)) throw std::invalid_argument("train: negative rate or decay");
    if (batch_size == 0 || epochs == 0) throw std::invalid_argument("train: batch size and epochs must be positive");
  }
};

struct TrainResult {
  ParamSet params;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// One sample's loss and parameter gradients.
inline double sample_gradient(const data::Dataset& ds, const data::SampleRef& s, const ParamSet& params,
                              const PolicyConfig& cfg, diff::Gradients& grads) {
  const auto& ep = ds.episodes[s.episode];
  const auto& frame = ep.frames[s.frame];
  const Tensor image = data::image_tensor(frame.image, ep.dims);
  PolicyGraph pg;
  build_policy_graph(pg, cfg, image, frame.boxes);
  const NodeId loss = pg.graph.cross_entropy(pg.logits, static_cast<std::size_t>(s.label));
  diff::Bindings b = diff::bind_all(params);
  b.bind("image", image);
  const double value = pg.graph.evaluate(b, loss).item();
  grads = pg.graph.backpropagate(loss);
  return value;
}

/// Minibatch Adam over `samples`. The epoch order is a seeded shuffle, so a
/// given seed reproduces the same parameters bit for bit.
inline TrainResult train(const data::Dataset& ds, const std::vector<data::SampleRef>& samples,
                         const PolicyConfig& cfg, const TrainConfig& tc,
                         const std::function<void(std::size_t, double)>& on_epoch = {}) {
  tc.validate();
  if (samples.empty()) throw std::invalid_argument("train: no training samples");
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= cfg.classes()) {
      throw std::out_of_range("train: label " + std::to_string(s.label) + " outside the head");
    }
  }
  TrainResult out;
  out.params = init_policy(cfg, tc.seed, tc.zero_head);
  diff::AdamState adam = diff::make_adam(out.params, {tc.learning_rate, tc.weight_decay});
  std::vector<std::size_t> order(samples.size());
  std::mt19937_64 shuffle_rng(tc.seed ^ 0x5DEECE66DULL);
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      diff::Gradients batch;
      for (std::size_t i = start; i < end; ++i) {
        diff::Gradients g;
        total += sample_gradient(ds, samples[order[i]], out.params, cfg, g);
        diff::accumulate(batch, g);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [name, g] : batch) {
        for (auto& v : g.values()) v *= inv;
      }
      diff::adam_step(out.params, batch, adam);
    }
    out.epoch_loss.push_back(total / static_cast<double>(order.size()));
    if (on_epoch) on_epoch(epoch, out.epoch_loss.back());
    if (out.epoch_loss.back() < tc.stop_below) break;
  }
  return out;
}

/// Mean cross-entropy over held-out samples (the paper's "perplexity").
inline double evaluate_perplexity(const ParamSet& params, const PolicyConfig& cfg, const data::Dataset& ds,
                                  const std::vector<data::SampleRef>& samples, std::size_t jobs = 1) {
  if (samples.empty()) throw std::invalid_argument("perplexity: empty test set");
  check_params(params, cfg);
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    const auto& ep = ds.episodes[s.episode];
    const auto& frame = ep.frames[s.frame];
    losses[i] = bc_loss(predict(data::image_tensor(frame.image, ep.dims), frame.boxes, params, cfg),
                        static_cast<std::size_t>(s.label));
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

inline std::string loss_csv(const std::vector<double>& epoch_loss) {
  std::ostringstream os;
  os << "epoch,mean_loss\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) os << i + 1 << ',' << epoch_loss[i] << '\n';
  return os.str();
}

}  // namespace ocp::policy
