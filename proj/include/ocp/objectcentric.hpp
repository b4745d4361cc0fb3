#pragma once

// Object-centric representations: score every detected object, softmax the
// scores over all detections, weight the RoI features, optionally keep the
// top-k, then sum or concatenate. The six taxonomy variants are built from
// these pieces in build_representation_graph().

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ocp/diff/graph.hpp"
#include "ocp/diff/kernels.hpp"
#include "ocp/diff/params.hpp"
#include "ocp/diff/tensor.hpp"
#include "ocp/perception.hpp"

namespace ocp::objectcentric {

using diff::Graph;
using diff::NodeId;
using diff::ParamSet;
using diff::Tensor;
using perception::BoundingBox;

enum class Variant { GlobalOnly, PixelAttention, DenseSum, SparseSum, SparseConcat, HeuristicSparseSum };

inline constexpr std::array<Variant, 6> kAllVariants{Variant::GlobalOnly,  Variant::PixelAttention,
                                                     Variant::DenseSum,    Variant::SparseSum,
                                                     Variant::SparseConcat, Variant::HeuristicSparseSum};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::GlobalOnly: return "baseline";
    case Variant::PixelAttention: return "pixel_attention";
    case Variant::DenseSum: return "dense_object";
    case Variant::SparseSum: return "sparse_object";
    case Variant::SparseConcat: return "sparse_object_concat";
    case Variant::HeuristicSparseSum: return "heuristic_selector";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : kAllVariants) {
    if (variant_name(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

inline bool uses_objects(Variant v) { return v != Variant::GlobalOnly && v != Variant::PixelAttention; }
inline bool uses_selector(Variant v) {
  return v == Variant::DenseSum || v == Variant::SparseSum || v == Variant::SparseConcat;
}

struct RepresentationConfig {
  Variant variant = Variant::SparseSum;
  std::size_t k = 5;
  std::size_t global_dim = 64;   // D
  std::size_t bins = 2;
  bool selector_uses_global = true;

  std::size_t object_dim() const { return global_dim * bins * bins; }  // D_o

  std::size_t output_dim() const {
    switch (variant) {
      case Variant::GlobalOnly:
      case Variant::PixelAttention: return global_dim;
      case Variant::DenseSum:
      case Variant::SparseSum:
      case Variant::HeuristicSparseSum: return global_dim + object_dim();
      case Variant::SparseConcat: return global_dim + k * object_dim();
    }
    return 0;
  }

  void validate() const {
    if (k == 0) throw std::invalid_argument("representation: k must be >= 1");
    if (global_dim == 0 || bins == 0) throw std::invalid_argument("representation: empty feature dims");
  }
};

inline constexpr const char* kSelectorWeight = "selector.weight";
inline constexpr const char* kSelectorBias = "selector.bias";

/// Linear selector over [f_i || G] (or f_i alone when the global context is
/// switched off).
struct SelectorParams {
  std::vector<double> weights;
  double bias = 0.0;
};

inline std::size_t selector_input_dim(const RepresentationConfig& cfg) {
  return cfg.object_dim() + (cfg.selector_uses_global ? cfg.global_dim : 0);
}

inline void init_selector(ParamSet& params, const RepresentationConfig& cfg, std::mt19937_64& rng) {
  const std::size_t in = selector_input_dim(cfg);
  params[kSelectorWeight] = diff::uniform_init({in, 1}, in, rng);
  params[kSelectorBias] = Tensor({1});
}

inline SelectorParams selector_from(const ParamSet& params) {
  SelectorParams s;
  s.weights = params.at(kSelectorWeight).values();
  s.bias = params.at(kSelectorBias)[0];
  return s;
}

// ---------------------------------------------------------------------------
// Direct operations on plain vectors.

struct ObjectEntry {
  BoundingBox box;
  std::vector<double> feature;   // f_i as pooled
  double score = 0.0;            // w_i
  double weight = 0.0;           // normalized weight
  std::vector<double> weighted;  // weight * f_i
  std::size_t detection_index = 0;
};

/// Ordered object list. After top_k the order is descending weight.
struct ObjectSet {
  std::vector<ObjectEntry> entries;
  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

inline std::vector<double> score_objects(const std::vector<std::vector<double>>& features,
                                         const std::vector<double>& global, const SelectorParams& sel,
                                         bool use_global = true) {
  std::vector<double> scores;
  scores.reserve(features.size());
  for (const auto& f : features) {
    const std::size_t need = f.size() + (use_global ? global.size() : 0);
    if (sel.weights.size() != need) {
      throw std::invalid_argument("score_objects: selector has " + std::to_string(sel.weights.size()) +
                                  " weights, input has " + std::to_string(need));
    }
    double s = sel.bias;
    for (std::size_t j = 0; j < f.size(); ++j) s += sel.weights[j] * f[j];
    if (use_global) {
      for (std::size_t j = 0; j < global.size(); ++j) s += sel.weights[f.size() + j] * global[j];
    }
    scores.push_back(s);
  }
  return scores;
}

inline std::vector<double> normalize(const std::vector<double>& scores) {
  std::vector<double> out(scores.size());
  if (!scores.empty()) diff::kernels::softmax_row(scores.data(), out.data(), scores.size());
  return out;
}

inline void weight_features(ObjectSet& set) {
  for (auto& e : set.entries) {
    e.weighted.resize(e.feature.size());
    for (std::size_t j = 0; j < e.feature.size(); ++j) e.weighted[j] = e.weight * e.feature[j];
  }
}

/// Descending weight, ties by detection index, truncated to min(k, N).
inline ObjectSet top_k(ObjectSet set, std::size_t k) {
  std::stable_sort(set.entries.begin(), set.entries.end(), [](const ObjectEntry& a, const ObjectEntry& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.detection_index < b.detection_index;
  });
  if (set.entries.size() > k) set.entries.resize(k);
  return set;
}

/// Column sums taken in ascending value order, so any permutation of the
/// entries gives the same bits.
inline std::vector<double> aggregate_sum(const ObjectSet& set, std::size_t object_dim) {
  std::vector<double> out(object_dim, 0.0);
  std::vector<double> column(set.size());
  for (std::size_t c = 0; c < object_dim; ++c) {
    for (std::size_t r = 0; r < set.size(); ++r) column[r] = set.entries[r].weighted.at(c);
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    out[c] = s;
  }
  return out;
}

inline std::vector<double> aggregate_concat(const ObjectSet& set, std::size_t k, std::size_t object_dim) {
  std::vector<double> out(k * object_dim, 0.0);
  for (std::size_t s = 0; s < std::min(k, set.size()); ++s) {
    const auto& w = set.entries[s].weighted;
    if (w.size() != object_dim) throw std::invalid_argument("aggregate_concat: feature length mismatch");
    std::copy(w.begin(), w.end(), out.begin() + static_cast<std::ptrdiff_t>(s * object_dim));
  }
  return out;
}

/// Box area divided by image area, so scores lie in [0, 1] before softmax.
inline std::vector<double> heuristic_scores(const std::vector<BoundingBox>& boxes, double image_w, double image_h) {
  std::vector<double> out;
  out.reserve(boxes.size());
  const double area = image_w * image_h;
  for (const auto& b : boxes) out.push_back(b.area() / area);
  return out;
}

// ---------------------------------------------------------------------------
// Graph construction shared by training and inference.

struct RepresentationNodes {
  NodeId output;                    // 1 x output_dim
  NodeId global;                    // 1 x D
  std::optional<NodeId> weights;    // 1 x N normalized object weights
  std::optional<NodeId> scores;     // 1 x N raw scores
  std::optional<NodeId> selection;  // top_k_rows node
  std::optional<NodeId> attention;  // 1 x H'W' attention mass
  std::vector<BoundingBox> boxes;   // boxes actually pooled, detection order
  std::vector<bool> degenerate;     // per pooled box
};

/// Clips every box to the image and drops the ones left without area.
inline std::vector<BoundingBox> usable_boxes(const std::vector<BoundingBox>& boxes, double image_w, double image_h) {
  std::vector<BoundingBox> out;
  out.reserve(boxes.size());
  for (auto b : boxes) {
    if (perception::clip_box(b, image_w, image_h)) out.push_back(b);
  }
  return out;
}

/// Appends the representation for `variant` on top of a backbone feature
/// map node. The object path needs the map's spatial extent to place the
/// RoI windows.
inline RepresentationNodes build_representation_graph(Graph& g, const RepresentationConfig& cfg, NodeId map,
                                                      std::size_t map_h, std::size_t map_w,
                                                      const std::vector<BoundingBox>& detections, double image_w,
                                                      double image_h) {
  cfg.validate();
  RepresentationNodes out;
  out.global = g.global_avg_pool(map);

  switch (cfg.variant) {
    case Variant::GlobalOnly:
      out.output = out.global;
      return out;
    case Variant::PixelAttention: {
      const auto att = perception::pixel_attention(g, map, map_h * map_w);
      out.output = att.feature;
      out.attention = att.mass;
      return out;
    }
    default:
      break;
  }

  out.boxes = usable_boxes(detections, image_w, image_h);
  const std::size_t n = out.boxes.size();
  const std::size_t width = cfg.variant == Variant::SparseConcat ? cfg.k * cfg.object_dim() : cfg.object_dim();
  if (n == 0) {
    out.output = g.concat({out.global, g.constant(Tensor({1, width}))});
    return out;
  }

  std::vector<diff::kernels::RoiWindow> windows;
  windows.reserve(n);
  for (const auto& b : out.boxes) {
    windows.push_back(perception::roi_window(b, map_h, map_w, perception::BackboneConfig::stride(), cfg.bins));
    out.degenerate.push_back(windows.back().degenerate);
  }
  const NodeId features = g.roi_max_pool(map, std::move(windows), cfg.bins);  // N x D_o

  NodeId scores;
  if (cfg.variant == Variant::HeuristicSparseSum) {
    scores = g.constant(Tensor::row(heuristic_scores(out.boxes, image_w, image_h)));
  } else {
    NodeId selector_in = features;
    if (cfg.selector_uses_global) selector_in = g.concat({features, g.tile_rows(out.global, n)});
    const NodeId raw = g.add(g.matmul(selector_in, g.input(kSelectorWeight)), g.input(kSelectorBias));
    scores = g.reshape(raw, {1, n});
  }
  const NodeId weights = g.softmax(scores);
  const NodeId weighted = g.scale_rows(features, weights);
  out.scores = scores;
  out.weights = weights;

  NodeId objects;
  switch (cfg.variant) {
    case Variant::DenseSum:
      objects = g.sum_rows(weighted);
      break;
    case Variant::SparseSum:
    case Variant::HeuristicSparseSum: {
      const NodeId kept = g.top_k_rows(weighted, weights, std::min(cfg.k, n), diff::RowOrder::ByIndex);
      out.selection = kept;
      objects = g.sum_rows(kept);
      break;
    }
    case Variant::SparseConcat: {
      const NodeId kept = g.top_k_rows(weighted, weights, cfg.k, diff::RowOrder::ByWeight);
      out.selection = kept;
      objects = g.reshape(kept, {1, cfg.k * cfg.object_dim()});
      break;
    }
    default:
      throw std::logic_error("unreachable variant");
  }
  out.output = g.concat({out.global, objects});
  return out;
}

/// End-to-end representation for one image: backbone, global pool and
/// the configured object or attention path.
inline Tensor build_representation(const RepresentationConfig& cfg, const perception::BackboneConfig& backbone,
                                   const Tensor& image, const std::vector<BoundingBox>& boxes,
                                   const ParamSet& params) {
  perception::check_image(image, backbone);
  if (cfg.global_dim != backbone.depth()) {
    throw std::invalid_argument("representation: global_dim " + std::to_string(cfg.global_dim) +
                                " does not match backbone depth " + std::to_string(backbone.depth()));
  }
  Graph g;
  const NodeId in = g.input("image", false);
  const NodeId map = perception::backbone(g, in, backbone);
  const auto nodes = build_representation_graph(g, cfg, map, backbone.out_extent(image.dim(1)),
                                                backbone.out_extent(image.dim(2)), boxes,
                                                static_cast<double>(image.dim(2)), static_cast<double>(image.dim(1)));
  diff::Bindings b = diff::bind_all(params);
  b.bind("image", image);
  return g.evaluate(b, nodes.output);
}

}  // namespace ocp::objectcentric
