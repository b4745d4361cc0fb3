#pragma once

// Shared convolutional features for the policy: the backbone feature map,
// its global average (G), per-box RoI features (f_i) and the continuous
// pixel-attention pool.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocp/diff/graph.hpp"
#include "ocp/diff/kernels.hpp"
#include "ocp/diff/params.hpp"
#include "ocp/diff/tensor.hpp"

namespace ocp::perception {

using diff::Graph;
using diff::NodeId;
using diff::ParamSet;
using diff::Tensor;
using diff::kernels::RoiWindow;

enum class ObjectClass : std::uint8_t { Vehicle = 0, Pedestrian = 1 };

/// Axis-aligned box in image pixels (x to the right, y down).
struct BoundingBox {
  ObjectClass cls = ObjectClass::Vehicle;
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Clips to [0,w]x[0,h]. Returns false when the box lies outside the image
/// (or is inverted). A box that already had zero area but sits inside the
/// image is kept; RoI pooling flags it as degenerate.
inline bool clip_box(BoundingBox& b, double image_w, double image_h) {
  if (b.x_min > b.x_max || b.y_min > b.y_max) return false;
  const bool had_area = b.valid();
  b.x_min = std::clamp(b.x_min, 0.0, image_w);
  b.x_max = std::clamp(b.x_max, 0.0, image_w);
  b.y_min = std::clamp(b.y_min, 0.0, image_h);
  b.y_max = std::clamp(b.y_max, 0.0, image_h);
  if (had_area) return b.valid();
  return true;
}

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::array<std::size_t, 4> widths{16, 32, 64, 64};
  std::size_t kernel = 3;

  std::size_t depth() const { return widths.back(); }
  /// Every block halves the resolution.
  static constexpr std::size_t stride() { return 16; }
  std::size_t out_extent(std::size_t in) const {
    for (std::size_t i = 0; i < widths.size(); ++i) in = (in + 2 * (kernel / 2) - kernel) / 2 + 1;
    return in;
  }
};

inline std::string conv_weight_name(std::size_t i) { return "backbone.conv" + std::to_string(i) + ".weight"; }
inline std::string conv_bias_name(std::size_t i) { return "backbone.conv" + std::to_string(i) + ".bias"; }

inline void init_backbone(ParamSet& params, const BackboneConfig& cfg, std::mt19937_64& rng) {
  std::size_t in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::size_t fan_in = in * cfg.kernel * cfg.kernel;
    params[conv_weight_name(i)] = diff::uniform_init({cfg.widths[i], in, cfg.kernel, cfg.kernel}, fan_in, rng);
    params[conv_bias_name(i)] = diff::uniform_init({cfg.widths[i]}, fan_in, rng);
    in = cfg.widths[i];
  }
}

/// Appends the four stride-2 conv+relu blocks; parameters are graph inputs
/// named after conv_weight_name / conv_bias_name.
inline NodeId backbone(Graph& g, NodeId image, const BackboneConfig& cfg) {
  NodeId x = image;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const NodeId w = g.input(conv_weight_name(i));
    const NodeId b = g.input(conv_bias_name(i));
    x = g.relu(g.conv2d(x, w, b, 2, cfg.kernel / 2));
  }
  return x;
}

inline void check_image(const Tensor& image, const BackboneConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels) {
    throw std::invalid_argument("backbone: image " + diff::shape_string(image.shape()) + " does not have " +
                                std::to_string(cfg.in_channels) + " channels");
  }
}

inline Tensor backbone_forward(const Tensor& image, const ParamSet& params, const BackboneConfig& cfg) {
  check_image(image, cfg);
  Graph g;
  const NodeId in = g.input("image", false);
  const NodeId out = backbone(g, in, cfg);
  diff::Bindings b = diff::bind_all(params);
  b.bind("image", image);
  return g.evaluate(b, out);
}

/// Per-channel spatial mean, as a 1xD row.
inline Tensor global_pool(const Tensor& map) {
  if (map.rank() != 3) throw std::invalid_argument("global_pool: expected a CxHxW map");
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  Tensor out({1, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += map[ch * hw + p];
    out[ch] = s / static_cast<double>(hw);
  }
  return out;
}

/// Projects an image-pixel box onto the feature grid: floor for the start
/// cell, ceil for the end cell, clipped, then widened to at least
/// min(bins, extent) cells per axis. A box with no area left after
/// clipping collapses to the single nearest cell and is marked degenerate.
inline RoiWindow roi_window(const BoundingBox& box, std::size_t map_h, std::size_t map_w, std::size_t stride,
                            std::size_t bins) {
  if (map_h == 0 || map_w == 0 || stride == 0 || bins == 0) throw std::invalid_argument("roi_window: empty geometry");
  const double s = static_cast<double>(stride);
  auto axis = [&](double lo, double hi, std::size_t extent, std::size_t& a, std::size_t& b) -> bool {
    const double n = static_cast<double>(extent);
    const double start = std::clamp(std::floor(lo / s), 0.0, n);
    const double end = std::clamp(std::ceil(hi / s), 0.0, n);
    if (end <= start) {
      const double centre = std::clamp(std::floor(0.5 * (lo + hi) / s), 0.0, n - 1.0);
      a = static_cast<std::size_t>(centre);
      b = a + 1;
      return false;
    }
    a = static_cast<std::size_t>(start);
    b = static_cast<std::size_t>(end);
    const std::size_t need = std::min(bins, extent);
    while (b - a < need) {
      if (b < extent) ++b;
      if (b - a < need && a > 0) --a;
    }
    return true;
  };
  RoiWindow w;
  const bool ok_x = axis(box.x_min, box.x_max, map_w, w.x0, w.x1);
  const bool ok_y = axis(box.y_min, box.y_max, map_h, w.y0, w.y1);
  w.degenerate = !(ok_x && ok_y && box.valid());
  if (w.degenerate) {
    // both axes collapse to the nearest cell
    const double n_w = static_cast<double>(map_w), n_h = static_cast<double>(map_h);
    w.x0 = static_cast<std::size_t>(std::clamp(std::floor(0.5 * (box.x_min + box.x_max) / s), 0.0, n_w - 1.0));
    w.y0 = static_cast<std::size_t>(std::clamp(std::floor(0.5 * (box.y_min + box.y_max) / s), 0.0, n_h - 1.0));
    w.x1 = w.x0 + 1;
    w.y1 = w.y0 + 1;
  }
  return w;
}

/// bins x bins max pooling of the box region, flattened channel-major
/// (1 x D*bins^2).
inline Tensor roi_pool(const Tensor& map, const BoundingBox& box, std::size_t bins,
                       std::size_t stride = BackboneConfig::stride()) {
  if (map.rank() != 3) throw std::invalid_argument("roi_pool: expected a CxHxW map");
  const RoiWindow win = roi_window(box, map.dim(1), map.dim(2), stride, bins);
  const std::size_t c = map.dim(0);
  Tensor out({1, c * bins * bins});
  diff::kernels::roi_max_pool(map.data().data(), c, map.dim(1), map.dim(2), win, bins, out.data().data(), nullptr);
  return out;
}

inline constexpr const char* kAttentionWeight = "attention.weight";
inline constexpr const char* kAttentionBias = "attention.bias";

inline void init_attention(ParamSet& params, std::size_t depth, std::mt19937_64& rng) {
  params[kAttentionWeight] = diff::uniform_init({depth, 1}, depth, rng);
  params[kAttentionBias] = Tensor({1});
}

struct AttentionNodes {
  NodeId feature;  // 1 x D
  NodeId mass;     // 1 x H'W'
};

/// A 1x1 projection scores every cell, a spatial softmax turns the scores
/// into attention mass, and the output is the mass-weighted cell average.
inline AttentionNodes pixel_attention(Graph& g, NodeId map, std::size_t cells) {
  const NodeId flat = g.to_cells(map);  // cells x D
  const NodeId logits = g.add(g.matmul(flat, g.input(kAttentionWeight)), g.input(kAttentionBias));
  const NodeId mass = g.softmax(g.reshape(logits, {1, cells}));
  return {g.matmul(mass, flat), mass};
}

struct AttentionPool {
  Tensor feature;  // 1 x D
  Tensor mass;     // H' x W'
};

inline AttentionPool pixel_attention_pool(const Tensor& map, const Tensor& weight, const Tensor& bias) {
  if (map.rank() != 3) throw std::invalid_argument("pixel_attention_pool: expected a CxHxW map");
  Graph g;
  const NodeId m = g.input("map", false);
  const auto nodes = pixel_attention(g, m, map.dim(1) * map.dim(2));
  diff::Bindings b;
  b.bind("map", map).bind(kAttentionWeight, weight).bind(kAttentionBias, bias);
  AttentionPool out;
  out.feature = g.evaluate(b, nodes.feature);
  out.mass = g.value(nodes.mass).reshaped({map.dim(1), map.dim(2)});
  return out;
}

}  // namespace ocp::perception
