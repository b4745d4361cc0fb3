#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ocp/diff/kernels.hpp"
#include "ocp/diff/tensor.hpp"

namespace ocp::diff {

enum class OpKind {
  Input,
  Constant,
  MatMul,
  Add,
  Scale,
  Conv2d,
  Relu,
  GlobalAvgPool,
  Softmax,
  Concat,
  ScaleRows,
  SumRows,
  Sum,
  CrossEntropy,
  RoiMaxPool,
  ToCells,
  Reshape,
  TileRows,
  TopKRows,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Softmax: return "softmax";
    case OpKind::Concat: return "concat";
    case OpKind::ScaleRows: return "scale_rows";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::Sum: return "sum";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::RoiMaxPool: return "roi_max_pool";
    case OpKind::ToCells: return "to_cells";
    case OpKind::Reshape: return "reshape";
    case OpKind::TileRows: return "tile_rows";
    case OpKind::TopKRows: return "top_k_rows";
  }
  return "?";
}

class GraphError : public std::runtime_error {
 public:
  enum class Kind { UnboundInput, ShapeMismatch, NonFinite, NotScalar, NotEvaluated, BadArgument };

  GraphError(Kind kind, std::string node, const std::string& detail)
      : std::runtime_error(node + ": " + detail), kind_(kind), node_(std::move(node)) {}

  Kind kind() const { return kind_; }
  const std::string& node() const { return node_; }

 private:
  Kind kind_;
  std::string node_;
};

struct NodeId {
  std::size_t index = 0;
};

/// How top_k_rows lays out the kept rows.
enum class RowOrder { ByWeight, ByIndex };

/// Named tensors supplied to Graph::evaluate. Holds references; the caller
/// keeps the tensors alive for as long as the graph's caches are used.
class Bindings {
 public:
  Bindings& bind(const std::string& name, const Tensor& t) {
    refs_[name] = &t;
    return *this;
  }
  const Tensor* find(const std::string& name) const {
    auto it = refs_.find(name);
    return it == refs_.end() ? nullptr : it->second;
  }

 private:
  std::map<std::string, const Tensor*> refs_;
};

using Gradients = std::map<std::string, Tensor>;

/// Define-then-run computation graph. Nodes are appended in topological
/// order; evaluate() fills the value caches, backpropagate() walks them back.
class Graph {
 public:
  NodeId input(std::string name, bool differentiable = true) {
    Node n = make(OpKind::Input, {});
    n.name = std::move(name);
    n.needs_grad = differentiable;
    return push(std::move(n));
  }

  NodeId constant(Tensor value) {
    Node n = make(OpKind::Constant, {});
    n.value = std::move(value);
    n.needs_grad = false;
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) { return push(make(OpKind::MatMul, {a, b})); }
  NodeId add(NodeId a, NodeId b) { return push(make(OpKind::Add, {a, b})); }
  NodeId relu(NodeId x) { return push(make(OpKind::Relu, {x})); }
  NodeId global_avg_pool(NodeId x) { return push(make(OpKind::GlobalAvgPool, {x})); }
  NodeId softmax(NodeId x) { return push(make(OpKind::Softmax, {x})); }
  NodeId scale_rows(NodeId x, NodeId w) { return push(make(OpKind::ScaleRows, {x, w})); }
  NodeId sum_rows(NodeId x) { return push(make(OpKind::SumRows, {x})); }
  NodeId sum(NodeId x) { return push(make(OpKind::Sum, {x})); }
  NodeId to_cells(NodeId map) { return push(make(OpKind::ToCells, {map})); }

  NodeId scale(NodeId x, double factor) {
    Node n = make(OpKind::Scale, {x});
    n.factor = factor;
    return push(std::move(n));
  }

  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t stride, std::size_t pad) {
    Node n = make(OpKind::Conv2d, {x, weight, bias});
    n.stride = stride;
    n.pad = pad;
    return push(std::move(n));
  }

  NodeId concat(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw GraphError(GraphError::Kind::BadArgument, "concat", "no inputs");
    return push(make(OpKind::Concat, parts));
  }

  NodeId cross_entropy(NodeId logits, std::size_t label) {
    Node n = make(OpKind::CrossEntropy, {logits});
    n.label = label;
    return push(std::move(n));
  }

  NodeId roi_max_pool(NodeId map, std::vector<kernels::RoiWindow> windows, std::size_t bins) {
    if (windows.empty() || bins == 0) {
      throw GraphError(GraphError::Kind::BadArgument, "roi_max_pool", "need >= 1 window and bins >= 1");
    }
    Node n = make(OpKind::RoiMaxPool, {map});
    n.windows = std::move(windows);
    n.bins = bins;
    return push(std::move(n));
  }

  NodeId reshape(NodeId x, Shape shape) {
    Node n = make(OpKind::Reshape, {x});
    n.target = std::move(shape);
    return push(std::move(n));
  }

  NodeId tile_rows(NodeId x, std::size_t count) {
    Node n = make(OpKind::TileRows, {x});
    n.count = count;
    return push(std::move(n));
  }

  /// Keeps the k rows of x with the largest weights (ties: lower row first),
  /// zero-filling when x has fewer than k rows. Gradient reaches only the
  /// kept rows of x; the weights receive none through the selection.
  NodeId top_k_rows(NodeId x, NodeId weights, std::size_t k, RowOrder order) {
    if (k == 0) throw GraphError(GraphError::Kind::BadArgument, "top_k_rows", "k must be >= 1");
    Node n = make(OpKind::TopKRows, {x, weights});
    n.count = k;
    n.order = order;
    return push(std::move(n));
  }

  void set_name(NodeId id, std::string name) { nodes_.at(id.index).name = std::move(name); }
  std::size_t size() const { return nodes_.size(); }
  OpKind op(NodeId id) const { return nodes_.at(id.index).op; }

  /// Computes the terminal node (and every ancestor), caching all outputs.
  const Tensor& evaluate(const Bindings& bindings, NodeId terminal) {
    check_id(terminal);
    for (auto& n : nodes_) {
      n.evaluated = false;
      n.bound = nullptr;
    }
    evaluated_terminal_ = false;
    const auto live = ancestors(terminal);
    for (std::size_t i = 0; i <= terminal.index; ++i) {
      if (!live[i]) continue;
      Node& n = nodes_[i];
      if (n.op == OpKind::Input) {
        n.bound = bindings.find(n.name);
        if (!n.bound) throw GraphError(GraphError::Kind::UnboundInput, label(i), "input is not bound");
        if (!n.bound->all_finite()) throw GraphError(GraphError::Kind::NonFinite, label(i), "non-finite input");
      } else if (n.op != OpKind::Constant) {
        forward(i);
        if (!n.value.all_finite()) throw GraphError(GraphError::Kind::NonFinite, label(i), "non-finite output");
      }
      n.evaluated = true;
    }
    terminal_ = terminal.index;
    evaluated_terminal_ = true;
    return value(terminal);
  }

  const Tensor& value(NodeId id) const {
    check_id(id);
    const Node& n = nodes_[id.index];
    if (!n.evaluated) throw GraphError(GraphError::Kind::NotEvaluated, label(id.index), "not evaluated");
    return n.bound ? *n.bound : n.value;
  }

  /// Row indices kept by a top_k_rows node in output order (valid after evaluate).
  const std::vector<std::size_t>& selected_rows(NodeId id) const {
    check_id(id);
    const Node& n = nodes_[id.index];
    if (n.op != OpKind::TopKRows || !n.evaluated) {
      throw GraphError(GraphError::Kind::BadArgument, label(id.index), "not an evaluated top_k_rows node");
    }
    return n.indices;
  }

  /// Reverse pass from a scalar node. Returns gradients for every
  /// differentiable input, keyed by input name.
  Gradients backpropagate(NodeId loss) {
    check_id(loss);
    if (!evaluated_terminal_ || !nodes_[loss.index].evaluated) {
      throw GraphError(GraphError::Kind::NotEvaluated, label(loss.index), "backward before forward");
    }
    if (value(loss).size() != 1) {
      throw GraphError(GraphError::Kind::NotScalar, label(loss.index),
                       "loss must be scalar, got " + shape_string(value(loss).shape()));
    }
    const auto live = ancestors(loss);
    for (std::size_t i = 0; i <= loss.index; ++i) {
      Node& n = nodes_[i];
      if (live[i] && n.needs_grad) {
        const Shape& s = (n.bound ? *n.bound : n.value).shape();
        if (n.grad.shape() != s || n.grad.size() != shape_size(s)) {
          n.grad = Tensor(s);
        } else {
          n.grad.fill(0.0);
        }
      }
    }
    if (!nodes_[loss.index].needs_grad) return {};
    nodes_[loss.index].grad.fill(1.0);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      if (live[i] && nodes_[i].needs_grad) backward(i);
    }
    Gradients out;
    for (std::size_t i = 0; i <= loss.index; ++i) {
      const Node& n = nodes_[i];
      if (!(live[i] && n.op == OpKind::Input && n.needs_grad)) continue;
      // inputs sharing a name are the same tensor
      auto [it, fresh] = out.try_emplace(n.name, n.grad);
      if (!fresh) {
        for (std::size_t j = 0; j < n.grad.size(); ++j) it->second[j] += n.grad[j];
      }
    }
    return out;
  }

 private:
  struct Node {
    OpKind op = OpKind::Constant;
    std::vector<std::size_t> in;
    std::string name;
    bool needs_grad = true;
    // attributes
    std::size_t stride = 1, pad = 0, label = 0, count = 0, bins = 0;
    double factor = 1.0;
    RowOrder order = RowOrder::ByWeight;
    Shape target;
    std::vector<kernels::RoiWindow> windows;
    // caches
    const Tensor* bound = nullptr;
    Tensor value;
    Tensor grad;
    bool evaluated = false;
    std::vector<double> cols;
    std::vector<std::size_t> indices;
    kernels::ConvGeometry geom;
  };

  Node make(OpKind op, const std::vector<NodeId>& inputs) const {
    Node n;
    n.op = op;
    n.needs_grad = false;
    for (auto id : inputs) {
      check_id(id);
      n.in.push_back(id.index);
      n.needs_grad = n.needs_grad || nodes_[id.index].needs_grad;
    }
    return n;
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  void check_id(NodeId id) const {
    if (id.index >= nodes_.size()) {
      throw GraphError(GraphError::Kind::BadArgument, "node#" + std::to_string(id.index), "no such node");
    }
  }

  std::string label(std::size_t i) const {
    const Node& n = nodes_[i];
    std::string s = std::string(op_name(n.op)) + "#" + std::to_string(i);
    if (!n.name.empty()) s += " '" + n.name + "'";
    return s;
  }

  std::vector<bool> ancestors(NodeId terminal) const {
    std::vector<bool> live(nodes_.size(), false);
    live[terminal.index] = true;
    for (std::size_t i = terminal.index + 1; i-- > 0;) {
      if (!live[i]) continue;
      for (auto j : nodes_[i].in) live[j] = true;
    }
    return live;
  }

  const Tensor& in_value(std::size_t i, std::size_t slot) const {
    const Node& src = nodes_[nodes_[i].in[slot]];
    return src.bound ? *src.bound : src.value;
  }

  Tensor* in_grad(std::size_t i, std::size_t slot) {
    Node& src = nodes_[nodes_[i].in[slot]];
    return src.needs_grad ? &src.grad : nullptr;
  }

  [[noreturn]] void shape_error(std::size_t i, const std::string& what) const {
    throw GraphError(GraphError::Kind::ShapeMismatch, label(i), what);
  }

  void require_rank(std::size_t i, const Tensor& t, std::size_t rank, const char* role) const {
    if (t.rank() != rank) {
      shape_error(i, std::string(role) + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
    }
  }

  void forward(std::size_t i) {
    Node& n = nodes_[i];
    switch (n.op) {
      case OpKind::Input:
      case OpKind::Constant:
        return;

      case OpKind::MatMul: {
        const Tensor& a = in_value(i, 0);
        const Tensor& b = in_value(i, 1);
        require_rank(i, a, 2, "lhs");
        require_rank(i, b, 2, "rhs");
        if (a.dim(1) != b.dim(0)) shape_error(i, shape_string(a.shape()) + " * " + shape_string(b.shape()));
        n.value = Tensor({a.dim(0), b.dim(1)});
        kernels::gemm_nn(a.dim(0), b.dim(1), a.dim(1), a.data().data(), b.data().data(), n.value.data().data());
        return;
      }

      case OpKind::Add: {
        const Tensor& a = in_value(i, 0);
        const Tensor& b = in_value(i, 1);
        n.value = a;
        if (b.shape() == a.shape()) {
          for (std::size_t j = 0; j < a.size(); ++j) n.value[j] += b[j];
        } else if (a.rank() >= 1 && b.size() == a.shape().back() && (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1))) {
          const std::size_t w = b.size();
          for (std::size_t j = 0; j < a.size(); ++j) n.value[j] += b[j % w];
        } else {
          shape_error(i, shape_string(a.shape()) + " + " + shape_string(b.shape()));
        }
        return;
      }

      case OpKind::Scale: {
        n.value = in_value(i, 0);
        for (auto& v : n.value.values()) v *= n.factor;
        return;
      }

      case OpKind::Conv2d: {
        const Tensor& x = in_value(i, 0);
        const Tensor& w = in_value(i, 1);
        const Tensor& b = in_value(i, 2);
        require_rank(i, x, 3, "input");
        require_rank(i, w, 4, "weight");
        if (w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
          shape_error(i, "weight " + shape_string(w.shape()) + " vs input " + shape_string(x.shape()));
        }
        if (b.size() != w.dim(0)) shape_error(i, "bias " + shape_string(b.shape()) + " vs weight " + shape_string(w.shape()));
        n.geom = {x.dim(0), x.dim(1), x.dim(2), w.dim(2), n.stride, n.pad};
        if (!n.geom.valid()) shape_error(i, "kernel larger than padded input " + shape_string(x.shape()));
        n.cols.assign(n.geom.patch() * n.geom.cells(), 0.0);
        kernels::im2col(n.geom, x.data().data(), n.cols.data());
        n.value = Tensor({w.dim(0), n.geom.out_height(), n.geom.out_width()});
        kernels::conv_forward(n.geom, w.dim(0), w.data().data(), b.data().data(), n.cols.data(), n.value.data().data());
        return;
      }

      case OpKind::Relu: {
        n.value = in_value(i, 0);
        for (auto& v : n.value.values()) v = v > 0.0 ? v : 0.0;
        return;
      }

      case OpKind::GlobalAvgPool: {
        const Tensor& x = in_value(i, 0);
        require_rank(i, x, 3, "input");
        const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
        n.value = Tensor({1, c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (std::size_t p = 0; p < hw; ++p) s += x[ch * hw + p];
          n.value[ch] = s / static_cast<double>(hw);
        }
        return;
      }

      case OpKind::Softmax: {
        const Tensor& x = in_value(i, 0);
        if (x.rank() == 0) shape_error(i, "softmax of a scalar");
        const std::size_t w = x.shape().back();
        n.value = Tensor(x.shape());
        for (std::size_t r = 0; r < x.size() / w; ++r) {
          kernels::softmax_row(x.data().data() + r * w, n.value.data().data() + r * w, w);
        }
        return;
      }

      case OpKind::Concat: {
        const Tensor& first = in_value(i, 0);
        if (first.rank() == 0) shape_error(i, "concat of a scalar");
        const std::size_t outer = first.size() / first.shape().back();
        std::size_t total = 0;
        for (std::size_t s = 0; s < n.in.size(); ++s) {
          const Tensor& t = in_value(i, s);
          if (t.rank() != first.rank() || t.size() / t.shape().back() != outer) {
            shape_error(i, "part " + std::to_string(s) + " " + shape_string(t.shape()) + " vs " + shape_string(first.shape()));
          }
          total += t.shape().back();
        }
        Shape out = first.shape();
        out.back() = total;
        n.value = Tensor(out);
        std::size_t offset = 0;
        for (std::size_t s = 0; s < n.in.size(); ++s) {
          const Tensor& t = in_value(i, s);
          const std::size_t w = t.shape().back();
          for (std::size_t r = 0; r < outer; ++r) {
            std::copy_n(t.data().data() + r * w, w, n.value.data().data() + r * total + offset);
          }
          offset += w;
        }
        return;
      }

      case OpKind::ScaleRows: {
        const Tensor& x = in_value(i, 0);
        const Tensor& w = in_value(i, 1);
        require_rank(i, x, 2, "input");
        if (w.size() != x.dim(0)) shape_error(i, "weights " + shape_string(w.shape()) + " vs rows of " + shape_string(x.shape()));
        n.value = x;
        const std::size_t d = x.dim(1);
        for (std::size_t r = 0; r < x.dim(0); ++r) {
          for (std::size_t c = 0; c < d; ++c) n.value[r * d + c] *= w[r];
        }
        return;
      }

      case OpKind::SumRows: {
        // Each column is summed in ascending value order, which makes the
        // result independent of row order.
        const Tensor& x = in_value(i, 0);
        require_rank(i, x, 2, "input");
        const std::size_t rows = x.dim(0), d = x.dim(1);
        n.value = Tensor({1, d});
        std::vector<double> column(rows);
        for (std::size_t c = 0; c < d; ++c) {
          for (std::size_t r = 0; r < rows; ++r) column[r] = x[r * d + c];
          std::sort(column.begin(), column.end());
          double s = 0.0;
          for (double v : column) s += v;
          n.value[c] = s;
        }
        return;
      }

      case OpKind::Sum: {
        const Tensor& x = in_value(i, 0);
        double s = 0.0;
        for (double v : x.values()) s += v;
        n.value = Tensor::scalar(s);
        return;
      }

      case OpKind::CrossEntropy: {
        const Tensor& z = in_value(i, 0);
        if (n.label >= z.size()) {
          throw GraphError(GraphError::Kind::BadArgument, label(i),
                           "label " + std::to_string(n.label) + " outside " + std::to_string(z.size()) + " classes");
        }
        n.value = Tensor::scalar(kernels::log_sum_exp(z.data().data(), z.size()) - z[n.label]);
        return;
      }

      case OpKind::RoiMaxPool: {
        const Tensor& m = in_value(i, 0);
        require_rank(i, m, 3, "feature map");
        const std::size_t c = m.dim(0), h = m.dim(1), w = m.dim(2);
        const std::size_t per = c * n.bins * n.bins;
        for (const auto& win : n.windows) {
          if (win.y0 >= win.y1 || win.x0 >= win.x1 || win.y1 > h || win.x1 > w) {
            shape_error(i, "window outside feature map " + shape_string(m.shape()));
          }
        }
        n.value = Tensor({n.windows.size(), per});
        n.indices.assign(n.windows.size() * per, 0);
        for (std::size_t o = 0; o < n.windows.size(); ++o) {
          kernels::roi_max_pool(m.data().data(), c, h, w, n.windows[o], n.bins, n.value.data().data() + o * per,
                                n.indices.data() + o * per);
        }
        return;
      }

      case OpKind::ToCells: {
        const Tensor& m = in_value(i, 0);
        require_rank(i, m, 3, "feature map");
        const std::size_t c = m.dim(0), hw = m.dim(1) * m.dim(2);
        n.value = Tensor({hw, c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t p = 0; p < hw; ++p) n.value[p * c + ch] = m[ch * hw + p];
        }
        return;
      }

      case OpKind::Reshape: {
        const Tensor& x = in_value(i, 0);
        if (shape_size(n.target) != x.size()) shape_error(i, shape_string(x.shape()) + " -> " + shape_string(n.target));
        n.value = x.reshaped(n.target);
        return;
      }

      case OpKind::TileRows: {
        const Tensor& x = in_value(i, 0);
        if (n.count == 0) shape_error(i, "tile count 0");
        const std::size_t d = x.size();
        n.value = Tensor({n.count, d});
        for (std::size_t r = 0; r < n.count; ++r) std::copy_n(x.data().data(), d, n.value.data().data() + r * d);
        return;
      }

      case OpKind::TopKRows: {
        const Tensor& x = in_value(i, 0);
        const Tensor& w = in_value(i, 1);
        require_rank(i, x, 2, "input");
        if (w.size() != x.dim(0)) shape_error(i, "weights " + shape_string(w.shape()) + " vs rows of " + shape_string(x.shape()));
        const std::size_t rows = x.dim(0), d = x.dim(1), k = n.count;
        std::vector<std::size_t> order(rows);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
        order.resize(std::min(k, rows));
        if (n.order == RowOrder::ByIndex) std::sort(order.begin(), order.end());
        n.indices = order;
        n.value = Tensor({k, d});
        for (std::size_t s = 0; s < order.size(); ++s) {
          std::copy_n(x.data().data() + order[s] * d, d, n.value.data().data() + s * d);
        }
        return;
      }
    }
  }

  void backward(std::size_t i) {
    Node& n = nodes_[i];
    const Tensor& dy = n.grad;
    switch (n.op) {
      case OpKind::Input:
      case OpKind::Constant:
        return;

      case OpKind::MatMul: {
        const Tensor& a = in_value(i, 0);
        const Tensor& b = in_value(i, 1);
        const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
        if (Tensor* da = in_grad(i, 0)) kernels::gemm_nt(m, k, cols, dy.data().data(), b.data().data(), da->data().data());
        if (Tensor* db = in_grad(i, 1)) kernels::gemm_tn(k, cols, m, a.data().data(), dy.data().data(), db->data().data());
        return;
      }

      case OpKind::Add: {
        if (Tensor* da = in_grad(i, 0)) {
          for (std::size_t j = 0; j < dy.size(); ++j) (*da)[j] += dy[j];
        }
        if (Tensor* db = in_grad(i, 1)) {
          const std::size_t w = db->size();
          for (std::size_t j = 0; j < dy.size(); ++j) (*db)[j % w] += dy[j];
        }
        return;
      }

      case OpKind::Scale: {
        if (Tensor* dx = in_grad(i, 0)) {
          for (std::size_t j = 0; j < dy.size(); ++j) (*dx)[j] += n.factor * dy[j];
        }
        return;
      }

      case OpKind::Conv2d: {
        const Tensor& w = in_value(i, 1);
        const std::size_t out_ch = w.dim(0), patch = n.geom.patch(), cells = n.geom.cells();
        if (Tensor* dw = in_grad(i, 1)) {
          // dW = dy * cols^T, with cols transposed first so the product runs
          // through the blocked kernel
          std::vector<double> cols_t(patch * cells);
          for (std::size_t p = 0; p < patch; ++p) {
            for (std::size_t c = 0; c < cells; ++c) cols_t[c * patch + p] = n.cols[p * cells + c];
          }
          kernels::gemm_nn(out_ch, patch, cells, dy.data().data(), cols_t.data(), dw->data().data());
        }
        if (Tensor* db = in_grad(i, 2)) {
          for (std::size_t o = 0; o < out_ch; ++o) {
            double s = 0.0;
            for (std::size_t p = 0; p < cells; ++p) s += dy[o * cells + p];
            (*db)[o] += s;
          }
        }
        if (Tensor* dx = in_grad(i, 0)) {
          std::vector<double> dcols(patch * cells, 0.0);
          kernels::gemm_tn(patch, cells, out_ch, w.data().data(), dy.data().data(), dcols.data());
          kernels::col2im_add(n.geom, dcols.data(), dx->data().data());
        }
        return;
      }

      case OpKind::Relu: {
        if (Tensor* dx = in_grad(i, 0)) {
          const Tensor& x = in_value(i, 0);
          for (std::size_t j = 0; j < dy.size(); ++j) {
            if (x[j] > 0.0) (*dx)[j] += dy[j];
          }
        }
        return;
      }

      case OpKind::GlobalAvgPool: {
        if (Tensor* dx = in_grad(i, 0)) {
          const Tensor& x = in_value(i, 0);
          const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = dy[ch] / static_cast<double>(hw);
            for (std::size_t p = 0; p < hw; ++p) (*dx)[ch * hw + p] += g;
          }
        }
        return;
      }

      case OpKind::Softmax: {
        if (Tensor* dx = in_grad(i, 0)) {
          const Tensor& y = n.value;
          const std::size_t w = y.shape().back();
          for (std::size_t r = 0; r < y.size() / w; ++r) {
            double inner = 0.0;
            for (std::size_t j = 0; j < w; ++j) inner += dy[r * w + j] * y[r * w + j];
            for (std::size_t j = 0; j < w; ++j) (*dx)[r * w + j] += y[r * w + j] * (dy[r * w + j] - inner);
          }
        }
        return;
      }

      case OpKind::Concat: {
        const std::size_t total = n.value.shape().back();
        const std::size_t outer = n.value.size() / total;
        std::size_t offset = 0;
        for (std::size_t s = 0; s < n.in.size(); ++s) {
          const std::size_t w = in_value(i, s).shape().back();
          if (Tensor* dx = in_grad(i, s)) {
            for (std::size_t r = 0; r < outer; ++r) {
              for (std::size_t j = 0; j < w; ++j) (*dx)[r * w + j] += dy[r * total + offset + j];
            }
          }
          offset += w;
        }
        return;
      }

      case OpKind::ScaleRows: {
        const Tensor& x = in_value(i, 0);
        const Tensor& w = in_value(i, 1);
        const std::size_t rows = x.dim(0), d = x.dim(1);
        Tensor* dx = in_grad(i, 0);
        Tensor* dw = in_grad(i, 1);
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            if (dx) (*dx)[r * d + c] += w[r] * dy[r * d + c];
            acc += x[r * d + c] * dy[r * d + c];
          }
          if (dw) (*dw)[r] += acc;
        }
        return;
      }

      case OpKind::SumRows: {
        if (Tensor* dx = in_grad(i, 0)) {
          const std::size_t d = dy.size();
          for (std::size_t j = 0; j < dx->size(); ++j) (*dx)[j] += dy[j % d];
        }
        return;
      }

      case OpKind::Sum: {
        if (Tensor* dx = in_grad(i, 0)) {
          for (auto& v : dx->values()) v += dy[0];
        }
        return;
      }

      case OpKind::CrossEntropy: {
        if (Tensor* dz = in_grad(i, 0)) {
          const Tensor& z = in_value(i, 0);
          std::vector<double> p(z.size());
          kernels::softmax_row(z.data().data(), p.data(), z.size());
          p[n.label] -= 1.0;
          for (std::size_t j = 0; j < p.size(); ++j) (*dz)[j] += dy[0] * p[j];
        }
        return;
      }

      case OpKind::RoiMaxPool: {
        if (Tensor* dm = in_grad(i, 0)) {
          for (std::size_t j = 0; j < n.indices.size(); ++j) (*dm)[n.indices[j]] += dy[j];
        }
        return;
      }

      case OpKind::ToCells: {
        if (Tensor* dm = in_grad(i, 0)) {
          const Tensor& m = in_value(i, 0);
          const std::size_t c = m.dim(0), hw = m.dim(1) * m.dim(2);
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t p = 0; p < hw; ++p) (*dm)[ch * hw + p] += dy[p * c + ch];
          }
        }
        return;
      }

      case OpKind::Reshape: {
        if (Tensor* dx = in_grad(i, 0)) {
          for (std::size_t j = 0; j < dy.size(); ++j) (*dx)[j] += dy[j];
        }
        return;
      }

      case OpKind::TileRows: {
        if (Tensor* dx = in_grad(i, 0)) {
          const std::size_t d = dx->size();
          for (std::size_t j = 0; j < dy.size(); ++j) (*dx)[j % d] += dy[j];
        }
        return;
      }

      case OpKind::TopKRows: {
        if (Tensor* dx = in_grad(i, 0)) {
          const std::size_t d = dx->dim(1);
          for (std::size_t s = 0; s < n.indices.size(); ++s) {
            for (std::size_t c = 0; c < d; ++c) (*dx)[n.indices[s] * d + c] += dy[s * d + c];
          }
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::size_t terminal_ = 0;
  bool evaluated_terminal_ = false;
};

}  // namespace ocp::diff
