#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gaitveil/tensor.hpp"

namespace gaitveil {

// Additive guard inside the Euclidean norm so that normalization stays
// differentiable at the zero vector: norm(v) = sqrt(dot(v,v) + kNormGuard).
inline constexpr double kNormGuard = 1e-12;

using NodeId = std::size_t;

// Gradients of a scalar root with respect to requires-grad leaves.
// Leaves that do not influence the root map to zero tensors.
class GradientMap {
 public:
  void insert(NodeId id, Tensor grad) { grads_.emplace(id, std::move(grad)); }

  const Tensor& at(NodeId id) const {
    auto it = grads_.find(id);
    if (it == grads_.end())
      throw std::out_of_range("GradientMap: node " + std::to_string(id) +
                              " is not a requires-grad leaf");
    return it->second;
  }

  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor> grads_;
};

// Records a single forward pass of dense-tensor primitives and plays it
// back in reverse for exact reverse-mode gradients. A tape is confined to
// one thread; values recorded on it are never mutated afterwards.
//
// Intended granularity: one tape per optimization iteration, freed after
// backward.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Registers an owned input value. Gradients are reported only for leaves
  // created with requires_grad = true.
  NodeId leaf(Tensor value, bool requires_grad = false) {
    require_finite(value, "leaf");
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  // Registers a frozen external tensor without copying it. The pointee must
  // outlive the tape and was validated finite by its owner at construction.
  NodeId constant(const Tensor* value) {
    Node n;
    n.op = Op::kConstRef;
    n.external = value;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId add(NodeId a, NodeId b) { return push_binary(Op::kAdd, "add", a, b); }
  NodeId sub(NodeId a, NodeId b) { return push_binary(Op::kSub, "sub", a, b); }
  NodeId mul(NodeId a, NodeId b) { return push_binary(Op::kMul, "mul", a, b); }
  NodeId div(NodeId a, NodeId b) { return push_binary(Op::kDiv, "div", a, b); }

  // c * x
  NodeId scale(NodeId x, double c) { return push_scalar_param(Op::kScale, "scale", x, c); }
  // x + c
  NodeId shift(NodeId x, double c) { return push_scalar_param(Op::kShift, "shift", x, c); }

  NodeId matvec(NodeId m, NodeId v) {
    const Tensor& mt = value(m);
    const Tensor& vt = value(v);
    if (mt.rank() != 2 || vt.rank() != 1 || mt.shape[1] != vt.shape[0])
      throw ShapeError("matvec", mt.shape, vt.shape);
    return push(Op::kMatVec, {m, v});
  }

  NodeId sigmoid(NodeId x) { return push(Op::kSigmoid, {x}); }
  NodeId tanh(NodeId x) { return push(Op::kTanh, {x}); }

  NodeId sum(NodeId x) { return push(Op::kSum, {x}); }
  NodeId mean(NodeId x) { return push(Op::kMean, {x}); }

  NodeId dot(NodeId a, NodeId b) {
    require_same_shape("dot", value(a), value(b));
    return push(Op::kDot, {a, b});
  }

  // Guarded Euclidean norm: sqrt(dot(v,v) + 1e-12).
  NodeId norm(NodeId v) { return push(Op::kNorm, {v}); }

  // Scalar node broadcast to the given shape.
  NodeId broadcast(NodeId s, Shape shape) {
    if (!value(s).is_scalar())
      throw ShapeError("broadcast", "input of shape " + shape_to_string(value(s).shape) +
                                        " is not a scalar");
    return push(Op::kBroadcast, {s}, std::move(shape));
  }

  // Scalar nodes gathered into a vector of length n.
  NodeId stack(std::span<const NodeId> scalars) {
    if (scalars.empty()) throw ShapeError("stack", "empty input list");
    for (NodeId s : scalars)
      if (!value(s).is_scalar())
        throw ShapeError("stack", "input of shape " + shape_to_string(value(s).shape) +
                                      " is not a scalar");
    return push(Op::kStack, std::vector<NodeId>(scalars.begin(), scalars.end()));
  }

  NodeId reshape(NodeId x, Shape shape) {
    if (shape_numel(shape) != value(x).size())
      throw ShapeError("reshape", value(x).shape, shape);
    return push(Op::kReshape, {x}, std::move(shape));
  }

  const Tensor& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Reverse pass from a scalar root. Visits recorded nodes in strict reverse
  // order (creation order is topological by construction). Const: adjoint
  // buffers are local, so independent backward calls on one tape compose.
  GradientMap backward(NodeId root) const {
    if (root >= nodes_.size()) throw std::out_of_range("backward: unknown node");
    if (!value(root).is_scalar())
      throw ShapeError("backward", "root of shape " + shape_to_string(value(root).shape) +
                                       " is not a scalar");

    std::vector<Tensor> adj(root + 1);
    adj[root] = Tensor::scalar(1.0);

    for (std::size_t i = root + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (adj[i].data.empty() || n.inputs.empty()) continue;
      propagate(n, adj[i], adj);
    }

    GradientMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op != Op::kLeaf || !n.requires_grad) continue;
      Tensor g = (i <= root && !adj[i].data.empty()) ? std::move(adj[i])
                                                     : Tensor::zeros(value(i).shape);
      require_finite(g, "backward gradient of leaf " + std::to_string(i));
      out.insert(i, std::move(g));
    }
    return out;
  }

  // Recomputes every recorded output from its inputs and checks the replay
  // is bit-identical to what the tape stored.
  bool replay_matches() const {
    for (const Node& n : nodes_) {
      if (n.op == Op::kLeaf || n.op == Op::kConstRef) continue;
      Tensor recomputed = evaluate(n);
      if (recomputed.shape != n.value.shape) return false;
      if (std::memcmp(recomputed.data.data(), n.value.data.data(),
                      recomputed.data.size() * sizeof(double)) != 0)
        return false;
    }
    return true;
  }

 private:
  enum class Op {
    kLeaf,
    kConstRef,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kScale,
    kShift,
    kMatVec,
    kSigmoid,
    kTanh,
    kSum,
    kMean,
    kDot,
    kNorm,
    kBroadcast,
    kStack,
    kReshape,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> inputs;
    Tensor value;                     // owned output (or leaf value)
    const Tensor* external = nullptr; // set only for kConstRef
    Shape out_shape;                  // for kBroadcast / kReshape
    double param = 0.0;               // for kScale / kShift
    bool requires_grad = false;
    bool needs_grad = false;
  };

  static double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  }

  NodeId push(Op op, std::vector<NodeId> inputs, Shape out_shape = {}, double param = 0.0) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.out_shape = std::move(out_shape);
    n.param = param;
    for (NodeId in : n.inputs) n.needs_grad = n.needs_grad || nodes_.at(in).needs_grad;
    n.value = evaluate(n);
    require_finite(n.value, op_name(op));
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push_binary(Op op, const char* name, NodeId a, NodeId b) {
    require_same_shape(name, value(a), value(b));
    return push(op, {a, b});
  }

  NodeId push_scalar_param(Op op, const char* name, NodeId x, double c) {
    if (!std::isfinite(c)) throw NonFiniteError(name);
    return push(op, {x}, {}, c);
  }

  Tensor evaluate(const Node& n) const {
    auto in = [&](std::size_t k) -> const Tensor& { return value(n.inputs[k]); };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstRef:
        return n.external ? *n.external : n.value;
      case Op::kAdd: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += in(1)[i];
        return out;
      }
      case Op::kSub: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= in(1)[i];
        return out;
      }
      case Op::kMul: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= in(1)[i];
        return out;
      }
      case Op::kDiv: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= in(1)[i];
        return out;
      }
      case Op::kScale: {
        Tensor out = in(0);
        for (double& v : out.data) v *= n.param;
        return out;
      }
      case Op::kShift: {
        Tensor out = in(0);
        for (double& v : out.data) v += n.param;
        return out;
      }
      case Op::kMatVec: {
        const Tensor& m = in(0);
        const Tensor& v = in(1);
        std::size_t rows = m.shape[0], cols = m.shape[1];
        Tensor out = Tensor::zeros({rows});
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          const double* row = m.data.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) acc += row[c] * v[c];
          out[r] = acc;
        }
        return out;
      }
      case Op::kSigmoid: {
        Tensor out = in(0);
        for (double& v : out.data) v = stable_sigmoid(v);
        return out;
      }
      case Op::kTanh: {
        Tensor out = in(0);
        for (double& v : out.data) v = std::tanh(v);
        return out;
      }
      case Op::kSum: {
        double acc = 0.0;
        for (double v : in(0).data) acc += v;
        return Tensor::scalar(acc);
      }
      case Op::kMean: {
        double acc = 0.0;
        for (double v : in(0).data) acc += v;
        return Tensor::scalar(acc / static_cast<double>(in(0).size()));
      }
      case Op::kDot: {
        double acc = 0.0;
        for (std::size_t i = 0; i < in(0).size(); ++i) acc += in(0)[i] * in(1)[i];
        return Tensor::scalar(acc);
      }
      case Op::kNorm: {
        double acc = kNormGuard;
        for (double v : in(0).data) acc += v * v;
        return Tensor::scalar(std::sqrt(acc));
      }
      case Op::kBroadcast:
        return Tensor::full(n.out_shape, in(0).item());
      case Op::kStack: {
        std::vector<double> d(n.inputs.size());
        for (std::size_t i = 0; i < n.inputs.size(); ++i) d[i] = in(i).item();
        return Tensor::vector(std::move(d));
      }
      case Op::kReshape: {
        Tensor out = in(0);
        out.shape = n.out_shape;
        return out;
      }
    }
    throw std::logic_error("unreachable op");
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::kLeaf: return "leaf";
      case Op::kConstRef: return "constant";
      case Op::kAdd: return "add";
      case Op::kSub: return "sub";
      case Op::kMul: return "mul";
      case Op::kDiv: return "div";
      case Op::kScale: return "scale";
      case Op::kShift: return "shift";
      case Op::kMatVec: return "matvec";
      case Op::kSigmoid: return "sigmoid";
      case Op::kTanh: return "tanh";
      case Op::kSum: return "sum";
      case Op::kMean: return "mean";
      case Op::kDot: return "dot";
      case Op::kNorm: return "norm";
      case Op::kBroadcast: return "broadcast";
      case Op::kStack: return "stack";
      case Op::kReshape: return "reshape";
    }
    return "?";
  }

  // Lazily initialized adjoint slot for node id.
  Tensor& adj_slot(std::vector<Tensor>& adj, NodeId id) const {
    if (adj[id].data.empty()) adj[id] = Tensor::zeros(value(id).shape);
    return adj[id];
  }

  bool wants_grad(NodeId id) const { return nodes_[id].needs_grad; }

  void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& adj) const {
    auto in = [&](std::size_t k) -> const Tensor& { return value(n.inputs[k]); };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstRef:
        return;
      case Op::kAdd: {
        if (wants_grad(n.inputs[0])) {
          Tensor& da = adj_slot(adj, n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& db = adj_slot(adj, n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
        return;
      }
      case Op::kSub: {
        if (wants_grad(n.inputs[0])) {
          Tensor& da = adj_slot(adj, n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& db = adj_slot(adj, n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
        return;
      }
      case Op::kMul: {
        if (wants_grad(n.inputs[0])) {
          Tensor& da = adj_slot(adj, n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * in(1)[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& db = adj_slot(adj, n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * in(0)[i];
        }
        return;
      }
      case Op::kDiv: {
        if (wants_grad(n.inputs[0])) {
          Tensor& da = adj_slot(adj, n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / in(1)[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& db = adj_slot(adj, n.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i)
            db[i] -= g[i] * in(0)[i] / (in(1)[i] * in(1)[i]);
        }
        return;
      }
      case Op::kScale: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& da = adj_slot(adj, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += n.param * g[i];
        return;
      }
      case Op::kShift:
      case Op::kReshape: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& da = adj_slot(adj, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        return;
      }
      case Op::kMatVec: {
        const Tensor& m = in(0);
        const Tensor& v = in(1);
        std::size_t rows = m.shape[0], cols = m.shape[1];
        if (wants_grad(n.inputs[0])) {
          Tensor& dm = adj_slot(adj, n.inputs[0]);
          for (std::size_t r = 0; r < rows; ++r) {
            double gr = g[r];
            double* drow = dm.data.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) drow[c] += gr * v[c];
          }
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& dv = adj_slot(adj, n.inputs[1]);
          for (std::size_t r = 0; r < rows; ++r) {
            double gr = g[r];
            const double* row = m.data.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) dv[c] += row[c] * gr;
          }
        }
        return;
      }
      case Op::kSigmoid: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& da = adj_slot(adj, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double y = n.value[i];
          da[i] += g[i] * y * (1.0 - y);
        }
        return;
      }
      case Op::kTanh: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& da = adj_slot(adj, n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double y = n.value[i];
          da[i] += g[i] * (1.0 - y * y);
        }
        return;
      }
      case Op::kSum: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& da = adj_slot(adj, n.inputs[0]);
        double gs = g.item();
        for (double& v : da.data) v += gs;
        return;
      }
      case Op::kMean: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& da = adj_slot(adj, n.inputs[0]);
        double gs = g.item() / static_cast<double>(in(0).size());
        for (double& v : da.data) v += gs;
        return;
      }
      case Op::kDot: {
        double gs = g.item();
        if (wants_grad(n.inputs[0])) {
          Tensor& da = adj_slot(adj, n.inputs[0]);
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs * in(1)[i];
        }
        if (wants_grad(n.inputs[1])) {
          Tensor& db = adj_slot(adj, n.inputs[1]);
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += gs * in(0)[i];
        }
        return;
      }
      case Op::kNorm: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& dv = adj_slot(adj, n.inputs[0]);
        double scale = g.item() / n.value.item();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += scale * in(0)[i];
        return;
      }
      case Op::kBroadcast: {
        if (!wants_grad(n.inputs[0])) return;
        Tensor& ds = adj_slot(adj, n.inputs[0]);
        double acc = 0.0;
        for (double v : g.data) acc += v;
        ds.data[0] += acc;
        return;
      }
      case Op::kStack: {
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          if (!wants_grad(n.inputs[i])) continue;
          adj_slot(adj, n.inputs[i]).data[0] += g[i];
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace gaitveil
