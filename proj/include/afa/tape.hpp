#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "afa/tensor.hpp"

namespace afa {

template <class S>
class GradTape;

// Handle to a tape node. Cheap to copy; valid while the tape lives.
template <class S>
struct Var {
  GradTape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& value() const { return tape->value(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

// Record of a forward pass over matrix primitives. Each recorded op carries a
// closure that routes the node's accumulated gradient to its parents; running
// the nodes in reverse yields exactly one gradient per participating node.
// A tape is confined to one training step on one thread and can be walked
// backward once.
template <class S>
class GradTape {
 public:
  using BackFn = std::function<void(GradTape&, int)>;

  Var<S> leaf(Mat<S> v) { return push(std::move(v), nullptr); }

  Var<S> push(Mat<S> v, BackFn back) {
    nodes_.push_back(Node{std::move(v), Mat<S>(), std::move(back), false});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<S>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  // Accumulation target; allocates a zero gradient on first touch.
  Mat<S>& grad_acc(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.touched) {
      n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
      n.touched = true;
    }
    return n.grad;
  }

  // Read-only gradient of a node that has already been touched.
  const Mat<S>& grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.touched) throw error("GradTape: reading gradient of an untouched node");
    return n.grad;
  }

  bool touched(int id) const { return nodes_[static_cast<size_t>(id)].touched; }

  // Gradient of v after backward(); zero for nodes the loss never reached.
  Mat<S> grad_of(Var<S> v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.touched) return Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var<S> loss) {
    if (loss.tape != this) throw error("GradTape: loss recorded on a different tape");
    if (used_) throw error("GradTape: tape already consumed by a previous backward pass");
    used_ = true;
    const Mat<S>& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) throw error("GradTape: loss must be a scalar");
    grad_acc(loss.id)(0, 0) = S(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.touched && n.back) n.back(*this, i);
    }
  }

  bool consumed() const { return used_; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    BackFn back;
    bool touched;
  };

  std::vector<Node> nodes_;
  bool used_ = false;
};

}  // namespace afa
