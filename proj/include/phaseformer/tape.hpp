#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "phaseformer/tensor.hpp"

namespace phaseformer {

class Tape;

// Handle into a Tape. Cheap to copy; only valid for the tape that made it.
struct Var {
  uint32_t idx = UINT32_MAX;
  bool valid() const { return idx != UINT32_MAX; }
};

// Reverse-mode tape. Each op appends a node holding the forward value and a
// closure that scatters the node's gradient into its parents. Replaying the
// closures in reverse creation order after seeding the loss node populates
// gradients for every leaf created with requires_grad.
//
// A Tape is confined to one logical thread; build one per forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(const Tensor& value, bool requires_grad = true);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.idx].value; }
  // Gradient of the last backward() with respect to node v; zeros if the
  // node was never reached.
  const std::vector<double>& grad(Var v);
  size_t num_nodes() const { return nodes_.size(); }

  // ---- primitive ops ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var add_rowvec(Var a, Var b);  // b is 1-by-n, broadcast over rows of a
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var slice_rows(Var a, size_t r0, size_t n);
  Var slice_cols(Var a, size_t c0, size_t n);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var gather_rows(Var a, std::vector<size_t> index);
  Var repeat_rows(Var a, size_t times);             // tile whole matrix
  Var repeat_interleave_rows(Var a, size_t times);  // repeat each row
  Var mean_rows(Var a);                             // 1-by-n column mean
  Var softmax_rows(Var a);
  // Softmax over in-mask entries of a vector; off-mask outputs are exact 0.0
  // and receive zero gradient. Throws segment error on an all-false mask.
  Var masked_softmax(Var scores, const std::vector<uint8_t>& mask);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var gelu(Var x);
  Var linear(Var x, Var w, Var b);  // x*w + b, b broadcast over rows
  Var cross_entropy(Var logits, size_t label);  // -log softmax(logits)[label]

  void backward(Var scalar_loss);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;     // lazily sized
    std::function<void()> back;   // empty when nothing upstream needs grads
    bool needs_grad = false;
  };

  Var push(Tensor value, bool needs_grad, std::function<void()> back);
  std::vector<double>& gbuf(uint32_t i);
  bool wants(uint32_t i) const { return nodes_[i].needs_grad; }
  const Tensor& val(uint32_t i) const { return nodes_[i].value; }

  // deque keeps node references stable as the tape grows, so values returned
  // by value()/grad() stay valid for the tape's lifetime.
  std::deque<Node> nodes_;
};

}  // namespace phaseformer
