#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "armour/tensor.hpp"

namespace armour {

// Reverse-mode differentiation over the tensor op set. One tape records one
// forward pass; replaying it backward from a scalar loss yields a gradient
// per leaf. Single-writer: a tape is not shared across threads.
class GradTape {
 public:
  using Var = std::size_t;

  Var leaf(Tensor value);
  bool is_leaf(Var v) const { return nodes_[v].leaf; }
  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_[v].value; }

  Var matmul(Var a, Var b);
  Var matmul_transpose_b(Var a, Var b);
  Var transpose(Var a);
  Var softmax_rows(Var a);
  Var concat_last_axis(Var a, Var b);
  Var add(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double c);
  Var add_row_bias(Var m, Var bias);
  Var slice_cols(Var m, std::size_t c0, std::size_t c1);
  Var mask_diagonal(Var m, double sentinel);
  Var gelu(Var a);
  Var mean_rows(Var m);
  Var sum(Var a);  // scalar, shape [1]
  // Gathers table rows by index; the table is typically an embedding matrix.
  Var lookup_rows(Var table, std::vector<std::size_t> ids);
  // Mean softmax cross-entropy over rows of `logits` against integer labels.
  Var cross_entropy_with_logits(Var logits, std::vector<std::size_t> labels);

  // Gradients for every leaf on the tape. Leaves the loss does not reach get
  // all-zero gradients of the leaf's shape.
  std::unordered_map<Var, Tensor> backward(Var loss) const;

 private:
  using BackFn = std::function<void(const GradTape&, const Tensor& gout, std::vector<Tensor>& grads)>;

  struct Node {
    Tensor value;
    std::vector<Var> parents;
    BackFn back;
    bool leaf = false;
  };

  Var push(Tensor value, std::vector<Var> parents, BackFn back);
  static void accumulate(std::vector<Tensor>& grads, const GradTape& tape, Var v, const Tensor& g);

  std::vector<Node> nodes_;
};

}  // namespace armour
