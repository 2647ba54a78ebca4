#pragma once

#include <functional>
#include <vector>

#include "milkit/param_store.hpp"
#include "milkit/tensor.hpp"

namespace milkit {

// Handle into a Tape.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops record their output value and a backward closure;
// backward() walks the tape once in reverse and flushes leaf gradients into
// their ParamStore slots. A tape lives for one forward/backward pass.
class Tape {
 public:
  Value constant(Tensor v);
  Value param(ParamStore& store, const std::string& name);

  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);  // a * b^T
  Value transpose(Value a);
  Value add(Value a, Value b);                  // same shape
  Value add_rowvec(Value a, Value b);           // rows of a + vector b
  Value mul(Value a, Value b);                  // elementwise, same shape
  Value mul_const(Value a, const Tensor& mask); // elementwise by a constant
  Value mul_colvec(Value a, Value col);         // row i of a scaled by col[i]
  Value scale(Value a, double c);
  Value mul_scalar_node(Value a, Value s);      // s is a 1-element node
  // Softmax along the last axis; key_offsets (when given) is added to every
  // row of the logits as a constant, one entry per column.
  Value row_softmax(Value a, const std::vector<double>* key_offsets = nullptr);
  Value layer_norm(Value x, Value gamma, Value beta, double eps = 1e-5);
  Value gelu(Value a);
  Value tanh_act(Value a);
  Value sigmoid(Value a);
  Value softplus(Value a);
  Value sum(Value a);        // scalar
  Value mean_rows(Value a);  // column means -> 1 x d
  Value max_rows(Value a);   // column maxima -> 1 x d (argmax subgradient)
  Value slice_cols(Value a, int start, int len);
  Value slice_rows(Value a, int start, int len);
  Value concat_rows(Value a, Value b);
  Value select_rows(Value a, std::vector<int> idx);
  // -log softmax(logits)[label] on a rank-1 logit vector, log-sum-exp form.
  Value ce_loss(Value logits, int label);
  // mean over rows of -log softmax(row)[label].
  Value nll_mean_rows(Value sims, int label);
  // mean over rows of softmax(row)[label] (the literal probability form).
  Value prob_mean_rows(Value sims, int label);

  const Tensor& val(Value v) const { return nodes_[v.id].value; }
  double scalar(Value v) const { return nodes_[v.id].value.at(std::size_t{0}); }

  // Seeds d(out) = seed and accumulates gradients; leaf grads land in their
  // ParamStore slots. May be called once per tape.
  void backward(Value out, double seed = 1.0);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    Tensor* sink = nullptr;  // leaf: gradient destination
    std::function<void(Tape&, Node&)> backward;
  };

  Value push(Tensor value, std::function<void(Tape&, Node&)> bw = nullptr);
  Tensor& grad_of(Value v);
  void accumulate(Value v, const Tensor& g);
  void accumulate_at(int id, std::size_t flat_index, double g);

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace milkit
