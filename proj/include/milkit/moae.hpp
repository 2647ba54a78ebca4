#pragma once

#include <string>
#include <vector>

#include "milkit/tape.hpp"

namespace milkit::moae {

struct Config {
  int d_model = 512;
  int h = 8;       // total heads
  int h_s = 2;     // always-on shared heads
  int top_k = 2;   // routed heads activated per token
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  bool learn_alphas = false;  // softplus-parameterized alphas instead of constants

  int d_head() const { return d_model / h; }
  int routed() const { return h - h_s; }
  void validate() const;
};

// wq/wk/wv plus per-head output maps wo{i}. Shared with the vanilla
// multi-head path, which has no router.
void add_attention_params(ParamStore& store, const Config& cfg, const std::string& prefix,
                          Rng& rng);
void add_router_params(ParamStore& store, const Config& cfg, const std::string& prefix, Rng& rng);

struct Gates {
  Value shared;  // n x h_s, valid when h_s > 0
  Value routed;  // n x (h - h_s), valid when routed > 0
};

// Per-token gates of the mixture. Shared block: alpha1 * softmax over shared
// positions. Routed block: alpha2 * softmax over routed positions with a hard
// Top-K mask; the mask is a constant during backprop, gradients flow only
// through the kept softmax entries. Ties break toward the lower head index.
// When replay is false the mask is captured into topk_mask from the forward
// logits; when true the stored mask is reused.
Gates router_gates(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
                   const Config& cfg, Tensor& topk_mask, bool replay);

// Dense n x h gate matrix for inspection/tests.
Tensor dense_gates(const Tape& tape, const Gates& gates, const Config& cfg);

// Scaled dot-product attention on one head's slice of precomputed Q/K/V.
// key_offsets is added to every row of attention logits (-1e30 on dead keys).
Value attention_head(Tape& tape, Value q, Value k, Value v, int head, const Config& cfg,
                     const std::vector<double>& key_offsets);

// Convenience overload computing Q/K/V from tokens, all keys alive.
Value attention_head(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
                     const Config& cfg, int head);

// Gated mixture over heads: sum_i g_i * (H^i wo_i).
Value forward(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
              const Config& cfg, const std::vector<double>& key_offsets, Tensor& topk_mask,
              bool replay);

// Vanilla multi-head attention (all gates 1, no router).
Value vanilla_forward(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
                      const Config& cfg, const std::vector<double>& key_offsets);

}  // namespace milkit::moae
