#include "milkit/moae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace milkit::moae {

void Config::validate() const {
  if (d_model <= 0 || h <= 0) throw ConfigError("moae: d_model and h must be positive");
  if (d_model % h != 0)
    throw ConfigError("moae: h=" + std::to_string(h) + " must divide d_model=" +
                      std::to_string(d_model));
  if (h_s < 0 || h_s > h)
    throw ConfigError("moae: need 0 <= h_s <= h, got h_s=" + std::to_string(h_s) +
                      " h=" + std::to_string(h));
  // h_s == h means all heads are shared and routing is disabled (top_k = 0).
  if (h_s == h) {
    if (top_k != 0) throw ConfigError("moae: top_k must be 0 when h_s == h");
  } else if (top_k < 1 || top_k > h - h_s) {
    throw ConfigError("moae: need 1 <= top_k <= h - h_s, got top_k=" + std::to_string(top_k));
  }
  if (alpha1 < 0.0 || alpha2 < 0.0) throw ConfigError("moae: alphas must be nonnegative");
}

namespace {

double inv_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(std::max(y, 1e-8))); }

Value alpha_value(Tape& tape, ParamStore& store, const std::string& prefix, const Config& cfg,
                  bool first) {
  const std::string name = prefix + (first ? ".alpha1_raw" : ".alpha2_raw");
  return tape.softplus(tape.param(store, name));
}

}  // namespace

void add_attention_params(ParamStore& store, const Config& cfg, const std::string& prefix,
                          Rng& rng) {
  cfg.validate();
  const double ws = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  store.add(prefix + ".wq", gaussian({cfg.d_model, cfg.d_model}, rng, ws));
  store.add(prefix + ".wk", gaussian({cfg.d_model, cfg.d_model}, rng, ws));
  store.add(prefix + ".wv", gaussian({cfg.d_model, cfg.d_model}, rng, ws));
  const double os = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
  for (int i = 0; i < cfg.h; ++i)
    store.add(prefix + ".wo" + std::to_string(i), gaussian({cfg.d_head(), cfg.d_model}, rng, os));
}

void add_router_params(ParamStore& store, const Config& cfg, const std::string& prefix, Rng& rng) {
  cfg.validate();
  const double ws = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  if (cfg.h_s > 0)
    store.add(prefix + ".router_shared", gaussian({cfg.d_model, cfg.h_s}, rng, ws));
  if (cfg.routed() > 0)
    store.add(prefix + ".router_routed", gaussian({cfg.d_model, cfg.routed()}, rng, ws));
  if (cfg.learn_alphas) {
    store.add(prefix + ".alpha1_raw", Tensor::scalar(inv_softplus(cfg.alpha1)));
    store.add(prefix + ".alpha2_raw", Tensor::scalar(inv_softplus(cfg.alpha2)));
  }
}

Gates router_gates(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
                   const Config& cfg, Tensor& topk_mask, bool replay) {
  cfg.validate();
  const int n = tape.val(tokens).shape()[0];
  Gates gates;

  if (cfg.h_s > 0) {
    Value logits = tape.matmul(tokens, tape.param(store, prefix + ".router_shared"));
    Value soft = tape.row_softmax(logits);
    if (cfg.learn_alphas)
      gates.shared = tape.mul_scalar_node(soft, alpha_value(tape, store, prefix, cfg, true));
    else
      gates.shared = tape.scale(soft, cfg.alpha1);
  }

  if (cfg.routed() > 0) {
    Value logits = tape.matmul(tokens, tape.param(store, prefix + ".router_routed"));
    if (!replay) {
      // Top-K of the logits per token; ties keep the lower head index.
      const Tensor& lv = tape.val(logits);
      topk_mask = Tensor::zeros({n, cfg.routed()});
      std::vector<int> order(cfg.routed());
      for (int i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return lv.at(i, a) > lv.at(i, b); });
        for (int k = 0; k < cfg.top_k; ++k) topk_mask.at(i, order[k]) = 1.0;
      }
    } else if (topk_mask.shape() != std::vector<int>{n, cfg.routed()}) {
      throw ShapeError("router_gates: replayed Top-K mask has wrong shape");
    }
    Value soft = tape.row_softmax(logits);
    Value kept = tape.mul_const(soft, topk_mask);
    if (cfg.learn_alphas)
      gates.routed = tape.mul_scalar_node(kept, alpha_value(tape, store, prefix, cfg, false));
    else
      gates.routed = tape.scale(kept, cfg.alpha2);
  }

  return gates;
}

Tensor dense_gates(const Tape& tape, const Gates& gates, const Config& cfg) {
  const int n = gates.shared.valid() ? tape.val(gates.shared).shape()[0]
                                     : tape.val(gates.routed).shape()[0];
  Tensor g({n, cfg.h});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < cfg.h_s; ++j) g.at(i, j) = tape.val(gates.shared).at(i, j);
    for (int j = 0; j < cfg.routed(); ++j) g.at(i, cfg.h_s + j) = tape.val(gates.routed).at(i, j);
  }
  return g;
}

Value attention_head(Tape& tape, Value q, Value k, Value v, int head, const Config& cfg,
                     const std::vector<double>& key_offsets) {
  if (head < 0 || head >= cfg.h)
    throw ConfigError("attention_head: head " + std::to_string(head) + " out of range");
  const int dh = cfg.d_head();
  Value qh = tape.slice_cols(q, head * dh, dh);
  Value kh = tape.slice_cols(k, head * dh, dh);
  Value vh = tape.slice_cols(v, head * dh, dh);
  Value logits = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
  Value weights = tape.row_softmax(logits, key_offsets.empty() ? nullptr : &key_offsets);
  return tape.matmul(weights, vh);
}

Value attention_head(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
                     const Config& cfg, int head) {
  Value q = tape.matmul(tokens, tape.param(store, prefix + ".wq"));
  Value k = tape.matmul(tokens, tape.param(store, prefix + ".wk"));
  Value v = tape.matmul(tokens, tape.param(store, prefix + ".wv"));
  return attention_head(tape, q, k, v, head, cfg, {});
}

namespace {

Value mixture(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
              const Config& cfg, const std::vector<double>& key_offsets, const Gates* gates) {
  Value q = tape.matmul(tokens, tape.param(store, prefix + ".wq"));
  Value k = tape.matmul(tokens, tape.param(store, prefix + ".wk"));
  Value v = tape.matmul(tokens, tape.param(store, prefix + ".wv"));
  Value out;
  for (int i = 0; i < cfg.h; ++i) {
    Value hh = attention_head(tape, q, k, v, i, cfg, key_offsets);
    Value oh = tape.matmul(hh, tape.param(store, prefix + ".wo" + std::to_string(i)));
    if (gates) {
      Value col = i < cfg.h_s ? tape.slice_cols(gates->shared, i, 1)
                              : tape.slice_cols(gates->routed, i - cfg.h_s, 1);
      oh = tape.mul_colvec(oh, col);
    }
    out = out.valid() ? tape.add(out, oh) : oh;
  }
  return out;
}

}  // namespace

Value forward(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
              const Config& cfg, const std::vector<double>& key_offsets, Tensor& topk_mask,
              bool replay) {
  Gates gates = router_gates(tape, tokens, store, prefix, cfg, topk_mask, replay);
  return mixture(tape, tokens, store, prefix, cfg, key_offsets, &gates);
}

Value vanilla_forward(Tape& tape, Value tokens, ParamStore& store, const std::string& prefix,
                      const Config& cfg, const std::vector<double>& key_offsets) {
  return mixture(tape, tokens, store, prefix, cfg, key_offsets, nullptr);
}

}  // namespace milkit::moae
