#pragma once

#include <optional>
#include <string>
#include <vector>

#include "milkit/losses.hpp"
#include "milkit/mfs.hpp"
#include "milkit/moae.hpp"
#include "milkit/tape.hpp"

#include "json.hpp"

namespace milkit {

// One case: a pool of precomputed instance embeddings plus a case label.
// signal_mask is synthetic ground truth only and never reaches the model.
struct Bag {
  std::string case_id;
  Tensor instances;  // n x d_in
  int label = 0;
  std::vector<char> signal_mask;  // empty when absent

  int n_instances() const { return instances.rank() == 2 ? instances.shape()[0] : 0; }
  void validate(int d_in, int n_classes) const;
};

struct ModelConfig {
  int d_in = 512;
  int d_model = 512;
  int n_stages = 2;
  int ffn_hidden = 0;  // 0 -> 2 * d_model
  int n_classes = 6;
  int d_prompt = 768;
  bool use_moae = true;
  bool use_mfs = true;
  bool use_ppl = true;
  bool ppl_literal_form = false;
  moae::Config moae;
  mfs::Config mfs;

  bool needs_prompts() const { return use_mfs || use_ppl; }
  int ffn_width() const { return ffn_hidden > 0 ? ffn_hidden : 2 * d_model; }
  // Fills derived fields (moae.d_model, default beta schedule) and validates.
  void finalize();

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct CasePrediction {
  Tensor logits;         // C
  Tensor probabilities;  // softmax(logits)
  int predicted_class = 0;
  std::vector<double> per_instance_scores;  // final-stage activation scores
  double final_threshold = 0.0;
  std::vector<char> kept_mask;
};

// Hard forward-pass decisions (Top-K routing, MFS keep masks), captured on a
// first pass and replayable so finite-difference checks see a fixed graph.
struct CaseDecisions {
  bool captured = false;
  std::vector<Tensor> topk_masks;              // per stage; empty tensors when unused
  std::vector<std::vector<char>> alive_after;  // per stage, instance mask
};

struct ForwardOut {
  Value logits;             // 1 x C row
  Value kept_tokens;        // m x d_model final kept instance tokens
  Value projected_prompts;  // C x d_model, valid when the model uses prompts
  CasePrediction pred;
};

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Input projection + learned CLS token; all instances alive.
Value encode_bag_tokens(Tape& tape, const Bag& bag, ParamStore& params, const ModelConfig& cfg);

ForwardOut forward_case(Tape& tape, const Bag& bag, ParamStore& params, const ModelConfig& cfg,
                        const PromptBank* bank, CaseDecisions* decisions = nullptr);

// Forward + loss assembly for one case.
Value case_loss(Tape& tape, const ForwardOut& out, int label, const ModelConfig& cfg,
                losses::Breakdown* breakdown = nullptr);

// Inference-only convenience wrapper.
CasePrediction predict_case(const Bag& bag, ParamStore& params, const ModelConfig& cfg,
                            const PromptBank* bank);

enum class BaselineKind { mean, max, abmil };
BaselineKind baseline_kind_from_string(const std::string& s);

ParamStore init_baseline_params(const ModelConfig& cfg, BaselineKind kind, std::uint64_t seed);
ForwardOut baseline_forward(Tape& tape, const Bag& bag, ParamStore& params,
                            const ModelConfig& cfg, BaselineKind kind);

}  // namespace milkit
