#pragma once

#include <string>
#include <vector>

#include "milkit/tensor.hpp"

namespace milkit {

struct PromptEntry {
  std::string class_name;
  std::string definition;
  std::string signs;
};

// One knowledge prompt per class. Embeddings come from an external text
// encoder and stay frozen; only the projection into token space (held in the
// model's ParamStore) trains.
struct PromptBank {
  std::vector<PromptEntry> entries;
  Tensor embeddings;  // C x d_prompt

  int n_classes() const { return static_cast<int>(entries.size()); }
  int d_prompt() const { return embeddings.rank() == 2 ? embeddings.shape()[1] : 0; }
  void validate() const;
};

namespace mfs {

struct Config {
  std::vector<double> beta_schedule;  // one beta per stage, nondecreasing, >= 0
  bool cosine_normalize = false;      // off by default: raw dot product
  double temperature = 1.0;           // divides similarities when != 1

  void validate(int n_stages) const;
};

// Per-token activation score: max over classes of softmax over classes of
// token-prompt similarity. Dead tokens score 0 and are excluded everywhere.
// tokens are instance tokens only (no CLS); projected_prompts is C x d_model.
std::vector<double> activation_scores(const Tensor& tokens, const std::vector<char>& alive,
                                      const Tensor& projected_prompts, const Config& cfg);

// beta * mean of scores over alive tokens.
double adaptive_threshold(const std::vector<double>& scores, const std::vector<char>& alive,
                          double beta);

// kept_i = alive_i && score_i >= threshold; an empty result falls back to the
// single highest-scoring alive token (lowest index on ties). Hard mask, no
// gradient through the decision.
std::vector<char> select_tokens(const std::vector<double>& scores, const std::vector<char>& alive,
                                double threshold);

}  // namespace mfs
}  // namespace milkit
