#include "milkit/mfs.hpp"

#include <algorithm>
#include <cmath>

namespace milkit {

void PromptBank::validate() const {
  if (entries.empty()) throw ConfigError("prompt bank is empty");
  if (embeddings.rank() != 2 || embeddings.shape()[0] != n_classes())
    throw ConfigError("prompt bank: embedding matrix shape " +
                      Tensor::shape_str(embeddings.shape()) + " does not match " +
                      std::to_string(n_classes()) + " classes");
  if (!embeddings.all_finite()) throw ConfigError("prompt bank: non-finite embedding");
}

namespace mfs {

void Config::validate(int n_stages) const {
  if (static_cast<int>(beta_schedule.size()) != n_stages)
    throw ConfigError("mfs: beta schedule length " + std::to_string(beta_schedule.size()) +
                      " does not match " + std::to_string(n_stages) + " stages");
  for (std::size_t i = 0; i < beta_schedule.size(); ++i) {
    if (beta_schedule[i] < 0.0) throw ConfigError("mfs: beta must be nonnegative");
    if (i > 0 && beta_schedule[i] < beta_schedule[i - 1])
      throw ConfigError("mfs: beta schedule must be nondecreasing");
  }
  if (temperature <= 0.0) throw ConfigError("mfs: temperature must be positive");
}

std::vector<double> activation_scores(const Tensor& tokens, const std::vector<char>& alive,
                                      const Tensor& projected_prompts, const Config& cfg) {
  if (projected_prompts.rank() != 2 || projected_prompts.shape()[0] == 0)
    throw ConfigError("mfs: empty prompt bank");
  const int n = tokens.shape()[0];
  const int d = tokens.shape()[1];
  const int c = projected_prompts.shape()[0];
  if (projected_prompts.shape()[1] != d)
    throw ShapeError("mfs: prompt dimension " + std::to_string(projected_prompts.shape()[1]) +
                     " vs token dimension " + std::to_string(d));
  if (static_cast<int>(alive.size()) != n) throw ShapeError("mfs: alive mask length mismatch");

  std::vector<double> prompt_norm(c, 1.0);
  if (cfg.cosine_normalize)
    for (int k = 0; k < c; ++k) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += projected_prompts.at(k, j) * projected_prompts.at(k, j);
      prompt_norm[k] = std::max(std::sqrt(s), 1e-12);
    }

  std::vector<double> scores(n, 0.0);
  std::vector<double> sims(c);
  for (int i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    double token_norm = 1.0;
    if (cfg.cosine_normalize) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += tokens.at(i, j) * tokens.at(i, j);
      token_norm = std::max(std::sqrt(s), 1e-12);
    }
    for (int k = 0; k < c; ++k) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += tokens.at(i, j) * projected_prompts.at(k, j);
      sims[k] = s / (token_norm * prompt_norm[k] * cfg.temperature);
    }
    Tensor soft = softmax(Tensor::from({c}, sims));
    scores[i] = *std::max_element(soft.data().begin(), soft.data().end());
  }
  return scores;
}

double adaptive_threshold(const std::vector<double>& scores, const std::vector<char>& alive,
                          double beta) {
  if (beta < 0.0) throw InputError("mfs: beta must be nonnegative");
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (alive[i]) {
      sum += scores[i];
      ++n;
    }
  if (n == 0) throw InputError("mfs: no alive tokens");
  return beta * sum / n;
}

std::vector<char> select_tokens(const std::vector<double>& scores, const std::vector<char>& alive,
                                double threshold) {
  std::vector<char> kept(scores.size(), 0);
  // The >= comparison absorbs last-ulp rounding from the beta * mean product,
  // so a score exactly at the hand-computed threshold is kept.
  const double tol = 1e-12 * std::max(1.0, std::fabs(threshold));
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (alive[i] && scores[i] >= threshold - tol) {
      kept[i] = 1;
      any = true;
    }
  if (!any) {
    int best = -1;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (alive[i] && (best < 0 || scores[i] > scores[best])) best = static_cast<int>(i);
    if (best < 0) throw InputError("mfs: no alive tokens");
    kept[best] = 1;
  }
  return kept;
}

}  // namespace mfs
}  // namespace milkit
