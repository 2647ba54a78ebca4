#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "milkit/data.hpp"
#include "milkit/model.hpp"

#include "json.hpp"

namespace milkit {

struct TrainConfig {
  int batch_size = 64;
  double lr_max = 1e-3;
  double lr_min = 1e-8;
  int epochs = 100;
  int warmup_epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double f_train = 0.6, f_val = 0.2, f_test = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Linear warm-up from lr_min to lr_max over warmup_epochs, then half-cosine
// decay back to lr_min at the final epoch. Continuous at both joints.
double lr_at(double epoch, const TrainConfig& cfg);

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Bias-corrected update from the accumulated gradients; zeroes them after.
  // Aborts with the parameter name on a non-finite gradient.
  void step(ParamStore& params, double lr);
  int steps() const { return t_; }

  std::map<std::string, Tensor>& m() { return m_; }
  std::map<std::string, Tensor>& v() { return v_; }
  void set_steps(int t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct HistoryRow {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_weighted_acc = 0.0;
};

std::string history_csv(const std::vector<HistoryRow>& rows);

struct TrainState {
  int next_epoch = 0;
  ParamStore params;
  Adam adam{0.9, 0.999, 1e-8};
  std::string rng_state;
  ParamStore best_params;
  int best_epoch = -1;
  double best_val_acc = -1.0;
  std::vector<HistoryRow> history;

  // Float64 container; a restored state continues bit-identically.
  void save(const std::filesystem::path& path) const;
  static TrainState load(const std::filesystem::path& path, const TrainConfig& cfg);
};

struct TrainResult {
  std::vector<HistoryRow> history;
  ParamStore final_params;
  ParamStore best_params;
  int best_epoch = -1;
  double best_val_acc = -1.0;
};

// Case-by-case gradient accumulation over shuffled batches; per-epoch
// validation balanced accuracy decides the kept snapshot (ties keep the
// earlier epoch). stop_after (when >= 0) pauses once that many epochs have
// run, leaving the rest resumable through the state.
TrainResult train(const ModelConfig& model_cfg, const PromptBank* bank,
                  const std::vector<const Bag*>& train_bags,
                  const std::vector<const Bag*>& val_bags, const TrainConfig& cfg,
                  TrainState* resume = nullptr, int stop_after = -1);

double validation_weighted_accuracy(const std::vector<const Bag*>& bags, ParamStore& params,
                                    const ModelConfig& cfg, const PromptBank* bank, int n_classes);

}  // namespace milkit
