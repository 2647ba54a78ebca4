#include "milkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "milkit/checkpoint.hpp"
#include "milkit/metrics.hpp"

namespace milkit {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (warmup_epochs <= 0 || warmup_epochs >= epochs)
    throw ConfigError("train: need 0 < warmup_epochs < epochs");
  if (lr_min > lr_max || lr_min < 0.0) throw ConfigError("train: need 0 <= lr_min <= lr_max");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || adam_eps <= 0.0)
    throw ConfigError("train: invalid Adam constants");
  const double fs = f_train + f_val + f_test;
  if (f_train <= 0.0 || f_val < 0.0 || f_test < 0.0 || std::fabs(fs - 1.0) > 1e-9)
    throw ConfigError("train: split fractions must sum to 1 with positive train share");
}

json TrainConfig::to_json() const {
  return json{{"batch_size", batch_size}, {"lr_max", lr_max},
              {"lr_min", lr_min},         {"epochs", epochs},
              {"warmup_epochs", warmup_epochs},
              {"beta1", beta1},           {"beta2", beta2},
              {"adam_eps", adam_eps},     {"seed", seed},
              {"f_train", f_train},       {"f_val", f_val},
              {"f_test", f_test}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  c.f_train = j.value("f_train", c.f_train);
  c.f_val = j.value("f_val", c.f_val);
  c.f_test = j.value("f_test", c.f_test);
  c.validate();
  return c;
}

double lr_at(double epoch, const TrainConfig& cfg) {
  cfg.validate();
  if (epoch < 0.0 || epoch > cfg.epochs)
    throw InputError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                     std::to_string(cfg.epochs) + "]");
  // Pin the joints so the endpoints are exact, not within rounding.
  if (epoch == cfg.warmup_epochs) return cfg.lr_max;
  if (epoch == cfg.epochs || epoch == 0.0) return cfg.lr_min;
  if (epoch < cfg.warmup_epochs)
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * epoch / cfg.warmup_epochs;
  const double t = (epoch - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

void Adam::step(ParamStore& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (auto& [name, slot] : params) {
    auto [mit, m_new] = m_.try_emplace(name, Tensor::zeros(slot.value.shape()));
    auto [vit, v_new] = v_.try_emplace(name, Tensor::zeros(slot.value.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double g = slot.grad.at(i);
      if (!std::isfinite(g))
        throw Error("adam_step: non-finite gradient in parameter " + name + " at index " +
                    std::to_string(i));
      m.at(i) = beta1_ * m.at(i) + (1.0 - beta1_) * g;
      v.at(i) = beta2_ * v.at(i) + (1.0 - beta2_) * g * g;
      const double mhat = m.at(i) / bc1;
      const double vhat = v.at(i) / bc2;
      slot.value.at(i) -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
  params.zero_grads();
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "epoch,lr,train_loss,val_weighted_acc\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.10e,%.10e,%.10e\n", r.epoch, r.lr, r.train_loss,
                  r.val_weighted_acc);
    out += buf;
  }
  return out;
}

void TrainState::save(const std::filesystem::path& path) const {
  json history_json = json::array();
  for (const auto& r : history)
    history_json.push_back(json{{"epoch", r.epoch},
                                {"lr", r.lr},
                                {"train_loss", r.train_loss},
                                {"val_weighted_acc", r.val_weighted_acc}});
  json meta{{"kind", "train_state"},
            {"next_epoch", next_epoch},
            {"adam_steps", adam.steps()},
            {"rng_state", rng_state},
            {"best_epoch", best_epoch},
            {"best_val_acc", best_val_acc},
            {"history", history_json}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& [name, slot] : params) tensors.emplace_back("param/" + name, &slot.value);
  Adam& a = const_cast<Adam&>(adam);
  for (const auto& [name, t] : a.m()) tensors.emplace_back("adam_m/" + name, &t);
  for (const auto& [name, t] : a.v()) tensors.emplace_back("adam_v/" + name, &t);
  for (const auto& [name, slot] : best_params) tensors.emplace_back("best/" + name, &slot.value);
  container::write(path, meta, tensors, /*float64=*/true);
}

TrainState TrainState::load(const std::filesystem::path& path, const TrainConfig& cfg) {
  auto c = container::read(path);
  if (c.meta.value("kind", "") != "train_state")
    throw IoError(path.string() + ": container is not a training state");
  TrainState st;
  st.adam = Adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
  st.next_epoch = c.meta.at("next_epoch").get<int>();
  st.adam.set_steps(c.meta.at("adam_steps").get<int>());
  st.rng_state = c.meta.at("rng_state").get<std::string>();
  st.best_epoch = c.meta.at("best_epoch").get<int>();
  st.best_val_acc = c.meta.at("best_val_acc").get<double>();
  for (const auto& r : c.meta.at("history"))
    st.history.push_back(HistoryRow{r.at("epoch").get<int>(), r.at("lr").get<double>(),
                                    r.at("train_loss").get<double>(),
                                    r.at("val_weighted_acc").get<double>()});
  for (auto& [name, t] : c.tensors) {
    if (name.rfind("param/", 0) == 0)
      st.params.add(name.substr(6), std::move(t));
    else if (name.rfind("adam_m/", 0) == 0)
      st.adam.m().emplace(name.substr(7), std::move(t));
    else if (name.rfind("adam_v/", 0) == 0)
      st.adam.v().emplace(name.substr(7), std::move(t));
    else if (name.rfind("best/", 0) == 0)
      st.best_params.add(name.substr(5), std::move(t));
  }
  return st;
}

double validation_weighted_accuracy(const std::vector<const Bag*>& bags, ParamStore& params,
                                    const ModelConfig& cfg, const PromptBank* bank,
                                    int n_classes) {
  ConfusionMatrix cm(n_classes);
  for (const Bag* b : bags) cm.add(b->label, predict_case(*b, params, cfg, bank).predicted_class);
  return weighted_accuracy(cm);
}

namespace {

ParamStore copy_params(const ParamStore& src) {
  ParamStore out;
  for (const auto& [name, slot] : src) out.add(name, slot.value);
  return out;
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg_in, const PromptBank* bank,
                  const std::vector<const Bag*>& train_bags,
                  const std::vector<const Bag*>& val_bags, const TrainConfig& cfg,
                  TrainState* resume, int stop_after) {
  cfg.validate();
  ModelConfig model_cfg = model_cfg_in;
  model_cfg.finalize();
  if (train_bags.empty()) throw InputError("train: empty training set");
  for (const Bag* b : train_bags) b->validate(model_cfg.d_in, model_cfg.n_classes);
  for (const Bag* b : val_bags) b->validate(model_cfg.d_in, model_cfg.n_classes);

  TrainState local;
  TrainState& st = resume ? *resume : local;
  Rng rng;
  if (st.params.count() == 0) {
    st.params = init_params(model_cfg, cfg.seed);
    st.adam = Adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
    rng.seed(cfg.seed + 0x9e3779b97f4a7c15ull);
  } else {
    std::istringstream in(st.rng_state);
    in >> rng;
    if (!in) throw IoError("train: corrupt RNG state in resumed training state");
  }

  std::vector<int> order(train_bags.size());

  for (int epoch = st.next_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch + 1, cfg);
    // Rebuilt every epoch so the visit order depends only on the RNG state,
    // which keeps a resumed run bit-identical to an uninterrupted one.
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t cases_seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Bag& bag = *train_bags[order[i]];
        Tape tape;
        ForwardOut out = forward_case(tape, bag, st.params, model_cfg, bank);
        Value loss = case_loss(tape, out, bag.label, model_cfg);
        const double loss_val = tape.scalar(loss);
        if (!std::isfinite(loss_val))
          throw Error("train: non-finite loss on case " + bag.case_id);
        epoch_loss += loss_val;
        ++cases_seen;
        tape.backward(loss, inv);
      }
      st.adam.step(st.params, lr);
    }
    epoch_loss /= static_cast<double>(cases_seen);

    const double val_acc =
        val_bags.empty() ? 0.0
                         : validation_weighted_accuracy(val_bags, st.params, model_cfg, bank,
                                                        model_cfg.n_classes);
    st.history.push_back(HistoryRow{epoch + 1, lr, epoch_loss, val_acc});
    if (val_acc > st.best_val_acc) {
      st.best_val_acc = val_acc;
      st.best_epoch = epoch + 1;
      st.best_params = copy_params(st.params);
    }
    st.next_epoch = epoch + 1;
    std::ostringstream ss;
    ss << rng;
    st.rng_state = ss.str();
    if (stop_after >= 0 && st.next_epoch >= stop_after) break;
  }

  TrainResult result;
  result.history = st.history;
  result.final_params = copy_params(st.params);
  result.best_params = st.best_params.count() ? copy_params(st.best_params)
                                              : copy_params(st.params);
  result.best_epoch = st.best_epoch;
  result.best_val_acc = st.best_val_acc;
  return result;
}

}  // namespace milkit
