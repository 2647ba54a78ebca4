#include "milkit/model.hpp"

#include <algorithm>
#include <cmath>

namespace milkit {

void Bag::validate(int d_in, int n_classes) const {
  if (n_instances() < 1) throw InputError("bag " + case_id + ": needs at least one instance");
  if (instances.shape()[1] != d_in)
    throw ShapeError("bag " + case_id + ": instance dimension " +
                     std::to_string(instances.shape()[1]) + " vs configured d_in " +
                     std::to_string(d_in));
  if (label < 0 || label >= n_classes)
    throw InputError("bag " + case_id + ": label " + std::to_string(label) +
                     " out of range [0," + std::to_string(n_classes) + ")");
  if (!signal_mask.empty() && static_cast<int>(signal_mask.size()) != n_instances())
    throw InputError("bag " + case_id + ": signal mask length mismatch");
  if (!instances.all_finite()) throw InputError("bag " + case_id + ": non-finite embedding");
}

void ModelConfig::finalize() {
  if (d_in <= 0 || d_model <= 0 || n_classes <= 0)
    throw ConfigError("model: d_in, d_model, n_classes must be positive");
  if (n_stages < 1) throw ConfigError("model: n_stages must be >= 1");
  moae.d_model = d_model;
  moae.validate();
  if (mfs.beta_schedule.empty()) {
    // Default schedule: ramp to 1.0 over the stages.
    for (int l = 0; l < n_stages; ++l)
      mfs.beta_schedule.push_back(n_stages == 1 ? 1.0
                                                : 0.7 + 0.3 * l / (n_stages - 1));
  }
  mfs.validate(n_stages);
  if (needs_prompts() && d_prompt <= 0) throw ConfigError("model: d_prompt must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"d_in", d_in},
                        {"d_model", d_model},
                        {"n_stages", n_stages},
                        {"ffn_hidden", ffn_hidden},
                        {"n_classes", n_classes},
                        {"d_prompt", d_prompt},
                        {"use_moae", use_moae},
                        {"use_mfs", use_mfs},
                        {"use_ppl", use_ppl},
                        {"ppl_literal_form", ppl_literal_form},
                        {"moae",
                         {{"h", moae.h},
                          {"h_s", moae.h_s},
                          {"top_k", moae.top_k},
                          {"alpha1", moae.alpha1},
                          {"alpha2", moae.alpha2},
                          {"learn_alphas", moae.learn_alphas}}},
                        {"mfs",
                         {{"beta_schedule", mfs.beta_schedule},
                          {"cosine_normalize", mfs.cosine_normalize},
                          {"temperature", mfs.temperature}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.d_in = j.value("d_in", cfg.d_in);
  cfg.d_model = j.value("d_model", cfg.d_model);
  cfg.n_stages = j.value("n_stages", cfg.n_stages);
  cfg.ffn_hidden = j.value("ffn_hidden", cfg.ffn_hidden);
  cfg.n_classes = j.value("n_classes", cfg.n_classes);
  cfg.d_prompt = j.value("d_prompt", cfg.d_prompt);
  cfg.use_moae = j.value("use_moae", cfg.use_moae);
  cfg.use_mfs = j.value("use_mfs", cfg.use_mfs);
  cfg.use_ppl = j.value("use_ppl", cfg.use_ppl);
  cfg.ppl_literal_form = j.value("ppl_literal_form", cfg.ppl_literal_form);
  if (j.contains("moae")) {
    const auto& m = j.at("moae");
    cfg.moae.h = m.value("h", cfg.moae.h);
    cfg.moae.h_s = m.value("h_s", cfg.moae.h_s);
    cfg.moae.top_k = m.value("top_k", cfg.moae.top_k);
    cfg.moae.alpha1 = m.value("alpha1", cfg.moae.alpha1);
    cfg.moae.alpha2 = m.value("alpha2", cfg.moae.alpha2);
    cfg.moae.learn_alphas = m.value("learn_alphas", cfg.moae.learn_alphas);
  }
  if (j.contains("mfs")) {
    const auto& m = j.at("mfs");
    cfg.mfs.beta_schedule = m.value("beta_schedule", cfg.mfs.beta_schedule);
    cfg.mfs.cosine_normalize = m.value("cosine_normalize", cfg.mfs.cosine_normalize);
    cfg.mfs.temperature = m.value("temperature", cfg.mfs.temperature);
  }
  cfg.finalize();
  return cfg;
}

namespace {

std::string stage_prefix(int l) { return "stage" + std::to_string(l); }

void add_stage_params(ParamStore& store, const ModelConfig& cfg, int l, Rng& rng) {
  const std::string p = stage_prefix(l);
  moae::add_attention_params(store, cfg.moae, p + ".attn", rng);
  if (cfg.use_moae) moae::add_router_params(store, cfg.moae, p + ".attn", rng);
  store.add(p + ".ln1.gamma", Tensor::from({cfg.d_model}, std::vector<double>(cfg.d_model, 1.0)));
  store.add(p + ".ln1.beta", Tensor::zeros({cfg.d_model}));
  store.add(p + ".ln2.gamma", Tensor::from({cfg.d_model}, std::vector<double>(cfg.d_model, 1.0)));
  store.add(p + ".ln2.beta", Tensor::zeros({cfg.d_model}));
  const int hid = cfg.ffn_width();
  store.add(p + ".ffn.w1", gaussian({cfg.d_model, hid}, rng, 1.0 / std::sqrt(double(cfg.d_model))));
  store.add(p + ".ffn.b1", Tensor::zeros({hid}));
  store.add(p + ".ffn.w2", gaussian({hid, cfg.d_model}, rng, 1.0 / std::sqrt(double(hid))));
  store.add(p + ".ffn.b2", Tensor::zeros({cfg.d_model}));
}

void add_io_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  store.add("input_proj.w", gaussian({cfg.d_in, cfg.d_model}, rng, 1.0 / std::sqrt(double(cfg.d_in))));
  store.add("input_proj.b", Tensor::zeros({cfg.d_model}));
  store.add("head.w", gaussian({cfg.d_model, cfg.n_classes}, rng, 1.0 / std::sqrt(double(cfg.d_model))));
  store.add("head.b", Tensor::zeros({cfg.n_classes}));
}

Value ffn(Tape& tape, Value x, ParamStore& store, const std::string& p) {
  Value h = tape.add_rowvec(tape.matmul(x, tape.param(store, p + ".ffn.w1")),
                            tape.param(store, p + ".ffn.b1"));
  h = tape.gelu(h);
  return tape.add_rowvec(tape.matmul(h, tape.param(store, p + ".ffn.w2")),
                         tape.param(store, p + ".ffn.b2"));
}

CasePrediction finish_prediction(const Tensor& logits_row) {
  CasePrediction pred;
  const int c = static_cast<int>(logits_row.size());
  pred.logits = Tensor::from({c}, logits_row.data());
  pred.probabilities = softmax(pred.logits);
  pred.predicted_class = 0;
  for (int j = 1; j < c; ++j)
    if (pred.logits.at(std::size_t(j)) > pred.logits.at(std::size_t(pred.predicted_class)))
      pred.predicted_class = j;
  return pred;
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelConfig c = cfg;
  c.finalize();
  Rng rng(seed);
  ParamStore store;
  add_io_params(store, c, rng);
  store.add("cls_token", gaussian({1, c.d_model}, rng, 1.0 / std::sqrt(double(c.d_model))));
  for (int l = 0; l < c.n_stages; ++l) add_stage_params(store, c, l, rng);
  if (c.needs_prompts())
    store.add("prompt_proj", gaussian({c.d_prompt, c.d_model}, rng, 1.0 / std::sqrt(double(c.d_prompt))));
  return store;
}

Value encode_bag_tokens(Tape& tape, const Bag& bag, ParamStore& params, const ModelConfig& cfg) {
  bag.validate(cfg.d_in, cfg.n_classes);
  Value x = tape.constant(bag.instances);
  Value proj = tape.add_rowvec(tape.matmul(x, tape.param(params, "input_proj.w")),
                               tape.param(params, "input_proj.b"));
  return tape.concat_rows(tape.param(params, "cls_token"), proj);
}

ForwardOut forward_case(Tape& tape, const Bag& bag, ParamStore& params, const ModelConfig& cfg,
                        const PromptBank* bank, CaseDecisions* decisions) {
  if (cfg.needs_prompts()) {
    if (!bank) throw ConfigError("forward_case: model uses prompts but no prompt bank given");
    bank->validate();
    if (bank->n_classes() != cfg.n_classes)
      throw ConfigError("forward_case: prompt bank has " + std::to_string(bank->n_classes()) +
                        " classes, model expects " + std::to_string(cfg.n_classes));
    if (bank->d_prompt() != cfg.d_prompt)
      throw ConfigError("forward_case: prompt dimension mismatch");
  }

  const int n = bag.n_instances();
  const bool replay = decisions && decisions->captured;
  CaseDecisions local;
  CaseDecisions& dec = decisions ? *decisions : local;
  if (!replay) {
    dec.topk_masks.assign(cfg.n_stages, Tensor());
    dec.alive_after.assign(cfg.n_stages, {});
  }

  ForwardOut out;
  if (cfg.needs_prompts())
    out.projected_prompts =
        tape.matmul(tape.constant(bank->embeddings), tape.param(params, "prompt_proj"));

  Value tokens = encode_bag_tokens(tape, bag, params, cfg);
  std::vector<char> alive(n, 1);

  std::vector<double> last_scores(n, 0.0);
  double last_threshold = 0.0;
  for (int l = 0; l < cfg.n_stages; ++l) {
    const std::string p = stage_prefix(l);
    std::vector<double> key_offsets(n + 1, 0.0);
    for (int i = 0; i < n; ++i)
      if (!alive[i]) key_offsets[i + 1] = -1e30;

    Value attn = cfg.use_moae
                     ? moae::forward(tape, tokens, params, p + ".attn", cfg.moae, key_offsets,
                                     dec.topk_masks[l], replay)
                     : moae::vanilla_forward(tape, tokens, params, p + ".attn", cfg.moae,
                                             key_offsets);
    tokens = tape.layer_norm(tape.add(tokens, attn), tape.param(params, p + ".ln1.gamma"),
                             tape.param(params, p + ".ln1.beta"));
    Value f = ffn(tape, tokens, params, p);
    tokens = tape.layer_norm(tape.add(tokens, f), tape.param(params, p + ".ln2.gamma"),
                             tape.param(params, p + ".ln2.beta"));

    if (cfg.use_mfs) {
      // Score current instance tokens against the prompt bank; the keep
      // decision itself is a hard mask (captured/replayed, no gradient).
      Tensor inst({n, cfg.d_model});
      const Tensor& tv = tape.val(tokens);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < cfg.d_model; ++j) inst.at(i, j) = tv.at(i + 1, j);
      last_scores = mfs::activation_scores(inst, alive, tape.val(out.projected_prompts), cfg.mfs);
      last_threshold = mfs::adaptive_threshold(last_scores, alive, cfg.mfs.beta_schedule[l]);
      if (replay) {
        alive = dec.alive_after[l];
      } else {
        alive = mfs::select_tokens(last_scores, alive, last_threshold);
        dec.alive_after[l] = alive;
      }
    }
  }
  if (!replay) dec.captured = true;

  if (!cfg.use_mfs && cfg.needs_prompts()) {
    // Report-only scores when selection is disabled but prompts exist.
    Tensor inst({n, cfg.d_model});
    const Tensor& tv = tape.val(tokens);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cfg.d_model; ++j) inst.at(i, j) = tv.at(i + 1, j);
    last_scores = mfs::activation_scores(inst, alive, tape.val(out.projected_prompts), cfg.mfs);
  }

  std::vector<int> kept_rows;
  for (int i = 0; i < n; ++i)
    if (alive[i]) kept_rows.push_back(i + 1);
  out.kept_tokens = tape.select_rows(tokens, kept_rows);

  Value cls = tape.slice_rows(tokens, 0, 1);
  out.logits = tape.add_rowvec(tape.matmul(cls, tape.param(params, "head.w")),
                               tape.param(params, "head.b"));

  out.pred = finish_prediction(tape.val(out.logits));
  out.pred.per_instance_scores = last_scores;
  out.pred.final_threshold = last_threshold;
  out.pred.kept_mask = alive;
  return out;
}

Value case_loss(Tape& tape, const ForwardOut& out, int label, const ModelConfig& cfg,
                losses::Breakdown* breakdown) {
  Value ce = losses::ce_loss(tape, out.logits, label);
  Value total = ce;
  double ppl_val = 0.0;
  if (cfg.use_ppl) {
    Value ppl = losses::ppl_loss(tape, out.kept_tokens, out.projected_prompts, label,
                                 cfg.ppl_literal_form);
    total = tape.add(total, ppl);
    ppl_val = tape.scalar(ppl);
  }
  if (breakdown) {
    breakdown->ce = tape.scalar(ce);
    breakdown->ppl = ppl_val;
    breakdown->total = tape.scalar(total);
  }
  return total;
}

CasePrediction predict_case(const Bag& bag, ParamStore& params, const ModelConfig& cfg,
                            const PromptBank* bank) {
  Tape tape;
  return forward_case(tape, bag, params, cfg, bank).pred;
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "mean") return BaselineKind::mean;
  if (s == "max") return BaselineKind::max;
  if (s == "abmil") return BaselineKind::abmil;
  throw ConfigError("unknown baseline kind: " + s);
}

ParamStore init_baseline_params(const ModelConfig& cfg, BaselineKind kind, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  ModelConfig c = cfg;
  c.finalize();
  add_io_params(store, c, rng);
  if (kind == BaselineKind::abmil) {
    const int da = std::max(c.d_model / 2, 1);
    const double s = 1.0 / std::sqrt(double(c.d_model));
    store.add("attn.v", gaussian({c.d_model, da}, rng, s));
    store.add("attn.u", gaussian({c.d_model, da}, rng, s));
    store.add("attn.w", gaussian({da, 1}, rng, 1.0 / std::sqrt(double(da))));
  }
  return store;
}

ForwardOut baseline_forward(Tape& tape, const Bag& bag, ParamStore& params,
                            const ModelConfig& cfg, BaselineKind kind) {
  bag.validate(cfg.d_in, cfg.n_classes);
  Value x = tape.constant(bag.instances);
  Value proj = tape.add_rowvec(tape.matmul(x, tape.param(params, "input_proj.w")),
                               tape.param(params, "input_proj.b"));
  Value pooled;
  switch (kind) {
    case BaselineKind::mean:
      pooled = tape.mean_rows(proj);
      break;
    case BaselineKind::max:
      pooled = tape.max_rows(proj);
      break;
    case BaselineKind::abmil: {
      // Gated attention pooling: softmax_i w^T (tanh(V h_i) * sigm(U h_i)).
      Value gate = tape.mul(tape.tanh_act(tape.matmul(proj, tape.param(params, "attn.v"))),
                            tape.sigmoid(tape.matmul(proj, tape.param(params, "attn.u"))));
      Value scores = tape.matmul(gate, tape.param(params, "attn.w"));  // n x 1
      Value weights = tape.row_softmax(tape.transpose(scores));        // 1 x n
      pooled = tape.matmul(weights, proj);
      break;
    }
  }
  ForwardOut out;
  out.logits = tape.add_rowvec(tape.matmul(pooled, tape.param(params, "head.w")),
                               tape.param(params, "head.b"));
  out.pred = finish_prediction(tape.val(out.logits));
  out.pred.kept_mask.assign(bag.n_instances(), 1);
  out.pred.per_instance_scores.assign(bag.n_instances(), 0.0);
  return out;
}

}  // namespace milkit
