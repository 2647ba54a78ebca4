#include "doctest.h"

#include <cmath>

#include "milkit/checkpoint.hpp"
#include "milkit/grad_check.hpp"
#include "milkit/io_util.hpp"
#include "milkit/model.hpp"
#include "test_util.hpp"

using namespace milkit;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.d_in = 5;
  cfg.d_model = 8;
  cfg.n_stages = 2;
  cfg.n_classes = 3;
  cfg.d_prompt = 6;
  cfg.moae.h = 2;
  cfg.moae.h_s = 1;
  cfg.moae.top_k = 1;
  cfg.finalize();
  return cfg;
}

PromptBank tiny_bank(const ModelConfig& cfg, std::uint64_t seed) {
  PromptBank bank;
  for (int c = 0; c < cfg.n_classes; ++c)
    bank.entries.push_back({"class" + std::to_string(c), "def", "signs"});
  Rng rng(seed);
  bank.embeddings = testutil::random_matrix(cfg.n_classes, cfg.d_prompt, rng);
  return bank;
}

Bag random_bag(const ModelConfig& cfg, int n, int label, std::uint64_t seed) {
  Rng rng(seed);
  Bag bag;
  bag.case_id = "case_" + std::to_string(seed);
  bag.instances = testutil::random_matrix(n, cfg.d_in, rng);
  bag.label = label;
  return bag;
}

}  // namespace

TEST_CASE("bag validation catches malformed cases") {
  auto cfg = tiny_cfg();
  Bag bag = random_bag(cfg, 3, 1, 1);
  CHECK_NOTHROW(bag.validate(cfg.d_in, cfg.n_classes));
  bag.label = 5;
  CHECK_THROWS_AS(bag.validate(cfg.d_in, cfg.n_classes), InputError);
  bag.label = 1;
  bag.signal_mask = {1, 0};  // wrong length
  CHECK_THROWS_AS(bag.validate(cfg.d_in, cfg.n_classes), InputError);
  bag.signal_mask.clear();
  CHECK_THROWS_AS(bag.validate(cfg.d_in + 1, cfg.n_classes), ShapeError);
}

TEST_CASE("encode_bag_tokens prepends the CLS token to projected instances") {
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 3);
  Bag bag = random_bag(cfg, 4, 0, 4);
  Tape tape;
  Value tokens = encode_bag_tokens(tape, bag, params, cfg);
  const Tensor& t = tape.val(tokens);
  CHECK(t.shape() == std::vector<int>{5, cfg.d_model});
  for (int j = 0; j < cfg.d_model; ++j)
    CHECK(t.at(0, j) == doctest::Approx(params.value("cls_token").at(0, j)));
  Tensor proj = matmul(bag.instances, params.value("input_proj.w"));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < cfg.d_model; ++j)
      CHECK(t.at(i + 1, j) ==
            doctest::Approx(proj.at(i, j) + params.value("input_proj.b").at(std::size_t(j))));
}

TEST_CASE("forward_case produces coherent prediction fields") {
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 5);
  PromptBank bank = tiny_bank(cfg, 6);
  Bag bag = random_bag(cfg, 6, 2, 7);
  Tape tape;
  ForwardOut out = forward_case(tape, bag, params, cfg, &bank);
  CHECK(tape.val(out.logits).shape() == std::vector<int>{1, cfg.n_classes});
  double psum = 0.0;
  for (double p : out.pred.probabilities.data()) {
    CHECK(p >= 0.0);
    psum += p;
  }
  CHECK(psum == doctest::Approx(1.0));
  int kept = 0;
  for (char k : out.pred.kept_mask) kept += k;
  CHECK(kept >= 1);
  CHECK(tape.val(out.kept_tokens).shape()[0] == kept);
  CHECK(int(out.pred.per_instance_scores.size()) == 6);
  // Argmax convention: highest logit, lowest index on ties.
  int arg = 0;
  for (int j = 1; j < cfg.n_classes; ++j)
    if (out.pred.logits.at(std::size_t(j)) > out.pred.logits.at(std::size_t(arg))) arg = j;
  CHECK(out.pred.predicted_class == arg);
}

TEST_CASE("forward_case requires a prompt bank only when prompts are used") {
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 5);
  Bag bag = random_bag(cfg, 3, 0, 8);
  Tape tape;
  CHECK_THROWS_AS(forward_case(tape, bag, params, cfg, nullptr), ConfigError);
  ModelConfig bare = tiny_cfg();
  bare.use_mfs = bare.use_ppl = false;
  ParamStore bare_params = init_params(bare, 5);
  Tape tape2;
  CHECK_NOTHROW(forward_case(tape2, bag, bare_params, bare, nullptr));
}

TEST_CASE("logits are invariant under instance permutation") {
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 11);
  PromptBank bank = tiny_bank(cfg, 12);
  Bag bag = random_bag(cfg, 7, 1, 13);
  CasePrediction base = predict_case(bag, params, cfg, &bank);
  std::vector<int> perm = {3, 0, 6, 2, 5, 1, 4};
  Bag shuffled = bag;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < cfg.d_in; ++j) shuffled.instances.at(i, j) = bag.instances.at(perm[i], j);
  CasePrediction moved = predict_case(shuffled, params, cfg, &bank);
  for (int c = 0; c < cfg.n_classes; ++c)
    CHECK(std::fabs(base.logits.at(std::size_t(c)) - moved.logits.at(std::size_t(c))) < 1e-9);
  // Scores follow the permutation.
  for (int i = 0; i < 7; ++i)
    CHECK(std::fabs(moved.per_instance_scores[i] - base.per_instance_scores[perm[i]]) < 1e-9);
}

TEST_CASE("identical instances get identical scores and keep decisions") {
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 21);
  PromptBank bank = tiny_bank(cfg, 22);
  Rng rng(23);
  Tensor row = testutil::random_matrix(1, cfg.d_in, rng);
  Bag bag;
  bag.case_id = "dup";
  bag.label = 0;
  bag.instances = Tensor({4, cfg.d_in});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < cfg.d_in; ++j) bag.instances.at(i, j) = row.at(0, j);
  CasePrediction pred = predict_case(bag, params, cfg, &bank);
  for (int i = 1; i < 4; ++i) {
    CHECK(pred.per_instance_scores[i] == doctest::Approx(pred.per_instance_scores[0]));
    CHECK(pred.kept_mask[i] == pred.kept_mask[0]);
  }
}

TEST_CASE("ablation flags control which parameters exist") {
  auto full = tiny_cfg();
  ParamStore p_full = init_params(full, 31);
  CHECK(p_full.has("stage0.attn.router_routed"));
  CHECK(p_full.has("prompt_proj"));

  auto no_moae = tiny_cfg();
  no_moae.use_moae = false;
  ParamStore p_nm = init_params(no_moae, 31);
  CHECK(!p_nm.has("stage0.attn.router_routed"));
  CHECK(!p_nm.has("stage0.attn.router_shared"));
  CHECK(p_nm.has("stage0.attn.wq"));

  auto bare = tiny_cfg();
  bare.use_mfs = bare.use_ppl = false;
  ParamStore p_b = init_params(bare, 31);
  CHECK(!p_b.has("prompt_proj"));

  auto mfs_only = tiny_cfg();
  mfs_only.use_ppl = false;
  CHECK(init_params(mfs_only, 31).has("prompt_proj"));
}

TEST_CASE("mean and max baselines match hand-computed pooling") {
  ModelConfig cfg = tiny_cfg();
  cfg.d_in = cfg.d_model = 3;
  cfg.moae.h = 1;
  cfg.moae.h_s = 1;
  cfg.moae.top_k = 0;
  cfg.finalize();
  Bag bag;
  bag.case_id = "pool";
  bag.label = 0;
  bag.instances = Tensor::from({2, 3}, {1, 5, 2, 3, 1, 4});
  for (auto kind : {BaselineKind::mean, BaselineKind::max}) {
    ParamStore params = init_baseline_params(cfg, kind, 41);
    params.value("input_proj.w") = Tensor::identity(3);
    params.value("input_proj.b").fill(0.0);
    params.value("head.w") = Tensor::identity(3);
    params.value("head.b").fill(0.0);
    Tape tape;
    ForwardOut out = baseline_forward(tape, bag, params, cfg, kind);
    const Tensor& l = tape.val(out.logits);
    if (kind == BaselineKind::mean) {
      CHECK(l.at(0, 0) == doctest::Approx(2.0));
      CHECK(l.at(0, 1) == doctest::Approx(3.0));
      CHECK(l.at(0, 2) == doctest::Approx(3.0));
    } else {
      CHECK(l.at(0, 0) == doctest::Approx(3.0));
      CHECK(l.at(0, 1) == doctest::Approx(5.0));
      CHECK(l.at(0, 2) == doctest::Approx(4.0));
    }
  }
}

TEST_CASE("abmil with zero score weights reduces to mean pooling") {
  auto cfg = tiny_cfg();
  Bag bag = random_bag(cfg, 5, 0, 51);
  ParamStore ab = init_baseline_params(cfg, BaselineKind::abmil, 52);
  ab.value("attn.w").fill(0.0);  // uniform attention
  ParamStore mean = init_baseline_params(cfg, BaselineKind::mean, 52);
  Tape t1, t2;
  ForwardOut a = baseline_forward(t1, bag, ab, cfg, BaselineKind::abmil);
  ForwardOut m = baseline_forward(t2, bag, mean, cfg, BaselineKind::mean);
  for (int c = 0; c < cfg.n_classes; ++c)
    CHECK(t1.val(a.logits).at(0, c) == doctest::Approx(t2.val(m.logits).at(0, c)));
}

TEST_CASE("full model loss passes grad_check with frozen decisions") {
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 61);
  PromptBank bank = tiny_bank(cfg, 62);
  Bag bag = random_bag(cfg, 3, 1, 63);
  CaseDecisions frozen;
  {
    Tape tape;
    forward_case(tape, bag, params, cfg, &bank, &frozen);
  }
  auto fn = [&](ParamStore& p, bool fill) {
    Tape tape;
    CaseDecisions dec = frozen;
    ForwardOut out = forward_case(tape, bag, p, cfg, &bank, &dec);
    Value loss = case_loss(tape, out, bag.label, cfg);
    if (fill) tape.backward(loss);
    return tape.scalar(loss);
  };
  Rng rng(64);
  auto report = grad_check(fn, params, 1e-5, 1e-4, 6, rng);
  INFO("worst ", report.worst_param, " rel ", report.max_rel_err);
  CHECK(report.pass);
}

TEST_CASE("case_loss breakdown sums and respects use_ppl") {
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 71);
  PromptBank bank = tiny_bank(cfg, 72);
  Bag bag = random_bag(cfg, 4, 2, 73);
  Tape tape;
  ForwardOut out = forward_case(tape, bag, params, cfg, &bank);
  losses::Breakdown bd;
  Value loss = case_loss(tape, out, bag.label, cfg, &bd);
  CHECK(bd.total == doctest::Approx(bd.ce + bd.ppl).epsilon(1e-14));
  CHECK(tape.scalar(loss) == doctest::Approx(bd.total));
  CHECK(bd.ppl != 0.0);

  ModelConfig no_ppl = tiny_cfg();
  no_ppl.use_ppl = false;
  ParamStore p2 = init_params(no_ppl, 71);
  Tape tape2;
  ForwardOut out2 = forward_case(tape2, bag, p2, no_ppl, &bank);
  losses::Breakdown bd2;
  case_loss(tape2, out2, bag.label, no_ppl, &bd2);
  CHECK(bd2.ppl == 0.0);
  CHECK(bd2.total == doctest::Approx(bd2.ce));
}

TEST_CASE("checkpoint round trip preserves structure and bytes") {
  testutil::TempDir tmp("ckpt");
  auto cfg = tiny_cfg();
  ParamStore params = init_params(cfg, 81);
  nlohmann::json tc = {{"epochs", 5}, {"seed", 81}};
  std::vector<std::string> names = {"a", "b", "c"};
  auto path = tmp.path() / "model.milkit";
  save_checkpoint(path, cfg.to_json(), tc, names, params);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.class_names == names);
  CHECK(ck.model_config == cfg.to_json());
  CHECK(ck.train_config == tc);
  CHECK(ck.params.count() == params.count());
  for (const auto& [name, slot] : params) {
    REQUIRE(ck.params.has(name));
    const Tensor& got = ck.params.value(name);
    REQUIRE(got.shape() == slot.value.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got.at(i) == doctest::Approx(double(float(slot.value.at(i)))).epsilon(1e-12));
  }
  // Save -> load -> save is byte identical.
  auto path2 = tmp.path() / "model2.milkit";
  save_checkpoint(path2, ck.model_config, ck.train_config, ck.class_names, ck.params);
  CHECK(io::read_file(path) == io::read_file(path2));
}
