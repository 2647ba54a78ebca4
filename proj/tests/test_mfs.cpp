#include "doctest.h"

#include <cmath>

#include "milkit/mfs.hpp"
#include "test_util.hpp"

using namespace milkit;

namespace {

mfs::Config plain_cfg() {
  mfs::Config cfg;
  cfg.beta_schedule = {1.0};
  return cfg;
}

std::vector<char> all_alive(int n) { return std::vector<char>(n, 1); }

}  // namespace

TEST_CASE("mfs config rejects bad beta schedules") {
  mfs::Config cfg;
  cfg.beta_schedule = {0.8, 0.7};  // decreasing
  CHECK_THROWS_AS(cfg.validate(2), ConfigError);
  cfg.beta_schedule = {-0.1, 0.5};
  CHECK_THROWS_AS(cfg.validate(2), ConfigError);
  cfg.beta_schedule = {0.7, 1.0};
  CHECK_NOTHROW(cfg.validate(2));
  CHECK_THROWS_AS(cfg.validate(3), ConfigError);  // length mismatch
}

TEST_CASE("activation score: two equally similar classes give 0.5") {
  // Token equidistant from both prompts -> softmax [0.5, 0.5], max = 0.5.
  Tensor tokens = Tensor::from({1, 2}, {1, 1});
  Tensor prompts = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto s = mfs::activation_scores(tokens, all_alive(1), prompts, plain_cfg());
  CHECK(s.size() == 1);
  CHECK(s[0] == doctest::Approx(0.5));
}

TEST_CASE("activation score: orthogonal token over six classes gives 1/6") {
  Tensor tokens = Tensor::from({1, 3}, {0, 0, 1});
  Tensor prompts = Tensor::zeros({6, 3});  // all similarities 0
  for (int c = 0; c < 6; ++c) prompts.at(c, 0) = 1.0;
  auto s = mfs::activation_scores(tokens, all_alive(1), prompts, plain_cfg());
  CHECK(s[0] == doctest::Approx(1.0 / 6));
}

TEST_CASE("activation score saturates toward 1 with a dominant prompt") {
  Tensor tokens = Tensor::from({1, 2}, {30, 0});
  Tensor prompts = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto s = mfs::activation_scores(tokens, all_alive(1), prompts, plain_cfg());
  CHECK(s[0] > 0.999999);
  CHECK(s[0] <= 1.0);
}

TEST_CASE("activation score: dead tokens score zero") {
  Tensor tokens = Tensor::from({2, 2}, {5, 0, 0, 5});
  Tensor prompts = Tensor::from({2, 2}, {1, 0, 0, 1});
  std::vector<char> alive = {1, 0};
  auto s = mfs::activation_scores(tokens, alive, prompts, plain_cfg());
  CHECK(s[0] > 0.5);
  CHECK(s[1] == 0.0);
}

TEST_CASE("adaptive threshold hand case") {
  std::vector<double> scores = {0.9, 0.6};
  CHECK(mfs::adaptive_threshold(scores, all_alive(2), 0.8) == doctest::Approx(0.6));
}

TEST_CASE("adaptive threshold: beta 0 keeps everything; excludes dead tokens") {
  std::vector<double> scores = {0.9, 0.6, 0.3};
  CHECK(mfs::adaptive_threshold(scores, all_alive(3), 0.0) == 0.0);
  std::vector<char> alive = {1, 1, 0};
  // Mean over alive only: (0.9 + 0.6) / 2.
  CHECK(mfs::adaptive_threshold(scores, alive, 1.0) == doctest::Approx(0.75));
}

TEST_CASE("select_tokens keeps scores equal to the threshold") {
  std::vector<double> scores = {0.9, 0.6, 0.5};
  auto kept = mfs::select_tokens(scores, all_alive(3), 0.6);
  CHECK(kept == std::vector<char>{1, 1, 0});
}

TEST_CASE("select_tokens: beta 1 with equal scores keeps all") {
  std::vector<double> scores = {0.4, 0.4, 0.4, 0.4};
  double thr = mfs::adaptive_threshold(scores, all_alive(4), 1.0);
  auto kept = mfs::select_tokens(scores, all_alive(4), thr);
  CHECK(kept == std::vector<char>{1, 1, 1, 1});
}

TEST_CASE("select_tokens falls back to the single best token") {
  std::vector<double> scores = {0.2, 0.8, 0.5};
  auto kept = mfs::select_tokens(scores, all_alive(3), 5.0);
  CHECK(kept == std::vector<char>{0, 1, 0});
  // Ties on the fallback break toward the lower index.
  std::vector<double> tied = {0.8, 0.8};
  kept = mfs::select_tokens(tied, all_alive(2), 5.0);
  CHECK(kept == std::vector<char>{1, 0});
}

TEST_CASE("select_tokens never resurrects dead tokens") {
  std::vector<double> scores = {0.0, 0.9};
  std::vector<char> alive = {0, 1};
  auto kept = mfs::select_tokens(scores, alive, 10.0);
  CHECK(kept == std::vector<char>{0, 1});
}

TEST_CASE("pruning is monotone in beta and never empty") {
  Rng rng(77);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + int(rng() % 12);
    std::vector<double> scores(n);
    std::vector<char> alive(n, 1);
    for (int i = 0; i < n; ++i) {
      scores[i] = uni(rng);
      if (rng() % 5 == 0) {
        alive[i] = 0;
        scores[i] = 0.0;
      }
    }
    bool any_alive = false;
    for (char a : alive) any_alive |= (a != 0);
    if (!any_alive) {
      alive[0] = 1;
      scores[0] = uni(rng);
    }
    std::vector<char> prev;
    for (double beta : {0.0, 0.5, 0.8, 1.0, 1.5, 3.0}) {
      double thr = mfs::adaptive_threshold(scores, alive, beta);
      auto kept = mfs::select_tokens(scores, alive, thr);
      int kept_n = 0;
      for (int i = 0; i < n; ++i) {
        if (kept[i]) {
          ++kept_n;
          CHECK(alive[i] == 1);
        }
        // Larger beta can only shrink the kept set (fallback excepted when the
        // previous set is already a singleton).
        if (!prev.empty() && kept[i]) CHECK(prev[i] == 1);
      }
      CHECK(kept_n >= 1);
      prev = kept;
    }
  }
}

TEST_CASE("staged pruning composes through alive masks") {
  // Two stages on frozen scores: stage 2 scores only alive survivors.
  Tensor tokens = Tensor::from({4, 2}, {3, 0, 2, 0, 0, 3, 0.5, 0.5});
  Tensor prompts = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto cfg = plain_cfg();
  auto alive = all_alive(4);
  auto s1 = mfs::activation_scores(tokens, alive, prompts, cfg);
  auto kept1 = mfs::select_tokens(s1, alive, mfs::adaptive_threshold(s1, alive, 0.9));
  auto s2 = mfs::activation_scores(tokens, kept1, prompts, cfg);
  auto kept2 = mfs::select_tokens(s2, kept1, mfs::adaptive_threshold(s2, kept1, 1.1));
  int n1 = 0, n2 = 0;
  for (int i = 0; i < 4; ++i) {
    n1 += kept1[i];
    n2 += kept2[i];
    if (kept2[i]) CHECK(kept1[i] == 1);
    if (!kept1[i]) CHECK(s2[i] == 0.0);
  }
  CHECK(n1 >= n2);
  CHECK(n2 >= 1);
}
