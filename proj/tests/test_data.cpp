#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "milkit/data.hpp"
#include "milkit/io_util.hpp"
#include "test_util.hpp"

using namespace milkit;

namespace {

// Small fixture with float32-exact values so save -> load -> save is
// byte-identical.
BagDataset hand_dataset() {
  BagDataset ds;
  ds.d_in = 3;
  ds.class_names = {"A", "B"};
  Bag b1;
  b1.case_id = "case_a";
  b1.label = 0;
  b1.instances = Tensor::from({2, 3}, {0.5, 1.25, -2.0, 3.5, 0.0, 7.0});
  b1.signal_mask = {1, 0};
  Bag b2;
  b2.case_id = "case_b";
  b2.label = 1;
  b2.instances = Tensor::from({1, 3}, {-0.75, 4.0, 0.125});
  ds.cases = {b1, b2};
  return ds;
}

}  // namespace

TEST_CASE("f32 blob round trip and error positions") {
  testutil::TempDir tmp("blob");
  Tensor m = Tensor::from({2, 2}, {1.5, -2.25, 0.5, 8.0});
  auto path = tmp.path() / "m.f32";
  io::write_f32_blob(path, m);
  Tensor back = io::read_f32_blob(path);
  CHECK(back.shape() == m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(back.at(i) == m.at(i));

  // Truncated payload names the byte position.
  std::string bytes = io::read_file(path);
  io::write_file(path, bytes.substr(0, bytes.size() - 3));
  try {
    io::read_f32_blob(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  // Bad magic.
  bytes[0] = 'X';
  io::write_file(path, bytes);
  CHECK_THROWS_AS(io::read_f32_blob(path), IoError);
}

TEST_CASE("dataset round trip is lossless and byte stable") {
  testutil::TempDir tmp("ds");
  BagDataset ds = hand_dataset();
  auto d1 = tmp.path() / "v1";
  save_dataset(ds, d1);
  BagDataset back = load_dataset(d1);
  CHECK(back.d_in == 3);
  CHECK(back.class_names == ds.class_names);
  REQUIRE(back.cases.size() == 2);
  CHECK(back.cases[0].case_id == "case_a");
  CHECK(back.cases[0].label == 0);
  CHECK(back.cases[0].signal_mask == std::vector<char>{1, 0});
  CHECK(back.cases[1].signal_mask.empty());
  for (std::size_t i = 0; i < ds.cases[0].instances.size(); ++i)
    CHECK(back.cases[0].instances.at(i) == ds.cases[0].instances.at(i));

  auto d2 = tmp.path() / "v2";
  save_dataset(back, d2);
  for (const char* f : {"header.json", "manifest.jsonl", "embeddings.f32", "masks.jsonl"})
    CHECK(io::read_file(d1 / f) == io::read_file(d2 / f));
}

TEST_CASE("load_dataset reports missing and corrupt files precisely") {
  testutil::TempDir tmp("dserr");
  try {
    load_dataset(tmp.path());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("manifest.jsonl") != std::string::npos);
  }

  save_dataset(hand_dataset(), tmp.path());

  SUBCASE("corrupt manifest line cites the line number") {
    std::string manifest = io::read_file(tmp.path() / "manifest.jsonl");
    auto nl = manifest.find('\n');
    io::write_file(tmp.path() / "manifest.jsonl",
                   manifest.substr(0, nl + 1) + "{not json\n");
    try {
      load_dataset(tmp.path());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  SUBCASE("flipped embedding byte fails the checksum") {
    std::string bytes = io::read_file(tmp.path() / "embeddings.f32");
    bytes[20] = char(bytes[20] ^ 0x40);
    io::write_file(tmp.path() / "embeddings.f32", bytes);
    try {
      load_dataset(tmp.path());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }

  SUBCASE("offset gaps are rejected") {
    std::string manifest = io::read_file(tmp.path() / "manifest.jsonl");
    // Second record starts at row 2; forge it to 1.
    auto pos = manifest.find("\"row_offset\":2");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 14, "\"row_offset\":1");
    io::write_file(tmp.path() / "manifest.jsonl", manifest);
    CHECK_THROWS_AS(load_dataset(tmp.path()), IoError);
  }
}

TEST_CASE("by_id lookup") {
  BagDataset ds = hand_dataset();
  CHECK(ds.by_id("case_b").label == 1);
  CHECK_THROWS_AS(ds.by_id("nope"), InputError);
}

TEST_CASE("prompt bank round trip") {
  testutil::TempDir tmp("pb");
  PromptBank bank;
  bank.entries = {{"A", "def a", "signs a"}, {"B", "def b", "signs b"}};
  bank.embeddings = Tensor::from({2, 4}, {1.0, 0.5, -0.25, 2.0, 0.0, 3.0, -1.5, 0.75});
  save_prompt_bank(bank, tmp.path());
  PromptBank back = load_prompt_bank(tmp.path());
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[1].definition == "def b");
  for (std::size_t i = 0; i < bank.embeddings.size(); ++i)
    CHECK(back.embeddings.at(i) == bank.embeddings.at(i));
  CHECK_THROWS_AS(load_prompt_bank(tmp.path() / "missing"), IoError);
}

TEST_CASE("stratified split matches exact per-class counts") {
  BagDataset ds;
  ds.d_in = 2;
  ds.class_names = default_class_names(6);
  for (int c = 0; c < 6; ++c)
    for (int k = 0; k < 10; ++k) {
      Bag b;
      b.case_id = "c" + std::to_string(c) + "_" + std::to_string(k);
      b.label = c;
      b.instances = Tensor::from({1, 2}, {double(c), double(k)});
      ds.cases.push_back(std::move(b));
    }
  Split s = stratified_split(ds, 0.6, 0.2, 0.2, 7);
  CHECK(s.train.size() == 36);
  CHECK(s.val.size() == 12);
  CHECK(s.test.size() == 12);
  for (int c = 0; c < 6; ++c) {
    auto count = [&](const std::vector<int>& idx) {
      return std::count_if(idx.begin(), idx.end(), [&](int i) { return ds.cases[i].label == c; });
    };
    CHECK(count(s.train) == 6);
    CHECK(count(s.val) == 2);
    CHECK(count(s.test) == 2);
  }

  SUBCASE("degenerate all-train split") {
    Split all = stratified_split(ds, 1.0, 0.0, 0.0, 3);
    CHECK(all.train.size() == 60);
    CHECK(all.val.empty());
    CHECK(all.test.empty());
  }

  SUBCASE("same seed reproduces, splits are disjoint and exhaustive") {
    Split again = stratified_split(ds, 0.6, 0.2, 0.2, 7);
    CHECK(again.train == s.train);
    CHECK(again.val == s.val);
    CHECK(again.test == s.test);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Split sp = stratified_split(ds, 0.6, 0.2, 0.2, seed);
      std::set<int> seen;
      for (const auto* part : {&sp.train, &sp.val, &sp.test})
        for (int i : *part) CHECK(seen.insert(i).second);
      CHECK(seen.size() == ds.cases.size());
    }
  }

  SUBCASE("bad fractions are rejected") {
    CHECK_THROWS_AS(stratified_split(ds, 0.5, 0.2, 0.2, 1), InputError);
    CHECK_THROWS_AS(stratified_split(ds, 0.0, 0.5, 0.5, 1), InputError);
  }
}

TEST_CASE("synthetic generator honors counts, sizes and masks") {
  SynthConfig cfg;
  cfg.n_classes = 4;
  cfg.d_in = 16;
  cfg.d_prompt = 24;
  cfg.cases_per_class = 12;
  cfg.n_lo = 3;
  cfg.n_hi = 9;
  cfg.seed = 5;
  auto [ds, bank] = generate_synthetic(cfg);
  CHECK(int(ds.cases.size()) == 48);
  CHECK(ds.class_names.back() == "Normal");
  CHECK(bank.n_classes() == 4);
  CHECK(bank.d_prompt() == 24);
  for (const auto& b : ds.cases) {
    CHECK(b.n_instances() >= 3);
    CHECK(b.n_instances() <= 9);
    REQUIRE(int(b.signal_mask.size()) == b.n_instances());
    int n_signal = 0;
    for (char m : b.signal_mask) n_signal += m;
    if (b.label == 3) {
      CHECK(n_signal == 0);  // Normal class is all background
    } else {
      const int n = b.n_instances();
      CHECK(n_signal >= int(std::ceil(cfg.frac_lo * n)));
      CHECK(n_signal <= int(std::ceil(cfg.frac_hi * n)));
    }
  }

  // Same seed, same bytes.
  auto [ds2, bank2] = generate_synthetic(cfg);
  testutil::TempDir tmp("synth");
  save_dataset(ds, tmp.path() / "a");
  save_dataset(ds2, tmp.path() / "b");
  CHECK(io::read_file(tmp.path() / "a" / "embeddings.f32") ==
        io::read_file(tmp.path() / "b" / "embeddings.f32"));
  for (std::size_t i = 0; i < bank.embeddings.size(); ++i)
    CHECK(bank.embeddings.at(i) == bank2.embeddings.at(i));
}

TEST_CASE("noiseless synthetic data sits exactly on the prototypes") {
  SynthConfig cfg;
  cfg.n_classes = 3;
  cfg.d_in = 8;
  cfg.d_prompt = 8;
  cfg.cases_per_class = 4;
  cfg.sigma = 0.0;
  cfg.sigma_b = 0.0;
  cfg.prompt_noise = 0.0;
  cfg.seed = 11;
  auto [ds, bank] = generate_synthetic(cfg);
  // Collect the unique signal vector per abnormal class; backgrounds are 0.
  for (int c = 0; c < 2; ++c) {
    Tensor proto;
    bool have = false;
    double norm = 0.0;
    for (const auto& b : ds.cases) {
      if (b.label != c) continue;
      for (int i = 0; i < b.n_instances(); ++i) {
        if (!b.signal_mask[i]) {
          for (int j = 0; j < cfg.d_in; ++j) CHECK(b.instances.at(i, j) == 0.0);
          continue;
        }
        if (!have) {
          proto = Tensor({cfg.d_in});
          for (int j = 0; j < cfg.d_in; ++j) {
            proto.at(std::size_t(j)) = b.instances.at(i, j);
            norm += proto.at(std::size_t(j)) * proto.at(std::size_t(j));
          }
          have = true;
        } else {
          for (int j = 0; j < cfg.d_in; ++j)
            CHECK(b.instances.at(i, j) == doctest::Approx(proto.at(std::size_t(j))).epsilon(1e-12));
        }
      }
    }
    CHECK(have);
    CHECK(std::sqrt(norm) == doctest::Approx(cfg.proto_scale));
  }
}

TEST_CASE("signal instances are nearest their own prototype") {
  SynthConfig cfg;
  cfg.n_classes = 4;
  cfg.d_in = 32;
  cfg.d_prompt = 32;
  cfg.cases_per_class = 8;
  cfg.sigma = 0.05;
  cfg.sigma_b = 0.05;
  cfg.seed = 13;
  auto [ds, bank] = generate_synthetic(cfg);
  // Recover prototypes as per-class means of signal instances.
  std::vector<Tensor> means(3, Tensor({cfg.d_in}));
  std::vector<int> counts(3, 0);
  for (const auto& b : ds.cases) {
    if (b.label >= 3) continue;
    for (int i = 0; i < b.n_instances(); ++i)
      if (b.signal_mask[i]) {
        ++counts[b.label];
        for (int j = 0; j < cfg.d_in; ++j) means[b.label].at(std::size_t(j)) += b.instances.at(i, j);
      }
  }
  for (int c = 0; c < 3; ++c)
    for (double& v : means[c].data()) v /= counts[c];
  int correct = 0, total = 0;
  for (const auto& b : ds.cases) {
    if (b.label >= 3) continue;
    for (int i = 0; i < b.n_instances(); ++i) {
      if (!b.signal_mask[i]) continue;
      ++total;
      int best = 0;
      double best_d = 1e300;
      for (int c = 0; c < 3; ++c) {
        double d = 0.0;
        for (int j = 0; j < cfg.d_in; ++j) {
          const double diff = b.instances.at(i, j) - means[c].at(std::size_t(j));
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (best == b.label) ++correct;
    }
  }
  CHECK(total > 0);
  CHECK(correct == total);  // sigma is tiny relative to prototype separation
}
