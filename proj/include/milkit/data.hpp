#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "milkit/mfs.hpp"
#include "milkit/model.hpp"

namespace milkit {

struct BagDataset {
  int d_in = 0;
  std::vector<std::string> class_names;
  std::vector<Bag> cases;

  int n_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t total_instances() const;
  const Bag& by_id(const std::string& case_id) const;
  void validate() const;
};

// Directory layout: header.json, manifest.jsonl, embeddings.f32, optional
// masks.jsonl. Prompt bank: prompts.json + prompts.f32.
void save_dataset(const BagDataset& ds, const std::filesystem::path& dir);
BagDataset load_dataset(const std::filesystem::path& dir);

void save_prompt_bank(const PromptBank& bank, const std::filesystem::path& dir);
PromptBank load_prompt_bank(const std::filesystem::path& dir);

struct Split {
  std::vector<int> train, val, test;  // case indices into ds.cases
};

// Case-level stratified split; per-class counts match the fractions within
// one case (largest-remainder rounding). Classes with < 3 cases get a warning
// on stderr and best-effort assignment.
Split stratified_split(const BagDataset& ds, double f_train, double f_val, double f_test,
                       std::uint64_t seed);

struct SynthConfig {
  int n_classes = 6;
  int d_in = 512;
  int d_prompt = 768;
  int cases_per_class = 100;
  int n_lo = 4, n_hi = 16;          // bag size range
  double frac_lo = 0.2, frac_hi = 0.5;  // signal fraction range (abnormal classes)
  double proto_scale = 1.0;
  double sigma = 0.25;        // signal noise
  double sigma_b = 0.25;      // background noise
  double prompt_noise = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

// Desk-scale stand-in dataset: near-orthogonal class prototypes; abnormal
// bags mix signal instances around their prototype with shared background;
// the "Normal" class (last index) is all background. Prompt embeddings are a
// fixed full-rank map of the prototypes plus noise, so the prompt projection
// must be learned.
std::pair<BagDataset, PromptBank> generate_synthetic(const SynthConfig& cfg);

std::vector<std::string> default_class_names(int n_classes);

}  // namespace milkit
