#include "milkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "milkit/io_util.hpp"

#include "json.hpp"

namespace milkit {

using nlohmann::json;
namespace fs = std::filesystem;

std::size_t BagDataset::total_instances() const {
  std::size_t n = 0;
  for (const auto& b : cases) n += static_cast<std::size_t>(b.n_instances());
  return n;
}

const Bag& BagDataset::by_id(const std::string& case_id) const {
  for (const auto& b : cases)
    if (b.case_id == case_id) return b;
  throw InputError("unknown case id: " + case_id);
}

void BagDataset::validate() const {
  if (d_in <= 0) throw ConfigError("dataset: d_in must be positive");
  if (class_names.empty()) throw ConfigError("dataset: no classes");
  for (const auto& b : cases) b.validate(d_in, n_classes());
}

void save_dataset(const BagDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);

  if (ds.total_instances() == 0) throw IoError("save_dataset: empty dataset");
  Tensor blob({static_cast<int>(ds.total_instances()), ds.d_in});
  std::string manifest;
  bool any_mask = false;
  std::string masks;
  std::size_t row = 0;
  for (const auto& b : ds.cases) {
    json rec{{"case_id", b.case_id},
             {"label", b.label},
             {"n", b.n_instances()},
             {"row_offset", row}};
    manifest += rec.dump() + "\n";
    for (int i = 0; i < b.n_instances(); ++i, ++row)
      for (int j = 0; j < ds.d_in; ++j)
        blob.at(static_cast<int>(row), j) = b.instances.at(i, j);
    if (!b.signal_mask.empty()) {
      any_mask = true;
      json m{{"case_id", b.case_id}, {"mask", std::vector<int>(b.signal_mask.begin(), b.signal_mask.end())}};
      masks += m.dump() + "\n";
    }
  }

  io::write_f32_blob(dir / "embeddings.f32", blob);
  const std::string blob_bytes = io::read_file(dir / "embeddings.f32");

  json header{{"format", "milkit-dataset"},
              {"version", 1},
              {"d_in", ds.d_in},
              {"n_total", ds.total_instances()},
              {"class_names", ds.class_names},
              {"embeddings_fnv1a", io::fnv1a_hex(blob_bytes)}};
  io::write_file(dir / "header.json", header.dump(2) + "\n");
  io::write_file(dir / "manifest.jsonl", manifest);
  if (any_mask) io::write_file(dir / "masks.jsonl", masks);
}

BagDataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.jsonl"))
    throw IoError("missing manifest: " + (dir / "manifest.jsonl").string());
  if (!fs::exists(dir / "header.json"))
    throw IoError("missing header: " + (dir / "header.json").string());

  json header;
  try {
    header = json::parse(io::read_file(dir / "header.json"));
  } catch (const json::parse_error& e) {
    throw IoError("corrupt header.json: " + std::string(e.what()));
  }
  if (header.value("format", "") != "milkit-dataset" || header.value("version", 0) != 1)
    throw IoError("header.json: unknown format/version");

  BagDataset ds;
  ds.d_in = header.at("d_in").get<int>();
  ds.class_names = header.at("class_names").get<std::vector<std::string>>();

  const std::string blob_bytes = io::read_file(dir / "embeddings.f32");
  if (header.contains("embeddings_fnv1a") &&
      header.at("embeddings_fnv1a").get<std::string>() != io::fnv1a_hex(blob_bytes))
    throw IoError("embeddings.f32: checksum mismatch");
  Tensor blob = io::read_f32_blob(dir / "embeddings.f32");
  if (blob.shape()[1] != ds.d_in)
    throw IoError("embeddings.f32: column count " + std::to_string(blob.shape()[1]) +
                  " does not match header d_in " + std::to_string(ds.d_in));
  const std::size_t n_total = header.at("n_total").get<std::size_t>();
  if (static_cast<std::size_t>(blob.shape()[0]) != n_total)
    throw IoError("embeddings.f32: row count does not match header n_total");

  std::map<std::string, std::vector<char>> masks;
  if (fs::exists(dir / "masks.jsonl")) {
    std::istringstream in(io::read_file(dir / "masks.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json m = json::parse(line);
      auto v = m.at("mask").get<std::vector<int>>();
      masks[m.at("case_id").get<std::string>()] = std::vector<char>(v.begin(), v.end());
    }
  }

  std::istringstream in(io::read_file(dir / "manifest.jsonl"));
  std::string line;
  std::size_t expected_offset = 0;
  int lineno = 0;
  std::size_t byte_pos = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t line_start = byte_pos;
    byte_pos += line.size() + 1;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError("manifest.jsonl line " + std::to_string(lineno) + " (byte " +
                    std::to_string(line_start) + "): " + e.what());
    }
    Bag b;
    b.case_id = rec.at("case_id").get<std::string>();
    b.label = rec.at("label").get<int>();
    const int n = rec.at("n").get<int>();
    const std::size_t off = rec.at("row_offset").get<std::size_t>();
    if (off != expected_offset)
      throw IoError("manifest.jsonl line " + std::to_string(lineno) +
                    ": row_offset " + std::to_string(off) + " overlaps or skips rows (expected " +
                    std::to_string(expected_offset) + ")");
    if (n < 1) throw IoError("manifest.jsonl line " + std::to_string(lineno) + ": n must be >= 1");
    if (off + n > n_total)
      throw IoError("manifest.jsonl line " + std::to_string(lineno) + ": rows exceed blob");
    b.instances = Tensor({n, ds.d_in});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < ds.d_in; ++j)
        b.instances.at(i, j) = blob.at(static_cast<int>(off) + i, j);
    if (auto it = masks.find(b.case_id); it != masks.end()) b.signal_mask = it->second;
    expected_offset = off + n;
    ds.cases.push_back(std::move(b));
  }
  ds.validate();
  return ds;
}

void save_prompt_bank(const PromptBank& bank, const fs::path& dir) {
  bank.validate();
  fs::create_directories(dir);
  json classes = json::array();
  for (const auto& e : bank.entries)
    classes.push_back(json{{"class_name", e.class_name},
                           {"definition", e.definition},
                           {"signs", e.signs}});
  json meta{{"format", "milkit-prompts"},
            {"version", 1},
            {"d_prompt", bank.d_prompt()},
            {"classes", classes}};
  io::write_file(dir / "prompts.json", meta.dump(2) + "\n");
  io::write_f32_blob(dir / "prompts.f32", bank.embeddings);
}

PromptBank load_prompt_bank(const fs::path& dir) {
  if (!fs::exists(dir / "prompts.json"))
    throw IoError("missing prompt metadata: " + (dir / "prompts.json").string());
  json meta;
  try {
    meta = json::parse(io::read_file(dir / "prompts.json"));
  } catch (const json::parse_error& e) {
    throw IoError("corrupt prompts.json: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "milkit-prompts" || meta.value("version", 0) != 1)
    throw IoError("prompts.json: unknown format/version");
  PromptBank bank;
  for (const auto& c : meta.at("classes")) {
    PromptEntry e;
    e.class_name = c.at("class_name").get<std::string>();
    e.definition = c.at("definition").get<std::string>();
    e.signs = c.at("signs").get<std::string>();
    bank.entries.push_back(std::move(e));
  }
  bank.embeddings = io::read_f32_blob(dir / "prompts.f32");
  if (bank.embeddings.shape()[1] != meta.at("d_prompt").get<int>())
    throw IoError("prompts.f32: column count does not match d_prompt");
  bank.validate();
  return bank;
}

Split stratified_split(const BagDataset& ds, double f_train, double f_val, double f_test,
                       std::uint64_t seed) {
  if (f_train <= 0.0 || f_val < 0.0 || f_test < 0.0)
    throw InputError("stratified_split: fractions must be nonnegative, train positive");
  if (std::fabs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw InputError("stratified_split: fractions must sum to 1");

  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < ds.cases.size(); ++i)
    by_class[ds.cases[i].label].push_back(static_cast<int>(i));

  Rng rng(seed);
  Split split;
  const double fracs[3] = {f_train, f_val, f_test};
  for (auto& [label, members] : by_class) {
    if (members.size() < 3)
      std::cerr << "warning: class " << ds.class_names[label] << " has only " << members.size()
                << " case(s); best-effort split\n";
    std::shuffle(members.begin(), members.end(), rng);
    const int n = static_cast<int>(members.size());
    int counts[3];
    double rem[3];
    int assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double exact = fracs[k] * n;
      counts[k] = static_cast<int>(std::floor(exact));
      rem[k] = exact - counts[k];
      assigned += counts[k];
    }
    int order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3, [&](int a, int b) { return rem[a] > rem[b]; });
    for (int k = 0; assigned < n; ++k, ++assigned) counts[order[k % 3]] += 1;
    int pos = 0;
    for (int k = 0; k < 3; ++k) {
      auto* dst = k == 0 ? &split.train : (k == 1 ? &split.val : &split.test);
      for (int i = 0; i < counts[k]; ++i) dst->push_back(members[pos++]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void SynthConfig::validate() const {
  if (n_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (d_in < n_classes) throw ConfigError("synth: d_in must be >= n_classes for near-orthogonal prototypes");
  if (d_prompt < n_classes) throw ConfigError("synth: d_prompt must be >= n_classes");
  if (cases_per_class < 1) throw ConfigError("synth: cases_per_class must be >= 1");
  if (n_lo < 1 || n_lo > n_hi) throw ConfigError("synth: need 1 <= n_lo <= n_hi");
  if (frac_lo <= 0.0 || frac_lo > frac_hi || frac_hi > 1.0)
    throw ConfigError("synth: signal fraction range must lie in (0, 1]");
  if (sigma < 0.0 || sigma_b < 0.0 || prompt_noise < 0.0 || proto_scale <= 0.0)
    throw ConfigError("synth: negative noise/scale");
}

std::vector<std::string> default_class_names(int n_classes) {
  if (n_classes == 6)
    return {"DA", "Gastroschisis", "Omphalocele", "RA", "MCDK", "Normal"};
  std::vector<std::string> names;
  for (int c = 0; c < n_classes - 1; ++c) names.push_back("Class" + std::to_string(c));
  names.push_back("Normal");
  return names;
}

std::pair<BagDataset, PromptBank> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  // Orthonormal prototypes via Gram-Schmidt on gaussian draws.
  std::vector<Tensor> protos;
  for (int c = 0; c < cfg.n_classes; ++c) {
    Tensor v = gaussian({cfg.d_in}, rng);
    for (const Tensor& p : protos) {
      double dot = 0.0;
      for (int j = 0; j < cfg.d_in; ++j) dot += v.at(std::size_t(j)) * p.at(std::size_t(j));
      for (int j = 0; j < cfg.d_in; ++j)
        v.at(std::size_t(j)) -= dot * p.at(std::size_t(j)) / (cfg.proto_scale * cfg.proto_scale);
    }
    double norm = 0.0;
    for (double x : v.data()) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v.data()) x *= cfg.proto_scale / norm;
    protos.push_back(std::move(v));
  }

  BagDataset ds;
  ds.d_in = cfg.d_in;
  ds.class_names = default_class_names(cfg.n_classes);
  const int normal_class = cfg.n_classes - 1;

  std::uniform_int_distribution<int> bag_size(cfg.n_lo, cfg.n_hi);
  std::uniform_real_distribution<double> frac(cfg.frac_lo, cfg.frac_hi);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (int c = 0; c < cfg.n_classes; ++c) {
    for (int k = 0; k < cfg.cases_per_class; ++k) {
      Bag b;
      char idbuf[16];
      std::snprintf(idbuf, sizeof(idbuf), "_%04d", k);
      b.case_id = ds.class_names[c] + idbuf;
      b.label = c;
      const int n = bag_size(rng);
      int n_signal = 0;
      if (c != normal_class) n_signal = static_cast<int>(std::ceil(frac(rng) * n));
      std::vector<int> pos(n);
      std::iota(pos.begin(), pos.end(), 0);
      std::shuffle(pos.begin(), pos.end(), rng);
      b.signal_mask.assign(n, 0);
      for (int i = 0; i < n_signal; ++i) b.signal_mask[pos[i]] = 1;
      b.instances = Tensor({n, cfg.d_in});
      for (int i = 0; i < n; ++i) {
        if (b.signal_mask[i]) {
          for (int j = 0; j < cfg.d_in; ++j)
            b.instances.at(i, j) = protos[c].at(std::size_t(j)) + cfg.sigma * noise(rng);
        } else {
          for (int j = 0; j < cfg.d_in; ++j) b.instances.at(i, j) = cfg.sigma_b * noise(rng);
        }
      }
      ds.cases.push_back(std::move(b));
    }
  }

  // Fixed full-rank map from image space to prompt space plus noise; the
  // model has to learn the inverse through the prompt projection.
  Tensor map = gaussian({cfg.d_prompt, cfg.d_in}, rng, 1.0 / std::sqrt(double(cfg.d_in)));
  PromptBank bank;
  bank.embeddings = Tensor({cfg.n_classes, cfg.d_prompt});
  for (int c = 0; c < cfg.n_classes; ++c) {
    PromptEntry e;
    e.class_name = ds.class_names[c];
    e.definition = "Synthetic cluster centered on prototype " + std::to_string(c) + ".";
    e.signs = c == normal_class ? "Background-only bags with no prototype-aligned instances."
                                : "Instances concentrated near the class prototype direction.";
    bank.entries.push_back(std::move(e));
    for (int i = 0; i < cfg.d_prompt; ++i) {
      double s = 0.0;
      for (int j = 0; j < cfg.d_in; ++j) s += map.at(i, j) * protos[c].at(std::size_t(j));
      bank.embeddings.at(c, i) = s + cfg.prompt_noise * noise(rng);
    }
  }

  return {std::move(ds), std::move(bank)};
}

}  // namespace milkit
