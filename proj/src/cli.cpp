#include "milkit/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "milkit/checkpoint.hpp"
#include "milkit/data.hpp"
#include "milkit/io_util.hpp"
#include "milkit/metrics.hpp"
#include "milkit/model.hpp"
#include "milkit/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace milkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log_resolved_config(const std::string& command, const json& cfg) {
  json entry{{"command", command}, {"resolved_config", cfg}};
  std::cout << "resolved-config: " << entry.dump() << "\n";
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::exists(p) || !fs::is_directory(p))
    throw ConfigError(what + " directory not found: " + p.string());
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_empty(out) && !a.force)
    throw ConfigError("output directory " + a.out + " is not empty (use --force to overwrite)");
  a.cfg.validate();

  auto [ds, bank] = generate_synthetic(a.cfg);
  save_dataset(ds, out);
  save_prompt_bank(bank, out);

  json cfg{{"out", a.out},       {"classes", a.cfg.n_classes},
           {"cases_per_class", a.cfg.cases_per_class},
           {"dim", a.cfg.d_in},  {"d_prompt", a.cfg.d_prompt},
           {"bag_min", a.cfg.n_lo}, {"bag_max", a.cfg.n_hi},
           {"frac_min", a.cfg.frac_lo}, {"frac_max", a.cfg.frac_hi},
           {"sigma", a.cfg.sigma}, {"sigma_b", a.cfg.sigma_b},
           {"proto_scale", a.cfg.proto_scale}, {"prompt_noise", a.cfg.prompt_noise},
           {"seed", a.cfg.seed}};
  log_resolved_config("synth", cfg);
  std::cout << "wrote " << ds.cases.size() << " cases (" << ds.total_instances()
            << " instances, " << ds.n_classes() << " classes) to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, config_file;
  bool no_mfs = false, no_moae = false, no_ppl = false;
  long long seed = -1;
  int epochs = 0;
  int batch_size = 0;
  int d_model = 0;
};

std::vector<const Bag*> gather(const BagDataset& ds, const std::vector<int>& idx) {
  std::vector<const Bag*> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(&ds.cases[i]);
  return out;
}

int cmd_train(const TrainArgs& a) {
  require_dir(a.data, "data");
  BagDataset ds = load_dataset(a.data);

  json model_json = json::object();
  json train_json = json::object();
  if (!a.config_file.empty()) {
    if (!fs::exists(a.config_file)) throw ConfigError("config file not found: " + a.config_file);
    json file;
    try {
      file = json::parse(io::read_file(a.config_file));
    } catch (const json::parse_error& e) {
      throw ConfigError("config file: " + std::string(e.what()));
    }
    model_json = file.value("model", json::object());
    train_json = file.value("train", json::object());
  }

  if (model_json.contains("d_in") && model_json["d_in"].get<int>() != ds.d_in)
    throw ConfigError("config d_in=" + model_json["d_in"].dump() + " does not match dataset d_in=" +
                      std::to_string(ds.d_in));
  if (model_json.contains("n_classes") && model_json["n_classes"].get<int>() != ds.n_classes())
    throw ConfigError("config n_classes does not match dataset class count " +
                      std::to_string(ds.n_classes()));
  model_json["d_in"] = ds.d_in;
  model_json["n_classes"] = ds.n_classes();
  if (a.no_mfs) model_json["use_mfs"] = false;
  if (a.no_moae) model_json["use_moae"] = false;
  if (a.no_ppl) model_json["use_ppl"] = false;
  if (a.d_model > 0) model_json["d_model"] = a.d_model;

  TrainConfig tcfg = TrainConfig::from_json(train_json);
  if (a.seed >= 0) tcfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.epochs > 0) tcfg.epochs = a.epochs;
  if (a.batch_size > 0) tcfg.batch_size = a.batch_size;
  tcfg.validate();

  PromptBank bank;
  const bool wants_prompts = model_json.value("use_mfs", true) || model_json.value("use_ppl", true);
  if (wants_prompts) {
    bank = load_prompt_bank(a.data);
    if (bank.n_classes() != ds.n_classes())
      throw ConfigError("prompt bank class count does not match dataset");
    model_json["d_prompt"] = bank.d_prompt();
  }
  ModelConfig mcfg = ModelConfig::from_json(model_json);

  Split split = stratified_split(ds, tcfg.f_train, tcfg.f_val, tcfg.f_test, tcfg.seed);
  log_resolved_config("train", json{{"data", a.data},
                                    {"out", a.out},
                                    {"model", mcfg.to_json()},
                                    {"train", tcfg.to_json()}});

  TrainResult result = train(mcfg, mcfg.needs_prompts() ? &bank : nullptr, gather(ds, split.train),
                             gather(ds, split.val), tcfg);

  fs::create_directories(a.out);
  io::write_file(fs::path(a.out) / "history.csv", history_csv(result.history));
  save_checkpoint(fs::path(a.out) / "checkpoint.milkit", mcfg.to_json(), tcfg.to_json(),
                  ds.class_names, result.best_params);
  io::write_file(fs::path(a.out) / "resolved_config.json",
                 json{{"model", mcfg.to_json()}, {"train", tcfg.to_json()}}.dump(2) + "\n");
  std::cout << "best validation weighted accuracy " << result.best_val_acc << " at epoch "
            << result.best_epoch << "; checkpoint written to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string model, data, split = "test", out;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::exists(a.model)) throw ConfigError("checkpoint not found: " + a.model);
  require_dir(a.data, "data");
  Checkpoint ck = load_checkpoint(a.model);
  ModelConfig mcfg = ModelConfig::from_json(ck.model_config);
  TrainConfig tcfg = TrainConfig::from_json(ck.train_config);
  BagDataset ds = load_dataset(a.data);
  if (ds.d_in != mcfg.d_in)
    throw ConfigError("checkpoint/data mismatch in d_in: checkpoint " + std::to_string(mcfg.d_in) +
                      ", dataset " + std::to_string(ds.d_in));
  if (ds.n_classes() != mcfg.n_classes)
    throw ConfigError("checkpoint/data mismatch in n_classes: checkpoint " +
                      std::to_string(mcfg.n_classes) + ", dataset " +
                      std::to_string(ds.n_classes()));

  PromptBank bank;
  if (mcfg.needs_prompts()) {
    bank = load_prompt_bank(a.data);
    if (bank.d_prompt() != mcfg.d_prompt)
      throw ConfigError("checkpoint/data mismatch in d_prompt: checkpoint " +
                        std::to_string(mcfg.d_prompt) + ", prompt bank " +
                        std::to_string(bank.d_prompt()));
  }

  std::vector<int> subset;
  if (a.split == "all") {
    subset.resize(ds.cases.size());
    std::iota(subset.begin(), subset.end(), 0);
  } else {
    Split split = stratified_split(ds, tcfg.f_train, tcfg.f_val, tcfg.f_test, tcfg.seed);
    if (a.split == "train")
      subset = split.train;
    else if (a.split == "val")
      subset = split.val;
    else if (a.split == "test")
      subset = split.test;
    else
      throw ConfigError("unknown split: " + a.split);
  }

  log_resolved_config("eval", json{{"model", a.model}, {"data", a.data}, {"split", a.split}});

  ConfusionMatrix cm(ds.n_classes());
  for (int i : subset) {
    const Bag& b = ds.cases[i];
    cm.add(b.label, predict_case(b, ck.params, mcfg, mcfg.needs_prompts() ? &bank : nullptr)
                        .predicted_class);
  }
  std::cout << format_report(cm, ds.class_names);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    emit_report(cm, ds.class_names, fs::path(a.out) / "report.csv");
    std::cout << "report written to " << (fs::path(a.out) / "report.csv").string() << "\n";
  }
  return 0;
}

struct InspectArgs {
  std::string model, data, case_id, out;
};

int cmd_inspect(const InspectArgs& a) {
  if (!fs::exists(a.model)) throw ConfigError("checkpoint not found: " + a.model);
  require_dir(a.data, "data");
  Checkpoint ck = load_checkpoint(a.model);
  ModelConfig mcfg = ModelConfig::from_json(ck.model_config);
  BagDataset ds = load_dataset(a.data);
  if (ds.d_in != mcfg.d_in)
    throw ConfigError("checkpoint/data mismatch in d_in");

  const Bag* bag = nullptr;
  for (const auto& b : ds.cases)
    if (b.case_id == a.case_id) bag = &b;
  if (!bag) {
    std::vector<std::pair<std::size_t, std::string>> near;
    for (const auto& b : ds.cases) near.emplace_back(levenshtein(a.case_id, b.case_id), b.case_id);
    std::sort(near.begin(), near.end());
    std::string msg = "unknown case id: " + a.case_id + "; nearest:";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, near.size()); ++i)
      msg += " " + near[i].second;
    throw InputError(msg);
  }

  PromptBank bank;
  if (mcfg.needs_prompts()) bank = load_prompt_bank(a.data);

  log_resolved_config("inspect",
                      json{{"model", a.model}, {"data", a.data}, {"case", a.case_id}});

  CasePrediction pred = predict_case(*bag, ck.params, mcfg, mcfg.needs_prompts() ? &bank : nullptr);

  std::ostringstream csv;
  csv << "instance,activation_score,kept\n";
  char buf[64];
  for (std::size_t i = 0; i < pred.per_instance_scores.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%d\n", i, pred.per_instance_scores[i],
                  pred.kept_mask[i] ? 1 : 0);
    csv << buf;
  }
  std::snprintf(buf, sizeof(buf), "%.6f", pred.final_threshold);
  csv << "threshold,," << buf << "\n";

  std::cout << "case " << bag->case_id << ": predicted " << ds.class_names[pred.predicted_class]
            << " (true " << ds.class_names[bag->label] << ")\n";
  std::cout << "probabilities:";
  for (int c = 0; c < ds.n_classes(); ++c) {
    std::snprintf(buf, sizeof(buf), " %s=%.4f", ds.class_names[c].c_str(),
                  pred.probabilities.at(std::size_t(c)));
    std::cout << buf;
  }
  std::cout << "\nthreshold " << pred.final_threshold << ", kept "
            << std::count(pred.kept_mask.begin(), pred.kept_mask.end(), char(1)) << "/"
            << pred.kept_mask.size() << " instances\n";
  std::cout << csv.str();

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    io::write_file(fs::path(a.out) / (bag->case_id + "_scores.csv"), csv.str());
    write_activation_svg(fs::path(a.out) / (bag->case_id + "_scores.svg"),
                         pred.per_instance_scores, pred.kept_mask, pred.final_threshold);
    std::cout << "report written to " << a.out << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Case-level multiple-instance classification toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset with a prompt bank");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--classes", synth.cfg.n_classes, "number of classes");
  s->add_option("--cases-per-class", synth.cfg.cases_per_class, "cases per class");
  s->add_option("--dim", synth.cfg.d_in, "embedding dimension");
  s->add_option("--d-prompt", synth.cfg.d_prompt, "prompt embedding dimension");
  s->add_option("--bag-min", synth.cfg.n_lo, "minimum bag size");
  s->add_option("--bag-max", synth.cfg.n_hi, "maximum bag size");
  s->add_option("--frac-min", synth.cfg.frac_lo, "minimum signal fraction");
  s->add_option("--frac-max", synth.cfg.frac_hi, "maximum signal fraction");
  s->add_option("--sigma", synth.cfg.sigma, "signal noise stddev");
  s->add_option("--sigma-b", synth.cfg.sigma_b, "background noise stddev");
  s->add_option("--proto-scale", synth.cfg.proto_scale, "prototype norm");
  s->add_option("--prompt-noise", synth.cfg.prompt_noise, "prompt embedding noise");
  s->add_option("--seed", synth.cfg.seed, "RNG seed");
  s->add_flag("--force", synth.force, "overwrite a non-empty output directory");

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Train a model on a dataset directory");
  t->add_option("--data", train_args.data, "dataset directory")->required();
  t->add_option("--out", train_args.out, "output directory")->required();
  t->add_option("--config", train_args.config_file, "JSON config file (model/train sections)");
  t->add_flag("--no-mfs", train_args.no_mfs, "disable knowledge-driven token selection");
  t->add_flag("--no-moae", train_args.no_moae, "disable mixture-of-attention-experts");
  t->add_flag("--no-ppl", train_args.no_ppl, "disable prototype contrastive loss");
  t->add_option("--seed", train_args.seed, "override RNG seed");
  t->add_option("--epochs", train_args.epochs, "override epoch count");
  t->add_option("--batch-size", train_args.batch_size, "override batch size");
  t->add_option("--d-model", train_args.d_model, "override token dimension");

  EvalArgs eval_args;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("--model", eval_args.model, "checkpoint path")->required();
  e->add_option("--data", eval_args.data, "dataset directory")->required();
  e->add_option("--split", eval_args.split, "train|val|test|all");
  e->add_option("--out", eval_args.out, "report output directory");

  InspectArgs inspect_args;
  auto* i = app.add_subcommand("inspect", "Per-case activation report");
  i->add_option("--model", inspect_args.model, "checkpoint path")->required();
  i->add_option("--data", inspect_args.data, "dataset directory")->required();
  i->add_option("--case", inspect_args.case_id, "case id")->required();
  i->add_option("--out", inspect_args.out, "report output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& h) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& pe) {
    std::cerr << "usage error: " << pe.what() << "\n";
    return 2;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train_args);
    if (e->parsed()) return cmd_eval(eval_args);
    if (i->parsed()) return cmd_inspect(inspect_args);
    std::cerr << "usage error: no subcommand\n";
    return 2;
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const InputError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace milkit::cli
