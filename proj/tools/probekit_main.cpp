// probekit command-line front end. Flags are merged over the --config file
// and handed to the shared library as a JSON object.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "probekit/probekit.h"

using nlohmann::json;

namespace {

struct Flags {
  std::string config, out, store, task, probe, layer, corpus, format, input, objective, dump, name;
  std::vector<std::string> inputs, targets;
  std::optional<int> jobs;
  std::optional<unsigned long long> seed;
  std::optional<std::size_t> max_vocab;
  bool dump_predictions = false;
};

void print_error(pk_status s, const std::string& msg) {
  std::cerr << "probekit: error kind=" << pk_status_name(s) << " message=" << json(msg).dump() << "\n";
}

int load_base(const Flags& f, json& cfg) {
  cfg = json::object();
  if (f.config.empty()) return 0;
  std::ifstream in(f.config, std::ios::binary);
  if (!in) {
    print_error(PK_ERR_IO, "cannot open config '" + f.config + "'");
    return PK_ERR_IO;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  cfg = json::parse(ss.str(), nullptr, false);
  if (cfg.is_discarded() || !cfg.is_object()) {
    print_error(PK_ERR_DATA, "config '" + f.config + "' is not a JSON object");
    return PK_ERR_DATA;
  }
  return 0;
}

void set_if(json& cfg, const char* key, const std::string& v) {
  if (!v.empty()) cfg[key] = v;
}

json layer_value(const std::string& s) {
  if (s == "mix") return "mix";
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos == s.size() && v >= 0) return v;
  } catch (const std::exception&) {
  }
  return s;  // rejected downstream as a usage error
}

int run(const std::string& command, const Flags& f) {
  json cfg;
  if (int rc = load_base(f, cfg)) return rc;
  set_if(cfg, "out", f.out);
  set_if(cfg, "store", f.store);
  set_if(cfg, "task", f.task);
  set_if(cfg, "probe", f.probe);
  set_if(cfg, "corpus", f.corpus);
  set_if(cfg, "format", f.format);
  set_if(cfg, "input", f.input);
  set_if(cfg, "objective", f.objective);
  set_if(cfg, "dump", f.dump);
  set_if(cfg, "name", f.name);
  if (!f.layer.empty()) cfg["layer"] = layer_value(f.layer);
  if (!f.inputs.empty()) cfg["inputs"] = f.inputs;
  if (!f.targets.empty()) cfg["targets"] = f.targets;
  if (f.jobs) cfg["jobs"] = *f.jobs;
  if (f.seed) cfg["seed"] = *f.seed;
  if (f.max_vocab) cfg["max_vocab"] = *f.max_vocab;
  if (f.dump_predictions) cfg["dump_predictions"] = true;

  char* summary = nullptr;
  const pk_status s = pk_run(command.c_str(), cfg.dump().c_str(), &summary);
  if (s != PK_OK) {
    print_error(s, pk_last_error());
    return s;
  }
  if (summary) {
    std::cout << summary << "\n";
    pk_free(summary);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probekit: probing contextual word representations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pk_version()));

  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", f.config, "JSON config file");
    sub->add_option("-o,--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "random seed (overrides config and PROBEKIT_SEED)");
  };

  auto* compile = app.add_subcommand("compile", "compile a treebank/annotation file into a task dataset");
  common(compile);
  compile->add_option("--format", f.format, "conllu | ptb | columns | sdp | coref");
  compile->add_option("--input", f.input, "input file");
  compile->add_option("--task", f.task, "token | sparse | arc_classification | arc_prediction | coref_arc_prediction");
  compile->add_option("--name", f.name, "dataset name");

  auto* trainc = app.add_subcommand("train", "train one probe on one layer (or the scalar mix)");
  common(trainc);
  trainc->add_option("--store", f.store, "CWRS representation store");
  trainc->add_option("--task", f.task, "compiled task dataset (.jsonl)");
  trainc->add_option("--probe", f.probe, "probe architecture");
  trainc->add_option("--layer", f.layer, "layer index or 'mix'");
  trainc->add_flag("--dump-predictions", f.dump_predictions, "write predictions.jsonl");

  auto* sweep = app.add_subcommand("sweep", "probe every layer plus the scalar mix");
  common(sweep);
  sweep->add_option("--store", f.store, "CWRS representation store");
  sweep->add_option("--task", f.task, "compiled task dataset (.jsonl)");
  sweep->add_option("--probe", f.probe, "probe architecture");
  sweep->add_option("-j,--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);

  auto* bilm = app.add_subcommand("bilm-probe", "per-layer forward/backward LM perplexity");
  common(bilm);
  bilm->add_option("--store", f.store, "CWRS representation store");
  bilm->add_option("--corpus", f.corpus, "text corpus aligned with the store");
  bilm->add_option("--max-vocab", f.max_vocab, "output vocabulary size");
  bilm->add_option("-j,--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);

  auto* pretrain = app.add_subcommand("pretrain", "pretrain the mini contextualizer");
  common(pretrain);
  pretrain->add_option("--objective", f.objective, "bilm | supervised | none");
  pretrain->add_option("--corpus", f.corpus, "text corpus (bilm objective)");
  pretrain->add_option("--task", f.task, "task dataset (supervised objective)");
  pretrain->add_option("--dump", f.dump, "sentences to dump into store.cwrs");

  auto* transfer = app.add_subcommand("transfer", "pretraining task x target task transfer matrix");
  common(transfer);
  transfer->add_option("--target", f.targets, "target task dataset (repeatable)");
  transfer->add_option("--probe", f.probe, "probe architecture");
  transfer->add_option("-j,--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "collect metric files into tables and heatmaps");
  common(report);
  report->add_option("--in", f.inputs, "metrics.json file or run directory (repeatable)");
  report->add_option("--format", f.format, "svg | csv | json | all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(PK_ERR_USAGE, e.what());
    return PK_ERR_USAGE;
  }

  for (auto* sub : app.get_subcommands()) return run(sub->get_name(), f);
  return PK_ERR_USAGE;
}
