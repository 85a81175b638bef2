#include "probekit/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

#include "probekit/bilmprobe.hpp"
#include "probekit/error.hpp"
#include "probekit/ingest/corpus.hpp"
#include "probekit/ingest/dataset.hpp"
#include "probekit/minictx.hpp"
#include "probekit/probes.hpp"
#include "probekit/report.hpp"
#include "probekit/reprstore.hpp"
#include "probekit/trainer.hpp"

namespace probekit::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw IoError("cannot open '" + path.string() + "': no such file");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string require_string(const json& cfg, const char* key) {
  if (!cfg.contains(key)) throw UsageError(std::string("config is missing '") + key + "'");
  if (!cfg.at(key).is_string()) throw UsageError(std::string("config key '") + key + "' must be a string");
  return cfg.at(key).get<std::string>();
}

fs::path out_dir(const json& cfg) {
  const fs::path dir = require_string(cfg, "out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

store::ReprStore open_store(const std::string& path) {
  if (!fs::is_regular_file(path)) throw IoError("cannot open store '" + path + "': no such file");
  return store::ReprStore::open(path);
}

ingest::TaskDataset open_dataset(const std::string& path) {
  if (!fs::is_regular_file(path)) throw IoError("cannot open dataset '" + path + "': no such file");
  return ingest::load_dataset(path);
}

train::TrainConfig train_config(const json& cfg, const char* key, train::TrainConfig defaults) {
  defaults.seed = resolve_seed(cfg);
  if (cfg.contains(key)) {
    if (!cfg.at(key).is_object()) throw UsageError(std::string("config key '") + key + "' must be an object");
    defaults = train::train_config_from_json(cfg.at(key), defaults);
  }
  return defaults;
}

std::size_t jobs_of(const json& cfg) {
  const auto j = cfg.value("jobs", 1);
  if (j < 1) throw UsageError("jobs must be >= 1");
  return static_cast<std::size_t>(j);
}

std::string slug(std::string_view s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "unnamed" : out;
}

ingest::Corpus parse_corpus(std::string_view format, const std::string& text, const json& cfg) {
  if (format == "conllu") return ingest::parse_conllu(text);
  if (format == "ptb") return ingest::parse_ptb_trees(text);
  if (format == "sdp") return ingest::parse_sdp(text);
  if (format == "coref") return ingest::parse_coref_jsonl(text);
  if (format == "columns") {
    ingest::ColumnSchema schema;
    const json c = cfg.value("columns", json::object());
    schema.token_col = c.value("token_col", schema.token_col);
    schema.label_col = c.value("label_col", schema.label_col);
    schema.separator = c.value("separator", schema.separator);
    schema.sparse = c.value("sparse", schema.sparse);
    return ingest::parse_conll_columns(text, schema);
  }
  throw UsageError("unknown corpus format '" + std::string(format) + "' (expected conllu, ptb, columns, sdp or coref)");
}

std::vector<train::ProbeReport> read_reports(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  std::vector<train::ProbeReport> out;
  if (j.is_array())
    for (const auto& r : j) out.push_back(train::probe_report_from_json(r));
  else
    out.push_back(train::probe_report_from_json(j));
  return out;
}

}  // namespace

std::uint64_t resolve_seed(const json& cfg) {
  if (cfg.contains("seed")) {
    if (!cfg.at("seed").is_number_integer()) throw UsageError("config key 'seed' must be an integer");
    return cfg.at("seed").get<std::uint64_t>();
  }
  if (const char* env = std::getenv("PROBEKIT_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw UsageError("PROBEKIT_SEED must be a non-negative integer, got '" + std::string(s) + "'");
    return v;
  }
  return 1;
}

json load_config(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw DataError("config '" + path.string() + "' must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw DataError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

Sentences load_sentences(const fs::path& path) {
  if (path.extension() == ".jsonl") {
    const auto ds = open_dataset(path.string());
    Sentences out;
    for (const auto& s : ds.sentences) out.push_back(s.tokens);
    return out;
  }
  std::istringstream in(read_text(path));
  Sentences out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  return out;
}

// ---------------------------------------------------------------------------

json run_compile(const json& cfg) {
  const auto dir = out_dir(cfg);
  const std::string format = require_string(cfg, "format");
  if (!cfg.contains("input")) throw UsageError("config is missing 'input'");
  const json& input = cfg.at("input");

  ingest::Corpus corpus;
  if (input.is_string()) {
    corpus = parse_corpus(format, read_text(input.get<std::string>()), cfg);
  } else if (input.is_object()) {
    for (const char* split : {"train", "dev", "test"}) {
      if (!input.contains(split)) continue;
      auto part = parse_corpus(format, read_text(input.at(split).get<std::string>()), cfg);
      for (auto& s : part) {
        s.split = split;
        corpus.push_back(std::move(s));
      }
    }
    for (const auto& [k, v] : input.items())
      if (k != "train" && k != "dev" && k != "test") throw UsageError("unknown input split '" + k + "'");
  } else {
    throw UsageError("'input' must be a path or an object of per-split paths");
  }

  const std::uint64_t seed = resolve_seed(cfg);
  const std::string task = cfg.value("task", std::string("token"));
  ingest::TaskDataset ds;
  if (task == "token") {
    ingest::TokenTaskOptions opt;
    opt.source = ingest::parse_label_source(cfg.value("label_source", std::string("xpos")));
    opt.ancestor_degree = cfg.value("ancestor_degree", 1);
    opt.only_with_spans = cfg.value("only_with_spans", false);
    ds = ingest::compile_token_task(corpus, opt);
  } else if (task == "sparse") {
    const std::string kind = cfg.value("sparse_kind", std::string("classification"));
    if (kind != "classification" && kind != "regression")
      throw UsageError("sparse_kind must be classification or regression");
    ds = ingest::compile_sparse_task(corpus, kind == "regression" ? ingest::SparseKind::regression
                                                                  : ingest::SparseKind::classification);
  } else if (task == "arc_classification") {
    ds = ingest::compile_dep_arc_classification(
        corpus, ingest::parse_arc_source(cfg.value("arc_source", std::string("syntactic"))));
  } else if (task == "arc_prediction") {
    ds = ingest::compile_dep_arc_prediction(
        corpus, ingest::parse_arc_source(cfg.value("arc_source", std::string("syntactic"))), seed);
  } else if (task == "coref_arc_prediction") {
    ds = ingest::compile_coref_arc_prediction(corpus, seed);
  } else {
    throw UsageError("unknown task '" + task +
                     "' (expected token, sparse, arc_classification, arc_prediction or coref_arc_prediction)");
  }
  ds.name = cfg.value("name", task);
  if (cfg.contains("metric")) ds.metric = ingest::parse_metric_kind(cfg.at("metric").get<std::string>());
  ds.positive_label = cfg.value("positive_label", ds.positive_label);

  ingest::SplitPolicy policy;
  policy.seed = seed;
  if (cfg.contains("split")) {
    const auto& s = cfg.at("split");
    policy.use_provided = s.value("use_provided", policy.use_provided);
    policy.train_fraction = s.value("train_fraction", policy.train_fraction);
    policy.dev_fraction = s.value("dev_fraction", policy.dev_fraction);
  }
  ingest::split_dataset(ds, policy);

  const fs::path path = dir / (slug(ds.name) + ".jsonl");
  ingest::save_dataset(ds, path);
  return {{"dataset", path.string()},
          {"name", ds.name},
          {"kind", ingest::to_string(ds.kind)},
          {"metric", ingest::to_string(ds.metric)},
          {"sentences", ds.sentences.size()},
          {"instances", {{"train", ds.count_in("train")}, {"dev", ds.count_in("dev")}, {"test", ds.count_in("test")}}},
          {"labels", ds.num_classes()}};
}

json run_train(const json& cfg) {
  const auto dir = out_dir(cfg);
  const auto st = open_store(require_string(cfg, "store"));
  const auto ds = open_dataset(require_string(cfg, "task"));
  auto pc = train::config_for(ds, probes::parse_arch(cfg.value("probe", std::string("linear"))));
  if (cfg.contains("layer") && cfg.at("layer").is_string()) {
    if (cfg.at("layer").get<std::string>() != "mix") throw UsageError("layer must be an integer or \"mix\"");
    pc.mix_layers = st.num_layers();
  } else {
    pc.layer = cfg.value("layer", std::size_t{0});
  }
  const auto tc = train_config(cfg, "train", {});
  const auto trained = train::train_probe(ds, st, pc, tc);
  const std::string split = train::report_split(ds);
  const auto ids = ds.instances_in(split);
  const train::ProbeData data(ds, st, pc);
  const auto outputs = train::predict(trained.model, data, ids);
  const auto metric = train::score(ds, ids, outputs, trained.dev_metric);
  const auto report = train::make_report(trained, ds, st, metric, split);

  write_json(dir / "metrics.json", train::to_json(report));
  trained.model.save(dir / "probe.pkp");
  if (cfg.value("dump_predictions", false)) {
    std::string lines;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& inst = ds.instances[ids[i]];
      json rec = {{"sent_id", inst.sent_id}, {"pos", inst.pos}};
      if (ingest::is_pairwise(ds.kind)) rec["head"] = inst.head;
      const auto r = static_cast<Eigen::Index>(i);
      if (pc.regress) {
        rec["gold"] = inst.value;
        rec["pred"] = outputs(r, 0);
      } else {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < outputs.cols(); ++c)
          if (outputs(r, c) > outputs(r, best)) best = c;
        rec["gold"] = inst.label;
        rec["pred"] = ds.labels()[static_cast<std::size_t>(best)];
        if (ds.metric == ingest::MetricKind::perplexity) {
          const auto logp = tensor::log_softmax_rows(tensor::Tensor2D(outputs.row(r)));
          rec["nll"] = -double(logp(0, ds.label_index(inst.label)));
        }
      }
      lines += rec.dump() + "\n";
    }
    write_text(dir / "predictions.jsonl", lines);
  }
  return {{"metrics", (dir / "metrics.json").string()}, {"value", metric.value}, {"metric_name", metric.metric_name}};
}

json run_sweep(const json& cfg) {
  const auto dir = out_dir(cfg);
  std::vector<json> runs;
  if (cfg.contains("runs")) {
    if (!cfg.at("runs").is_array() || cfg.at("runs").empty()) throw UsageError("'runs' must be a non-empty array");
    for (const auto& r : cfg.at("runs")) {
      json merged = cfg;
      merged.erase("runs");
      for (const auto& [k, v] : r.items()) merged[k] = v;
      runs.push_back(std::move(merged));
    }
  } else {
    runs.push_back(cfg);
  }

  std::map<std::string, std::unique_ptr<store::ReprStore>> stores;
  std::map<std::string, std::unique_ptr<ingest::TaskDataset>> datasets;
  std::vector<train::ProbeReport> reports;
  struct Row {
    std::string task, representation, arch;
    std::vector<double> layers;
    double mix;
  };
  std::vector<Row> rows;
  std::size_t max_layers = 0;
  for (const auto& run : runs) {
    const std::string sp = require_string(run, "store"), tp = require_string(run, "task");
    auto& st = stores[sp];
    if (!st) st = std::make_unique<store::ReprStore>(open_store(sp));
    auto& ds = datasets[tp];
    if (!ds) ds = std::make_unique<ingest::TaskDataset>(open_dataset(tp));
    const auto pc = train::config_for(*ds, probes::parse_arch(run.value("probe", std::string("linear"))));
    const auto tc = train_config(run, "train", {});
    const auto res = train::sweep_layers(*ds, *st, pc, tc, jobs_of(run));
    Row row{ds->name, st->header().model_name, std::string(probes::to_string(pc.arch)), {}, res.mix.metric.value};
    for (const auto& l : res.layers) {
      row.layers.push_back(l.metric.value);
      reports.push_back(l);
    }
    reports.push_back(res.mix);
    max_layers = std::max(max_layers, row.layers.size());
    rows.push_back(std::move(row));
  }

  json all = json::array();
  for (const auto& r : reports) all.push_back(train::to_json(r));
  write_json(dir / "metrics.json", all);

  std::string csv = "task,representation,arch";
  for (std::size_t l = 0; l < max_layers; ++l) csv += "," + std::to_string(l);
  csv += ",mix\n";
  for (const auto& r : rows) {
    csv += r.task + "," + r.representation + "," + r.arch;
    for (std::size_t l = 0; l < max_layers; ++l) csv += "," + (l < r.layers.size() ? report::format_2dp(r.layers[l]) : "");
    csv += "," + report::format_2dp(r.mix) + "\n";
  }
  write_text(dir / "heatmap_row.csv", csv);

  // Heatmap: rows = layers (+ mix), columns = runs.
  bool multi_rep = false;
  for (const auto& r : rows) multi_rep |= r.representation != rows[0].representation || r.arch != rows[0].arch;
  std::vector<std::string> row_labels, col_labels;
  for (std::size_t l = 0; l < max_layers; ++l) row_labels.push_back("layer " + std::to_string(l));
  row_labels.push_back("mix");
  std::vector<std::vector<double>> m(max_layers + 1, std::vector<double>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    col_labels.push_back(multi_rep ? rows[c].task + " (" + rows[c].representation + ", " + rows[c].arch + ")"
                                   : rows[c].task);
    for (std::size_t l = 0; l < max_layers; ++l)
      m[l][c] = l < rows[c].layers.size() ? rows[c].layers[l] : std::numeric_limits<double>::quiet_NaN();
    m[max_layers][c] = rows[c].mix;
  }
  const std::string title = multi_rep ? "layerwise probing" : rows[0].representation + " / " + rows[0].arch;
  write_text(dir / "heatmap.svg", report::emit_heatmap(m, row_labels, col_labels, title));
  return {{"metrics", (dir / "metrics.json").string()}, {"runs", rows.size()}, {"reports", reports.size()}};
}

json run_bilm_probe(const json& cfg) {
  const auto dir = out_dir(cfg);
  const auto st = open_store(require_string(cfg, "store"));
  const auto sentences = load_sentences(require_string(cfg, "corpus"));
  bilm::check_alignment(st, sentences);
  const std::uint64_t seed = resolve_seed(cfg);
  const auto data = bilm::build_bilm_data(sentences, seed, cfg.value("max_vocab", bilm::kDefaultMaxVocab));
  const auto evals = bilm::bilm_sweep(st, data, train_config(cfg, "train", {}), jobs_of(cfg));

  json layers = json::array(), nll = json::array();
  bilm::BilmEval best = evals.front();
  for (const auto& e : evals) {
    layers.push_back(bilm::to_json(e));
    nll.push_back({{"layer", e.layer}, {"fwd", e.fwd_nll}, {"bwd", e.bwd_nll}});
    if (e.avg_ppl < best.avg_ppl) best = e;
  }
  write_json(dir / "bilm.json", {{"representation", st.header().model_name},
                                 {"seed", seed},
                                 {"V", data.vocab.size()},
                                 {"oov_rate", data.oov_rate},
                                 {"train_sentences", data.split.train.size()},
                                 {"eval_sentences", data.split.eval.size()},
                                 {"unk_note", "out-of-vocabulary tokens are scored as the <unk> class"},
                                 {"layers", layers}});
  write_json(dir / "nll.json", nll);

  std::vector<report::CurveSeries> series(3);
  series[0].name = "average";
  series[1].name = "forward";
  series[2].name = "backward";
  for (const auto& e : evals) {
    series[0].values.push_back(e.avg_ppl);
    series[1].values.push_back(e.fwd_ppl);
    series[2].values.push_back(e.bwd_ppl);
  }
  write_text(dir / "ppl_curve.svg", report::emit_ppl_curve(series, st.header().model_name + " BiLM probe"));
  return {{"bilm", (dir / "bilm.json").string()}, {"best_layer", best.layer}, {"best_avg_ppl", best.avg_ppl}};
}

namespace {

train::TrainConfig pretrain_defaults() {
  train::TrainConfig tc;
  tc.max_epochs = 10;
  return tc;
}

}  // namespace

json run_pretrain(const json& cfg) {
  const auto dir = out_dir(cfg);
  ctx::PretrainSpec spec;
  spec.objective = ctx::parse_objective(cfg.value("objective", std::string("bilm")));
  spec.name = cfg.value("name", std::string(ctx::to_string(spec.objective)));
  spec.train = train_config(cfg, "train", pretrain_defaults());

  std::vector<const Sentences*> vocab_sources;
  std::unique_ptr<ingest::TaskDataset> task;
  Sentences task_sentences, dump;
  if (cfg.contains("corpus")) spec.corpus = load_sentences(require_string(cfg, "corpus"));
  if (spec.objective == ctx::Objective::bilm && spec.corpus.empty())
    throw UsageError("BiLM pretraining needs a non-empty 'corpus'");
  if (cfg.contains("task")) {
    task = std::make_unique<ingest::TaskDataset>(open_dataset(require_string(cfg, "task")));
    for (const auto& s : task->sentences) task_sentences.push_back(s.tokens);
    spec.task = task.get();
  }
  if (spec.objective == ctx::Objective::supervised && !task) throw UsageError("supervised pretraining needs 'task'");
  if (cfg.contains("dump")) dump = load_sentences(require_string(cfg, "dump"));
  vocab_sources = {&spec.corpus, &task_sentences, &dump};

  auto cc = ctx::ctx_config_from_json(cfg.value("ctx", json::object()));
  if (!cfg.value("ctx", json::object()).contains("seed")) cc.seed = resolve_seed(cfg);
  cc.vocab = ctx::build_vocab(vocab_sources);
  ctx::Contextualizer model(cc);
  const auto log = ctx::pretrain(model, spec);
  model.save(dir / "ctx.pkp");
  write_json(dir / "pretrain_log.json", ctx::to_json(log));
  json summary = {{"checkpoint", (dir / "ctx.pkp").string()}, {"epochs", log.epochs.size()}};
  if (!log.epochs.empty()) summary["final_metric"] = log.epochs.back().metric;
  if (cfg.contains("dump")) {
    const fs::path sp = dir / "store.cwrs";
    ctx::freeze_and_dump(model, dump, &sp);
    summary["store"] = sp.string();
  }
  return summary;
}

json run_transfer(const json& cfg) {
  const auto dir = out_dir(cfg);
  if (!cfg.contains("targets") || !cfg.at("targets").is_array() || cfg.at("targets").empty())
    throw UsageError("'targets' must be a non-empty array of dataset paths");
  std::vector<std::unique_ptr<ingest::TaskDataset>> owned;
  std::vector<const ingest::TaskDataset*> targets;
  for (const auto& t : cfg.at("targets")) {
    owned.push_back(std::make_unique<ingest::TaskDataset>(open_dataset(t.get<std::string>())));
    targets.push_back(owned.back().get());
  }

  const auto pre_defaults = train_config(cfg, "pretrain_train", pretrain_defaults());
  std::vector<ctx::PretrainSpec> specs;
  std::vector<Sentences> extra;  // vocab sources beyond the targets
  extra.reserve(2 * cfg.value("specs", json::array()).size() + 1);
  for (const auto& s : cfg.value("specs", json::array())) {
    ctx::PretrainSpec spec;
    spec.objective = ctx::parse_objective(s.value("objective", std::string("none")));
    spec.name = s.value("name", std::string(ctx::to_string(spec.objective)));
    spec.train = s.contains("train") ? train::train_config_from_json(s.at("train"), pre_defaults) : pre_defaults;
    if (s.contains("corpus")) spec.corpus = load_sentences(s.at("corpus").get<std::string>());
    if (spec.objective == ctx::Objective::bilm && spec.corpus.empty())
      throw UsageError("BiLM spec '" + spec.name + "' needs a non-empty 'corpus'");
    if (s.contains("task")) {
      owned.push_back(std::make_unique<ingest::TaskDataset>(open_dataset(s.at("task").get<std::string>())));
      spec.task = owned.back().get();
      Sentences ts;
      for (const auto& r : spec.task->sentences) ts.push_back(r.tokens);
      extra.push_back(std::move(ts));
    }
    if (spec.objective == ctx::Objective::supervised && !spec.task)
      throw UsageError("supervised spec '" + spec.name + "' needs a 'task'");
    specs.push_back(std::move(spec));
  }

  Sentences shared;
  for (const auto& r : targets[0]->sentences) shared.push_back(r.tokens);
  std::vector<const Sentences*> sources{&shared};
  for (const auto& s : specs) sources.push_back(&s.corpus);
  for (const auto& e : extra) sources.push_back(&e);

  auto cc = ctx::ctx_config_from_json(cfg.value("ctx", json::object()));
  if (!cfg.value("ctx", json::object()).contains("seed")) cc.seed = resolve_seed(cfg);
  cc.vocab = ctx::build_vocab(sources);
  const auto arch = probes::parse_arch(cfg.value("probe", std::string("linear")));
  const auto result = ctx::transfer_matrix(cc, specs, targets, arch, train_config(cfg, "train", {}), jobs_of(cfg));

  write_json(dir / "transfer.json", ctx::to_json(result));
  std::string csv = "pretraining";
  for (const auto& c : result.columns) csv += "," + c;
  csv += ",average\n";
  std::string per_task = "pretraining,task";
  for (const auto& c : result.columns) per_task += "," + c;
  per_task += "\n";
  std::vector<std::string> col_labels;
  for (const auto& c : result.columns) col_labels.push_back(c == "mix" ? "mix" : "layer " + c);
  for (std::size_t r = 0; r < result.rows.size(); ++r) {
    csv += result.rows[r];
    double avg = 0.0;
    for (double v : result.values[r]) {
      csv += "," + report::format_2dp(v);
      avg += v / double(result.values[r].size());
    }
    csv += "," + report::format_2dp(avg) + "\n";
    for (std::size_t t = 0; t < result.tasks.size(); ++t) {
      per_task += result.rows[r] + "," + result.tasks[t];
      for (double v : result.per_task[r][t]) per_task += "," + report::format_2dp(v);
      per_task += "\n";
    }
  }
  write_text(dir / "transfer.csv", csv);
  write_text(dir / "transfer_per_task.csv", per_task);
  write_text(dir / "transfer.svg", report::emit_heatmap(result.values, result.rows, col_labels,
                                                        "transfer (averaged across target tasks)"));
  return {{"transfer", (dir / "transfer.json").string()}, {"rows", result.rows}};
}

json run_report(const json& cfg) {
  const auto dir = out_dir(cfg);
  if (!cfg.contains("inputs") || !cfg.at("inputs").is_array() || cfg.at("inputs").empty())
    throw UsageError("'inputs' must be a non-empty array of result directories or metrics files");
  const std::string format = cfg.value("format", std::string("all"));
  if (format != "svg" && format != "csv" && format != "json" && format != "all")
    throw UsageError("unknown report format '" + format + "' (expected svg, csv, json or all)");

  std::vector<train::ProbeReport> reports;
  for (const auto& in : cfg.at("inputs")) {
    fs::path p = in.get<std::string>();
    if (fs::is_directory(p)) p /= "metrics.json";
    auto part = read_reports(p);
    reports.insert(reports.end(), part.begin(), part.end());
  }
  const auto table = report::build_table(report::cells_from_reports(reports));
  json files = json::array();
  if (format == "csv" || format == "all") {
    write_text(dir / "tables.csv", report::emit_csv(table));
    files.push_back((dir / "tables.csv").string());
  }
  if (format == "json" || format == "all") {
    write_json(dir / "tables.json", report::emit_json(table));
    files.push_back((dir / "tables.json").string());
  }
  if (format == "svg" || format == "all") {
    // One layer × task grid per representation.
    std::vector<std::string> reps;
    for (const auto& [rep, layer] : table.rows)
      if (std::find(reps.begin(), reps.end(), rep) == reps.end()) reps.push_back(rep);
    for (const auto& rep : reps) {
      std::vector<std::string> row_labels;
      std::vector<std::vector<double>> m;
      for (std::size_t r = 0; r < table.rows.size(); ++r) {
        if (table.rows[r].first != rep) continue;
        row_labels.push_back(table.rows[r].second == "mix" ? "mix" : "layer " + table.rows[r].second);
        std::vector<double> row;
        for (const auto& v : table.values[r]) row.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
        m.push_back(std::move(row));
      }
      const fs::path p = dir / ("heatmap_" + slug(rep) + ".svg");
      write_text(p, report::emit_heatmap(m, row_labels, table.tasks, rep));
      files.push_back(p.string());
    }
  }
  return {{"files", files}, {"reports", reports.size()}};
}

json run(std::string_view command, const json& cfg) {
  if (!cfg.is_object()) throw UsageError("config must be a JSON object");
  try {
    if (command == "compile") return run_compile(cfg);
    if (command == "train") return run_train(cfg);
    if (command == "sweep") return run_sweep(cfg);
    if (command == "bilm-probe") return run_bilm_probe(cfg);
    if (command == "pretrain") return run_pretrain(cfg);
    if (command == "transfer") return run_transfer(cfg);
    if (command == "report") return run_report(cfg);
  } catch (const json::type_error& e) {
    throw UsageError(std::string("config value has the wrong type: ") + e.what());
  } catch (const json::out_of_range& e) {
    throw UsageError(std::string("config is missing a required value: ") + e.what());
  }
  throw UsageError("unknown subcommand '" + std::string(command) + "'");
}

}  // namespace probekit::pipeline
