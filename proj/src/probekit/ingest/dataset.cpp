#include "probekit/ingest/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "probekit/error.hpp"
#include "probekit/rng.hpp"

namespace probekit::ingest {
namespace {

using json = nlohmann::json;

constexpr std::string_view kTaskKindNames[] = {"token_labeling",     "segmentation",        "sparse_labeling",
                                               "sparse_regression",  "pairwise_prediction", "pairwise_classification"};
constexpr std::string_view kMetricNames[] = {"accuracy", "span_f1", "f_beta", "pearson", "perplexity"};

TaskDataset start_dataset(const Corpus& corpus, TaskKind kind) {
  TaskDataset ds;
  ds.kind = kind;
  ds.metric = default_metric(kind);
  ds.sentences.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) ds.sentences.push_back({i, corpus[i].tokens, corpus[i].split});
  return ds;
}

void finish_dataset(TaskDataset& ds) {
  ds.sort_instances();
  ds.rebuild_vocab();
}

std::optional<double> parse_real(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct Arc {
  std::size_t head;
  std::size_t mod;
  std::string label;
};

std::vector<Arc> gold_arcs(const AnnotatedSentence& s, ArcSource source, std::size_t sent_id) {
  std::vector<Arc> arcs;
  if (source == ArcSource::syntactic) {
    if (!s.dep_heads || !s.dep_labels)
      throw DataError("sentence " + std::to_string(sent_id) + " has no syntactic dependencies");
    for (std::size_t i = 0; i < s.size(); ++i) {
      const int h = (*s.dep_heads)[i];
      if (h == 0) continue;  // no token stands for the root
      arcs.push_back({static_cast<std::size_t>(h - 1), i, (*s.dep_labels)[i]});
    }
  } else {
    if (!s.semgraph) throw DataError("sentence " + std::to_string(sent_id) + " has no semantic graph");
    for (const auto& a : *s.semgraph) arcs.push_back({a.head, a.mod, a.label});
  }
  return arcs;
}

}  // namespace

std::string_view to_string(TaskKind kind) { return kTaskKindNames[static_cast<int>(kind)]; }
std::string_view to_string(MetricKind kind) { return kMetricNames[static_cast<int>(kind)]; }

TaskKind parse_task_kind(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kTaskKindNames[i] == s) return static_cast<TaskKind>(i);
  throw DataError("unknown task kind '" + std::string(s) + "'");
}

MetricKind parse_metric_kind(std::string_view s) {
  for (int i = 0; i < 5; ++i)
    if (kMetricNames[i] == s) return static_cast<MetricKind>(i);
  throw DataError("unknown metric '" + std::string(s) + "'");
}

MetricKind default_metric(TaskKind kind) {
  switch (kind) {
    case TaskKind::segmentation: return MetricKind::span_f1;
    case TaskKind::sparse_regression: return MetricKind::pearson;
    default: return MetricKind::accuracy;
  }
}

bool is_pairwise(TaskKind kind) {
  return kind == TaskKind::pairwise_prediction || kind == TaskKind::pairwise_classification;
}

bool is_regression(TaskKind kind) { return kind == TaskKind::sparse_regression; }

LabelSource parse_label_source(std::string_view s) {
  if (s == "xpos") return LabelSource::xpos;
  if (s == "upos") return LabelSource::upos;
  if (s == "ancestor") return LabelSource::ancestor;
  if (s == "semtag") return LabelSource::semtag;
  if (s == "bio") return LabelSource::bio;
  throw UsageError("unknown label source '" + std::string(s) + "'");
}

ArcSource parse_arc_source(std::string_view s) {
  if (s == "syntactic") return ArcSource::syntactic;
  if (s == "semantic") return ArcSource::semantic;
  throw UsageError("unknown arc source '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

void TaskDataset::set_labels(std::vector<std::string> labels, bool fixed) {
  label_ids_.clear();
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!label_ids_.emplace(labels[i], static_cast<int>(i)).second)
      throw DataError("duplicate label '" + labels[i] + "' in vocabulary");
  label_vocab_ = std::move(labels);
  fixed_vocab = fixed;
}

int TaskDataset::label_index(std::string_view label) const {
  auto it = label_ids_.find(std::string(label));
  return it == label_ids_.end() ? static_cast<int>(label_vocab_.size()) : it->second;
}

const std::string& TaskDataset::split_of(std::size_t sent_id) const {
  if (sent_id >= sentences.size()) throw DataError("sentence id " + std::to_string(sent_id) + " has no record");
  return sentences[sent_id].split;
}

std::vector<std::size_t> TaskDataset::instances_in(std::string_view split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (split_of(instances[i].sent_id) == split) out.push_back(i);
  return out;
}

std::size_t TaskDataset::count_in(std::string_view split) const { return instances_in(split).size(); }

void TaskDataset::rebuild_vocab() {
  if (fixed_vocab || is_regression(kind)) return;
  const bool any_assigned = std::any_of(sentences.begin(), sentences.end(), [](const auto& s) { return !s.split.empty(); });
  std::set<std::string> labels;
  for (const auto& inst : instances) {
    const auto& split = split_of(inst.sent_id);
    if (any_assigned ? split == "train" : split.empty()) labels.insert(inst.label);
  }
  set_labels(std::vector<std::string>(labels.begin(), labels.end()), false);
}

void TaskDataset::sort_instances() {
  std::stable_sort(instances.begin(), instances.end(), [](const Instance& a, const Instance& b) {
    return std::tie(a.sent_id, a.pos, a.head) < std::tie(b.sent_id, b.pos, b.head);
  });
}

// ---------------------------------------------------------------------------

TaskDataset compile_token_task(const Corpus& corpus, const TokenTaskOptions& options) {
  const TaskKind kind = options.source == LabelSource::bio ? TaskKind::segmentation : TaskKind::token_labeling;
  TaskDataset ds = start_dataset(corpus, kind);
  for (std::size_t sid = 0; sid < corpus.size(); ++sid) {
    const auto& s = corpus[sid];
    auto missing = [sid](const char* what) {
      return DataError("sentence " + std::to_string(sid) + " has no " + what + " labels");
    };
    std::vector<std::string> labels;
    switch (options.source) {
      case LabelSource::xpos:
        if (!s.xpos) throw missing("xpos");
        labels = *s.xpos;
        break;
      case LabelSource::upos:
        if (!s.upos) throw missing("upos");
        labels = *s.upos;
        break;
      case LabelSource::ancestor:
        if (!s.tree) throw missing("constituency");
        labels = derive_ancestor_labels(s, options.ancestor_degree);
        break;
      case LabelSource::semtag:
      case LabelSource::bio:
        if (!s.bio) throw missing(options.source == LabelSource::bio ? "BIO" : "semantic tag");
        labels = *s.bio;
        break;
    }
    if (labels.size() != s.size())
      throw DataError("sentence " + std::to_string(sid) + ": label count differs from token count");
    if (options.only_with_spans &&
        std::all_of(labels.begin(), labels.end(), [](const std::string& l) { return l == "O"; }))
      continue;
    for (std::size_t i = 0; i < labels.size(); ++i) ds.instances.push_back({sid, i, 0, labels[i], 0.0});
  }
  if (options.source == LabelSource::ancestor) ds.metadata["ancestor_degree"] = options.ancestor_degree;
  if (options.only_with_spans) ds.metadata["sentence_filter"] = "has_span";
  finish_dataset(ds);
  return ds;
}

TaskDataset compile_sparse_task(const Corpus& corpus, SparseKind kind) {
  TaskDataset ds =
      start_dataset(corpus, kind == SparseKind::regression ? TaskKind::sparse_regression : TaskKind::sparse_labeling);
  json warnings = json::array();
  for (std::size_t sid = 0; sid < corpus.size(); ++sid) {
    const auto& s = corpus[sid];
    if (!s.sparse_targets) continue;
    for (const auto& t : *s.sparse_targets) {
      Instance inst{sid, t.index, 0, t.label, 0.0};
      if (kind == SparseKind::regression) {
        auto v = t.value ? t.value : parse_real(t.label);
        if (!v)
          throw DataError("sentence " + std::to_string(sid) + ": regression target '" + t.label + "' is not a finite number");
        inst.value = *v;
        inst.label.clear();
        if (*v < -3.0 || *v > 3.0)
          warnings.push_back("sentence " + std::to_string(sid) + " token " + std::to_string(t.index) +
                             ": value outside [-3, 3]");
      }
      ds.instances.push_back(std::move(inst));
    }
  }
  if (!warnings.empty()) ds.metadata["warnings"] = warnings;
  finish_dataset(ds);
  return ds;
}

TaskDataset compile_dep_arc_classification(const Corpus& corpus, ArcSource source) {
  TaskDataset ds = start_dataset(corpus, TaskKind::pairwise_classification);
  for (std::size_t sid = 0; sid < corpus.size(); ++sid)
    for (auto& a : gold_arcs(corpus[sid], source, sid)) ds.instances.push_back({sid, a.mod, a.head, a.label, 0.0});
  ds.metadata["arc_source"] = source == ArcSource::syntactic ? "syntactic" : "semantic";
  finish_dataset(ds);
  return ds;
}

TaskDataset compile_dep_arc_prediction(const Corpus& corpus, ArcSource source, std::uint64_t seed) {
  TaskDataset ds = start_dataset(corpus, TaskKind::pairwise_prediction);
  Rng rng(seed);
  std::size_t dropped = 0;
  for (std::size_t sid = 0; sid < corpus.size(); ++sid) {
    const auto& s = corpus[sid];
    std::set<std::pair<std::size_t, std::size_t>> positives;  // (mod, head)
    std::map<std::size_t, std::set<std::size_t>> heads_of;
    for (const auto& a : gold_arcs(s, source, sid)) {
      positives.insert({a.mod, a.head});
      heads_of[a.mod].insert(a.head);
    }
    for (const auto& [mod, head] : positives) {
      std::vector<std::size_t> eligible;
      for (std::size_t j = 0; j < s.size(); ++j)
        if (j != mod && !heads_of[mod].contains(j)) eligible.push_back(j);
      if (eligible.empty()) {
        ++dropped;
        continue;
      }
      const std::size_t neg = eligible[uniform_index(rng, eligible.size())];
      ds.instances.push_back({sid, mod, head, std::string(kPositiveArc), 0.0});
      ds.instances.push_back({sid, mod, neg, std::string(kNegativeArc), 0.0});
    }
  }
  ds.metadata["arc_source"] = source == ArcSource::syntactic ? "syntactic" : "semantic";
  ds.metadata["negative_seed"] = seed;
  ds.metadata["dropped_positives"] = dropped;
  finish_dataset(ds);
  return ds;
}

TaskDataset compile_coref_arc_prediction(const Corpus& corpus, std::uint64_t seed) {
  TaskDataset ds = start_dataset(corpus, TaskKind::pairwise_prediction);
  Rng rng(seed);
  std::size_t dropped = 0;
  for (std::size_t sid = 0; sid < corpus.size(); ++sid) {
    const auto& s = corpus[sid];
    if (!s.clusters) throw DataError("sentence " + std::to_string(sid) + " has no coreference clusters");
    std::vector<std::pair<std::size_t, std::size_t>> mentions;  // (token, cluster)
    for (std::size_t c = 0; c < s.clusters->size(); ++c)
      for (std::size_t m : (*s.clusters)[c]) mentions.push_back({m, c});
    std::sort(mentions.begin(), mentions.end());
    // Positives in (b, a) order so sampling follows the final instance order.
    for (const auto& [b, cb] : mentions) {
      for (const auto& [a, ca] : mentions) {
        if (a >= b) break;
        if (ca != cb) continue;
        std::vector<std::size_t> eligible;
        for (const auto& [m, cm] : mentions)
          if (m < b && cm != cb) eligible.push_back(m);
        if (eligible.empty()) {
          ++dropped;
          continue;
        }
        const std::size_t neg = eligible[uniform_index(rng, eligible.size())];
        ds.instances.push_back({sid, b, a, std::string(kPositiveArc), 0.0});
        ds.instances.push_back({sid, b, neg, std::string(kNegativeArc), 0.0});
      }
    }
  }
  ds.metadata["mention_reduction"] = "final_token";
  ds.metadata["negative_seed"] = seed;
  ds.metadata["dropped_positives"] = dropped;
  finish_dataset(ds);
  return ds;
}

void split_dataset(TaskDataset& dataset, const SplitPolicy& policy) {
  const bool has_provided =
      std::any_of(dataset.sentences.begin(), dataset.sentences.end(), [](const auto& s) { return !s.split.empty(); });
  if (!(policy.use_provided && has_provided)) {
    const std::size_t n = dataset.sentences.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(policy.seed);
    shuffle(std::span<std::size_t>(order), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(policy.train_fraction * double(n) + 1e-9));
    const auto n_dev = static_cast<std::size_t>(std::floor(policy.dev_fraction * double(n) + 1e-9));
    for (std::size_t r = 0; r < n; ++r) {
      auto& rec = dataset.sentences[order[r]];
      rec.split = r < n_train ? "train" : (r < n_train + n_dev ? "dev" : "test");
    }
  }
  if (dataset.count_in("train") == 0) throw DataError("dataset '" + dataset.name + "' has an empty train split");
  dataset.rebuild_vocab();
}

// ---------------------------------------------------------------------------

std::filesystem::path vocab_path_for(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_extension(".vocab.json");
  return p;
}

nlohmann::json vocab_to_json(const TaskDataset& ds) {
  json v;
  v["task"] = ds.name;
  v["kind"] = to_string(ds.kind);
  v["metric"] = to_string(ds.metric);
  v["labels"] = ds.labels();
  v["oov_label"] = kOovLabel;
  v["fixed_vocab"] = ds.fixed_vocab;
  if (ds.metric == MetricKind::f_beta) v["positive_label"] = ds.positive_label;
  v["metadata"] = ds.metadata;
  return v;
}

std::string dataset_to_jsonl(const TaskDataset& ds) {
  std::vector<json> per_sentence(ds.sentences.size(), json::array());
  const bool pairwise = is_pairwise(ds.kind);
  for (const auto& inst : ds.instances) {
    json j;
    if (pairwise) {
      j["head"] = inst.head;
      j["mod"] = inst.pos;
    } else {
      j["pos"] = inst.pos;
    }
    if (is_regression(ds.kind)) {
      j["value"] = inst.value;
    } else {
      j["label"] = inst.label;
    }
    per_sentence.at(inst.sent_id).push_back(std::move(j));
  }
  std::string out;
  for (const auto& rec : ds.sentences) {
    json r;
    r["sent_id"] = rec.sent_id;
    r["kind"] = to_string(ds.kind);
    if (!rec.split.empty()) r["split"] = rec.split;
    r["tokens"] = rec.tokens;
    r["instances"] = std::move(per_sentence[rec.sent_id]);
    out += r.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const TaskDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << dataset_to_jsonl(ds);
  std::ofstream vout(vocab_path_for(path), std::ios::binary | std::ios::trunc);
  if (!vout) throw IoError("cannot open '" + vocab_path_for(path).string() + "' for writing");
  vout << vocab_to_json(ds).dump(2) << '\n';
}

TaskDataset dataset_from_jsonl(std::string_view jsonl, const nlohmann::json* vocab) {
  TaskDataset ds;
  bool kind_known = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    std::size_t end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    const auto line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const json r = json::parse(line);
      const TaskKind kind = parse_task_kind(r.at("kind").get<std::string>());
      if (kind_known && kind != ds.kind) throw DataError("mixed task kinds in one dataset");
      ds.kind = kind;
      kind_known = true;
      SentenceRecord rec;
      rec.sent_id = r.at("sent_id").get<std::size_t>();
      rec.split = r.value("split", std::string{});
      rec.tokens = r.value("tokens", std::vector<std::string>{});
      if (rec.sent_id != ds.sentences.size())
        throw DataError("sentence records must be dense and ordered; expected sent_id " +
                        std::to_string(ds.sentences.size()));
      for (const auto& j : r.at("instances")) {
        Instance inst;
        inst.sent_id = rec.sent_id;
        if (is_pairwise(kind)) {
          inst.head = j.at("head").get<std::size_t>();
          inst.pos = j.at("mod").get<std::size_t>();
        } else {
          inst.pos = j.at("pos").get<std::size_t>();
        }
        if (is_regression(kind)) {
          inst.value = j.at("value").get<double>();
        } else {
          inst.label = j.at("label").get<std::string>();
        }
        ds.instances.push_back(std::move(inst));
      }
      ds.sentences.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed dataset record: ") + e.what(), line_no);
    }
  }
  ds.metric = default_metric(ds.kind);
  if (vocab) {
    ds.name = vocab->value("task", std::string{});
    if (vocab->contains("kind") && kind_known && parse_task_kind(vocab->at("kind").get<std::string>()) != ds.kind)
      throw DataError("vocab file kind does not match dataset");
    if (!kind_known && vocab->contains("kind")) ds.kind = parse_task_kind(vocab->at("kind").get<std::string>());
    ds.metric = parse_metric_kind(vocab->value("metric", std::string(to_string(default_metric(ds.kind)))));
    const bool fixed = vocab->value("fixed_vocab", false);
    auto labels = vocab->value("labels", std::vector<std::string>{});
    if (!fixed) std::sort(labels.begin(), labels.end());
    ds.set_labels(std::move(labels), fixed);
    ds.positive_label = vocab->value("positive_label", ds.positive_label);
    ds.metadata = vocab->value("metadata", json::object());
  } else {
    ds.rebuild_vocab();
  }
  ds.sort_instances();
  return ds;
}

TaskDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const auto vpath = vocab_path_for(path);
  std::optional<json> vocab;
  if (std::filesystem::exists(vpath)) {
    std::ifstream vin(vpath, std::ios::binary);
    try {
      vocab = json::parse(vin);
    } catch (const json::exception& e) {
      throw DataError("malformed vocab file '" + vpath.string() + "': " + e.what());
    }
  }
  TaskDataset ds = dataset_from_jsonl(buf.str(), vocab ? &*vocab : nullptr);
  if (ds.name.empty()) ds.name = path.stem().string();
  return ds;
}

}  // namespace probekit::ingest
