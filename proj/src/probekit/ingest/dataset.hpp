#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/ingest/corpus.hpp"

namespace probekit::ingest {

enum class TaskKind {
  token_labeling,
  segmentation,
  sparse_labeling,
  sparse_regression,
  pairwise_prediction,
  pairwise_classification,
};

enum class MetricKind { accuracy, span_f1, f_beta, pearson, perplexity };

std::string_view to_string(TaskKind kind);
std::string_view to_string(MetricKind kind);
TaskKind parse_task_kind(std::string_view s);
MetricKind parse_metric_kind(std::string_view s);
MetricKind default_metric(TaskKind kind);

bool is_pairwise(TaskKind kind);
bool is_regression(TaskKind kind);

inline constexpr std::string_view kOovLabel = "<OOV>";
inline constexpr std::string_view kPositiveArc = "1";
inline constexpr std::string_view kNegativeArc = "0";

/// One probing instance. Token tasks use `pos`; pairwise tasks read the pair
/// (`head`, `pos`) where `head` is the first token and `pos` the second.
struct Instance {
  std::size_t sent_id = 0;
  std::size_t pos = 0;
  std::size_t head = 0;
  std::string label;
  double value = 0.0;
};

struct SentenceRecord {
  std::size_t sent_id = 0;
  std::vector<std::string> tokens;
  std::string split;  // "train", "dev", "test" or empty when unassigned
};

struct TaskDataset {
  std::string name;
  TaskKind kind = TaskKind::token_labeling;
  MetricKind metric = MetricKind::accuracy;
  /// Positive class for f_beta scoring.
  std::string positive_label = "i";
  /// When set, the label vocabulary was supplied externally and is not re-derived.
  bool fixed_vocab = false;
  std::vector<SentenceRecord> sentences;  // indexed by sent_id
  std::vector<Instance> instances;        // sorted by (sent_id, pos, head)
  nlohmann::json metadata = nlohmann::json::object();

  /// Label set: sorted and derived from the train split unless fixed.
  const std::vector<std::string>& labels() const noexcept { return label_vocab_; }
  void set_labels(std::vector<std::string> labels, bool fixed);
  /// Index into labels(), or labels().size() (the always-wrong OOV id).
  int label_index(std::string_view label) const;
  std::size_t num_classes() const { return label_vocab_.size(); }
  const std::string& split_of(std::size_t sent_id) const;
  std::vector<std::size_t> instances_in(std::string_view split) const;
  std::size_t count_in(std::string_view split) const;

  /// Rebuilds label_vocab from train-split instances (or unassigned ones when
  /// no split has been assigned yet). No-op for fixed vocabularies and regression.
  void rebuild_vocab();
  void sort_instances();

 private:
  std::vector<std::string> label_vocab_;
  std::unordered_map<std::string, int> label_ids_;
};

// ---------------------------------------------------------------------------
// Compilers

enum class LabelSource { xpos, upos, ancestor, semtag, bio };
LabelSource parse_label_source(std::string_view s);

struct TokenTaskOptions {
  LabelSource source = LabelSource::xpos;
  int ancestor_degree = 1;
  /// Keep only sentences with at least one non-"O" label (conjunct identification).
  bool only_with_spans = false;
};

TaskDataset compile_token_task(const Corpus& corpus, const TokenTaskOptions& options);

enum class SparseKind { classification, regression };

/// EF gold values outside [-3, 3] are kept and reported in metadata["warnings"].
TaskDataset compile_sparse_task(const Corpus& corpus, SparseKind kind);

enum class ArcSource { syntactic, semantic };
ArcSource parse_arc_source(std::string_view s);

TaskDataset compile_dep_arc_classification(const Corpus& corpus, ArcSource source);

/// One sampled negative (w_rand, w_mod) per gold arc; positives without an
/// eligible negative are dropped and counted in metadata["dropped_positives"].
TaskDataset compile_dep_arc_prediction(const Corpus& corpus, ArcSource source, std::uint64_t seed);

TaskDataset compile_coref_arc_prediction(const Corpus& corpus, std::uint64_t seed);

struct SplitPolicy {
  /// Keep the splits given by the source files.
  bool use_provided = true;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
};

/// Assigns sentence-level splits and rebuilds the label vocabulary.
/// Throws DataError when the train split ends up empty.
void split_dataset(TaskDataset& dataset, const SplitPolicy& policy);

// ---------------------------------------------------------------------------
// JSONL persistence: one record per sentence plus a sidecar vocab file.

std::filesystem::path vocab_path_for(const std::filesystem::path& dataset_path);
void save_dataset(const TaskDataset& dataset, const std::filesystem::path& path);
TaskDataset load_dataset(const std::filesystem::path& path);
std::string dataset_to_jsonl(const TaskDataset& dataset);
nlohmann::json vocab_to_json(const TaskDataset& dataset);
TaskDataset dataset_from_jsonl(std::string_view jsonl, const nlohmann::json* vocab);

}  // namespace probekit::ingest
