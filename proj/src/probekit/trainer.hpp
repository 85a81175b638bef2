#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/ingest/dataset.hpp"
#include "probekit/metrics.hpp"
#include "probekit/probes.hpp"
#include "probekit/reprstore.hpp"

namespace probekit::train {

struct TrainConfig {
  float lr = 1e-3f;
  int max_epochs = 50;
  int patience = 3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_metric = 0.0;
};

/// Patience-based early stopping on a dev metric. Ties do not count as
/// improvement, so the best epoch is the first occurrence of the optimum.
class EarlyStopping {
 public:
  EarlyStopping(int patience, bool higher_is_better) : patience_(patience), higher_(higher_is_better) {}

  /// Records the next epoch's metric; returns true if it is a new best.
  bool update(double metric);
  bool should_stop() const noexcept { return stale_ >= patience_; }
  int best_epoch() const noexcept { return best_epoch_; }
  double best_metric() const noexcept { return best_; }

 private:
  int patience_;
  bool higher_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_ = 0.0;
};

bool higher_is_better(ingest::MetricKind metric);

/// Materializes probe inputs for one (dataset, store, probe config) triple.
/// Layers are decoded from the store per batch.
class ProbeData {
 public:
  ProbeData(const ingest::TaskDataset& dataset, const store::ReprStore& store, const probes::ProbeConfig& cfg);

  const ingest::TaskDataset& dataset() const noexcept { return *dataset_; }
  bool sentence_units() const noexcept { return probes::is_recurrent(cfg_.arch); }

  /// Groups instance ids into training units: one instance each, or all
  /// instances of a sentence for recurrent probes.
  std::vector<std::vector<std::size_t>> units(std::span<const std::size_t> instance_ids) const;

  struct Batch {
    probes::ProbeBatch input;
    std::vector<std::size_t> instances;  // output row order
  };
  Batch make_batch(std::span<const std::size_t> instance_ids) const;

 private:
  const ingest::TaskDataset* dataset_;
  const store::ReprStore* store_;
  probes::ProbeConfig cfg_;
  std::vector<std::size_t> layer_ids_;
};

struct TrainedProbe {
  probes::ProbeModel model;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  TrainConfig config;
  ingest::MetricKind dev_metric = ingest::MetricKind::accuracy;
  std::string dev_source;  // "dev" or "train_holdout"
};

/// Instance ids used for training and early stopping. Without a dev split a
/// seeded 10% of train sentences is held out.
struct TrainSplits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::string dev_source;
};
TrainSplits resolve_train_splits(const ingest::TaskDataset& dataset, std::uint64_t seed);

TrainedProbe train_probe(const ingest::TaskDataset& dataset, const store::ReprStore& store,
                         const probes::ProbeConfig& probe_cfg, const TrainConfig& train_cfg);

TrainedProbe train_probe(const ProbeData& data, std::size_t dim, const probes::ProbeConfig& probe_cfg,
                         const TrainConfig& train_cfg);

/// Raw per-instance outputs in the order of `instance_ids`.
tensor::Tensor2D predict(const probes::ProbeModel& model, const ProbeData& data,
                         std::span<const std::size_t> instance_ids, std::size_t batch_size = 256);

/// Scores outputs for `instance_ids` with the dataset's metric.
metrics::MetricReport score(const ingest::TaskDataset& dataset, std::span<const std::size_t> instance_ids,
                            const tensor::Tensor2D& outputs, ingest::MetricKind metric);

metrics::MetricReport evaluate(const TrainedProbe& trained, const ProbeData& data,
                               std::span<const std::size_t> instance_ids);
/// Evaluates on a named split; throws DataError when it is empty.
metrics::MetricReport evaluate(const TrainedProbe& trained, const ingest::TaskDataset& dataset,
                               const store::ReprStore& store, const std::string& split);

/// Split used for final reporting: "test" when present, else "dev".
std::string report_split(const ingest::TaskDataset& dataset);

/// One trained-and-evaluated probe, serialized as the metrics JSON record.
struct ProbeReport {
  std::string task;
  std::string representation;
  std::string arch;
  std::optional<std::size_t> layer;  // nullopt = scalar mix
  std::string split;
  metrics::MetricReport metric;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  std::string dev_metric;
  std::vector<EpochRecord> history;
  std::vector<double> mix_weights;
  double gamma = 1.0;
};

nlohmann::json to_json(const ProbeReport& r);
ProbeReport probe_report_from_json(const nlohmann::json& j);

ProbeReport make_report(const TrainedProbe& trained, const ingest::TaskDataset& dataset,
                        const store::ReprStore& store, const metrics::MetricReport& metric, const std::string& split);

struct SweepResult {
  std::vector<ProbeReport> layers;  // ascending layer index
  ProbeReport mix;
};

/// One probe per layer (seed XOR layer) plus a scalar-mix probe (seed XOR L).
/// Up to `jobs` probes train concurrently; results do not depend on `jobs`.
SweepResult sweep_layers(const ingest::TaskDataset& dataset, const store::ReprStore& store,
                         const probes::ProbeConfig& probe_cfg, const TrainConfig& train_cfg, std::size_t jobs = 1);

/// Builds the probe config a dataset needs (classes, regression, pairwise).
probes::ProbeConfig config_for(const ingest::TaskDataset& dataset, probes::Arch arch);

}  // namespace probekit::train
