#pragma once

// A small word-level bidirectional LSTM contextualizer that can be pretrained
// on a task (or as a BiLM), frozen, and dumped to a representation store.
//
// Layer 0 is the token embedding duplicated [e; e]. Layers 1 and 2 are
// [f_l; b_l], where the forward and backward stacks are kept separate so the
// forward half never sees tokens to its right.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/ingest/dataset.hpp"
#include "probekit/layers.hpp"
#include "probekit/reprstore.hpp"
#include "probekit/trainer.hpp"

namespace probekit::ctx {

using Sentences = std::vector<std::vector<std::string>>;

inline constexpr std::string_view kModelName = "minictx-v1";
inline constexpr std::string_view kUnk = "<unk>";

struct CtxConfig {
  /// Token types; index 0 must be the UNK entry.
  std::vector<std::string> vocab;
  std::size_t embed_dim = 128;
  std::size_t hidden = 128;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t output_dim() const noexcept { return 2 * hidden; }
};

nlohmann::json to_json(const CtxConfig& cfg);
CtxConfig ctx_config_from_json(const nlohmann::json& j);

/// UNK followed by every type in `corpora`, by descending count then token.
std::vector<std::string> build_vocab(const std::vector<const Sentences*>& corpora);

class Contextualizer {
 public:
  static constexpr std::size_t kNumLayers = 3;

  /// Seeded random initialization (the untrained baseline).
  explicit Contextualizer(CtxConfig cfg);

  const CtxConfig& config() const noexcept { return cfg_; }
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }
  std::size_t output_dim() const noexcept { return cfg_.output_dim(); }
  int token_id(std::string_view token) const;
  std::uint64_t checksum() const { return probekit::checksum(params_.all()); }

  struct Activations {
    std::vector<int> ids;
    nn::SequenceLayout layout;
    tensor::Tensor2D e, f1, f2, b1, b2;
    nn::LstmDirection::Cache f1c, f2c, b1c, b2c;
  };

  /// Runs a batch of sentences packed row-wise in the given order.
  Activations forward(const std::vector<const std::vector<std::string>*>& sentences) const;
  /// Accumulates parameter gradients from dL/df2 and dL/db2 (top layer halves).
  void backward(const Activations& act, const tensor::Tensor2D& df2, const tensor::Tensor2D& db2);
  /// Layers 0, 1, 2 for the batch, each rows × 2H.
  std::array<tensor::Tensor2D, kNumLayers> layers(const Activations& act) const;

  void save(const std::filesystem::path& path) const;
  static Contextualizer load(const std::filesystem::path& path);

 private:
  CtxConfig cfg_;
  nn::ParamSet params_;
  std::size_t emb_ = 0;
  nn::LstmDirection f1_, f2_, b1_, b2_;
  std::unordered_map<std::string, int> ids_;
};

enum class Objective { none, bilm, supervised };

std::string_view to_string(Objective o);
Objective parse_objective(std::string_view s);

struct PretrainSpec {
  std::string name;
  Objective objective = Objective::none;
  /// BiLM corpus.
  Sentences corpus;
  /// Supervised task (token-level or pairwise); its train split is used.
  const ingest::TaskDataset* task = nullptr;
  /// Fixed number of epochs (max_epochs); patience is unused.
  train::TrainConfig train;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  /// Train-set accuracy for supervised objectives, mean of fwd/bwd perplexity for BiLM.
  double metric = 0.0;
};

struct PretrainLog {
  std::string objective;
  std::string metric_name;
  std::vector<PretrainEpoch> epochs;
};

nlohmann::json to_json(const PretrainLog& log);

/// Jointly trains the contextualizer and a disposable head, which is dropped
/// afterwards. Zero epochs leaves the parameters untouched.
PretrainLog pretrain(Contextualizer& ctx, const PretrainSpec& spec);

/// Runs the frozen contextualizer over `sentences`; returns CWRS bytes.
std::vector<std::byte> dump_store(const Contextualizer& ctx, const Sentences& sentences);
store::ReprStore freeze_and_dump(const Contextualizer& ctx, const Sentences& sentences,
                                 const std::filesystem::path* out = nullptr);

struct TransferResult {
  std::vector<std::string> rows;  // pretraining spec names
  std::vector<std::string> columns{"0", "1", "2", "mix"};
  std::vector<std::string> tasks;
  /// values[row][col], averaged raw across target tasks.
  std::vector<std::vector<double>> values;
  /// per_task[row][task][col]
  std::vector<std::vector<std::vector<double>>> per_task;
  std::vector<PretrainLog> logs;
};

nlohmann::json to_json(const TransferResult& r);

/// For each spec (plus an untrained row when none is given): initialize from
/// `base`, pretrain, dump over the targets' shared sentences, sweep layers
/// 0/1/2 + mix on every target and average per column across targets.
TransferResult transfer_matrix(const CtxConfig& base, const std::vector<PretrainSpec>& specs,
                               const std::vector<const ingest::TaskDataset*>& targets, probes::Arch arch,
                               const train::TrainConfig& train_cfg, std::size_t jobs = 1);

}  // namespace probekit::ctx
