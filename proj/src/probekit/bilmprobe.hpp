#pragma once

// Language modeling as a probe: forward/backward softmax heads retrained on
// frozen layer vectors, scored by perplexity.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/ingest/dataset.hpp"
#include "probekit/reprstore.hpp"
#include "probekit/trainer.hpp"

namespace probekit::bilm {

using Sentences = std::vector<std::vector<std::string>>;

inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::size_t kDefaultMaxVocab = 10000;

/// Id 0 is UNK; remaining ids follow descending train frequency (ties by token).
class LmVocab {
 public:
  static LmVocab build(const Sentences& sentences, std::span<const std::size_t> train_ids,
                       std::size_t max_size = kDefaultMaxVocab);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  int id(std::string_view token) const;
  /// The vocabulary entry a token is scored as (itself or UNK).
  const std::string& map(std::string_view token) const { return tokens_[static_cast<std::size_t>(id(token))]; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct CorpusSplit {
  std::vector<std::size_t> train;  // sentence indices, ascending
  std::vector<std::size_t> eval;
};

/// Seeded sentence-level 80/20 split. Throws DataError for fewer than 2 sentences.
CorpusSplit split_corpus(std::size_t num_sentences, std::uint64_t seed);

enum class Direction { forward, backward };

/// Vocabulary plus one sparse-labeling dataset per direction (train = LM
/// train split, test = eval split).
struct BilmData {
  LmVocab vocab;
  CorpusSplit split;
  ingest::TaskDataset fwd;
  ingest::TaskDataset bwd;
  double oov_rate = 0.0;  // share of eval tokens mapped to UNK
};

BilmData build_bilm_data(const Sentences& sentences, std::uint64_t seed, std::size_t max_vocab = kDefaultMaxVocab);

/// Checks that store sentence lengths match the corpus.
void check_alignment(const store::ReprStore& store, const Sentences& sentences);

struct LmHeads {
  std::size_t layer = 0;
  train::TrainedProbe fwd;
  train::TrainedProbe bwd;
};

LmHeads train_lm_heads(const store::ReprStore& store, std::size_t layer, const BilmData& data,
                       const train::TrainConfig& cfg);

struct BilmEval {
  std::size_t layer = 0;
  double fwd_ppl = 0.0;
  double bwd_ppl = 0.0;
  double avg_ppl = 0.0;
  std::size_t vocab_size = 0;
  double oov_rate = 0.0;
  /// Per-target negative log-likelihoods (nats), in dataset instance order.
  std::vector<double> fwd_nll;
  std::vector<double> bwd_nll;
};

BilmEval eval_bilm(const LmHeads& heads, const store::ReprStore& store, const BilmData& data);

/// Train and evaluate heads for every layer; layer jobs may run concurrently.
std::vector<BilmEval> bilm_sweep(const store::ReprStore& store, const BilmData& data, const train::TrainConfig& cfg,
                                 std::size_t jobs = 1);

/// {layer, fwd_ppl, bwd_ppl, avg_ppl, V, oov_rate}
nlohmann::json to_json(const BilmEval& e);

}  // namespace probekit::bilm
