#pragma once

// Synthetic stores and datasets for tests. Tokens are integer "types";
// representations are produced by a caller-supplied function of
// (sentence, position, layer).

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "probekit/ingest/dataset.hpp"
#include "probekit/reprstore.hpp"

namespace synth {

using TypeSeqs = std::vector<std::vector<int>>;
using ReprFn = std::function<void(std::size_t sent, std::size_t pos, std::size_t layer, float* out)>;

inline probekit::store::ReprStore make_store(const TypeSeqs& seqs, std::size_t layers, std::size_t dim,
                                             const ReprFn& fn, const std::string& model = "synthetic") {
  probekit::store::StoreHeader h;
  h.model_name = model;
  h.num_layers = layers;
  h.dim = dim;
  h.num_sentences = seqs.size();
  std::vector<probekit::store::SentenceBlock> blocks;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    probekit::store::SentenceBlock b;
    b.num_tokens = seqs[s].size();
    b.values.resize(layers * b.num_tokens * dim);
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t t = 0; t < b.num_tokens; ++t) fn(s, t, l, b.values.data() + (l * b.num_tokens + t) * dim);
    blocks.push_back(std::move(b));
  }
  return probekit::store::ReprStore::read(probekit::store::write_store(h, blocks));
}

/// Token-labeling dataset; `label(s, t)` gives each token's label. Sentences
/// are split 80/10/10 in order.
inline probekit::ingest::TaskDataset make_token_dataset(
    const TypeSeqs& seqs, const std::function<std::string(std::size_t, std::size_t)>& label,
    const std::string& name = "synthetic") {
  using namespace probekit::ingest;
  TaskDataset ds;
  ds.name = name;
  ds.kind = TaskKind::token_labeling;
  ds.metric = MetricKind::accuracy;
  const std::size_t n = seqs.size();
  for (std::size_t s = 0; s < n; ++s) {
    SentenceRecord rec;
    rec.sent_id = s;
    for (int ty : seqs[s]) rec.tokens.push_back("t" + std::to_string(ty));
    rec.split = s < n * 8 / 10 ? "train" : (s < n * 9 / 10 ? "dev" : "test");
    ds.sentences.push_back(std::move(rec));
    for (std::size_t t = 0; t < seqs[s].size(); ++t) ds.instances.push_back({s, t, 0, label(s, t), 0.0});
  }
  ds.rebuild_vocab();
  return ds;
}

}  // namespace synth
