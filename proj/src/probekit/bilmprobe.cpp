#include "probekit/bilmprobe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <thread>

#include "probekit/error.hpp"
#include "probekit/metrics.hpp"
#include "probekit/rng.hpp"

namespace probekit::bilm {

LmVocab LmVocab::build(const Sentences& sentences, std::span<const std::size_t> train_ids, std::size_t max_size) {
  if (max_size < 2) throw UsageError("LM vocabulary size must be at least 2");
  std::map<std::string, std::size_t> counts;
  for (auto s : train_ids)
    for (const auto& tok : sentences.at(s)) ++counts[tok];
  counts.erase(std::string(kUnk));
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  LmVocab v;
  v.tokens_.emplace_back(kUnk);
  for (const auto& [tok, n] : sorted) {
    if (v.tokens_.size() >= max_size) break;
    v.tokens_.push_back(tok);
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_.emplace(v.tokens_[i], static_cast<int>(i));
  return v;
}

int LmVocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? 0 : it->second;
}

CorpusSplit split_corpus(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw DataError("LM probing needs at least 2 sentences, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  const std::size_t n_eval = std::max<std::size_t>(1, n / 5);
  CorpusSplit out;
  out.eval.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());
  std::sort(out.eval.begin(), out.eval.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

namespace {

ingest::TaskDataset direction_dataset(const Sentences& sentences, const CorpusSplit& split, const LmVocab& vocab,
                                      Direction dir) {
  ingest::TaskDataset ds;
  ds.name = dir == Direction::forward ? "lm_forward" : "lm_backward";
  ds.kind = ingest::TaskKind::sparse_labeling;
  ds.metric = ingest::MetricKind::perplexity;
  ds.sentences.resize(sentences.size());
  std::vector<char> is_train(sentences.size(), 0);
  for (auto s : split.train) is_train[s] = 1;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    ds.sentences[s] = {s, sentences[s], is_train[s] ? "train" : "test"};
    const std::size_t T = sentences[s].size();
    for (std::size_t t = 0; t + 1 < T; ++t) {
      // Forward: position t predicts t+1. Backward: position t+1 predicts t.
      ingest::Instance inst;
      inst.sent_id = s;
      inst.pos = dir == Direction::forward ? t : t + 1;
      inst.label = vocab.map(sentences[s][dir == Direction::forward ? t + 1 : t]);
      ds.instances.push_back(std::move(inst));
    }
  }
  ds.sort_instances();
  ds.set_labels(vocab.tokens(), true);
  ds.metadata["vocab_size"] = vocab.size();
  return ds;
}

}  // namespace

BilmData build_bilm_data(const Sentences& sentences, std::uint64_t seed, std::size_t max_vocab) {
  BilmData d;
  d.split = split_corpus(sentences.size(), seed);
  d.vocab = LmVocab::build(sentences, d.split.train, max_vocab);
  d.fwd = direction_dataset(sentences, d.split, d.vocab, Direction::forward);
  d.bwd = direction_dataset(sentences, d.split, d.vocab, Direction::backward);
  std::size_t total = 0, unk = 0;
  for (auto s : d.split.eval)
    for (const auto& tok : sentences[s]) {
      ++total;
      unk += d.vocab.id(tok) == 0 ? 1 : 0;
    }
  d.oov_rate = total ? double(unk) / double(total) : 0.0;
  if (d.fwd.count_in("train") == 0)
    throw DataError("LM train split has no token pairs (all train sentences have length 1)");
  if (d.fwd.count_in("test") == 0) throw DataError("LM eval split has no token pairs");
  return d;
}

void check_alignment(const store::ReprStore& store, const Sentences& sentences) {
  if (store.num_sentences() != sentences.size())
    throw DataError("store has " + std::to_string(store.num_sentences()) + " sentences but the corpus has " +
                    std::to_string(sentences.size()));
  const auto counts = store.token_counts();
  for (std::size_t s = 0; s < sentences.size(); ++s)
    if (counts[s] != sentences[s].size())
      throw DataError("sentence " + std::to_string(s) + ": corpus has " + std::to_string(sentences[s].size()) +
                      " tokens, store has " + std::to_string(counts[s]));
}

LmHeads train_lm_heads(const store::ReprStore& store, std::size_t layer, const BilmData& data,
                       const train::TrainConfig& cfg) {
  auto pc = train::config_for(data.fwd, probes::Arch::linear);
  pc.layer = layer;
  const train::ProbeData fwd_data(data.fwd, store, pc);
  const train::ProbeData bwd_data(data.bwd, store, pc);
  return {layer, train::train_probe(fwd_data, store.dim(), pc, cfg), train::train_probe(bwd_data, store.dim(), pc, cfg)};
}

namespace {

std::vector<double> target_nll(const train::TrainedProbe& head, const ingest::TaskDataset& ds,
                               const store::ReprStore& store, std::span<const std::size_t> ids) {
  const train::ProbeData data(ds, store, head.model.config());
  const auto logp = tensor::log_softmax_rows(train::predict(head.model, data, ids));
  std::vector<double> nll(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    nll[i] = -double(logp(static_cast<Eigen::Index>(i), ds.label_index(ds.instances[ids[i]].label)));
  return nll;
}

double ppl_of(const std::vector<double>& nll) {
  double sum = 0.0;
  for (double v : nll) sum += v;
  return metrics::perplexity(sum / double(nll.size()));
}

}  // namespace

BilmEval eval_bilm(const LmHeads& heads, const store::ReprStore& store, const BilmData& data) {
  const auto fwd_ids = data.fwd.instances_in("test");
  const auto bwd_ids = data.bwd.instances_in("test");
  if (fwd_ids.empty() || bwd_ids.empty()) throw DataError("LM eval split is empty");
  BilmEval e;
  e.layer = heads.layer;
  e.fwd_nll = target_nll(heads.fwd, data.fwd, store, fwd_ids);
  e.bwd_nll = target_nll(heads.bwd, data.bwd, store, bwd_ids);
  e.fwd_ppl = ppl_of(e.fwd_nll);
  e.bwd_ppl = ppl_of(e.bwd_nll);
  e.avg_ppl = 0.5 * (e.fwd_ppl + e.bwd_ppl);
  e.vocab_size = data.vocab.size();
  e.oov_rate = data.oov_rate;
  return e;
}

std::vector<BilmEval> bilm_sweep(const store::ReprStore& store, const BilmData& data, const train::TrainConfig& cfg,
                                 std::size_t jobs) {
  const std::size_t L = store.num_layers();
  std::vector<BilmEval> out(L);
  std::vector<std::exception_ptr> errors(L);
  auto run = [&](std::size_t l) {
    try {
      train::TrainConfig tc = cfg;
      tc.seed = cfg.seed ^ static_cast<std::uint64_t>(l);
      out[l] = eval_bilm(train_lm_heads(store, l, data, tc), store, data);
    } catch (...) {
      errors[l] = std::current_exception();
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(L, 1));
  if (jobs == 1) {
    for (std::size_t l = 0; l < L; ++l) run(l);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (std::size_t l = next++; l < L; l = next++) run(l);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

nlohmann::json to_json(const BilmEval& e) {
  return {{"layer", e.layer},   {"fwd_ppl", e.fwd_ppl}, {"bwd_ppl", e.bwd_ppl},
          {"avg_ppl", e.avg_ppl}, {"V", e.vocab_size},  {"oov_rate", e.oov_rate}};
}

}  // namespace probekit::bilm
