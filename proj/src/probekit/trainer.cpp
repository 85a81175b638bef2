#include "probekit/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <thread>
#include <unordered_map>

#include "probekit/error.hpp"
#include "probekit/optim.hpp"
#include "probekit/rng.hpp"

namespace probekit::train {

using ingest::MetricKind;
using tensor::Tensor2D;

void TrainConfig::validate() const {
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw UsageError("learning rate must be positive");
  if (max_epochs < 0) throw UsageError("max_epochs must be >= 0");
  if (patience < 1) throw UsageError("patience must be >= 1");
  if (max_epochs > 0 && patience >= max_epochs)
    throw UsageError("patience (" + std::to_string(patience) + ") must be smaller than max_epochs (" +
                     std::to_string(max_epochs) + ")");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig d) {
  d.lr = j.value("lr", d.lr);
  d.max_epochs = j.value("max_epochs", d.max_epochs);
  d.patience = j.value("patience", d.patience);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.seed = j.value("seed", d.seed);
  return d;
}

bool EarlyStopping::update(double metric) {
  ++epoch_;
  const bool better = best_epoch_ == 0 || (higher_ ? metric > best_ : metric < best_);
  if (better) {
    best_ = metric;
    best_epoch_ = epoch_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return better;
}

bool higher_is_better(MetricKind metric) { return metric != MetricKind::perplexity; }

// ---------------------------------------------------------------------------

ProbeData::ProbeData(const ingest::TaskDataset& dataset, const store::ReprStore& store, const probes::ProbeConfig& cfg)
    : dataset_(&dataset), store_(&store), cfg_(cfg) {
  const std::size_t L = store.num_layers();
  if (cfg.uses_mix()) {
    if (cfg.mix_layers > L)
      throw IndexError("scalar mix over " + std::to_string(cfg.mix_layers) + " layers but the store has " +
                       std::to_string(L));
    for (std::size_t l = 0; l < cfg.mix_layers; ++l) layer_ids_.push_back(l);
  } else {
    if (cfg.layer >= L)
      throw IndexError("layer " + std::to_string(cfg.layer) + " out of range (store has " + std::to_string(L) +
                       " layers)");
    layer_ids_.push_back(cfg.layer);
  }
  if (probes::is_recurrent(cfg.arch) && ingest::is_pairwise(dataset.kind))
    throw UsageError("pairwise tasks support only the linear and mlp1024 probes");

  const auto counts = store.token_counts();
  std::vector<char> checked(dataset.sentences.size(), 0);
  for (const auto& inst : dataset.instances) {
    if (checked[inst.sent_id]) continue;
    checked[inst.sent_id] = 1;
    if (inst.sent_id >= counts.size())
      throw DataError("dataset sentence " + std::to_string(inst.sent_id) + " is missing from the representation store (" +
                      std::to_string(counts.size()) + " sentences)");
    const std::size_t T = dataset.sentences[inst.sent_id].tokens.size();
    if (counts[inst.sent_id] != T)
      throw DataError("sentence " + std::to_string(inst.sent_id) + " has " + std::to_string(T) +
                      " tokens in the dataset but " + std::to_string(counts[inst.sent_id]) + " in the store");
  }
}

std::vector<std::vector<std::size_t>> ProbeData::units(std::span<const std::size_t> ids) const {
  std::vector<std::vector<std::size_t>> out;
  if (!sentence_units()) {
    out.reserve(ids.size());
    for (auto id : ids) out.push_back({id});
    return out;
  }
  std::unordered_map<std::size_t, std::size_t> slot;
  for (auto id : ids) {
    const std::size_t s = dataset_->instances[id].sent_id;
    auto [it, fresh] = slot.emplace(s, out.size());
    if (fresh) out.emplace_back();
    out[it->second].push_back(id);
  }
  return out;
}

ProbeData::Batch ProbeData::make_batch(std::span<const std::size_t> ids) const {
  Batch b;
  b.instances.assign(ids.begin(), ids.end());
  const auto d = static_cast<Eigen::Index>(store_->dim());
  const auto& insts = dataset_->instances;

  std::vector<std::size_t> sents;
  std::unordered_map<std::size_t, std::size_t> sent_slot;
  for (auto id : ids) {
    const std::size_t s = insts[id].sent_id;
    if (sent_slot.emplace(s, sents.size()).second) sents.push_back(s);
  }

  if (sentence_units()) {
    std::vector<std::size_t> start(sents.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < sents.size(); ++i) {
      start[i] = total;
      const std::size_t T = store_->token_counts()[sents[i]];
      b.input.sequences.spans.emplace_back(total, T);
      total += T;
    }
    b.input.sequences.total_rows = total;
    for (auto l : layer_ids_) {
      Tensor2D m(static_cast<Eigen::Index>(total), d);
      for (std::size_t i = 0; i < sents.size(); ++i) {
        const std::size_t T = b.input.sequences.spans[i].second;
        store_->copy_layer(sents[i], l, std::span<float>(m.data() + start[i] * d, T * d));
      }
      b.input.layers.push_back(std::move(m));
    }
    for (auto id : ids) b.input.targets.push_back(start[sent_slot[insts[id].sent_id]] + insts[id].pos);
    return b;
  }

  // Non-recurrent: one row per distinct token referenced by the batch.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> row_of;
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  auto row = [&](std::size_t s, std::size_t p) {
    auto [it, fresh] = row_of.emplace(std::make_pair(s, p), rows.size());
    if (fresh) rows.emplace_back(s, p);
    return it->second;
  };
  const bool pairwise = ingest::is_pairwise(dataset_->kind);
  for (auto id : ids) {
    const auto& inst = insts[id];
    if (pairwise)
      b.input.pairs.emplace_back(row(inst.sent_id, inst.head), row(inst.sent_id, inst.pos));
    else
      b.input.targets.push_back(row(inst.sent_id, inst.pos));
  }
  for (auto l : layer_ids_) {
    Tensor2D m(static_cast<Eigen::Index>(rows.size()), d);
    std::size_t cur = std::numeric_limits<std::size_t>::max();
    Tensor2D sent_layer;
    // Visit rows sorted by sentence so each sentence layer is decoded once.
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto c) { return rows[a] < rows[c]; });
    for (auto r : order) {
      if (rows[r].first != cur) {
        cur = rows[r].first;
        sent_layer = store_->get_layer(cur, l);
      }
      m.row(static_cast<Eigen::Index>(r)) = sent_layer.row(static_cast<Eigen::Index>(rows[r].second));
    }
    b.input.layers.push_back(std::move(m));
  }
  return b;
}

// ---------------------------------------------------------------------------

TrainSplits resolve_train_splits(const ingest::TaskDataset& dataset, std::uint64_t seed) {
  TrainSplits out;
  out.train = dataset.instances_in("train");
  if (out.train.empty()) throw DataError("dataset '" + dataset.name + "' has no training instances");
  out.dev = dataset.instances_in("dev");
  out.dev_source = "dev";
  if (!out.dev.empty()) return out;

  std::vector<std::size_t> sents;
  for (auto id : out.train) {
    const auto s = dataset.instances[id].sent_id;
    if (sents.empty() || sents.back() != s) sents.push_back(s);
  }
  std::sort(sents.begin(), sents.end());
  sents.erase(std::unique(sents.begin(), sents.end()), sents.end());
  if (sents.size() < 2) {
    out.dev = out.train;
    out.dev_source = "train";
    return out;
  }
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  shuffle(std::span<std::size_t>(sents), rng);
  const std::size_t n_dev = std::max<std::size_t>(1, sents.size() / 10);
  std::vector<char> is_dev(dataset.sentences.size(), 0);
  for (std::size_t i = 0; i < n_dev; ++i) is_dev[sents[i]] = 1;
  std::vector<std::size_t> train;
  for (auto id : out.train) (is_dev[dataset.instances[id].sent_id] ? out.dev : train).push_back(id);
  out.train = std::move(train);
  out.dev_source = "train_holdout";
  return out;
}

namespace {

std::vector<int> gold_ids(const ingest::TaskDataset& ds, std::span<const std::size_t> ids) {
  std::vector<int> g;
  g.reserve(ids.size());
  for (auto id : ids) g.push_back(ds.label_index(ds.instances[id].label));
  return g;
}

std::vector<double> gold_values(const ingest::TaskDataset& ds, std::span<const std::size_t> ids) {
  std::vector<double> g;
  g.reserve(ids.size());
  for (auto id : ids) g.push_back(ds.instances[id].value);
  return g;
}

// Ties go to the lowest index.
int argmax_row(const Tensor2D& m, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return static_cast<int>(best);
}

double dev_score(const probes::ProbeModel& model, const ProbeData& data, std::span<const std::size_t> dev,
                 MetricKind metric, std::size_t batch_size) {
  const Tensor2D out = predict(model, data, dev, batch_size);
  try {
    return score(data.dataset(), dev, out, metric).value;
  } catch (const DataError&) {
    // Degenerate predictions (e.g. constant regression output) rank worst.
    return higher_is_better(metric) ? -std::numeric_limits<double>::infinity()
                                    : std::numeric_limits<double>::infinity();
  }
}

}  // namespace

Tensor2D predict(const probes::ProbeModel& model, const ProbeData& data, std::span<const std::size_t> ids,
                 std::size_t batch_size) {
  const auto out_dim = static_cast<Eigen::Index>(model.config().output_dim());
  Tensor2D out(static_cast<Eigen::Index>(ids.size()), out_dim);
  std::unordered_map<std::size_t, std::size_t> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) pos.emplace(ids[i], i);
  const auto units = data.units(ids);
  for (std::size_t u = 0; u < units.size(); u += batch_size) {
    std::vector<std::size_t> chunk;
    for (std::size_t v = u; v < std::min(units.size(), u + batch_size); ++v)
      chunk.insert(chunk.end(), units[v].begin(), units[v].end());
    const auto batch = data.make_batch(chunk);
    const Tensor2D y = model.predict(batch.input);
    for (std::size_t i = 0; i < batch.instances.size(); ++i)
      out.row(static_cast<Eigen::Index>(pos.at(batch.instances[i]))) = y.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

metrics::MetricReport score(const ingest::TaskDataset& ds, std::span<const std::size_t> ids, const Tensor2D& outputs,
                            MetricKind metric) {
  if (static_cast<std::size_t>(outputs.rows()) != ids.size()) throw DataError("score: output rows != instances");
  if (ids.empty()) throw DataError("cannot score an empty split");
  switch (metric) {
    case MetricKind::accuracy: {
      std::vector<int> preds(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) preds[i] = argmax_row(outputs, static_cast<Eigen::Index>(i));
      const auto golds = gold_ids(ds, ids);  // OOV golds get id k and are always wrong
      return metrics::accuracy(preds, golds);
    }
    case MetricKind::span_f1: {
      std::vector<std::vector<std::string>> pred_seqs, gold_seqs;
      std::vector<std::pair<std::size_t, std::size_t>> order;  // (instance, output row)
      for (std::size_t i = 0; i < ids.size(); ++i) order.emplace_back(ids[i], i);
      std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
        const auto& x = ds.instances[a.first];
        const auto& y = ds.instances[b.first];
        return std::tie(x.sent_id, x.pos) < std::tie(y.sent_id, y.pos);
      });
      std::size_t cur = std::numeric_limits<std::size_t>::max();
      for (const auto& [id, r] : order) {
        const auto& inst = ds.instances[id];
        if (inst.sent_id != cur) {
          cur = inst.sent_id;
          pred_seqs.emplace_back();
          gold_seqs.emplace_back();
        }
        pred_seqs.back().push_back(ds.labels()[argmax_row(outputs, static_cast<Eigen::Index>(r))]);
        gold_seqs.back().push_back(inst.label);
      }
      return metrics::span_f1(pred_seqs, gold_seqs);
    }
    case MetricKind::f_beta: {
      // std::vector<bool> has no contiguous storage, so use plain arrays.
      auto p = std::make_unique<bool[]>(ids.size());
      auto g = std::make_unique<bool[]>(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        p[i] = ds.labels()[argmax_row(outputs, static_cast<Eigen::Index>(i))] == ds.positive_label;
        g[i] = ds.instances[ids[i]].label == ds.positive_label;
      }
      return metrics::f_beta_tokens(std::span<const bool>(p.get(), ids.size()),
                                    std::span<const bool>(g.get(), ids.size()));
    }
    case MetricKind::pearson: {
      std::vector<double> p(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) p[i] = outputs(static_cast<Eigen::Index>(i), 0);
      const auto g = gold_values(ds, ids);
      return metrics::pearson_r(p, g);
    }
    case MetricKind::perplexity: {
      const Tensor2D logp = tensor::log_softmax_rows(outputs);
      const auto golds = gold_ids(ds, ids);
      double nll = 0.0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (golds[i] >= logp.cols())
          throw DataError("perplexity target '" + ds.instances[ids[i]].label + "' is outside the vocabulary");
        nll -= double(logp(static_cast<Eigen::Index>(i), golds[i]));
      }
      nll /= double(ids.size());
      metrics::MetricReport r;
      r.metric_name = "perplexity";
      r.value = metrics::perplexity(nll);
      r.n = ids.size();
      r.breakdown["mean_nll"] = nll;
      return r;
    }
  }
  throw Error(ErrorKind::internal, "unhandled metric");
}

// ---------------------------------------------------------------------------

TrainedProbe train_probe(const ProbeData& data, std::size_t dim, const probes::ProbeConfig& probe_cfg,
                         const TrainConfig& cfg) {
  cfg.validate();
  const auto& ds = data.dataset();
  const MetricKind metric = ds.metric;
  const TrainSplits splits = resolve_train_splits(ds, cfg.seed);

  TrainedProbe tp{probes::ProbeModel(probe_cfg, dim, cfg.seed), 0, {}, cfg, metric, splits.dev_source};
  auto& model = tp.model;
  const bool regress = probe_cfg.regress;
  if (!regress)
    for (auto id : splits.train)
      if (ds.label_index(ds.instances[id].label) >= static_cast<int>(probe_cfg.num_classes))
        throw DataError("training label '" + ds.instances[id].label + "' is not in the label vocabulary");

  auto units = data.units(splits.train);
  Rng order_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  AdamState adam;
  const AdamConfig adam_cfg{cfg.lr};
  EarlyStopping stopper(cfg.patience, higher_is_better(metric));
  std::vector<Tensor2D> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : model.params().all()) best.push_back(p.value);
  };
  snapshot();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(std::span<std::vector<std::size_t>>(units), order_rng);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t u = 0; u < units.size(); u += cfg.batch_size) {
      std::vector<std::size_t> chunk;
      for (std::size_t v = u; v < std::min(units.size(), u + cfg.batch_size); ++v)
        chunk.insert(chunk.end(), units[v].begin(), units[v].end());
      const auto batch = data.make_batch(chunk);
      model.params().zero_grad();
      const Tensor2D y = model.forward(batch.input);
      tensor::LossResult<float> loss;
      if (regress)
        loss = tensor::mse(y, gold_values(ds, batch.instances));
      else
        loss = tensor::softmax_xent(y, gold_ids(ds, batch.instances));
      if (!std::isfinite(loss.loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      model.backward(loss.grad);
      adam_update(model.params().all(), adam, adam_cfg);
      loss_sum += loss.loss * double(batch.instances.size());
      loss_n += batch.instances.size();
    }
    const double dev = dev_score(model, data, splits.dev, metric, 256);
    tp.history.push_back({epoch, loss_n ? loss_sum / double(loss_n) : 0.0, dev});
    if (stopper.update(dev)) snapshot();
    if (stopper.should_stop()) break;
  }

  auto params = model.params().all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best[i];
  tp.best_epoch = stopper.best_epoch();
  return tp;
}

TrainedProbe train_probe(const ingest::TaskDataset& dataset, const store::ReprStore& store,
                         const probes::ProbeConfig& probe_cfg, const TrainConfig& train_cfg) {
  const ProbeData data(dataset, store, probe_cfg);
  return train_probe(data, store.dim(), probe_cfg, train_cfg);
}

metrics::MetricReport evaluate(const TrainedProbe& trained, const ProbeData& data,
                               std::span<const std::size_t> ids) {
  const Tensor2D out = predict(trained.model, data, ids);
  return score(data.dataset(), ids, out, trained.dev_metric);
}

metrics::MetricReport evaluate(const TrainedProbe& trained, const ingest::TaskDataset& dataset,
                               const store::ReprStore& store, const std::string& split) {
  const auto ids = dataset.instances_in(split);
  if (ids.empty()) throw DataError("dataset '" + dataset.name + "' has no '" + split + "' instances");
  const ProbeData data(dataset, store, trained.model.config());
  return evaluate(trained, data, ids);
}

std::string report_split(const ingest::TaskDataset& dataset) {
  if (dataset.count_in("test") > 0) return "test";
  if (dataset.count_in("dev") > 0) return "dev";
  throw DataError("dataset '" + dataset.name + "' has neither a test nor a dev split to report on");
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const ProbeReport& r) {
  nlohmann::json j;
  j["task"] = r.task;
  j["representation"] = r.representation;
  j["arch"] = r.arch;
  if (r.layer)
    j["layer"] = *r.layer;
  else
    j["layer"] = "mix";
  j["split"] = r.split;
  j["metric_name"] = r.metric.metric_name;
  j["value"] = r.metric.value;
  j["n"] = r.metric.n;
  j["breakdown"] = r.metric.breakdown;
  j["seed"] = r.seed;
  j["best_epoch"] = r.best_epoch;
  j["dev_metric"] = r.dev_metric;
  auto hist = nlohmann::json::array();
  for (const auto& e : r.history)
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_metric", e.dev_metric}});
  j["history"] = std::move(hist);
  if (!r.layer) {
    j["mix_weights"] = r.mix_weights;
    j["gamma"] = r.gamma;
  }
  return j;
}

ProbeReport probe_report_from_json(const nlohmann::json& j) {
  ProbeReport r;
  try {
    r.task = j.at("task").get<std::string>();
    r.representation = j.value("representation", std::string{});
    r.arch = j.at("arch").get<std::string>();
    const auto& layer = j.at("layer");
    if (layer.is_string()) {
      if (layer.get<std::string>() != "mix") throw DataError("layer must be an integer or \"mix\"");
    } else {
      r.layer = layer.get<std::size_t>();
    }
    r.split = j.value("split", std::string{});
    r.metric.metric_name = j.at("metric_name").get<std::string>();
    r.metric.value = j.at("value").get<double>();
    r.metric.n = j.value("n", std::size_t{0});
    if (j.contains("breakdown")) r.metric.breakdown = j.at("breakdown").get<std::map<std::string, double>>();
    r.seed = j.value("seed", std::uint64_t{0});
    r.best_epoch = j.value("best_epoch", 0);
    r.dev_metric = j.value("dev_metric", std::string{});
    if (j.contains("history"))
      for (const auto& e : j.at("history"))
        r.history.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("dev_metric").get<double>()});
    if (j.contains("mix_weights")) r.mix_weights = j.at("mix_weights").get<std::vector<double>>();
    r.gamma = j.value("gamma", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metrics record: ") + e.what());
  }
  return r;
}

ProbeReport make_report(const TrainedProbe& trained, const ingest::TaskDataset& dataset,
                        const store::ReprStore& store, const metrics::MetricReport& metric, const std::string& split) {
  ProbeReport r;
  r.task = dataset.name;
  r.representation = store.header().model_name;
  r.arch = std::string(probes::to_string(trained.model.config().arch));
  if (!trained.model.config().uses_mix()) r.layer = trained.model.config().layer;
  r.split = split;
  r.metric = metric;
  r.seed = trained.config.seed;
  r.best_epoch = trained.best_epoch;
  r.dev_metric = std::string(ingest::to_string(trained.dev_metric));
  r.history = trained.history;
  r.mix_weights = trained.model.mix_weights();
  r.gamma = trained.model.mix_gamma();
  return r;
}

probes::ProbeConfig config_for(const ingest::TaskDataset& dataset, probes::Arch arch) {
  probes::ProbeConfig cfg;
  cfg.arch = arch;
  cfg.regress = ingest::is_regression(dataset.kind);
  cfg.num_classes = cfg.regress ? 1 : dataset.num_classes();
  cfg.pairwise = ingest::is_pairwise(dataset.kind);
  return cfg;
}

SweepResult sweep_layers(const ingest::TaskDataset& dataset, const store::ReprStore& store,
                         const probes::ProbeConfig& probe_cfg, const TrainConfig& train_cfg, std::size_t jobs) {
  train_cfg.validate();
  const std::size_t L = store.num_layers();
  if (L == 0) throw DataError("representation store has no layers");
  const std::string split = report_split(dataset);

  // Task i < L is layer i; task L is the scalar mix.
  std::vector<ProbeReport> reports(L + 1);
  std::vector<std::exception_ptr> errors(L + 1);
  auto run = [&](std::size_t i) {
    try {
      probes::ProbeConfig pc = probe_cfg;
      pc.layer = i < L ? i : 0;
      pc.mix_layers = i < L ? 0 : L;
      TrainConfig tc = train_cfg;
      tc.seed = train_cfg.seed ^ static_cast<std::uint64_t>(i);
      const ProbeData data(dataset, store, pc);
      const auto trained = train_probe(data, store.dim(), pc, tc);
      const auto ids = dataset.instances_in(split);
      reports[i] = make_report(trained, dataset, store, evaluate(trained, data, ids), split);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  jobs = std::clamp<std::size_t>(jobs, 1, L + 1);
  if (jobs == 1) {
    for (std::size_t i = 0; i <= L; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i <= L; i = next++) run(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  SweepResult out;
  out.mix = std::move(reports[L]);
  reports.pop_back();
  out.layers = std::move(reports);
  return out;
}

}  // namespace probekit::train
