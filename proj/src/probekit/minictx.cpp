#include "probekit/minictx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "probekit/checkpoint.hpp"
#include "probekit/error.hpp"
#include "probekit/rng.hpp"

namespace probekit::ctx {

using tensor::Tensor2D;

void CtxConfig::validate() const {
  if (vocab.empty() || vocab.front() != kUnk) throw UsageError("contextualizer vocabulary must start with <unk>");
  if (embed_dim == 0 || hidden == 0) throw UsageError("contextualizer dimensions must be positive");
  if (embed_dim != hidden)
    throw UsageError("layer-0 duplication needs embed_dim == hidden (got " + std::to_string(embed_dim) + " and " +
                     std::to_string(hidden) + ")");
}

nlohmann::json to_json(const CtxConfig& cfg) {
  return {{"vocab", cfg.vocab}, {"embed_dim", cfg.embed_dim}, {"hidden", cfg.hidden}, {"seed", cfg.seed}};
}

CtxConfig ctx_config_from_json(const nlohmann::json& j) {
  CtxConfig cfg;
  if (j.contains("vocab")) cfg.vocab = j.at("vocab").get<std::vector<std::string>>();
  cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

std::vector<std::string> build_vocab(const std::vector<const Sentences*>& corpora) {
  std::map<std::string, std::size_t> counts;
  for (const auto* c : corpora)
    for (const auto& s : *c)
      for (const auto& t : s) ++counts[t];
  counts.erase(std::string(kUnk));
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> vocab{std::string(kUnk)};
  for (auto& [t, n] : sorted) vocab.push_back(t);
  return vocab;
}

// ---------------------------------------------------------------------------

Contextualizer::Contextualizer(CtxConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (std::size_t i = 0; i < cfg_.vocab.size(); ++i)
    if (!ids_.emplace(cfg_.vocab[i], static_cast<int>(i)).second)
      throw DataError("duplicate vocabulary entry '" + cfg_.vocab[i] + "'");
  Rng rng(cfg_.seed);
  const auto V = static_cast<Eigen::Index>(cfg_.vocab.size());
  const auto E = static_cast<Eigen::Index>(cfg_.embed_dim);
  const auto H = static_cast<Eigen::Index>(cfg_.hidden);
  Tensor2D emb(V, E);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = static_cast<float>(standard_normal(rng));
  emb_ = params_.add("embedding", std::move(emb));
  f1_ = nn::LstmDirection::create(params_, "fwd1", E, H, false, rng);
  f2_ = nn::LstmDirection::create(params_, "fwd2", H, H, false, rng);
  b1_ = nn::LstmDirection::create(params_, "bwd1", E, H, true, rng);
  b2_ = nn::LstmDirection::create(params_, "bwd2", H, H, true, rng);
}

int Contextualizer::token_id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? 0 : it->second;
}

Contextualizer::Activations Contextualizer::forward(const std::vector<const std::vector<std::string>*>& sents) const {
  Activations a;
  for (const auto* s : sents) {
    a.layout.spans.emplace_back(a.layout.total_rows, s->size());
    a.layout.total_rows += s->size();
    for (const auto& t : *s) a.ids.push_back(token_id(t));
  }
  const Tensor2D& emb = params_[emb_].value;
  a.e.resize(static_cast<Eigen::Index>(a.ids.size()), emb.cols());
  for (std::size_t i = 0; i < a.ids.size(); ++i) a.e.row(static_cast<Eigen::Index>(i)) = emb.row(a.ids[i]);
  a.f1 = f1_.forward(params_, a.e, a.layout, a.f1c);
  a.f2 = f2_.forward(params_, a.f1, a.layout, a.f2c);
  a.b1 = b1_.forward(params_, a.e, a.layout, a.b1c);
  a.b2 = b2_.forward(params_, a.b1, a.layout, a.b2c);
  return a;
}

void Contextualizer::backward(const Activations& a, const Tensor2D& df2, const Tensor2D& db2) {
  const Tensor2D df1 = f2_.backward(params_, df2, a.layout, a.f2c);
  Tensor2D de = f1_.backward(params_, df1, a.layout, a.f1c);
  const Tensor2D db1 = b2_.backward(params_, db2, a.layout, a.b2c);
  de += b1_.backward(params_, db1, a.layout, a.b1c);
  Tensor2D& g = params_[emb_].grad;
  for (std::size_t i = 0; i < a.ids.size(); ++i) g.row(a.ids[i]) += de.row(static_cast<Eigen::Index>(i));
}

std::array<Tensor2D, Contextualizer::kNumLayers> Contextualizer::layers(const Activations& a) const {
  auto cat = [](const Tensor2D& l, const Tensor2D& r) {
    Tensor2D out(l.rows(), l.cols() + r.cols());
    out << l, r;
    return out;
  };
  return {cat(a.e, a.e), cat(a.f1, a.b1), cat(a.f2, a.b2)};
}

void Contextualizer::save(const std::filesystem::path& path) const {
  checkpoint::save(path, {{"kind", "contextualizer"}, {"model_name", kModelName}, {"config", to_json(cfg_)}},
                   params_.all());
}

Contextualizer Contextualizer::load(const std::filesystem::path& path) {
  auto loaded = checkpoint::load(path);
  if (loaded.header.value("kind", std::string{}) != "contextualizer")
    throw DataError("'" + path.string() + "' is not a contextualizer checkpoint");
  Contextualizer c(ctx_config_from_json(loaded.header.at("config")));
  checkpoint::assign(c.params_.all(), loaded.params);
  return c;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::none: return "none";
    case Objective::bilm: return "bilm";
    case Objective::supervised: return "supervised";
  }
  return "none";
}

Objective parse_objective(std::string_view s) {
  if (s == "none" || s == "untrained") return Objective::none;
  if (s == "bilm") return Objective::bilm;
  if (s == "supervised") return Objective::supervised;
  throw UsageError("unknown pretraining objective '" + std::string(s) + "' (expected none, bilm or supervised)");
}

nlohmann::json to_json(const PretrainLog& log) {
  auto epochs = nlohmann::json::array();
  for (const auto& e : log.epochs) epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"metric", e.metric}});
  return {{"objective", log.objective}, {"metric_name", log.metric_name}, {"epochs", std::move(epochs)}};
}

namespace {

int argmax_row(const Tensor2D& m, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return static_cast<int>(best);
}

void adam_step(nn::ParamSet& ctx_params, AdamState& ctx_state, nn::ParamSet& head, AdamState& head_state,
               const AdamConfig& cfg) {
  // Check both sets first so a failure leaves every parameter untouched.
  for (const auto* ps : {&ctx_params, &head})
    for (const auto& p : ps->all())
      if (!tensor::all_finite(p.grad)) throw NumericError("non-finite gradient for '" + p.name + "'");
  adam_update(ctx_params.all(), ctx_state, cfg);
  adam_update(head.all(), head_state, cfg);
}

PretrainLog pretrain_bilm(Contextualizer& ctx, const PretrainSpec& spec) {
  const auto& tc = spec.train;
  const auto H = static_cast<Eigen::Index>(ctx.config().hidden);
  const auto V = static_cast<Eigen::Index>(ctx.config().vocab.size());
  if (V < 2) throw DataError("BiLM pretraining needs a vocabulary of at least 2 types");
  nn::ParamSet head;
  Rng head_rng(tc.seed ^ 0x6a09e667f3bcc909ULL);
  const auto fwd = nn::Linear::create(head, "lm.fwd", H, V, head_rng);
  const auto bwd = nn::Linear::create(head, "lm.bwd", H, V, head_rng);

  std::vector<std::size_t> order(spec.corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng(tc.seed ^ 0xbb67ae8584caa73bULL);
  AdamState ctx_state, head_state;
  const AdamConfig adam{tc.lr};

  PretrainLog log{"bilm", "perplexity", {}};
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), order_rng);
    double nll_f = 0.0, nll_b = 0.0;
    std::size_t n_pairs = 0;
    for (std::size_t u = 0; u < order.size(); u += tc.batch_size) {
      std::vector<const std::vector<std::string>*> batch;
      for (std::size_t v = u; v < std::min(order.size(), u + tc.batch_size); ++v) batch.push_back(&spec.corpus[order[v]]);
      const auto act = ctx.forward(batch);
      std::vector<std::size_t> rows_f, rows_b;
      std::vector<int> gold_f, gold_b;
      for (const auto& [start, len] : act.layout.spans)
        for (std::size_t t = 0; t + 1 < len; ++t) {
          rows_f.push_back(start + t);
          gold_f.push_back(act.ids[start + t + 1]);
          rows_b.push_back(start + t + 1);
          gold_b.push_back(act.ids[start + t]);
        }
      if (rows_f.empty()) continue;
      ctx.params().zero_grad();
      head.zero_grad();
      const Tensor2D xf = nn::gather_rows(act.f2, rows_f);
      const Tensor2D xb = nn::gather_rows(act.b2, rows_b);
      const auto lf = tensor::softmax_xent(fwd.forward(head, xf), gold_f);
      const auto lb = tensor::softmax_xent(bwd.forward(head, xb), gold_b);
      if (!std::isfinite(lf.loss) || !std::isfinite(lb.loss))
        throw NumericError("non-finite BiLM loss at epoch " + std::to_string(epoch));
      Tensor2D df2 = Tensor2D::Zero(act.f2.rows(), act.f2.cols());
      Tensor2D db2 = Tensor2D::Zero(act.b2.rows(), act.b2.cols());
      nn::scatter_add_rows(df2, rows_f, fwd.backward(head, xf, lf.grad));
      nn::scatter_add_rows(db2, rows_b, bwd.backward(head, xb, lb.grad));
      ctx.backward(act, df2, db2);
      adam_step(ctx.params(), ctx_state, head, head_state, adam);
      nll_f += lf.loss * double(rows_f.size());
      nll_b += lb.loss * double(rows_b.size());
      n_pairs += rows_f.size();
    }
    if (n_pairs == 0) throw DataError("BiLM corpus has no adjacent token pairs");
    const double mf = nll_f / double(n_pairs), mb = nll_b / double(n_pairs);
    log.epochs.push_back({epoch, mf + mb, 0.5 * (std::exp(mf) + std::exp(mb))});
  }
  return log;
}

PretrainLog pretrain_supervised(Contextualizer& ctx, const PretrainSpec& spec) {
  const auto& ds = *spec.task;
  const auto& tc = spec.train;
  const bool pairwise = ingest::is_pairwise(ds.kind);
  const bool regress = ingest::is_regression(ds.kind);
  const auto D = static_cast<Eigen::Index>(ctx.output_dim());
  const auto k = static_cast<Eigen::Index>(regress ? 1 : ds.num_classes());
  if (!regress && k < 2) throw DataError("supervised pretraining task needs at least 2 labels");
  nn::ParamSet head;
  Rng head_rng(tc.seed ^ 0x3c6ef372fe94f82bULL);
  const auto out = nn::Linear::create(head, "task.head", pairwise ? 3 * D : D, k, head_rng);

  // Units: train-split instances grouped by sentence.
  std::map<std::size_t, std::vector<std::size_t>> by_sent;
  for (auto id : ds.instances_in("train")) by_sent[ds.instances[id].sent_id].push_back(id);
  if (by_sent.empty()) throw DataError("pretraining task '" + ds.name + "' has no training instances");
  std::vector<std::size_t> sents;
  for (const auto& [s, ids] : by_sent) sents.push_back(s);

  Rng order_rng(tc.seed ^ 0xa54ff53a5f1d36f1ULL);
  AdamState ctx_state, head_state;
  const AdamConfig adam{tc.lr};
  PretrainLog log{"supervised", regress ? "mse" : "accuracy", {}};

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    shuffle(std::span<std::size_t>(sents), order_rng);
    double loss_sum = 0.0;
    std::size_t n = 0, correct = 0;
    for (std::size_t u = 0; u < sents.size(); u += tc.batch_size) {
      std::vector<const std::vector<std::string>*> batch;
      std::vector<std::size_t> starts;
      std::vector<std::size_t> inst;
      std::size_t row = 0;
      for (std::size_t v = u; v < std::min(sents.size(), u + tc.batch_size); ++v) {
        const auto& toks = ds.sentences[sents[v]].tokens;
        batch.push_back(&toks);
        starts.push_back(row);
        row += toks.size();
      }
      std::vector<std::size_t> rows_a, rows_b;
      std::vector<int> gold;
      std::vector<double> values;
      for (std::size_t v = u, i = 0; v < std::min(sents.size(), u + tc.batch_size); ++v, ++i)
        for (auto id : by_sent[sents[v]]) {
          const auto& in = ds.instances[id];
          rows_a.push_back(starts[i] + (pairwise ? in.head : in.pos));
          rows_b.push_back(starts[i] + in.pos);
          if (regress) {
            values.push_back(in.value);
          } else {
            const int g = ds.label_index(in.label);
            if (g >= k) throw DataError("training label '" + in.label + "' is not in the label vocabulary");
            gold.push_back(g);
          }
        }

      const auto act = ctx.forward(batch);
      Tensor2D top(act.f2.rows(), 2 * act.f2.cols());
      top << act.f2, act.b2;
      ctx.params().zero_grad();
      head.zero_grad();
      Tensor2D z, w1, w2;
      if (pairwise) {
        w1 = nn::gather_rows(top, rows_a);
        w2 = nn::gather_rows(top, rows_b);
        z = nn::pairwise_features(w1, w2);
      } else {
        z = nn::gather_rows(top, rows_b);
      }
      const Tensor2D y = out.forward(head, z);
      const auto loss = regress ? tensor::mse(y, values) : tensor::softmax_xent(y, gold);
      if (!std::isfinite(loss.loss)) throw NumericError("non-finite pretraining loss at epoch " + std::to_string(epoch));
      const Tensor2D dz = out.backward(head, z, loss.grad);
      Tensor2D dtop = Tensor2D::Zero(top.rows(), top.cols());
      if (pairwise) {
        auto [d1, d2] = nn::pairwise_features_backward(w1, w2, dz);
        nn::scatter_add_rows(dtop, rows_a, d1);
        nn::scatter_add_rows(dtop, rows_b, d2);
      } else {
        nn::scatter_add_rows(dtop, rows_b, dz);
      }
      const auto H = act.f2.cols();
      ctx.backward(act, dtop.leftCols(H), dtop.rightCols(H));
      adam_step(ctx.params(), ctx_state, head, head_state, adam);

      const std::size_t m = rows_b.size();
      loss_sum += loss.loss * double(m);
      n += m;
      if (!regress)
        for (std::size_t i = 0; i < m; ++i) correct += argmax_row(y, static_cast<Eigen::Index>(i)) == gold[i];
    }
    const double mean = n ? loss_sum / double(n) : 0.0;
    log.epochs.push_back({epoch, mean, regress ? mean : (n ? 100.0 * double(correct) / double(n) : 0.0)});
  }
  return log;
}

}  // namespace

PretrainLog pretrain(Contextualizer& ctx, const PretrainSpec& spec) {
  if (spec.train.max_epochs < 0) throw UsageError("pretraining epochs must be >= 0");
  if (spec.train.batch_size == 0) throw UsageError("batch_size must be positive");
  switch (spec.objective) {
    case Objective::none: return {"none", "", {}};
    case Objective::bilm: return pretrain_bilm(ctx, spec);
    case Objective::supervised:
      if (!spec.task) throw UsageError("supervised pretraining needs a task dataset");
      return pretrain_supervised(ctx, spec);
  }
  throw Error(ErrorKind::internal, "unhandled objective");
}

// ---------------------------------------------------------------------------

std::vector<std::byte> dump_store(const Contextualizer& ctx, const Sentences& sentences) {
  constexpr std::size_t kBatch = 32;
  const std::size_t d = ctx.output_dim();
  std::vector<store::SentenceBlock> blocks;
  blocks.reserve(sentences.size());
  for (std::size_t u = 0; u < sentences.size(); u += kBatch) {
    std::vector<const std::vector<std::string>*> batch;
    for (std::size_t v = u; v < std::min(sentences.size(), u + kBatch); ++v) batch.push_back(&sentences[v]);
    const auto act = ctx.forward(batch);
    const auto layers = ctx.layers(act);
    for (const auto& [start, len] : act.layout.spans) {
      store::SentenceBlock b;
      b.num_tokens = len;
      b.values.reserve(Contextualizer::kNumLayers * len * d);
      for (const auto& l : layers) {
        const float* p = l.data() + start * d;
        b.values.insert(b.values.end(), p, p + len * d);
      }
      blocks.push_back(std::move(b));
    }
  }
  store::StoreHeader h;
  h.model_name = std::string(kModelName);
  h.num_layers = Contextualizer::kNumLayers;
  h.dim = d;
  h.num_sentences = sentences.size();
  return store::write_store(h, blocks);
}

store::ReprStore freeze_and_dump(const Contextualizer& ctx, const Sentences& sentences,
                                 const std::filesystem::path* out) {
  auto bytes = dump_store(ctx, sentences);
  if (out) {
    std::ofstream f(*out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + out->string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + out->string() + "'");
  }
  return store::ReprStore::read(std::move(bytes));
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const TransferResult& r) {
  auto rows = nlohmann::json::array();
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    nlohmann::json per_task = nlohmann::json::object();
    for (std::size_t t = 0; t < r.tasks.size(); ++t) per_task[r.tasks[t]] = r.per_task[i][t];
    rows.push_back({{"name", r.rows[i]}, {"values", r.values[i]}, {"per_task", per_task},
                    {"pretrain_log", to_json(r.logs[i])}});
  }
  return {{"columns", r.columns},
          {"tasks", r.tasks},
          {"aggregation", "raw mean across target tasks (metrics of different types are averaged as-is)"},
          {"rows", rows}};
}

TransferResult transfer_matrix(const CtxConfig& base, const std::vector<PretrainSpec>& specs,
                               const std::vector<const ingest::TaskDataset*>& targets, probes::Arch arch,
                               const train::TrainConfig& train_cfg, std::size_t jobs) {
  if (targets.empty()) throw UsageError("transfer needs at least one target task");
  Sentences shared;
  for (const auto& s : targets[0]->sentences) shared.push_back(s.tokens);
  for (const auto* t : targets) {
    bool same = t->sentences.size() == shared.size();
    for (std::size_t i = 0; same && i < shared.size(); ++i) same = t->sentences[i].tokens == shared[i];
    if (!same) throw DataError("target task '" + t->name + "' does not share the evaluation sentences of '" +
                               targets[0]->name + "'");
  }

  std::vector<PretrainSpec> all;
  const bool has_untrained =
      std::any_of(specs.begin(), specs.end(), [](const auto& s) { return s.objective == Objective::none; });
  if (!has_untrained) {
    PretrainSpec u;
    u.name = "untrained";
    all.push_back(std::move(u));
  }
  all.insert(all.end(), specs.begin(), specs.end());

  TransferResult r;
  for (const auto* t : targets) r.tasks.push_back(t->name);
  for (const auto& spec : all) {
    Contextualizer ctx(base);
    r.logs.push_back(pretrain(ctx, spec));
    const auto store = freeze_and_dump(ctx, shared);
    std::vector<std::vector<double>> per_task;
    std::vector<double> mean(r.columns.size(), 0.0);
    for (const auto* t : targets) {
      const auto sweep = train::sweep_layers(*t, store, train::config_for(*t, arch), train_cfg, jobs);
      std::vector<double> row;
      for (const auto& l : sweep.layers) row.push_back(l.metric.value);
      row.push_back(sweep.mix.metric.value);
      for (std::size_t c = 0; c < row.size(); ++c) mean[c] += row[c] / double(targets.size());
      per_task.push_back(std::move(row));
    }
    r.rows.push_back(spec.name);
    r.values.push_back(std::move(mean));
    r.per_task.push_back(std::move(per_task));
  }
  return r;
}

}  // namespace probekit::ctx
