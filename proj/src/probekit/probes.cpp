#include "probekit/probes.hpp"

#include "probekit/checkpoint.hpp"

namespace probekit::probes {
namespace {

constexpr std::string_view kArchNames[] = {"linear", "mlp1024", "lstm200_linear", "bilstm512_mlp1024"};

bool has_mlp_head(Arch a) { return a == Arch::mlp1024 || a == Arch::bilstm512_mlp1024; }

std::size_t lstm_params(std::size_t in, std::size_t hidden) { return 4 * hidden * (in + hidden) + 4 * hidden; }

}  // namespace

std::string_view to_string(Arch arch) { return kArchNames[static_cast<int>(arch)]; }

Arch parse_arch(std::string_view s) {
  for (int i = 0; i < 4; ++i)
    if (kArchNames[i] == s) return static_cast<Arch>(i);
  throw UsageError("unknown probe architecture '" + std::string(s) +
                   "' (expected linear, mlp1024, lstm200_linear or bilstm512_mlp1024)");
}

bool is_recurrent(Arch arch) { return arch == Arch::lstm200_linear || arch == Arch::bilstm512_mlp1024; }

nlohmann::json to_json(const ProbeConfig& cfg) {
  return {{"arch", to_string(cfg.arch)},   {"layer", cfg.layer},       {"mix_layers", cfg.mix_layers},
          {"regress", cfg.regress},        {"num_classes", cfg.num_classes}, {"pairwise", cfg.pairwise}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j) {
  ProbeConfig cfg;
  cfg.arch = parse_arch(j.at("arch").get<std::string>());
  cfg.layer = j.value("layer", std::size_t{0});
  cfg.mix_layers = j.value("mix_layers", std::size_t{0});
  cfg.regress = j.value("regress", false);
  cfg.num_classes = j.value("num_classes", std::size_t{2});
  cfg.pairwise = j.value("pairwise", false);
  return cfg;
}

std::size_t count_parameters(const ProbeConfig& cfg, std::size_t d, std::size_t k) {
  const std::size_t in = cfg.pairwise ? 3 * d : d;
  std::size_t n = cfg.uses_mix() ? cfg.mix_layers + 1 : 0;
  std::size_t head_in = in;
  switch (cfg.arch) {
    case Arch::linear:
    case Arch::mlp1024: break;
    case Arch::lstm200_linear:
      n += lstm_params(in, kLstmHidden);
      head_in = kLstmHidden;
      break;
    case Arch::bilstm512_mlp1024:
      n += 2 * lstm_params(in, kBiLstmHidden) + 2 * lstm_params(2 * kBiLstmHidden, kBiLstmHidden);
      head_in = 2 * kBiLstmHidden;
      break;
  }
  if (has_mlp_head(cfg.arch)) {
    n += head_in * kMlpHidden + kMlpHidden;
    head_in = kMlpHidden;
  }
  return n + head_in * k + k;
}

// ---------------------------------------------------------------------------

ProbeModel::ProbeModel(ProbeConfig cfg, std::size_t dim, std::uint64_t seed) : cfg_(cfg), dim_(dim), seed_(seed) {
  if (dim_ == 0) throw UsageError("probe input dimension must be positive");
  if (cfg_.pairwise && is_recurrent(cfg_.arch))
    throw UsageError("pairwise tasks support only the linear and mlp1024 probes");
  if (!cfg_.regress && cfg_.num_classes < 2) throw DataError("classification probe needs at least 2 classes");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(dim_);
  if (cfg_.uses_mix()) mix_ = nn::ScalarMix::create(params_, "mix", cfg_.mix_layers);
  Eigen::Index head_in = cfg_.pairwise ? 3 * d : d;
  if (cfg_.arch == Arch::lstm200_linear) {
    lstm_ = nn::LstmDirection::create(params_, "lstm", head_in, kLstmHidden, false, rng);
    head_in = kLstmHidden;
  } else if (cfg_.arch == Arch::bilstm512_mlp1024) {
    bi1_ = nn::BiLstm::create(params_, "bilstm0", head_in, kBiLstmHidden, rng);
    bi2_ = nn::BiLstm::create(params_, "bilstm1", 2 * kBiLstmHidden, kBiLstmHidden, rng);
    head_in = 2 * kBiLstmHidden;
  }
  if (has_mlp_head(cfg_.arch)) {
    hidden_ = nn::Linear::create(params_, "mlp.hidden", head_in, kMlpHidden, rng);
    head_in = kMlpHidden;
  }
  out_ = nn::Linear::create(params_, "output", head_in, static_cast<Eigen::Index>(cfg_.output_dim()), rng);
}

Tensor2D ProbeModel::run(const ProbeBatch& batch, Cache& c) const {
  const std::size_t want_layers = cfg_.uses_mix() ? cfg_.mix_layers : 1;
  if (batch.layers.size() != want_layers)
    throw DataError("probe expects " + std::to_string(want_layers) + " input layers, got " +
                    std::to_string(batch.layers.size()));
  for (const auto& l : batch.layers)
    if (static_cast<std::size_t>(l.cols()) != dim_)
      throw DataError("probe input dim " + std::to_string(l.cols()) + " != configured dim " + std::to_string(dim_));

  c.x = mix_ ? mix_->forward(params_, batch.layers) : batch.layers[0];

  if (is_recurrent(cfg_.arch)) {
    if (batch.sequences.total_rows != static_cast<std::size_t>(c.x.rows()))
      throw DataError("sequence layout does not cover the batch rows");
    const Tensor2D* top = nullptr;
    if (cfg_.arch == Arch::lstm200_linear) {
      c.h1 = lstm_.forward(params_, c.x, batch.sequences, c.lstm);
      top = &c.h1;
    } else {
      c.h1 = bi1_.forward(params_, c.x, batch.sequences, c.bi1);
      c.h2 = bi2_.forward(params_, c.h1, batch.sequences, c.bi2);
      top = &c.h2;
    }
    c.z = nn::gather_rows(*top, batch.targets);
  } else if (cfg_.pairwise) {
    c.firsts.clear();
    c.seconds.clear();
    for (const auto& [a, b] : batch.pairs) {
      c.firsts.push_back(a);
      c.seconds.push_back(b);
    }
    c.w1 = nn::gather_rows(c.x, c.firsts);
    c.w2 = nn::gather_rows(c.x, c.seconds);
    c.z = nn::pairwise_features(c.w1, c.w2);
  } else {
    c.z = nn::gather_rows(c.x, batch.targets);
  }

  if (has_mlp_head(cfg_.arch)) {
    c.hidden_pre = hidden_.forward(params_, c.z);
    c.hidden = tensor::relu(c.hidden_pre);
    return out_.forward(params_, c.hidden);
  }
  return out_.forward(params_, c.z);
}

Tensor2D ProbeModel::forward(const ProbeBatch& batch) {
  last_batch_ = &batch;
  return run(batch, cache_);
}

Tensor2D ProbeModel::predict(const ProbeBatch& batch) const {
  Cache local;
  return run(batch, local);
}

void ProbeModel::backward(const Tensor2D& dout) {
  if (!last_batch_) throw UsageError("backward() called before forward()");
  const ProbeBatch& batch = *last_batch_;
  Cache& c = cache_;

  Tensor2D dz;
  if (has_mlp_head(cfg_.arch)) {
    const Tensor2D dhidden = out_.backward(params_, c.hidden, dout);
    dz = hidden_.backward(params_, c.z, tensor::relu_backward(c.hidden_pre, dhidden));
  } else {
    dz = out_.backward(params_, c.z, dout);
  }

  Tensor2D dx = Tensor2D::Zero(c.x.rows(), c.x.cols());
  if (is_recurrent(cfg_.arch)) {
    const Tensor2D& top = cfg_.arch == Arch::lstm200_linear ? c.h1 : c.h2;
    Tensor2D dtop = Tensor2D::Zero(top.rows(), top.cols());
    nn::scatter_add_rows(dtop, batch.targets, dz);
    if (cfg_.arch == Arch::lstm200_linear) {
      dx = lstm_.backward(params_, dtop, batch.sequences, c.lstm);
    } else {
      const Tensor2D dh1 = bi2_.backward(params_, dtop, batch.sequences, c.bi2);
      dx = bi1_.backward(params_, dh1, batch.sequences, c.bi1);
    }
  } else if (cfg_.pairwise) {
    auto [d1, d2] = nn::pairwise_features_backward(c.w1, c.w2, dz);
    nn::scatter_add_rows(dx, c.firsts, d1);
    nn::scatter_add_rows(dx, c.seconds, d2);
  } else {
    nn::scatter_add_rows(dx, batch.targets, dz);
  }

  if (mix_) mix_->backward(params_, batch.layers, dx);
}

std::vector<double> ProbeModel::mix_weights() const { return mix_ ? mix_->weights(params_) : std::vector<double>{}; }

double ProbeModel::mix_gamma() const { return mix_ ? double(params_[mix_->gamma].value(0, 0)) : 1.0; }

void ProbeModel::save(const std::filesystem::path& path) const {
  nlohmann::json header = {{"kind", "probe"}, {"config", to_json(cfg_)}, {"d", dim_},
                           {"k", cfg_.output_dim()}, {"seed", seed_}};
  checkpoint::save(path, header, params_.all());
}

ProbeModel ProbeModel::load(const std::filesystem::path& path) {
  auto loaded = checkpoint::load(path);
  if (loaded.header.value("kind", std::string{}) != "probe") throw DataError("'" + path.string() + "' is not a probe checkpoint");
  ProbeModel model(probe_config_from_json(loaded.header.at("config")), loaded.header.at("d").get<std::size_t>(),
                   loaded.header.at("seed").get<std::uint64_t>());
  checkpoint::assign(model.params_.all(), loaded.params);
  return model;
}

}  // namespace probekit::probes
