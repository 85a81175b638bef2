#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "probekit/layers.hpp"

namespace probekit::probes {

using tensor::Tensor2D;

enum class Arch { linear, mlp1024, lstm200_linear, bilstm512_mlp1024 };

std::string_view to_string(Arch arch);
Arch parse_arch(std::string_view s);
bool is_recurrent(Arch arch);

inline constexpr Eigen::Index kMlpHidden = 1024;
inline constexpr Eigen::Index kLstmHidden = 200;
inline constexpr Eigen::Index kBiLstmHidden = 512;

struct ProbeConfig {
  Arch arch = Arch::linear;
  /// Contextualizer layer read when no scalar mix is used.
  std::size_t layer = 0;
  /// When positive, a scalar mix over layers [0, mix_layers) feeds the probe.
  std::size_t mix_layers = 0;
  bool regress = false;
  std::size_t num_classes = 2;
  /// Inputs are token pairs featurized as [w1, w2, w1 * w2].
  bool pairwise = false;

  bool uses_mix() const noexcept { return mix_layers > 0; }
  std::size_t output_dim() const noexcept { return regress ? 1 : num_classes; }
};

nlohmann::json to_json(const ProbeConfig& cfg);
ProbeConfig probe_config_from_json(const nlohmann::json& j);

/// Exact trainable-parameter count for representation dim `d` and `k` outputs,
/// including scalar-mix weights when the config uses them.
std::size_t count_parameters(const ProbeConfig& cfg, std::size_t d, std::size_t k);

/// Inputs for one forward pass. Every front-end layer is a matrix whose rows
/// are the tokens of this batch (one matrix, or mix_layers matrices).
struct ProbeBatch {
  std::vector<Tensor2D> layers;
  /// Token tasks: rows whose outputs are wanted.
  std::vector<std::size_t> targets;
  /// Pairwise tasks: (first row, second row) per instance.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  /// Recurrent archs: rows grouped into whole sentences.
  nn::SequenceLayout sequences;
};

class ProbeModel {
 public:
  ProbeModel(ProbeConfig cfg, std::size_t dim, std::uint64_t seed);

  const ProbeConfig& config() const noexcept { return cfg_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }

  /// Training forward pass; keeps activations for backward().
  Tensor2D forward(const ProbeBatch& batch);
  /// Accumulates parameter gradients from dL/doutput of the last forward().
  void backward(const Tensor2D& dout);
  /// Inference without touching training state.
  Tensor2D predict(const ProbeBatch& batch) const;

  std::vector<double> mix_weights() const;
  double mix_gamma() const;

  void save(const std::filesystem::path& path) const;
  static ProbeModel load(const std::filesystem::path& path);

 private:
  struct Cache {
    std::vector<Tensor2D> layers;
    Tensor2D x;
    nn::LstmDirection::Cache lstm;
    nn::BiLstm::Cache bi1, bi2;
    Tensor2D h1, h2;
    Tensor2D w1, w2;
    Tensor2D z, hidden_pre, hidden;
    std::vector<std::size_t> firsts, seconds;
  };

  Tensor2D run(const ProbeBatch& batch, Cache& cache) const;

  ProbeConfig cfg_;
  std::size_t dim_;
  std::uint64_t seed_;
  nn::ParamSet params_;
  std::optional<nn::ScalarMix> mix_;
  nn::LstmDirection lstm_;
  nn::BiLstm bi1_, bi2_;
  nn::Linear hidden_;
  nn::Linear out_;
  Cache cache_;
  const ProbeBatch* last_batch_ = nullptr;
};

}  // namespace probekit::probes
