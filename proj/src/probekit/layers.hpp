#pragma once

// Parameterized building blocks shared by probes and the contextualizer.
// Layers hold indices into a ParamSet; activations needed for backward live
// in caller-owned cache structs so a layer can be reused within one graph.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "probekit/optim.hpp"
#include "probekit/rng.hpp"
#include "probekit/tensor.hpp"

namespace probekit::nn {

using tensor::Tensor2D;

class ParamSet {
 public:
  std::size_t add(std::string name, Tensor2D value);
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::span<Parameter> all() noexcept { return params_; }
  std::span<const Parameter> all() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t count_scalars() const noexcept;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

struct Linear {
  std::size_t w = 0;
  std::size_t b = 0;

  static Linear create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);
  Tensor2D forward(const ParamSet& ps, const Tensor2D& x) const;
  /// Accumulates parameter gradients; returns dL/dx.
  Tensor2D backward(ParamSet& ps, const Tensor2D& x, const Tensor2D& dy) const;
};

/// Row-packed variable-length sequences: sequence i occupies rows
/// [start, start + length) of the input matrix.
struct SequenceLayout {
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (start, length)
  std::size_t total_rows = 0;
  std::size_t max_length() const noexcept;
};

/// One LSTM direction run over every sequence in a layout at once, padded to
/// the longest sequence. In processing order, padding steps always follow a
/// sequence's last real step, so they never influence real outputs.
struct LstmDirection {
  std::size_t wx = 0;
  std::size_t wh = 0;
  std::size_t b = 0;
  bool reverse = false;

  struct Cache {
    std::vector<tensor::LstmStepCache<float>> steps;
  };

  static LstmDirection create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden,
                              bool reverse, Rng& rng);
  Eigen::Index hidden(const ParamSet& ps) const { return ps[wh].value.rows(); }
  Tensor2D forward(const ParamSet& ps, const Tensor2D& x, const SequenceLayout& layout, Cache& cache) const;
  Tensor2D backward(ParamSet& ps, const Tensor2D& dh, const SequenceLayout& layout, const Cache& cache) const;
};

/// Forward and backward LSTM with outputs concatenated [h_fwd | h_bwd].
struct BiLstm {
  LstmDirection fwd;
  LstmDirection bwd;

  struct Cache {
    LstmDirection::Cache fwd, bwd;
  };

  static BiLstm create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng);
  Tensor2D forward(const ParamSet& ps, const Tensor2D& x, const SequenceLayout& layout, Cache& cache) const;
  Tensor2D backward(ParamSet& ps, const Tensor2D& dh, const SequenceLayout& layout, const Cache& cache) const;
};

/// Gamma-scaled softmax-weighted sum of layers; s starts at 0 and gamma at 1.
struct ScalarMix {
  std::size_t s = 0;
  std::size_t gamma = 0;

  static ScalarMix create(ParamSet& ps, const std::string& name, std::size_t num_layers);
  Tensor2D forward(const ParamSet& ps, std::span<const Tensor2D> layers) const;
  /// Accumulates dL/ds and dL/dgamma; returns dL/dlayer for each layer.
  std::vector<Tensor2D> backward(ParamSet& ps, std::span<const Tensor2D> layers, const Tensor2D& dout) const;
  std::vector<double> weights(const ParamSet& ps) const;
};

/// [w1, w2, w1 * w2] per row.
Tensor2D pairwise_features(const Tensor2D& w1, const Tensor2D& w2);
/// Splits dL/dfeatures back into (dL/dw1, dL/dw2).
std::pair<Tensor2D, Tensor2D> pairwise_features_backward(const Tensor2D& w1, const Tensor2D& w2,
                                                         const Tensor2D& dfeat);

/// Gathers rows by index.
Tensor2D gather_rows(const Tensor2D& x, std::span<const std::size_t> rows);
/// Adds `src` rows into `dst` rows by index (inverse of gather_rows).
void scatter_add_rows(Tensor2D& dst, std::span<const std::size_t> rows, const Tensor2D& src);

}  // namespace probekit::nn
