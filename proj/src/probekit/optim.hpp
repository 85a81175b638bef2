#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "probekit/rng.hpp"
#include "probekit/tensor.hpp"

namespace probekit {

/// A trainable f32 tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  tensor::Tensor2D value;
  tensor::Tensor2D grad;

  Parameter() = default;
  Parameter(std::string n, tensor::Tensor2D v)
      : name(std::move(n)), value(std::move(v)), grad(tensor::Tensor2D::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// First/second moment accumulators, one pair per parameter.
struct AdamState {
  std::vector<tensor::Tensor2D> m;
  std::vector<tensor::Tensor2D> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam step over `params`. Throws NumericError without
/// touching anything if any gradient is non-finite.
void adam_update(std::span<Parameter> params, AdamState& state, const AdamConfig& cfg);

/// FNV-1a over the raw bytes of every parameter value.
std::uint64_t checksum(std::span<const Parameter> params);

/// Glorot-uniform draw for a fan_in × fan_out weight matrix.
inline tensor::Tensor2D glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  tensor::Tensor2D w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(uniform_real(rng, -limit, limit));
  return w;
}

}  // namespace probekit
