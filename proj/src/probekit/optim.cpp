#include "probekit/optim.hpp"

#include <cmath>
#include <cstring>

namespace probekit {

void adam_update(std::span<Parameter> params, AdamState& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0f)) throw UsageError("adam: learning rate must be positive");
  for (const auto& p : params) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      throw DataError("adam: gradient shape mismatch for " + p.name);
    if (!p.grad.allFinite()) throw NumericError("adam: non-finite gradient for " + p.name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(tensor::Tensor2D::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(tensor::Tensor2D::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw DataError("adam: state does not match parameter list");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(double(cfg.beta1), double(state.t));
  const double bc2 = 1.0 - std::pow(double(cfg.beta2), double(state.t));
  const float step = static_cast<float>(double(cfg.lr) / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = cfg.beta1 * m + (1.0f - cfg.beta1) * p.grad;
    v = cfg.beta2 * v + (1.0f - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= step * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + cfg.eps);
  }
}

std::uint64_t checksum(std::span<const Parameter> params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    const std::size_t n = static_cast<std::size_t>(p.value.size()) * sizeof(float);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace probekit
