#include "probekit/layers.hpp"

#include <algorithm>

namespace probekit::nn {

std::size_t ParamSet::add(std::string name, Tensor2D value) {
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

std::size_t ParamSet::count_scalars() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------

Linear Linear::create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  Linear l;
  l.w = ps.add(name + ".weight", glorot_uniform(in, out, rng));
  l.b = ps.add(name + ".bias", Tensor2D::Zero(1, out));
  return l;
}

Tensor2D Linear::forward(const ParamSet& ps, const Tensor2D& x) const {
  return tensor::linear_forward(x, ps[w].value, ps[b].value);
}

Tensor2D Linear::backward(ParamSet& ps, const Tensor2D& x, const Tensor2D& dy) const {
  auto g = tensor::linear_backward(x, ps[w].value, dy);
  ps[w].grad += g.dw;
  ps[b].grad += g.db;
  return std::move(g.dx);
}

// ---------------------------------------------------------------------------

std::size_t SequenceLayout::max_length() const noexcept {
  std::size_t m = 0;
  for (const auto& [start, len] : spans) m = std::max(m, len);
  return m;
}

LstmDirection LstmDirection::create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden,
                                    bool reverse, Rng& rng) {
  LstmDirection d;
  d.reverse = reverse;
  d.wx = ps.add(name + ".wx", glorot_uniform(in, 4 * hidden, rng));
  d.wh = ps.add(name + ".wh", glorot_uniform(hidden, 4 * hidden, rng));
  Tensor2D bias = Tensor2D::Zero(1, 4 * hidden);
  bias.middleCols(hidden, hidden).setOnes();  // forget gate
  d.b = ps.add(name + ".b", std::move(bias));
  return d;
}

namespace {

// Row of the packed matrix read by sequence `seq` at processing step `t`, or
// npos for padding.
constexpr std::size_t npos = static_cast<std::size_t>(-1);

std::size_t step_row(const SequenceLayout& layout, std::size_t seq, std::size_t t, bool reverse) {
  const auto [start, len] = layout.spans[seq];
  if (t >= len) return npos;
  return reverse ? start + len - 1 - t : start + t;
}

}  // namespace

Tensor2D LstmDirection::forward(const ParamSet& ps, const Tensor2D& x, const SequenceLayout& layout,
                                Cache& cache) const {
  const tensor::LstmView<float> p{ps[wx].value, ps[wh].value, ps[b].value};
  const Eigen::Index hid = ps[wh].value.rows();
  const std::size_t batch = layout.spans.size();
  const std::size_t steps = layout.max_length();

  std::vector<Tensor2D> xs(steps, Tensor2D::Zero(static_cast<Eigen::Index>(batch), x.cols()));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t s = 0; s < batch; ++s)
      if (auto r = step_row(layout, s, t, reverse); r != npos) xs[t].row(static_cast<Eigen::Index>(s)) = x.row(static_cast<Eigen::Index>(r));

  cache.steps = tensor::lstm_sequence_forward<float>(std::span<const Tensor2D>(xs), p);

  Tensor2D out = Tensor2D::Zero(static_cast<Eigen::Index>(layout.total_rows), hid);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t s = 0; s < batch; ++s)
      if (auto r = step_row(layout, s, t, reverse); r != npos)
        out.row(static_cast<Eigen::Index>(r)) = cache.steps[t].h.row(static_cast<Eigen::Index>(s));
  return out;
}

Tensor2D LstmDirection::backward(ParamSet& ps, const Tensor2D& dh, const SequenceLayout& layout,
                                 const Cache& cache) const {
  const tensor::LstmView<float> p{ps[wx].value, ps[wh].value, ps[b].value};
  const Eigen::Index hid = ps[wh].value.rows();
  const Eigen::Index in = ps[wx].value.rows();
  const std::size_t batch = layout.spans.size();
  const std::size_t steps = cache.steps.size();

  std::vector<Tensor2D> dhs(steps, Tensor2D::Zero(static_cast<Eigen::Index>(batch), hid));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t s = 0; s < batch; ++s)
      if (auto r = step_row(layout, s, t, reverse); r != npos)
        dhs[t].row(static_cast<Eigen::Index>(s)) = dh.row(static_cast<Eigen::Index>(r));

  auto dxs = tensor::lstm_sequence_backward<float>(std::span<const tensor::LstmStepCache<float>>(cache.steps),
                                                   std::span<const Tensor2D>(dhs), p,
                                                   tensor::LstmGradView<float>{ps[wx].grad, ps[wh].grad, ps[b].grad});

  Tensor2D dx = Tensor2D::Zero(static_cast<Eigen::Index>(layout.total_rows), in);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t s = 0; s < batch; ++s)
      if (auto r = step_row(layout, s, t, reverse); r != npos)
        dx.row(static_cast<Eigen::Index>(r)) = dxs[t].row(static_cast<Eigen::Index>(s));
  return dx;
}

// ---------------------------------------------------------------------------

BiLstm BiLstm::create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  BiLstm l;
  l.fwd = LstmDirection::create(ps, name + ".fwd", in, hidden, false, rng);
  l.bwd = LstmDirection::create(ps, name + ".bwd", in, hidden, true, rng);
  return l;
}

Tensor2D BiLstm::forward(const ParamSet& ps, const Tensor2D& x, const SequenceLayout& layout, Cache& cache) const {
  const Tensor2D hf = fwd.forward(ps, x, layout, cache.fwd);
  const Tensor2D hb = bwd.forward(ps, x, layout, cache.bwd);
  Tensor2D out(hf.rows(), hf.cols() + hb.cols());
  out << hf, hb;
  return out;
}

Tensor2D BiLstm::backward(ParamSet& ps, const Tensor2D& dh, const SequenceLayout& layout, const Cache& cache) const {
  const Eigen::Index hid = fwd.hidden(ps);
  const Tensor2D dhf = dh.leftCols(hid);
  const Tensor2D dhb = dh.rightCols(dh.cols() - hid);
  Tensor2D dx = fwd.backward(ps, dhf, layout, cache.fwd);
  dx += bwd.backward(ps, dhb, layout, cache.bwd);
  return dx;
}

// ---------------------------------------------------------------------------

ScalarMix ScalarMix::create(ParamSet& ps, const std::string& name, std::size_t num_layers) {
  ScalarMix m;
  m.s = ps.add(name + ".s", Tensor2D::Zero(1, static_cast<Eigen::Index>(num_layers)));
  m.gamma = ps.add(name + ".gamma", Tensor2D::Ones(1, 1));
  return m;
}

Tensor2D ScalarMix::forward(const ParamSet& ps, std::span<const Tensor2D> layers) const {
  return tensor::scalar_mix_forward<float>(layers, ps[s].value, ps[gamma].value(0, 0));
}

std::vector<Tensor2D> ScalarMix::backward(ParamSet& ps, std::span<const Tensor2D> layers, const Tensor2D& dout) const {
  auto g = tensor::scalar_mix_backward<float>(layers, ps[s].value, ps[gamma].value(0, 0), dout);
  ps[s].grad += g.ds;
  ps[gamma].grad(0, 0) += g.dgamma;
  return std::move(g.dlayers);
}

std::vector<double> ScalarMix::weights(const ParamSet& ps) const {
  const Tensor2D w = tensor::softmax_row<float>(ps[s].value);
  return std::vector<double>(w.data(), w.data() + w.size());
}

// ---------------------------------------------------------------------------

Tensor2D pairwise_features(const Tensor2D& w1, const Tensor2D& w2) {
  tensor::require_shape(w1.rows() == w2.rows() && w1.cols() == w2.cols(), "pairwise features need equal dims");
  Tensor2D out(w1.rows(), 3 * w1.cols());
  out << w1, w2, w1.cwiseProduct(w2);
  return out;
}

std::pair<Tensor2D, Tensor2D> pairwise_features_backward(const Tensor2D& w1, const Tensor2D& w2,
                                                         const Tensor2D& dfeat) {
  const Eigen::Index d = w1.cols();
  Tensor2D d1 = dfeat.leftCols(d) + dfeat.rightCols(d).cwiseProduct(w2);
  Tensor2D d2 = dfeat.middleCols(d, d) + dfeat.rightCols(d).cwiseProduct(w1);
  return {std::move(d1), std::move(d2)};
}

Tensor2D gather_rows(const Tensor2D& x, std::span<const std::size_t> rows) {
  Tensor2D out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

void scatter_add_rows(Tensor2D& dst, std::span<const std::size_t> rows, const Tensor2D& src) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    dst.row(static_cast<Eigen::Index>(rows[i])) += src.row(static_cast<Eigen::Index>(i));
}

}  // namespace probekit::nn
