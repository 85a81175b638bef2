#include "probekit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "probekit/error.hpp"

namespace probekit::metrics {
namespace {

void require_equal(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DataError(std::string(what) + ": " + std::to_string(a) + " predictions vs " + std::to_string(b) + " golds");
}

// Splits "B-NP" into ("B", "NP"); bare "O" and unknown prefixes are outside.
std::pair<char, std::string> split_tag(const std::string& tag) {
  if (tag.size() >= 2 && (tag[0] == 'B' || tag[0] == 'I') && (tag[1] == '-' || tag[1] == '_'))
    return {tag[0], tag.substr(2)};
  if (tag == "B" || tag == "I") return {tag[0], std::string{}};
  return {'O', std::string{}};
}

double f_score(double tp, double n_pred, double n_gold, double beta) {
  const double p = n_pred > 0 ? tp / n_pred : 0.0;
  const double r = n_gold > 0 ? tp / n_gold : 0.0;
  const double b2 = beta * beta;
  if (p == 0.0 && r == 0.0) return 0.0;
  return (1.0 + b2) * p * r / (b2 * p + r) * 100.0;
}

}  // namespace

MetricReport accuracy(std::span<const int> preds, std::span<const int> golds) {
  require_equal(preds.size(), golds.size(), "accuracy");
  if (preds.empty()) throw DataError("accuracy over zero instances is undefined");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == golds[i];
  return {"accuracy", 100.0 * double(correct) / double(preds.size()), preds.size(), {}};
}

std::vector<Span> decode_spans(std::span<const std::string> tags) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto [prefix, type] = split_tag(tags[i]);
    const bool continues = prefix == 'I' && open && type == cur.type;
    if (open && !continues) {
      cur.end = i;
      spans.push_back(cur);
      open = false;
    }
    if (prefix == 'B' || (prefix == 'I' && !continues)) {
      cur = Span{type, i, i};
      open = true;
    }
  }
  if (open) {
    cur.end = tags.size();
    spans.push_back(cur);
  }
  return spans;
}

MetricReport span_f1(const std::vector<std::vector<std::string>>& preds,
                     const std::vector<std::vector<std::string>>& golds) {
  require_equal(preds.size(), golds.size(), "span_f1 sentences");
  double tp = 0, n_pred = 0, n_gold = 0;
  std::size_t tokens = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    require_equal(preds[s].size(), golds[s].size(), "span_f1 tokens");
    tokens += preds[s].size();
    const auto ps = decode_spans(preds[s]);
    const auto gs = decode_spans(golds[s]);
    const std::set<Span> gold_set(gs.begin(), gs.end());
    for (const auto& sp : ps) tp += gold_set.contains(sp);
    n_pred += double(ps.size());
    n_gold += double(gs.size());
  }
  MetricReport r{"span_f1", 0.0, tokens, {}};
  if (n_pred == 0 && n_gold == 0) {
    r.value = 100.0;
  } else {
    r.value = f_score(tp, n_pred, n_gold, 1.0);
  }
  r.breakdown["precision"] = n_pred > 0 ? 100.0 * tp / n_pred : (n_gold == 0 ? 100.0 : 0.0);
  r.breakdown["recall"] = n_gold > 0 ? 100.0 * tp / n_gold : (n_pred == 0 ? 100.0 : 0.0);
  return r;
}

MetricReport f_beta_tokens(std::span<const bool> preds, std::span<const bool> golds, double beta) {
  require_equal(preds.size(), golds.size(), "f_beta");
  double tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    tp += preds[i] && golds[i];
    n_pred += preds[i];
    n_gold += golds[i];
  }
  MetricReport r{"f_beta", 0.0, preds.size(), {}};
  r.value = (n_pred == 0 && n_gold == 0) ? 100.0 : f_score(tp, n_pred, n_gold, beta);
  r.breakdown["beta"] = beta;
  return r;
}

MetricReport pearson_r(std::span<const double> preds, std::span<const double> golds) {
  require_equal(preds.size(), golds.size(), "pearson_r");
  const std::size_t n = preds.size();
  if (n < 2) throw DataError("pearson_r needs at least 2 instances");
  double mp = 0, mg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += preds[i];
    mg += golds[i];
  }
  mp /= double(n);
  mg /= double(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = preds[i] - mp;
    const double dy = golds[i] - mg;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("pearson_r is undefined for zero variance");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return {"pearson", 100.0 * r, n, {}};
}

double perplexity(double mean_nll) {
  if (!std::isfinite(mean_nll)) throw NumericError("perplexity of a non-finite mean NLL");
  return std::exp(mean_nll);
}

}  // namespace probekit::metrics
