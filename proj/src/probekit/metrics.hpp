#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace probekit::metrics {

struct MetricReport {
  std::string metric_name;
  double value = 0.0;  // 0-100 scale except perplexity; Pearson in [-100, 100]
  std::size_t n = 0;
  std::map<std::string, double> breakdown;
};

/// 100 * correct / n. Throws DataError when n = 0 or lengths differ.
MetricReport accuracy(std::span<const int> preds, std::span<const int> golds);

/// Labeled span (type, start, end) with `end` exclusive.
struct Span {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;
  auto operator<=>(const Span&) const = default;
};

/// Decodes BIO/IOB1/IO tags. An I-X that follows O or a different type opens
/// a new span, matching the conlleval convention.
std::vector<Span> decode_spans(std::span<const std::string> tags);

/// Exact-match span F1 over all sentences. Both sides empty scores 100.
MetricReport span_f1(const std::vector<std::vector<std::string>>& preds,
                     const std::vector<std::vector<std::string>>& golds);

/// F-beta over the positive class (true = positive).
MetricReport f_beta_tokens(std::span<const bool> preds, std::span<const bool> golds, double beta = 0.5);

/// 100 * Pearson r. Throws DataError for n < 2 or zero variance on either side.
MetricReport pearson_r(std::span<const double> preds, std::span<const double> golds);

/// exp(mean_nll); throws NumericError for a non-finite argument.
double perplexity(double mean_nll);

}  // namespace probekit::metrics
