// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. `probekit_acceptance 3 5` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "probekit/bilmprobe.hpp"
#include "probekit/error.hpp"
#include "probekit/ingest/corpus.hpp"
#include "probekit/ingest/dataset.hpp"
#include "probekit/metrics.hpp"
#include "probekit/minictx.hpp"
#include "probekit/pipeline.hpp"
#include "probekit/report.hpp"
#include "probekit/reprstore.hpp"
#include "probekit/tensor.hpp"
#include "probekit/trainer.hpp"
#include "synth.hpp"

#ifndef PROBEKIT_FIXTURES_DIR
#define PROBEKIT_FIXTURES_DIR "fixtures"
#endif

using namespace probekit;
namespace fs = std::filesystem;
using json = nlohmann::json;
using oracle::MatD;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("probekit_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

Outcome gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  auto dim = [&](int lo, int hi) { return Eigen::Index(std::uniform_int_distribution<int>(lo, hi)(rng)); };
  std::map<std::string, double> worst;
  auto record = [&](const std::string& op, const MatD& an, const MatD& num) {
    worst[op] = std::max(worst[op], oracle::rel_error(an, num));
  };

  for (int c = 0; c < 50; ++c) {
    MatD x = oracle::random_mat(rng, dim(1, 4), dim(1, 6));
    MatD w = oracle::random_mat(rng, x.cols(), dim(1, 6)), b = oracle::random_mat(rng, 1, w.cols());
    const MatD r = oracle::random_mat(rng, x.rows(), w.cols());
    auto loss = [&] { return (tensor::linear_forward(x, w, b).array() * r.array()).sum(); };
    const auto g = tensor::linear_backward(x, w, r);
    record("linear", g.dx, oracle::numeric_grad(x, loss));
    record("linear", g.dw, oracle::numeric_grad(w, loss));
    record("linear", g.db, oracle::numeric_grad(b, loss));
  }
  for (int c = 0; c < 50; ++c) {
    MatD x = oracle::random_mat(rng, dim(1, 4), dim(1, 8));
    // Keep inputs away from the kink so central differences are valid.
    for (Eigen::Index i = 0; i < x.size(); ++i)
      while (std::abs(x.data()[i]) < 1e-3) x.data()[i] = std::normal_distribution<double>()(rng);
    const MatD r = oracle::random_mat(rng, x.rows(), x.cols());
    auto loss = [&] { return (tensor::relu(x).array() * r.array()).sum(); };
    record("relu", tensor::relu_backward<double>(x, r), oracle::numeric_grad(x, loss));
  }
  for (int c = 0; c < 50; ++c) {
    MatD z = oracle::random_mat(rng, dim(1, 5), dim(2, 7), 3.0);
    std::vector<int> gold(static_cast<std::size_t>(z.rows()));
    for (auto& y : gold) y = std::uniform_int_distribution<int>(0, int(z.cols()) - 1)(rng);
    auto loss = [&] { return tensor::softmax_xent(z, gold).loss; };
    const MatD an = tensor::softmax_xent(z, gold).grad;
    record("softmax_xent", an, oracle::numeric_grad(z, loss));
  }
  for (int c = 0; c < 50; ++c) {
    MatD p = oracle::random_mat(rng, dim(1, 8), 1);
    std::vector<double> gold(static_cast<std::size_t>(p.rows()));
    for (auto& y : gold) y = std::normal_distribution<double>()(rng);
    auto loss = [&] { return tensor::mse(p, gold).loss; };
    const MatD an = tensor::mse(p, gold).grad;
    record("mse", an, oracle::numeric_grad(p, loss));
  }
  for (int c = 0; c < 50; ++c) {
    const Eigen::Index n = dim(1, 3), in = dim(1, 4), h = dim(1, 4);
    tensor::LstmParams<double> p{oracle::random_mat(rng, in, 4 * h, 0.7), oracle::random_mat(rng, h, 4 * h, 0.7),
                                 oracle::random_mat(rng, 1, 4 * h, 0.5)};
    std::vector<MatD> xs, rs;
    for (int t = 0; t < 3; ++t) {
      xs.push_back(oracle::random_mat(rng, n, in));
      rs.push_back(oracle::random_mat(rng, n, h));
    }
    auto loss = [&] {
      const auto caches = tensor::lstm_sequence_forward<double>(std::span<const MatD>(xs), p);
      double l = 0;
      for (std::size_t t = 0; t < caches.size(); ++t) l += (caches[t].h.array() * rs[t].array()).sum();
      return l;
    };
    const auto caches = tensor::lstm_sequence_forward<double>(std::span<const MatD>(xs), p);
    tensor::LstmGrads<double> g;
    g.zero_like(p);
    const auto dxs = tensor::lstm_sequence_backward<double>(std::span<const tensor::LstmStepCache<double>>(caches),
                                                            std::span<const MatD>(rs), p, g);
    record("lstm3", g.wx, oracle::numeric_grad(p.wx, loss));
    record("lstm3", g.wh, oracle::numeric_grad(p.wh, loss));
    record("lstm3", g.b, oracle::numeric_grad(p.b, loss));
    for (std::size_t t = 0; t < 3; ++t) record("lstm3", dxs[t], oracle::numeric_grad(xs[t], loss));
  }
  for (int c = 0; c < 50; ++c) {
    const Eigen::Index L = dim(1, 4), n = dim(1, 3), d = dim(1, 5);
    std::vector<MatD> layers;
    for (Eigen::Index l = 0; l < L; ++l) layers.push_back(oracle::random_mat(rng, n, d));
    MatD s = oracle::random_mat(rng, 1, L);
    MatD gamma(1, 1);
    gamma(0, 0) = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
    const MatD r = oracle::random_mat(rng, n, d);
    auto loss = [&] {
      return (tensor::scalar_mix_forward<double>(std::span<const MatD>(layers), s, gamma(0, 0)).array() * r.array())
          .sum();
    };
    const auto g = tensor::scalar_mix_backward<double>(std::span<const MatD>(layers), s, gamma(0, 0), r);
    record("scalar_mix", g.ds, oracle::numeric_grad(s, loss));
    MatD dg(1, 1);
    dg(0, 0) = g.dgamma;
    record("scalar_mix", dg, oracle::numeric_grad(gamma, loss));
    for (Eigen::Index l = 0; l < L; ++l)
      record("scalar_mix", g.dlayers[std::size_t(l)], oracle::numeric_grad(layers[std::size_t(l)], loss));
  }

  const double secs = seconds_since(t0);
  bool ok = secs < 60.0;
  std::string detail;
  for (const auto& [op, e] : worst) {
    ok &= e <= 1e-4;
    detail += op + "=" + sci(e) + " ";
  }
  return {ok, "max rel err " + detail + "(" + fmt(secs) + "s, 50 configs each)"};
}

// ---------------------------------------------------------------------------
// 2. Store round-trip

Outcome store_roundtrip() {
  std::mt19937_64 rng(202);
  const auto dir = scratch_dir("store");
  std::size_t exact = 0;
  std::string first_failure;
  for (int i = 0; i < 100; ++i) {
    store::StoreHeader h;
    h.model_name = "rand-" + std::to_string(i) + (i % 7 == 0 ? " \xc3\xa9\"q\"" : "");
    h.num_layers = 1 + rng() % 4;
    h.dim = 1 + rng() % 9;
    h.num_sentences = rng() % 7;
    std::vector<store::SentenceBlock> blocks(h.num_sentences);
    for (auto& b : blocks) {
      b.num_tokens = rng() % 8;
      b.values.resize(h.num_layers * b.num_tokens * h.dim);
      for (auto& v : b.values) {
        // Arbitrary finite bit patterns: signed zeros, subnormals, extremes.
        std::uint32_t bits;
        do bits = static_cast<std::uint32_t>(rng()); while (((bits >> 23) & 0xff) == 0xff);
        if (rng() % 5 == 0) bits &= 0x807fffffu;
        std::memcpy(&v, &bits, 4);
      }
    }
    const auto bytes = store::write_store(h, blocks);
    const auto path = dir / ("s" + std::to_string(i) + ".cwrs");
    store::write_store_file(path, h, blocks);
    const auto st = store::ReprStore::open(path);
    const auto again = store::write_store(st);
    const std::string on_disk = slurp(path);
    bool ok = again == bytes && on_disk.size() == bytes.size() &&
              std::memcmp(on_disk.data(), bytes.data(), bytes.size()) == 0 && st.num_sentences() == h.num_sentences;
    for (std::size_t s = 0; ok && s < blocks.size(); ++s) {
      const auto blk = st.sentence(s);
      ok = blk.num_tokens == blocks[s].num_tokens &&
           std::memcmp(blk.values.data(), blocks[s].values.data(), blocks[s].values.size() * 4) == 0;
    }
    exact += ok;
    if (!ok && first_failure.empty()) first_failure = " first mismatch at file " + std::to_string(i);
  }

  // Fixtures written by an independent encoder.
  const fs::path fx = fs::path(PROBEKIT_FIXTURES_DIR) / "cwrs";
  std::size_t fixtures_ok = 0, fixtures = 0;
  std::string fixture_failure;
  {
    ++fixtures;
    const auto st = store::ReprStore::open(fx / "valid.cwrs");
    bool ok = st.num_layers() == 2 && st.dim() == 3 && st.num_sentences() == 4 &&
              std::vector<std::size_t>(st.token_counts().begin(), st.token_counts().end()) ==
                  std::vector<std::size_t>{3, 1, 0, 2};
    for (std::size_t s = 0; ok && s < 4; ++s)
      for (std::size_t l = 0; l < 2; ++l) {
        const auto m = st.get_layer(s, l);
        for (Eigen::Index t = 0; t < m.rows(); ++t)
          for (Eigen::Index k = 0; k < 3; ++k)
            ok &= m(t, k) == float(double(s * 1000 + l * 100 + std::size_t(t) * 10 + std::size_t(k)) / 4.0);
      }
    const auto raw = slurp(fx / "valid.cwrs");
    const auto back = store::write_store(st);
    ok &= back.size() == raw.size() && std::memcmp(back.data(), raw.data(), raw.size()) == 0;
    fixtures_ok += ok;
    if (!ok) fixture_failure += " valid.cwrs";
  }
  const std::vector<std::pair<std::string, store::StoreErrc>> bad{
      {"bad_magic.cwrs", store::StoreErrc::bad_magic},
      {"truncated.cwrs", store::StoreErrc::truncated},
      {"trailing.cwrs", store::StoreErrc::inconsistent},
      {"bad_header.cwrs", store::StoreErrc::inconsistent},
      {"unsupported_version.cwrs", store::StoreErrc::unsupported},
      {"unsupported_dtype.cwrs", store::StoreErrc::unsupported},
  };
  for (const auto& [name, code] : bad) {
    ++fixtures;
    bool ok = false;
    try {
      (void)store::ReprStore::open(fx / name);
    } catch (const store::StoreError& e) {
      ok = e.code() == code && e.kind() == ErrorKind::data;
    }
    fixtures_ok += ok;
    if (!ok) fixture_failure += " " + name;
  }

  // Every strict prefix of a valid file is rejected as truncated (past the magic).
  std::size_t prefixes_ok = 0, prefixes = 0;
  {
    const auto raw = slurp(fx / "valid.cwrs");
    for (std::size_t cut = 8; cut < raw.size(); ++cut) {
      ++prefixes;
      std::vector<std::byte> b(cut);
      std::memcpy(b.data(), raw.data(), cut);
      try {
        (void)store::ReprStore::read(std::move(b));
      } catch (const store::StoreError& e) {
        prefixes_ok += e.code() == store::StoreErrc::truncated;
      }
    }
  }
  fs::remove_all(dir);
  const bool pass = exact == 100 && fixtures_ok == fixtures && prefixes_ok == prefixes;
  return {pass, std::to_string(exact) + "/100 byte-exact; fixtures " + std::to_string(fixtures_ok) + "/" +
                    std::to_string(fixtures) + "; truncated prefixes " + std::to_string(prefixes_ok) + "/" +
                    std::to_string(prefixes) + first_failure + fixture_failure};
}

// ---------------------------------------------------------------------------
// 3. Compiler balance

ingest::AnnotatedSentence random_dep_sentence(std::mt19937_64& rng, bool semantic) {
  ingest::AnnotatedSentence s;
  const std::size_t T = 1 + rng() % 10;
  for (std::size_t i = 0; i < T; ++i) s.tokens.push_back("w" + std::to_string(rng() % 20));
  if (!semantic) {
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> heads(T, 0);
    for (std::size_t k = 1; k < T; ++k) heads[order[k]] = int(order[rng() % k]) + 1;
    s.dep_heads = heads;
    s.dep_labels = std::vector<std::string>(T, "dep");
  } else {
    std::set<std::pair<std::size_t, std::size_t>> arcs;
    const std::size_t n = T < 2 ? 0 : rng() % (2 * T);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t h = rng() % T, m = rng() % T;
      if (h != m) arcs.insert({h, m});
    }
    std::vector<ingest::SemArc> g;
    for (const auto& [h, m] : arcs) g.push_back({h, m, "ARG" + std::to_string(rng() % 3)});
    s.semgraph = g;
  }
  return s;
}

ingest::AnnotatedSentence random_coref_sentence(std::mt19937_64& rng) {
  ingest::AnnotatedSentence s;
  const std::size_t T = 2 + rng() % 14;
  for (std::size_t i = 0; i < T; ++i) s.tokens.push_back("w" + std::to_string(rng() % 20));
  std::vector<std::size_t> idx(T);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> clusters;
  std::size_t pos = 0;
  const std::size_t nc = 1 + rng() % 3;
  for (std::size_t c = 0; c < nc && pos < T; ++c) {
    const std::size_t size = std::min<std::size_t>(1 + rng() % 4, T - pos);
    std::vector<std::size_t> cl(idx.begin() + long(pos), idx.begin() + long(pos + size));
    std::sort(cl.begin(), cl.end());
    clusters.push_back(cl);
    pos += size;
  }
  s.clusters = clusters;
  return s;
}

// Re-derives the expected positives straight from the annotation and checks
// every compiled instance against it.
std::string audit_arcs(const ingest::Corpus& corpus, const ingest::TaskDataset& ds, int kind) {
  std::size_t gold_total = 0, expect_dropped = 0;
  std::multiset<std::pair<std::size_t, std::size_t>> expect_pos;  // (sent, mod, head) flattened below
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> expect;
  std::map<std::pair<std::size_t, std::size_t>, std::set<std::size_t>> gold_heads;  // (sent, mod) -> heads
  std::vector<std::map<std::size_t, std::size_t>> cluster_of(corpus.size());
  for (std::size_t sid = 0; sid < corpus.size(); ++sid) {
    const auto& s = corpus[sid];
    if (kind == 2) {
      for (std::size_t c = 0; c < s.clusters->size(); ++c)
        for (std::size_t m : (*s.clusters)[c]) cluster_of[sid][m] = c;
      for (const auto& [b, cb] : cluster_of[sid])
        for (const auto& [a, ca] : cluster_of[sid]) {
          if (a >= b || ca != cb) continue;
          ++gold_total;
          bool eligible = false;
          for (const auto& [m, cm] : cluster_of[sid]) eligible |= m < b && cm != cb;
          if (eligible)
            expect.insert({sid, b, a});
          else
            ++expect_dropped;
        }
      continue;
    }
    if (kind == 0) {
      for (std::size_t i = 0; i < s.size(); ++i)
        if ((*s.dep_heads)[i] != 0) gold_heads[{sid, i}].insert(std::size_t((*s.dep_heads)[i] - 1));
    } else {
      for (const auto& a : *s.semgraph) gold_heads[{sid, a.mod}].insert(a.head);
    }
  }
  for (const auto& [key, heads] : gold_heads) {
    const std::size_t T = corpus[key.first].size();
    for (std::size_t h : heads) {
      ++gold_total;
      if (T - 1 > heads.size())
        expect.insert({key.first, key.second, h});
      else
        ++expect_dropped;
    }
  }

  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> got_pos;
  std::multiset<std::pair<std::size_t, std::size_t>> pos_keys, neg_keys;
  for (const auto& in : ds.instances) {
    const std::pair<std::size_t, std::size_t> key{in.sent_id, in.pos};
    if (in.label == ingest::kPositiveArc) {
      got_pos.insert({in.sent_id, in.pos, in.head});
      pos_keys.insert(key);
      continue;
    }
    if (in.label != ingest::kNegativeArc) return "unexpected label '" + in.label + "'";
    neg_keys.insert(key);
    if (kind == 2) {
      const auto& cl = cluster_of[in.sent_id];
      if (!cl.contains(in.head) || !cl.contains(in.pos)) return "negative uses a non-mention";
      if (in.head >= in.pos) return "negative antecedent does not precede";
      if (cl.at(in.head) == cl.at(in.pos)) return "negative is coreferent";
    } else {
      if (in.head == in.pos) return "negative is a self-arc";
      if (in.head >= corpus[in.sent_id].size()) return "negative out of range";
      if (gold_heads[key].contains(in.head)) return "negative is a gold arc";
    }
  }
  if (pos_keys.size() != neg_keys.size()) return "unbalanced";
  if (pos_keys != neg_keys) return "negatives not paired with positives";
  if (got_pos != expect) return "positive set differs from gold";
  if (ds.metadata.value("dropped_positives", std::size_t{0}) != expect_dropped) return "dropped count differs";
  if (got_pos.size() + expect_dropped != gold_total) return "positives + dropped != gold";
  return {};
}

Outcome compiler_balance() {
  std::mt19937_64 rng(303);
  std::size_t ok = 0, pos = 0, neg = 0;
  std::string failure;
  for (int f = 0; f < 500; ++f) {
    const int kind = f % 3;  // 0 syntactic, 1 semantic, 2 coref
    ingest::Corpus corpus;
    const std::size_t n = 1 + rng() % 5;
    for (std::size_t i = 0; i < n; ++i)
      corpus.push_back(kind == 2 ? random_coref_sentence(rng) : random_dep_sentence(rng, kind == 1));
    const std::uint64_t seed = rng();
    const auto ds = kind == 2 ? ingest::compile_coref_arc_prediction(corpus, seed)
                              : ingest::compile_dep_arc_prediction(
                                    corpus, kind == 0 ? ingest::ArcSource::syntactic : ingest::ArcSource::semantic,
                                    seed);
    for (const auto& in : ds.instances) (in.label == ingest::kPositiveArc ? pos : neg)++;
    const auto err = audit_arcs(corpus, ds, kind);
    if (err.empty())
      ++ok;
    else if (failure.empty())
      failure = "; fixture " + std::to_string(f) + ": " + err;
  }
  return {ok == 500 && pos == neg,
          std::to_string(ok) + "/500 fixtures audited; " + std::to_string(pos) + " pos / " + std::to_string(neg) +
              " neg" + failure};
}

// ---------------------------------------------------------------------------
// 4. Metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(404);
  double span_err = 0;
  std::vector<std::vector<std::string>> all_p, all_g;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t len = rng() % 16;
    auto p = oracle::random_bio(rng, len), g = oracle::random_bio(rng, len);
    if (rng() % 4 == 0) g = p;
    const double got = metrics::span_f1({p}, {g}).value;
    span_err = std::max(span_err, std::abs(got - oracle::brute_span_f1({p}, {g})));
    all_p.push_back(std::move(p));
    all_g.push_back(std::move(g));
  }
  span_err = std::max(span_err, std::abs(metrics::span_f1(all_p, all_g).value - oracle::brute_span_f1(all_p, all_g)));

  double acc_err = 0, f_err = 0, r_err = 0, ppl_err = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<int> pi(n), gi(n);
    std::vector<double> pd(n), gd(n);
    std::unique_ptr<bool[]> pb(new bool[n]), gb(new bool[n]);
    std::size_t correct = 0, tp = 0, np = 0, ng = 0;
    for (std::size_t k = 0; k < n; ++k) {
      pi[k] = int(rng() % 4);
      gi[k] = int(rng() % 4);
      correct += pi[k] == gi[k];
      pb[k] = rng() % 3 == 0;
      gb[k] = rng() % 3 == 0;
      tp += pb[k] && gb[k];
      np += pb[k];
      ng += gb[k];
      gd[k] = std::normal_distribution<double>()(rng);
      pd[k] = 0.5 * gd[k] + std::normal_distribution<double>()(rng);
    }
    acc_err = std::max(acc_err, std::abs(metrics::accuracy(pi, gi).value - 100.0 * double(correct) / double(n)));

    const double beta = std::vector<double>{0.5, 1.0, 2.0}[rng() % 3];
    double f_want = 0;
    if (np == 0 && ng == 0) {
      f_want = 100.0;
    } else if (tp > 0) {
      const double P = double(tp) / double(np), R = double(tp) / double(ng), b2 = beta * beta;
      f_want = 100.0 * (1 + b2) * P * R / (b2 * P + R);
    }
    f_err = std::max(f_err, std::abs(metrics::f_beta_tokens(std::span<const bool>(pb.get(), n),
                                                            std::span<const bool>(gb.get(), n), beta)
                                         .value -
                                     f_want));

    long double mp = 0, mg = 0;
    for (std::size_t k = 0; k < n; ++k) mp += pd[k], mg += gd[k];
    mp /= n;
    mg /= n;
    long double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t k = 0; k < n; ++k) {
      sxy += (pd[k] - mp) * (gd[k] - mg);
      sxx += (pd[k] - mp) * (pd[k] - mp);
      syy += (gd[k] - mg) * (gd[k] - mg);
    }
    const double r_want = double(100.0L * sxy / std::sqrt(sxx * syy));
    r_err = std::max(r_err, std::abs(metrics::pearson_r(pd, gd).value - r_want));

    long double nll = 0;
    for (std::size_t k = 0; k < n; ++k) nll += -std::log(std::uniform_real_distribution<double>(0.01, 1.0)(rng));
    const double mean = double(nll / n);
    const double want = std::exp(mean);
    ppl_err = std::max(ppl_err, std::abs(metrics::perplexity(mean) - want) / want);
  }
  const bool pass = span_err <= 1e-9 && acc_err <= 1e-9 && f_err <= 1e-9 && r_err <= 1e-9 && ppl_err <= 1e-9;
  return {pass, "max |diff| span_f1=" + sci(span_err) + " (1000 pairs) acc=" + sci(acc_err) + " fbeta=" +
                    sci(f_err) + " pearson=" + sci(r_err) + " ppl(rel)=" + sci(ppl_err)};
}

// ---------------------------------------------------------------------------
// 5. Probe-capacity ladder
//
// Types follow x_{t+1} = (x_{t-1} + x_t) mod K from a random start pair, so
// (x_{t-1}, x_t) is uniform and x_t alone says nothing about x_{t+1}. The
// label at t is the next token's type: recoverable from left context by a
// recurrent probe, read off directly by a bidirectional one, and at chance
// for a position-local probe.

constexpr int kFibK = 5;

synth::TypeSeqs fib_sequences(std::mt19937_64& rng, std::size_t n, std::size_t lo, std::size_t hi) {
  synth::TypeSeqs seqs(n);
  for (auto& s : seqs) {
    s.resize(lo + rng() % (hi - lo + 1));
    s[0] = int(rng() % kFibK);
    s[1] = int(rng() % kFibK);
    for (std::size_t t = 2; t < s.size(); ++t) s[t] = (s[t - 2] + s[t - 1]) % kFibK;
  }
  return seqs;
}

std::vector<std::vector<float>> type_embeddings(std::mt19937_64& rng, int types, std::size_t dim) {
  std::normal_distribution<float> nd;
  std::vector<std::vector<float>> e(static_cast<std::size_t>(types), std::vector<float>(dim));
  for (auto& v : e)
    for (auto& x : v) x = nd(rng);
  return e;
}

Outcome capacity_ladder() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  const std::size_t dim = 16;
  const auto seqs = fib_sequences(rng, 500, 6, 12);
  const auto emb = type_embeddings(rng, kFibK, dim);
  const auto st = synth::make_store(seqs, 1, dim, [&](std::size_t s, std::size_t t, std::size_t, float* out) {
    std::copy(emb[std::size_t(seqs[s][t])].begin(), emb[std::size_t(seqs[s][t])].end(), out);
  });

  ingest::TaskDataset ds;
  ds.name = "next-type";
  ds.kind = ingest::TaskKind::sparse_labeling;
  ds.metric = ingest::MetricKind::accuracy;
  const std::size_t n = seqs.size();
  for (std::size_t s = 0; s < n; ++s) {
    ingest::SentenceRecord rec;
    rec.sent_id = s;
    for (int ty : seqs[s]) rec.tokens.push_back("t" + std::to_string(ty));
    rec.split = s < n * 8 / 10 ? "train" : (s < n * 9 / 10 ? "dev" : "test");
    ds.sentences.push_back(std::move(rec));
    for (std::size_t t = 1; t + 1 < seqs[s].size(); ++t)
      ds.instances.push_back({s, t, 0, "c" + std::to_string(seqs[s][t + 1]), 0.0});
  }
  ds.rebuild_vocab();

  train::TrainConfig tc;
  tc.seed = 5;
  std::map<probes::Arch, double> acc;
  for (auto arch : {probes::Arch::linear, probes::Arch::lstm200_linear, probes::Arch::bilstm512_mlp1024}) {
    auto pc = train::config_for(ds, arch);
    pc.layer = 0;
    const auto trained = train::train_probe(ds, st, pc, tc);
    acc[arch] = train::evaluate(trained, ds, st, "test").value;
  }
  const double lin = acc[probes::Arch::linear], lstm = acc[probes::Arch::lstm200_linear],
               bi = acc[probes::Arch::bilstm512_mlp1024];
  const double secs = seconds_since(t0);
  const bool pass = lstm >= 90 && lin <= 60 && bi >= lstm - 2 && secs < 300;
  return {pass, "linear=" + fmt(lin) + " lstm200_linear=" + fmt(lstm) + " bilstm512_mlp1024=" + fmt(bi) + " (" +
                    fmt(secs, 1) + "s)"};
}

// ---------------------------------------------------------------------------
// 6 + 7. Layer sweep on a 3-layer store with signal only in layer 1

struct SweepRun {
  json metrics;
  std::string svg, csv;
};

struct LayerFixture {
  fs::path store, task;
};

LayerFixture layer_fixture(const fs::path& dir) {
  std::mt19937_64 rng(606);
  const std::size_t dim = 16;
  const int types = 8;
  synth::TypeSeqs seqs(1500);
  for (auto& s : seqs) {
    s.resize(5 + rng() % 8);
    for (auto& t : s) t = int(rng() % types);
  }
  const auto emb = type_embeddings(rng, types, dim);
  const auto st = synth::make_store(seqs, 3, dim, [&](std::size_t s, std::size_t t, std::size_t l, float* out) {
    std::mt19937_64 r((s << 20) ^ (t << 4) ^ l);
    std::normal_distribution<float> nd;
    for (std::size_t k = 0; k < dim; ++k)
      out[k] = l == 1 ? emb[std::size_t(seqs[s][t])][k] + 0.5f * nd(r) : 2.0f * nd(r);
  });
  const auto ds = synth::make_token_dataset(seqs, [&](std::size_t s, std::size_t t) { return "T" + std::to_string(seqs[s][t]); },
                                            "type-id");
  LayerFixture f{dir / "layers.cwrs", dir / "type-id.jsonl"};
  std::vector<store::SentenceBlock> blocks;
  for (std::size_t s = 0; s < st.num_sentences(); ++s) blocks.push_back(st.sentence(s));
  store::write_store_file(f.store, st.header(), blocks);
  ingest::save_dataset(ds, f.task);
  return f;
}

SweepRun sweep_once(const LayerFixture& f, const fs::path& out, int jobs) {
  pipeline::run_sweep({{"store", f.store.string()},
                       {"task", f.task.string()},
                       {"probe", "linear"},
                       {"seed", 7},
                       {"jobs", jobs},
                       {"out", out.string()}});
  return {json::parse(slurp(out / "metrics.json")), slurp(out / "heatmap.svg"), slurp(out / "heatmap_row.csv")};
}

struct LayerSweep {
  SweepRun a, b;
  double secs = 0;
};

const LayerSweep& layer_sweep() {
  static const LayerSweep result = [] {
    const auto t0 = Clock::now();
    const auto dir = scratch_dir("layers");
    const auto f = layer_fixture(dir);
    LayerSweep r;
    r.a = sweep_once(f, dir / "run_a", 1);
    r.b = sweep_once(f, dir / "run_b", 3);
    r.secs = seconds_since(t0);
    fs::remove_all(dir);
    return r;
  }();
  return result;
}

Outcome scalar_mix() {
  const auto& m = layer_sweep().a.metrics;
  double best_single = -1, mix_acc = -1, w1 = -1;
  std::string weights;
  for (const auto& r : m) {
    if (r["layer"] == "mix") {
      mix_acc = r["value"].get<double>();
      w1 = r["mix_weights"][1].get<double>();
      for (const auto& w : r["mix_weights"]) weights += fmt(w.get<double>(), 3) + " ";
    } else {
      best_single = std::max(best_single, r["value"].get<double>());
    }
  }
  const bool pass = w1 >= 0.8 && mix_acc >= best_single - 1.0;
  return {pass, "mix weights [" + weights + "] mix acc=" + fmt(mix_acc) + " best single=" + fmt(best_single)};
}

Outcome layer_gap() {
  const auto& ls = layer_sweep();
  std::map<std::string, double> v;
  for (const auto& r : ls.a.metrics)
    v[r["layer"].is_string() ? "mix" : std::to_string(r["layer"].get<int>())] = r["value"].get<double>();
  const bool same = ls.a.svg == ls.b.svg && ls.a.csv == ls.b.csv && ls.a.metrics.dump() == ls.b.metrics.dump();
  const double gap = v["1"] - v["0"];
  const bool pass = gap >= 20.0 && same && !ls.a.svg.empty();
  return {pass, "layer0=" + fmt(v["0"]) + " layer1=" + fmt(v["1"]) + " layer2=" + fmt(v["2"]) + " gap=" + fmt(gap) +
                    "; heatmap row " + (same ? "identical" : "DIFFERS") + " across jobs=1/jobs=3 (" +
                    fmt(ls.secs, 1) + "s)"};
}

// ---------------------------------------------------------------------------
// 8. BiLM probe

bilm::Sentences to_sentences(const synth::TypeSeqs& seqs) {
  bilm::Sentences out;
  for (const auto& s : seqs) {
    std::vector<std::string> toks;
    for (int t : s) toks.push_back("w" + std::to_string(t));
    out.push_back(std::move(toks));
  }
  return out;
}

// Unigram model counted over the LM-train targets of one direction, scored on
// the eval targets of the same direction.
double unigram_ppl(const bilm::Sentences& corpus, const bilm::CorpusSplit& split, bool forward) {
  auto targets = [&](const std::vector<std::size_t>& ids, const std::function<void(const std::string&)>& f) {
    for (std::size_t s : ids) {
      const auto& toks = corpus[s];
      if (toks.size() < 2) continue;
      for (std::size_t t = forward ? 1 : 0; t < (forward ? toks.size() : toks.size() - 1); ++t) f(toks[t]);
    }
  };
  std::map<std::string, double> counts;
  double total = 0;
  targets(split.train, [&](const std::string& w) { counts[w] += 1, total += 1; });
  double nll = 0, n = 0;
  targets(split.eval, [&](const std::string& w) { nll -= std::log(counts.at(w) / total), n += 1; });
  return std::exp(nll / n);
}

Outcome bilm_probe() {
  const auto t0 = Clock::now();
  const std::size_t dim = 24;
  train::TrainConfig tc;
  tc.seed = 8;

  // Memorizable: a fixed cycle over V types, so both neighbors are determined.
  std::mt19937_64 rng(808);
  const int V = 20;
  synth::TypeSeqs cyc(600);
  for (auto& s : cyc) {
    s.resize(4 + rng() % 8);
    const int start = int(rng() % V);
    for (std::size_t t = 0; t < s.size(); ++t) s[t] = (start + int(t)) % V;
  }
  const auto emb = type_embeddings(rng, V, dim);
  const auto cyc_corpus = to_sentences(cyc);
  const auto cyc_store = synth::make_store(cyc, 1, dim, [&](std::size_t s, std::size_t t, std::size_t, float* out) {
    std::copy(emb[std::size_t(cyc[s][t])].begin(), emb[std::size_t(cyc[s][t])].end(), out);
  });
  const auto cyc_data = bilm::build_bilm_data(cyc_corpus, 8);
  const auto mem = bilm::bilm_sweep(cyc_store, cyc_data, tc).at(0);

  // Noise: Zipfian i.i.d. tokens with representations unrelated to them.
  const int Vz = 30;
  std::vector<double> zipf(Vz);
  for (int i = 0; i < Vz; ++i) zipf[std::size_t(i)] = 1.0 / (i + 1);
  std::discrete_distribution<int> draw(zipf.begin(), zipf.end());
  synth::TypeSeqs iid(1500);
  for (auto& s : iid) {
    s.resize(4 + rng() % 10);
    for (auto& t : s) t = draw(rng);
  }
  const auto iid_corpus = to_sentences(iid);
  const auto noise_store = synth::make_store(iid, 1, dim, [&](std::size_t s, std::size_t t, std::size_t, float* out) {
    std::mt19937_64 r((s << 16) ^ t ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<float> nd;
    for (std::size_t k = 0; k < dim; ++k) out[k] = nd(r);
  });
  const auto iid_data = bilm::build_bilm_data(iid_corpus, 8);
  const auto noise = bilm::bilm_sweep(noise_store, iid_data, tc).at(0);
  const double uni_f = unigram_ppl(iid_corpus, iid_data.split, true);
  const double uni_b = unigram_ppl(iid_corpus, iid_data.split, false);

  auto ppl_of = [](const std::vector<double>& nll) {
    long double s = 0;
    for (double x : nll) s += x;
    return std::exp(double(s / nll.size()));
  };
  double avg_err = 0, recompute_err = 0;
  for (const auto* e : {&mem, &noise}) {
    avg_err = std::max(avg_err, std::abs(e->avg_ppl - (e->fwd_ppl + e->bwd_ppl) / 2.0));
    recompute_err = std::max({recompute_err, std::abs(ppl_of(e->fwd_nll) - e->fwd_ppl) / e->fwd_ppl,
                              std::abs(ppl_of(e->bwd_nll) - e->bwd_ppl) / e->bwd_ppl});
  }
  const double dev_f = std::abs(noise.fwd_ppl - uni_f) / uni_f, dev_b = std::abs(noise.bwd_ppl - uni_b) / uni_b;
  const bool pass = mem.fwd_ppl <= 1.1 && mem.bwd_ppl <= 1.1 && mem.avg_ppl <= 1.1 && dev_f <= 0.10 &&
                    dev_b <= 0.10 && avg_err <= 1e-12 && recompute_err <= 1e-9;
  return {pass, "memorizable fwd/bwd/avg=" + fmt(mem.fwd_ppl, 3) + "/" + fmt(mem.bwd_ppl, 3) + "/" +
                    fmt(mem.avg_ppl, 3) + "; noise fwd=" + fmt(noise.fwd_ppl) + " vs unigram " + fmt(uni_f) +
                    " (" + fmt(100 * dev_f, 1) + "%), bwd=" + fmt(noise.bwd_ppl) + " vs " + fmt(uni_b) + " (" +
                    fmt(100 * dev_b, 1) + "%); avg identity err " + sci(avg_err) + " (" + fmt(seconds_since(t0), 1) +
                    "s)"};
}

// ---------------------------------------------------------------------------
// 9. Transfer
//
// Pretraining task: the sum of the previous and current type (mod K), which
// on these sequences is also the next type. Targets, on disjoint sentences:
// the same sum, and the difference (x_t - x_{t-1}) mod K. Neither can be read
// from one token's embedding; both need the previous token.

Outcome transfer() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(909);
  const auto pre_seqs = fib_sequences(rng, 400, 6, 12);
  const auto tgt_seqs = fib_sequences(rng, 400, 6, 12);
  auto prev = [](const std::vector<int>& s, std::size_t t) { return t == 0 ? 0 : s[t - 1]; };
  auto sum_label = [&](const synth::TypeSeqs& q) {
    return [&q, prev](std::size_t s, std::size_t t) {
      return "s" + std::to_string((prev(q[s], t) + q[s][t]) % kFibK);
    };
  };
  const auto pre_task = synth::make_token_dataset(pre_seqs, sum_label(pre_seqs), "sum-pretrain");
  const auto tgt_sum = synth::make_token_dataset(tgt_seqs, sum_label(tgt_seqs), "sum");
  const auto tgt_diff = synth::make_token_dataset(
      tgt_seqs,
      [&](std::size_t s, std::size_t t) {
        return "d" + std::to_string((tgt_seqs[s][t] - prev(tgt_seqs[s], t) + kFibK) % kFibK);
      },
      "diff");

  ctx::Sentences pre_corpus;
  for (const auto& r : pre_task.sentences) pre_corpus.push_back(r.tokens);
  ctx::Sentences shared;
  for (const auto& r : tgt_sum.sentences) shared.push_back(r.tokens);

  ctx::CtxConfig cc;
  cc.vocab = ctx::build_vocab({&shared, &pre_corpus});
  cc.embed_dim = 32;
  cc.hidden = 32;
  cc.seed = 9;

  train::TrainConfig pre_tc;
  pre_tc.max_epochs = 10;
  pre_tc.lr = 0.005f;
  pre_tc.seed = 9;
  std::vector<ctx::PretrainSpec> specs(3);
  specs[0].name = "untrained";
  specs[0].objective = ctx::Objective::none;
  specs[1].name = "bilm";
  specs[1].objective = ctx::Objective::bilm;
  specs[1].corpus = pre_corpus;
  specs[1].train = pre_tc;
  specs[2].name = "sum";
  specs[2].objective = ctx::Objective::supervised;
  specs[2].task = &pre_task;
  specs[2].train = pre_tc;

  train::TrainConfig probe_tc;
  probe_tc.seed = 9;
  const auto res = ctx::transfer_matrix(cc, specs, {&tgt_sum, &tgt_diff}, probes::Arch::linear, probe_tc, 4);

  std::map<std::string, double> avg;
  std::string detail;
  for (std::size_t r = 0; r < res.rows.size(); ++r) {
    const auto& row = res.values[r];
    avg[res.rows[r]] = std::accumulate(row.begin(), row.end(), 0.0) / double(row.size());
    detail += res.rows[r] + "=[";
    for (std::size_t c = 0; c < row.size(); ++c) detail += (c ? " " : "") + fmt(row[c]);
    detail += "] avg " + fmt(avg[res.rows[r]]) + "; ";
  }
  bool weakest = true;
  for (const auto& [name, a] : avg)
    if (name != "untrained") weakest &= avg["untrained"] < a;
  const double secs = seconds_since(t0);
  const bool pass = avg["sum"] >= avg["untrained"] + 5.0 && weakest && secs < 600;
  return {pass, detail + "untrained weakest: " + (weakest ? "yes" : "no") + " (" + fmt(secs, 1) + "s)"};
}

// ---------------------------------------------------------------------------
// 10. Determinism

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

void pipeline_once(const fs::path& out, int jobs) {
  const fs::path fx = PROBEKIT_FIXTURES_DIR;
  const json base = {{"seed", 11}, {"jobs", jobs}};
  auto with = [&](json extra) {
    json c = base;
    c.update(extra);
    return c;
  };
  pipeline::run("compile", with({{"format", "conllu"},
                                 {"input", (fx / "ud_sample.conllu").string()},
                                 {"task", "token"},
                                 {"name", "xpos"},
                                 {"out", (out / "data").string()}}));
  const auto task = (out / "data" / "xpos.jsonl").string();
  pipeline::run("pretrain", with({{"objective", "bilm"},
                                  {"corpus", (fx / "lm_sample.txt").string()},
                                  {"dump", task},
                                  {"ctx", {{"embed_dim", 16}, {"hidden", 16}}},
                                  {"train", {{"max_epochs", 2}}},
                                  {"out", (out / "ctx").string()}}));
  const auto store = (out / "ctx" / "store.cwrs").string();
  pipeline::run("sweep", with({{"store", store}, {"task", task}, {"out", (out / "sweep").string()}}));
  pipeline::run("bilm-probe", with({{"store", store}, {"corpus", task}, {"out", (out / "bilm").string()}}));
  pipeline::run("transfer", with({{"targets", {task}},
                                  {"specs", {{{"name", "bilm"}, {"objective", "bilm"},
                                              {"corpus", (fx / "lm_sample.txt").string()}}}},
                                  {"pretrain_train", {{"max_epochs", 2}}},
                                  {"ctx", {{"embed_dim", 16}, {"hidden", 16}}},
                                  {"out", (out / "transfer").string()}}));
  pipeline::run("report", with({{"inputs", {(out / "sweep").string()}}, {"out", (out / "report").string()}}));
}

Outcome determinism() {
  const auto t0 = Clock::now();
  const auto dir = scratch_dir("determinism");
  pipeline_once(dir / "a", 1);
  pipeline_once(dir / "b", 1);
  pipeline_once(dir / "c", 3);
  const auto a = tree_contents(dir / "a"), b = tree_contents(dir / "b"), c = tree_contents(dir / "c");
  std::size_t svgs = 0, jsons = 0;
  std::string diffs;
  for (const auto& [name, bytes] : a) {
    svgs += name.ends_with(".svg");
    jsons += name.ends_with(".json");
    if (!b.contains(name) || b.at(name) != bytes) diffs += " " + name + "(rerun)";
    if (!c.contains(name) || c.at(name) != bytes) diffs += " " + name + "(jobs=3)";
  }
  const bool pass = diffs.empty() && a.size() == b.size() && a.size() == c.size() && svgs >= 3 && jsons >= 4;
  fs::remove_all(dir);
  return {pass, std::to_string(a.size()) + " output files (" + std::to_string(jsons) + " json, " +
                    std::to_string(svgs) + " svg) " + (diffs.empty() ? "bit-identical across 3 runs" : "differ:" + diffs) +
                    " (" + fmt(seconds_since(t0), 1) + "s)"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient integrity", gradients},  {2, "store round-trip", store_roundtrip},
      {3, "compiler balance", compiler_balance}, {4, "metric oracles", metric_oracles},
      {5, "probe-capacity ladder", capacity_ladder}, {6, "scalar mix", scalar_mix},
      {7, "layer gap and heatmap row", layer_gap}, {8, "bilm probe", bilm_probe},
      {9, "transfer", transfer},                   {10, "determinism", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.contains(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
