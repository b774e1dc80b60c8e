#include "tsmini/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "tsmini/binary_io.hpp"

namespace tsmini {

Ranking rank_by_similarity(std::span<const double> sims, std::size_t self) {
  Ranking r;
  r.reserve(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i)
    if (i != self) r.push_back(i);
  std::stable_sort(r.begin(), r.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
  return r;
}

double hr_at_k(const Ranking& gt, const Ranking& pred, std::size_t k) {
  if (k == 0) throw std::invalid_argument("hr_at_k: k must be positive");
  if (gt.size() < k || pred.size() < k) {
    throw std::invalid_argument("hr_at_k: k = " + std::to_string(k) + " exceeds the number of candidates");
  }
  const std::unordered_set<std::size_t> top(gt.begin(), gt.begin() + static_cast<std::ptrdiff_t>(k));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += top.count(pred[i]);
  return static_cast<double>(hits) / static_cast<double>(k);
}

double r10_at_50(const Ranking& gt, const Ranking& pred) {
  if (gt.size() < 50 || pred.size() < 50) throw std::invalid_argument("r10_at_50 needs at least 50 candidates");
  const std::unordered_set<std::size_t> top(gt.begin(), gt.begin() + 10);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < 50; ++i) hits += top.count(pred[i]);
  return static_cast<double>(hits) / 10.0;
}

namespace {

double embedding_similarity(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
    acc += d * d;
  }
  return 1.0 - std::sqrt(acc);
}

std::vector<double> similarities_to(std::span<const float> q, const Embeddings& corpus) {
  std::vector<double> s(corpus.count);
  for (std::size_t j = 0; j < corpus.count; ++j) s[j] = embedding_similarity(q, corpus.row(j));
  return s;
}

std::vector<double> gt_row(const GroundTruthMatrix& gt, std::size_t i) {
  return {gt.values.begin() + static_cast<std::ptrdiff_t>(i * gt.n),
          gt.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * gt.n)};
}

template <typename PredictRow>
MetricsReport evaluate_rows(const GroundTruthMatrix& gt, PredictRow&& predict_row) {
  MetricsReport rep;
  const std::size_t n = gt.n;
  rep.queries = n;
  const std::size_t candidates = n == 0 ? 0 : n - 1;
  const bool has10 = candidates >= 10, has50 = candidates >= 50;
  if (!has10) rep.notes.push_back("HR@10 absent: " + std::to_string(candidates) + " candidates per query (need 10)");
  if (!has50) {
    rep.notes.push_back("HR@50 and R10@50 absent: " + std::to_string(candidates) +
                        " candidates per query (need 50)");
  }
  double s10 = 0.0, s50 = 0.0, sr = 0.0;
  for (std::size_t i = 0; i < n && has10; ++i) {
    const Ranking g = rank_by_similarity(gt_row(gt, i), i);
    const Ranking p = rank_by_similarity(predict_row(i), i);
    s10 += hr_at_k(g, p, 10);
    if (has50) {
      s50 += hr_at_k(g, p, 50);
      sr += r10_at_50(g, p);
    }
  }
  const double q = static_cast<double>(n);
  if (has10) rep.hr10 = s10 / q;
  if (has50) {
    rep.hr50 = s50 / q;
    rep.r10_50 = sr / q;
  }
  return rep;
}

}  // namespace

Ranking knn_query(std::span<const float> query, const Embeddings& corpus, std::size_t k) {
  if (corpus.count == 0) throw std::invalid_argument("knn_query: empty corpus");
  if (query.size() != corpus.d) throw std::invalid_argument("knn_query: query dimension does not match corpus");
  if (k > corpus.count) throw std::invalid_argument("knn_query: k exceeds corpus size");
  Ranking r = rank_by_similarity(similarities_to(query, corpus));
  r.resize(k);
  return r;
}

MetricsReport evaluate_embeddings(const Embeddings& queries, const Embeddings& corpus, const GroundTruthMatrix& gt) {
  if (queries.count != gt.n || corpus.count != gt.n) {
    throw std::invalid_argument("evaluate: embedding counts do not match the ground-truth matrix");
  }
  if (queries.d != corpus.d) throw std::invalid_argument("evaluate: query and corpus dimensions differ");
  return evaluate_rows(gt, [&](std::size_t i) { return similarities_to(queries.row(i), corpus); });
}

MetricsReport evaluate_oracle(const GroundTruthMatrix& gt) {
  return evaluate_rows(gt, [&](std::size_t i) { return gt_row(gt, i); });
}

double mean_hr_at_k(const Embeddings& emb, const GroundTruthMatrix& gt, std::size_t k) {
  if (emb.count != gt.n) throw std::invalid_argument("mean_hr_at_k: embedding count does not match ground truth");
  if (gt.n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.n; ++i) {
    sum += hr_at_k(rank_by_similarity(gt_row(gt, i), i), rank_by_similarity(similarities_to(emb.row(i), emb), i), k);
  }
  return sum / static_cast<double>(gt.n);
}

std::vector<Trajectory> degrade_queries(std::span<const Trajectory> trajs, const RobustnessOptions& opts) {
  std::vector<Trajectory> out(trajs.begin(), trajs.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint64_t s = opts.seed * 0x9E3779B97F4A7C15ull + i;
    if (opts.mask_ratio > 0.0) out[i] = mask_points(out[i], opts.mask_ratio, s);
    if (opts.shift_meters > 0.0) out[i] = shift_points(out[i], opts.shift_meters, s ^ 0x5A5A5A5Aull);
  }
  return out;
}

template <typename T>
MetricsReport evaluate(TSMini<T>& model, std::span<const Trajectory> test, const NormStats& stats,
                       const GroundTruthMatrix& gt, const RobustnessOptions& robustness) {
  if (test.size() != gt.n) throw std::invalid_argument("evaluate: test set and ground truth sizes differ");
  const Embeddings corpus = embed_trajectories(model, test, stats);
  if (!robustness.active()) return evaluate_embeddings(corpus, corpus, gt);
  const std::vector<Trajectory> degraded = degrade_queries(test, robustness);
  const Embeddings queries = embed_trajectories(model, std::span<const Trajectory>(degraded), stats);
  return evaluate_embeddings(queries, corpus, gt);
}

template MetricsReport evaluate<float>(TSMini<float>&, std::span<const Trajectory>, const NormStats&,
                                       const GroundTruthMatrix&, const RobustnessOptions&);
template MetricsReport evaluate<double>(TSMini<double>&, std::span<const Trajectory>, const NormStats&,
                                        const GroundTruthMatrix&, const RobustnessOptions&);

void write_embeddings(std::ostream& os, const Embeddings& e) {
  if (e.values.size() != e.count * e.d) throw std::invalid_argument("embedding table size mismatch");
  bin::write_magic(os, "TEMB");
  bin::write_u32(os, kTembVersion);
  bin::write_u32(os, static_cast<std::uint32_t>(e.count));
  bin::write_u32(os, static_cast<std::uint32_t>(e.d));
  bin::write_f32_array(os, e.values.data(), e.values.size());
}

Embeddings read_embeddings(std::istream& is) {
  bin::expect_magic(is, "TEMB");
  bin::expect_version(is, kTembVersion, "TEMB");
  Embeddings e;
  e.count = bin::read_u32(is, "embedding count");
  e.d = bin::read_u32(is, "embedding dimension");
  bin::read_f32_array(is, e.values, e.count * e.d, "embedding values");
  return e;
}

void save_embeddings(const std::filesystem::path& path, const Embeddings& e) {
  bin::write_file_atomically(path, [&](std::ostream& os) { write_embeddings(os, e); });
}

Embeddings load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open embedding file '" + path.string() + "'");
  return read_embeddings(is);
}

void write_metrics(std::ostream& os, const MetricsReport& report) {
  char buf[64];
  auto line = [&](const char* name, const std::optional<double>& v) {
    if (!v) return;
    std::snprintf(buf, sizeof buf, "%s\t%.6f\n", name, *v);
    os << buf;
  };
  line("HR@10", report.hr10);
  line("HR@50", report.hr50);
  line("R10@50", report.r10_50);
  for (const auto& n : report.notes) os << "# " << n << '\n';
}

}  // namespace tsmini
