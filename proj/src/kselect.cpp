#include "clam/kselect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clam/cluster.hpp"
#include "clam/errors.hpp"

namespace clam {

double silhouette_score(const Tensor& z, const std::vector<int>& labels) {
  if (z.ndim() != 2) throw ShapeError("silhouette: expected [N,J]");
  const int64_t n = z.dim(0), j = z.dim(1);
  if (static_cast<size_t>(n) != labels.size())
    throw DataError("silhouette: " + std::to_string(n) + " points vs " +
                    std::to_string(labels.size()) + " labels");
  if (n < 3) throw DataError("silhouette: need at least 3 points");

  int k = 0;
  for (int l : labels) {
    if (l < 0) throw DataError("silhouette: negative label");
    k = std::max(k, l + 1);
  }
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  for (int l : labels) counts[static_cast<size_t>(l)] += 1;
  int nonempty = 0;
  for (int64_t c : counts) nonempty += c > 0 ? 1 : 0;
  if (nonempty < 2) throw DataError("silhouette: need at least 2 distinct clusters");
  if (n < k) throw DataError("silhouette: fewer points than clusters");

  // Per point: mean distance to every cluster, then a/b from it.
  double total = 0.0;
  std::vector<double> dist_sums(static_cast<size_t>(k));
  for (int64_t i = 0; i < n; ++i) {
    std::fill(dist_sums.begin(), dist_sums.end(), 0.0);
    const double* zi = z.data() + i * j;
    for (int64_t o = 0; o < n; ++o) {
      if (o == i) continue;
      const double* zo = z.data() + o * j;
      double d = 0.0;
      for (int64_t a = 0; a < j; ++a) {
        const double diff = zi[a] - zo[a];
        d += diff * diff;
      }
      dist_sums[static_cast<size_t>(labels[static_cast<size_t>(o)])] += std::sqrt(d);
    }
    const int own = labels[static_cast<size_t>(i)];
    const int64_t own_count = counts[static_cast<size_t>(own)];
    if (own_count <= 1) continue;  // singleton contributes 0
    const double a = dist_sums[static_cast<size_t>(own)] / static_cast<double>(own_count - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || counts[static_cast<size_t>(c)] == 0) continue;
      b = std::min(b, dist_sums[static_cast<size_t>(c)] /
                          static_cast<double>(counts[static_cast<size_t>(c)]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

KEstimate estimate_k(const Tensor& z, int k_min, int k_max, uint64_t seed) {
  if (k_min < 2 || k_max < k_min)
    throw DataError("estimate_k: invalid range [" + std::to_string(k_min) + "," +
                    std::to_string(k_max) + "]");
  if (z.dim(0) <= k_max)
    throw DataError("estimate_k: need more than " + std::to_string(k_max) + " points");
  KEstimate est;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = k_min; k <= k_max; ++k) {
    KMeansResult km = kmeans(z, k, seed + static_cast<uint64_t>(k));
    const double s = silhouette_score(z, km.labels);
    est.candidates.push_back(k);
    est.scores.push_back(s);
    if (s > best) {  // strict: ties keep the smaller K
      best = s;
      est.chosen_k = k;
    }
  }
  return est;
}

}  // namespace clam
