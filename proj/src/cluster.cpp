#include "clam/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "clam/adam.hpp"
#include "clam/errors.hpp"
#include "clam/ops.hpp"
#include "clam/rng.hpp"

namespace clam {

namespace {

double max_row_sum_dev(const Tensor& t) {
  const int64_t n = t.dim(0), k = t.dim(1);
  double dev = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t c = 0; c < k; ++c) s += t.data()[i * k + c];
    dev = std::max(dev, std::abs(s - 1.0));
  }
  return dev;
}

double sq_dist(const double* a, const double* b, int64_t j) {
  double d = 0.0;
  for (int64_t i = 0; i < j; ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

// One assignment pass; returns SSE. Ties go to the lowest centroid index.
double assign_nearest(const Tensor& z, const Tensor& centroids, std::vector<int>& labels) {
  const int64_t n = z.dim(0), j = z.dim(1), k = centroids.dim(0);
  double sse = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* zi = z.data() + i * j;
    double best = std::numeric_limits<double>::infinity();
    int best_k = 0;
    for (int64_t c = 0; c < k; ++c) {
      const double d = sq_dist(zi, centroids.data() + c * j, j);
      if (d < best) {
        best = d;
        best_k = static_cast<int>(c);
      }
    }
    labels[static_cast<size_t>(i)] = best_k;
    sse += best;
  }
  return sse;
}

// Returns true when any centroid moved. Empty clusters keep their centroid.
bool update_centroids(const Tensor& z, const std::vector<int>& labels, Tensor& centroids) {
  const int64_t n = z.dim(0), j = z.dim(1), k = centroids.dim(0);
  Tensor sums({k, j});
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  for (int64_t i = 0; i < n; ++i) {
    const int c = labels[static_cast<size_t>(i)];
    counts[static_cast<size_t>(c)] += 1;
    const double* zi = z.data() + i * j;
    double* row = sums.data() + c * j;
    for (int64_t a = 0; a < j; ++a) row[a] += zi[a];
  }
  bool moved = false;
  for (int64_t c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
    double* row = centroids.data() + c * j;
    const double* srow = sums.data() + c * j;
    for (int64_t a = 0; a < j; ++a) {
      const double next = srow[a] * inv;
      if (next != row[a]) moved = true;
      row[a] = next;
    }
  }
  return moved;
}

Tensor kmeanspp_init(const Tensor& z, int64_t k, Rng& rng) {
  const int64_t n = z.dim(0), j = z.dim(1);
  Tensor centroids({k, j});
  std::vector<double> min_d(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  int64_t first = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));
  std::copy_n(z.data() + first * j, j, centroids.data());
  for (int64_t c = 1; c < k; ++c) {
    const double* prev = centroids.data() + (c - 1) * j;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      auto& m = min_d[static_cast<size_t>(i)];
      m = std::min(m, sq_dist(z.data() + i * j, prev, j));
      total += m;
    }
    int64_t pick;
    if (total <= 0.0) {
      pick = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int64_t i = 0; i < n; ++i) {
        acc += min_d[static_cast<size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    std::copy_n(z.data() + pick * j, j, centroids.data() + c * j);
  }
  return centroids;
}

}  // namespace

double SoftAssign::max_row_dev() const { return max_row_sum_dev(q); }
double TargetDist::max_row_dev() const { return max_row_sum_dev(p); }

KMeansResult kmeans(const Tensor& z, int64_t k, uint64_t seed, int restarts, int max_iters) {
  if (z.ndim() != 2) throw ShapeError("kmeans: expected [N,J], got " + shape_str(z.shape()));
  const int64_t n = z.dim(0);
  if (k < 1) throw DataError("kmeans: k must be >= 1, got " + std::to_string(k));
  if (k > n)
    throw DataError("kmeans: k = " + std::to_string(k) + " exceeds points n = " +
                    std::to_string(n));
  Rng base(seed);
  KMeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Rng rng = base.fork(static_cast<uint64_t>(r));
    KMeansResult cur;
    cur.centroids = kmeanspp_init(z, k, rng);
    cur.labels.assign(static_cast<size_t>(n), 0);
    cur.sse = assign_nearest(z, cur.centroids, cur.labels);
    for (int it = 0; it < max_iters; ++it) {
      if (!update_centroids(z, cur.labels, cur.centroids)) break;
      const double sse = assign_nearest(z, cur.centroids, cur.labels);
      if (sse == cur.sse) {
        cur.sse = sse;
        break;
      }
      cur.sse = sse;
    }
    if (cur.sse < best.sse) best = std::move(cur);
  }
  return best;
}

KMeansResult lloyd_from(const Tensor& z, const Tensor& init_centroids, int max_iters) {
  KMeansResult cur;
  cur.centroids = init_centroids.clone();
  cur.labels.assign(static_cast<size_t>(z.dim(0)), 0);
  cur.sse = assign_nearest(z, cur.centroids, cur.labels);
  for (int it = 0; it < max_iters; ++it) {
    if (!update_centroids(z, cur.labels, cur.centroids)) break;
    const double sse = assign_nearest(z, cur.centroids, cur.labels);
    if (sse == cur.sse) break;
    cur.sse = sse;
  }
  return cur;
}

SoftAssign soft_assign(const Tensor& z, const ClusterHead& head) {
  NoGradGuard ng;
  return SoftAssign{soft_assign_op(z, head.centroids)};
}

TargetDist target_distribution(const SoftAssign& qa) {
  const Tensor& q = qa.q;
  const int64_t n = q.dim(0), k = q.dim(1);
  std::vector<double> freq(static_cast<size_t>(k), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < k; ++c) freq[static_cast<size_t>(c)] += q.data()[i * k + c];
  Tensor p({n, k});
  for (int64_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (int64_t c = 0; c < k; ++c) {
      const double qi = q.data()[i * k + c];
      const double f = freq[static_cast<size_t>(c)];
      // A zero-frequency cluster has q == 0 everywhere in its column; its
      // weight is 0 rather than 0/0.
      const double w = f > 0.0 ? qi * qi / f : 0.0;
      p.data()[i * k + c] = w;
      row_sum += w;
    }
    for (int64_t c = 0; c < k; ++c) p.data()[i * k + c] /= row_sum;
  }
  return TargetDist{p};
}

double kl_divergence(const TargetDist& p, const SoftAssign& q) {
  NoGradGuard ng;
  return kl_loss_op(p.p, q.q).item();
}

std::vector<int> hard_assign(const SoftAssign& qa) {
  const Tensor& q = qa.q;
  const int64_t n = q.dim(0), k = q.dim(1);
  std::vector<int> labels(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    const double* row = q.data() + i * k;
    int best = 0;
    for (int64_t c = 1; c < k; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);  // ties keep lowest index
    labels[static_cast<size_t>(i)] = best;
  }
  return labels;
}

double matched_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw DataError("matched_accuracy: need equal nonempty label vectors, got " +
                    std::to_string(pred.size()) + " and " + std::to_string(truth.size()));
  int k = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || truth[i] < 0) throw DataError("matched_accuracy: negative label");
    k = std::max({k, pred[i] + 1, truth[i] + 1});
  }
  if (k > 8)
    throw DataError("matched_accuracy: exhaustive search limited to k <= 8, got " +
                    std::to_string(k));
  std::vector<int64_t> confusion(static_cast<size_t>(k * k), 0);
  for (size_t i = 0; i < pred.size(); ++i)
    confusion[static_cast<size_t>(pred[i] * k + truth[i])] += 1;
  std::vector<int> perm(static_cast<size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  int64_t best = 0;
  do {
    int64_t agree = 0;
    for (int a = 0; a < k; ++a) agree += confusion[static_cast<size_t>(a * k + perm[static_cast<size_t>(a)])];
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

Tensor encode_dataset(const CaeModel& model, const Tensor& images_unit, int64_t chunk) {
  NoGradGuard ng;
  const int64_t n = images_unit.dim(0);
  const int64_t pixels = images_unit.numel() / n;
  Tensor z({n, model.latent_dim});
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t b = std::min<int64_t>(chunk, n - start);
    Tensor x({b, 1, model.input_hw, model.input_hw});
    std::copy_n(images_unit.data() + start * pixels, b * pixels, x.data());
    Tensor zb = model.encode(x);
    std::copy_n(zb.data(), b * model.latent_dim, z.data() + start * model.latent_dim);
  }
  return z;
}

SoftAssign assign_dataset(const CaeModel& model, const ClusterHead& head,
                          const Tensor& images_unit, int64_t chunk) {
  Tensor z = encode_dataset(model, images_unit, chunk);
  return soft_assign(z, head);
}

LossTrace joint_train(CaeModel& model, ClusterHead& head, const Tensor& images_unit,
                      const JointTrainOptions& opts) {
  if (images_unit.ndim() != 4 || images_unit.dim(0) < 1)
    throw DataError("joint_train: empty or malformed dataset");
  if (head.latent_dim() != model.latent_dim)
    throw ShapeError("joint_train: head latent dim " + std::to_string(head.latent_dim()) +
                     " != model latent dim " + std::to_string(model.latent_dim));
  if (head.k() < 2) throw DataError("joint_train: need K >= 2");

  const int64_t n = images_unit.dim(0);
  const int64_t pixels = images_unit.numel() / n;
  const int64_t batch = std::min<int64_t>(opts.batch_size, n);
  const int64_t k = head.k();

  head.centroids.set_requires_grad(true);
  std::vector<Tensor> params = model.parameters();
  params.push_back(head.centroids);
  Adam adam(params, opts.learning_rate);
  Rng rng(opts.seed);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  LossTrace trace;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    // Frozen per-epoch target from the full-dataset assignment.
    SoftAssign qa = assign_dataset(model, head, images_unit);
    TargetDist pa = target_distribution(qa);

    rng.shuffle(order);
    double epoch_lr = 0.0, epoch_lc = 0.0;
    int64_t seen = 0;
    for (int64_t start = 0; start < n; start += batch) {
      const int64_t b = std::min<int64_t>(batch, n - start);
      Tensor x({b, 1, model.input_hw, model.input_hw});
      Tensor p_batch({b, k});
      for (int64_t i = 0; i < b; ++i) {
        const int64_t src = order[static_cast<size_t>(start + i)];
        std::copy_n(images_unit.data() + src * pixels, pixels, x.data() + i * pixels);
        std::copy_n(pa.p.data() + src * k, k, p_batch.data() + i * k);
      }
      Tensor z = model.encode(x);
      Tensor rec = model.decode(z);
      Tensor l_r = scale(mse_loss(x, rec), 1.0 / static_cast<double>(b));

      double lc_val;
      Tensor loss;
      if (opts.gamma > 0.0) {
        Tensor q_batch = soft_assign_op(z, head.centroids);
        Tensor l_c = scale(kl_loss_op(p_batch, q_batch), 1.0 / static_cast<double>(b));
        lc_val = l_c.item();
        loss = add(l_r, scale(l_c, opts.gamma));
      } else {
        // Cluster loss logged but not optimized.
        {
          NoGradGuard ng;
          Tensor q_batch = soft_assign_op(z, head.centroids);
          lc_val = kl_loss_op(p_batch, q_batch).item() / static_cast<double>(b);
        }
        loss = l_r;
      }
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val) || !std::isfinite(lc_val))
        throw NumericError("joint_train: non-finite loss at epoch " + std::to_string(epoch));
      adam.zero_grad();
      loss.backward();
      adam.step();
      epoch_lr += l_r.item() * static_cast<double>(b);
      epoch_lc += lc_val * static_cast<double>(b);
      seen += b;
    }

    LossTraceRow row;
    row.epoch = epoch;
    row.l_r = epoch_lr / static_cast<double>(seen);
    row.l_r_per_pixel = row.l_r / static_cast<double>(pixels);
    row.l_c = epoch_lc / static_cast<double>(seen);
    row.l = row.l_r + opts.gamma * row.l_c;
    row.gamma = opts.gamma;
    row.max_q_row_dev = qa.max_row_dev();
    row.max_p_row_dev = pa.max_row_dev();
    trace.append(row);
  }
  return trace;
}

}  // namespace clam
