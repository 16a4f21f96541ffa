#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clam/cluster.hpp"
#include "clam/errors.hpp"
#include "clam/ops.hpp"
#include "support/testutil.hpp"

using namespace clam;
using testutil::random_tensor;

namespace {

// Best-possible SSE by brute force over all assignments (centroid = mean).
double exhaustive_best_sse(const Tensor& z, int k) {
  const int64_t n = z.dim(0), j = z.dim(1);
  std::vector<int> assign(static_cast<size_t>(n), 0);
  double best = std::numeric_limits<double>::infinity();
  const int64_t total = static_cast<int64_t>(std::pow(k, static_cast<double>(n)));
  for (int64_t code = 0; code < total; ++code) {
    int64_t c = code;
    for (int64_t i = 0; i < n; ++i) {
      assign[static_cast<size_t>(i)] = static_cast<int>(c % k);
      c /= k;
    }
    std::vector<double> mean(static_cast<size_t>(k * j), 0.0);
    std::vector<int64_t> count(static_cast<size_t>(k), 0);
    for (int64_t i = 0; i < n; ++i) {
      count[static_cast<size_t>(assign[static_cast<size_t>(i)])] += 1;
      for (int64_t a = 0; a < j; ++a)
        mean[static_cast<size_t>(assign[static_cast<size_t>(i)] * j + a)] += z.at({i, a});
    }
    for (int c2 = 0; c2 < k; ++c2)
      if (count[static_cast<size_t>(c2)] > 0)
        for (int64_t a = 0; a < j; ++a)
          mean[static_cast<size_t>(c2 * j + a)] /= static_cast<double>(count[static_cast<size_t>(c2)]);
    double sse = 0.0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t a = 0; a < j; ++a) {
        const double d = z.at({i, a}) - mean[static_cast<size_t>(assign[static_cast<size_t>(i)] * j + a)];
        sse += d * d;
      }
    best = std::min(best, sse);
  }
  return best;
}

// Independent permutation oracle: enumerate label bijections recursively and
// count agreements point by point.
double matched_accuracy_oracle(const std::vector<int>& pred, const std::vector<int>& truth) {
  int k = 0;
  for (size_t i = 0; i < pred.size(); ++i) k = std::max({k, pred[i] + 1, truth[i] + 1});
  std::vector<int> perm(static_cast<size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end());
  int64_t best = 0;
  do {
    int64_t agree = 0;
    for (size_t i = 0; i < pred.size(); ++i)
      if (perm[static_cast<size_t>(pred[i])] == truth[i]) ++agree;
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

}  // namespace

TEST_CASE("kmeans separates two obvious pairs") {
  Tensor z = Tensor::from_data({4, 1}, {0.0, 0.0, 10.0, 10.0});
  KMeansResult km = kmeans(z, 2, 1);
  CHECK(km.labels[0] == km.labels[1]);
  CHECK(km.labels[2] == km.labels[3]);
  CHECK(km.labels[0] != km.labels[2]);
  std::vector<double> c{km.centroids[0], km.centroids[1]};
  std::sort(c.begin(), c.end());
  CHECK(c[0] == doctest::Approx(0.0));
  CHECK(c[1] == doctest::Approx(10.0));
}

TEST_CASE("kmeans with k=1 returns the mean") {
  Tensor z = Tensor::from_data({3, 2}, {0.0, 0.0, 3.0, 3.0, 6.0, 0.0});
  KMeansResult km = kmeans(z, 1, 5);
  CHECK(km.centroids.at({0, 0}) == doctest::Approx(3.0));
  CHECK(km.centroids.at({0, 1}) == doctest::Approx(1.0));
}

TEST_CASE("kmeans matches the exhaustive partition oracle on 12 points") {
  Rng rng(33);
  Tensor z({12, 2});
  const double centers[3][2] = {{0.0, 0.0}, {8.0, 0.0}, {0.0, 8.0}};
  for (int64_t i = 0; i < 12; ++i) {
    z.at({i, 0}) = centers[i % 3][0] + rng.uniform(-0.5, 0.5);
    z.at({i, 1}) = centers[i % 3][1] + rng.uniform(-0.5, 0.5);
  }
  KMeansResult km = kmeans(z, 3, 17);
  CHECK(km.sse == doctest::Approx(exhaustive_best_sse(z, 3)).epsilon(1e-9));
}

TEST_CASE("kmeans preconditions") {
  Tensor z = Tensor::from_data({2, 1}, {0.0, 1.0});
  CHECK_THROWS_AS(kmeans(z, 3, 0), DataError);
  CHECK_THROWS_AS(kmeans(z, 0, 0), DataError);
}

TEST_CASE("kmeans is deterministic given the seed") {
  Rng rng(44);
  Tensor z = random_tensor({40, 5}, rng);
  KMeansResult a = kmeans(z, 4, 9);
  KMeansResult b = kmeans(z, 4, 9);
  CHECK(a.labels == b.labels);
  CHECK(a.sse == b.sse);
}

TEST_CASE("soft_assign scalar case from the t-kernel") {
  Tensor z = Tensor::from_data({1, 1}, {0.0});
  ClusterHead head{Tensor::from_data({2, 1}, {0.0, 1.0})};
  SoftAssign q = soft_assign(z, head);
  CHECK(std::abs(q.q.at({0, 0}) - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(q.q.at({0, 1}) - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("soft_assign equidistant point is uniform") {
  Tensor z = Tensor::from_data({1, 2}, {0.0, 0.0});
  Tensor mu({4, 2});
  mu.at({0, 0}) = 1.0;
  mu.at({1, 0}) = -1.0;
  mu.at({2, 1}) = 1.0;
  mu.at({3, 1}) = -1.0;
  SoftAssign q = soft_assign(z, ClusterHead{mu});
  for (int64_t c = 0; c < 4; ++c) CHECK(q.q.at({0, c}) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("soft_assign at a centroid with a remote alternative is near 1") {
  Tensor z = Tensor::from_data({1, 1}, {0.0});
  ClusterHead head{Tensor::from_data({2, 1}, {0.0, 1000.0})};
  SoftAssign q = soft_assign(z, head);
  CHECK(q.q.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("soft_assign rows are stochastic and rotation invariant") {
  Rng rng(55);
  Tensor z = random_tensor({20, 3}, rng);
  Tensor mu = random_tensor({4, 3}, rng);
  SoftAssign q = soft_assign(z, ClusterHead{mu});
  CHECK(q.max_row_dev() < 1e-9);

  // Random rotation built by Gram-Schmidt; applied jointly to z and mu.
  Tensor basis = random_tensor({3, 3}, rng);
  for (int64_t r = 0; r < 3; ++r) {
    for (int64_t p = 0; p < r; ++p) {
      double dot = 0.0;
      for (int64_t c = 0; c < 3; ++c) dot += basis.at({r, c}) * basis.at({p, c});
      for (int64_t c = 0; c < 3; ++c) basis.at({r, c}) -= dot * basis.at({p, c});
    }
    double norm = 0.0;
    for (int64_t c = 0; c < 3; ++c) norm += basis.at({r, c}) * basis.at({r, c});
    norm = std::sqrt(norm);
    for (int64_t c = 0; c < 3; ++c) basis.at({r, c}) /= norm;
  }
  auto rotate = [&basis](const Tensor& in) {
    Tensor out(in.shape());
    for (int64_t i = 0; i < in.dim(0); ++i)
      for (int64_t r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int64_t c = 0; c < 3; ++c) acc += basis.at({r, c}) * in.at({i, c});
        out.at({i, r}) = acc;
      }
    return out;
  };
  SoftAssign q2 = soft_assign(rotate(z), ClusterHead{rotate(mu)});
  for (int64_t i = 0; i < q.q.numel(); ++i)
    CHECK(q2.q[i] == doctest::Approx(q.q[i]).epsilon(1e-9));
}

TEST_CASE("target_distribution worked examples") {
  SUBCASE("symmetric rows stay symmetric") {
    Tensor q = Tensor::from_data({2, 2}, {0.5, 0.5, 0.5, 0.5});
    TargetDist p = target_distribution(SoftAssign{q});
    for (int64_t i = 0; i < 4; ++i) CHECK(p.p[i] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("degenerate single image") {
    Tensor q = Tensor::from_data({1, 2}, {1.0, 0.0});
    TargetDist p = target_distribution(SoftAssign{q});
    CHECK(p.p[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.p[1] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("hand-computed 2x2 case") {
    Tensor q = Tensor::from_data({2, 2}, {0.9, 0.1, 0.6, 0.4});
    TargetDist p = target_distribution(SoftAssign{q});
    // f = (1.5, 0.5); rows: (.54,.02)/.56 and (.24,.32)/.56
    CHECK(std::abs(p.p.at({0, 0}) - 27.0 / 28.0) < 1e-12);
    CHECK(std::abs(p.p.at({0, 1}) - 1.0 / 28.0) < 1e-12);
    CHECK(std::abs(p.p.at({1, 0}) - 3.0 / 7.0) < 1e-12);
    CHECK(std::abs(p.p.at({1, 1}) - 4.0 / 7.0) < 1e-12);
  }
}

TEST_CASE("target_distribution is invariant under dataset duplication") {
  Rng rng(66);
  Tensor z = random_tensor({10, 4}, rng);
  Tensor mu = random_tensor({3, 4}, rng);
  SoftAssign q = soft_assign(z, ClusterHead{mu});
  TargetDist p1 = target_distribution(q);

  Tensor q2({20, 3});
  std::copy_n(q.q.data(), q.q.numel(), q2.data());
  std::copy_n(q.q.data(), q.q.numel(), q2.data() + q.q.numel());
  TargetDist p2 = target_distribution(SoftAssign{q2});
  for (int64_t i = 0; i < p1.p.numel(); ++i)
    CHECK(p2.p[i] == doctest::Approx(p1.p[i]).epsilon(1e-12));
  CHECK(p2.max_row_dev() < 1e-9);
}

TEST_CASE("kl divergence worked examples and non-negativity") {
  Tensor q = Tensor::from_data({1, 2}, {0.5, 0.5});
  CHECK(kl_divergence(TargetDist{q.clone()}, SoftAssign{q}) == doctest::Approx(0.0));

  Tensor p = Tensor::from_data({1, 2}, {1.0, 0.0});
  const double kl = kl_divergence(TargetDist{p}, SoftAssign{q});
  CHECK(std::abs(kl - std::log(2.0)) < 1e-12);

  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = random_tensor({6, 3}, rng);
    Tensor mu = random_tensor({3, 3}, rng);
    SoftAssign qq = soft_assign(z, ClusterHead{mu});
    TargetDist pp = target_distribution(qq);
    CHECK(kl_divergence(pp, qq) >= 0.0);
  }
}

TEST_CASE("hard_assign argmax with lowest-index ties") {
  Tensor q = Tensor::from_data({3, 3}, {0.2, 0.7, 0.1, 0.5, 0.5, 0.0, 0.1, 0.2, 0.7});
  auto labels = hard_assign(SoftAssign{q});
  CHECK(labels == std::vector<int>{1, 0, 2});
}

TEST_CASE("hard_assign is equivariant under column permutation") {
  Rng rng(88);
  Tensor z = random_tensor({15, 3}, rng);
  Tensor mu = random_tensor({3, 3}, rng);
  SoftAssign q = soft_assign(z, ClusterHead{mu});
  auto labels = hard_assign(q);

  // Swap columns 0 and 2.
  Tensor swapped(q.q.shape());
  for (int64_t i = 0; i < 15; ++i) {
    swapped.at({i, 0}) = q.q.at({i, 2});
    swapped.at({i, 1}) = q.q.at({i, 1});
    swapped.at({i, 2}) = q.q.at({i, 0});
  }
  auto labels2 = hard_assign(SoftAssign{swapped});
  const int map[3] = {2, 1, 0};
  for (size_t i = 0; i < labels.size(); ++i) CHECK(labels2[i] == map[labels[i]]);
}

TEST_CASE("matched_accuracy identity, permutation, and half-flip") {
  std::vector<int> truth{0, 0, 1, 1, 2, 2};
  CHECK(matched_accuracy(truth, truth) == 1.0);
  std::vector<int> permuted{2, 2, 0, 0, 1, 1};
  CHECK(matched_accuracy(permuted, truth) == 1.0);

  std::vector<int> binary_truth{0, 0, 1, 1};
  std::vector<int> half{0, 1, 0, 1};
  CHECK(matched_accuracy(half, binary_truth) == 0.5);

  CHECK_THROWS_AS(matched_accuracy({}, {}), DataError);
  CHECK_THROWS_AS(matched_accuracy({0, 1}, {0}), DataError);
}

TEST_CASE("matched_accuracy equals the recursive permutation oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 4 + static_cast<int>(rng.uniform_int(9));  // up to 12
    const int k = 2 + static_cast<int>(rng.uniform_int(4));  // up to 5
    std::vector<int> pred(static_cast<size_t>(n)), truth(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      pred[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k)));
      truth[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k)));
    }
    CHECK(matched_accuracy(pred, truth) == doctest::Approx(matched_accuracy_oracle(pred, truth)));
  }
}

TEST_CASE("joint_train with gamma 0 logs but does not optimize the cluster loss") {
  Rng rng(121);
  Tensor images = random_tensor({6, 1, 64, 64}, rng, 0.0, 1.0);
  CaeModel model = CaeModel::build(8, 4);
  Tensor z = encode_dataset(model, images);
  KMeansResult km = kmeans(z, 2, 7);
  ClusterHead head{km.centroids};
  const std::vector<double> centroids_before = head.centroids.vec();

  JointTrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 3;
  opts.gamma = 0.0;
  opts.seed = 5;
  LossTrace trace = joint_train(model, head, images, opts);
  REQUIRE(trace.rows.size() == 2);
  CHECK(trace.rows[0].l_c >= 0.0);          // logged
  CHECK(head.centroids.vec() == centroids_before);  // not optimized
  CHECK(trace.rows[0].l == trace.rows[0].l_r);
}

TEST_CASE("joint_train keeps Q and P row-stochastic every epoch") {
  Rng rng(122);
  Tensor images = random_tensor({8, 1, 64, 64}, rng, 0.0, 1.0);
  CaeModel model = CaeModel::build(8, 6);
  Tensor z = encode_dataset(model, images);
  KMeansResult km = kmeans(z, 2, 3);
  ClusterHead head{km.centroids};

  JointTrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 4;
  opts.seed = 2;
  LossTrace trace = joint_train(model, head, images, opts);
  for (const auto& row : trace.rows) {
    CHECK(row.max_q_row_dev < 1e-9);
    CHECK(row.max_p_row_dev < 1e-9);
    CHECK(row.l_c >= 0.0);
  }
  ClusterHead mismatched{Tensor({2, 5})};  // latent dim 5 != 8
  CHECK_THROWS_AS(joint_train(model, mismatched, images, opts), ShapeError);
}

TEST_CASE("lloyd_from keeps labels stable on tight blobs") {
  Rng rng(111);
  Tensor z({30, 2});
  for (int64_t i = 0; i < 30; ++i) {
    const int c = static_cast<int>(i % 3);
    z.at({i, 0}) = 10.0 * c + rng.uniform(-0.1, 0.1);
    z.at({i, 1}) = rng.uniform(-0.1, 0.1);
  }
  Tensor init = Tensor::from_data({3, 2}, {0.0, 0.0, 10.0, 0.0, 20.0, 0.0});
  KMeansResult km = lloyd_from(z, init);
  for (int64_t i = 0; i < 30; ++i) CHECK(km.labels[static_cast<size_t>(i)] == i % 3);
}
