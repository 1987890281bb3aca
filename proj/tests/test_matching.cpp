#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "georeg/errors.hpp"
#include "georeg/matching.hpp"
#include "helpers.hpp"

using namespace georeg;
using testutil::rand_mat;

namespace {

SuperpointGraph make_graph(const PointCloud& dense, const PointCloud& supers,
                           std::vector<std::vector<int>> patches,
                           const Mat& dense_features) {
  SuperpointGraph g;
  g.dense_points = dense;
  g.superpoints = supers;
  g.patches = std::move(patches);
  g.patch_of.assign(static_cast<std::size_t>(dense.rows()), -1);
  for (int s = 0; s < static_cast<int>(g.patches.size()); ++s)
    for (int r : g.patches[static_cast<std::size_t>(s)])
      g.patch_of[static_cast<std::size_t>(r)] = s;
  g.dense_features = dense_features;
  g.superpoint_features = Mat::Ones(supers.rows(), 1);
  return g;
}

std::set<std::pair<int, int>> pair_set(const CorrespondenceSet& c) {
  return {c.pairs.begin(), c.pairs.end()};
}

}  // namespace

TEST_CASE("gaussian correlation: aligned rows score one, scale is ignored") {
  Mat hp(2, 3), hq(2, 3);
  hp << 2, 0, 0, 0, 1, 0;
  hq << 5, 0, 0, 0, 0, 7;
  const Mat s = gaussian_correlation(hp, hq);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  // Orthogonal unit vectors are sqrt(2) apart: exp(-2).
  CHECK(s(1, 0) == doctest::Approx(std::exp(-2.0)));
  CHECK(s(1, 1) == doctest::Approx(std::exp(-2.0)));
  // Values live in (0, 1].
  CHECK(s.minCoeff() > 0.0);
  CHECK(s.maxCoeff() <= 1.0 + 1e-15);
}

TEST_CASE("gaussian correlation rejects zero rows, naming the row") {
  Mat hp(3, 2), hq(1, 2);
  hp << 1, 0, 0, 0, 0, 1;
  hq << 1, 1;
  try {
    gaussian_correlation(hp, hq);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 1") != std::string::npos);
    CHECK(msg.find('P') != std::string::npos);
  }
  Mat hq_bad(2, 2);
  hq_bad << 1, 1, 0, 0;
  Mat hp_ok(1, 2);
  hp_ok << 1, 0;
  CHECK_THROWS_AS(gaussian_correlation(hp_ok, hq_bad), DataError);
  Mat wide(1, 3);
  wide << 1, 0, 0;
  CHECK_THROWS_AS(gaussian_correlation(hp_ok, wide), DimensionError);
}

TEST_CASE("dual normalization hand value") {
  Mat s(2, 2);
  s << 0.9, 0.1, 0.2, 0.8;
  const Mat d = dual_normalize(s);
  // 0.9^2 / (row sum 1.0 * column sum 1.1)
  CHECK(d(0, 0) == doctest::Approx(0.81 / 1.1).epsilon(1e-12));
  CHECK(d(0, 1) == doctest::Approx(0.01 / (1.0 * 0.9)).epsilon(1e-12));
  CHECK(d(1, 0) == doctest::Approx(0.04 / (1.0 * 1.1)).epsilon(1e-12));
  CHECK(d(1, 1) == doctest::Approx(0.64 / (1.0 * 0.9)).epsilon(1e-12));
}

TEST_CASE("dual normalization preserves a planted standout entry") {
  std::mt19937_64 rng(70);
  std::uniform_real_distribution<double> bg(0.1, 0.2);
  Mat s(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) s(i, j) = bg(rng);
  s(2, 4) = 1.0;
  const Mat d = dual_normalize(s);
  Eigen::Index bi, bj;
  d.maxCoeff(&bi, &bj);
  CHECK(bi == 2);
  CHECK(bj == 4);
  CHECK(d.minCoeff() > 0.0);
}

TEST_CASE("superpoint matching in top-k mode") {
  std::mt19937_64 rng(71);
  const Mat hp = rand_mat(rng, 3, 5, 0.2, 1.0);
  const Mat hq = rand_mat(rng, 2, 5, 0.2, 1.0);

  // Requesting more pairs than the grid has saturates at n*m.
  const CorrespondenceSet all =
      superpoint_match(hp, hq, 50, SuperMatchMode::kTopK);
  CHECK(all.size() == 6);
  CHECK(all.level == CorrLevel::kSuperpoint);
  CHECK(all.group_of.empty());

  const CorrespondenceSet four =
      superpoint_match(hp, hq, 4, SuperMatchMode::kTopK);
  REQUIRE(four.size() == 4);
  // Scores come out ranked and match the dual-normalized correlation.
  const Mat sbar = dual_normalize(gaussian_correlation(hp, hq));
  for (int i = 0; i < 4; ++i) {
    CHECK(four.scores[static_cast<std::size_t>(i)] ==
          doctest::Approx(sbar(four.pairs[static_cast<std::size_t>(i)].first,
                               four.pairs[static_cast<std::size_t>(i)].second)));
    if (i > 0)
      CHECK(four.scores[static_cast<std::size_t>(i)] <=
            four.scores[static_cast<std::size_t>(i - 1)] + 1e-15);
  }
  // The four kept values are the four largest entries of sbar.
  std::vector<double> vals(sbar.data(), sbar.data() + sbar.size());
  std::sort(vals.begin(), vals.end(), std::greater<>());
  for (int i = 0; i < 4; ++i)
    CHECK(four.scores[static_cast<std::size_t>(i)] ==
          doctest::Approx(vals[static_cast<std::size_t>(i)]));

  CHECK_THROWS_AS(superpoint_match(hp, hq, 0, SuperMatchMode::kTopK),
                  ParameterError);
}

TEST_CASE("superpoint matching in threshold mode") {
  std::mt19937_64 rng(72);
  // All rows aligned: every normalized distance is 0 < 0.75, so every pair
  // qualifies and nothing is clipped to the augmentation count.
  Mat close_p(20, 3), close_q(20, 3);
  for (int i = 0; i < 20; ++i) {
    close_p.row(i) << 1.0 + 0.01 * i, 0.0, 0.0;
    close_q.row(i) << 2.0 + 0.01 * i, 0.0, 0.0;
  }
  const CorrespondenceSet wide =
      superpoint_match(close_p, close_q, 999, SuperMatchMode::kThreshold);
  CHECK(wide.size() == 400);

  // Opposite poles: distance 2 everywhere, nothing qualifies, and the set is
  // padded with the 128 closest pairs.
  Mat far_q(20, 3);
  for (int i = 0; i < 20; ++i) far_q.row(i) << -1.0 - 0.01 * i, 1e-3, 0.0;
  const CorrespondenceSet padded =
      superpoint_match(close_p, far_q, 999, SuperMatchMode::kThreshold);
  CHECK(padded.size() == 128);
}

TEST_CASE("sinkhorn drives a single strong pair toward unit mass") {
  Mat score(1, 1);
  score << 0.3;

  // Moderate dustbin penalty: the 2x2 fixed point is available in closed
  // form.  With aug = [[s, a], [a, a]] the balanced solution z = [[p, 1-p],
  // [1-p, p]] satisfies p^2 / (1-p)^2 = exp(s - a).
  {
    const double r = std::exp((0.3 + 5.0) / 2.0);
    const double p = r / (1.0 + r);
    const AssignmentMatrix out = sinkhorn(score, -5.0, 200);
    REQUIRE(out.augmented.rows() == 2);
    REQUIRE(out.augmented.cols() == 2);
    CHECK(out.truncated(0, 0) == doctest::Approx(p).epsilon(1e-9));
    CHECK(out.augmented(1, 1) == doctest::Approx(p).epsilon(1e-6));
    CHECK(out.augmented(0, 1) == doctest::Approx(1.0 - p).epsilon(1e-6));
    CHECK(out.augmented(1, 0) == doctest::Approx(1.0 - p).epsilon(1e-6));
  }

  // Harsh penalty: the optimum sits on the polytope boundary, so plain
  // iteration approaches unit mass only sublinearly -- assert the trend,
  // not convergence.
  {
    const AssignmentMatrix few = sinkhorn(score, -40.0, 100);
    const AssignmentMatrix many = sinkhorn(score, -40.0, 1000);
    CHECK(few.truncated(0, 0) > 0.99);
    CHECK(many.truncated(0, 0) > few.truncated(0, 0));
    CHECK(few.augmented(0, 1) < 1e-12);  // column marginals hold exactly
    CHECK(few.augmented(1, 0) < 0.01);
  }
}

TEST_CASE("sinkhorn on a uniform grid is symmetric and respects marginals") {
  const Mat score = Mat::Constant(2, 2, 0.4);
  const AssignmentMatrix out = sinkhorn(score, 0.4, 100);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(out.truncated(i, j) == doctest::Approx(out.truncated(0, 0))
                                       .epsilon(1e-12));
  // The final update scales columns, so column marginals hold exactly;
  // row marginals converge.
  Eigen::RowVectorXd col = out.augmented.colwise().sum();
  CHECK(col(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(col(1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(col(2) == doctest::Approx(2.0).epsilon(1e-12));
  Eigen::VectorXd row = out.augmented.rowwise().sum();
  CHECK(row(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(row(2) == doctest::Approx(2.0).epsilon(1e-6));

  CHECK_THROWS_AS(sinkhorn(score, 0.0, 0), ParameterError);
  Mat bad(1, 1);
  bad << std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sinkhorn(bad, 0.0, 5), DataError);
}

TEST_CASE("sinkhorn agrees with a probability-domain reimplementation") {
  std::mt19937_64 rng(73);
  const int n = 3, m = 4, iters = 5;
  const Mat score = rand_mat(rng, n, m);
  const double alpha = 0.7;
  const AssignmentMatrix out = sinkhorn(score, alpha, iters);

  // Direct scaling iteration on K = exp(augmented scores), with the same
  // update order: rows first, then columns, starting from unit column
  // scalings.
  Mat aug(n + 1, m + 1);
  aug.topLeftCorner(n, m) = score;
  aug.row(n).setConstant(alpha);
  aug.col(m).setConstant(alpha);
  const Mat k = aug.array().exp();
  Eigen::VectorXd mu = Eigen::VectorXd::Ones(n + 1);
  mu(n) = m;
  Eigen::RowVectorXd nu = Eigen::RowVectorXd::Ones(m + 1);
  nu(m) = n;
  Eigen::VectorXd a = Eigen::VectorXd::Ones(n + 1);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Ones(m + 1);
  for (int t = 0; t < iters; ++t) {
    a = mu.array() / (k * b.transpose()).array();
    b = nu.array() / (a.transpose() * k).array();
  }
  const Mat z = a.asDiagonal() * k * b.asDiagonal();
  CHECK((z - out.augmented).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("sinkhorn marginals on a larger random problem") {
  std::mt19937_64 rng(74);
  const Mat score = rand_mat(rng, 10, 10, -1.0, 1.0);
  const AssignmentMatrix out = sinkhorn(score, 0.5, 100);
  const Eigen::VectorXd row = out.augmented.rowwise().sum();
  const Eigen::RowVectorXd col = out.augmented.colwise().sum();
  for (int i = 0; i < 10; ++i) {
    CHECK(row(i) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(col(i) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(row(10) == doctest::Approx(10.0).epsilon(1e-5));
  CHECK(col(10) == doctest::Approx(10.0).epsilon(1e-5));
  CHECK(out.augmented.minCoeff() > 0.0);
}

TEST_CASE("taped sinkhorn matches the plain implementation") {
  std::mt19937_64 rng(75);
  const Mat score = rand_mat(rng, 4, 3);
  Mat alpha(1, 1);
  alpha << 0.9;
  const AssignmentMatrix plain = sinkhorn(score, 0.9, 7);
  const Var logged = sinkhorn_log(constant(score), constant(alpha), 7);
  CHECK((logged.v.array().exp().matrix() - plain.augmented)
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("point matching on single-point patches") {
  PointCloud dp(1, 3), dq(1, 3), sp(1, 3), sq(1, 3);
  dp << 0, 0, 0;
  dq << 0, 0, 0;
  sp << 0, 0, 0;
  sq << 0, 0, 0;
  Mat fp(1, 4), fq(1, 4);
  fp << 2, 2, 2, 2;
  fq << 2, 2, 2, 2;
  const SuperpointGraph gp = make_graph(dp, sp, {{0}}, fp);
  const SuperpointGraph gq = make_graph(dq, sq, {{0}}, fq);
  CorrespondenceSet super;
  super.level = CorrLevel::kSuperpoint;
  super.pairs = {{0, 0}};
  super.scores = {1.0};

  const CorrespondenceSet pts = point_match(gp, gq, super, 3, 50, 1.0);
  REQUIRE(pts.size() == 1);
  CHECK(pts.level == CorrLevel::kPoint);
  CHECK(pts.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(pts.group_of[0] == 0);
  CHECK(pts.scores[0] > 0.0);
  CHECK(pts.scores[0] < 1.0 + 1e-12);

  CorrespondenceSet wrong_level = pts;
  CHECK_THROWS_AS(point_match(gp, gq, wrong_level, 3, 50, 1.0),
                  ParameterError);
  CHECK_THROWS_AS(point_match(gp, gq, super, 0, 50, 1.0), ParameterError);
}

TEST_CASE("point matching agrees with an explicit mutual top-k scan") {
  std::mt19937_64 rng(76);
  const int n = 4, m = 5, width = 6;
  const PointCloud dp = testutil::rand_cloud(rng, n, 1.0);
  const PointCloud dq = testutil::rand_cloud(rng, m, 1.0);
  PointCloud one(1, 3);
  one << 0, 0, 0;
  const Mat fp = rand_mat(rng, n, width, -2.0, 2.0);
  const Mat fq = rand_mat(rng, m, width, -2.0, 2.0);
  const SuperpointGraph gp = make_graph(dp, one, {{0, 1, 2, 3}}, fp);
  const SuperpointGraph gq = make_graph(dq, one, {{0, 1, 2, 3, 4}}, fq);
  CorrespondenceSet super;
  super.level = CorrLevel::kSuperpoint;
  super.pairs = {{0, 0}};
  super.scores = {1.0};

  const int k = 2, iters = 30;
  const double alpha = 0.5;
  const CorrespondenceSet got = point_match(gp, gq, super, k, iters, alpha);

  // Reference: same assignment matrix, then a direct nested-loop check of
  // the mutual-top-k-and-beats-both-dustbins rule.
  const Mat cost = (fp * fq.transpose()) / std::sqrt(double(width));
  const AssignmentMatrix assign = sinkhorn(cost, alpha, iters);
  const Mat& z = assign.truncated;
  auto rank_in_row = [&](int a, int b) {
    int better = 0;
    for (int j = 0; j < m; ++j)
      if (z(a, j) > z(a, b) || (z(a, j) == z(a, b) && j < b)) ++better;
    return better;
  };
  auto rank_in_col = [&](int a, int b) {
    int better = 0;
    for (int i = 0; i < n; ++i)
      if (z(i, b) > z(a, b) || (z(i, b) == z(a, b) && i < a)) ++better;
    return better;
  };
  std::set<std::pair<int, int>> expect;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < m; ++b)
      if (rank_in_row(a, b) < k && rank_in_col(a, b) < k &&
          z(a, b) > assign.augmented(a, m) &&
          z(a, b) > assign.augmented(n, b))
        expect.insert({a, b});
  CHECK(pair_set(got) == expect);
  for (int i = 0; i < got.size(); ++i)
    CHECK(got.scores[static_cast<std::size_t>(i)] ==
          doctest::Approx(z(got.pairs[static_cast<std::size_t>(i)].first,
                            got.pairs[static_cast<std::size_t>(i)].second)));
}

TEST_CASE("orthogonal patch features match on the diagonal") {
  PointCloud dp(3, 3), sp(1, 3);
  dp << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  sp << 1, 0, 0;
  Mat f(3, 4);
  f << 2, 0, 0, 0, 0, 2, 0, 0, 0, 0, 2, 0;
  const SuperpointGraph gp = make_graph(dp, sp, {{0, 1, 2}}, f);
  const SuperpointGraph gq = gp;
  CorrespondenceSet super;
  super.level = CorrLevel::kSuperpoint;
  super.pairs = {{0, 0}};
  super.scores = {1.0};
  const CorrespondenceSet got = point_match(gp, gq, super, 1, 50, 0.0);
  CHECK(pair_set(got) ==
        std::set<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
  // Output arrives in map key order.
  REQUIRE(got.size() == 3);
  CHECK(got.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(got.pairs[2] == std::pair<int, int>{2, 2});
}

TEST_CASE("duplicate pairs across groups keep the best score") {
  std::mt19937_64 rng(77);
  PointCloud dp(1, 3), dq(2, 3), sp(2, 3), sq(2, 3);
  dp << 0, 0, 0;
  dq << 0, 0, 0, 1, 1, 1;
  sp << 0, 0, 0, 0.1, 0, 0;
  sq << 0, 0, 0, 1, 1, 1;
  Mat fp(1, 3), fq(2, 3);
  fp << 3, 0, 0;
  fq << 3, 0, 0, -1, 0.2, 0.1;
  // Both of P's patches contain the same dense point, so the two superpoint
  // matches produce the same candidate pair from different patch contexts.
  const SuperpointGraph gp = make_graph(dp, sp, {{0}, {0}}, fp);
  const SuperpointGraph gq = make_graph(dq, sq, {{0}, {0, 1}}, fq);
  CorrespondenceSet super;
  super.level = CorrLevel::kSuperpoint;
  super.pairs = {{0, 0}, {1, 1}};
  super.scores = {1.0, 1.0};

  const int iters = 40;
  const double alpha = 0.2;
  const CorrespondenceSet got = point_match(gp, gq, super, 2, iters, alpha);
  const double inv = 1.0 / std::sqrt(3.0);
  const Mat cost_a = (fp * fq.topRows(1).transpose()) * inv;
  const Mat cost_b = (fp * fq.transpose()) * inv;
  const double za = sinkhorn(cost_a, alpha, iters).truncated(0, 0);
  const double zb = sinkhorn(cost_b, alpha, iters).truncated(0, 0);
  REQUIRE(got.size() >= 1);
  CHECK(got.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(got.scores[0] == doctest::Approx(std::max(za, zb)));
  CHECK(got.group_of[0] == (za >= zb ? 0 : 1));
}

TEST_CASE("correspondence CSV format") {
  CorrespondenceSet super;
  super.level = CorrLevel::kSuperpoint;
  super.pairs = {{0, 1}, {2, 0}};
  super.scores = {0.5, 0.25};
  CHECK(correspondences_csv(super) ==
        "level,ip,iq,score,group\nsuperpoint,0,1,0.5,-1\nsuperpoint,2,0,0.25,-1\n");

  CorrespondenceSet pts;
  pts.level = CorrLevel::kPoint;
  pts.pairs = {{2, 4}};
  pts.scores = {0.25};
  pts.group_of = {3};
  std::ostringstream os;
  os << "level,ip,iq,score,group\n";
  append_csv_rows(os, super);
  append_csv_rows(os, pts);
  const std::string text = os.str();
  CHECK(text.find("point,2,4,0.25,3\n") != std::string::npos);
  // Shared file holds both levels under one header.
  CHECK(text.find("superpoint,0,1,0.5,-1\n") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
