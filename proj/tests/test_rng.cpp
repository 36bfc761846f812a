#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bros/haar.hpp"
#include "bros/moments.hpp"
#include "bros/rng.hpp"

using namespace bros;

TEST_CASE("streams are deterministic and path-separated") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // child() is pure: deriving twice gives identical streams regardless of
  // how much the parent was consumed.
  RngStream parent(9);
  RngStream c1 = parent.child(3);
  parent.next_u64();
  RngStream c2 = parent.child(3);
  for (int i = 0; i < 20; ++i) CHECK(c1.next_u64() == c2.next_u64());

  // Distinct tags and seeds give distinct draws.
  CHECK(RngStream(9).child(0).next_u64() != RngStream(9).child(1).next_u64());
  CHECK(RngStream(1).next_u64() != RngStream(2).next_u64());

  // Path constructor equals chained children.
  RngStream p1(7, {2, 5});
  RngStream p2 = RngStream(7).child(2).child(5);
  CHECK(p1.next_u64() == p2.next_u64());
}

TEST_CASE("gaussian and rademacher moments") {
  RngStream s(123);
  const long n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (long i = 0; i < n; ++i) {
    const double g = s.next_gaussian();
    sum += g;
    sumsq += g * g;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sumsq / n == Catch::Approx(1.0).margin(0.02));

  RngStream r(77);
  long plus = 0;
  for (long i = 0; i < n; ++i) {
    const double v = r.next_rademacher();
    REQUIRE((v == 1.0 || v == -1.0));
    if (v > 0) ++plus;
  }
  CHECK(std::abs(plus / double(n) - 0.5) < 0.005);

  RngStream u(5);
  for (int i = 0; i < 1000; ++i) {
    const double d = u.next_double();
    REQUIRE(d >= 0.0);
    REQUIRE(d < 1.0);
  }
}

TEST_CASE("gaussian block variables") {
  const BlockShape shape({{3, 2}, {4, 1}});
  RngStream s(1);
  const BlockVar zero = sample_gaussian_blockvar(s, shape, 0.0);
  CHECK(norm(zero) == 0.0);
  RngStream s2(1);
  CHECK_THROWS_AS(sample_gaussian_blockvar(s2, shape, -1.0), std::invalid_argument);
  RngStream s3(1);
  const BlockVar v = sample_gaussian_blockvar(s3, shape, 2.0);
  CHECK(v.all_finite());
  CHECK(norm(v) > 0.0);
}

TEST_CASE("haar projector properties") {
  RngStream s(31);
  const int m = 7, r = 3;
  const Matrix p = sample_haar_projector(s, m, r);
  CHECK((p.transpose() * p - (double(m) / r) * Matrix::Identity(r, r)).norm() < 1e-10);

  RngStream bad(1);
  CHECK_THROWS_AS(sample_haar_projector(bad, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_haar_projector(bad, 5, 6), std::invalid_argument);

  // E[P P^T] = I (smoke test at loose tolerance).
  Matrix acc = Matrix::Zero(m, m);
  const long trials = 4000;
  RngStream root(99);
  for (long t = 0; t < trials; ++t) {
    RngStream ts = root.child(t);
    const Matrix q = sample_haar_projector(ts, m, r);
    acc += q * q.transpose();
  }
  acc /= double(trials);
  CHECK((acc - Matrix::Identity(m, m)).norm() / std::sqrt(double(m)) < 0.05);

  // Rotation invariance smoke test: E[Q A Q] commutes with the closed form
  // under an orthogonal change of basis.
  RngStream vs(17);
  const Matrix v = sample_haar_projector(vs, m, m);  // orthogonal
  const Matrix a_mat = Vector::LinSpaced(m, 1.0, 2.0).asDiagonal();
  RngStream mc1(55), mc2(55);
  const Matrix lhs = monte_carlo_self_sandwich(mc1, v * a_mat * v.transpose(), r, 4000);
  const Matrix rhs = v * monte_carlo_self_sandwich(mc2, a_mat, r, 4000) * v.transpose();
  // Same distribution, independent sampling error only.
  CHECK((lhs - rhs).norm() / rhs.norm() < 0.1);
}

TEST_CASE("projector and probe sets") {
  const BlockShape shape({{6, 3}, {4, 2}});
  const std::vector<int> ranks = {3, 2};
  RngStream s(2);
  const ProjectorSet p = sample_projector_set(s, shape, ranks);
  REQUIRE(p.num_layers() == 2);
  CHECK(p.rank(0) == 3);
  CHECK(p.rank(1) == 2);
  CHECK_THROWS_AS(sample_projector_set(s, shape, {3}), std::invalid_argument);

  const ProbeSet probes = sample_probe_set(s, shape, ranks);
  REQUIRE(probes.num_layers() == 2);
  CHECK(probes.u[0].size() == 3);
  CHECK(probes.xi[0].size() == 3);
  CHECK(probes.u[1].size() == 2);
  CHECK(probes.xi[1].size() == 2);
  for (int l = 0; l < 2; ++l)
    for (Eigen::Index i = 0; i < probes.u[l].size(); ++i)
      CHECK(std::abs(probes.u[l](i)) == 1.0);

  const ProjectorSet id = identity_projector_set(shape);
  CHECK((id.layers[0] - Matrix::Identity(6, 6)).norm() == 0.0);
}
