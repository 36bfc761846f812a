#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bros/estimators.hpp"
#include "bros/moments.hpp"
#include "bros/problems.hpp"

using namespace bros;

namespace {

struct FrozenDraw {
  ProjectorSet p;
  ProbeSet probes;
  OracleSample sample;
};

FrozenDraw draw(const BilevelProblem& prob, const std::vector<int>& ranks, const Vector& x, const BlockVar& y,
                const RngStream& stream) {
  FrozenDraw d;
  d.p = sample_projector_set(stream.child(0), prob.shape, ranks);
  d.probes = sample_probe_set(stream.child(1), prob.shape, ranks);
  RngStream noise = stream.child(2);
  d.sample = sample_projected_oracles(prob, noise, x, y, d.p);
  return d;
}

}  // namespace

TEST_CASE("correction coefficients") {
  const CorrectionCoefficients c32 = correction_coefficients(3, 2);
  CHECK(c32.main == Rational(2 * 2 * 5, 3 * 7));   // 20/21
  CHECK(c32.trace == Rational(1, 7));
  CHECK(c32.sharp == Rational(2 * 2 * 1, 3 * 1 * 7));  // 4/21

  // r = m degenerates to the plain lift.
  for (int m = 2; m <= 8; ++m) {
    const CorrectionCoefficients c = correction_coefficients(m, m);
    CHECK(c.main == Rational(1));
    CHECK(c.trace == Rational(0));
    CHECK(c.sharp == Rational(0));
  }

  CHECK_THROWS_AS(correction_coefficients(5, 1), std::invalid_argument);
  CHECK_THROWS_AS(correction_coefficients(3, 4), std::invalid_argument);
}

TEST_CASE("coefficients recombine the sandwich constants exactly") {
  for (int m = 2; m <= 12; ++m)
    for (int r = 2; r <= m; ++r) {
      const WeingartenConstants w = weingarten_constants(m, r);
      const CorrectionCoefficients c = correction_coefficients(m, r);
      const Rational denom = w.a * (w.a - Rational(2) * w.b);
      const Rational c_a = (w.a - w.b) / denom;
      const Rational c_b = w.b / denom;
      const Rational c_c = w.b / w.a;
      CHECK(c.main + c.sharp == c_a);
      CHECK(c.sharp == c_b);
      CHECK(c.trace == c_c);
      CHECK(c.main == Rational(1) / w.a);
    }
}

TEST_CASE("full-rank reductions are exact") {
  RngStream s(101);
  BilevelProblem prob = make_quadratic(s, 5, 3, 2, 4.0, 0.0, 0.0);
  RngStream xs(102);
  const Vector x = xs.gaussian_matrix(2, 1).col(0);
  const BlockVar y = sample_gaussian_blockvar(xs, prob.shape, 1.0);
  const BlockVar z = sample_gaussian_blockvar(xs, prob.shape, 1.0);

  const FrozenDraw d = draw(prob, {5}, x, y, RngStream(103));
  const BlockVar truth = prob.hvp(x, y, z);
  CHECK(norm(axpy(-1.0, truth, naive_lifted_hvp(d.p, z, d.sample))) < 1e-10);
  CHECK((corr_hvp_single_layer(d.p, z, d.sample, d.probes, 0) - truth.blocks[0]).norm() < 1e-10);
  CHECK(norm(axpy(-1.0, truth, assemble_multilayer_hvp(d.p, z, d.sample, d.probes))) < 1e-10);

  // Naive at Z = 0 is exactly zero.
  CHECK(norm(naive_lifted_hvp(d.p, BlockVar::zero(prob.shape), d.sample)) == 0.0);

  // Direction builders at full rank, noiseless.
  CHECK(norm(axpy(-1.0, prob.grad_y_g(x, y), build_lower_direction(d.p, d.sample))) < 1e-10);
  const BlockVar s_exact = axpy(-1.0, prob.grad_y_f(x, y), truth);
  CHECK(norm(axpy(-1.0, s_exact, build_aux_direction(d.p, z, d.sample, d.probes))) < 1e-10);
  const Vector w_exact = prob.grad_x_f(x, y) - prob.jvp(x, y, z);
  CHECK((build_hypergrad_sample(d.p, z, d.sample) - w_exact).norm() < 1e-10);
  CHECK((build_hypergrad_sample(d.p, BlockVar::zero(prob.shape), d.sample) - d.sample.ux).norm() == 0.0);
}

TEST_CASE("estimators are exactly linear in Z under frozen randomness") {
  RngStream s(111);
  BilevelProblem prob = make_quadratic(s, 6, 4, 3, 5.0, 0.1, 0.2);
  RngStream xs(112);
  const Vector x = xs.gaussian_matrix(3, 1).col(0);
  const BlockVar y = sample_gaussian_blockvar(xs, prob.shape, 1.0);
  const BlockVar z = sample_gaussian_blockvar(xs, prob.shape, 1.0);
  const FrozenDraw d = draw(prob, {3}, x, y, RngStream(113));

  const Matrix base = corr_hvp_single_layer(d.p, z, d.sample, d.probes, 0);
  const BlockVar base_naive = naive_lifted_hvp(d.p, z, d.sample);
  for (double scale_z : {0.0, -3.0, 10.0}) {
    const BlockVar zs = scale(scale_z, z);
    CHECK((corr_hvp_single_layer(d.p, zs, d.sample, d.probes, 0) - scale_z * base).norm() <
          1e-12 * (1.0 + std::abs(scale_z) * base.norm()));
    CHECK(norm(axpy(-scale_z, base_naive, naive_lifted_hvp(d.p, zs, d.sample))) <
          1e-12 * (1.0 + std::abs(scale_z) * norm(base_naive)));
  }
}

TEST_CASE("corrected estimator is unbiased on the counterexample") {
  BilevelProblem prob = make_counterexample();
  Vector x(1);
  x(0) = 0.0;
  const BlockVar y = BlockVar::zero(prob.shape);
  BlockVar z = BlockVar::zero(prob.shape);
  z.blocks[0](0, 0) = 1.0;  // Z = e1

  const long trials = 60000;
  Matrix corr_acc = Matrix::Zero(3, 1);
  BlockVar naive_acc = BlockVar::zero(prob.shape);
  const RngStream root(121);
  for (long t = 0; t < trials; ++t) {
    const FrozenDraw d = draw(prob, {2}, x, y, root.child(t));
    corr_acc += corr_hvp_single_layer(d.p, z, d.sample, d.probes, 0);
    naive_acc = axpy(1.0, naive_lifted_hvp(d.p, z, d.sample), naive_acc);
  }
  corr_acc /= double(trials);
  naive_acc = scale(1.0 / trials, naive_acc);

  // E[corrected] = H e1 = e1.
  CHECK(std::abs(corr_acc(0, 0) - 1.0) < 0.015);
  CHECK(std::abs(corr_acc(1, 0)) < 0.015);
  CHECK(std::abs(corr_acc(2, 0)) < 0.015);
  // E[naive] = Hbar e1 = (39/20) e1, not H e1.
  CHECK(naive_acc.blocks[0](0, 0) == Catch::Approx(39.0 / 20.0).epsilon(0.01));
  CHECK(std::abs(naive_acc.blocks[0](1, 0)) < 0.02);

  // Hypergradient samples average to grad Phi(x) = x + 1 at (Y*, Z*).
  Vector xq(1);
  xq(0) = 0.4;
  const BlockVar y_star = lower_solution(prob, xq);
  Vector wh = Vector::Zero(1);
  for (long t = 0; t < trials / 3; ++t) {
    const FrozenDraw d = draw(prob, {2}, xq, y_star, root.child(1000000 + t));
    wh += build_hypergrad_sample(d.p, z, d.sample);
  }
  wh /= double(trials / 3);
  CHECK(wh(0) == Catch::Approx(1.4).epsilon(0.01));

  // Aux direction has mean zero at the solution pair.
  BlockVar s_acc = BlockVar::zero(prob.shape);
  for (long t = 0; t < trials / 3; ++t) {
    const FrozenDraw d = draw(prob, {2}, xq, y_star, root.child(2000000 + t));
    s_acc = axpy(1.0, build_aux_direction(d.p, z, d.sample, d.probes), s_acc);
  }
  s_acc = scale(3.0 / trials, s_acc);
  CHECK(norm(s_acc) < 0.02 * norm(prob.grad_y_f(xq, y_star)) + 0.02);
}

TEST_CASE("lower direction at the lower solution is exactly zero") {
  BilevelProblem prob = make_counterexample();
  Vector x(1);
  x(0) = -0.3;
  const BlockVar y_star = lower_solution(prob, x);
  const FrozenDraw d = draw(prob, {2}, x, y_star, RngStream(131));
  CHECK(norm(build_lower_direction(d.p, d.sample)) < 1e-14);
}

TEST_CASE("variance scales quadratically in Z") {
  RngStream s(141);
  BilevelProblem prob = make_quadratic(s, 5, 3, 2, 4.0, 0.0, 0.0);
  const Vector x = Vector::Zero(2);
  const BlockVar y = BlockVar::zero(prob.shape);
  RngStream zs(142);
  const BlockVar z = sample_gaussian_blockvar(zs, prob.shape, 1.0);
  const BlockVar truth = prob.hvp(x, y, z);

  const long trials = 2000;
  double second_z = 0.0, second_10z = 0.0;
  const RngStream root(143);
  for (long t = 0; t < trials; ++t) {
    const FrozenDraw d = draw(prob, {2}, x, y, root.child(t));
    const BlockVar e1 = assemble_multilayer_hvp(d.p, z, d.sample, d.probes);
    const BlockVar e2 = assemble_multilayer_hvp(d.p, scale(10.0, z), d.sample, d.probes);
    second_z += inner(axpy(-1.0, truth, e1), axpy(-1.0, truth, e1));
    second_10z += inner(axpy(-10.0, truth, e2), axpy(-10.0, truth, e2));
  }
  // Per-draw linearity makes the centered second moment scale exactly by 100.
  CHECK(second_10z == Catch::Approx(100.0 * second_z).epsilon(1e-9));
}

TEST_CASE("two-layer assembly cancels cross-layer contamination") {
  RngStream s(151);
  const BlockShape shape({{4, 2}, {3, 2}});
  BilevelProblem prob = make_coupled_quadratic(s, shape, 3, 5.0, 0.0, 0.0);
  const Vector x = Vector::Zero(3);
  const BlockVar y = BlockVar::zero(shape);
  RngStream zs(152);
  const BlockVar z = sample_gaussian_blockvar(zs, shape, 1.0);
  const BlockVar truth = prob.hvp(x, y, z);

  BlockVar acc = BlockVar::zero(shape);
  const long trials = 60000;
  const RngStream root(153);
  for (long t = 0; t < trials; ++t) {
    const FrozenDraw d = draw(prob, {2, 2}, x, y, root.child(t));
    acc = axpy(1.0, assemble_multilayer_hvp(d.p, z, d.sample, d.probes), acc);
  }
  acc = scale(1.0 / trials, acc);
  CHECK(norm(axpy(-1.0, truth, acc)) / norm(truth) < 0.03);
}
