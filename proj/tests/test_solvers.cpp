#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bros/solvers.hpp"

using namespace bros;

TEST_CASE("config validation") {
  SolverConfig cfg;
  cfg.alpha = 0.5;
  cfg.c3 = 3.0;  // theta = 1.5 > 1
  CHECK_THROWS_AS(cfg.resolve_alpha(), std::invalid_argument);
  cfg.c3 = 2.0;  // theta = 1 allowed
  CHECK(cfg.resolve_alpha() == 0.5);
  cfg.c1 = -1.0;
  CHECK_THROWS_AS(cfg.resolve_alpha(), std::invalid_argument);

  SolverConfig autocfg;
  autocfg.alpha_auto = true;
  autocfg.alpha_bar = 10.0;
  autocfg.iterations = 10000;
  CHECK(autocfg.resolve_alpha() == Catch::Approx(0.01).epsilon(1e-12));
  autocfg.alpha_bar = 0.001;
  CHECK(autocfg.resolve_alpha() == 0.001);
}

TEST_CASE("zero stepsize leaves the state fixed") {
  BilevelProblem prob = make_counterexample();
  SolverConfig cfg;
  cfg.alpha = 0.0;
  cfg.iterations = 3;
  cfg.ranks = {2};
  const RunResult res = run_bros(prob, cfg);
  CHECK(res.final_state.k == 3);
  CHECK(res.final_state.x.norm() == 0.0);
  CHECK(norm(res.final_state.y) == 0.0);
  CHECK(norm(res.final_state.z) == 0.0);
  CHECK(res.final_state.h.norm() == 0.0);
}

TEST_CASE("one step at the solution pair moves only x") {
  // Noiseless full rank from (x, Y*, Z*, h = grad Phi): the oracles are
  // exact, so Y, Z, h are at fixed points and x moves by -alpha (x + 1).
  BilevelProblem prob = make_counterexample();
  SolverConfig cfg;
  cfg.alpha = 0.1;
  cfg.c1 = 2.0;
  cfg.c2 = 2.0;
  cfg.c3 = 2.0;
  cfg.ranks = {3};

  SolverState st = initial_state(prob, cfg);
  st.x(0) = 0.5;
  st.y = lower_solution(prob, st.x);
  st.z = aux_solution(prob, st.x);
  st.h = exact_hypergradient(prob, st.x);

  const BlockVar y0 = st.y, z0 = st.z;
  bros_step(prob, cfg, Method::Bros, {3}, RngStream(1), st);
  CHECK(st.k == 1);
  CHECK(st.x(0) == Catch::Approx(0.5 - 0.1 * 1.5).epsilon(1e-12));
  CHECK(norm(axpy(-1.0, y0, st.y)) < 1e-12);
  CHECK(norm(axpy(-1.0, z0, st.z)) < 1e-12);
  CHECK(st.h(0) == Catch::Approx(1.5).epsilon(1e-10));
}

TEST_CASE("update order matches a hand-unrolled mean-field recursion") {
  BilevelProblem prob = make_counterexample();
  SolverConfig cfg;
  cfg.alpha = 0.05;
  cfg.c1 = 5.0;
  cfg.c2 = 5.0;
  cfg.c3 = 5.0;
  cfg.ranks = {2};
  cfg.iterations = 2;
  cfg.eval_stride = 1;
  const RunResult res = run_naive_sketch(prob, cfg, true);

  // Hand-unrolled: Hbar = diag(39/20, 3, 81/20); d = e1; with Y = Y*(x),
  // w = x + z(0); x uses the old h, h uses the old z.
  const double alpha = 0.05, gamma = 0.25, theta = 0.25;
  double x = 0.0, h = 0.0;
  Vector z = Vector::Zero(3);
  const Vector hbar_diag = (Vector(3) << 39.0 / 20.0, 3.0, 81.0 / 20.0).finished();
  for (int k = 0; k < 2; ++k) {
    const double w = x + z(0);
    const double x_new = x - alpha * h;
    Vector z_new = z;
    z_new(0) -= gamma * (hbar_diag(0) * z(0) - 1.0);
    z_new(1) -= gamma * (hbar_diag(1) * z(1));
    z_new(2) -= gamma * (hbar_diag(2) * z(2));
    const double h_new = (1.0 - theta) * h + theta * w;
    x = x_new;
    z = z_new;
    h = h_new;
  }
  CHECK(res.final_state.x(0) == Catch::Approx(x).margin(1e-15));
  CHECK(res.final_state.h(0) == Catch::Approx(h).margin(1e-15));
  CHECK((res.final_state.z.blocks[0].col(0) - z).norm() < 1e-15);
}

TEST_CASE("runs are bit-identical for identical config and seed") {
  RngStream s(161);
  BilevelProblem prob = make_quadratic(s, 5, 3, 2, 4.0, 0.1, 0.1);
  SolverConfig cfg;
  cfg.alpha = 0.01;
  cfg.iterations = 200;
  cfg.ranks = {2};
  cfg.seed = 7;
  cfg.eval_stride = 50;

  const RunResult a = run_bros(prob, cfg);
  const RunResult b = run_bros(prob, cfg);
  CHECK((a.final_state.x - b.final_state.x).norm() == 0.0);
  CHECK(norm(axpy(-1.0, a.final_state.y, b.final_state.y)) == 0.0);
  CHECK(norm(axpy(-1.0, a.final_state.z, b.final_state.z)) == 0.0);
  REQUIRE(a.trajectory.records.size() == b.trajectory.records.size());
  for (size_t i = 0; i < a.trajectory.records.size(); ++i) {
    CHECK(a.trajectory.records[i].k == b.trajectory.records[i].k);
    CHECK(a.trajectory.records[i].grad_norm == b.trajectory.records[i].grad_norm);
    CHECK(a.trajectory.records[i].phi == b.trajectory.records[i].phi);
  }

  // A different seed gives a different path.
  cfg.seed = 8;
  const RunResult c = run_bros(prob, cfg);
  CHECK((a.final_state.x - c.final_state.x).norm() > 0.0);
}

TEST_CASE("masoba converges on the deterministic quadratic") {
  RngStream s(171);
  BilevelProblem prob = make_quadratic(s, 6, 4, 3, 5.0, 0.0, 0.0);
  SolverConfig cfg;
  cfg.alpha = 0.02;
  cfg.c1 = 10.0;
  cfg.c2 = 10.0;
  cfg.c3 = 10.0;
  cfg.iterations = 5000;
  cfg.eval_stride = 1000;
  const RunResult res = run_masoba(prob, cfg);
  CHECK_FALSE(res.diverged);
  const auto& last = res.trajectory.records.back();
  CHECK(last.grad_norm < 1e-3);
  CHECK(last.y_err < 1e-3);
  CHECK(last.z_err < 1e-3);
}

TEST_CASE("full-rank bros tracks masoba") {
  RngStream s(181);
  BilevelProblem prob = make_quadratic(s, 5, 3, 2, 4.0, 0.0, 0.0);
  SolverConfig cfg;
  cfg.alpha = 0.02;
  cfg.c1 = 10.0;
  cfg.c2 = 10.0;
  cfg.c3 = 10.0;
  cfg.iterations = 4000;
  cfg.eval_stride = 1000;
  cfg.ranks = {5};
  const double g_bros = run_bros(prob, cfg).trajectory.records.back().grad_norm;
  const double g_masoba = run_masoba(prob, cfg).trajectory.records.back().grad_norm;
  CHECK(g_bros < 2.0 * std::max(g_masoba, 1e-6));
  CHECK(g_masoba < 2.0 * std::max(g_bros, 1e-6));
}

TEST_CASE("divergence guard reports a partial trajectory") {
  RngStream s(191);
  BilevelProblem prob = make_quadratic(s, 5, 3, 2, 4.0, 0.0, 0.0);
  SolverConfig cfg;
  cfg.alpha = 50.0;  // way past stability
  cfg.c1 = 0.01;
  cfg.c2 = 0.01;
  cfg.c3 = 0.01;
  cfg.iterations = 10000;
  cfg.eval_stride = 10;
  cfg.ranks = {3};
  const RunResult res = run_bros(prob, cfg);
  CHECK(res.diverged);
  CHECK(res.diverged_at > 0);
  CHECK(res.diverged_at < cfg.iterations);
  CHECK_FALSE(res.trajectory.records.empty());
}

TEST_CASE("mean-field mode requires a columnwise Hessian") {
  RngStream s(201);
  BilevelProblem prob = make_coupled_quadratic(s, BlockShape({{3, 2}, {2, 2}}), 2, 3.0, 0.0, 0.0);
  SolverConfig cfg;
  cfg.alpha = 0.01;
  cfg.ranks = {2, 2};
  CHECK_THROWS_AS(run_naive_sketch(prob, cfg, true), std::invalid_argument);
}

TEST_CASE("naive mean-field counterexample hits the biased fixed point") {
  BilevelProblem prob = make_counterexample();
  SolverConfig cfg;
  cfg.alpha = 0.05;
  cfg.c1 = 5.0;
  cfg.c2 = 5.0;
  cfg.c3 = 5.0;
  cfg.ranks = {2};
  cfg.iterations = 20000;
  cfg.eval_stride = 5000;
  const RunResult res = run_naive_sketch(prob, cfg, true);
  CHECK(std::abs(res.final_state.x(0) + 20.0 / 39.0) < 1e-8);
  CHECK(std::abs(res.final_state.z.blocks[0](0, 0) - 20.0 / 39.0) < 1e-8);
  CHECK(std::abs(exact_hypergradient(prob, res.final_state.x)(0)) ==
        Catch::Approx(19.0 / 39.0).margin(1e-8));

  // Full rank removes the bias even for the naive estimator.
  cfg.ranks = {3};
  const RunResult full = run_naive_sketch(prob, cfg, false);
  CHECK(std::abs(full.final_state.x(0) + 1.0) < 1e-4);
}

TEST_CASE("naive stochastic tail average matches the mean-field fixed point") {
  BilevelProblem prob = make_counterexample();
  SolverConfig cfg;
  cfg.alpha = 0.004;
  cfg.c1 = 25.0;
  cfg.c2 = 25.0;
  cfg.c3 = 25.0;
  cfg.ranks = {2};
  cfg.iterations = 60000;
  cfg.eval_stride = 20000;
  cfg.track_z_history = true;
  const RunResult res = run_naive_sketch(prob, cfg, false);
  double tail = 0.0;
  const size_t start = res.z_history.size() / 2;
  for (size_t i = start; i < res.z_history.size(); ++i) tail += res.z_history[i];
  tail /= double(res.z_history.size() - start);
  CHECK(tail == Catch::Approx(20.0 / 39.0).epsilon(0.05));
}

TEST_CASE("stationarity surrogate") {
  BilevelProblem prob = make_counterexample();
  Vector x(1);
  x(0) = -1.0;
  CHECK(stationarity_surrogate(prob, x) < 1e-8);
  x(0) = -20.0 / 39.0;
  CHECK(stationarity_surrogate(prob, x) == Catch::Approx(19.0 / 39.0).epsilon(1e-10));
}
