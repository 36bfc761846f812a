// Command-line front end: verify-moments, verify-estimators, counterexample,
// run, memory-proxy, sweep. Configuration is a JSON file with flag overrides;
// every output file starts with a manifest comment block.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "bros/estimators.hpp"
#include "bros/memproxy.hpp"
#include "bros/moments.hpp"
#include "bros/problems.hpp"
#include "bros/solvers.hpp"
#include "bros/trace.hpp"

using nlohmann::json;

namespace {

// Paths are resolved against BROS_OUT_DIR when relative and the variable is set.
std::string out_path(const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  const char* dir = std::getenv("BROS_OUT_DIR");
  if (!dir || !*dir) return path;
  return std::string(dir) + "/" + path;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) ok = true;
    if (!ok) throw std::runtime_error("unknown key '" + item.key() + "' in " + where);
  }
}

bros::BilevelProblem build_problem(const json& j, json& resolved) {
  if (!j.is_object() || !j.contains("kind")) throw std::runtime_error("problem: object with 'kind' required");
  const std::string kind = j.at("kind").get<std::string>();
  resolved = json{{"kind", kind}};
  if (kind == "counterexample") {
    check_keys(j, {"kind"}, "problem");
    return bros::make_counterexample();
  }
  if (kind == "quadratic") {
    check_keys(j, {"kind", "m", "n", "d_x", "conditioning", "sigma_grad", "sigma_op", "seed"}, "problem");
    const int m = j.value("m", 8), n = j.value("n", 5), d_x = j.value("d_x", 4);
    const double cond = j.value("conditioning", 10.0);
    const double sg = j.value("sigma_grad", 0.0), so = j.value("sigma_op", 0.0);
    const std::uint64_t seed = j.value("seed", 0ULL);
    resolved.update({{"m", m}, {"n", n}, {"d_x", d_x}, {"conditioning", cond},
                     {"sigma_grad", sg}, {"sigma_op", so}, {"seed", seed}});
    bros::RngStream stream(seed);
    return bros::make_quadratic(stream, m, n, d_x, cond, sg, so);
  }
  if (kind == "coupled-quadratic") {
    check_keys(j, {"kind", "layers", "d_x", "conditioning", "sigma_grad", "sigma_op", "seed"}, "problem");
    std::vector<std::pair<int, int>> dims;
    for (const auto& layer : j.at("layers")) dims.emplace_back(layer.at(0).get<int>(), layer.at(1).get<int>());
    const int d_x = j.value("d_x", 4);
    const double cond = j.value("conditioning", 10.0);
    const double sg = j.value("sigma_grad", 0.0), so = j.value("sigma_op", 0.0);
    const std::uint64_t seed = j.value("seed", 0ULL);
    resolved.update({{"layers", j.at("layers")}, {"d_x", d_x}, {"conditioning", cond},
                     {"sigma_grad", sg}, {"sigma_op", so}, {"seed", seed}});
    bros::RngStream stream(seed);
    return bros::make_coupled_quadratic(stream, bros::BlockShape(dims), d_x, cond, sg, so);
  }
  if (kind == "hypercleaning") {
    check_keys(j, {"kind", "n_train", "n_val", "d_feat", "classes", "noise_rate", "ridge", "batch_train",
                   "batch_val", "seed"},
               "problem");
    const int n_train = j.value("n_train", 400), n_val = j.value("n_val", 200);
    const int d_feat = j.value("d_feat", 30), classes = j.value("classes", 3);
    const double noise = j.value("noise_rate", 0.3), ridge = j.value("ridge", 0.1);
    const int bt = j.value("batch_train", 0), bv = j.value("batch_val", 0);
    const std::uint64_t seed = j.value("seed", 0ULL);
    resolved.update({{"n_train", n_train}, {"n_val", n_val}, {"d_feat", d_feat}, {"classes", classes},
                     {"noise_rate", noise}, {"ridge", ridge}, {"batch_train", bt}, {"batch_val", bv},
                     {"seed", seed}});
    bros::RngStream stream(seed);
    return bros::make_hypercleaning(stream, n_train, n_val, d_feat, classes, noise, ridge, bt, bv);
  }
  throw std::runtime_error("problem: unknown kind '" + kind + "'");
}

bros::SolverConfig build_solver(const json& j, json& resolved) {
  check_keys(j, {"iterations", "alpha", "alpha_bar", "c1", "c2", "c3", "ranks", "seed", "z_clip",
                 "eval_stride", "x0"},
             "solver");
  bros::SolverConfig cfg;
  cfg.iterations = j.value("iterations", 1000L);
  if (j.contains("alpha")) {
    if (j.at("alpha").is_string()) {
      if (j.at("alpha").get<std::string>() != "auto") throw std::runtime_error("solver.alpha: number or \"auto\"");
      cfg.alpha_auto = true;
    } else {
      cfg.alpha = j.at("alpha").get<double>();
    }
  }
  cfg.alpha_bar = j.value("alpha_bar", 0.1);
  cfg.c1 = j.value("c1", 1.0);
  cfg.c2 = j.value("c2", 1.0);
  cfg.c3 = j.value("c3", 1.0);
  if (j.contains("ranks")) cfg.ranks = j.at("ranks").get<std::vector<int>>();
  cfg.seed = j.value("seed", 0ULL);
  cfg.z_clip = j.value("z_clip", 0.0);
  cfg.eval_stride = j.value("eval_stride", 100L);
  if (j.contains("x0")) {
    const auto v = j.at("x0").get<std::vector<double>>();
    cfg.x0 = Eigen::Map<const bros::Vector>(v.data(), static_cast<long>(v.size()));
  }
  resolved = json{{"iterations", cfg.iterations},
                  {"alpha", cfg.alpha_auto ? json("auto") : json(cfg.alpha)},
                  {"alpha_bar", cfg.alpha_bar},
                  {"c1", cfg.c1},
                  {"c2", cfg.c2},
                  {"c3", cfg.c3},
                  {"ranks", cfg.ranks},
                  {"seed", cfg.seed},
                  {"z_clip", cfg.z_clip},
                  {"eval_stride", cfg.eval_stride}};
  return cfg;
}

struct ParsedRun {
  bros::BilevelProblem problem;
  bros::SolverConfig solver;
  bros::Method method = bros::Method::Bros;
  std::string output = "trace.csv";
  json resolved;
};

ParsedRun parse_run_config(const json& cfg) {
  check_keys(cfg, {"problem", "solver", "method", "output"}, "config");
  if (!cfg.contains("problem") || !cfg.contains("solver")) throw std::runtime_error("config: 'problem' and 'solver' required");
  ParsedRun pr;
  json prob_res, solver_res;
  pr.problem = build_problem(cfg.at("problem"), prob_res);
  pr.solver = build_solver(cfg.at("solver"), solver_res);
  const std::string method = cfg.value("method", std::string("bros"));
  pr.method = bros::method_from_name(method);
  pr.output = cfg.value("output", std::string("trace.csv"));
  pr.resolved = json{{"problem", prob_res}, {"solver", solver_res}, {"method", method}, {"output", pr.output}};
  // Validate before any file is touched.
  pr.solver.resolve_alpha();
  if (pr.method != bros::Method::Masoba) {
    if (static_cast<int>(pr.solver.ranks.size()) != pr.problem.shape.num_layers())
      throw std::runtime_error("config: solver.ranks must list one rank per layer");
  }
  return pr;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json cfg;
  in >> cfg;
  return cfg;
}

int write_run_output(const ParsedRun& pr, const bros::RunResult& res, const std::string& subcommand) {
  bros::Manifest manifest{subcommand, pr.resolved.dump(), pr.solver.seed};
  bros::write_csv_file(out_path(pr.output), bros::trajectory_table(res.trajectory), manifest);
  const auto& last = res.trajectory.records.back();
  std::printf("method = %s\n", bros::method_name(pr.method).c_str());
  std::printf("iterations = %ld\n", res.final_state.k);
  std::printf("alpha = %.17g\n", res.resolved_alpha);
  std::printf("grad_norm_final = %.12f\n", last.grad_norm);
  std::printf("trace = %s\n", out_path(pr.output).c_str());
  if (res.diverged) {
    std::fprintf(stderr, "error: divergence guard tripped at iteration %ld (partial trace written)\n",
                 res.diverged_at);
    return 3;
  }
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& method_override,
            const std::string& out_override, long seed_override, long iter_override) {
  json cfg = load_config_file(config_path);
  if (!method_override.empty()) cfg["method"] = method_override;
  if (!out_override.empty()) cfg["output"] = out_override;
  ParsedRun pr = parse_run_config(cfg);
  if (seed_override >= 0) {
    pr.solver.seed = static_cast<std::uint64_t>(seed_override);
    pr.resolved["solver"]["seed"] = pr.solver.seed;
  }
  if (iter_override > 0) {
    pr.solver.iterations = iter_override;
    pr.resolved["solver"]["iterations"] = iter_override;
    pr.solver.resolve_alpha();
  }
  const bros::RunResult res = bros::run_solver(pr.problem, pr.solver, pr.method);
  return write_run_output(pr, res, "run");
}

int cmd_counterexample(const std::string& mode, long iterations, double alpha, double c1, double c2, double c3,
                       int rank, long seed, const std::string& out) {
  bros::Method method = bros::Method::NaiveMeanField;
  if (mode == "meanfield-naive") method = bros::Method::NaiveMeanField;
  else if (mode == "stochastic-naive") method = bros::Method::NaiveStochastic;
  else if (mode == "bros") method = bros::Method::Bros;
  else if (mode == "masoba") method = bros::Method::Masoba;
  else throw std::runtime_error("counterexample: unknown mode '" + mode + "'");

  ParsedRun pr;
  pr.problem = bros::make_counterexample();
  pr.method = method;
  pr.output = out;
  pr.solver.iterations = iterations;
  pr.solver.alpha = alpha;
  pr.solver.c1 = c1;
  pr.solver.c2 = c2;
  pr.solver.c3 = c3;
  pr.solver.ranks = {rank};
  pr.solver.seed = static_cast<std::uint64_t>(seed);
  pr.solver.eval_stride = std::max(1L, iterations / 100);
  pr.resolved = json{{"problem", {{"kind", "counterexample"}}},
                     {"mode", mode},
                     {"solver", {{"iterations", iterations}, {"alpha", alpha}, {"c1", c1}, {"c2", c2},
                                 {"c3", c3}, {"ranks", {rank}}, {"seed", pr.solver.seed}}},
                     {"output", out}};
  pr.solver.resolve_alpha();

  const bros::RunResult res = bros::run_solver(pr.problem, pr.solver, method);
  const double x_final = res.final_state.x(0);
  const double grad = bros::exact_hypergradient(pr.problem, res.final_state.x).norm();
  std::printf("mode = %s\n", mode.c_str());
  std::printf("x_final = %.12f\n", x_final);
  std::printf("grad = %.12f\n", grad);
  return write_run_output(pr, res, "counterexample");
}

int cmd_verify_moments(int m, int r, long trials, long seed, const std::string& out) {
  const bros::WeingartenConstants w = bros::weingarten_constants(m, r);
  bros::RngStream stream(static_cast<std::uint64_t>(seed));
  bros::RngStream a_stream = stream.child(0);
  const bros::Matrix a_mat = a_stream.gaussian_matrix(m, m);
  const bros::Matrix closed = bros::expected_self_sandwich(a_mat, r);
  bros::RngStream mc_stream = stream.child(1);
  const bros::Matrix mc = bros::monte_carlo_self_sandwich(mc_stream, a_mat, r, trials);
  bros::RngStream cross_stream = stream.child(2);
  const bros::Matrix cross = bros::monte_carlo_cross_sandwich(cross_stream, a_mat, r, r, trials);

  bros::CsvTable table;
  table.columns = {"which", "i", "j", "closed_form", "monte_carlo", "abs_error"};
  double max_self = 0.0, max_cross = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      table.rows.push_back({0.0, double(i), double(j), closed(i, j), mc(i, j), std::abs(mc(i, j) - closed(i, j))});
      table.rows.push_back({1.0, double(i), double(j), a_mat(i, j), cross(i, j), std::abs(cross(i, j) - a_mat(i, j))});
      max_self = std::max(max_self, std::abs(mc(i, j) - closed(i, j)));
      max_cross = std::max(max_cross, std::abs(cross(i, j) - a_mat(i, j)));
    }
  std::ostringstream cfg;
  cfg << "{\"m\":" << m << ",\"r\":" << r << ",\"trials\":" << trials << ",\"seed\":" << seed << "}";
  bros::write_csv_file(out_path(out), table, bros::Manifest{"verify-moments", cfg.str(),
                                                            static_cast<std::uint64_t>(seed)});
  std::cout << "a = " << w.a << ", b = " << w.b << "\n";
  std::printf("self-sandwich max abs error = %.6g\n", max_self);
  std::printf("cross-sandwich max abs error = %.6g\n", max_cross);
  std::printf("table = %s\n", out_path(out).c_str());
  return 0;
}

int cmd_verify_estimators(long trials, long seed, const std::string& out) {
  bros::CsvTable table;
  table.columns = {"case", "trials", "corrected_rel_err", "naive_rel_err", "naive_vs_prediction_rel_err"};

  // Case 0: single-layer quadratic, corrected vs naive vs Weingarten bias.
  {
    bros::RngStream pstream(static_cast<std::uint64_t>(seed));
    bros::BilevelProblem prob = bros::make_quadratic(pstream, 8, 5, 4, 10.0, 0.0, 0.0);
    const int r = 3;
    bros::RngStream zs = bros::RngStream(static_cast<std::uint64_t>(seed)).child(100);
    const bros::BlockVar z({zs.gaussian_matrix(8, 5)});
    const bros::Vector x = bros::Vector::Zero(4);
    const bros::BlockVar y = bros::BlockVar::zero(prob.shape);
    const bros::BlockVar truth = prob.hvp(x, y, z);
    const bros::Matrix pred = bros::mean_field_lifted_hessian(*prob.columnwise_hessian, r) * z.blocks[0];

    bros::BlockVar corr_acc = bros::BlockVar::zero(prob.shape);
    bros::BlockVar naive_acc = bros::BlockVar::zero(prob.shape);
    const bros::RngStream trial_root = bros::RngStream(static_cast<std::uint64_t>(seed)).child(200);
    for (long t = 0; t < trials; ++t) {
      const bros::RngStream ts = trial_root.child(t);
      const bros::ProjectorSet p = bros::sample_projector_set(ts.child(0), prob.shape, {r});
      const bros::ProbeSet probes = bros::sample_probe_set(ts.child(1), prob.shape, {r});
      bros::RngStream ns = ts.child(2);
      const bros::OracleSample sample = bros::sample_projected_oracles(prob, ns, x, y, p);
      corr_acc.blocks[0] += bros::corr_hvp_single_layer(p, z, sample, probes, 0);
      naive_acc = bros::axpy(1.0, bros::naive_lifted_hvp(p, z, sample), naive_acc);
    }
    corr_acc = bros::scale(1.0 / trials, corr_acc);
    naive_acc = bros::scale(1.0 / trials, naive_acc);
    const double tn = bros::norm(truth);
    const double corr_err = bros::norm(bros::axpy(-1.0, truth, corr_acc)) / tn;
    const double naive_err = bros::norm(bros::axpy(-1.0, truth, naive_acc)) / tn;
    const double pred_err = (naive_acc.blocks[0] - pred).norm() / pred.norm();
    table.rows.push_back({0.0, double(trials), corr_err, naive_err, pred_err});
    std::printf("single-layer: corrected rel err %.4f, naive rel err %.4f (bias vs prediction %.4f)\n",
                corr_err, naive_err, pred_err);
  }

  // Case 1: two-layer coupled Hessian, assembled estimator.
  {
    bros::RngStream pstream = bros::RngStream(static_cast<std::uint64_t>(seed)).child(300);
    const bros::BlockShape shape({{4, 2}, {3, 2}});
    bros::BilevelProblem prob = bros::make_coupled_quadratic(pstream, shape, 3, 5.0, 0.0, 0.0);
    const std::vector<int> ranks = {2, 2};
    bros::RngStream zs = bros::RngStream(static_cast<std::uint64_t>(seed)).child(400);
    const bros::BlockVar z = bros::sample_gaussian_blockvar(zs, shape, 1.0);
    const bros::Vector x = bros::Vector::Zero(3);
    const bros::BlockVar y = bros::BlockVar::zero(shape);
    const bros::BlockVar truth = prob.hvp(x, y, z);

    bros::BlockVar acc = bros::BlockVar::zero(shape);
    const bros::RngStream trial_root = bros::RngStream(static_cast<std::uint64_t>(seed)).child(500);
    for (long t = 0; t < trials; ++t) {
      const bros::RngStream ts = trial_root.child(t);
      const bros::ProjectorSet p = bros::sample_projector_set(ts.child(0), shape, ranks);
      const bros::ProbeSet probes = bros::sample_probe_set(ts.child(1), shape, ranks);
      bros::RngStream ns = ts.child(2);
      const bros::OracleSample sample = bros::sample_projected_oracles(prob, ns, x, y, p);
      acc = bros::axpy(1.0, bros::assemble_multilayer_hvp(p, z, sample, probes), acc);
    }
    acc = bros::scale(1.0 / trials, acc);
    const double err = bros::norm(bros::axpy(-1.0, truth, acc)) / bros::norm(truth);
    table.rows.push_back({1.0, double(trials), err, 0.0, 0.0});
    std::printf("two-layer assembled: corrected rel err %.4f\n", err);
  }

  std::ostringstream cfg;
  cfg << "{\"trials\":" << trials << ",\"seed\":" << seed << "}";
  bros::write_csv_file(out_path(out), table, bros::Manifest{"verify-estimators", cfg.str(),
                                                            static_cast<std::uint64_t>(seed)});
  std::printf("table = %s\n", out_path(out).c_str());
  return 0;
}

int cmd_memory_proxy(const std::string& method, long n, long b, long s, long heads, double bs_ratio,
                     long r, double rank_ratio, bool no_attention, const std::string& compare,
                     const std::string& out) {
  bros::BlockDims dims;
  dims.n = n;
  dims.include_attention = !no_attention;
  if (bs_ratio > 0.0) {
    dims.b = 1;
    dims.s = static_cast<long>(std::llround(bs_ratio * n));
    dims.h = 1;
  } else {
    dims.b = b;
    dims.s = s;
    dims.h = heads;
  }
  dims.r = rank_ratio > 0.0 ? static_cast<long>(std::llround(rank_ratio * n)) : r;

  std::string cmp = compare;
  if (cmp.empty() && method != "masoba" && method != "ma-soba") cmp = "masoba";
  std::vector<bros::MemMethod> methods = {bros::mem_method_from_name(method)};
  if (!cmp.empty()) methods.push_back(bros::mem_method_from_name(cmp));

  std::printf("%-10s %14s %14s %14s %14s %14s %16s\n", "method", "state", "hidden", "attention", "projected",
              "directions", "total");
  bros::CsvTable table;
  table.columns = {"method_id", "state", "hidden", "attention", "projected", "directions", "total"};
  for (const auto m : methods) {
    const bros::MemoryBreakdown br = bros::peak_proxy(m, dims);
    std::printf("%-10s %14.1f %14.1f %14.1f %14.1f %14.1f %16.1f\n", bros::mem_method_name(m).c_str(),
                br.state.value(), br.hidden_activation.value(), br.attention.value(),
                br.projected_activation.value(), br.directions.value(), br.total.value());
    table.rows.push_back({double(static_cast<int>(m)), br.state.value(), br.hidden_activation.value(),
                          br.attention.value(), br.projected_activation.value(), br.directions.value(),
                          br.total.value()});
  }
  if (!cmp.empty()) {
    const double red = bros::reduction_ratio(methods[0], methods[1], dims);
    std::printf("reduction of %s vs %s = %.1f%%\n", method.c_str(), cmp.c_str(), 100.0 * red);
  }
  if (!out.empty()) {
    std::ostringstream cfg;
    cfg << "{\"method\":\"" << method << "\",\"n\":" << dims.n << ",\"b\":" << dims.b << ",\"s\":" << dims.s
        << ",\"h\":" << dims.h << ",\"r\":" << dims.r << ",\"attention\":" << (dims.include_attention ? 1 : 0)
        << "}";
    bros::write_csv_file(out_path(out), table, bros::Manifest{"memory-proxy", cfg.str(), 0});
    std::printf("table = %s\n", out_path(out).c_str());
  }
  return 0;
}

void set_json_path(json& cfg, const std::string& dotted, double value) {
  json* node = &cfg;
  std::istringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw std::runtime_error("sweep: empty parameter path");
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
  json& leaf = (*node)[parts.back()];
  if (leaf.is_number_integer() || leaf.is_number_unsigned())
    leaf = static_cast<std::int64_t>(std::llround(value));
  else
    leaf = value;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values_csv,
              const std::string& out_dir) {
  const json base = load_config_file(config_path);
  std::vector<double> values;
  {
    std::istringstream ss(values_csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
  }
  if (values.empty()) throw std::runtime_error("sweep: no values given");

  // Validate every configuration up front so a bad sweep writes nothing.
  std::vector<json> configs;
  for (double v : values) {
    json cfg = base;
    set_json_path(cfg, param, v);
    parse_run_config(cfg);
    configs.push_back(std::move(cfg));
  }

  std::string safe_param = param;
  for (auto& c : safe_param)
    if (c == '.') c = '_';

  std::vector<int> statuses(values.size(), 0);
  std::vector<std::string> messages(values.size());
  std::vector<std::thread> workers;
  for (size_t i = 0; i < values.size(); ++i) {
    workers.emplace_back([&, i] {
      try {
        ParsedRun pr = parse_run_config(configs[i]);
        std::ostringstream name;
        name << out_dir << "/sweep_" << safe_param << "_" << values[i] << ".csv";
        pr.output = name.str();
        pr.resolved["output"] = pr.output;
        const bros::RunResult res = bros::run_solver(pr.problem, pr.solver, pr.method);
        bros::Manifest manifest{"sweep", pr.resolved.dump(), pr.solver.seed};
        bros::write_csv_file(out_path(pr.output), bros::trajectory_table(res.trajectory), manifest);
        if (res.diverged) {
          statuses[i] = 3;
          messages[i] = "divergence guard tripped (partial trace written)";
        }
      } catch (const std::exception& e) {
        statuses[i] = 2;
        messages[i] = e.what();
      }
    });
  }
  for (auto& w : workers) w.join();

  int rc = 0;
  for (size_t i = 0; i < values.size(); ++i) {
    if (statuses[i] == 0) {
      std::printf("%s = %.17g: ok\n", param.c_str(), values[i]);
    } else {
      std::fprintf(stderr, "%s = %.17g: %s\n", param.c_str(), values[i], messages[i].c_str());
      rc = statuses[i];
    }
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomized-subspace bilevel optimization toolkit"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run a solver from a JSON config");
  std::string run_config, run_method, run_out;
  long run_seed = -1, run_iters = 0;
  run->add_option("--config", run_config, "JSON config file")->required();
  run->add_option("--method", run_method, "override: bros|masoba|naive-stochastic|naive-meanfield");
  run->add_option("--out", run_out, "override output CSV path");
  run->add_option("--seed", run_seed, "override solver seed");
  run->add_option("--iterations", run_iters, "override iteration count");

  // counterexample
  auto* ce = app.add_subcommand("counterexample", "Reproduce the biased naive fixed point");
  std::string ce_mode = "meanfield-naive", ce_out = "counterexample_trace.csv";
  long ce_iters = 20000, ce_seed = 0;
  double ce_alpha = 0.05, ce_c1 = 5.0, ce_c2 = 5.0, ce_c3 = 5.0;
  int ce_rank = 2;
  ce->add_option("--mode", ce_mode, "meanfield-naive|stochastic-naive|bros|masoba");
  ce->add_option("--iterations", ce_iters, "iteration count");
  ce->add_option("--alpha", ce_alpha, "base stepsize");
  ce->add_option("--c1", ce_c1, "lower-level coupling");
  ce->add_option("--c2", ce_c2, "auxiliary coupling");
  ce->add_option("--c3", ce_c3, "moving-average coupling");
  ce->add_option("--rank", ce_rank, "subspace rank");
  ce->add_option("--seed", ce_seed, "RNG seed");
  ce->add_option("--out", ce_out, "trace CSV path");

  // verify-moments
  auto* vm = app.add_subcommand("verify-moments", "Monte Carlo check of the sandwich moment identities");
  int vm_m = 3, vm_r = 2;
  long vm_trials = 20000, vm_seed = 1;
  std::string vm_out = "verify_moments.csv";
  vm->add_option("--m", vm_m, "ambient dimension");
  vm->add_option("--r", vm_r, "subspace rank");
  vm->add_option("--trials", vm_trials, "Monte Carlo draws");
  vm->add_option("--seed", vm_seed, "RNG seed");
  vm->add_option("--out", vm_out, "CSV path");

  // verify-estimators
  auto* ve = app.add_subcommand("verify-estimators", "Monte Carlo check of estimator means");
  long ve_trials = 20000, ve_seed = 1;
  std::string ve_out = "verify_estimators.csv";
  ve->add_option("--trials", ve_trials, "Monte Carlo draws");
  ve->add_option("--seed", ve_seed, "RNG seed");
  ve->add_option("--out", ve_out, "CSV path");

  // memory-proxy
  auto* mp = app.add_subcommand("memory-proxy", "Peak-memory proxy for one decoder block");
  std::string mp_method = "bros", mp_compare, mp_out;
  long mp_n = 1024, mp_b = 8, mp_s = 512, mp_h = 16, mp_r = 0;
  double mp_bs_ratio = 0.0, mp_rank_ratio = 0.0;
  bool mp_no_attn = false;
  mp->add_option("--method", mp_method, "bros|masoba|fdehbo|penalty");
  mp->add_option("--n", mp_n, "hidden size");
  mp->add_option("--b", mp_b, "micro-batch size");
  mp->add_option("--s", mp_s, "sequence length");
  mp->add_option("--heads", mp_h, "attention heads");
  mp->add_option("--bs-ratio", mp_bs_ratio, "set b*s = ratio * n (b=1, h=1)");
  mp->add_option("--r", mp_r, "subspace rank");
  mp->add_option("--rank-ratio", mp_rank_ratio, "set r = ratio * n");
  mp->add_flag("--no-attention", mp_no_attn, "drop the attention-score term");
  mp->add_option("--compare", mp_compare, "second method for the reduction ratio");
  mp->add_option("--out", mp_out, "optional CSV path");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run one config across parameter values concurrently");
  std::string sw_config, sw_param, sw_values, sw_dir = ".";
  sw->add_option("--config", sw_config, "JSON config file")->required();
  sw->add_option("--param", sw_param, "dotted config path, e.g. solver.seed")->required();
  sw->add_option("--values", sw_values, "comma-separated values")->required();
  sw->add_option("--out-dir", sw_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_config, run_method, run_out, run_seed, run_iters);
    if (ce->parsed())
      return cmd_counterexample(ce_mode, ce_iters, ce_alpha, ce_c1, ce_c2, ce_c3, ce_rank, ce_seed, ce_out);
    if (vm->parsed()) return cmd_verify_moments(vm_m, vm_r, vm_trials, vm_seed, vm_out);
    if (ve->parsed()) return cmd_verify_estimators(ve_trials, ve_seed, ve_out);
    if (mp->parsed())
      return cmd_memory_proxy(mp_method, mp_n, mp_b, mp_s, mp_h, mp_bs_ratio, mp_r, mp_rank_ratio, mp_no_attn,
                              mp_compare, mp_out);
    if (sw->parsed()) return cmd_sweep(sw_config, sw_param, sw_values, sw_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  std::fprintf(stderr, "error: no subcommand\n");
  return 2;
}
