// trafficeq: command-line front end for the equilibrium solvers.
//
// Exit codes: 0 success, 1 usage/input error, 2 failed validation,
// 3 budget exhausted (results still written), 4 compare mismatch,
// 5 oracle size guard tripped.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <trafficeq/trafficeq.hpp>

namespace fs = std::filesystem;
using namespace trafficeq;

namespace {

enum Exit : int {
  kOk = 0,
  kUsage = 1,
  kInvalid = 2,
  kBudget = 3,
  kMismatch = 4,
  kGuard = 5,
};

struct Inputs {
  std::string network;
  std::string demands;
};

struct SolveOptions {
  std::string model = "beckmann";
  std::string method = "fw";
  std::optional<double> tol;
  std::uint64_t seed = 1;
  std::optional<std::size_t> max_iter;
  std::string variant = "deterministic";
  std::string recovery = "multiplier";
  std::string step_rule = "classic";
  std::string stop_rule = "gap";
  std::size_t check_period = 0;
  std::size_t iterations = 0;
  std::size_t max_restarts = 64;
  bool accelerated = false;
  unsigned threads = 1;
  bool no_timing = false;
};

struct Outcome {
  EdgeVector flows;
  EdgeVector times;
  double objective = 0.0;
  double gap = 0.0;
  double violation = 0.0;
  std::size_t iterations = 0;
  std::size_t restarts = 0;
  bool converged = true;
  std::vector<std::pair<std::string, std::string>> extra;
  std::function<void(std::ostream&)> write_trace;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::pair<Network, DemandTable> load(const Inputs& in) {
  Network net = parse_network(read_text(in.network));
  DemandTable dem = parse_demands(read_text(in.demands), net.node_count());
  net = resolve_terminals(net, dem);
  return {std::move(net), std::move(dem)};
}

void print_diagnostics(const Diagnostics& d) {
  for (const auto& m : d.messages) {
    std::cerr << (m.severity == Severity::fatal ? "error: " : "warning: ") << m.message << '\n';
  }
}

// TRAFFICEQ_THREADS seeds the --threads default; 0 marks an invalid value.
unsigned default_threads() {
  const char* env = std::getenv("TRAFFICEQ_THREADS");
  if (!env) return 1;
  const auto v = parse_index(env);
  return v ? static_cast<unsigned>(*v) : 0;
}

bool pairing_ok(const std::string& model, const std::string& method) {
  if (model == "beckmann") return method == "fw" || method == "oracle";
  return method == "md" || method == "bcd" || method == "oracle";
}

Outcome run_fw(const Network& net, const DemandTable& dem, const SolveOptions& o) {
  FwConfig cfg;
  cfg.rel_tol = o.tol.value_or(0.01);
  if (o.max_iter) cfg.max_iter = *o.max_iter;
  cfg.step_rule = o.step_rule == "shifted" ? StepRule::shifted : StepRule::classic;
  cfg.stop_rule = o.stop_rule == "grip"     ? StopRule::grip
                  : o.stop_rule == "budget" ? StopRule::budget
                                            : StopRule::gap_lower_bound;
  cfg.check_period = o.check_period;
  cfg.threads = o.threads;
  cfg.timing = !o.no_timing;
  auto r = std::make_shared<FwResult>(solve_beckmann(net, dem, cfg));
  Outcome out;
  out.flows = r->flows;
  out.times = edge_times(net, r->flows);
  out.objective = r->psi;
  out.gap = r->certified_gap;
  out.iterations = r->iterations;
  out.converged = r->converged;
  out.extra = {{"epsilon", format_real(r->epsilon)},
               {"psi0", format_real(r->psi0)},
               {"lower_bound", format_real(r->lower)},
               {"l2", format_real(r->l2)}};
  out.write_trace = [r](std::ostream& os) { write_fw_trace_csv(os, r->trace); };
  return out;
}

Outcome run_md(const Network& net, const DemandTable& dem, const SolveOptions& o) {
  MdConfig cfg;
  cfg.tol = o.tol.value_or(1e-2);
  cfg.seed = o.seed;
  cfg.iterations = o.iterations;
  if (o.max_iter) cfg.max_iterations = *o.max_iter;
  cfg.max_restarts = o.max_restarts;
  cfg.variant = o.variant == "sample_od"       ? MdVariant::sample_od
                : o.variant == "sample_origin" ? MdVariant::sample_origin
                                               : MdVariant::deterministic;
  cfg.recovery = o.recovery == "flow_average" ? Recovery::flow_average : Recovery::multiplier;
  cfg.threads = o.threads;
  auto r = std::make_shared<MdResult>(solve_stable_dynamics_md(net, dem, cfg));
  Outcome out;
  out.flows = r->f_rec;
  out.times = r->t_avg;
  out.objective = r->primal;
  out.gap = r->gap;
  out.violation = r->violation;
  out.iterations = r->iterations;
  out.restarts = r->restarts;
  out.converged = r->converged;
  out.extra = {{"residual", format_real(r->residual)},
               {"total_steps", std::to_string(r->total_steps)},
               {"r_bar", format_real(r->r_bar)},
               {"m", format_real(r->m)},
               {"confidence", format_real(r->confidence)},
               {"theory_bound", format_real(r->theory_bound)}};
  out.write_trace = [r](std::ostream& os) { write_md_trace_csv(os, r->trace); };
  return out;
}

Outcome run_bcd(const Network& net, const DemandTable& dem, const SolveOptions& o) {
  SmoothConfig cfg;
  cfg.epsilon = o.tol.value_or(1e-2);
  cfg.seed = o.seed;
  if (o.max_iter) cfg.max_epochs = *o.max_iter;
  cfg.accelerated = o.accelerated;
  cfg.threads = o.threads;
  auto r = std::make_shared<SmoothResult>(solve_sd_bcd(net, dem, cfg));
  Outcome out;
  out.flows = r->f;
  out.times = r->t;
  out.objective = r->primal;
  out.gap = r->gap;
  out.violation = r->violation;
  out.iterations = r->epochs;
  out.converged = r->converged;
  out.extra = {{"residual", format_real(r->residual)},
               {"smoothed_objective", format_real(r->smoothed)},
               {"potential_objective", format_real(r->nonsmooth)}};
  out.write_trace = [r](std::ostream& os) { write_smooth_trace_csv(os, r->trace); };
  return out;
}

Outcome run_oracle(const Network& net, const DemandTable& dem, const SolveOptions& o) {
  Outcome out;
  if (o.model == "beckmann") {
    const double tol = o.tol.value_or(1e-9);
    auto r = o.max_iter ? oracle::beckmann_oracle(net, dem, tol, *o.max_iter)
                        : oracle::beckmann_oracle(net, dem, tol);
    out.flows = r.flows;
    out.times = edge_times(net, r.flows);
    out.objective = r.psi;
    out.gap = r.gap;
    out.iterations = r.iterations;
    out.write_trace = [r](std::ostream& os) {
      os << "iterations,psi,gap\n" << r.iterations << ',' << format_real(r.psi) << ','
         << format_real(r.gap) << '\n';
    };
    return out;
  }
  auto r = oracle::sd_oracle(net, dem);
  if (!r.feasible) throw UsageError("stable-dynamics instance is infeasible (demand exceeds capacity)");
  out.flows = r.flows;
  out.times.assign(net.edge_count(), std::numeric_limits<double>::quiet_NaN());
  out.objective = r.value;
  out.iterations = r.bases_tried;
  out.write_trace = [r](std::ostream& os) {
    os << "bases_tried,value\n" << r.bases_tried << ',' << format_real(r.value) << '\n';
  };
  return out;
}

Outcome run_method(const Network& net, const DemandTable& dem, const SolveOptions& o) {
  if (o.method == "fw") return run_fw(net, dem, o);
  if (o.method == "md") return run_md(net, dem, o);
  if (o.method == "bcd") return run_bcd(net, dem, o);
  return run_oracle(net, dem, o);
}

void write_outputs(const fs::path& dir, const Network& net, const SolveOptions& o,
                   const Outcome& r, double wall) {
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "flows.tsv");
    f << "edge\ttail\thead\tflow\ttime\n";
    for (std::size_t e = 0; e < net.edge_count(); ++e) {
      f << e << '\t' << net.edge(e).tail << '\t' << net.edge(e).head << '\t'
        << format_real(r.flows[e]) << '\t' << format_real(r.times[e]) << '\n';
    }
  }
  {
    std::ofstream f(dir / "trace.csv");
    r.write_trace(f);
  }
  std::ofstream f(dir / "summary.txt");
  f << "model=" << o.model << '\n'
    << "method=" << o.method << '\n'
    << "objective=" << format_real(r.objective) << '\n'
    << "gap=" << format_real(r.gap) << '\n'
    << "violation=" << format_real(r.violation) << '\n'
    << "iterations=" << r.iterations << '\n'
    << "restarts=" << r.restarts << '\n'
    << "seed=" << o.seed << '\n'
    << "converged=" << (r.converged ? "true" : "false") << '\n';
  for (const auto& [k, v] : r.extra) f << k << '=' << v << '\n';
  f << "wall_time=" << format_real(o.no_timing ? 0.0 : wall) << '\n';
}

void add_inputs(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--network,-n", in.network, "Network file")->required();
  cmd->add_option("--demands,-d", in.demands, "Demand file")->required();
}

void add_solver_options(CLI::App* cmd, SolveOptions& o) {
  cmd->add_option("--model", o.model, "beckmann or stable_dynamics")
      ->check(CLI::IsMember({"beckmann", "stable_dynamics"}));
  cmd->add_option("--method", o.method, "fw, md, bcd or oracle")
      ->check(CLI::IsMember({"fw", "md", "bcd", "oracle"}));
  cmd->add_option("--tol", o.tol,
                  "Relative tolerance for beckmann, absolute gap for stable_dynamics");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--max-iter", o.max_iter,
                  "fw iterations, md run length cap, bcd epochs or oracle iterations");
  cmd->add_option("--variant", o.variant, "md subgradient variant")
      ->check(CLI::IsMember({"deterministic", "sample_od", "sample_origin"}));
  cmd->add_option("--recovery", o.recovery, "md primal recovery")
      ->check(CLI::IsMember({"multiplier", "flow_average"}));
  cmd->add_option("--step-rule", o.step_rule, "fw step rule")
      ->check(CLI::IsMember({"classic", "shifted"}));
  cmd->add_option("--stop-rule", o.stop_rule, "fw stopping rule")
      ->check(CLI::IsMember({"gap", "grip", "budget"}));
  cmd->add_option("--check-period", o.check_period, "fw gap check period (0: round(1/tol))");
  cmd->add_option("--iterations", o.iterations, "md run length N (0: derived from tol)");
  cmd->add_option("--max-restarts", o.max_restarts, "md restart budget");
  cmd->add_flag("--accelerated", o.accelerated, "bcd accelerated mode");
  cmd->add_option("--threads", o.threads,
                  "Worker threads for shortest paths (default: TRAFFICEQ_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--no-timing", o.no_timing, "Zero all wall-clock fields");
}

int cmd_validate(const Inputs& in) {
  auto [net, dem] = load(in);
  const Diagnostics d = validate(net, dem);
  print_diagnostics(d);
  std::cout << (d.ok ? "ok" : "invalid") << ": " << net.node_count() << " nodes, "
            << net.edge_count() << " edges, " << dem.size() << " od pairs\n";
  return d.ok ? kOk : kInvalid;
}

int cmd_solve(const Inputs& in, const SolveOptions& o, const std::string& out_dir) {
  auto [net, dem] = load(in);
  const Diagnostics d = validate(net, dem);
  print_diagnostics(d);
  if (!d.ok) return kInvalid;
  const auto start = std::chrono::steady_clock::now();
  const Outcome r = run_method(net, dem, o);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_outputs(out_dir, net, o, r, wall);
  std::cout << o.model << '/' << o.method << ": objective " << format_real(r.objective) << ", gap "
            << format_real(r.gap) << (r.converged ? "" : " (budget exhausted)") << '\n';
  return r.converged ? kOk : kBudget;
}

int cmd_compare(const Inputs& in, const SolveOptions& o, double rel_tol) {
  auto [net, dem] = load(in);
  const Diagnostics d = validate(net, dem);
  print_diagnostics(d);
  if (!d.ok) return kInvalid;
  SolveOptions oracle_opts = o;
  oracle_opts.method = "oracle";
  oracle_opts.tol.reset();
  oracle_opts.max_iter.reset();
  const Outcome ref = run_oracle(net, dem, oracle_opts);
  const Outcome r = run_method(net, dem, o);
  const double abs_delta = std::abs(r.objective - ref.objective);
  const double rel_delta = abs_delta / std::max(std::abs(ref.objective), 1e-300);
  std::cout << "solver=" << format_real(r.objective) << '\n'
            << "oracle=" << format_real(ref.objective) << '\n'
            << "abs_delta=" << format_real(abs_delta) << '\n'
            << "rel_delta=" << format_real(rel_delta) << '\n';
  return rel_delta <= rel_tol ? kOk : kMismatch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium traffic assignment solvers"};
  app.require_subcommand(1);

  Inputs in;
  SolveOptions opts;
  opts.threads = default_threads();
  std::string out_dir = ".";
  double rel_tol = 1e-2;

  auto* validate_cmd = app.add_subcommand("validate", "Check that every od pair is routable");
  add_inputs(validate_cmd, in);

  auto* solve_cmd = app.add_subcommand("solve", "Run a solver and write flows, trace and summary");
  add_inputs(solve_cmd, in);
  add_solver_options(solve_cmd, opts);
  solve_cmd->add_option("--out-dir,-o", out_dir, "Output directory");

  auto* compare_cmd = app.add_subcommand("compare", "Compare a solver against the matching oracle");
  add_inputs(compare_cmd, in);
  add_solver_options(compare_cmd, opts);
  compare_cmd->add_option("--rel-tol", rel_tol, "Allowed relative objective difference");

  auto* oracle_cmd = app.add_subcommand("oracle", "Solve a tiny instance by brute force");
  add_inputs(oracle_cmd, in);
  oracle_cmd->add_option("--model", opts.model, "beckmann or stable_dynamics")
      ->check(CLI::IsMember({"beckmann", "stable_dynamics"}));
  oracle_cmd->add_option("--tol", opts.tol, "Beckmann oracle gap tolerance");
  oracle_cmd->add_option("--out-dir,-o", out_dir, "Output directory");
  oracle_cmd->add_flag("--no-timing", opts.no_timing, "Zero all wall-clock fields");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (opts.threads == 0) {
    std::cerr << "error: thread count must be a positive integer\n";
    return kUsage;
  }

  try {
    if (*validate_cmd) return cmd_validate(in);
    if (*oracle_cmd) {
      opts.method = "oracle";
      return cmd_solve(in, opts, out_dir);
    }
    if (!pairing_ok(opts.model, opts.method)) {
      std::cerr << "error: method '" << opts.method << "' does not apply to model '" << opts.model
                << "'\n\n"
                << (*solve_cmd ? solve_cmd : compare_cmd)->help();
      return kUsage;
    }
    if (*compare_cmd) {
      if (opts.method == "oracle") throw UsageError("compare needs a solver method, not oracle");
      return cmd_compare(in, opts, rel_tol);
    }
    return cmd_solve(in, opts, out_dir);
  } catch (const oracle::GuardError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kGuard;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
