#include "dopf/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "dopf/coordinator.hpp"
#include "dopf/network_io.hpp"
#include "dopf/partition.hpp"
#include "dopf/run_record.hpp"
#include "dopf/synth.hpp"

namespace dopf {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthArgs {
  FeederSpec spec;
  double load_p = 0.1, load_q = 0.01, r = 0.07, x = 0.01;
  std::string z_divisor = "1";
  std::string out;
};

struct ScenarioArgs {
  std::optional<double> penetration;
  double rating_kva = 8.4;
  double p_kw = 7.0;
  std::string der_mode;
  double load_multiplier = 1.0;
  std::uint64_t seed = 1;
};

struct SolveArgs {
  std::string objective = "loss-min";
  int max_area_nodes = 100;
  double alpha = 0.0;
  double eps_tol = 1e-3;
  int max_macro_iters = 500;
  double kkt_tol = 1e-6;
  int max_iter = 300;
  std::optional<double> time_budget;
  int threads = 0;
  std::string warm_start = "auto";
};

struct RunArgs {
  std::string network;
  std::string mode = "distributed";
  std::optional<double> v0;
  std::string out_dir = ".";
  std::string prefix = "run";
};

struct CompareArgs {
  std::vector<std::string> records;
  std::vector<int> sweep;
  std::string out;
};

struct PartitionArgs {
  std::string network;
  int max_area_nodes = 100;
  std::string out;
};

void add_scenario_flags(CLI::App* cmd, ScenarioArgs& a) {
  cmd->add_option("--penetration", a.penetration, "Fraction of load buses given a DER (replaces existing DERs)")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--rating-kva", a.rating_kva, "DER apparent rating")->check(CLI::NonNegativeNumber);
  cmd->add_option("--p-kw", a.p_kw, "DER nominal active output")->check(CLI::NonNegativeNumber);
  cmd->add_option("--der-mode", a.der_mode, "reactive or active (default follows the objective)")
      ->check(CLI::IsMember({"reactive", "active"}));
  cmd->add_option("--load-multiplier", a.load_multiplier, "Scale on every load (with --penetration)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", a.seed, "Seed for DER placement");
}

void add_solve_flags(CLI::App* cmd, SolveArgs& a) {
  cmd->add_option("--objective", a.objective, "loss-min, der-max or dv-min")
      ->check(CLI::IsMember({"loss-min", "der-max", "dv-min"}));
  cmd->add_option("--max-area-nodes", a.max_area_nodes, "Largest area size")->check(CLI::PositiveNumber);
  cmd->add_option("--alpha", a.alpha, "FPI damping")->check(CLI::NonNegativeNumber);
  cmd->add_option("--eps-tol", a.eps_tol, "Consensus tolerance")->check(CLI::PositiveNumber);
  cmd->add_option("--max-macro-iters", a.max_macro_iters, "Macro-iteration budget")->check(CLI::PositiveNumber);
  cmd->add_option("--kkt-tol", a.kkt_tol, "Subproblem KKT tolerance")->check(CLI::PositiveNumber);
  cmd->add_option("--max-iter", a.max_iter, "Subproblem iteration limit")->check(CLI::PositiveNumber);
  cmd->add_option("--time-budget", a.time_budget, "Wall-time budget in seconds")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", a.threads, "Concurrent area solves (0: DOPF_THREADS or hardware)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--warm-start", a.warm_start, "auto, on or off: reuse each area's previous solution")
      ->check(CLI::IsMember({"auto", "on", "off"}));
}

DerScenario make_scenario(const ScenarioArgs& a, Objective objective) {
  DerScenario s;
  s.penetration = a.penetration.value_or(0.0);
  s.rating_kva = a.rating_kva;
  s.p_nominal_kw = a.p_kw;
  s.load_multiplier = a.load_multiplier;
  s.seed = a.seed;
  if (a.der_mode.empty())
    s.mode = dispatch_kind(objective);
  else
    s.mode = dispatch_mode_from_string(a.der_mode);
  if (s.mode == DispatchMode::Reactive && s.rating_kva < s.p_nominal_kw)
    throw UsageError("--rating-kva must be at least --p-kw in reactive mode");
  return s;
}

nlohmann::json scenario_json(const DerScenario& s) {
  return {{"penetration", s.penetration}, {"rating_kva", s.rating_kva}, {"p_nominal_kw", s.p_nominal_kw},
          {"mode", to_string(s.mode)},     {"load_multiplier", s.load_multiplier}, {"seed", s.seed}};
}

NlpOptions nlp_options(const SolveArgs& a) {
  NlpOptions o;
  o.kkt_tol = a.kkt_tol;
  o.max_iter = a.max_iter;
  return o;
}

FpiConfig fpi_config(const SolveArgs& a) {
  FpiConfig c;
  c.alpha = a.alpha;
  c.eps_tol = a.eps_tol;
  c.max_macro_iters = a.max_macro_iters;
  c.threads = a.threads;
  c.nlp = nlp_options(a);
  c.warm_start = a.warm_start == "on" ? WarmStart::On : a.warm_start == "off" ? WarmStart::Off : WarmStart::Auto;
  if (a.time_budget) c.time_budget = std::chrono::duration<double>(*a.time_budget);
  return c;
}

int exit_code(RunStatus status) {
  switch (status) {
    case RunStatus::Converged: return kExitOk;
    case RunStatus::NoConsensus: return kExitNoConsensus;
    case RunStatus::SubproblemFailure:
    case RunStatus::TimeBudgetExceeded: return kExitSolveFailure;
  }
  return kExitError;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(precision) << v;
  return os.str();
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  FeederSpec spec = a.spec;
  spec.load = {a.load_p, a.load_q};
  spec.z = {a.r, a.x};
  double divisor = 1.0;
  if (a.z_divisor == "auto") {
    divisor = feasible_impedance_divisor(spec);
    if (divisor == 0.0) throw UsageError("no impedance divisor up to 1e12 gives a feasible power flow");
  } else {
    try {
      divisor = std::stod(a.z_divisor);
    } catch (const std::exception&) {
      throw UsageError("--z-divisor must be a positive number or 'auto'");
    }
    if (!(divisor > 0.0)) throw UsageError("--z-divisor must be a positive number or 'auto'");
  }
  spec.z /= divisor;
  RadialNetwork net = [&] {
    try {
      return build_feeder(spec);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }();
  write_network(a.out, net.data());
  out << "buses " << net.bus_count() << "\nbranches " << net.branch_count() << "\nz_divisor " << fmt(divisor) << '\n';
  return kExitOk;
}

int cmd_run(const RunArgs& r, const ScenarioArgs& sa, const SolveArgs& s, std::ostream& out) {
  const Objective objective = objective_from_string(s.objective);
  RadialNetwork net = read_network(r.network);
  nlohmann::json echo{{"network", r.network}};
  if (r.v0 || sa.penetration) {
    NetworkData data = net.data();
    if (r.v0) data.v0 = *r.v0;
    net = RadialNetwork(std::move(data));
  }
  if (sa.penetration) {
    const DerScenario scenario = make_scenario(sa, objective);
    net = place_ders(net, scenario);
    echo["scenario"] = scenario_json(scenario);
  }
  echo["v0"] = net.v0();

  RunRecord rec;
  if (r.mode == "central") {
    std::optional<std::chrono::duration<double>> budget;
    if (s.time_budget) budget = std::chrono::duration<double>(*s.time_budget);
    rec = run_central(net, objective, nlp_options(s), budget);
  } else {
    const Partition part = decompose(net, s.max_area_nodes);
    rec = run_distributed(net, part, objective, fpi_config(s));
    echo["max_area_nodes"] = s.max_area_nodes;
  }
  rec.config["run"] = echo;

  fs::create_directories(r.out_dir);
  const fs::path base = fs::path(r.out_dir) / r.prefix;
  write_record(base.string() + "_record.json", rec);
  {
    std::ofstream csv(base.string() + "_convergence.csv");
    write_convergence_csv(csv, rec);
  }
  {
    std::ofstream csv(base.string() + "_voltage.csv");
    write_voltage_csv(csv, rec);
  }
  out << "status " << to_string(rec.status) << "\nmacro_iterations " << rec.macro_iterations << "\nareas "
      << rec.area_count << "\nobjective " << fmt(rec.objective_physical, 10) << ' ' << rec.objective_unit
      << "\nwall_time_s " << fmt(rec.wall_time_s) << '\n';
  if (!rec.detail.empty()) out << "detail " << rec.detail << '\n';
  return exit_code(rec.status);
}

int compare_pair(const CompareArgs& c, std::ostream& out) {
  const RunRecord a = read_record(c.records[0]);
  const RunRecord b = read_record(c.records[1]);
  const RecordComparison cmp = compare_records(a, b);
  auto total_time = [](const RunRecord& r) {
    double t = 0.0;
    for (const auto& it : r.history) t += it.max_area_time_s;
    return t;
  };
  out << "objective_gap_percent " << fmt(cmp.gap_percent, 8) << '\n';
  out << "record,mode,status,macro_iterations,objective,unit,solve_time_s,wall_time_s\n";
  for (std::size_t i = 0; i < 2; ++i) {
    const RunRecord& r = i == 0 ? a : b;
    out << c.records[i] << ',' << r.mode << ',' << to_string(r.status) << ',' << r.macro_iterations << ','
        << fmt(r.objective_physical, 10) << ',' << r.objective_unit << ',' << fmt(total_time(r)) << ','
        << fmt(r.wall_time_s) << '\n';
  }
  return kExitOk;
}

int compare_sweep(const CompareArgs& c, const ScenarioArgs& sa, const SolveArgs& s, std::ostream& out) {
  const Objective objective = objective_from_string(s.objective);
  ScenarioArgs scen = sa;
  if (!scen.penetration) scen.penetration = 1.0;
  const DerScenario scenario = make_scenario(scen, objective);

  std::ostringstream csv;
  csv << "target_nodes,nodes,impedance_divisor,central_status,central_time_s,central_objective,"
         "distributed_status,distributed_time_s,distributed_macro_iterations,distributed_objective,gap_percent\n";
  FeederSpec shape;
  shape.neighborhoods_per_lateral = 5;
  shape.households_per_neighborhood = 9;
  shape.main_nodes_between_laterals = 4;
  for (int target : c.sweep) {
    if (target < 2) throw UsageError("sweep sizes must be at least 2");
    FeederSpec spec = feeder_spec_for_size(target, shape);
    const double divisor = feasible_impedance_divisor(spec);
    if (divisor == 0.0) throw UsageError("no feasible impedance scaling for size " + std::to_string(target));
    spec.z /= divisor;
    const RadialNetwork net = place_ders(build_feeder(spec), scenario);

    std::optional<std::chrono::duration<double>> budget;
    if (s.time_budget) budget = std::chrono::duration<double>(*s.time_budget);
    const RunRecord central = run_central(net, objective, nlp_options(s), budget);
    const RunRecord dist = run_distributed(net, decompose(net, s.max_area_nodes), objective, fpi_config(s));
    const double gap = central.converged && dist.converged ? compare_records(central, dist).gap_percent : -1.0;
    csv << target << ',' << net.bus_count() << ',' << fmt(divisor) << ',' << to_string(central.status) << ','
        << fmt(central.wall_time_s) << ',' << fmt(central.objective_physical, 10) << ',' << to_string(dist.status) << ','
        << fmt(dist.wall_time_s) << ',' << dist.macro_iterations << ',' << fmt(dist.objective_physical, 10) << ','
        << fmt(gap) << '\n';
  }
  if (c.out.empty()) {
    out << csv.str();
  } else {
    std::ofstream f(c.out);
    if (!f) throw UsageError("cannot write " + c.out);
    f << csv.str();
    out << "wrote " << c.out << '\n';
  }
  return kExitOk;
}

int cmd_partition(const PartitionArgs& p, std::ostream& out) {
  const RadialNetwork net = read_network(p.network);
  const Partition part = decompose(net, p.max_area_nodes);
  std::ofstream f(p.out);
  if (!f) throw UsageError("cannot write " + p.out);
  f << partition_to_json(part).dump(1) << '\n';
  out << "areas " << part.areas.size() << "\ninterfaces " << part.interfaces.size() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distributed optimal power flow for radial feeders", "dopf"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic feeder");
  c_synth->add_option("--laterals", synth.spec.laterals)->check(CLI::PositiveNumber);
  c_synth->add_option("--neighborhoods", synth.spec.neighborhoods_per_lateral)->check(CLI::PositiveNumber);
  c_synth->add_option("--households", synth.spec.households_per_neighborhood)->check(CLI::PositiveNumber);
  c_synth->add_option("--main-nodes", synth.spec.main_nodes_between_laterals)->check(CLI::PositiveNumber);
  c_synth->add_option("--load-p", synth.load_p, "Per-bus active load, pu")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--load-q", synth.load_q, "Per-bus reactive load, pu");
  c_synth->add_option("--r", synth.r, "Branch resistance, pu")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--x", synth.x, "Branch reactance, pu")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--v0", synth.spec.v0, "Squared substation voltage")->check(CLI::PositiveNumber);
  c_synth->add_option("--i-rated-sq", synth.spec.i_rated_sq, "Squared ampacity")->check(CLI::PositiveNumber);
  c_synth->add_option("--z-divisor", synth.z_divisor, "Divide impedances by this, or 'auto' for the smallest feasible power of ten");
  c_synth->add_option("-o,--out", synth.out, "Network file to write")->required();

  RunArgs run;
  ScenarioArgs run_scen;
  SolveArgs run_solve;
  auto* c_run = app.add_subcommand("run", "Solve an OPF centrally or distributed");
  c_run->add_option("-n,--network", run.network, "Network file")->required()->check(CLI::ExistingFile);
  c_run->add_option("--mode", run.mode)->check(CLI::IsMember({"central", "distributed"}));
  c_run->add_option("--v0", run.v0, "Override the squared substation voltage")->check(CLI::PositiveNumber);
  c_run->add_option("-o,--out-dir", run.out_dir, "Directory for the record and CSV files");
  c_run->add_option("--prefix", run.prefix, "Output file prefix");
  add_scenario_flags(c_run, run_scen);
  add_solve_flags(c_run, run_solve);

  CompareArgs cmp;
  ScenarioArgs cmp_scen;
  SolveArgs cmp_solve;
  auto* c_cmp = app.add_subcommand("compare", "Compare two run records or sweep central vs distributed");
  c_cmp->add_option("records", cmp.records, "Two run record files")->expected(2)->check(CLI::ExistingFile);
  c_cmp->add_option("--sweep", cmp.sweep, "Comma-separated bus counts")->delimiter(',');
  c_cmp->add_option("-o,--out", cmp.out, "CSV file for the sweep");
  add_scenario_flags(c_cmp, cmp_scen);
  add_solve_flags(c_cmp, cmp_solve);

  PartitionArgs part;
  auto* c_part = app.add_subcommand("partition", "Export the area decomposition of a network");
  c_part->add_option("-n,--network", part.network, "Network file")->required()->check(CLI::ExistingFile);
  c_part->add_option("--max-area-nodes", part.max_area_nodes)->check(CLI::PositiveNumber);
  c_part->add_option("-o,--out", part.out, "JSON file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "dopf: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*c_synth) return cmd_synth(synth, out);
    if (*c_run) return cmd_run(run, run_scen, run_solve, out);
    if (*c_cmp) {
      const bool pair = !cmp.records.empty();
      if (pair == !cmp.sweep.empty()) throw UsageError("compare needs either two record files or --sweep");
      return pair ? compare_pair(cmp, out) : compare_sweep(cmp, cmp_scen, cmp_solve, out);
    }
    if (*c_part) return cmd_partition(part, out);
  } catch (const UsageError& e) {
    err << "dopf: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SchemaError& e) {
    err << "dopf: schema mismatch: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NetworkError& e) {
    err << "dopf: invalid network: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "dopf: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace dopf
