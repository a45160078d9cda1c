// rexsim command-line runner.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rexsim/config.hpp"
#include "rexsim/oracle.hpp"
#include "rexsim/protocol.hpp"
#include "rexsim/stats.hpp"
#include "rexsim/train.hpp"

namespace {

using namespace rexsim;

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kRuntimeFailure = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--mode", c.mode, "rex, baseline, naive-is, coarse-ppd or no-filter");
  cmd->add_option("--set", c.overrides, "extra key=value override, repeatable");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.mode.empty()) cfg.mode = parse_mode(c.mode);
  cfg.validate();
  return cfg;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> read_outcomes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<int> out;
  std::string tok;
  while (in >> tok) {
    if (tok == "0") out.push_back(0);
    else if (tok == "1") out.push_back(1);
    else throw Error(ErrorCode::ParseError, path + ": expected 0 or 1, got '" + tok + "'");
  }
  return out;
}

int run_train(const Common& c, const std::string& dump) {
  const RunConfig cfg = resolve(c);
  const TrainResult r = train(cfg, c.out);
  if (!dump.empty()) write_dump(dump, r.last_step);
  std::printf("initial_dead_end_rate %.6f\nfinal_success_rate %.6f\nfinal_dead_end_rate %.6f\n",
              r.initial_dead_end_rate, r.final_success_rate, r.final_dead_end_rate);
  return kOk;
}

int run_sweep(const Common& c, const std::string& axis, const std::string& values) {
  const RunConfig cfg = resolve(c);
  const auto rows = sweep(cfg, axis, split(values, ','), c.out);
  std::printf("%-12s %-20s %-20s\n", axis.c_str(), "final_success_rate", "final_dead_end_rate");
  for (const auto& r : rows) {
    std::printf("%-12s %-20.6f %-20.6f\n", r.value.c_str(), r.result.final_success_rate,
                r.result.final_dead_end_rate);
  }
  return kOk;
}

int run_oracle(const std::string& path, const std::string& json_out) {
  std::vector<oracle::Instance> instances;
  if (path.empty()) instances = oracle::shipped_instances();
  else instances.push_back(oracle::load_instance(path));
  bool all = true;
  std::string records = "[\n";
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto report = oracle::bias_report(instances[i]);
    oracle::print_report(std::cout, report);
    all = all && report.certified();
    records += oracle::report_json(report);
    records += i + 1 < instances.size() ? ",\n" : "\n";
  }
  records += "]\n";
  if (json_out.empty()) {
    std::cout << records;
  } else {
    std::ofstream out(json_out);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + json_out);
    out << records;
  }
  std::cout << (all ? "certified\n" : "NOT certified\n");
  return all ? kOk : kRuntimeFailure;
}

int run_mcnemar(const std::string& first, const std::string& second, std::size_t exact_below) {
  const auto a = read_outcomes(first);
  const auto b = read_outcomes(second);
  const auto pairs = stats::pair_outcomes(a, b);
  const auto r = stats::mcnemar(pairs, exact_below);
  std::printf("a=%zu b=%zu c=%zu d=%zu\nmethod %s\nstatistic %.6f\np_value %.6g\n", pairs.a, pairs.b,
              pairs.c, pairs.d, std::string(stats::to_string(r.method)).c_str(), r.statistic, r.p_value);
  return kOk;
}

int run_protocol_check(const Common& c, const std::string& dump) {
  const RunConfig cfg = resolve(c);
  const World world = build_world(cfg);
  const auto trajectories = read_dump(dump);
  std::size_t ok = 0, invalid = 0;
  std::vector<std::size_t> faults(protocol::kFaultCount, 0);
  for (const auto& t : trajectories) {
    if (validate_trajectory(t, world.vocab())) {
      ++invalid;
      continue;
    }
    if (t.tokens.empty()) {
      ++invalid;
      continue;
    }
    const auto r = protocol::parse(t.tokens, world.vocab(), cfg.max_search_turns);
    if (const auto* f = std::get_if<protocol::ParseFailure>(&r)) {
      ++faults[static_cast<std::size_t>(f->fault)];
    } else {
      ++ok;
    }
  }
  std::printf("well_formed %zu\n", ok);
  for (std::size_t i = 0; i < faults.size(); ++i) {
    std::printf("%s %zu\n", std::string(protocol::to_string(static_cast<protocol::Fault>(i))).c_str(), faults[i]);
  }
  std::printf("invalid_record %zu\n", invalid);
  return ok == trajectories.size() ? kOk : kRuntimeFailure;
}

int run_env_dump(const Common& c) {
  RunConfig cfg = resolve(c);
  if (c.seed) cfg.world_seed = *c.seed;
  const World world = build_world(cfg);
  if (c.out.empty()) {
    write_fact_tsv(std::cout, world);
  } else {
    std::ofstream out(c.out);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + c.out);
    write_fact_tsv(out, world);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rexsim: mixed-policy GRPO simulator"};
  app.require_subcommand(1);

  Common common;
  std::string dump, axis, values, json_out, first, second, dump_in;
  std::size_t exact_below = 25;

  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  add_common(train_cmd, common);
  train_cmd->add_option("--dump", dump, "write the last step's trajectories to this file");

  auto* sweep_cmd = app.add_subcommand("sweep", "one training run per axis value");
  add_common(sweep_cmd, common);
  sweep_cmd->add_option("--axis", axis, "p, alpha or pool_size")->required();
  sweep_cmd->add_option("--values", values, "comma-separated values")->required();

  auto* oracle_cmd = app.add_subcommand("oracle-check", "exhaustive estimator check on tiny instances");
  oracle_cmd->add_option("--config", common.config, "instance file; defaults to the shipped instances");
  oracle_cmd->add_option("--json", json_out, "write the machine-readable record here");

  auto* mcnemar_cmd = app.add_subcommand("mcnemar", "paired test on two 0/1 outcome files");
  mcnemar_cmd->add_option("first", first)->required();
  mcnemar_cmd->add_option("second", second)->required();
  mcnemar_cmd->add_option("--exact-below", exact_below, "use the exact test when b + c is below this");

  auto* protocol_cmd = app.add_subcommand("protocol-check", "parse every trajectory of a dump");
  add_common(protocol_cmd, common);
  protocol_cmd->add_option("dump", dump_in)->required();

  auto* env_cmd = app.add_subcommand("env-dump", "write the world's fact table as TSV");
  add_common(env_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    if (*train_cmd) return run_train(common, dump);
    if (*sweep_cmd) return run_sweep(common, axis, values);
    if (*oracle_cmd) return run_oracle(common.config, json_out);
    if (*mcnemar_cmd) return run_mcnemar(first, second, exact_below);
    if (*protocol_cmd) return run_protocol_check(common, dump_in);
    if (*env_cmd) return run_env_dump(common);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return e.code() == ErrorCode::ConfigError ? kConfigFailure : kRuntimeFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
  return kOk;
}
