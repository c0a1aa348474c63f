#include "snowpac/cli.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <type_traits>
#include <variant>

#include "CLI11.hpp"
#include "snowpac/harness.hpp"
#include "snowpac/problems.hpp"

namespace snowpac::cli {

namespace {

using Config = engine::OptimizerConfig;
using Member = std::variant<double Config::*, int Config::*, std::uint64_t Config::*,
                            bool Config::*>;

struct ConfigField {
  const char* key;
  Member member;
  const char* help;
};

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      {"eta0", &Config::eta0, "acceptance threshold on the agreement ratio"},
      {"eta1", &Config::eta1, "expansion threshold on the agreement ratio"},
      {"gamma_shrink", &Config::gamma_shrink, "radius contraction on rejection"},
      {"gamma_inc", &Config::gamma_inc, "radius expansion on strong acceptance"},
      {"omega", &Config::omega, "contraction inside the criticality loop"},
      {"theta_tr", &Config::theta_tr, "contraction on an infeasible trial point"},
      {"rho0", &Config::rho0, "initial trust-region radius"},
      {"rho_min", &Config::rho_min, "terminate when the radius falls below this"},
      {"rho_max", &Config::rho_max, "hard radius cap"},
      {"lambda_t", &Config::lambda_t, "radius floor factor on the noise amplitude"},
      {"lambda_max", &Config::lambda_max, "poisedness threshold for model nodes"},
      {"lambda_g", &Config::lambda_g, "linear regularizer of the restoration merit"},
      {"t_quantile", &Config::t_quantile, "error bounds are t standard errors"},
      {"crit_threshold", &Config::crit_threshold, "criticality measure threshold"},
      {"crit_mu", &Config::crit_mu, "radius/criticality ratio bound"},
      {"gp_refit_every", &Config::gp_refit_every,
       "refit GP hyperparameters every this many evaluations"},
      {"lambda_k", &Config::lambda_k, "refit after lambda_k * dim rejected steps"},
      {"n_max", &Config::n_max, "evaluation budget including initialization"},
      {"seed", &Config::seed, "random seed"},
      {"exploration_std", &Config::exploration_std,
       "interpret the exploration width as a standard deviation"},
  };
  return fields;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double parse_double_value(const std::string& text, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("invalid value for " + key + ": " + text);
}

long long parse_int_value(const std::string& text, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (pos == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("invalid value for " + key + ": " + text);
}

std::uint64_t parse_seed_value(const std::string& text, const std::string& key) {
  try {
    if (!text.empty() && text[0] != '-') {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(text, &pos);
      if (pos == text.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("invalid value for " + key + ": " + text);
}

bool parse_bool_value(const std::string& text, const std::string& key) {
  if (text == "0" || text == "false") return false;
  if (text == "1" || text == "true") return true;
  throw std::invalid_argument("invalid value for " + key + ": " + text);
}

void apply_config_line(Config& config, const std::string& key, const std::string& value) {
  for (const auto& field : config_fields()) {
    if (key != field.key) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(std::declval<Config>().*member)>;
          if constexpr (std::is_same_v<T, double>)
            config.*member = parse_double_value(value, key);
          else if constexpr (std::is_same_v<T, int>)
            config.*member = static_cast<int>(parse_int_value(value, key));
          else if constexpr (std::is_same_v<T, std::uint64_t>)
            config.*member = parse_seed_value(value, key);
          else
            config.*member = parse_bool_value(value, key);
        },
        field.member);
    return;
  }
  throw std::invalid_argument("unknown configuration key: " + key);
}

std::string kebab(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

// Per-subcommand staging of optimizer overrides: flags beat config-file
// values, which beat the seed environment fallback, which beats defaults.
struct OverrideSet {
  std::vector<std::function<void(Config&)>> appliers;
};

void add_optimizer_flags(CLI::App* cmd, OverrideSet& overrides, const Config& defaults) {
  for (const auto& field : config_fields()) {
    if (std::string_view(field.key) == "seed") continue;  // dedicated --seed flag
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(std::declval<Config>().*member)>;
          auto staged = std::make_shared<T>(defaults.*member);
          const std::string name = kebab(field.key);
          CLI::Option* opt;
          if constexpr (std::is_same_v<T, bool>)
            opt = cmd->add_flag("--" + name + ",!--no-" + name, *staged, field.help);
          else
            opt = cmd->add_option("--" + name, *staged, field.help)->capture_default_str();
          overrides.appliers.push_back([opt, staged, member](Config& config) {
            if (opt->count() > 0) config.*member = *staged;
          });
        },
        field.member);
  }
}

// Flags shared by the campaign and profile subcommands.
struct CampaignFlags {
  std::vector<std::string> problems;
  std::vector<std::string> formulations{"mean-mean", "mean-q95", "cvar95-mean"};
  std::vector<int> sample_sizes{200};
  int repeats = 10;
  int workers = 1;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  std::string config_path;
  std::string dump_path;
  OverrideSet overrides;
};

void add_campaign_flags(CLI::App* cmd, CampaignFlags& flags, const Config& defaults,
                        const std::string& default_out) {
  flags.problems = problems::problem_names();
  flags.out = default_out;
  cmd->add_option("--problem", flags.problems, "problem names (default: all registered)")
      ->delimiter(',');
  cmd->add_option("--formulation", flags.formulations,
                  "robust formulations: mean-mean, mean-q95, cvar95-mean")
      ->delimiter(',');
  cmd->add_option("--n-samples", flags.sample_sizes, "sample sizes per estimate")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--repeats", flags.repeats, "independent repetitions per setting")
      ->capture_default_str();
  cmd->add_option("--workers", flags.workers, "worker threads (results are identical)")
      ->capture_default_str();
  flags.seed_opt = cmd->add_option("--seed", flags.seed, "master seed for derived run seeds");
  cmd->add_option("--out", flags.out, "output CSV path")->capture_default_str();
  cmd->add_option("--config", flags.config_path, "flat key = value configuration file");
  cmd->add_option("--dump-config", flags.dump_path,
                  "write the effective optimizer configuration and exit");
  add_optimizer_flags(cmd, flags.overrides, defaults);
}

std::uint64_t seed_from_environment(std::uint64_t fallback) {
  const char* env = std::getenv("SNOWPAC_SEED");
  if (env == nullptr) return fallback;
  return parse_seed_value(env, "SNOWPAC_SEED");
}

Config effective_config(const Config& defaults, const std::string& config_path,
                        const OverrideSet& overrides, const CLI::Option* seed_opt,
                        std::uint64_t seed_flag) {
  Config config = defaults;
  config.seed = seed_from_environment(config.seed);
  if (!config_path.empty()) config = apply_config_file(config, config_path);
  for (const auto& apply : overrides.appliers) apply(config);
  if (seed_opt != nullptr && seed_opt->count() > 0) config.seed = seed_flag;
  config.validate();
  return config;
}

harness::CampaignPlan build_plan(const CampaignFlags& flags, const Config& config) {
  harness::CampaignPlan plan;
  plan.problems = flags.problems;
  for (const auto& name : plan.problems) problems::problem_by_name(name);
  for (const auto& name : flags.formulations)
    plan.formulations.push_back(problems::parse_formulation(name));
  plan.sample_sizes = flags.sample_sizes;
  for (int n : plan.sample_sizes)
    if (n < 1) throw std::invalid_argument("sample sizes must be positive");
  if (flags.repeats < 1) throw std::invalid_argument("repeats must be positive");
  if (flags.workers < 1) throw std::invalid_argument("workers must be positive");
  plan.repeats = flags.repeats;
  plan.workers = flags.workers;
  plan.master_seed = config.seed;
  plan.config = config;
  plan.step_cap = 250;
  return plan;
}

std::string describe_point(const Eigen::VectorXd& x) {
  std::string out = "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (i > 0) out += ", ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", x(i));
    out += buf;
  }
  return out + ")";
}

int finish_campaign(const std::vector<harness::RunRecord>& records, const std::string& out) {
  harness::export_records_csv(records, out);
  harness::export_summary(records, out + ".summary.txt");
  std::vector<const harness::RunRecord*> failures;
  for (const auto& record : records)
    if (record.failed) failures.push_back(&record);
  std::cout << records.size() << " runs -> " << out << " (" << failures.size()
            << " failed)\n";
  if (failures.empty()) return 0;
  std::string manifest = "run_index,problem,formulation,n_samples,seed,termination\n";
  for (const auto* record : failures)
    manifest += std::to_string(record->run_index) + "," + record->problem + "," +
                problems::formulation_name(record->formulation) + "," +
                std::to_string(record->n_samples) + "," + std::to_string(record->seed) +
                "," + record->termination + "\n";
  harness::atomic_write(out + ".failures.txt", manifest);
  std::cerr << "error: " << failures.size() << " run(s) failed; manifest at " << out
            << ".failures.txt\n";
  return 2;
}

int run_command(const std::string& problem_name, const std::string& formulation_name,
                int n_samples, const std::string& out, double eps_f, double eps_c,
                const Config& config) {
  if (n_samples < 1) throw std::invalid_argument("sample size must be positive");
  const auto base = problems::problem_by_name(problem_name);
  const auto formulation = problems::parse_formulation(formulation_name);
  const auto problem = problems::make_robust(base, formulation, n_samples, config.seed);

  if (out.empty()) {
    const auto result = engine::optimize(problem, config);
    std::cout << problem_name << " " << formulation_name << " N=" << n_samples
              << " seed=" << config.seed << "\n"
              << "termination: " << engine::termination_name(result.termination)
              << " after " << result.evaluations << " evaluations, " << result.iterations
              << " iterations\n"
              << "best point:  " << describe_point(result.best_point) << "\n"
              << "best objective estimate: " << format_double(result.best_objective)
              << (result.best_feasible ? " (feasible)" : " (infeasible)") << "\n";
    return result.termination == engine::Termination::BlackBoxFailure ? 2 : 0;
  }

  const auto reference = problems::oracle_reference(base, formulation);
  if (!reference.trusted)
    throw std::invalid_argument("no trusted reference optimum for " + problem_name +
                                " under " + formulation_name);
  const auto record = harness::run_single(problem, problem_name, config, 250, 0, reference);
  harness::export_records_csv({record}, out);
  std::cout << problem_name << " " << formulation_name << " N=" << n_samples
            << " seed=" << config.seed << "\n"
            << "termination: " << record.termination << " after " << record.evaluations
            << " evaluations\n";
  if (!record.series.empty()) {
    const auto& last = record.series.back();
    std::cout << "final relative objective error: " << format_double(last.objective_error)
              << "\nfinal constraint violation:     " << format_double(last.max_violation)
              << "\n";
  }
  const double solved = harness::solved_time(record, eps_f, eps_c);
  if (std::isfinite(solved))
    std::cout << "solved at step " << static_cast<int>(solved) << " (eps_f=" << eps_f
              << ", eps_c=" << eps_c << ")\n";
  else
    std::cout << "not solved to (eps_f=" << eps_f << ", eps_c=" << eps_c
              << ") within the budget\n";
  std::cout << "series -> " << out << "\n";
  return record.failed ? 2 : 0;
}

}  // namespace

std::string dump_config(const Config& config) {
  std::string out = "# snowpac optimizer configuration\n";
  for (const auto& field : config_fields()) {
    out += field.key;
    out += " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(std::declval<Config>().*member)>;
          if constexpr (std::is_same_v<T, double>)
            out += format_double(config.*member);
          else if constexpr (std::is_same_v<T, bool>)
            out += (config.*member) ? "1" : "0";
          else
            out += std::to_string(config.*member);
        },
        field.member);
    out += '\n';
  }
  return out;
}

Config apply_config_text(Config base, const std::string& text) {
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto equals = line.find('=');
    if (equals == std::string::npos)
      throw std::invalid_argument("malformed configuration line " +
                                  std::to_string(line_no) + ": " + line);
    apply_config_line(base, trim(line.substr(0, equals)), trim(line.substr(equals + 1)));
  }
  return base;
}

Config apply_config_file(Config base, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return apply_config_text(std::move(base), buffer.str());
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"snowpac: trust-region optimization of sampled robustness measures "
               "with Gaussian-process noise smoothing"};
  app.require_subcommand(1);

  const Config defaults{};
  Config campaign_defaults{};
  campaign_defaults.n_max = 250;  // matches the 250-iteration campaign budget

  auto* run_cmd = app.add_subcommand("run", "Optimize one problem under one formulation");
  std::string run_problem;
  std::string run_formulation = "mean-mean";
  int run_samples = 100;
  std::uint64_t run_seed = 0;
  std::string run_out, run_config, run_dump;
  double run_eps_f = 1e-2, run_eps_c = 1e-3;
  OverrideSet run_overrides;
  run_cmd->add_option("--problem", run_problem, "problem name (see list-problems)")
      ->required();
  run_cmd->add_option("--formulation", run_formulation,
                      "mean-mean, mean-q95, or cvar95-mean")
      ->capture_default_str();
  run_cmd->add_option("--n-samples", run_samples, "samples per estimate")
      ->capture_default_str();
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "random seed");
  run_cmd->add_option("--out", run_out,
                      "post-process against the reference optimum and write the "
                      "iterate series CSV here");
  run_cmd->add_option("--config", run_config, "flat key = value configuration file");
  run_cmd->add_option("--dump-config", run_dump,
                      "write the effective optimizer configuration and exit");
  run_cmd->add_option("--eps-f", run_eps_f, "relative objective tolerance")
      ->capture_default_str();
  run_cmd->add_option("--eps-c", run_eps_c, "constraint violation tolerance")
      ->capture_default_str();
  add_optimizer_flags(run_cmd, run_overrides, defaults);

  auto* campaign_cmd =
      app.add_subcommand("campaign", "Sweep problems x formulations x sample sizes");
  CampaignFlags campaign_flags;
  add_campaign_flags(campaign_cmd, campaign_flags, campaign_defaults,
                     "snowpac_records.csv");

  auto* profile_cmd = app.add_subcommand(
      "profile", "Compute a data profile from campaign records (or run the campaign)");
  CampaignFlags profile_flags;
  std::string profile_records;
  double profile_eps_f = 1e-2, profile_eps_c = 1e-3;
  profile_cmd->add_option("--records", profile_records,
                          "existing records CSV; omit to run the campaign first");
  profile_cmd->add_option("--eps-f", profile_eps_f, "relative objective tolerance")
      ->capture_default_str();
  profile_cmd->add_option("--eps-c", profile_eps_c, "constraint violation tolerance")
      ->capture_default_str();
  add_campaign_flags(profile_cmd, profile_flags, campaign_defaults,
                     "snowpac_profile.csv");

  auto* list_cmd = app.add_subcommand("list-problems", "Print the registered problems");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*list_cmd) {
      for (const auto& name : problems::problem_names()) std::cout << name << "\n";
      return 0;
    }
    if (*run_cmd) {
      const auto config = effective_config(defaults, run_config, run_overrides,
                                           run_seed_opt, run_seed);
      if (!run_dump.empty()) {
        harness::atomic_write(run_dump, dump_config(config));
        return 0;
      }
      return run_command(run_problem, run_formulation, run_samples, run_out, run_eps_f,
                         run_eps_c, config);
    }
    if (*campaign_cmd) {
      const auto config =
          effective_config(campaign_defaults, campaign_flags.config_path,
                           campaign_flags.overrides, campaign_flags.seed_opt,
                           campaign_flags.seed);
      if (!campaign_flags.dump_path.empty()) {
        harness::atomic_write(campaign_flags.dump_path, dump_config(config));
        return 0;
      }
      const auto plan = build_plan(campaign_flags, config);
      return finish_campaign(harness::run_campaign(plan), campaign_flags.out);
    }
    if (*profile_cmd) {
      std::vector<harness::RunRecord> records;
      if (!profile_records.empty()) {
        records = harness::read_records_csv(profile_records);
      } else {
        const auto config =
            effective_config(campaign_defaults, profile_flags.config_path,
                             profile_flags.overrides, profile_flags.seed_opt,
                             profile_flags.seed);
        if (!profile_flags.dump_path.empty()) {
          harness::atomic_write(profile_flags.dump_path, dump_config(config));
          return 0;
        }
        records = harness::run_campaign(build_plan(profile_flags, config));
      }
      std::vector<double> alphas;
      for (int i = 0; i <= 250; ++i) alphas.push_back(i);
      const auto profile =
          harness::data_profile(records, profile_eps_f, profile_eps_c, alphas);
      harness::export_profile_csv(profile, profile_flags.out);
      std::cout << records.size() << " records -> " << profile_flags.out << "\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("snowpac");
  for (const auto& arg : args) argv.push_back(arg.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace snowpac::cli
