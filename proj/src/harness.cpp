#include "snowpac/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

namespace snowpac::harness {

namespace {

const double kInf = std::numeric_limits<double>::infinity();

constexpr const char* kCsvHeader =
    "problem,formulation,n_samples,seed,run_index,dim,failed,termination,evaluations,"
    "step,objective_error,max_violation,design_error";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string sanitize(std::string text) {
  for (char& c : text)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return text;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

// Linear-interpolation quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

struct RunSpec {
  std::string problem;
  problems::Formulation formulation;
  int n_samples = 0;
  int run_index = 0;
  const problems::OracleReference* reference = nullptr;
};

}  // namespace

double solved_time(const RunRecord& record, double eps_f, double eps_c) {
  for (const auto& point : record.series) {
    if (point.objective_error <= eps_f && point.max_violation <= eps_c)
      return static_cast<double>(point.step);
  }
  return kInf;
}

DataProfile data_profile(const std::vector<RunRecord>& records, double eps_f, double eps_c,
                         const std::vector<double>& alphas) {
  if (records.empty()) throw std::invalid_argument("data profile needs at least one record");
  std::vector<double> scaled;
  scaled.reserve(records.size());
  for (const auto& record : records) {
    const double t = solved_time(record, eps_f, eps_c);
    scaled.push_back(t / static_cast<double>(record.dim + 1));
  }
  DataProfile profile;
  profile.alphas = alphas;
  profile.fraction_solved.reserve(alphas.size());
  for (double alpha : alphas) {
    int solved = 0;
    for (double s : scaled)
      if (s <= alpha) ++solved;
    profile.fraction_solved.push_back(static_cast<double>(solved) /
                                      static_cast<double>(records.size()));
  }
  return profile;
}

std::uint64_t run_seed(std::uint64_t master_seed, int run_index) {
  return RngStream(master_seed, 1 + static_cast<std::uint64_t>(run_index)).next_u64();
}

RunRecord run_single(const problems::RobustProblem& problem, const std::string& name,
                     const engine::OptimizerConfig& config, int step_cap, int run_index,
                     const problems::OracleReference& reference) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord record;
  record.problem = name;
  record.formulation = problem.formulation;
  record.n_samples = problem.n_samples;
  record.seed = config.seed;
  record.run_index = run_index;
  record.dim = problem.dim();

  engine::RunResult result;
  try {
    engine::Optimizer optimizer(problem, config);
    result = optimizer.run();
  } catch (const std::exception& e) {
    record.failed = true;
    record.termination = std::string("error: ") + e.what();
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
    return record;
  }
  record.termination = engine::termination_name(result.termination);
  record.failed = result.termination == engine::Termination::BlackBoxFailure ||
                  result.termination == engine::Termination::SubproblemFailure;
  record.evaluations = result.evaluations;

  // Reconstruct the center path: the start point, then the last accepted
  // point of each outer iteration (carrying the previous center forward).
  const int steps = std::min(result.iterations, step_cap);
  std::vector<const Eigen::VectorXd*> accepted(static_cast<std::size_t>(steps) + 1, nullptr);
  for (const auto& rec : result.history) {
    if (rec.accepted && rec.iteration >= 1 && rec.iteration <= steps)
      accepted[static_cast<std::size_t>(rec.iteration)] = &rec.point;
  }
  Eigen::VectorXd center =
      result.history.empty() ? problem.start() : result.history.front().point;
  const double scale = std::max(1.0, std::abs(reference.value));
  for (int k = 0; k <= steps; ++k) {
    if (accepted[static_cast<std::size_t>(k)] != nullptr)
      center = *accepted[static_cast<std::size_t>(k)];
    IterationPoint point;
    point.step = k;
    point.objective_error = std::abs(problem.exact_objective(center) - reference.value) / scale;
    const Eigen::VectorXd cons = problem.exact_constraints(center);
    point.max_violation = cons.size() > 0 ? std::max(cons.maxCoeff(), 0.0) : 0.0;
    point.design_error = (center - reference.point).norm();
    record.series.push_back(point);
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

std::vector<RunRecord> run_campaign(const CampaignPlan& plan) {
  if (plan.problems.empty() || plan.formulations.empty() || plan.sample_sizes.empty() ||
      plan.repeats < 1)
    throw std::invalid_argument("campaign plan needs problems, formulations, sample sizes, "
                                "and at least one repeat");
  plan.config.validate();

  // Resolve every reference optimum up front, single-threaded, so worker
  // scheduling cannot influence any exported number.
  std::vector<problems::StochasticBlackBox> boxes;
  std::vector<std::vector<problems::OracleReference>> references(plan.problems.size());
  for (std::size_t p = 0; p < plan.problems.size(); ++p) {
    boxes.push_back(problems::problem_by_name(plan.problems[p]));
    for (const auto formulation : plan.formulations) {
      auto ref = problems::oracle_reference(boxes[p], formulation);
      if (!ref.trusted)
        throw std::runtime_error("no trusted reference optimum for " + plan.problems[p] +
                                 " under " + problems::formulation_name(formulation));
      references[p].push_back(std::move(ref));
    }
  }

  std::vector<RunSpec> specs;
  for (std::size_t p = 0; p < plan.problems.size(); ++p)
    for (std::size_t f = 0; f < plan.formulations.size(); ++f)
      for (int n : plan.sample_sizes)
        for (int repeat = 0; repeat < plan.repeats; ++repeat) {
          RunSpec spec;
          spec.problem = plan.problems[p];
          spec.formulation = plan.formulations[f];
          spec.n_samples = n;
          spec.run_index = static_cast<int>(specs.size());
          spec.reference = &references[p][f];
          specs.push_back(std::move(spec));
        }

  std::vector<RunRecord> records(specs.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (std::size_t i = cursor.fetch_add(1); i < specs.size(); i = cursor.fetch_add(1)) {
      const RunSpec& spec = specs[i];
      auto config = plan.config;
      config.seed = run_seed(plan.master_seed, spec.run_index);
      try {
        const auto base = problems::problem_by_name(spec.problem);
        const auto problem =
            problems::make_robust(base, spec.formulation, spec.n_samples, config.seed);
        records[i] = run_single(problem, spec.problem, config, plan.step_cap,
                                spec.run_index, *spec.reference);
      } catch (const std::exception& e) {
        RunRecord& record = records[i];
        record.problem = spec.problem;
        record.formulation = spec.formulation;
        record.n_samples = spec.n_samples;
        record.seed = config.seed;
        record.run_index = spec.run_index;
        record.failed = true;
        record.termination = std::string("error: ") + e.what();
      }
    }
  };

  const int n_workers =
      std::clamp(plan.workers, 1, static_cast<int>(std::max<std::size_t>(specs.size(), 1)));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& thread : pool) thread.join();
  }
  return records;
}

void atomic_write(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path temp = target.string() + ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + temp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + temp.string());
  }
  std::error_code ec;
  fs::rename(temp, target, ec);
  if (ec) {
    fs::remove(temp);
    throw std::runtime_error("cannot replace " + target.string() + ": " + ec.message());
  }
}

void export_records_csv(const std::vector<RunRecord>& records, const std::string& path) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& record : records) {
    const std::string prefix = sanitize(record.problem) + ',' +
                               problems::formulation_name(record.formulation) + ',' +
                               std::to_string(record.n_samples) + ',' +
                               std::to_string(record.seed) + ',' +
                               std::to_string(record.run_index) + ',' +
                               std::to_string(record.dim) + ',' +
                               (record.failed ? "1" : "0") + ',' +
                               sanitize(record.termination) + ',' +
                               std::to_string(record.evaluations) + ',';
    if (record.series.empty()) {
      out += prefix + "-1,nan,nan,nan\n";
      continue;
    }
    for (const auto& point : record.series) {
      out += prefix + std::to_string(point.step) + ',' +
             format_double(point.objective_error) + ',' +
             format_double(point.max_violation) + ',' + format_double(point.design_error) +
             '\n';
    }
  }
  atomic_write(path, out);
}

std::vector<RunRecord> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw std::runtime_error("unrecognized record header in " + path);
  std::vector<RunRecord> records;
  int current_index = -1;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 13)
      throw std::runtime_error("malformed row at " + path + ":" + std::to_string(line_no));
    const int run_index = std::stoi(fields[4]);
    if (records.empty() || run_index != current_index) {
      RunRecord record;
      record.problem = fields[0];
      record.formulation = problems::parse_formulation(fields[1]);
      record.n_samples = std::stoi(fields[2]);
      record.seed = std::stoull(fields[3]);
      record.run_index = run_index;
      record.dim = std::stoi(fields[5]);
      record.failed = fields[6] == "1";
      record.termination = fields[7];
      record.evaluations = std::stoi(fields[8]);
      records.push_back(std::move(record));
      current_index = run_index;
    }
    const int step = std::stoi(fields[9]);
    if (step < 0) continue;  // placeholder row of an empty series
    IterationPoint point;
    point.step = step;
    point.objective_error = std::stod(fields[10]);
    point.max_violation = std::stod(fields[11]);
    point.design_error = std::stod(fields[12]);
    records.back().series.push_back(point);
  }
  return records;
}

void export_profile_csv(const DataProfile& profile, const std::string& path) {
  std::string out = "alpha,fraction_solved\n";
  for (std::size_t i = 0; i < profile.alphas.size(); ++i)
    out += format_double(profile.alphas[i]) + "," +
           format_double(profile.fraction_solved[i]) + "\n";
  atomic_write(path, out);
}

void export_summary(const std::vector<RunRecord>& records, const std::string& path) {
  // Group by problem/formulation/N and summarize the final series entries.
  struct Group {
    std::vector<double> final_errors;
    std::vector<double> final_violations;
    int failed = 0;
    int total = 0;
  };
  std::vector<std::pair<std::string, Group>> groups;
  for (const auto& record : records) {
    const std::string key = record.problem + " " +
                            problems::formulation_name(record.formulation) + " N=" +
                            std::to_string(record.n_samples);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.emplace_back(key, Group{});
      it = groups.end() - 1;
    }
    ++it->second.total;
    if (record.failed) ++it->second.failed;
    if (!record.series.empty() && !record.failed) {
      it->second.final_errors.push_back(record.series.back().objective_error);
      it->second.final_violations.push_back(record.series.back().max_violation);
    }
  }

  std::string out = "campaign summary\nruns: " + std::to_string(records.size()) + "\n";
  for (auto& [key, group] : groups) {
    std::sort(group.final_errors.begin(), group.final_errors.end());
    std::sort(group.final_violations.begin(), group.final_violations.end());
    out += "\n" + key + ": runs=" + std::to_string(group.total) +
           " failed=" + std::to_string(group.failed) + "\n";
    auto quartiles = [&](const std::vector<double>& sorted) {
      return "min=" + format_double(quantile_sorted(sorted, 0.0)) +
             " q25=" + format_double(quantile_sorted(sorted, 0.25)) +
             " median=" + format_double(quantile_sorted(sorted, 0.5)) +
             " q75=" + format_double(quantile_sorted(sorted, 0.75)) +
             " max=" + format_double(quantile_sorted(sorted, 1.0));
    };
    out += "  final objective error: " + quartiles(group.final_errors) + "\n";
    out += "  final max violation:   " + quartiles(group.final_violations) + "\n";
  }
  atomic_write(path, out);
}

}  // namespace snowpac::harness
