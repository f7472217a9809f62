#include "dinf/harness/cli.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "dinf/calibration/calibration.hpp"
#include "dinf/calibration/chrome_trace.hpp"
#include "dinf/harness/config.hpp"
#include "dinf/harness/experiment.hpp"
#include "dinf/harness/queue.hpp"
#include "dinf/sim/errors.hpp"

namespace dinf::harness {

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

std::string default_path(const std::string& config, const char* suffix) {
  return fs::path(config).stem().string() + suffix;
}

struct RunArgs {
  std::string config;
  std::string trace;
  std::string report;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
  auto c = load_config(path);
  if (seed) c.seed = *seed;
  return c;
}

int cmd_run(const RunArgs& a, std::ostream& out) {
  const auto c = load(a.config, a.seed);
  const auto report_path = a.report.empty() ? default_path(a.config, ".report.json") : a.report;
  const auto trace_path = a.trace.empty() ? default_path(a.config, ".trace.json") : a.trace;
  try {
    const auto r = run_experiment(c);
    calibration::export_chrome_trace(r.trace, trace_path);
    write_text(report_path, dump(report_json(r)));
    out << format_report(r);
    out << "report " << report_path << "\ntrace " << trace_path << '\n';
    return kExitOk;
  } catch (const DeadlockError& e) {
    write_text(report_path, dump(deadlock_report_json(c.scheme, e)));
    throw;
  }
}

int cmd_sweep(const RunArgs& a, const std::vector<std::string>& axis_texts, std::ostream& out,
              std::ostream& err) {
  const auto c = load(a.config, a.seed);
  std::vector<SweepAxis> axes;
  for (const auto& t : axis_texts) axes.push_back(parse_axis(t));
  const auto result = run_sweep(c, axes);
  const auto csv = sweep_csv(result);
  for (const auto& cell : result.cells) {
    for (std::size_t i = 0; i < cell.errors.size(); ++i) {
      if (cell.errors[i].empty()) continue;
      err << "cell";
      for (std::size_t k = 0; k < cell.values.size(); ++k) {
        err << ' ' << result.axis_keys[k] << '=' << cell.values[k];
      }
      err << " scheme=" << cell.schemes[i] << " failed: " << cell.errors[i] << '\n';
    }
  }
  if (a.report.empty()) {
    out << csv;
  } else {
    write_text(a.report, csv);
    out << csv << "table " << a.report << '\n';
  }
  return kExitOk;
}

int cmd_compare(const std::string& first, const std::string& second, const RunArgs& a, std::ostream& out) {
  const auto ra = run_experiment(load(first, a.seed));
  const auto rb = run_experiment(load(second, a.seed));
  const double ta = ra.report.end_time.seconds();
  const double tb = rb.report.end_time.seconds();
  nlohmann::ordered_json j;
  j["first"] = report_json(ra);
  j["second"] = report_json(rb);
  j["speedup"] = tb > 0 ? ta / tb - 1.0 : 0.0;
  out << "first  (" << ra.scheme << ") " << std::setprecision(9) << ta << " s\n"
      << "second (" << rb.scheme << ") " << tb << " s\n"
      << "speedup of second over first " << std::setprecision(4) << 100.0 * j["speedup"].get<double>()
      << " %\n";
  if (!a.report.empty()) write_text(a.report, dump(j));
  return kExitOk;
}

int cmd_calibrate(const std::string& csv, double lambda, bool unweighted, std::string out_path,
                  std::ostream& out) {
  const auto ms = calibration::read_measurements(csv);
  const auto fit = calibration::fit_link_params(ms, {lambda, !unweighted});
  const auto report = calibration::evaluate_fit(fit, ms);
  if (out_path.empty()) out_path = default_path(csv, ".fit.json");
  calibration::write_fit_file(out_path, fit, report);
  out << std::setprecision(9) << "latency " << fit.alpha << " s\nbandwidth " << fit.bandwidth()
      << " B/s\nr2 " << report.r2 << "\nmape " << report.mape << "\nfit " << out_path << '\n';
  return kExitOk;
}

int cmd_queue(const RunArgs& a, std::ostream& out, std::ostream& err) {
  const auto c = load(a.config, a.seed);
  const auto q = c.queue.value_or(QueueConfig{});
  const auto r = run_poisson_batching(q, c);
  if (!r.steady) err << "warning: " << r.warning << '\n';
  out << format_queue(r);
  if (!a.report.empty()) write_text(a.report, dump(queue_json(r)));
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete-event simulator for distributed transformer inference"};
  app.require_subcommand(1);

  RunArgs args;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--trace", args.trace, "Chrome trace output path");
    sub->add_option("--report", args.report, "Report output path");
    sub->add_option("--seed", seed, "Override the config seed");
  };

  auto* run = app.add_subcommand("run", "Run one configuration");
  run->add_option("config", args.config, "Experiment config (JSON)")->required();
  add_common(run);

  std::vector<std::string> axes;
  auto* sweep = app.add_subcommand("sweep", "Run the Cartesian product of axes");
  sweep->add_option("config", args.config, "Base config")->required();
  sweep->add_option("--axis", axes, "key=v1,v2,...")->required();
  add_common(sweep);

  std::string first, second;
  auto* compare = app.add_subcommand("compare", "Run two configs and report the speedup");
  compare->add_option("first", first)->required();
  compare->add_option("second", second)->required();
  add_common(compare);

  std::string csv, fit_out;
  double lambda = calibration::FitOptions{}.lambda;
  bool unweighted = false;
  auto* calibrate = app.add_subcommand("calibrate", "Fit link latency and bandwidth from measurements");
  calibrate->add_option("measurements", csv, "CSV with bytes,hops,observed_seconds,repeat")->required();
  calibrate->add_option("--lambda", lambda, "Ridge penalty");
  calibrate->add_option("--out", fit_out, "Fit file path");
  calibrate->add_flag("--unweighted", unweighted, "Fit absolute instead of relative residuals");

  auto* queue = app.add_subcommand("queue", "Poisson arrivals against a single batching server");
  queue->add_option("config", args.config, "Config with a queue section")->required();
  add_common(queue);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (auto* sub : {run, sweep, compare, queue}) {
    if (sub->parsed() && sub->count("--seed")) args.seed = seed;
  }

  try {
    if (run->parsed()) return cmd_run(args, out);
    if (sweep->parsed()) return cmd_sweep(args, axes, out, err);
    if (compare->parsed()) return cmd_compare(first, second, args, out);
    if (calibrate->parsed()) return cmd_calibrate(csv, lambda, unweighted, fit_out, out);
    if (queue->parsed()) return cmd_queue(args, out, err);
  } catch (const DeadlockError& e) {
    err << "deadlock at " << e.at().ns() << " ns; blocked devices:";
    for (auto p : e.blocked()) err << ' ' << p;
    err << '\n';
    return kExitDeadlock;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DeviceError& e) {
    err << "error: " << e.what() << '\n';
    return e.cause() == DeviceError::Cause::Config ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace dinf::harness
