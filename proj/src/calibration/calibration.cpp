#include "dinf/calibration/calibration.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

namespace dinf::calibration {

namespace {

void check_measurement(const Measurement& m, std::size_t index) {
  if (m.hops < 1) throw FitError("measurement " + std::to_string(index) + ": hops must be >= 1");
  if (!(m.observed_seconds > 0.0) || !std::isfinite(m.observed_seconds)) {
    throw FitError("measurement " + std::to_string(index) + ": observed_seconds must be positive");
  }
}

void check_series(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.empty() || observed.size() != predicted.size()) {
    throw ContractViolation("metrics: series must be non-empty and of equal length");
  }
}

}  // namespace

RidgeFit fit_link_params(std::span<const Measurement> ms, const FitOptions& options) {
  if (!(options.lambda >= 0.0)) throw FitError("fit: lambda must be >= 0");
  std::set<std::uint64_t> sizes;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    check_measurement(ms[i], i);
    sizes.insert(ms[i].bytes);
  }
  if (sizes.size() < 2) {
    throw FitError("fit: degenerate design, need at least two distinct byte sizes");
  }

  const auto n = static_cast<double>(ms.size());
  auto weight = [&](const Measurement& m) {
    return options.relative_weights ? 1.0 / (m.observed_seconds * m.observed_seconds) : 1.0;
  };
  double s1 = 0, s2 = 0;
  for (const auto& m : ms) {
    const double x1 = static_cast<double>(m.hops);
    const double x2 = x1 * static_cast<double>(m.bytes);
    s1 += weight(m) * x1 * x1;
    s2 += weight(m) * x2 * x2;
  }
  s1 = std::sqrt(s1 / n);
  s2 = std::sqrt(s2 / n);
  if (!(s2 > 0.0)) throw FitError("fit: degenerate design, all transfers are empty");

  double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
  for (const auto& m : ms) {
    const double w = weight(m);
    const double z1 = static_cast<double>(m.hops) / s1;
    const double z2 = static_cast<double>(m.hops) * static_cast<double>(m.bytes) / s2;
    a11 += w * z1 * z1;
    a12 += w * z1 * z2;
    a22 += w * z2 * z2;
    b1 += w * z1 * m.observed_seconds;
    b2 += w * z2 * m.observed_seconds;
  }
  if (a11 * a22 - a12 * a12 <= 1e-12 * a11 * a22) {
    throw FitError("fit: degenerate design, latency and bandwidth terms are collinear");
  }
  a11 += options.lambda;
  a22 += options.lambda;
  const double det = a11 * a22 - a12 * a12;
  const double g1 = (a22 * b1 - a12 * b2) / det;
  const double g2 = (a11 * b2 - a12 * b1) / det;

  RidgeFit fit;
  fit.lambda = options.lambda;
  fit.alpha = std::max(0.0, g1 / s1);
  fit.inv_bandwidth = std::max(kMinInvBandwidth, g2 / s2);
  return fit;
}

double predict_time(const RidgeFit& fit, std::uint64_t bytes, std::uint64_t hops) {
  const double h = static_cast<double>(hops);
  return fit.alpha * h + fit.inv_bandwidth * h * static_cast<double>(bytes);
}

double compute_r2(std::span<const double> observed, std::span<const double> predicted) {
  check_series(observed, predicted);
  double mean = 0;
  for (double o : observed) mean += o;
  mean /= static_cast<double>(observed.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    ss_tot += (observed[i] - mean) * (observed[i] - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

double compute_mape(std::span<const double> observed, std::span<const double> predicted,
                    std::size_t* excluded) {
  check_series(observed, predicted);
  double sum = 0;
  std::size_t used = 0, skipped = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (observed[i] == 0.0) {
      ++skipped;
      continue;
    }
    sum += std::abs(observed[i] - predicted[i]) / std::abs(observed[i]);
    ++used;
  }
  if (excluded) *excluded = skipped;
  return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

FitReport evaluate_fit(const RidgeFit& fit, std::span<const Measurement> ms) {
  std::vector<double> obs, pred;
  FitReport report;
  for (const auto& m : ms) {
    obs.push_back(m.observed_seconds);
    pred.push_back(predict_time(fit, m.bytes, m.hops));
    report.residuals.push_back(obs.back() - pred.back());
  }
  if (ms.empty()) return report;
  report.r2 = compute_r2(obs, pred);
  report.mape = compute_mape(obs, pred, &report.mape_excluded);
  return report;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
T parse_field(const std::string& text, std::size_t line, const char* field) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("measurements line " + std::to_string(line) + ": invalid " + field + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<Measurement> read_measurements(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::vector<Measurement> out;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(trim(cell));
    if (!header) {
      if (cells != std::vector<std::string>{"bytes", "hops", "observed_seconds", "repeat"}) {
        throw ConfigError("measurements: expected header bytes,hops,observed_seconds,repeat");
      }
      header = true;
      continue;
    }
    if (cells.size() != 4) {
      throw ConfigError("measurements line " + std::to_string(line_no) + ": expected 4 fields");
    }
    Measurement m;
    m.bytes = parse_field<std::uint64_t>(cells[0], line_no, "bytes");
    m.hops = parse_field<std::uint64_t>(cells[1], line_no, "hops");
    m.observed_seconds = parse_field<double>(cells[2], line_no, "observed_seconds");
    m.repeat = parse_field<int>(cells[3], line_no, "repeat");
    if (m.hops < 1) throw ConfigError("measurements line " + std::to_string(line_no) + ": hops must be >= 1");
    if (!(m.observed_seconds >= 0.0)) {
      throw ConfigError("measurements line " + std::to_string(line_no) + ": observed_seconds must be >= 0");
    }
    out.push_back(m);
  }
  if (!header) throw ConfigError("measurements: empty file");
  return out;
}

std::vector<Measurement> read_measurements(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("measurements: cannot open " + path.string());
  return read_measurements(in);
}

void write_measurements(std::ostream& out, std::span<const Measurement> ms) {
  out << "bytes,hops,observed_seconds,repeat\n";
  for (const auto& m : ms) {
    out << m.bytes << ',' << m.hops << ',' << std::setprecision(17) << m.observed_seconds << ','
        << m.repeat << '\n';
  }
}

void write_fit_file(const std::filesystem::path& path, const RidgeFit& fit, const FitReport& report) {
  nlohmann::ordered_json j;
  j["alpha_s"] = fit.alpha;
  j["inv_bandwidth_s_per_byte"] = fit.inv_bandwidth;
  j["lambda"] = fit.lambda;
  j["link"] = {{"latency_s", fit.alpha}, {"bandwidth_bytes_per_s", fit.bandwidth()}};
  j["report"] = {{"r2", report.r2}, {"mape", report.mape}, {"points", report.residuals.size()},
                 {"mape_excluded", report.mape_excluded}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

net::LinkParams read_fit_link(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("fit file: cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    net::LinkParams link{j.at("link").at("latency_s").get<double>(),
                         j.at("link").at("bandwidth_bytes_per_s").get<double>()};
    link.validate();
    return link;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("fit file " + path.string() + ": " + e.what());
  }
}

}  // namespace dinf::calibration
