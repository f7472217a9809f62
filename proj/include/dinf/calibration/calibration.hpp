#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dinf/net/topology.hpp"
#include "dinf/sim/errors.hpp"

namespace dinf::calibration {

// The measurements cannot identify both link parameters.
class FitError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct Measurement {
  std::uint64_t bytes = 0;
  std::uint64_t hops = 1;
  double observed_seconds = 0.0;
  int repeat = 0;
};

// t = alpha * hops + inv_bandwidth * hops * bytes
struct RidgeFit {
  double alpha = 0.0;
  double inv_bandwidth = 1e-15;
  double lambda = 0.0;

  double bandwidth() const { return 1.0 / inv_bandwidth; }
  net::LinkParams link() const { return {alpha, bandwidth()}; }
};

struct FitOptions {
  double lambda = 1e-9;
  // Weight each point by 1/observed^2 so the fit minimises relative error.
  // Without it, the largest transfers dominate and latency is poorly resolved.
  bool relative_weights = true;
};

inline constexpr double kMinInvBandwidth = 1e-15;

// Closed-form ridge solution of the 2x2 normal equations. Columns are
// scaled to unit weighted RMS before the lambda*I penalty is added, then
// negative coefficients are clamped (alpha -> 0, inv_bandwidth -> 1e-15).
RidgeFit fit_link_params(std::span<const Measurement> measurements, const FitOptions& options = {});

double predict_time(const RidgeFit& fit, std::uint64_t bytes, std::uint64_t hops);

// 1 - SS_res / SS_tot. A constant observed series gives 1 when predicted
// matches it exactly and 0 otherwise.
double compute_r2(std::span<const double> observed, std::span<const double> predicted);

// mean(|obs - pred| / |obs|) over points with nonzero obs. The number of
// skipped zero observations is written to `excluded` when given.
double compute_mape(std::span<const double> observed, std::span<const double> predicted,
                    std::size_t* excluded = nullptr);

struct FitReport {
  double r2 = 0.0;
  double mape = 0.0;
  std::vector<double> residuals;  // observed - predicted, per measurement
  std::size_t mape_excluded = 0;
};

FitReport evaluate_fit(const RidgeFit& fit, std::span<const Measurement> measurements);

// Delimited text with header "bytes,hops,observed_seconds,repeat".
std::vector<Measurement> read_measurements(std::istream& in);
std::vector<Measurement> read_measurements(const std::filesystem::path& path);
void write_measurements(std::ostream& out, std::span<const Measurement> measurements);

// JSON document holding the fit, its report, and a "link" object in the
// same shape an experiment config uses for link parameters.
void write_fit_file(const std::filesystem::path& path, const RidgeFit& fit, const FitReport& report);
net::LinkParams read_fit_link(const std::filesystem::path& path);

}  // namespace dinf::calibration
