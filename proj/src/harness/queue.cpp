#include "dinf/harness/queue.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dinf/sim/engine.hpp"
#include "dinf/tensor/random.hpp"

namespace dinf::harness {

double md1_baseline(double lambda, double mu) { return 1.0 / mu + md1_wait(lambda, mu); }

double md1_wait(double lambda, double mu) {
  if (!(lambda >= 0.0) || !(mu > 0.0)) throw ConfigError("md1: rates must be positive");
  if (lambda >= mu) throw UnstableQueueError("md1: unstable queue, arrival rate >= service rate");
  const double rho = lambda / mu;
  return rho / (2.0 * mu * (1.0 - rho));
}

double derived_service_seconds(const ExperimentConfig& c) {
  const auto cost = tensor::CostModel::flop_analytic(c.model);
  const auto profile = device_profiles(c).front();
  SimTime t = tensor::prefill_cost(c.prompt_length, cost, profile);
  for (std::size_t i = 0; i < c.max_new_tokens; ++i) {
    t += tensor::decode_step_cost(c.prompt_length + i, cost, profile);
  }
  return t.seconds();
}

namespace {

struct ServerParams {
  std::vector<SimTime> arrivals;
  SimTime base;
  double gamma = 0.5;
  std::size_t iterations = 1;
  std::size_t max_batch = 1;
};

struct Request {
  SimTime arrival;
  SimTime started;
  std::size_t remaining = 0;
};

struct ServerState {
  std::vector<double> waits;
  std::vector<double> delays;
  std::size_t iterations_run = 0;
  std::size_t batched_requests = 0;
};

SimTime batch_cost(const ServerParams& p, std::size_t b) {
  if (b == 1) return p.base;
  const double factor = p.gamma + (1.0 - p.gamma) * static_cast<double>(b);
  return SimTime::from_seconds(p.base.seconds() * factor);
}

Task<void> server(sim::Device& dev, const ServerParams* p, ServerState* st) {
  std::size_t next = 0;
  std::deque<Request> active;
  while (next < p->arrivals.size() || !active.empty()) {
    if (active.empty() && p->arrivals[next] > dev.now()) {
      co_await dev.yield(p->arrivals[next] - dev.now());
    }
    while (next < p->arrivals.size() && p->arrivals[next] <= dev.now() && active.size() < p->max_batch) {
      active.push_back({p->arrivals[next], dev.now(), p->iterations});
      ++next;
    }
    const auto b = active.size();
    co_await dev.busy(batch_cost(*p, b), "batch");
    ++st->iterations_run;
    st->batched_requests += b;
    for (auto it = active.begin(); it != active.end();) {
      if (--it->remaining == 0) {
        st->waits.push_back((it->started - it->arrival).seconds());
        st->delays.push_back((dev.now() - it->arrival).seconds());
        it = active.erase(it);
      } else {
        ++it;
      }
    }
  }
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Nearest-rank percentile.
double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace

QueueResult run_poisson_batching(const QueueConfig& q, const ExperimentConfig& config) {
  if (!(q.arrival_rate > 0.0)) throw ConfigError("queue.arrival_rate: must be > 0");
  if (q.iterations_per_request == 0) throw ConfigError("queue.iterations_per_request: must be >= 1");
  if (q.max_batch == 0) throw ConfigError("queue.max_batch: must be >= 1");
  if (!(q.gamma >= 0.0 && q.gamma < 1.0)) throw ConfigError("queue.gamma: must be in [0, 1)");
  if (!(q.horizon_s > 0.0)) throw ConfigError("queue.horizon_s: must be > 0");

  const double service = q.service_seconds > 0.0 ? q.service_seconds : derived_service_seconds(config);
  ServerParams p;
  p.base = SimTime::from_seconds(service / static_cast<double>(q.iterations_per_request));
  if (p.base == SimTime::zero()) throw ConfigError("queue: service time rounds to zero");
  p.gamma = q.gamma;
  p.iterations = q.iterations_per_request;
  p.max_batch = q.batching == QueueConfig::Batching::Continuous ? q.max_batch : 1;

  auto rng = substream(config.seed, "arrivals");
  for (double t = 0.0;;) {
    t += -std::log1p(-uniform01(rng)) / q.arrival_rate;
    if (t >= q.horizon_s) break;
    p.arrivals.push_back(SimTime::from_seconds(t));
  }

  QueueResult r;
  r.service_seconds = p.base.seconds() * static_cast<double>(p.iterations);
  r.mu = 1.0 / r.service_seconds;
  r.rho = q.arrival_rate / r.mu;
  r.arrivals = p.arrivals.size();

  ServerState st;
  sim::Engine engine(net::NetworkTopology{}, {false, false});
  engine.register_device([&p, &st](sim::Device& dev) { return server(dev, &p, &st); }, device_profiles(config).front());
  const auto report = engine.run_until_complete();

  r.end_seconds = report.end_time.seconds();
  r.completed = st.delays.size();
  r.mean_batch = st.iterations_run ? static_cast<double>(st.batched_requests) / st.iterations_run : 0.0;
  r.waits = std::move(st.waits);
  r.delays = std::move(st.delays);
  r.steady = r.rho < 1.0;
  if (!r.steady) {
    r.warning = "utilization >= 1, the queue has no steady state; summary statistics suppressed";
    return r;
  }
  r.mean_wait = mean(r.waits);
  r.median_wait = median(r.waits);
  r.p95_wait = percentile(r.waits, 0.95);
  r.mean_delay = mean(r.delays);
  r.median_delay = median(r.delays);
  r.p95_delay = percentile(r.delays, 0.95);
  r.md1_wait = md1_wait(q.arrival_rate, r.mu);
  r.md1_sojourn = md1_baseline(q.arrival_rate, r.mu);
  return r;
}

nlohmann::ordered_json queue_json(const QueueResult& r) {
  nlohmann::ordered_json j;
  j["status"] = r.steady ? "ok" : "unstable";
  if (!r.warning.empty()) j["warning"] = r.warning;
  j["service_seconds"] = r.service_seconds;
  j["mu"] = r.mu;
  j["rho"] = r.rho;
  j["arrivals"] = r.arrivals;
  j["completed"] = r.completed;
  j["mean_batch"] = r.mean_batch;
  j["end_seconds"] = r.end_seconds;
  if (r.steady) {
    j["wait"] = {{"mean", r.mean_wait}, {"median", r.median_wait}, {"p95", r.p95_wait}};
    j["delay"] = {{"mean", r.mean_delay}, {"median", r.median_delay}, {"p95", r.p95_delay}};
    j["md1"] = {{"wait", r.md1_wait}, {"sojourn", r.md1_sojourn}};
  }
  return j;
}

std::string format_queue(const QueueResult& r) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "service " << r.service_seconds << " s  mu " << r.mu << " /s  rho " << r.rho << '\n';
  os << "arrivals " << r.arrivals << "  completed " << r.completed << "  mean batch " << r.mean_batch << '\n';
  if (!r.steady) {
    os << "warning: " << r.warning << '\n';
    return os.str();
  }
  os << std::left << std::setw(8) << "" << std::right << std::setw(14) << "mean" << std::setw(14) << "median"
     << std::setw(14) << "p95" << std::setw(14) << "M/D/1" << '\n';
  os << std::left << std::setw(8) << "wait" << std::right << std::setw(14) << r.mean_wait << std::setw(14)
     << r.median_wait << std::setw(14) << r.p95_wait << std::setw(14) << r.md1_wait << '\n';
  os << std::left << std::setw(8) << "delay" << std::right << std::setw(14) << r.mean_delay << std::setw(14)
     << r.median_delay << std::setw(14) << r.p95_delay << std::setw(14) << r.md1_sojourn << '\n';
  return os.str();
}

}  // namespace dinf::harness
