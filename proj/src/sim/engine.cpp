#include "dinf/sim/engine.hpp"

#include <algorithm>
#include <sstream>

#include "dinf/sim/errors.hpp"

namespace dinf::sim {

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Compute: return "compute";
    case EventKind::Yield: return "yield";
    case EventKind::Issue: return "issue";
    case EventKind::Block: return "block";
    case EventKind::Wake: return "wake";
    case EventKind::Complete: return "complete";
    case EventKind::Terminate: return "terminate";
    case EventKind::Network: return "network";
  }
  return "unknown";
}

// --- Device ---------------------------------------------------------------

std::size_t Device::world_size() const { return engine_.device_count(); }

void Device::check_runnable(const char* what) const {
  if (state_ != DeviceState::Runnable) {
    throw ContractViolation(std::string(what) + ": device is not runnable");
  }
}

Device::YieldAwaiter Device::yield(SimTime elapsed) {
  check_runnable("yield");
  const auto start = clock_;
  clock_ += elapsed;
  compute_ += elapsed;
  if (engine_.options_.record_events) {
    engine_.log_event(start, id_, EventKind::Yield, "elapsed=" + std::to_string(elapsed.ns()));
  }
  return {};
}

Device::YieldAwaiter Device::yield_seconds(double elapsed) {
  if (!(elapsed >= 0.0)) throw ContractViolation("yield: elapsed time must be non-negative");
  return yield(SimTime::from_seconds(elapsed));
}

Device::YieldAwaiter Device::compute(double flops, std::string_view region) {
  if (!(flops >= 0.0)) throw ContractViolation("compute: negative flop count");
  return busy(tensor::modeled_cost(flops, region, profile_), region);
}

Device::YieldAwaiter Device::busy(SimTime cost, std::string_view region) {
  check_runnable("compute");
  const auto start = clock_;
  clock_ += cost;
  compute_ += cost;
  if (engine_.options_.record_events) {
    std::ostringstream os;
    os << "region=" << region << " dur=" << cost.ns();
    engine_.log_event(start, id_, EventKind::Compute, os.str());
  }
  if (engine_.options_.record_trace && cost > SimTime::zero()) {
    engine_.trace_.push_back({std::string(region), "compute", start, clock_,
                              static_cast<std::uint32_t>(id_), kComputeLane, {}});
  }
  return {};
}

net::CommHandle Device::issued(net::CommHandle h, net::CommKind kind) {
  if (engine_.options_.record_events) {
    const auto& r = engine_.network_->record(h);
    std::ostringstream os;
    os << net::to_string(kind) << " handle=" << h.id << " bytes=" << r.bytes;
    if (r.peer) os << " peer=" << *r.peer;
    engine_.log_event(clock_, id_, EventKind::Issue, os.str());
  }
  return h;
}

net::CommHandle Device::isend(ProcessId dst, net::Payload payload) {
  check_runnable("send");
  return issued(engine_.network_->post_send(id_, dst, std::move(payload), clock_),
                net::CommKind::Send);
}

net::CommHandle Device::irecv(ProcessId src) {
  check_runnable("recv");
  return issued(engine_.network_->post_recv(id_, src, clock_), net::CommKind::Recv);
}

net::CommHandle Device::start_broadcast(const net::Group& group, ProcessId root,
                                        net::Payload payload) {
  check_runnable("broadcast");
  return issued(engine_.network_->join_broadcast(group, root, id_, std::move(payload), clock_),
                net::CommKind::Broadcast);
}

net::CommHandle Device::start_all_gather(const net::Group& group, net::Payload shard, bool uniform) {
  check_runnable("all_gather");
  return issued(engine_.network_->join_all_gather(group, id_, std::move(shard), uniform, clock_),
                net::CommKind::AllGather);
}

net::CommHandle Device::start_all_reduce(const net::Group& group, net::Payload buffer,
                                         net::ReduceOp op) {
  check_runnable("all_reduce");
  return issued(engine_.network_->join_all_reduce(group, id_, std::move(buffer), op, clock_),
                net::CommKind::AllReduce);
}

bool Device::WaitAwaiter::await_ready() {
  dev_.check_runnable("wait");
  const auto& r = dev_.engine_.network_->record(handle_);
  if (r.owner != dev_.id_) throw ContractViolation("wait: handle belongs to another device");
  if (!r.completion) return false;
  if (*r.completion > dev_.clock_) {
    dev_.wait_ += *r.completion - dev_.clock_;
    dev_.clock_ = *r.completion;
  }
  return true;
}

void Device::WaitAwaiter::await_suspend(std::coroutine_handle<>) {
  dev_.state_ = DeviceState::BlockedOnComm;
  dev_.blocked_on_ = handle_;
  dev_.engine_.waiters_[handle_.id] = dev_.id_;
  if (dev_.engine_.options_.record_events) {
    dev_.engine_.log_event(dev_.clock_, dev_.id_, EventKind::Block,
                           "handle=" + std::to_string(handle_.id));
  }
}

net::Payload Device::WaitAwaiter::await_resume() {
  return dev_.engine_.network_->take_result(handle_);
}

void Device::record_span(std::string name, std::string category, SimTime start, SimTime end) {
  engine_.record_span(id_, std::move(name), std::move(category), start, end);
}

// --- Engine ---------------------------------------------------------------

Engine::Engine(net::NetworkTopology topology, EngineOptions options)
    : topology_(std::move(topology)), options_(options) {}

Engine::~Engine() {
  // Coroutine frames reference devices; destroy them first.
  for (auto& d : devices_) d->task_ = Task<void>();
}

ProcessId Engine::register_device(Program program, tensor::DeviceProfile profile) {
  if (started_) throw ConfigError("register_device: engine already started");
  if (!program) throw ConfigError("register_device: empty program");
  profile.validate();
  const auto id = process_id(devices_.size());
  programs_.push_back(std::move(program));
  devices_.push_back(std::unique_ptr<Device>(new Device(*this, id, std::move(profile))));
  return id;
}

const net::Network& Engine::network() const {
  if (!network_) throw ContractViolation("engine: network exists only after start");
  return *network_;
}

void Engine::record_span(ProcessId device, std::string name, std::string category, SimTime start,
                         SimTime end) {
  const auto& dev = *devices_.at(index_of(device));
  if (end < start) throw ContractViolation("record_span: end precedes start");
  if (end > dev.clock_) throw ContractViolation("record_span: span ends after device clock");
  if (!options_.record_trace) return;
  trace_.push_back({std::move(name), std::move(category), start, end,
                    static_cast<std::uint32_t>(device), kComputeLane, {}});
}

void Engine::log_event(SimTime time, ProcessId process, EventKind kind, std::string detail) {
  staged_.push({time, static_cast<std::uint32_t>(process), next_seq_++,
                {time, process, kind, std::move(detail)}});
}

void Engine::commit_before(SimTime frontier) {
  while (!staged_.empty() && staged_.top().time < frontier) {
    committed_.push_back(staged_.top().event);
    staged_.pop();
  }
}

void Engine::on_complete(const net::CommRecord& record) {
  if (options_.record_events) {
    std::ostringstream os;
    os << net::to_string(record.kind) << " handle=" << record.handle.id;
    log_event(*record.completion, record.owner, EventKind::Complete, os.str());
  }
  auto it = waiters_.find(record.handle.id);
  if (it == waiters_.end()) return;
  auto& dev = *devices_[index_of(it->second)];
  waiters_.erase(it);
  if (*record.completion > dev.clock_) {
    dev.wait_ += *record.completion - dev.clock_;
    dev.clock_ = *record.completion;
  }
  dev.state_ = DeviceState::Runnable;
  dev.blocked_on_.reset();
  if (options_.record_events) {
    log_event(dev.clock_, dev.id_, EventKind::Wake, "handle=" + std::to_string(record.handle.id));
  }
}

std::optional<SimTime> Engine::t_min() const {
  std::optional<SimTime> best;
  for (const auto& d : devices_) {
    if (d->state_ == DeviceState::Runnable && (!best || d->clock_ < *best)) best = d->clock_;
  }
  return best;
}

std::optional<std::vector<ProcessId>> Engine::detect_deadlock() const {
  std::vector<ProcessId> blocked;
  for (const auto& d : devices_) {
    if (d->state_ == DeviceState::Runnable) return std::nullopt;
    if (d->state_ == DeviceState::BlockedOnComm) blocked.push_back(d->id_);
  }
  if (blocked.empty()) return std::nullopt;
  if (network_ && !network_->quiescent()) return std::nullopt;
  return blocked;
}

void Engine::resume(Device& dev) {
  dev.task_.handle().resume();
  if (!dev.task_.done()) return;
  if (auto err = dev.task_.error()) {
    auto cause = DeviceError::Cause::Other;
    std::string what;
    try {
      std::rethrow_exception(err);
    } catch (const NumericalError& e) {
      cause = DeviceError::Cause::Numerical;
      what = e.what();
    } catch (const ConfigError& e) {
      cause = DeviceError::Cause::Config;
      what = e.what();
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
      what = "unknown exception";
    }
    throw DeviceError(dev.id_, dev.clock_, what, cause);
  }
  dev.state_ = DeviceState::Terminated;
  if (options_.record_events) log_event(dev.clock_, dev.id_, EventKind::Terminate, "");
}

void Engine::append_network_spans() {
  std::vector<std::vector<const net::CommRecord*>> per_device(devices_.size());
  for (const auto& r : network_->records()) {
    if (r.completion) per_device[index_of(r.owner)].push_back(&r);
  }
  for (auto& recs : per_device) {
    std::stable_sort(recs.begin(), recs.end(), [](const auto* a, const auto* b) {
      if (a->issued != b->issued) return a->issued < b->issued;
      return *a->completion > *b->completion;
    });
    // Greedy interval partitioning keeps spans within one lane disjoint.
    std::vector<SimTime> lane_end;
    for (const auto* r : recs) {
      std::size_t lane = 0;
      while (lane < lane_end.size() && lane_end[lane] > r->issued) ++lane;
      if (lane == lane_end.size()) lane_end.push_back(*r->completion);
      lane_end[lane] = *r->completion;
      TraceEvent ev{std::string(net::to_string(r->kind)), "network", r->issued, *r->completion,
                    static_cast<std::uint32_t>(r->owner),
                    kNetworkLane + static_cast<std::uint32_t>(lane), {}};
      ev.args.emplace_back("handle", std::to_string(r->handle.id));
      ev.args.emplace_back("bytes", std::to_string(r->bytes));
      if (r->peer) ev.args.emplace_back("peer", std::to_string(index_of(*r->peer)));
      trace_.push_back(std::move(ev));
    }
  }
}

RunReport Engine::run_until_complete() {
  if (started_) throw ConfigError("run_until_complete: engine already ran");
  started_ = true;
  network_ = std::make_unique<net::Network>(topology_, devices_.size());
  network_->set_on_complete([this](const net::CommRecord& r) { on_complete(r); });
  if (options_.record_events) {
    network_->set_log([this](SimTime t, const std::string& what) {
      log_event(t, network_id(), EventKind::Network, what);
    });
  }
  for (std::size_t i = 0; i < devices_.size(); ++i) {
    devices_[i]->task_ = programs_[i](*devices_[i]);
  }

  std::vector<Device*> ready;
  while (true) {
    const auto tmin = t_min();
    const auto next = network_->next_event_time();
    if (next && (!tmin || *next <= *tmin)) {
      // Network events at or before the frontier go first so that devices
      // resumed at t_min observe every completion due by then.
      network_->advance_to(*next);
    } else if (!tmin) {
      if (auto blocked = detect_deadlock()) {
        commit_before(SimTime::infinity());
        throw DeadlockError(*blocked, network_->clock());
      }
      break;
    } else {
      network_->advance_to(*tmin);
      ready.clear();
      for (auto& d : devices_) {
        if (d->state_ == DeviceState::Runnable && d->clock_ <= *tmin) ready.push_back(d.get());
      }
      for (auto* d : ready) {
        if (d->state_ == DeviceState::Runnable) resume(*d);
      }
    }
    if (options_.record_events) {
      auto frontier = network_->clock();
      if (const auto t = t_min(); t && *t < frontier) frontier = *t;
      commit_before(frontier);
    }
  }
  commit_before(SimTime::infinity());

  RunReport report;
  SimTime end;
  for (const auto& d : devices_) end = std::max(end, d->clock_);
  for (const auto& r : network_->records()) {
    if (r.completion) end = std::max(end, *r.completion);
  }
  report.end_time = end;
  for (const auto& d : devices_) {
    report.devices.push_back({d->id_, d->clock_, d->compute_, d->wait_, end - d->clock_});
  }
  report.link_bytes = network_->link_bytes();
  report.total_network_bytes = network_->total_bytes();
  report.network_operations = network_->records().size();
  report.committed_events = committed_.size();

  if (options_.record_trace) {
    append_network_spans();
    std::stable_sort(trace_.begin(), trace_.end(), [](const TraceEvent& a, const TraceEvent& b) {
      return std::tie(a.start, a.pid, a.tid) < std::tie(b.start, b.pid, b.tid);
    });
  }
  return report;
}

}  // namespace dinf::sim
