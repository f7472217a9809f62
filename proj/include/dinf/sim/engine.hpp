#pragma once

#include <coroutine>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "dinf/net/comm.hpp"
#include "dinf/net/network.hpp"
#include "dinf/net/topology.hpp"
#include "dinf/sim/task.hpp"
#include "dinf/sim/time.hpp"
#include "dinf/sim/trace.hpp"
#include "dinf/tensor/cost_model.hpp"

namespace dinf::sim {

enum class DeviceState { Runnable, BlockedOnComm, Terminated };

enum class EventKind { Compute, Yield, Issue, Block, Wake, Complete, Terminate, Network };
std::string_view to_string(EventKind kind);

struct CommittedEvent {
  SimTime time;
  ProcessId process{};
  EventKind kind = EventKind::Compute;
  std::string detail;
  friend bool operator==(const CommittedEvent&, const CommittedEvent&) = default;
};

struct DeviceStats {
  ProcessId id{};
  SimTime final_clock;
  SimTime compute;  // modeled compute and explicit yields
  SimTime wait;     // blocked on communication
  SimTime idle;     // end_time - final_clock
};

struct RunReport {
  SimTime end_time;
  std::vector<DeviceStats> devices;
  std::map<std::pair<ProcessId, ProcessId>, std::uint64_t> link_bytes;
  std::uint64_t total_network_bytes = 0;
  std::size_t network_operations = 0;
  std::size_t committed_events = 0;
};

struct EngineOptions {
  bool record_events = true;
  bool record_trace = true;
};

class Engine;
class Device;

using Program = std::function<Task<void>(Device&)>;

// Handle a device program uses to talk to the engine. All time-consuming
// calls are awaitables; non-blocking starts return a CommHandle to wait on.
class Device {
 public:
  struct YieldAwaiter {
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<>) const noexcept {}
    void await_resume() const noexcept {}
  };

  class WaitAwaiter {
   public:
    WaitAwaiter(Device& dev, net::CommHandle h) : dev_(dev), handle_(h) {}
    bool await_ready();
    void await_suspend(std::coroutine_handle<>);
    net::Payload await_resume();

   private:
    Device& dev_;
    net::CommHandle handle_;
  };

  ProcessId id() const { return id_; }
  SimTime now() const { return clock_; }
  std::size_t world_size() const;
  const tensor::DeviceProfile& profile() const { return profile_; }
  DeviceState state() const { return state_; }

  // Advances the clock by `elapsed` and returns control to the scheduler.
  YieldAwaiter yield(SimTime elapsed = SimTime::zero());
  YieldAwaiter yield_seconds(double elapsed);
  // Charges modeled_cost(flops, region) as a compute span, then yields.
  YieldAwaiter compute(double flops, std::string_view region);
  // Charges a precomputed duration as a compute span, then yields.
  YieldAwaiter busy(SimTime cost, std::string_view region);

  net::CommHandle isend(ProcessId dst, net::Payload payload);
  net::CommHandle irecv(ProcessId src);
  net::CommHandle start_broadcast(const net::Group& group, ProcessId root, net::Payload payload);
  net::CommHandle start_all_gather(const net::Group& group, net::Payload shard, bool uniform = true);
  net::CommHandle start_all_reduce(const net::Group& group, net::Payload buffer,
                                   net::ReduceOp op = net::ReduceOp::Sum);

  WaitAwaiter wait(net::CommHandle h) { return {*this, h}; }
  WaitAwaiter send(ProcessId dst, net::Payload payload) { return wait(isend(dst, std::move(payload))); }
  WaitAwaiter recv(ProcessId src) { return wait(irecv(src)); }
  WaitAwaiter broadcast(const net::Group& group, ProcessId root, net::Payload payload) {
    return wait(start_broadcast(group, root, std::move(payload)));
  }
  WaitAwaiter all_gather(const net::Group& group, net::Payload shard, bool uniform = true) {
    return wait(start_all_gather(group, std::move(shard), uniform));
  }
  WaitAwaiter all_reduce(const net::Group& group, net::Payload buffer,
                         net::ReduceOp op = net::ReduceOp::Sum) {
    return wait(start_all_reduce(group, std::move(buffer), op));
  }

  // Appends a span on the compute lane; start <= end <= now().
  void record_span(std::string name, std::string category, SimTime start, SimTime end);

 private:
  friend class Engine;
  Device(Engine& engine, ProcessId id, tensor::DeviceProfile profile)
      : engine_(engine), id_(id), profile_(std::move(profile)) {}

  void check_runnable(const char* what) const;
  net::CommHandle issued(net::CommHandle h, net::CommKind kind);

  Engine& engine_;
  ProcessId id_;
  tensor::DeviceProfile profile_;
  SimTime clock_;
  SimTime compute_;
  SimTime wait_;
  DeviceState state_ = DeviceState::Runnable;
  std::optional<net::CommHandle> blocked_on_;
  Task<void> task_;
};

// Conservative engine: devices run as coroutines with private clocks; the
// single network process is never advanced past the smallest clock of any
// runnable device.
class Engine {
 public:
  explicit Engine(net::NetworkTopology topology, EngineOptions options = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  ProcessId register_device(Program program, tensor::DeviceProfile profile = {});
  std::size_t device_count() const { return devices_.size(); }
  // Id of the network logical process (one past the last device).
  ProcessId network_id() const { return process_id(devices_.size()); }

  // Throws DeadlockError or DeviceError on failure.
  RunReport run_until_complete();

  // Blocked set iff every live device is blocked and the network is quiescent.
  std::optional<std::vector<ProcessId>> detect_deadlock() const;

  const std::vector<CommittedEvent>& committed_events() const { return committed_; }
  // Compute spans plus one span per communication record, issue to completion.
  const std::vector<TraceEvent>& trace() const { return trace_; }
  const net::Network& network() const;
  const Device& device(ProcessId id) const { return *devices_.at(index_of(id)); }

  void record_span(ProcessId device, std::string name, std::string category, SimTime start,
                   SimTime end);

 private:
  friend class Device;

  struct Staged {
    SimTime time;
    std::uint32_t process;
    std::uint64_t seq;
    CommittedEvent event;
    bool operator>(const Staged& o) const {
      return std::tie(time, process, seq) > std::tie(o.time, o.process, o.seq);
    }
  };

  void log_event(SimTime time, ProcessId process, EventKind kind, std::string detail);
  void commit_before(SimTime frontier);
  void on_complete(const net::CommRecord& record);
  void resume(Device& dev);
  void append_network_spans();
  std::optional<SimTime> t_min() const;

  net::NetworkTopology topology_;
  EngineOptions options_;
  std::vector<Program> programs_;
  std::vector<std::unique_ptr<Device>> devices_;
  std::unique_ptr<net::Network> network_;
  std::map<std::uint64_t, ProcessId> waiters_;
  bool started_ = false;

  std::priority_queue<Staged, std::vector<Staged>, std::greater<>> staged_;
  std::uint64_t next_seq_ = 0;
  std::vector<CommittedEvent> committed_;
  std::vector<TraceEvent> trace_;
};

}  // namespace dinf::sim
