#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "dinf/net/comm.hpp"
#include "dinf/net/topology.hpp"
#include "dinf/sim/time.hpp"

namespace dinf::net {

// Bookkeeping for one participant's side of a communication.
struct CommRecord {
  CommHandle handle;
  CommKind kind = CommKind::Send;
  ProcessId owner{};
  std::optional<ProcessId> peer;  // p2p counterpart or broadcast root
  std::uint64_t bytes = 0;
  SimTime issued;
  std::optional<SimTime> completion;
  Payload result;
};

struct FlowView {
  std::uint64_t id = 0;
  ProcessId src{};
  ProcessId dst{};
  std::uint64_t total_bytes = 0;
  double remaining_bytes = 0.0;
  double rate = 0.0;
  SimTime start;
};

// The network logical process. Flows are fluid: each active flow drains at
// its current fair share of the resource it occupies, and shares are
// recomputed whenever a flow starts or drains. A message is delivered one
// link latency after its last byte leaves the sender.
//
// All mutation happens through post_* / join_* (at the caller's clock, which
// must not precede clock()) and advance_to (driven by the engine).
class Network {
 public:
  using LogFn = std::function<void(SimTime, const std::string&)>;
  using CompletionFn = std::function<void(const CommRecord&)>;

  Network(NetworkTopology topology, std::size_t n_devices);
  ~Network();
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  void set_log(LogFn log) { log_ = std::move(log); }
  // Called once per record, at the moment its completion time is fixed.
  void set_on_complete(CompletionFn fn) { on_complete_ = std::move(fn); }

  // Eager send: bytes start flowing at `at`. The returned handle completes
  // when the last byte has left the sender.
  CommHandle post_send(ProcessId src, ProcessId dst, Payload payload, SimTime at);
  // Completes at max(at, delivery of the matching send). FIFO per pair.
  CommHandle post_recv(ProcessId dst, ProcessId src, SimTime at);

  // Star broadcast. Peers complete when their copy arrives; the root when all
  // copies have drained. Non-root callers pass an empty payload.
  CommHandle join_broadcast(const Group& group, ProcessId root, ProcessId self, Payload payload,
                            SimTime at);
  // Step-synchronous ring all-gather. With `uniform`, every rank must
  // contribute the same byte count.
  CommHandle join_all_gather(const Group& group, ProcessId self, Payload shard, bool uniform,
                             SimTime at);
  // Ring reduce-scatter followed by ring all-gather, 2(N-1) steps.
  CommHandle join_all_reduce(const Group& group, ProcessId self, Payload buffer, ReduceOp op,
                             SimTime at);

  const CommRecord& record(CommHandle h) const;
  std::optional<SimTime> completion(CommHandle h) const { return record(h).completion; }
  Payload take_result(CommHandle h);
  const std::vector<CommRecord>& records() const { return records_; }

  SimTime clock() const { return clock_; }
  std::optional<SimTime> next_event_time() const;
  // Moves to `t` (must be <= next_event_time) and processes every event at t.
  void advance_to(SimTime t);
  // No pending starts, active flows or undelivered messages.
  bool quiescent() const;

  // Fair-share recomputation for one resource; exposed for inspection.
  void reallocate_bandwidth(std::size_t resource);

  std::vector<FlowView> active_flows() const;
  const std::map<std::pair<ProcessId, ProcessId>, std::uint64_t>& link_bytes() const {
    return link_bytes_;
  }
  std::uint64_t total_bytes() const;
  std::size_t device_count() const { return n_devices_; }

 private:
  enum class FlowPurpose { PointToPoint, RingStep, BroadcastCopy };

  struct Flow {
    std::uint64_t id = 0;
    ProcessId src{};
    ProcessId dst{};
    std::uint64_t total = 0;
    double remaining = 0.0;
    double rate = 0.0;
    SimTime start;
    SimTime latency;
    std::size_t resource = 0;
    std::int64_t drain_at = 0;
    bool active = false;
    FlowPurpose purpose = FlowPurpose::PointToPoint;
    std::uint64_t ref = 0;  // message id or collective instance id
    std::size_t rank = 0;   // sending rank within a collective
  };

  struct Resource {
    double bandwidth = 1.0;
    std::vector<std::uint64_t> active;
  };

  struct Message {
    ProcessId src{};
    ProcessId dst{};
    Payload payload;
    std::uint64_t send_comm = 0;
    std::optional<SimTime> delivered;
    std::optional<std::uint64_t> recv_comm;
  };

  struct Channel {
    std::deque<std::uint64_t> unmatched_messages;
    std::deque<std::uint64_t> pending_recvs;
  };

  struct Collective;

  struct Delivery {
    std::uint64_t flow = 0;
  };

  CommHandle new_record(CommKind kind, ProcessId owner, std::optional<ProcessId> peer,
                        std::uint64_t bytes, SimTime at);
  void complete(std::uint64_t comm, SimTime t);
  std::size_t resource_for(ProcessId src, ProcessId dst);
  std::uint64_t add_flow(ProcessId src, ProcessId dst, std::uint64_t bytes, SimTime start,
                         FlowPurpose purpose, std::uint64_t ref, std::size_t rank);
  void progress_to(SimTime t);
  bool drain_due(SimTime t);
  bool start_due(SimTime t);
  bool deliver_due(SimTime t);
  void on_drained(Flow& flow, SimTime t);
  void on_delivered(Flow& flow, SimTime t);
  void try_complete_recv(Message& msg);

  Collective& join_instance(CommKind kind, const Group& group, ProcessId self, std::size_t& rank);
  void on_all_joined(Collective& c);
  void launch_step(Collective& c, SimTime at);
  void finish_step(Collective& c, SimTime t);
  void log(SimTime t, const std::string& what) const;

  NetworkTopology topology_;
  std::size_t n_devices_;
  SimTime clock_;
  LogFn log_;
  CompletionFn on_complete_;

  std::vector<CommRecord> records_;
  std::map<std::uint64_t, Flow> flows_;
  std::vector<Resource> resources_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> resource_index_;
  std::set<std::tuple<SimTime, std::uint64_t>> pending_starts_;   // (time, flow id)
  std::set<std::tuple<SimTime, std::uint64_t, std::uint64_t>> deliveries_;  // (time, seq, flow)
  std::uint64_t next_flow_id_ = 0;
  std::uint64_t next_seq_ = 0;

  std::vector<Message> messages_;
  std::map<std::pair<ProcessId, ProcessId>, Channel> channels_;

  std::vector<std::unique_ptr<Collective>> collectives_;
  std::map<std::pair<Group, std::uint64_t>, std::size_t> instance_index_;
  std::map<std::pair<Group, ProcessId>, std::uint64_t> call_count_;

  std::map<std::pair<ProcessId, ProcessId>, std::uint64_t> link_bytes_;
};

}  // namespace dinf::net
