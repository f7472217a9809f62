#include "dinf/net/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dinf/sim/errors.hpp"

namespace dinf::net {

struct Network::Collective {
  std::uint64_t id = 0;
  CommKind kind = CommKind::AllGather;
  Group group;
  std::optional<ProcessId> root;
  ReduceOp op = ReduceOp::Sum;
  bool uniform = true;

  std::vector<std::optional<std::uint64_t>> comm;  // per rank
  std::vector<SimTime> joined_at;
  std::vector<Payload> contrib;
  std::size_t joined = 0;

  // Ring state.
  bool has_data = false;
  std::size_t step = 0;
  std::size_t total_steps = 0;
  std::size_t outstanding = 0;
  std::vector<std::size_t> piece_of_rank;           // piece sent by each rank this step
  std::vector<std::vector<float>> in_flight;        // snapshot sent by each rank this step
  std::vector<std::uint64_t> piece_bytes;           // all-gather: shard bytes; all-reduce: chunk bytes
  std::vector<std::size_t> chunk_begin;             // all-reduce element offsets, size n + 1
  std::vector<std::vector<float>> work;             // all-reduce per-rank buffer
  std::vector<std::vector<std::vector<float>>> shards;  // all-gather per-rank slots
  std::vector<std::vector<bool>> held;

  // Broadcast state.
  std::vector<std::optional<SimTime>> arrival;
  std::size_t drained = 0;

  std::size_t size() const { return group.size(); }
};

namespace {

std::int64_t round_half_up_ns(double seconds) {
  return static_cast<std::int64_t>(std::floor(seconds * 1e9 + 0.5));
}

void check_device(ProcessId id, std::size_t n, const char* role) {
  if (index_of(id) >= n) {
    std::ostringstream os;
    os << "unknown " << role << " process " << id;
    throw ConfigError(os.str());
  }
}

}  // namespace

Network::Network(NetworkTopology topology, std::size_t n_devices)
    : topology_(std::move(topology)), n_devices_(n_devices) {
  topology_.validate(n_devices);
  if (topology_.mode == TopologyMode::SharedMedium) {
    resources_.push_back({topology_.default_link.bandwidth_bytes_per_s, {}});
  }
}

Network::~Network() = default;

void Network::log(SimTime t, const std::string& what) const {
  if (log_) log_(t, what);
}

CommHandle Network::new_record(CommKind kind, ProcessId owner, std::optional<ProcessId> peer,
                               std::uint64_t bytes, SimTime at) {
  if (at < clock_) throw ContractViolation("network: operation posted before network clock");
  CommRecord r;
  r.handle = CommHandle{records_.size()};
  r.kind = kind;
  r.owner = owner;
  r.peer = peer;
  r.bytes = bytes;
  r.issued = at;
  records_.push_back(std::move(r));
  return records_.back().handle;
}

const CommRecord& Network::record(CommHandle h) const {
  if (h.id >= records_.size()) throw ContractViolation("network: unknown comm handle");
  return records_[h.id];
}

Payload Network::take_result(CommHandle h) {
  if (h.id >= records_.size()) throw ContractViolation("network: unknown comm handle");
  return std::move(records_[h.id].result);
}

void Network::complete(std::uint64_t comm, SimTime t) {
  auto& r = records_.at(comm);
  if (r.completion) throw ContractViolation("network: completion time rewritten");
  r.completion = std::max(t, r.issued);
  if (on_complete_) on_complete_(r);
}

std::size_t Network::resource_for(ProcessId src, ProcessId dst) {
  if (topology_.mode == TopologyMode::SharedMedium) return 0;
  const auto key = std::make_pair(static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst));
  auto it = resource_index_.find(key);
  if (it != resource_index_.end()) return it->second;
  resources_.push_back({topology_.link(src, dst).bandwidth_bytes_per_s, {}});
  resource_index_.emplace(key, resources_.size() - 1);
  return resources_.size() - 1;
}

std::uint64_t Network::add_flow(ProcessId src, ProcessId dst, std::uint64_t bytes, SimTime start,
                                FlowPurpose purpose, std::uint64_t ref, std::size_t rank) {
  Flow f;
  f.id = next_flow_id_++;
  f.src = src;
  f.dst = dst;
  f.total = bytes;
  f.remaining = static_cast<double>(bytes);
  f.start = start;
  f.latency = topology_.link(src, dst).latency();
  f.resource = resource_for(src, dst);
  f.purpose = purpose;
  f.ref = ref;
  f.rank = rank;
  flows_.emplace(f.id, f);
  pending_starts_.emplace(start, f.id);
  return f.id;
}

// --- point to point -------------------------------------------------------

CommHandle Network::post_send(ProcessId src, ProcessId dst, Payload payload, SimTime at) {
  check_device(src, n_devices_, "source");
  check_device(dst, n_devices_, "destination");
  if (src == dst) throw ConfigError("send: source and destination must differ");
  const auto h = new_record(CommKind::Send, src, dst, payload.bytes, at);
  const std::uint64_t msg_id = messages_.size();
  const auto bytes = payload.bytes;
  messages_.push_back({src, dst, std::move(payload), h.id, std::nullopt, std::nullopt});
  auto& ch = channels_[{src, dst}];
  if (!ch.pending_recvs.empty()) {
    messages_[msg_id].recv_comm = ch.pending_recvs.front();
    ch.pending_recvs.pop_front();
  } else {
    ch.unmatched_messages.push_back(msg_id);
  }
  const auto fid = add_flow(src, dst, bytes, at, FlowPurpose::PointToPoint, msg_id, 0);
  if (log_) {
    std::ostringstream os;
    os << "send flow=" << fid << " " << src << "->" << dst << " bytes=" << bytes;
    log(at, os.str());
  }
  return h;
}

CommHandle Network::post_recv(ProcessId dst, ProcessId src, SimTime at) {
  check_device(src, n_devices_, "source");
  check_device(dst, n_devices_, "destination");
  if (src == dst) throw ConfigError("recv: source and destination must differ");
  const auto h = new_record(CommKind::Recv, dst, src, 0, at);
  auto& ch = channels_[{src, dst}];
  if (!ch.unmatched_messages.empty()) {
    auto& msg = messages_[ch.unmatched_messages.front()];
    ch.unmatched_messages.pop_front();
    msg.recv_comm = h.id;
    try_complete_recv(msg);
  } else {
    ch.pending_recvs.push_back(h.id);
  }
  return h;
}

void Network::try_complete_recv(Message& msg) {
  if (!msg.recv_comm || !msg.delivered) return;
  auto& r = records_[*msg.recv_comm];
  r.bytes = msg.payload.bytes;
  r.result = std::move(msg.payload);
  complete(*msg.recv_comm, std::max(r.issued, *msg.delivered));
}

// --- collectives ----------------------------------------------------------

Network::Collective& Network::join_instance(CommKind kind, const Group& group, ProcessId self,
                                            std::size_t& rank) {
  if (group.empty()) throw ConfigError("collective: empty group");
  for (std::size_t i = 0; i < group.size(); ++i) {
    check_device(group[i], n_devices_, "collective member");
    for (std::size_t j = 0; j < i; ++j) {
      if (group[i] == group[j]) throw ConfigError("collective: duplicate group member");
    }
  }
  auto pos = std::find(group.begin(), group.end(), self);
  if (pos == group.end()) throw ConfigError("collective: caller is not a member of the group");
  rank = static_cast<std::size_t>(pos - group.begin());

  const auto seq = call_count_[{group, self}]++;
  auto [it, inserted] = instance_index_.try_emplace({group, seq}, collectives_.size());
  if (inserted) {
    auto c = std::make_unique<Collective>();
    c->id = collectives_.size();
    c->kind = kind;
    c->group = group;
    const auto n = group.size();
    c->comm.resize(n);
    c->joined_at.resize(n);
    c->contrib.resize(n);
    c->arrival.resize(n);
    collectives_.push_back(std::move(c));
  }
  auto& c = *collectives_[it->second];
  if (c.kind != kind) {
    std::ostringstream os;
    os << "collective mismatch: rank " << rank << " called " << to_string(kind)
       << " where the group expected " << to_string(c.kind);
    throw ConfigError(os.str());
  }
  if (c.comm[rank]) throw ContractViolation("collective: rank joined twice");
  return c;
}

CommHandle Network::join_broadcast(const Group& group, ProcessId root, ProcessId self,
                                   Payload payload, SimTime at) {
  std::size_t rank = 0;
  auto& c = join_instance(CommKind::Broadcast, group, self, rank);
  if (std::find(group.begin(), group.end(), root) == group.end()) {
    throw ConfigError("broadcast: root is not a member of the group");
  }
  if (c.root && *c.root != root) throw ConfigError("broadcast: participants disagree on root");
  c.root = root;
  const bool is_root = self == root;
  const auto h = new_record(CommKind::Broadcast, self, root, is_root ? payload.bytes : 0, at);
  c.comm[rank] = h.id;
  c.joined_at[rank] = at;
  c.contrib[rank] = std::move(payload);
  ++c.joined;

  const auto n = c.size();
  if (is_root) {
    const auto& data = c.contrib[rank];
    records_[h.id].result = data;
    if (n == 1) {
      complete(h.id, at);
    } else {
      for (std::size_t r = 0; r < n; ++r) {
        if (r == rank) continue;
        add_flow(root, group[r], data.bytes, at, FlowPurpose::BroadcastCopy, c.id, r);
      }
    }
  } else if (c.arrival[rank]) {
    const auto root_rank = static_cast<std::size_t>(std::find(group.begin(), group.end(), root) -
                                                    group.begin());
    records_[h.id].result = c.contrib[root_rank];
    records_[h.id].bytes = c.contrib[root_rank].bytes;
    complete(h.id, std::max(at, *c.arrival[rank]));
  }
  return h;
}

CommHandle Network::join_all_gather(const Group& group, ProcessId self, Payload shard,
                                    bool uniform, SimTime at) {
  std::size_t rank = 0;
  auto& c = join_instance(CommKind::AllGather, group, self, rank);
  if (c.joined > 0 && c.uniform != uniform) {
    throw ConfigError("all_gather: participants disagree on uniform shard sizes");
  }
  c.uniform = uniform;
  const auto h = new_record(CommKind::AllGather, self, std::nullopt, shard.bytes, at);
  c.comm[rank] = h.id;
  c.joined_at[rank] = at;
  c.contrib[rank] = std::move(shard);
  if (++c.joined == c.size()) on_all_joined(c);
  return h;
}

CommHandle Network::join_all_reduce(const Group& group, ProcessId self, Payload buffer,
                                    ReduceOp op, SimTime at) {
  std::size_t rank = 0;
  auto& c = join_instance(CommKind::AllReduce, group, self, rank);
  if (c.joined > 0 && c.op != op) throw ConfigError("all_reduce: participants disagree on op");
  c.op = op;
  const auto h = new_record(CommKind::AllReduce, self, std::nullopt, buffer.bytes, at);
  c.comm[rank] = h.id;
  c.joined_at[rank] = at;
  c.contrib[rank] = std::move(buffer);
  if (++c.joined == c.size()) on_all_joined(c);
  return h;
}

void Network::on_all_joined(Collective& c) {
  const auto n = c.size();
  const bool first_has_data = !c.contrib[0].data.empty();
  for (const auto& p : c.contrib) {
    if (!p.data.empty() && p.bytes != p.data.size() * sizeof(float)) {
      throw ConfigError(std::string(to_string(c.kind)) + ": payload bytes do not match data");
    }
    if ((!p.data.empty()) != first_has_data && p.bytes > 0) {
      throw ConfigError(std::string(to_string(c.kind)) + ": mixed data and byte-only payloads");
    }
  }
  c.has_data = first_has_data;

  if (c.kind == CommKind::AllGather) {
    c.piece_bytes.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      c.piece_bytes[r] = c.contrib[r].bytes;
      if (c.uniform && c.piece_bytes[r] != c.piece_bytes[0]) {
        throw ConfigError("all_gather: mismatched shard sizes");
      }
    }
    c.shards.assign(n, std::vector<std::vector<float>>(n));
    c.held.assign(n, std::vector<bool>(n, false));
    for (std::size_t r = 0; r < n; ++r) {
      c.shards[r][r] = c.contrib[r].data;
      c.held[r][r] = true;
    }
    c.total_steps = n - 1;
  } else {
    const auto bytes = c.contrib[0].bytes;
    for (const auto& p : c.contrib) {
      if (p.bytes != bytes) throw ConfigError("all_reduce: mismatched buffer sizes");
    }
    c.piece_bytes.resize(n);
    c.chunk_begin.assign(n + 1, 0);
    if (c.has_data) {
      const auto count = c.contrib[0].data.size();
      const auto base = count / n;
      for (std::size_t i = 0; i < n; ++i) c.chunk_begin[i] = i * base;
      c.chunk_begin[n] = count;
      for (std::size_t i = 0; i < n; ++i) {
        c.piece_bytes[i] = (c.chunk_begin[i + 1] - c.chunk_begin[i]) * sizeof(float);
      }
    } else {
      const auto base = bytes / n;
      for (std::size_t i = 0; i < n; ++i) c.piece_bytes[i] = base;
      c.piece_bytes[n - 1] = bytes - base * (n - 1);
    }
    c.work.resize(n);
    for (std::size_t r = 0; r < n; ++r) c.work[r] = c.contrib[r].data;
    c.total_steps = 2 * (n - 1);
  }

  const SimTime start = *std::max_element(c.joined_at.begin(), c.joined_at.end());
  if (n == 1) {
    finish_step(c, start);
    return;
  }
  c.piece_of_rank.assign(n, 0);
  c.in_flight.assign(n, {});
  launch_step(c, start);
}

void Network::launch_step(Collective& c, SimTime at) {
  const auto n = c.size();
  const auto k = c.step;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t piece = 0;
    if (c.kind == CommKind::AllGather) {
      piece = (r + n - k % n) % n;
    } else if (k < n - 1) {
      piece = (r + n - k) % n;  // reduce-scatter
    } else {
      piece = (r + 1 + n - (k - (n - 1))) % n;  // all-gather of reduced chunks
    }
    c.piece_of_rank[r] = piece;
    if (c.has_data) {
      if (c.kind == CommKind::AllGather) {
        c.in_flight[r] = c.shards[r][piece];
      } else {
        const auto b = c.chunk_begin[piece];
        const auto e = c.chunk_begin[piece + 1];
        c.in_flight[r].assign(c.work[r].begin() + static_cast<std::ptrdiff_t>(b),
                              c.work[r].begin() + static_cast<std::ptrdiff_t>(e));
      }
    }
    add_flow(c.group[r], c.group[(r + 1) % n], c.piece_bytes[piece], at, FlowPurpose::RingStep,
             c.id, r);
  }
  c.outstanding = n;
}

void Network::finish_step(Collective& c, SimTime t) {
  const auto n = c.size();
  if (n > 1) {
    for (std::size_t r = 0; r < n; ++r) {
      const auto dst = (r + 1) % n;
      const auto piece = c.piece_of_rank[r];
      if (c.kind == CommKind::AllGather) {
        c.shards[dst][piece] = std::move(c.in_flight[r]);
        c.held[dst][piece] = true;
      } else if (c.has_data) {
        const auto b = c.chunk_begin[piece];
        auto& own = c.work[dst];
        const auto& incoming = c.in_flight[r];
        if (c.step < n - 1) {
          for (std::size_t i = 0; i < incoming.size(); ++i) {
            own[b + i] = c.op == ReduceOp::Sum ? incoming[i] + own[b + i]
                                               : std::max(incoming[i], own[b + i]);
          }
        } else {
          std::copy(incoming.begin(), incoming.end(), own.begin() + static_cast<std::ptrdiff_t>(b));
        }
      }
    }
    ++c.step;
    if (c.step < c.total_steps) {
      launch_step(c, t);
      return;
    }
  }

  for (std::size_t r = 0; r < n; ++r) {
    auto& rec = records_[*c.comm[r]];
    Payload out;
    if (c.kind == CommKind::AllGather) {
      for (std::size_t s = 0; s < n; ++s) {
        if (!c.held[r][s]) throw ContractViolation("all_gather: shard missing at completion");
        out.bytes += c.piece_bytes[s];
        out.data.insert(out.data.end(), c.shards[r][s].begin(), c.shards[r][s].end());
      }
    } else {
      out.bytes = c.contrib[r].bytes;
      out.data = std::move(c.work[r]);
    }
    rec.result = std::move(out);
    complete(*c.comm[r], t);
  }
  if (log_) {
    std::ostringstream os;
    os << to_string(c.kind) << " instance=" << c.id << " complete";
    log(t, os.str());
  }
}

// --- time advance ---------------------------------------------------------

std::optional<SimTime> Network::next_event_time() const {
  std::optional<std::int64_t> best;
  auto consider = [&](std::int64_t ns) {
    if (!best || ns < *best) best = ns;
  };
  if (!pending_starts_.empty()) consider(std::get<0>(*pending_starts_.begin()).ns());
  if (!deliveries_.empty()) consider(std::get<0>(*deliveries_.begin()).ns());
  for (const auto& [id, f] : flows_) {
    if (f.active) consider(f.drain_at);
  }
  if (!best) return std::nullopt;
  return SimTime::from_ns(std::max(*best, clock_.ns()));
}

bool Network::quiescent() const {
  if (!pending_starts_.empty() || !deliveries_.empty()) return false;
  for (const auto& [id, f] : flows_) {
    if (f.active) return false;
  }
  return true;
}

void Network::progress_to(SimTime t) {
  if (t < clock_) throw ContractViolation("network: time moved backwards");
  const double dt = (t - clock_).seconds();
  if (dt > 0.0) {
    for (auto& [id, f] : flows_) {
      if (f.active) f.remaining = std::max(0.0, f.remaining - f.rate * dt);
    }
  }
  clock_ = t;
}

void Network::reallocate_bandwidth(std::size_t resource) {
  auto& res = resources_.at(resource);
  if (res.active.empty()) return;
  // Every flow crosses exactly one resource, so the max-min fair allocation
  // is the equal split of that resource's bandwidth.
  const double share = res.bandwidth / static_cast<double>(res.active.size());
  for (auto fid : res.active) {
    auto& f = flows_.at(fid);
    f.rate = share;
    f.drain_at = clock_.ns() + round_half_up_ns(f.remaining / share);
  }
}

bool Network::drain_due(SimTime t) {
  std::vector<std::uint64_t> due;
  for (const auto& [id, f] : flows_) {
    if (f.active && f.drain_at <= t.ns()) due.push_back(id);
  }
  if (due.empty()) return false;
  std::vector<std::size_t> touched;
  for (auto fid : due) {
    auto& f = flows_.at(fid);
    f.active = false;
    f.remaining = 0.0;
    f.rate = 0.0;
    auto& act = resources_[f.resource].active;
    act.erase(std::remove(act.begin(), act.end(), fid), act.end());
    touched.push_back(f.resource);
    on_drained(f, t);
  }
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  for (auto r : touched) reallocate_bandwidth(r);
  return true;
}

bool Network::start_due(SimTime t) {
  bool any = false;
  std::vector<std::size_t> touched;
  while (!pending_starts_.empty() && std::get<0>(*pending_starts_.begin()) <= t) {
    const auto fid = std::get<1>(*pending_starts_.begin());
    pending_starts_.erase(pending_starts_.begin());
    auto& f = flows_.at(fid);
    any = true;
    if (f.total == 0) {
      on_drained(f, t);
      continue;
    }
    f.active = true;
    f.remaining = static_cast<double>(f.total);
    resources_[f.resource].active.push_back(fid);
    touched.push_back(f.resource);
  }
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  for (auto r : touched) reallocate_bandwidth(r);
  return any;
}

bool Network::deliver_due(SimTime t) {
  bool any = false;
  while (!deliveries_.empty() && std::get<0>(*deliveries_.begin()) <= t) {
    const auto fid = std::get<2>(*deliveries_.begin());
    deliveries_.erase(deliveries_.begin());
    any = true;
    auto node = flows_.extract(fid);
    on_delivered(node.mapped(), t);
  }
  return any;
}

void Network::on_drained(Flow& f, SimTime t) {
  link_bytes_[{f.src, f.dst}] += f.total;
  deliveries_.emplace(t + f.latency, next_seq_++, f.id);
  if (f.purpose == FlowPurpose::PointToPoint) {
    complete(messages_[f.ref].send_comm, t);
  } else if (f.purpose == FlowPurpose::BroadcastCopy) {
    auto& c = *collectives_[f.ref];
    if (++c.drained == c.size() - 1) {
      const auto root_rank = static_cast<std::size_t>(
          std::find(c.group.begin(), c.group.end(), *c.root) - c.group.begin());
      complete(*c.comm[root_rank], t);
    }
  }
  if (log_) {
    std::ostringstream os;
    os << "drain flow=" << f.id << " " << f.src << "->" << f.dst << " bytes=" << f.total;
    log(t, os.str());
  }
}

void Network::on_delivered(Flow& f, SimTime t) {
  if (log_) {
    std::ostringstream os;
    os << "deliver flow=" << f.id << " " << f.src << "->" << f.dst;
    log(t, os.str());
  }
  switch (f.purpose) {
    case FlowPurpose::PointToPoint: {
      auto& msg = messages_[f.ref];
      msg.delivered = t;
      try_complete_recv(msg);
      break;
    }
    case FlowPurpose::BroadcastCopy: {
      auto& c = *collectives_[f.ref];
      c.arrival[f.rank] = t;
      if (c.comm[f.rank]) {
        const auto root_rank = static_cast<std::size_t>(
            std::find(c.group.begin(), c.group.end(), *c.root) - c.group.begin());
        auto& rec = records_[*c.comm[f.rank]];
        rec.result = c.contrib[root_rank];
        rec.bytes = rec.result.bytes;
        complete(*c.comm[f.rank], std::max(t, c.joined_at[f.rank]));
      }
      break;
    }
    case FlowPurpose::RingStep: {
      auto& c = *collectives_[f.ref];
      if (--c.outstanding == 0) finish_step(c, t);
      break;
    }
  }
}

void Network::advance_to(SimTime t) {
  progress_to(t);
  bool any = true;
  while (any) {
    any = drain_due(t);
    any = start_due(t) || any;
    any = deliver_due(t) || any;
  }
}

std::vector<FlowView> Network::active_flows() const {
  std::vector<FlowView> out;
  for (const auto& [id, f] : flows_) {
    if (f.active) out.push_back({id, f.src, f.dst, f.total, f.remaining, f.rate, f.start});
  }
  return out;
}

std::uint64_t Network::total_bytes() const {
  std::uint64_t sum = 0;
  for (const auto& [k, v] : link_bytes_) sum += v;
  return sum;
}

}  // namespace dinf::net
