#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "janus/errors.hpp"
#include "janus/ir.hpp"

namespace janus {

// Flattened view of a schedule plus its dependency edges. Edges cover:
//   - intra-device list order (optional),
//   - send/receive rendezvous pairs,
//   - comm-to-compute data edges (receive before compute, compute before send),
//   - the per-micro-batch phase DAG,
//   - LM before the micro-batch's first forward compute.
struct DepGraph {
  const Schedule* schedule = nullptr;
  std::vector<int> offset;                 // device -> base flat index
  std::vector<const Instruction*> flat;    // flat index -> instruction
  std::vector<std::vector<int>> preds;     // flat index -> predecessor flat indices
  std::vector<bool> unsatisfiable;         // receive lacking a matched send

  int flat_index(int device, int pos) const { return offset[device] + pos; }
  int size() const { return static_cast<int>(flat.size()); }
};

namespace detail {

// (micro_batch, virtual_stage, slot) lookup key; slot distinguishes the
// forward/backward compute and the four comm classes on one stage.
inline std::int64_t instr_key(int mb, int vs, int slot) {
  return (static_cast<std::int64_t>(mb) << 24) | (static_cast<std::int64_t>(vs) << 4) | slot;
}
constexpr int kSlotFwdCompute = 0;
constexpr int kSlotBwdCompute = 1;
constexpr int kSlotLm = 2;

inline int comm_slot(CommClass c) { return 3 + static_cast<int>(c); }

}  // namespace detail

inline DepGraph build_dependencies(const Schedule& s, bool include_seq_edges = true) {
  DepGraph g;
  g.schedule = &s;
  g.offset.resize(s.num_devices());
  int total = 0;
  for (int d = 0; d < s.num_devices(); ++d) {
    g.offset[d] = total;
    total += static_cast<int>(s.device_lists[d].size());
  }
  g.flat.resize(total);
  g.preds.assign(total, {});
  g.unsatisfiable.assign(total, false);

  std::unordered_map<std::int64_t, int> by_key;
  by_key.reserve(static_cast<std::size_t>(total) * 2);
  for (int d = 0; d < s.num_devices(); ++d) {
    const auto& list = s.device_lists[d];
    for (int p = 0; p < static_cast<int>(list.size()); ++p) {
      int idx = g.flat_index(d, p);
      const Instruction& i = list[p];
      g.flat[idx] = &i;
      if (include_seq_edges && p > 0) g.preds[idx].push_back(idx - 1);
      if (is_compute(i.kind) && i.micro_batch >= 0 && i.virtual_stage >= 0) {
        int slot = is_forward_flow(i.kind) ? detail::kSlotFwdCompute : detail::kSlotBwdCompute;
        by_key.emplace(detail::instr_key(i.micro_batch, i.virtual_stage, slot), idx);
      } else if (i.kind == InstrKind::LM && i.micro_batch >= 0) {
        by_key.emplace(detail::instr_key(i.micro_batch, 0, detail::kSlotLm), idx);
      }
    }
  }

  auto find = [&by_key](int mb, int vs, int slot) -> int {
    auto it = by_key.find(detail::instr_key(mb, vs, slot));
    return it == by_key.end() ? -1 : it->second;
  };
  auto add_edge = [&g](int from, int to) {
    if (from >= 0 && to >= 0) g.preds[to].push_back(from);
  };

  // Comm pairing by (class, suffix, micro-batch, from-device, to-device).
  std::map<std::tuple<int, char, int, int, int>, std::pair<std::vector<int>, std::vector<int>>>
      comm_pairs;
  for (int idx = 0; idx < total; ++idx) {
    const Instruction& i = *g.flat[idx];
    if (!is_comm(i.kind)) continue;
    int from = is_send(i.kind) ? i.device : i.peer_device;
    int to = is_send(i.kind) ? i.peer_device : i.device;
    // activation and gradient traffic pair up independently
    int payload = (comm_class(i.kind) == CommClass::SA || comm_class(i.kind) == CommClass::RA) ? 0 : 1;
    auto key = std::make_tuple(payload, comm_suffix(i.kind), i.micro_batch, from, to);
    if (is_send(i.kind)) {
      comm_pairs[key].first.push_back(idx);
    } else {
      comm_pairs[key].second.push_back(idx);
    }

    // data edges to/from the compute on the comm's own stage
    int mb = i.micro_batch, vs = i.virtual_stage;
    switch (comm_class(i.kind)) {
      case CommClass::SA: add_edge(find(mb, vs, detail::kSlotFwdCompute), idx); break;
      case CommClass::RA: add_edge(idx, find(mb, vs, detail::kSlotFwdCompute)); break;
      case CommClass::SG: add_edge(find(mb, vs, detail::kSlotBwdCompute), idx); break;
      case CommClass::RG: add_edge(idx, find(mb, vs, detail::kSlotBwdCompute)); break;
    }
  }
  for (auto& [key, sr] : comm_pairs) {
    auto& [sends, receives] = sr;
    std::size_t n = std::min(sends.size(), receives.size());
    for (std::size_t i = 0; i < n; ++i) add_edge(sends[i], receives[i]);
    for (std::size_t i = n; i < receives.size(); ++i) g.unsatisfiable[receives[i]] = true;
  }

  // Phase DAG per micro-batch.
  int P = s.pipeline_degree;
  int S = 2 * P;
  for (int m = 0; m < s.num_micro_batches; ++m) {
    add_edge(find(m, 0, detail::kSlotLm), find(m, 0, detail::kSlotFwdCompute));
    if (s.order == ScheduleOrder::first_order) {
      for (int v = 0; v + 1 < S; ++v)
        add_edge(find(m, v, detail::kSlotFwdCompute), find(m, v + 1, detail::kSlotFwdCompute));
      add_edge(find(m, S - 1, detail::kSlotFwdCompute), find(m, S - 1, detail::kSlotBwdCompute));
      for (int v = S - 1; v > 0; --v)
        add_edge(find(m, v, detail::kSlotBwdCompute), find(m, v - 1, detail::kSlotBwdCompute));
      for (int v = 0; v < S; ++v)
        add_edge(find(m, v, detail::kSlotFwdCompute), find(m, v, detail::kSlotBwdCompute));
    } else {
      // FE chain up, FF chain up, BF chain down, BE chain down.
      for (int v = 0; v + 1 < P; ++v)
        add_edge(find(m, v, detail::kSlotFwdCompute), find(m, v + 1, detail::kSlotFwdCompute));
      for (int v = P; v + 1 < S; ++v)
        add_edge(find(m, v, detail::kSlotFwdCompute), find(m, v + 1, detail::kSlotFwdCompute));
      for (int v = S - 1; v > P; --v)
        add_edge(find(m, v, detail::kSlotBwdCompute), find(m, v - 1, detail::kSlotBwdCompute));
      for (int v = P - 1; v > 0; --v)
        add_edge(find(m, v, detail::kSlotBwdCompute), find(m, v - 1, detail::kSlotBwdCompute));
      // boundary hand-offs at the fold point
      add_edge(find(m, P - 1, detail::kSlotFwdCompute), find(m, P, detail::kSlotFwdCompute));
      add_edge(find(m, P, detail::kSlotBwdCompute), find(m, P - 1, detail::kSlotBwdCompute));
      for (int v = 0; v < S; ++v) {
        // backward through a stage needs that stage's forward
        add_edge(find(m, v, detail::kSlotFwdCompute), find(m, v, detail::kSlotBwdCompute));
        // FF reuses the mirrored FE activations; BE merges the mirrored BF term
        if (v >= P) add_edge(find(m, S - 1 - v, detail::kSlotFwdCompute), find(m, v, detail::kSlotFwdCompute));
        if (v < P) add_edge(find(m, S - 1 - v, detail::kSlotBwdCompute), find(m, v, detail::kSlotBwdCompute));
      }
    }
  }
  return g;
}

struct ReplayResult {
  bool ok = false;
  std::vector<double> start, end;  // by flat index
  double makespan = 0;
  std::string blocked;             // non-empty when ok == false
};

// Executes each device list in seq order; an instruction starts once the device
// is free and every predecessor has finished. Start times follow uniquely from
// that recurrence, so the result is deterministic.
inline ReplayResult replay(const DepGraph& g, const std::vector<double>& durations) {
  int n = g.size();
  ReplayResult r;
  r.start.assign(n, 0.0);
  r.end.assign(n, 0.0);
  std::vector<int> indeg(n, 0);
  std::vector<std::vector<int>> succs(n);
  for (int i = 0; i < n; ++i) {
    indeg[i] = static_cast<int>(g.preds[i].size()) + (g.unsatisfiable[i] ? 1 : 0);
    for (int p : g.preds[i]) succs[p].push_back(i);
  }
  std::vector<int> ready;
  std::vector<bool> processed(n, false);
  for (int i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push_back(i);
  int done = 0;
  while (!ready.empty()) {
    int i = ready.back();
    ready.pop_back();
    double t = 0;
    for (int p : g.preds[i]) t = std::max(t, r.end[p]);
    r.start[i] = t;
    r.end[i] = t + durations[i];
    r.makespan = std::max(r.makespan, r.end[i]);
    processed[i] = true;
    ++done;
    for (int sidx : succs[i])
      if (--indeg[sidx] == 0) ready.push_back(sidx);
  }
  if (done == n) {
    r.ok = true;
    return r;
  }
  // Describe the blocked frontier: the first stuck instruction per device.
  std::string desc;
  const Schedule& s = *g.schedule;
  int reported = 0;
  for (int d = 0; d < s.num_devices() && reported < 8; ++d) {
    const auto& list = s.device_lists[d];
    for (int p = 0; p < static_cast<int>(list.size()); ++p) {
      int idx = g.flat_index(d, p);
      if (processed[idx]) continue;
      const Instruction& i = list[p];
      if (!desc.empty()) desc += "; ";
      desc += "D" + std::to_string(d) + " seq " + std::to_string(i.seq) + " " +
              std::string(to_string(i.kind)) + " mb=" + std::to_string(i.micro_batch);
      if (g.unsatisfiable[idx]) desc += " (no matching send)";
      ++reported;
      break;
    }
  }
  r.blocked = desc.empty() ? "schedule replay stalled" : desc;
  return r;
}

inline std::vector<double> unit_durations(const DepGraph& g) {
  std::vector<double> d(g.size(), 0.0);
  for (int i = 0; i < g.size(); ++i)
    if (is_compute(g.flat[i]->kind)) d[i] = 1.0;
  return d;
}

// Longest path through the dependency graph with node weights; the simulator's
// makespan must coincide with it. Implemented as an iterative DFS over
// successors, a separate route from the replay recurrence.
inline double longest_path_makespan(const DepGraph& g, const std::vector<double>& durations) {
  int n = g.size();
  std::vector<std::vector<int>> succs(n);
  std::vector<bool> has_pred(n, false);
  for (int i = 0; i < n; ++i) {
    for (int p : g.preds[i]) {
      succs[p].push_back(i);
      has_pred[i] = true;
    }
    if (g.unsatisfiable[i]) throw deadlock_error("unmatched receive in dependency graph");
  }
  // tail[i] = longest weighted path starting at i
  std::vector<double> tail(n, -1.0);
  std::vector<std::uint8_t> state(n, 0);  // 0 new, 1 on stack, 2 done
  std::vector<int> stack;
  for (int root = 0; root < n; ++root) {
    if (state[root] == 2) continue;
    stack.push_back(root);
    while (!stack.empty()) {
      int i = stack.back();
      if (state[i] == 0) {
        state[i] = 1;
        for (int sx : succs[i]) {
          if (state[sx] == 1) throw deadlock_error("cycle in dependency graph");
          if (state[sx] == 0) stack.push_back(sx);
        }
      } else {
        stack.pop_back();
        if (state[i] == 2) continue;
        state[i] = 2;
        double best = 0;
        for (int sx : succs[i]) best = std::max(best, tail[sx]);
        tail[i] = durations[i] + best;
      }
    }
  }
  double makespan = 0;
  for (int i = 0; i < n; ++i)
    if (!has_pred[i]) makespan = std::max(makespan, tail[i]);
  return makespan;
}

// A compute instruction with its attached comm/LM instructions. Transform
// passes move groups as and reassign devices and seq afterwards.
struct InstrGroup {
  Instruction compute;
  std::vector<Instruction> pre;   // LM, receives
  std::vector<Instruction> post;  // sends
};

struct GroupedSchedule {
  std::vector<InstrGroup> groups;
  std::vector<Instruction> control;  // OS/AR, per original device order
};

inline GroupedSchedule collect_groups(const Schedule& s) {
  GroupedSchedule out;
  std::unordered_map<std::int64_t, int> index;  // (mb, vs, fwd/bwd) -> group
  for (const auto& list : s.device_lists) {
    for (const Instruction& i : list) {
      if (is_compute(i.kind)) {
        int slot = is_forward_flow(i.kind) ? detail::kSlotFwdCompute : detail::kSlotBwdCompute;
        index.emplace(detail::instr_key(i.micro_batch, i.virtual_stage, slot),
                      static_cast<int>(out.groups.size()));
        out.groups.push_back(InstrGroup{i, {}, {}});
      }
    }
  }
  auto group_of = [&](int mb, int vs, int slot) -> InstrGroup& {
    auto it = index.find(detail::instr_key(mb, vs, slot));
    if (it == index.end()) throw state_error("comm instruction without its compute");
    return out.groups[static_cast<std::size_t>(it->second)];
  };
  for (const auto& list : s.device_lists) {
    for (const Instruction& i : list) {
      if (is_compute(i.kind)) continue;
      switch (i.kind) {
        case InstrKind::LM: {
          auto& pre = group_of(i.micro_batch, 0, detail::kSlotFwdCompute).pre;
          pre.insert(pre.begin(), i);
          break;
        }
        case InstrKind::OS:
        case InstrKind::AR:
          out.control.push_back(i);
          break;
        default: {
          CommClass c = comm_class(i.kind);
          bool fwd = c == CommClass::SA || c == CommClass::RA;
          int slot = fwd ? detail::kSlotFwdCompute : detail::kSlotBwdCompute;
          if (is_recv(i.kind)) {
            group_of(i.micro_batch, i.virtual_stage, slot).pre.push_back(i);
          } else {
            group_of(i.micro_batch, i.virtual_stage, slot).post.push_back(i);
          }
          break;
        }
      }
    }
  }
  return out;
}

inline void append_group(std::vector<Instruction>& list, const InstrGroup& g) {
  for (const Instruction& i : g.pre) list.push_back(i);
  list.push_back(g.compute);
  for (const Instruction& i : g.post) list.push_back(i);
}

inline void renumber_seq(Schedule& s) {
  for (auto& list : s.device_lists) {
    int seq = 0;
    for (Instruction& i : list) i.seq = seq++;
  }
}

}  // namespace janus
