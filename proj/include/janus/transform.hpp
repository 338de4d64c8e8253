#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <tuple>
#include <vector>

#include "janus/errors.hpp"
#include "janus/graph.hpp"
#include "janus/ir.hpp"

namespace janus {
namespace transform {

// Rewrites generic FW/BW instructions into the four-phase kinds. Forward
// computes on stages [0,P) become FE, on [P,2P) FF; backward computes mirror
// into BE / BF. Comm suffixes follow the stage that consumes the payload, so
// matched send/receive pairs always agree. BE accumulates the merged
// first-order gradient term, BF only the second-order term.
inline Schedule remap_second_order(const Schedule& s) {
  int P = s.pipeline_degree;
  Schedule out = s;
  out.order = ScheduleOrder::second_order;
  for (auto& list : out.device_lists) {
    for (Instruction& i : list) {
      i.flags &= static_cast<std::uint8_t>(~kFlagUnlabeled);
      if (is_compute(i.kind)) {
        bool forward = is_forward_flow(i.kind);
        bool force_side = i.virtual_stage >= P;
        if (forward) {
          i.kind = force_side ? InstrKind::FF : InstrKind::FE;
        } else if (force_side) {
          i.kind = InstrKind::BF;
          i.flags |= kFlagSecondOrder;
        } else {
          i.kind = InstrKind::BE;
          i.flags |= kFlagMergedFirstOrder;
        }
      } else if (is_comm(i.kind)) {
        CommClass c = comm_class(i.kind);
        int consumer_stage = i.virtual_stage;
        if (c == CommClass::SA) consumer_stage = i.virtual_stage + 1;
        if (c == CommClass::SG) consumer_stage = i.virtual_stage - 1;
        i.kind = make_comm_kind(c, consumer_stage < P ? 'E' : 'F');
      }
    }
  }
  return out;
}

// Maps the 2P one-stage-per-device lists onto physical devices. Per device the
// incoming groups are merged by their start slot in a unit-cost replay of the
// input schedule; ties go forward flow first, then dataflow position (stage
// order in the forward sweep, reverse stage order in the backward sweep).
// Control instructions are regenerated: one OS per physical device at the end.
inline Schedule fold_with_map(const Schedule& s, const std::vector<int>& stage_map) {
  int S = s.num_virtual_stages();
  if (static_cast<int>(stage_map.size()) != S) throw domain_error("fold: stage map size != 2P");
  int num_devices = *std::max_element(stage_map.begin(), stage_map.end()) + 1;

  DepGraph g = build_dependencies(s);
  ReplayResult times = replay(g, unit_durations(g));
  if (!times.ok) throw deadlock_error("fold: input schedule not replayable: " + times.blocked);

  GroupedSchedule grouped = collect_groups(s);

  struct Keyed {
    double slot;
    int flow;  // 0 forward, 1 backward
    int pos;   // dataflow position within the flow
    int group;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(grouped.groups.size());
  // slot of a group = replay start of its compute instruction
  std::unordered_map<std::int64_t, double> slot_of;
  for (int idx = 0; idx < g.size(); ++idx) {
    const Instruction& i = *g.flat[idx];
    if (!is_compute(i.kind)) continue;
    int cslot = is_forward_flow(i.kind) ? detail::kSlotFwdCompute : detail::kSlotBwdCompute;
    slot_of[detail::instr_key(i.micro_batch, i.virtual_stage, cslot)] = times.start[idx];
  }
  for (int gi = 0; gi < static_cast<int>(grouped.groups.size()); ++gi) {
    const Instruction& c = grouped.groups[gi].compute;
    bool fwd = is_forward_flow(c.kind);
    int cslot = fwd ? detail::kSlotFwdCompute : detail::kSlotBwdCompute;
    keyed.push_back(Keyed{slot_of.at(detail::instr_key(c.micro_batch, c.virtual_stage, cslot)),
                          fwd ? 0 : 1, fwd ? c.virtual_stage : S - 1 - c.virtual_stage, gi});
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    return std::tie(a.slot, a.flow, a.pos, a.group) < std::tie(b.slot, b.flow, b.pos, b.group);
  });

  Schedule out;
  out.pipeline_degree = s.pipeline_degree;
  out.num_micro_batches = s.num_micro_batches;
  out.order = s.order;
  out.stage_map = stage_map;
  out.device_lists.resize(num_devices);
  auto rewrite = [&stage_map](Instruction i) {
    i.device = stage_map[i.virtual_stage];
    if (is_comm(i.kind)) i.peer_device = stage_map[comm_peer_stage(i.kind, i.virtual_stage)];
    return i;
  };
  for (const Keyed& k : keyed) {
    InstrGroup grp = grouped.groups[k.group];
    grp.compute = rewrite(grp.compute);
    for (Instruction& i : grp.pre) i = rewrite(i);
    for (Instruction& i : grp.post) i = rewrite(i);
    append_group(out.device_lists[grp.compute.device], grp);
  }
  for (int d = 0; d < num_devices; ++d) {
    Instruction os;
    os.kind = InstrKind::OS;
    os.device = d;
    out.device_lists[d].push_back(os);
  }
  renumber_seq(out);
  return out;
}

// Drops comm instructions whose endpoints landed on one device.
inline std::pair<Schedule, int> prune_intra_device(const Schedule& s) {
  Schedule out = s;
  int pruned = 0;
  for (auto& list : out.device_lists) {
    auto keep_end = std::remove_if(list.begin(), list.end(), [](const Instruction& i) {
      return is_comm(i.kind) && i.peer_device == i.device;
    });
    pruned += static_cast<int>(list.end() - keep_end);
    list.erase(keep_end, list.end());
  }
  renumber_seq(out);
  return {out, pruned};
}

// Rebuilds every device list as the projection of one global topological order
// of the data-dependency DAG, visiting ready instructions lowest key first.
// Keys must define a total preference; list order of the input is ignored.
template <typename KeyFn>
inline Schedule priority_topo_order(const Schedule& s, KeyFn&& key_of) {
  DepGraph g = build_dependencies(s, /*include_seq_edges=*/false);
  int n = g.size();
  std::vector<std::vector<int>> succs(n);
  std::vector<int> indeg(n, 0);
  for (int i = 0; i < n; ++i) {
    indeg[i] = static_cast<int>(g.preds[i].size());
    if (g.unsatisfiable[i]) throw deadlock_error("reorder: unmatched receive");
    for (int p : g.preds[i]) succs[p].push_back(i);
  }
  using Entry = std::pair<decltype(key_of(Instruction{})), int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> ready;
  for (int i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.emplace(key_of(*g.flat[i]), i);

  Schedule out;
  out.pipeline_degree = s.pipeline_degree;
  out.num_micro_batches = s.num_micro_batches;
  out.order = s.order;
  out.stage_map = s.stage_map;
  out.device_lists.resize(s.num_devices());
  int done = 0;
  while (!ready.empty()) {
    int i = ready.top().second;
    ready.pop();
    out.device_lists[g.flat[i]->device].push_back(*g.flat[i]);
    ++done;
    for (int sx : succs[i])
      if (--indeg[sx] == 0) ready.emplace(key_of(*g.flat[sx]), sx);
  }
  if (done != n) throw deadlock_error("reorder: dependency cycle");
  renumber_seq(out);
  return out;
}

}  // namespace transform
}  // namespace janus
