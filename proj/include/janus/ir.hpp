#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "janus/errors.hpp"

namespace janus {

// Four-phase execution: FE/FF run in the forward flow, BF/BE in the backward flow.
enum class Phase : std::uint8_t { FE, FF, BE, BF };

// The 15 instruction kinds. S*/R* are point-to-point sends/receives; the E/F
// suffix names the phase whose computation consumes the payload.
enum class InstrKind : std::uint8_t {
  FE, FF, BE, BF,            // compute
  SAE, SAF, RAE, RAF,        // activation transfers (forward flow)
  SGE, SGF, RGE, RGF,        // gradient transfers (backward flow)
  OS, LM, AR                 // optimizer step, load micro-batch, all-reduce
};

inline constexpr std::array<std::string_view, 15> kInstrKindNames = {
    "FE", "FF", "BE", "BF", "SAE", "SAF", "RAE", "RAF",
    "SGE", "SGF", "RGE", "RGF", "OS", "LM", "AR"};

inline std::string_view to_string(InstrKind k) { return kInstrKindNames[static_cast<int>(k)]; }

inline InstrKind instr_kind_from(std::string_view name) {
  for (int i = 0; i < static_cast<int>(kInstrKindNames.size()); ++i) {
    if (kInstrKindNames[i] == name) return static_cast<InstrKind>(i);
  }
  throw parse_error("unknown instruction kind '" + std::string(name) + "'");
}

inline bool is_compute(InstrKind k) {
  return k == InstrKind::FE || k == InstrKind::FF || k == InstrKind::BE || k == InstrKind::BF;
}
inline bool is_send(InstrKind k) {
  return k == InstrKind::SAE || k == InstrKind::SAF || k == InstrKind::SGE || k == InstrKind::SGF;
}
inline bool is_recv(InstrKind k) {
  return k == InstrKind::RAE || k == InstrKind::RAF || k == InstrKind::RGE || k == InstrKind::RGF;
}
inline bool is_comm(InstrKind k) { return is_send(k) || is_recv(k); }

inline bool is_activation_comm(InstrKind k) {
  return k == InstrKind::SAE || k == InstrKind::SAF || k == InstrKind::RAE || k == InstrKind::RAF;
}

// Forward flow = FE/FF computes plus activation traffic and LM.
inline bool is_forward_flow(InstrKind k) {
  return k == InstrKind::FE || k == InstrKind::FF || is_activation_comm(k) || k == InstrKind::LM;
}

inline Phase phase_of(InstrKind k) {
  switch (k) {
    case InstrKind::FE: return Phase::FE;
    case InstrKind::FF: return Phase::FF;
    case InstrKind::BE: return Phase::BE;
    case InstrKind::BF: return Phase::BF;
    default: throw domain_error("phase_of: not a compute kind");
  }
}

// SA/RA/SG/RG without the phase suffix.
enum class CommClass : std::uint8_t { SA, RA, SG, RG };

inline CommClass comm_class(InstrKind k) {
  switch (k) {
    case InstrKind::SAE: case InstrKind::SAF: return CommClass::SA;
    case InstrKind::RAE: case InstrKind::RAF: return CommClass::RA;
    case InstrKind::SGE: case InstrKind::SGF: return CommClass::SG;
    case InstrKind::RGE: case InstrKind::RGF: return CommClass::RG;
    default: throw domain_error("comm_class: not a comm kind");
  }
}

// 'E' or 'F' suffix of a comm kind.
inline char comm_suffix(InstrKind k) {
  switch (k) {
    case InstrKind::SAE: case InstrKind::RAE: case InstrKind::SGE: case InstrKind::RGE: return 'E';
    case InstrKind::SAF: case InstrKind::RAF: case InstrKind::SGF: case InstrKind::RGF: return 'F';
    default: throw domain_error("comm_suffix: not a comm kind");
  }
}

inline InstrKind make_comm_kind(CommClass c, char suffix) {
  bool e = suffix == 'E';
  switch (c) {
    case CommClass::SA: return e ? InstrKind::SAE : InstrKind::SAF;
    case CommClass::RA: return e ? InstrKind::RAE : InstrKind::RAF;
    case CommClass::SG: return e ? InstrKind::SGE : InstrKind::SGF;
    case CommClass::RG: return e ? InstrKind::RGE : InstrKind::RGF;
  }
  throw domain_error("make_comm_kind: bad class");
}

// Virtual stage on the other end of a comm instruction sitting on stage vs.
// Activations flow toward higher stages, gradients toward lower stages.
inline int comm_peer_stage(InstrKind k, int vs) {
  switch (comm_class(k)) {
    case CommClass::SA: return vs + 1;
    case CommClass::RA: return vs - 1;
    case CommClass::SG: return vs - 1;
    case CommClass::RG: return vs + 1;
  }
  throw domain_error("comm_peer_stage: bad kind");
}

// Instruction metadata bits.
enum : std::uint8_t {
  kFlagUnlabeled = 1u << 0,         // pre-remap generic FW/BW (first-order schedules)
  kFlagRecompute = 1u << 1,         // FF re-derives FE activations locally (baselines)
  kFlagMergedFirstOrder = 1u << 2,  // BE accumulates the merged first-order gradient term
  kFlagSecondOrder = 1u << 3,       // BF carries only the second-order gradient term
  kFlagReplicatedParams = 1u << 4,  // AR syncing a replicated parameter copy on this device
};

struct Instruction {
  InstrKind kind = InstrKind::FE;
  int micro_batch = -1;    // -1 = not applicable (OS/AR)
  int virtual_stage = -1;  // -1 = not applicable (OS/AR)
  int device = 0;
  int peer_device = -1;    // comm kinds only
  int seq = 0;             // per-device ordinal, the sole intra-device ordering authority
  std::uint8_t flags = 0;

  bool has_flag(std::uint8_t f) const { return (flags & f) != 0; }
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

enum class ScheduleOrder : std::uint8_t { first_order, second_order };

// Per-device instruction lists over 2P virtual stages. First-order schedules
// keep one virtual stage per device (2P device lists, identity stage_map);
// folded schedules run P device lists with stage_map sized 2P.
struct Schedule {
  int pipeline_degree = 1;    // P
  int num_micro_batches = 1;  // N_mb
  ScheduleOrder order = ScheduleOrder::first_order;
  std::vector<std::vector<Instruction>> device_lists;
  std::vector<int> stage_map;  // virtual stage -> device

  int num_devices() const { return static_cast<int>(device_lists.size()); }
  int num_virtual_stages() const { return 2 * pipeline_degree; }
  std::size_t total_instructions() const {
    std::size_t n = 0;
    for (const auto& l : device_lists) n += l.size();
    return n;
  }
  friend bool operator==(const Schedule&, const Schedule&) = default;
};

// Symmetric fold: virtual stage s_v and its mirror 2P-1-s_v share a device.
inline int fold_map(int s_v, int pipeline_degree) {
  if (pipeline_degree < 1) throw domain_error("fold_map: pipeline degree must be >= 1");
  if (s_v < 0 || s_v >= 2 * pipeline_degree) {
    throw domain_error("fold_map: virtual stage " + std::to_string(s_v) + " out of [0, " +
                       std::to_string(2 * pipeline_degree) + ")");
  }
  return s_v < pipeline_degree ? s_v : 2 * pipeline_degree - 1 - s_v;
}

struct ValidationIssue {
  int device = -1;
  int seq = -1;
  std::string description;
};

struct ValidationReport {
  std::vector<ValidationIssue> coverage_errors;
  std::vector<ValidationIssue> matching_errors;
  std::vector<ValidationIssue> dependency_errors;
  std::vector<ValidationIssue> gradient_ledger_errors;

  bool ok() const {
    return coverage_errors.empty() && matching_errors.empty() && dependency_errors.empty() &&
           gradient_ledger_errors.empty();
  }
  std::size_t total_errors() const {
    return coverage_errors.size() + matching_errors.size() + dependency_errors.size() +
           gradient_ledger_errors.size();
  }
};

namespace detail {

inline std::string opt_field(int v) { return v < 0 ? "-" : std::to_string(v); }

inline int parse_opt_field(std::string_view text, std::string_view key, int line_no) {
  if (text == "-") return -1;
  int value = 0;
  std::size_t pos = 0;
  try {
    value = std::stoi(std::string(text), &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || value < 0) {
    throw parse_error("bad value '" + std::string(text) + "' for field " + std::string(key),
                      line_no);
  }
  return value;
}

inline std::string_view expect_prefix(std::string_view tok, std::string_view prefix, int line_no) {
  if (tok.substr(0, prefix.size()) != prefix) {
    throw parse_error("expected '" + std::string(prefix) + "...', got '" + std::string(tok) + "'",
                      line_no);
  }
  return tok.substr(prefix.size());
}

inline std::string flags_to_text(std::uint8_t flags) {
  std::string out;
  auto add = [&out](std::string_view name) {
    if (!out.empty()) out += ',';
    out += name;
  };
  if (flags & kFlagRecompute) add("recompute");
  if (flags & kFlagReplicatedParams) add("replicated_params");
  return out;
}

inline std::uint8_t flags_from_text(std::string_view text, int line_no) {
  std::uint8_t flags = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    std::string_view item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                               : comma - start);
    if (item == "recompute") {
      flags |= kFlagRecompute;
    } else if (item == "replicated_params") {
      flags |= kFlagReplicatedParams;
    } else {
      throw parse_error("unknown flag '" + std::string(item) + "'", line_no);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return flags;
}

}  // namespace detail

// Line-oriented schedule format. Header then one instruction per line:
//   SCHEDULE P=<p> NMB=<n> ORDER=<first|second>
//   D<device> <seq> <KIND> mb=<id|-> vs=<stage|-> peer=<device|->
// A trailing `flags=<name,...>` appears only when a non-default flag
// (recompute, replicated_params) is set, so plain schedules stay bit-exact.
inline std::string serialize(const Schedule& s) {
  std::ostringstream out;
  out << "SCHEDULE P=" << s.pipeline_degree << " NMB=" << s.num_micro_batches << " ORDER="
      << (s.order == ScheduleOrder::first_order ? "first" : "second") << '\n';
  for (const auto& list : s.device_lists) {
    for (const Instruction& i : list) {
      out << 'D' << i.device << ' ' << i.seq << ' ' << to_string(i.kind) << " mb="
          << detail::opt_field(i.micro_batch) << " vs=" << detail::opt_field(i.virtual_stage)
          << " peer=" << detail::opt_field(i.peer_device);
      std::string flags = detail::flags_to_text(i.flags);
      if (!flags.empty()) out << " flags=" << flags;
      out << '\n';
    }
  }
  return out.str();
}

inline Schedule deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;

  // header
  if (!std::getline(in, line)) throw parse_error("empty input, missing SCHEDULE header", 1);
  ++line_no;
  std::istringstream header(line);
  std::string tag, p_tok, n_tok, order_tok;
  header >> tag >> p_tok >> n_tok >> order_tok;
  if (tag != "SCHEDULE") throw parse_error("missing SCHEDULE header", line_no);
  Schedule s;
  s.pipeline_degree = detail::parse_opt_field(detail::expect_prefix(p_tok, "P=", line_no), "P", line_no);
  s.num_micro_batches =
      detail::parse_opt_field(detail::expect_prefix(n_tok, "NMB=", line_no), "NMB", line_no);
  std::string_view order_val = detail::expect_prefix(order_tok, "ORDER=", line_no);
  if (order_val == "first") {
    s.order = ScheduleOrder::first_order;
  } else if (order_val == "second") {
    s.order = ScheduleOrder::second_order;
  } else {
    throw parse_error("ORDER must be 'first' or 'second'", line_no);
  }
  if (s.pipeline_degree < 1) throw parse_error("P must be >= 1", line_no);
  if (s.num_micro_batches < 1) throw parse_error("NMB must be >= 1", line_no);

  int num_devices =
      s.order == ScheduleOrder::first_order ? 2 * s.pipeline_degree : s.pipeline_degree;
  s.device_lists.resize(num_devices);
  s.stage_map.assign(2 * s.pipeline_degree, -1);

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string dev_tok, seq_tok, kind_tok, mb_tok, vs_tok, peer_tok, flags_tok;
    ls >> dev_tok >> seq_tok >> kind_tok >> mb_tok >> vs_tok >> peer_tok;
    if (peer_tok.empty()) throw parse_error("truncated instruction line", line_no);
    Instruction i;
    i.device = detail::parse_opt_field(detail::expect_prefix(dev_tok, "D", line_no), "D", line_no);
    i.seq = detail::parse_opt_field(seq_tok, "seq", line_no);
    i.kind = [&] {
      try {
        return instr_kind_from(kind_tok);
      } catch (const parse_error& e) {
        throw parse_error(e.what(), line_no);
      }
    }();
    i.micro_batch =
        detail::parse_opt_field(detail::expect_prefix(mb_tok, "mb=", line_no), "mb", line_no);
    i.virtual_stage =
        detail::parse_opt_field(detail::expect_prefix(vs_tok, "vs=", line_no), "vs", line_no);
    i.peer_device =
        detail::parse_opt_field(detail::expect_prefix(peer_tok, "peer=", line_no), "peer", line_no);
    if (ls >> flags_tok) {
      i.flags = detail::flags_from_text(detail::expect_prefix(flags_tok, "flags=", line_no), line_no);
      std::string extra;
      if (ls >> extra) throw parse_error("trailing token '" + extra + "'", line_no);
    }
    if (i.device >= num_devices) {
      throw parse_error("device " + std::to_string(i.device) + " out of range", line_no);
    }
    if (i.virtual_stage >= 2 * s.pipeline_degree) {
      throw parse_error("virtual stage " + std::to_string(i.virtual_stage) + " out of range",
                        line_no);
    }
    if (s.order == ScheduleOrder::first_order && (is_compute(i.kind) || is_comm(i.kind))) {
      i.flags |= kFlagUnlabeled;
    }
    if (s.order == ScheduleOrder::second_order) {
      if (i.kind == InstrKind::BE) i.flags |= kFlagMergedFirstOrder;
      if (i.kind == InstrKind::BF) i.flags |= kFlagSecondOrder;
    }
    if (is_compute(i.kind) && i.virtual_stage >= 0) {
      s.stage_map[i.virtual_stage] = i.device;
    }
    s.device_lists[i.device].push_back(i);
  }
  for (auto& list : s.device_lists) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Instruction& a, const Instruction& b) { return a.seq < b.seq; });
  }
  return s;
}

}  // namespace janus
