#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <json.hpp>

#include "dopf/network.hpp"

namespace dopf {

/// Connected subtree segment. A non-root area owns the branch entering its
/// top bus; the voltage of the parent bus above it and the flows entering its
/// child areas are boundary constants.
struct Area {
  int id = 0;
  BusId top = 0;
  std::vector<BusId> buses;             ///< preorder
  std::vector<std::size_t> branches;    ///< branches entering member buses
  std::optional<BusId> root_interface;  ///< parent bus outside the area
  std::vector<BusId> child_interfaces;  ///< top buses of child areas, ascending
  std::optional<int> parent_area;
  std::vector<int> child_areas;         ///< in child_interfaces order
};

/// Cut between two areas, keyed by the child area's top bus.
struct Interface {
  BusId bus = 0;
  BusId parent_bus = 0;
  int parent_area = 0;
  int child_area = 0;
};

struct Partition {
  std::vector<Area> areas;            ///< sorted by top bus, root area first
  std::vector<Interface> interfaces;  ///< ascending bus
  std::vector<int> area_of_bus;

  /// Index into interfaces, or -1.
  int interface_index(BusId bus) const;
};

/// Post-order accumulation: each bus merges pending groups of its children in
/// ascending order while they fit; a group is sealed when it reaches
/// max_nodes or a child group does not fit. Throws std::invalid_argument for
/// max_nodes < 1.
Partition decompose(const RadialNetwork& network, int max_nodes);

enum class BoundaryKind { VoltageDown, FlowUp };

const char* to_string(BoundaryKind kind);

struct ScheduleEntry {
  BusId bus = 0;  ///< interface key
  int exporter = 0;
  int importer = 0;
  BoundaryKind kind = BoundaryKind::VoltageDown;
};

/// VoltageDown then FlowUp for each interface in ascending bus order. The
/// boundary vector holds one slot per VoltageDown entry and two (P, Q) per
/// FlowUp entry, in this order.
std::vector<ScheduleEntry> interface_schedule(const Partition& partition);

/// Slot of the parent-bus voltage for interface index i; P and Q follow.
inline std::size_t voltage_slot(std::size_t interface_index) { return 3 * interface_index; }

nlohmann::json partition_to_json(const Partition& partition);

}  // namespace dopf
