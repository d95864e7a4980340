#include "dopf/partition.hpp"

#include <algorithm>
#include <stdexcept>

namespace dopf {

int Partition::interface_index(BusId bus) const {
  auto it = std::lower_bound(interfaces.begin(), interfaces.end(), bus,
                             [](const Interface& i, BusId b) { return i.bus < b; });
  if (it == interfaces.end() || it->bus != bus) return -1;
  return static_cast<int>(it - interfaces.begin());
}

const char* to_string(BoundaryKind kind) { return kind == BoundaryKind::VoltageDown ? "VoltageDown" : "FlowUp"; }

Partition decompose(const RadialNetwork& network, int max_nodes) {
  if (max_nodes < 1) throw std::invalid_argument("max_nodes must be at least 1");
  const std::size_t n = network.bus_count();
  const auto order = network.preorder();
  const auto cap = static_cast<std::size_t>(max_nodes);

  std::vector<std::vector<BusId>> pending(n);
  std::vector<std::vector<BusId>> sealed;
  auto seal = [&](std::vector<BusId>& group) {
    sealed.push_back(std::move(group));
    group.clear();
  };

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const BusId b = *it;
    std::vector<BusId> group{b};
    for (BusId c : network.children(b)) {
      auto& pc = pending[c];
      if (pc.empty()) continue;
      if (group.size() + pc.size() <= cap) {
        group.insert(group.end(), pc.begin(), pc.end());
        pc.clear();
        pc.shrink_to_fit();
      } else {
        seal(pc);
      }
    }
    if (group.size() >= cap || b == kSubstation)
      seal(group);
    else
      pending[b] = std::move(group);
  }

  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;

  Partition part;
  part.area_of_bus.assign(n, -1);
  for (auto& g : sealed) std::sort(g.begin(), g.end(), [&](BusId a, BusId b) { return pos[a] < pos[b]; });
  std::sort(sealed.begin(), sealed.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });

  part.areas.resize(sealed.size());
  for (std::size_t k = 0; k < sealed.size(); ++k) {
    Area& a = part.areas[k];
    a.id = static_cast<int>(k);
    a.buses = std::move(sealed[k]);
    a.top = a.buses.front();
    for (BusId b : a.buses) part.area_of_bus[b] = a.id;
  }
  for (Area& a : part.areas) {
    for (BusId b : a.buses)
      if (auto br = network.parent_branch(b)) a.branches.push_back(*br);
    if (auto p = network.parent(a.top)) {
      a.root_interface = *p;
      a.parent_area = part.area_of_bus[*p];
      part.interfaces.push_back({a.top, *p, *a.parent_area, a.id});
    }
  }
  std::sort(part.interfaces.begin(), part.interfaces.end(),
            [](const Interface& x, const Interface& y) { return x.bus < y.bus; });
  for (const Interface& i : part.interfaces) {
    Area& parent = part.areas[i.parent_area];
    parent.child_interfaces.push_back(i.bus);
    parent.child_areas.push_back(i.child_area);
  }
  return part;
}

std::vector<ScheduleEntry> interface_schedule(const Partition& partition) {
  std::vector<ScheduleEntry> out;
  out.reserve(2 * partition.interfaces.size());
  for (const Interface& i : partition.interfaces) {
    out.push_back({i.bus, i.parent_area, i.child_area, BoundaryKind::VoltageDown});
    out.push_back({i.bus, i.child_area, i.parent_area, BoundaryKind::FlowUp});
  }
  return out;
}

nlohmann::json partition_to_json(const Partition& partition) {
  nlohmann::json areas = nlohmann::json::array();
  for (const Area& a : partition.areas) {
    nlohmann::json j{{"id", a.id},
                     {"top", a.top},
                     {"buses", a.buses},
                     {"branches", a.branches},
                     {"child_interfaces", a.child_interfaces},
                     {"child_areas", a.child_areas}};
    j["root_interface"] = a.root_interface ? nlohmann::json(*a.root_interface) : nlohmann::json();
    j["parent_area"] = a.parent_area ? nlohmann::json(*a.parent_area) : nlohmann::json();
    areas.push_back(std::move(j));
  }
  nlohmann::json schedule = nlohmann::json::array();
  for (const ScheduleEntry& e : interface_schedule(partition))
    schedule.push_back({{"bus", e.bus}, {"exporter", e.exporter}, {"importer", e.importer}, {"kind", to_string(e.kind)}});
  return {{"area_count", partition.areas.size()}, {"areas", std::move(areas)}, {"schedule", std::move(schedule)}};
}

}  // namespace dopf
