#include "dopf/network.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

namespace dopf {

double DerDevice::reactive_limit() const {
  return std::sqrt(std::max(0.0, rating * rating - p_measured * p_measured));
}

const char* to_string(NetworkErrc code) {
  switch (code) {
    case NetworkErrc::NotATree: return "NotATree";
    case NetworkErrc::Disconnected: return "Disconnected";
    case NetworkErrc::BadOrientation: return "BadOrientation";
    case NetworkErrc::BadBusIds: return "BadBusIds";
    case NetworkErrc::InvalidData: return "InvalidData";
    case NetworkErrc::UnknownBus: return "UnknownBus";
  }
  return "Unknown";
}

Complex nominal_net_load(const Bus& bus) {
  Complex net = bus.load;
  if (bus.der) net -= Complex(bus.der->nominal_active(), 0.0);
  return net;
}

namespace {

RadialCheck fail(NetworkErrc code, std::string detail) { return RadialCheck{code, std::move(detail)}; }

bool finite(double v) { return std::isfinite(v); }

RadialCheck check_fields(const NetworkData& data) {
  const auto& lim = data.limits;
  if (!(data.v0 > 0.0) || !finite(data.v0)) return fail(NetworkErrc::InvalidData, "v0 must be positive");
  if (!(data.base_kv > 0.0) || !(data.base_kva > 0.0))
    return fail(NetworkErrc::InvalidData, "base quantities must be positive");
  if (!(0.0 < lim.v_min_sq && lim.v_min_sq < lim.v_ref_sq && lim.v_ref_sq < lim.v_max_sq))
    return fail(NetworkErrc::InvalidData, "voltage limits must satisfy 0 < v_min < v_ref < v_max");

  for (const Bus& b : data.buses) {
    if (!finite(b.load.real()) || !finite(b.load.imag()) || b.load.real() < 0.0) {
      std::ostringstream os;
      os << "bus " << b.id << ": active load must be finite and non-negative";
      return fail(NetworkErrc::InvalidData, os.str());
    }
    if (b.der) {
      const DerDevice& d = *b.der;
      if (!(d.rating >= 0.0) || !(d.p_measured >= 0.0) || d.p_measured > d.rating || !finite(d.rating)) {
        std::ostringstream os;
        os << "bus " << b.id << ": DER requires 0 <= p_measured <= rating";
        return fail(NetworkErrc::InvalidData, os.str());
      }
    }
  }
  const Bus& sub = data.buses.front();
  if (sub.der || sub.load != Complex{}) return fail(NetworkErrc::InvalidData, "substation must carry no load and no DER");

  for (const Branch& br : data.branches) {
    if (!(br.r >= 0.0) || !(br.x >= 0.0) || (br.r == 0.0 && br.x == 0.0) || !finite(br.r) || !finite(br.x)) {
      std::ostringstream os;
      os << "branch " << br.from << "->" << br.to << ": impedance must be non-negative and non-zero";
      return fail(NetworkErrc::InvalidData, os.str());
    }
    if (!(br.i_rated_sq > 0.0)) {
      std::ostringstream os;
      os << "branch " << br.from << "->" << br.to << ": i_rated_sq must be positive";
      return fail(NetworkErrc::InvalidData, os.str());
    }
  }
  return {};
}

}  // namespace

RadialCheck validate_radial(const NetworkData& data) {
  const std::size_t n = data.buses.size();
  if (n == 0) return fail(NetworkErrc::BadBusIds, "network has no buses");
  for (std::size_t i = 0; i < n; ++i) {
    if (data.buses[i].id != static_cast<BusId>(i)) {
      std::ostringstream os;
      os << "bus ids must be dense 0..N-1 in order; position " << i << " holds id " << data.buses[i].id;
      return fail(NetworkErrc::BadBusIds, os.str());
    }
  }

  // Undirected adjacency: (neighbour, branch index).
  std::vector<std::vector<std::pair<BusId, std::size_t>>> adj(n);
  for (std::size_t k = 0; k < data.branches.size(); ++k) {
    const Branch& br = data.branches[k];
    if (br.from < 0 || br.to < 0 || static_cast<std::size_t>(br.from) >= n || static_cast<std::size_t>(br.to) >= n) {
      std::ostringstream os;
      os << "branch " << k << " references an unknown bus";
      return fail(NetworkErrc::InvalidData, os.str());
    }
    if (br.from == br.to) return fail(NetworkErrc::NotATree, "self-loop branch");
    adj[br.from].emplace_back(br.to, k);
    adj[br.to].emplace_back(br.from, k);
  }

  std::vector<char> seen(n, 0);
  std::vector<std::pair<std::size_t, BusId>> tree_edges;  // (branch, discovering parent)
  std::queue<BusId> frontier;
  frontier.push(kSubstation);
  seen[kSubstation] = 1;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    BusId u = frontier.front();
    frontier.pop();
    for (auto [w, k] : adj[u]) {
      if (seen[w]) continue;
      seen[w] = 1;
      ++reached;
      tree_edges.emplace_back(k, u);
      frontier.push(w);
    }
  }
  if (reached != n) {
    auto it = std::find(seen.begin(), seen.end(), 0);
    std::ostringstream os;
    os << "bus " << (it - seen.begin()) << " is unreachable from the substation";
    return fail(NetworkErrc::Disconnected, os.str());
  }
  if (data.branches.size() != n - 1) {
    std::ostringstream os;
    os << data.branches.size() << " branches for " << n << " buses (expected " << n - 1 << ")";
    return fail(NetworkErrc::NotATree, os.str());
  }
  for (auto [k, parent] : tree_edges) {
    if (data.branches[k].from != parent) {
      std::ostringstream os;
      os << "branch " << data.branches[k].from << "->" << data.branches[k].to << " points toward the substation";
      return fail(NetworkErrc::BadOrientation, os.str());
    }
  }
  return check_fields(data);
}

RadialNetwork::RadialNetwork(NetworkData data) : data_(std::move(data)) {
  if (RadialCheck check = validate_radial(data_); !check) throw NetworkError(*check.error, check.detail);

  const std::size_t n = data_.buses.size();
  parent_branch_.assign(n, -1);
  std::vector<std::size_t> child_count(n, 0);
  for (std::size_t k = 0; k < data_.branches.size(); ++k) {
    parent_branch_[data_.branches[k].to] = static_cast<std::int32_t>(k);
    ++child_count[data_.branches[k].from];
  }
  child_offsets_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) child_offsets_[i + 1] = child_offsets_[i] + child_count[i];
  child_list_.resize(child_offsets_[n]);
  std::vector<std::size_t> fill(child_offsets_.begin(), child_offsets_.end() - 1);
  for (const Branch& br : data_.branches) child_list_[fill[br.from]++] = br.to;
  for (std::size_t i = 0; i < n; ++i)
    std::sort(child_list_.begin() + static_cast<std::ptrdiff_t>(child_offsets_[i]),
              child_list_.begin() + static_cast<std::ptrdiff_t>(child_offsets_[i + 1]));

  preorder_.reserve(n);
  std::vector<BusId> stack{kSubstation};
  while (!stack.empty()) {
    BusId b = stack.back();
    stack.pop_back();
    preorder_.push_back(b);
    auto kids = children(b);
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
  }
}

void RadialNetwork::check_bus(BusId bus) const {
  if (!contains(bus)) throw NetworkError(NetworkErrc::UnknownBus, "unknown bus " + std::to_string(bus));
}

const Bus& RadialNetwork::bus(BusId id) const {
  check_bus(id);
  return data_.buses[static_cast<std::size_t>(id)];
}

std::span<const BusId> RadialNetwork::children(BusId bus) const {
  check_bus(bus);
  const auto i = static_cast<std::size_t>(bus);
  return std::span<const BusId>(child_list_).subspan(child_offsets_[i], child_offsets_[i + 1] - child_offsets_[i]);
}

std::optional<BusId> RadialNetwork::parent(BusId bus) const {
  auto k = parent_branch(bus);
  if (!k) return std::nullopt;
  return data_.branches[*k].from;
}

std::optional<std::size_t> RadialNetwork::parent_branch(BusId bus) const {
  check_bus(bus);
  std::int32_t k = parent_branch_[static_cast<std::size_t>(bus)];
  if (k < 0) return std::nullopt;
  return static_cast<std::size_t>(k);
}

std::size_t RadialNetwork::der_count() const {
  return static_cast<std::size_t>(
      std::count_if(data_.buses.begin(), data_.buses.end(), [](const Bus& b) { return b.der.has_value(); }));
}

std::vector<Complex> RadialNetwork::downstream_loads() const {
  std::vector<Complex> total(bus_count());
  for (auto it = preorder_.rbegin(); it != preorder_.rend(); ++it) {
    BusId b = *it;
    total[b] += nominal_net_load(data_.buses[b]);
    if (auto p = parent(b)) total[*p] += total[b];
  }
  return total;
}

Complex RadialNetwork::aggregate_downstream_load(BusId bus) const {
  check_bus(bus);
  Complex sum{};
  std::vector<BusId> stack{bus};
  while (!stack.empty()) {
    BusId b = stack.back();
    stack.pop_back();
    sum += nominal_net_load(data_.buses[b]);
    for (BusId c : children(b)) stack.push_back(c);
  }
  return sum;
}

}  // namespace dopf
