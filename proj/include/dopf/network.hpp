#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dopf {

/// Dense bus index; the substation is always bus 0.
using BusId = std::int32_t;
using Complex = std::complex<double>;

inline constexpr BusId kSubstation = 0;

enum class DispatchMode { Reactive, Active };

/// Inverter-interfaced DER. All quantities per-unit on the network base.
struct DerDevice {
  double rating = 0.0;      ///< apparent-power limit S_DR
  double p_measured = 0.0;  ///< known active output in reactive-dispatch mode
  DispatchMode mode = DispatchMode::Reactive;

  /// Half-width of the reactive interval sqrt(S_DR^2 - p^2).
  double reactive_limit() const;
  /// Active output assumed before any optimization (p_measured or 0).
  double nominal_active() const { return mode == DispatchMode::Reactive ? p_measured : 0.0; }
};

struct Bus {
  BusId id = 0;
  Complex load{0.0, 0.0};
  std::optional<DerDevice> der;
};

struct Branch {
  BusId from = 0;  ///< parent side
  BusId to = 0;    ///< child side
  double r = 0.0;
  double x = 0.0;
  double i_rated_sq = 1e6;
};

/// Squared-voltage operating band and reference.
struct VoltageLimits {
  double v_min_sq = 0.95 * 0.95;
  double v_max_sq = 1.05 * 1.05;
  double v_ref_sq = 1.00 * 1.00;
};

/// Raw, unvalidated network description (what the interchange file holds).
struct NetworkData {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  double v0 = 1.0;  ///< squared substation voltage
  double base_kv = 12.47;
  double base_kva = 1000.0;
  VoltageLimits limits;
};

enum class NetworkErrc {
  NotATree,
  Disconnected,
  BadOrientation,
  BadBusIds,
  InvalidData,
  UnknownBus,
};

const char* to_string(NetworkErrc code);

class NetworkError : public std::runtime_error {
 public:
  NetworkError(NetworkErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  NetworkErrc code() const noexcept { return code_; }

 private:
  NetworkErrc code_;
};

struct RadialCheck {
  std::optional<NetworkErrc> error;
  std::string detail;

  bool ok() const { return !error.has_value(); }
  explicit operator bool() const { return ok(); }
};

/// Checks that `data` is a spanning tree rooted at bus 0 with every branch
/// directed parent to child, plus the per-field data invariants.
RadialCheck validate_radial(const NetworkData& data);

/// Immutable, validated radial feeder with precomputed tree indices.
class RadialNetwork {
 public:
  /// Throws NetworkError when validate_radial(data) fails.
  explicit RadialNetwork(NetworkData data);

  const NetworkData& data() const { return data_; }
  std::span<const Bus> buses() const { return data_.buses; }
  std::span<const Branch> branches() const { return data_.branches; }
  std::size_t bus_count() const { return data_.buses.size(); }
  std::size_t branch_count() const { return data_.branches.size(); }
  BusId substation() const { return kSubstation; }
  double v0() const { return data_.v0; }
  double base_kv() const { return data_.base_kv; }
  double base_kva() const { return data_.base_kva; }
  const VoltageLimits& limits() const { return data_.limits; }

  bool contains(BusId bus) const { return bus >= 0 && static_cast<std::size_t>(bus) < bus_count(); }
  const Bus& bus(BusId id) const;

  /// Children of `bus` in ascending id order.
  std::span<const BusId> children(BusId bus) const;
  /// Parent bus, or nullopt for the substation.
  std::optional<BusId> parent(BusId bus) const;
  /// Index into branches() of the branch entering `bus` (none for the substation).
  std::optional<std::size_t> parent_branch(BusId bus) const;
  /// Preorder from the substation: every parent precedes its children.
  std::span<const BusId> preorder() const { return preorder_; }

  std::size_t der_count() const;

  /// Lossless net demand of `bus` and all its descendants.
  Complex aggregate_downstream_load(BusId bus) const;
  /// aggregate_downstream_load for every bus at once.
  std::vector<Complex> downstream_loads() const;

 private:
  void check_bus(BusId bus) const;

  NetworkData data_;
  std::vector<std::int32_t> parent_branch_;  // -1 for the substation
  std::vector<std::size_t> child_offsets_;
  std::vector<BusId> child_list_;
  std::vector<BusId> preorder_;
};

/// Net nominal demand of one bus: load minus the DER's nominal active output.
Complex nominal_net_load(const Bus& bus);

}  // namespace dopf
