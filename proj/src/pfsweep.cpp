#include "dopf/pfsweep.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dopf {

Dispatch nominal_dispatch(const RadialNetwork& network) {
  Dispatch d(network.bus_count());
  for (const Bus& b : network.buses())
    if (b.der) d[b.id] = Complex(b.der->nominal_active(), 0.0);
  return d;
}

NetworkState solve_power_flow(const RadialNetwork& network, const Dispatch& dispatch, const SweepOptions& options) {
  const std::size_t n = network.bus_count();
  if (dispatch.size() != n) throw PowerFlowError(PowerFlowErrc::BadDispatch, "dispatch length differs from bus count");
  if (!(options.tol > 0.0)) throw std::invalid_argument("sweep tolerance must be positive");

  const auto branches = network.branches();
  const auto order = network.preorder();
  std::vector<std::size_t> entering(n, 0);
  for (BusId b : order)
    if (auto k = network.parent_branch(b)) entering[b] = *k;

  NetworkState s;
  s.v.assign(n, network.v0());
  s.P.assign(branches.size(), 0.0);
  s.Q.assign(branches.size(), 0.0);
  s.l.assign(branches.size(), 0.0);

  std::vector<Complex> through(n);  // power drawn into each bus's subtree, at the bus
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    double change = 0.0;
    auto track = [&change](double& slot, double value) {
      change = std::max(change, std::abs(value - slot) / std::max(1.0, std::abs(value)));
      slot = value;
    };

    // Backward: accumulate flows leaf to root with the current losses.
    std::fill(through.begin(), through.end(), Complex{});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const BusId b = *it;
      if (b == kSubstation) continue;
      const Bus& bus = network.bus(b);
      const std::size_t k = entering[b];
      const Branch& br = branches[k];
      Complex demand = bus.load - dispatch[b] + through[b];
      track(s.P[k], demand.real() + br.r * s.l[k]);
      track(s.Q[k], demand.imag() + br.x * s.l[k]);
      through[br.from] += Complex(s.P[k], s.Q[k]);
    }

    // Forward: voltages root to leaf, then currents from the sending-end voltage.
    for (BusId b : order) {
      if (b == kSubstation) continue;
      const std::size_t k = entering[b];
      const Branch& br = branches[k];
      const double vi = s.v[br.from];
      const double vj = vi - 2.0 * (br.r * s.P[k] + br.x * s.Q[k]) + (br.r * br.r + br.x * br.x) * s.l[k];
      if (!(vj >= options.collapse_v)) {
        std::ostringstream os;
        os << "voltage collapse at bus " << b << " on sweep " << sweep << " (v = " << vj << ")";
        throw PowerFlowError(PowerFlowErrc::NegativeVoltage, os.str());
      }
      track(s.v[b], vj);
      track(s.l[k], (s.P[k] * s.P[k] + s.Q[k] * s.Q[k]) / vi);
    }
    if (change < options.tol) return s;
  }
  std::ostringstream os;
  os << "no convergence within " << options.max_sweeps << " sweeps";
  throw PowerFlowError(PowerFlowErrc::NoConvergence, os.str());
}

std::vector<LimitViolation> check_limits(const NetworkState& state, const RadialNetwork& network) {
  std::vector<LimitViolation> out;
  const VoltageLimits& lim = network.limits();
  for (const Bus& b : network.buses()) {
    const double v = state.v[b.id];
    if (v < lim.v_min_sq)
      out.push_back({LimitViolation::Kind::Undervoltage, b.id, v, lim.v_min_sq, lim.v_min_sq - v});
    else if (v > lim.v_max_sq)
      out.push_back({LimitViolation::Kind::Overvoltage, b.id, v, lim.v_max_sq, v - lim.v_max_sq});
  }
  const auto branches = network.branches();
  for (std::size_t k = 0; k < branches.size(); ++k) {
    if (state.l[k] > branches[k].i_rated_sq)
      out.push_back({LimitViolation::Kind::Overcurrent, branches[k].to, state.l[k], branches[k].i_rated_sq,
                     state.l[k] - branches[k].i_rated_sq});
  }
  return out;
}

double total_loss(const NetworkState& state, const RadialNetwork& network) {
  double loss = 0.0;
  const auto branches = network.branches();
  for (std::size_t k = 0; k < branches.size(); ++k) loss += state.l[k] * branches[k].r;
  return loss;
}

Complex substation_injection(const NetworkState& state, const RadialNetwork& network) {
  Complex total{};
  const auto branches = network.branches();
  for (std::size_t k = 0; k < branches.size(); ++k)
    if (branches[k].from == kSubstation) total += Complex(state.P[k], state.Q[k]);
  return total;
}

}  // namespace dopf
