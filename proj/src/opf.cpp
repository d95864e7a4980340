#include "dopf/opf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dopf/partition.hpp"

namespace dopf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
// Smallest half-width kept for a reactive interval so the variable stays free.
constexpr double kMinDispatchWidth = 1e-9;
// Added under the square root of the voltage-deviation form so it is differentiable at zero.
constexpr double kRootSmoothing = 1e-12;
}  // namespace

const char* to_string(Objective objective) {
  switch (objective) {
    case Objective::LossMin: return "loss-min";
    case Objective::DerMax: return "der-max";
    case Objective::DeltaVMin: return "dv-min";
  }
  return "unknown";
}

Objective objective_from_string(const std::string& text) {
  if (text == "loss-min") return Objective::LossMin;
  if (text == "der-max") return Objective::DerMax;
  if (text == "dv-min") return Objective::DeltaVMin;
  throw std::invalid_argument("unknown objective '" + text + "'");
}

DispatchMode dispatch_kind(Objective objective) {
  return objective == Objective::DerMax ? DispatchMode::Active : DispatchMode::Reactive;
}

int VariableLayout::local(BusId bus) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), bus,
                             [](const std::pair<BusId, int>& e, BusId b) { return e.first < b; });
  if (it == index_.end() || it->first != bus) return -1;
  return it->second;
}

OpfProblem OpfProblem::build(const RadialNetwork& net, std::span<const BusId> buses, Objective objective,
                             const OpfOptions& options) {
  OpfProblem p;
  p.objective_ = objective;
  p.options_ = options;
  p.v0_ = net.v0();
  p.limits_ = net.limits();
  const bool active = dispatch_kind(objective) == DispatchMode::Active;

  VariableLayout& lay = p.layout_;
  lay.buses_.assign(buses.begin(), buses.end());
  const std::size_t n = buses.size();
  lay.index_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) lay.index_.emplace_back(buses[i], static_cast<int>(i));
  std::sort(lay.index_.begin(), lay.index_.end());
  lay.P_.assign(n, -1);
  lay.Q_.assign(n, -1);
  lay.l_.assign(n, -1);
  lay.v_.assign(n, -1);
  lay.d_.assign(n, -1);

  p.nodes_.resize(n);
  int slot = 0;
  int row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Bus& bus = net.bus(buses[i]);
    Node& nd = p.nodes_[i];
    nd.bus = bus.id;
    nd.substation = bus.id == net.substation();
    nd.pL = bus.load.real();
    nd.qL = bus.load.imag();
    nd.row = row;
    if (auto k = net.parent_branch(bus.id)) {
      const Branch& br = net.branches()[*k];
      nd.r = br.r;
      nd.x = br.x;
      nd.i_rated_sq = br.i_rated_sq;
      nd.parent = lay.local(br.from);
      if (nd.parent < 0) {
        if (p.external_parent_) throw std::invalid_argument("area buses do not form a connected subtree");
        p.external_parent_ = br.from;
      }
      nd.sP = lay.P_[i] = slot++;
      nd.sQ = lay.Q_[i] = slot++;
      nd.sl = lay.l_[i] = slot++;
      row += 4;
    } else {
      row += 1;
    }
    nd.sv = lay.v_[i] = slot++;
    if (bus.der) {
      nd.sd = lay.d_[i] = slot++;
      if (active) {
        nd.d_lo = 0.0;
        nd.d_hi = bus.der->rating;
      } else {
        nd.p_fixed = bus.der->p_measured;
        const double lim = std::max(bus.der->reactive_limit(), kMinDispatchWidth);
        nd.d_lo = -lim;
        nd.d_hi = lim;
      }
      if (!(nd.d_hi > nd.d_lo)) nd.d_hi = nd.d_lo + kMinDispatchWidth;
    }
    for (BusId c : net.children(bus.id)) {
      const int lc = lay.local(c);
      if (lc >= 0)
        nd.kids.push_back(lc);
      else
        p.external_children_.emplace_back(c, static_cast<int>(i));
    }
  }
  std::sort(p.external_children_.begin(), p.external_children_.end());
  lay.size_ = slot;
  p.num_eq_ = row;
  return p;
}

void OpfProblem::set_boundary(const BoundaryValues& boundary) {
  if (external_parent_ && !boundary.v_parent)
    throw DanglingInterface("no voltage for the parent bus " + std::to_string(*external_parent_));
  auto flows = boundary.child_flows;
  std::sort(flows.begin(), flows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [bus, flow] : flows) {
    auto it = std::lower_bound(external_children_.begin(), external_children_.end(), bus,
                               [](const std::pair<BusId, int>& e, BusId b) { return e.first < b; });
    if (it == external_children_.end() || it->first != bus)
      throw std::invalid_argument("boundary flow for bus " + std::to_string(bus) + " which is not a child interface");
  }
  std::vector<Complex> fixed(nodes_.size());
  for (const auto& [bus, local] : external_children_) {
    auto it = std::lower_bound(flows.begin(), flows.end(), bus,
                               [](const std::pair<BusId, Complex>& e, BusId b) { return e.first < b; });
    if (it == flows.end() || it->first != bus)
      throw DanglingInterface("no boundary flow for child interface " + std::to_string(bus));
    fixed[static_cast<std::size_t>(local)] += it->second;
  }
  // Nothing is modified until every value has been checked.
  if (external_parent_) v_parent_ = *boundary.v_parent;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    nodes_[i].Pc = fixed[i].real();
    nodes_[i].Qc = fixed[i].imag();
  }
  child_flows_ = std::move(flows);
}

BoundaryValues OpfProblem::boundary() const {
  BoundaryValues b;
  if (external_parent_) b.v_parent = v_parent_;
  b.child_flows = child_flows_;
  return b;
}

std::vector<double> OpfProblem::flat_start(std::span<const Complex> downstream) const {
  std::vector<double> x(static_cast<std::size_t>(layout_.size()), 0.0);
  const double v = external_parent_ ? v_parent_ : v0_;
  for (const Node& nd : nodes_) {
    x[nd.sv] = v;
    if (nd.sP >= 0) {
      const Complex s = downstream[static_cast<std::size_t>(nd.bus)];
      x[nd.sP] = s.real();
      x[nd.sQ] = s.imag();
      x[nd.sl] = std::norm(s) / v;
    }
  }
  return x;
}

void OpfProblem::bounds(std::span<double> lower, std::span<double> upper) const {
  for (const Node& nd : nodes_) {
    if (nd.sP >= 0) {
      lower[nd.sP] = lower[nd.sQ] = -kInf;
      upper[nd.sP] = upper[nd.sQ] = kInf;
      lower[nd.sl] = -kInf;  // l >= 0 follows from v_parent * l = P^2 + Q^2
      upper[nd.sl] = nd.i_rated_sq;
    }
    if (nd.substation) {
      lower[nd.sv] = -kInf;
      upper[nd.sv] = kInf;
    } else {
      lower[nd.sv] = limits_.v_min_sq;
      upper[nd.sv] = limits_.v_max_sq;
    }
    if (nd.sd >= 0) {
      lower[nd.sd] = nd.d_lo;
      upper[nd.sd] = nd.d_hi;
    }
  }
}

double OpfProblem::objective(std::span<const double> x) const {
  double f = 0.0;
  switch (objective_) {
    case Objective::LossMin:
      for (const Node& nd : nodes_)
        if (nd.sl >= 0) f += nd.r * x[nd.sl];
      return f;
    case Objective::DerMax:
      for (const Node& nd : nodes_)
        if (nd.sd >= 0) f += x[nd.sd];
      return f;
    case Objective::DeltaVMin:
      for (const Node& nd : nodes_) {
        const double d = x[nd.sv] - limits_.v_ref_sq;
        f += d * d;
      }
      return options_.sqrt_delta_v ? std::sqrt(f + kRootSmoothing) : f;
  }
  return f;
}

void OpfProblem::objective_gradient(std::span<const double> x, std::span<double> grad) const {
  std::fill(grad.begin(), grad.end(), 0.0);
  switch (objective_) {
    case Objective::LossMin:
      for (const Node& nd : nodes_)
        if (nd.sl >= 0) grad[nd.sl] = nd.r;
      break;
    case Objective::DerMax:
      for (const Node& nd : nodes_)
        if (nd.sd >= 0) grad[nd.sd] = 1.0;
      break;
    case Objective::DeltaVMin: {
      const double scale = options_.sqrt_delta_v ? 1.0 / objective(x) : 2.0;
      for (const Node& nd : nodes_) grad[nd.sv] = scale * (x[nd.sv] - limits_.v_ref_sq);
      break;
    }
  }
}

void OpfProblem::eq_values(std::span<const double> x, std::span<double> c) const {
  const bool active = dispatch_kind(objective_) == DispatchMode::Active;
  for (const Node& nd : nodes_) {
    if (nd.sP < 0) {
      c[nd.row] = x[nd.sv] - v0_;
      continue;
    }
    const double P = x[nd.sP], Q = x[nd.sQ], l = x[nd.sl];
    const double vp = nd.parent >= 0 ? x[nodes_[nd.parent].sv] : v_parent_;
    double rp = P - nd.r * l - nd.pL - nd.Pc + nd.p_fixed;
    double rq = Q - nd.x * l - nd.qL - nd.Qc;
    if (nd.sd >= 0) (active ? rp : rq) += x[nd.sd];
    for (int k : nd.kids) {
      rp -= x[nodes_[k].sP];
      rq -= x[nodes_[k].sQ];
    }
    c[nd.row] = rp;
    c[nd.row + 1] = rq;
    c[nd.row + 2] = x[nd.sv] - vp + 2.0 * (nd.r * P + nd.x * Q) - (nd.r * nd.r + nd.x * nd.x) * l;
    c[nd.row + 3] = vp * l - P * P - Q * Q;
  }
}

void OpfProblem::eq_jacobian(std::span<const double> x, std::vector<Triplet>& out) const {
  const bool active = dispatch_kind(objective_) == DispatchMode::Active;
  for (const Node& nd : nodes_) {
    const int r0 = nd.row;
    if (nd.sP < 0) {
      out.emplace_back(r0, nd.sv, 1.0);
      continue;
    }
    const double P = x[nd.sP], Q = x[nd.sQ], l = x[nd.sl];
    const int pv = nd.parent >= 0 ? nodes_[nd.parent].sv : -1;
    const double vp = pv >= 0 ? x[pv] : v_parent_;
    out.emplace_back(r0, nd.sP, 1.0);
    out.emplace_back(r0, nd.sl, -nd.r);
    out.emplace_back(r0 + 1, nd.sQ, 1.0);
    out.emplace_back(r0 + 1, nd.sl, -nd.x);
    if (nd.sd >= 0) out.emplace_back(active ? r0 : r0 + 1, nd.sd, 1.0);
    for (int k : nd.kids) {
      out.emplace_back(r0, nodes_[k].sP, -1.0);
      out.emplace_back(r0 + 1, nodes_[k].sQ, -1.0);
    }
    out.emplace_back(r0 + 2, nd.sv, 1.0);
    if (pv >= 0) out.emplace_back(r0 + 2, pv, -1.0);
    out.emplace_back(r0 + 2, nd.sP, 2.0 * nd.r);
    out.emplace_back(r0 + 2, nd.sQ, 2.0 * nd.x);
    out.emplace_back(r0 + 2, nd.sl, -(nd.r * nd.r + nd.x * nd.x));
    if (pv >= 0) out.emplace_back(r0 + 3, pv, l);
    out.emplace_back(r0 + 3, nd.sl, vp);
    out.emplace_back(r0 + 3, nd.sP, -2.0 * P);
    out.emplace_back(r0 + 3, nd.sQ, -2.0 * Q);
  }
}

void OpfProblem::lagrangian_hessian(std::span<const double> x, double obj_factor, std::span<const double> eq_mult,
                                    std::span<const double> /*ineq_mult*/, std::vector<Triplet>& out) const {
  for (const Node& nd : nodes_) {
    if (nd.sP < 0) continue;
    const double y = eq_mult[nd.row + 3];
    out.emplace_back(nd.sP, nd.sP, -2.0 * y);
    out.emplace_back(nd.sQ, nd.sQ, -2.0 * y);
    if (nd.parent >= 0) {
      const int pv = nodes_[nd.parent].sv;
      out.emplace_back(std::max(pv, nd.sl), std::min(pv, nd.sl), y);
    }
  }
  if (objective_ != Objective::DeltaVMin) return;
  if (!options_.sqrt_delta_v) {
    for (const Node& nd : nodes_) out.emplace_back(nd.sv, nd.sv, 2.0 * obj_factor);
    return;
  }
  const double f = objective(x);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const int si = nodes_[i].sv;
    const double di = x[si] - limits_.v_ref_sq;
    for (std::size_t j = 0; j <= i; ++j) {
      const int sj = nodes_[j].sv;
      const double dj = x[sj] - limits_.v_ref_sq;
      double h = -di * dj / (f * f * f);
      if (i == j) h += 1.0 / f;
      out.emplace_back(std::max(si, sj), std::min(si, sj), obj_factor * h);
    }
  }
}

OpfProblem build_central(const RadialNetwork& network, Objective objective, const OpfOptions& options) {
  return OpfProblem::build(network, network.preorder(), objective, options);
}

OpfProblem build_subproblem(const Area& area, const RadialNetwork& network, Objective objective,
                            const BoundaryValues& boundary, const OpfOptions& options) {
  OpfProblem p = OpfProblem::build(network, area.buses, objective, options);
  if (p.external_parent_ != area.root_interface)
    throw std::invalid_argument("area root interface does not match its bus set");
  p.set_boundary(boundary);
  return p;
}

AreaExport extract_boundary(std::span<const double> x, const OpfProblem& problem, const Area& area) {
  const VariableLayout& lay = problem.layout();
  AreaExport out;
  if (area.root_interface) out.flow_up = Complex(x[lay.P(area.top)], x[lay.Q(area.top)]);
  out.voltage_down.reserve(problem.external_children().size());
  for (const auto& [child, local] : problem.external_children())
    out.voltage_down.emplace_back(child, x[lay.v(lay.buses()[local])]);
  return out;
}

void scatter_solution(std::span<const double> x, const OpfProblem& problem, const RadialNetwork& network,
                      NetworkState& state, Dispatch& dispatch) {
  const VariableLayout& lay = problem.layout();
  const bool active = dispatch_kind(problem.objective_kind()) == DispatchMode::Active;
  for (BusId b : lay.buses()) {
    state.v[b] = x[lay.v(b)];
    if (auto k = network.parent_branch(b)) {
      state.P[*k] = x[lay.P(b)];
      state.Q[*k] = x[lay.Q(b)];
      state.l[*k] = x[lay.l(b)];
    }
    const int d = lay.dispatch(b);
    if (d < 0) {
      dispatch[b] = {};
    } else if (active) {
      dispatch[b] = {x[d], 0.0};
    } else {
      dispatch[b] = {network.bus(b).der->p_measured, x[d]};
    }
  }
}

double reported_objective(Objective objective, double raw, const OpfOptions& options) {
  if (objective != Objective::DeltaVMin) return raw;
  if (options.sqrt_delta_v) return std::sqrt(std::max(raw * raw - kRootSmoothing, 0.0));
  return std::sqrt(std::max(raw, 0.0));
  return raw;
}

double evaluate_objective(Objective objective, const NetworkState& state, const Dispatch& dispatch,
                          const RadialNetwork& network) {
  switch (objective) {
    case Objective::LossMin: return total_loss(state, network);
    case Objective::DerMax: {
      double s = 0.0;
      for (const Complex& d : dispatch) s += d.real();
      return s;
    }
    case Objective::DeltaVMin: {
      double s = 0.0;
      for (double v : state.v) s += (v - network.limits().v_ref_sq) * (v - network.limits().v_ref_sq);
      return std::sqrt(s);
    }
  }
  return 0.0;
}

}  // namespace dopf
