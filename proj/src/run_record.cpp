#include "dopf/run_record.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

namespace dopf {

namespace {

using nlohmann::json;

// Locale-independent shortest round-trip formatting.
std::string num(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  return json(v).dump();
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw SchemaError(std::string("run record lacks field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("run record field '") + key + "': " + e.what());
  }
}

NlpStatus nlp_status_from_string(const std::string& s) {
  for (NlpStatus st : {NlpStatus::Optimal, NlpStatus::MaxIterations, NlpStatus::Infeasible, NlpStatus::TimeLimit})
    if (s == to_string(st)) return st;
  throw SchemaError("unknown solver status '" + s + "'");
}

}  // namespace

json record_to_json(const RunRecord& r) {
  json history = json::array();
  for (const MacroIteration& it : r.history) {
    json areas = json::array();
    for (const AreaSolveStats& a : it.areas)
      areas.push_back({{"status", to_string(a.status)}, {"iterations", a.iterations}, {"seconds", a.seconds}});
    history.push_back({{"n", it.n},
                       {"residual", it.residual},
                       {"objective", it.objective},
                       {"max_area_time_s", it.max_area_time_s},
                       {"coordinator_time_s", it.coordinator_time_s},
                       {"areas", std::move(areas)}});
  }
  json dispatch = json::array();
  for (const Complex& d : r.dispatch) dispatch.push_back({d.real(), d.imag()});
  return {{"schema", "dopf-run-record"},
          {"version", kRecordSchemaVersion},
          {"mode", r.mode},
          {"objective", to_string(r.objective)},
          {"status", to_string(r.status)},
          {"converged", r.converged},
          {"macro_iterations", r.macro_iterations},
          {"objective_value_pu", r.objective_value},
          {"objective_physical", r.objective_physical},
          {"objective_unit", r.objective_unit},
          {"base_kva", r.base_kva},
          {"bus_count", r.bus_count},
          {"area_count", r.area_count},
          {"wall_time_s", r.wall_time_s},
          {"detail", r.detail},
          {"verified", r.verified},
          {"verify_voltage_mismatch", r.verify_voltage_mismatch},
          {"verify_flow_mismatch", r.verify_flow_mismatch},
          {"config", r.config},
          {"history", std::move(history)},
          {"y_trajectory", r.y_trajectory},
          {"state", {{"v", r.state.v}, {"P", r.state.P}, {"Q", r.state.Q}, {"l", r.state.l}}},
          {"dispatch", std::move(dispatch)}};
}

RunRecord record_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("schema", "") != "dopf-run-record")
    throw SchemaError("document is not a run record");
  if (field<int>(doc, "version") != kRecordSchemaVersion) throw SchemaError("unsupported run record version");
  RunRecord r;
  r.mode = field<std::string>(doc, "mode");
  try {
    r.objective = objective_from_string(field<std::string>(doc, "objective"));
    r.status = run_status_from_string(field<std::string>(doc, "status"));
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  r.converged = field<bool>(doc, "converged");
  r.macro_iterations = field<int>(doc, "macro_iterations");
  r.objective_value = field<double>(doc, "objective_value_pu");
  r.objective_physical = field<double>(doc, "objective_physical");
  r.objective_unit = field<std::string>(doc, "objective_unit");
  r.base_kva = field<double>(doc, "base_kva");
  r.bus_count = field<std::size_t>(doc, "bus_count");
  r.area_count = field<std::size_t>(doc, "area_count");
  r.wall_time_s = field<double>(doc, "wall_time_s");
  r.detail = field<std::string>(doc, "detail");
  r.verified = field<bool>(doc, "verified");
  r.verify_voltage_mismatch = field<double>(doc, "verify_voltage_mismatch");
  r.verify_flow_mismatch = field<double>(doc, "verify_flow_mismatch");
  r.config = doc.value("config", json::object());
  for (const json& h : field<json>(doc, "history")) {
    MacroIteration it;
    it.n = field<int>(h, "n");
    it.residual = field<double>(h, "residual");
    it.objective = field<double>(h, "objective");
    it.max_area_time_s = field<double>(h, "max_area_time_s");
    it.coordinator_time_s = field<double>(h, "coordinator_time_s");
    for (const json& a : field<json>(h, "areas"))
      it.areas.push_back({nlp_status_from_string(field<std::string>(a, "status")), field<int>(a, "iterations"),
                          field<double>(a, "seconds")});
    r.history.push_back(std::move(it));
  }
  r.y_trajectory = field<std::vector<std::vector<double>>>(doc, "y_trajectory");
  const json st = field<json>(doc, "state");
  r.state.v = field<std::vector<double>>(st, "v");
  r.state.P = field<std::vector<double>>(st, "P");
  r.state.Q = field<std::vector<double>>(st, "Q");
  r.state.l = field<std::vector<double>>(st, "l");
  for (const auto& d : field<std::vector<std::array<double, 2>>>(doc, "dispatch")) r.dispatch.emplace_back(d[0], d[1]);
  return r;
}

void write_record(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << record_to_json(record).dump(1) << '\n';
}

RunRecord read_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return record_from_json(doc);
}

void write_convergence_csv(std::ostream& out, const RunRecord& record) {
  out << "n,residual,objective_kw,max_area_time_s\n";
  for (const MacroIteration& it : record.history)
    out << it.n << ',' << num(it.residual) << ',' << num(physical_objective(record.objective, it.objective, record.base_kva))
        << ',' << num(it.max_area_time_s) << '\n';
}

void write_voltage_csv(std::ostream& out, const RunRecord& record) {
  out << "bus_id,v_pu_magnitude\n";
  for (std::size_t b = 0; b < record.state.v.size(); ++b)
    out << b << ',' << num(std::sqrt(std::max(record.state.v[b], 0.0))) << '\n';
}

RecordComparison compare_records(const RunRecord& a, const RunRecord& b) {
  if (a.objective != b.objective) throw SchemaError("records solve different objectives");
  RecordComparison c;
  c.objective_a = a.objective_value;
  c.objective_b = b.objective_value;
  const double denom = std::max(std::abs(a.objective_value), std::numeric_limits<double>::min());
  c.gap_percent = a.objective_value == b.objective_value ? 0.0 : 100.0 * std::abs(b.objective_value - a.objective_value) / denom;
  return c;
}

}  // namespace dopf
