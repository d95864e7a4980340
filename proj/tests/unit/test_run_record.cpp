#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dopf/run_record.hpp"

using namespace dopf;

namespace {

RunRecord sample() {
  RunRecord r;
  r.mode = "distributed";
  r.objective = Objective::LossMin;
  r.status = RunStatus::Converged;
  r.converged = true;
  r.macro_iterations = 2;
  r.objective_value = 0.0045123456789012345;
  r.objective_physical = 4.5123456789012345;
  r.objective_unit = "kW";
  r.bus_count = 3;
  r.area_count = 2;
  r.wall_time_s = 0.25;
  r.history.push_back({1, 0.5, 0.0046, 0.01, 0.001, {{NlpStatus::Optimal, 12, 0.01}, {NlpStatus::Optimal, 9, 0.008}}});
  r.history.push_back({2, 1e-4, 0.0045123456789012345, 0.02, 0.001, {{NlpStatus::Optimal, 4, 0.002}}});
  r.y_trajectory = {{1.0, 0.3, 0.03}, {0.99, 0.2999999999999999, 0.0300000001}};
  r.state = {{1.0, 0.98, 0.97}, {0.2, 0.1}, {0.02, 0.01}, {0.041, 0.0101}};
  r.dispatch = {{0, 0}, {0.007, -0.0031}, {0, 0}};
  r.verified = true;
  r.verify_voltage_mismatch = 3e-9;
  r.config = {{"alpha", 0.0}};
  return r;
}

}  // namespace

TEST_CASE("record round trip is exact") {
  RunRecord r = sample();
  RunRecord back = record_from_json(nlohmann::json::parse(record_to_json(r).dump()));
  CHECK(back.objective_value == r.objective_value);
  CHECK(back.y_trajectory == r.y_trajectory);
  CHECK(back.state.v == r.state.v);
  CHECK(back.dispatch == r.dispatch);
  CHECK(back.history.size() == 2);
  CHECK(back.history[0].areas[1].iterations == 9);
  CHECK(back.status == RunStatus::Converged);
  CHECK(back.config == r.config);

  auto path = std::filesystem::temp_directory_path() / "dopf_record_roundtrip.json";
  write_record(path, r);
  RunRecord file = read_record(path);
  std::filesystem::remove(path);
  CHECK(file.y_trajectory == r.y_trajectory);
}

TEST_CASE("schema violations") {
  nlohmann::json j = record_to_json(sample());
  nlohmann::json wrong = j;
  wrong["schema"] = "something-else";
  CHECK_THROWS_AS(record_from_json(wrong), SchemaError);
  nlohmann::json old = j;
  old["version"] = 99;
  CHECK_THROWS_AS(record_from_json(old), SchemaError);
  nlohmann::json missing = j;
  missing.erase("history");
  CHECK_THROWS_AS(record_from_json(missing), SchemaError);
  nlohmann::json typed = j;
  typed["macro_iterations"] = "two";
  CHECK_THROWS_AS(record_from_json(typed), SchemaError);
}

TEST_CASE("CSV exports") {
  RunRecord r = sample();
  std::ostringstream conv, volt;
  write_convergence_csv(conv, r);
  write_voltage_csv(volt, r);
  CHECK(conv.str().rfind("n,residual,objective_kw,max_area_time_s\n1,0.5,", 0) == 0);
  std::istringstream lines(volt.str());
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  CHECK(header == "bus_id,v_pu_magnitude");
  CHECK(first == "0,1.0");
  CHECK(second.rfind("1,0.98994949", 0) == 0);
}

TEST_CASE("compare_records") {
  RunRecord a = sample();
  CHECK(compare_records(a, a).gap_percent == 0.0);
  RunRecord b = a;
  b.objective_value *= 1.004;
  CHECK(compare_records(a, b).gap_percent == doctest::Approx(0.4));
  b.objective = Objective::DerMax;
  CHECK_THROWS_AS(compare_records(a, b), SchemaError);
}
