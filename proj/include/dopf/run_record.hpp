#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include <json.hpp>

#include "dopf/coordinator.hpp"

namespace dopf {

inline constexpr int kRecordSchemaVersion = 1;

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json record_to_json(const RunRecord& record);
/// Throws SchemaError for documents that are not run records of this schema.
RunRecord record_from_json(const nlohmann::json& doc);

void write_record(const std::filesystem::path& path, const RunRecord& record);
RunRecord read_record(const std::filesystem::path& path);

/// n,residual,objective_kw,max_area_time_s
void write_convergence_csv(std::ostream& out, const RunRecord& record);
/// bus_id,v_pu_magnitude
void write_voltage_csv(std::ostream& out, const RunRecord& record);

struct RecordComparison {
  double gap_percent = 0.0;  ///< 100 * |b - a| / max(|a|, tiny)
  double objective_a = 0.0;
  double objective_b = 0.0;
};

/// Throws SchemaError when the records solve different objectives.
RecordComparison compare_records(const RunRecord& a, const RunRecord& b);

}  // namespace dopf
