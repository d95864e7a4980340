#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "dopf/network.hpp"

namespace dopf {

/// Interchange document:
/// {base_kv, base_kva, v0, limits?, buses:[{id, p_L, q_L, der?}], branches:[{from, to, r, x, i_rated_sq}]}
nlohmann::json network_to_json(const NetworkData& data);
/// Parses the interchange document. Throws NetworkError(InvalidData) on schema errors;
/// topology is not validated here.
NetworkData network_from_json(const nlohmann::json& doc);

void write_network(const std::filesystem::path& path, const NetworkData& data);
/// Reads and validates a network file.
RadialNetwork read_network(const std::filesystem::path& path);

const char* to_string(DispatchMode mode);
DispatchMode dispatch_mode_from_string(const std::string& text);

}  // namespace dopf
