#include "dopf/network_io.hpp"

#include <fstream>

namespace dopf {

using nlohmann::json;

const char* to_string(DispatchMode mode) { return mode == DispatchMode::Reactive ? "reactive" : "active"; }

DispatchMode dispatch_mode_from_string(const std::string& text) {
  if (text == "reactive") return DispatchMode::Reactive;
  if (text == "active") return DispatchMode::Active;
  throw NetworkError(NetworkErrc::InvalidData, "unknown DER mode '" + text + "'");
}

json network_to_json(const NetworkData& data) {
  json buses = json::array();
  for (const Bus& b : data.buses) {
    json jb = {{"id", b.id}, {"p_L", b.load.real()}, {"q_L", b.load.imag()}};
    if (b.der) {
      jb["der"] = {{"rating", b.der->rating}, {"p_measured", b.der->p_measured}, {"mode", to_string(b.der->mode)}};
    }
    buses.push_back(std::move(jb));
  }
  json branches = json::array();
  for (const Branch& br : data.branches) {
    branches.push_back({{"from", br.from}, {"to", br.to}, {"r", br.r}, {"x", br.x}, {"i_rated_sq", br.i_rated_sq}});
  }
  return json{{"base_kv", data.base_kv},
              {"base_kva", data.base_kva},
              {"v0", data.v0},
              {"limits",
               {{"v_min_sq", data.limits.v_min_sq},
                {"v_max_sq", data.limits.v_max_sq},
                {"v_ref_sq", data.limits.v_ref_sq}}},
              {"buses", std::move(buses)},
              {"branches", std::move(branches)}};
}

NetworkData network_from_json(const json& doc) {
  try {
    NetworkData data;
    data.base_kv = doc.at("base_kv").get<double>();
    data.base_kva = doc.at("base_kva").get<double>();
    data.v0 = doc.at("v0").get<double>();
    if (auto it = doc.find("limits"); it != doc.end()) {
      data.limits.v_min_sq = it->at("v_min_sq").get<double>();
      data.limits.v_max_sq = it->at("v_max_sq").get<double>();
      data.limits.v_ref_sq = it->at("v_ref_sq").get<double>();
    }
    for (const json& jb : doc.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<BusId>();
      b.load = Complex(jb.at("p_L").get<double>(), jb.at("q_L").get<double>());
      if (auto d = jb.find("der"); d != jb.end() && !d->is_null()) {
        b.der = DerDevice{d->at("rating").get<double>(), d->at("p_measured").get<double>(),
                          dispatch_mode_from_string(d->at("mode").get<std::string>())};
      }
      data.buses.push_back(std::move(b));
    }
    for (const json& jb : doc.at("branches")) {
      data.branches.push_back(Branch{jb.at("from").get<BusId>(), jb.at("to").get<BusId>(), jb.at("r").get<double>(),
                                     jb.at("x").get<double>(), jb.at("i_rated_sq").get<double>()});
    }
    return data;
  } catch (const json::exception& e) {
    throw NetworkError(NetworkErrc::InvalidData, std::string("malformed network document: ") + e.what());
  }
}

void write_network(const std::filesystem::path& path, const NetworkData& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << network_to_json(data).dump(1) << '\n';
}

RadialNetwork read_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw NetworkError(NetworkErrc::InvalidData, path.string() + ": " + e.what());
  }
  return RadialNetwork(network_from_json(doc));
}

}  // namespace dopf
