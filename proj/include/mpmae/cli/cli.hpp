#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace mpmae::cli {

// stable exit-code contract for scripting
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

nlohmann::json load_config_file(const std::string& path);

// Resolved-config + version provenance written into every output directory.
void write_provenance(const std::string& out_dir, const nlohmann::json& resolved);

int cmd_gen(nlohmann::json cfg);
int cmd_pretrain(nlohmann::json cfg);
int cmd_eval(nlohmann::json cfg);
int cmd_report(nlohmann::json cfg);

// Full argv dispatch with exception -> exit-code mapping.
int dispatch(int argc, char** argv);

}  // namespace mpmae::cli
