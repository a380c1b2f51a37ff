#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ecgf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDiverged = 3;

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Machine-readable output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies "a.b.c=value" to `config`. The value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

}  // namespace ecgf::cli
