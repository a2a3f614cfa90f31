#pragma once
#include <string>
#include <vector>

#include <json.hpp>

#include <digeo/synth_bench.hpp>

namespace digeo {

/// Config parse or validation failure; `what()` carries line:column when known.
class config_error : public format_error
{
public:
    using format_error::format_error;
};

nlohmann::json to_json(const BenchConfig& config);

/// Merges `doc` over the defaults. Unknown keys and type mismatches throw.
BenchConfig bench_config_from_json(const nlohmann::json& doc);

/// Parses JSON text; `source` names the input in error messages.
BenchConfig parse_bench_config(const std::string& text, const std::string& source = "<config>");
BenchConfig load_bench_config(const std::string& path);

/// Applies `dotted.key=value` overrides. The value is read as a JSON literal.
BenchConfig apply_overrides(const BenchConfig& config, const std::vector<std::string>& overrides);

} // namespace digeo
