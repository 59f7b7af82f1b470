#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ndm::cli {

using nlohmann::json;

// Bad invocation: unknown key, wrong type, refused overwrite. Exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layers, each overriding the previous: defaults, preset, config file, --set.
// Keys absent from the defaults are rejected, as are values whose JSON type
// differs from the default (a null default accepts anything).
json resolve_config(const json& defaults, const json& preset, const std::filesystem::path& file,
                    const std::vector<std::string>& sets);

void apply_layer(json& config, const json& layer, const std::string& origin);

// "key=value", value parsed as JSON when possible, else taken as a string.
std::pair<std::string, json> parse_set(const std::string& assignment);

// Creates dir; refuses if it already holds a resolved config unless force.
void prepare_run_dir(const std::filesystem::path& dir, bool force);

void write_json(const std::filesystem::path& path, const json& value);

}  // namespace ndm::cli
