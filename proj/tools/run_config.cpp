#include "run_config.hpp"

#include <fstream>

namespace ndm::cli {
namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_null()) return true;
  if (a.is_number_integer() && b.is_number_integer()) return a.get<long long>() < 0 || b.get<long long>() >= 0;
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

}  // namespace

void apply_layer(json& config, const json& layer, const std::string& origin) {
  if (layer.is_null()) return;
  if (!layer.is_object()) throw UsageError(origin + ": configuration must be a JSON object");
  for (const auto& [key, value] : layer.items()) {
    if (!config.contains(key)) throw UsageError(origin + ": unknown key '" + key + "'");
    if (!same_kind(config[key], value) && !value.is_null())
      throw UsageError(origin + ": key '" + key + "' expects " + std::string(config[key].type_name()) + ", got " +
                       value.type_name());
    config[key] = value;
  }
}

std::pair<std::string, json> parse_set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return {key, value};
}

json resolve_config(const json& defaults, const json& preset, const std::filesystem::path& file,
                    const std::vector<std::string>& sets) {
  json config = defaults;
  apply_layer(config, preset, "preset");
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw UsageError("cannot read config file " + file.string());
    json from_file = json::parse(is, nullptr, false);
    if (from_file.is_discarded()) throw UsageError("config file " + file.string() + " is not valid JSON");
    apply_layer(config, from_file, file.string());
  }
  for (const auto& s : sets) {
    auto [key, value] = parse_set(s);
    apply_layer(config, json{{key, value}}, "--set");
  }
  return config;
}

void prepare_run_dir(const std::filesystem::path& dir, bool force) {
  if (dir.empty()) throw UsageError("an output directory (--out) is required");
  if (std::filesystem::exists(dir / "config.json") && !force)
    throw UsageError("run directory " + dir.string() + " already holds results; pass --force to overwrite");
  std::filesystem::create_directories(dir);
}

void write_json(const std::filesystem::path& path, const json& value) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << value.dump(2) << '\n';
}

}  // namespace ndm::cli
