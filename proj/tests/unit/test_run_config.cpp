#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "run_config.hpp"

using namespace ndm::cli;
namespace fs = std::filesystem;

namespace {

json defaults() {
  return json{{"steps", 100}, {"lr", 0.001}, {"name", ""}, {"groups", json::array()}, {"flag", false},
              {"query", nullptr}, {"shift", -1}};
}

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << content;
  return p;
}

}  // namespace

TEST(RunConfig, LayersOverrideInOrder) {
  const auto file = temp_file("ndm_rc_layers.json", R"({"steps": 7, "lr": 0.5})");
  const json cfg = resolve_config(defaults(), json{{"steps", 3}, {"name", "preset"}}, file, {"lr=0.25"});
  EXPECT_EQ(cfg["steps"], 7);
  EXPECT_EQ(cfg["lr"], 0.25);
  EXPECT_EQ(cfg["name"], "preset");
  fs::remove(file);
}

TEST(RunConfig, UnknownKeysRejected) {
  EXPECT_THROW(resolve_config(defaults(), nullptr, {}, {"bogus=1"}), UsageError);
  const auto file = temp_file("ndm_rc_unknown.json", R"({"stpes": 7})");
  EXPECT_THROW(resolve_config(defaults(), nullptr, file, {}), UsageError);
  fs::remove(file);
}

TEST(RunConfig, TypeChecks) {
  EXPECT_THROW(resolve_config(defaults(), nullptr, {}, {"steps=1.5"}), UsageError);
  EXPECT_THROW(resolve_config(defaults(), nullptr, {}, {"steps=-3"}), UsageError);
  EXPECT_THROW(resolve_config(defaults(), nullptr, {}, {"flag=yes"}), UsageError);
  EXPECT_THROW(resolve_config(defaults(), nullptr, {}, {"groups=4"}), UsageError);
  // Integers are accepted where floats are expected; negative ints where the default is negative.
  EXPECT_EQ(resolve_config(defaults(), nullptr, {}, {"lr=1"})["lr"], 1);
  EXPECT_EQ(resolve_config(defaults(), nullptr, {}, {"shift=-5"})["shift"], -5);
  EXPECT_EQ(resolve_config(defaults(), nullptr, {}, {"query=[1,2]"})["query"], json::array({1, 2}));
  EXPECT_EQ(resolve_config(defaults(), nullptr, {}, {"groups=[20,20]"})["groups"], json::array({20, 20}));
}

TEST(RunConfig, SetParsing) {
  EXPECT_EQ(parse_set("name=toy-2x20").second, "toy-2x20");
  EXPECT_EQ(parse_set("flag=true").second, true);
  EXPECT_EQ(parse_set("expr=a=b").second, "a=b");
  EXPECT_THROW(parse_set("novalue"), UsageError);
  EXPECT_THROW(parse_set("=3"), UsageError);
}

TEST(RunConfig, BadFiles) {
  EXPECT_THROW(resolve_config(defaults(), nullptr, "/nonexistent/ndm.json", {}), UsageError);
  const auto file = temp_file("ndm_rc_bad.json", "{not json");
  EXPECT_THROW(resolve_config(defaults(), nullptr, file, {}), UsageError);
  const auto arr = temp_file("ndm_rc_arr.json", "[1, 2]");
  EXPECT_THROW(resolve_config(defaults(), nullptr, arr, {}), UsageError);
  fs::remove(file);
  fs::remove(arr);
}

TEST(RunConfig, RunDirectoryRefusesOverwriteWithoutForce) {
  const fs::path dir = fs::temp_directory_path() / "ndm_rc_run";
  fs::remove_all(dir);
  EXPECT_THROW(prepare_run_dir("", false), UsageError);
  prepare_run_dir(dir, false);
  write_json(dir / "config.json", json{{"a", 1}});
  EXPECT_THROW(prepare_run_dir(dir, false), UsageError);
  EXPECT_NO_THROW(prepare_run_dir(dir, true));
  fs::remove_all(dir);
}
