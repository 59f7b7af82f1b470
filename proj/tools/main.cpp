#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ndm/activation_io.hpp"
#include "ndm/error.hpp"
#include "ndm/eval.hpp"
#include "ndm/mi.hpp"
#include "ndm/ndm.hpp"
#include "ndm/preimage.hpp"
#include "ndm/toy_model.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ndm;
using cli::UsageError;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Invocation {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  std::string out;
  bool force = false;
  std::map<std::string, std::string> paths;  // shortcut flags for path keys
  std::optional<long long> seed;
};

void add_common(CLI::App* sub, Invocation& inv, bool with_preset) {
  sub->add_option("-c,--config", inv.config_file, "JSON configuration file");
  if (with_preset) sub->add_option("-p,--preset", inv.preset, "Named preset applied before the config file");
  sub->add_option("-s,--set", inv.sets, "Override one key: key=value (repeatable)");
  sub->add_option("-o,--out", inv.out, "Run directory");
  sub->add_flag("-f,--force", inv.force, "Overwrite an existing run directory");
}

void add_path(CLI::App* sub, Invocation& inv, const std::string& key, const std::string& help) {
  sub->add_option("--" + key, inv.paths[key], help);
}

json resolve(const Invocation& inv, const json& defaults, const json& preset) {
  json cfg = cli::resolve_config(defaults, preset, inv.config_file, inv.sets);
  json shortcuts = json::object();
  for (const auto& [key, value] : inv.paths)
    if (!value.empty()) shortcuts[key] = value;
  if (inv.seed) shortcuts["seed"] = *inv.seed;
  cli::apply_layer(cfg, shortcuts, "command line");
  return cfg;
}

std::string require_path(const json& cfg, const std::string& key) {
  if (!cfg.contains(key) || !cfg[key].is_string() || cfg[key].get<std::string>().empty())
    throw UsageError("missing required input '" + key + "'");
  return cfg[key].get<std::string>();
}

void begin_run(const Invocation& inv, const std::string& command, const json& cfg) {
  cli::prepare_run_dir(inv.out, inv.force);
  cli::write_json(fs::path(inv.out) / "config.json",
                  json{{"command", command}, {"ndm_version", kVersion}, {"config", cfg}});
}

std::vector<std::size_t> to_sizes(const json& j) {
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<long long>() < 1) throw UsageError("expected a list of positive integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

Partition load_partition(const std::string& path) {
  PartitionFile pf = read_partition(path);
  return Partition(std::move(pf.r), std::move(pf.c));
}

// ---- toy-train ----

json toy_defaults() {
  return {{"preset", ""},      {"groups", json::array()}, {"sparsity", 0.25}, {"d", 0},
          {"batch", 128},      {"steps", 10000},          {"lr_start", 3e-3}, {"lr_end", 3e-4},
          {"eval_samples", 12800}, {"seed", 0}};
}

json toy_preset_layer(const std::string& name) {
  if (name.empty()) return nullptr;
  const auto p = toy_preset(name);
  if (!p) {
    std::string known;
    for (const auto& n : toy_preset_names()) known += " " + n;
    throw UsageError("unknown toy preset '" + name + "'; known:" + known);
  }
  return {{"preset", p->name}, {"groups", p->spec.group_sizes}, {"sparsity", p->spec.group_sparsity},
          {"d", p->hidden_dim}};
}

int run_toy_train(const Invocation& inv) {
  const json cfg = resolve(inv, toy_defaults(), toy_preset_layer(inv.preset));
  FeatureGroupSpec spec{to_sizes(cfg["groups"]), cfg["sparsity"].get<double>()};
  if (spec.group_sizes.empty()) throw UsageError("no feature groups configured; use --preset or set 'groups'");
  ToyTrainConfig tc;
  tc.batch = cfg["batch"];
  tc.steps = cfg["steps"];
  tc.lr_start = cfg["lr_start"];
  tc.lr_end = cfg["lr_end"];
  tc.eval_samples = cfg["eval_samples"];
  tc.seed = cfg["seed"];
  begin_run(inv, "toy-train", cfg);

  const ToyTrainResult r = train_toy(spec, cfg["d"].get<std::size_t>(), tc);
  const fs::path out(inv.out);
  write_toy_model(r.model, out / "model.ndmm");
  const Matrix g = gram(r.model);
  write_grid_csv(g, out / "wtw.csv");
  const json summary{{"fvu", r.fvu}, {"cross_group_ratio", cross_group_ratio(g, spec)}};
  cli::write_json(out / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---- toy-dump ----

int run_toy_dump(const Invocation& inv) {
  const json cfg = resolve(
      inv, {{"model", nullptr}, {"n", 100000}, {"seed", 0}, {"dtype", "f32"}, {"meta", false}, {"doc_length", 64}},
      nullptr);
  const std::string model_path = require_path(cfg, "model");
  const std::string dtype = cfg["dtype"];
  if (dtype != "f32" && dtype != "f64") throw UsageError("dtype must be f32 or f64");
  const ToyModel m = read_toy_model(model_path);
  begin_run(inv, "toy-dump", cfg);

  Rng rng = make_stream(cfg["seed"].get<std::uint64_t>(), "toy.dump");
  ActivationSet set;
  const Matrix x = sample_features(m.spec, cfg["n"].get<std::size_t>(), rng);
  set.data = toy_forward(m, x).h;
  if (cfg["meta"].get<bool>()) {
    // Synthetic token records: fixed-length documents, token text naming the active features.
    const std::size_t doc_length = std::max<std::size_t>(1, cfg["doc_length"].get<std::size_t>());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::string text;
      for (Eigen::Index f = 0; f < x.cols(); ++f)
        if (x(i, f) > 0.0) text += (text.empty() ? "" : "+") + std::string("f") + std::to_string(f);
      const auto row = static_cast<std::size_t>(i);
      set.meta.push_back(TokenMeta{"doc" + std::to_string(row / doc_length),
                                   static_cast<std::int64_t>(row % doc_length), "[" + (text.empty() ? "-" : text) + "] "});
    }
  }
  write_activations(set, fs::path(inv.out) / "activations.ndma", dtype == "f64" ? Dtype::f64 : Dtype::f32);
  std::cout << json{{"rows", set.rows()}, {"dim", set.dim()}}.dump() << '\n';
  return 0;
}

// ---- ndm-train ----

json ndm_config_json(const NdmConfig& c) {
  return {{"unit_size", c.unit_size},
          {"search_number", c.search_number},
          {"block_size", c.block_size},
          {"in_batch_search", c.in_batch_search},
          {"batch", c.batch},
          {"lr", c.lr},
          {"lr_end", c.lr_end},
          {"merge_threshold", c.merge_threshold},
          {"merge_interval", c.merge_interval},
          {"merge_start_delay", c.merge_start_delay},
          {"max_steps", c.max_steps},
          {"distance", std::string(to_string(c.distance))},
          {"dim_weighting", c.dim_weighting},
          {"reinit_interval", c.reinit_interval},
          {"eval_search_number", c.eval_search_number},
          {"mi_samples", c.mi_samples},
          {"mi_k", c.mi_k},
          {"mi_jitter", c.mi_jitter},
          {"recycle_buffer", c.recycle_buffer},
          {"log_interval", c.log_interval},
          {"seed", c.seed}};
}

NdmConfig ndm_config_from(const json& j) {
  NdmConfig c;
  c.unit_size = j["unit_size"];
  c.search_number = j["search_number"];
  c.block_size = j["block_size"];
  c.in_batch_search = j["in_batch_search"];
  c.batch = j["batch"];
  c.lr = j["lr"];
  c.lr_end = j["lr_end"];
  c.merge_threshold = j["merge_threshold"];
  c.merge_interval = j["merge_interval"];
  c.merge_start_delay = j["merge_start_delay"];
  c.max_steps = j["max_steps"];
  c.distance = parse_distance(j["distance"].get<std::string>());
  c.dim_weighting = j["dim_weighting"];
  c.reinit_interval = j["reinit_interval"];
  c.eval_search_number = j["eval_search_number"];
  c.mi_samples = j["mi_samples"];
  c.mi_k = j["mi_k"];
  c.mi_jitter = j["mi_jitter"];
  c.recycle_buffer = j["recycle_buffer"];
  c.log_interval = j["log_interval"];
  c.seed = j["seed"];
  return c;
}

json ndm_defaults() {
  json j = ndm_config_json(NdmConfig{});
  j["preset"] = "";
  j["activations"] = nullptr;
  j["model"] = nullptr;
  j["init"] = "identity";
  return j;
}

json ndm_preset_layer(const std::string& name) {
  if (name.empty()) return nullptr;
  const auto p = NdmConfig::preset(name);
  if (!p) throw UsageError("unknown NDM preset '" + name + "'; known: toy lm");
  json j = ndm_config_json(*p);
  j["preset"] = name;
  return j;
}

json mi_grid_json(const MIMatrix& mi) {
  return {{"max_normalized", mi.max_normalized()}, {"sample_n", mi.sample_n}, {"warnings", mi.warnings}};
}

int run_ndm_train(const Invocation& inv) {
  const json cfg = resolve(inv, ndm_defaults(), ndm_preset_layer(inv.preset));
  const NdmConfig nc = ndm_config_from(cfg);
  const std::string init = cfg["init"];
  if (init != "identity" && init != "random") throw UsageError("init must be identity or random");
  auto set = std::make_shared<ActivationSet>(read_activations(require_path(cfg, "activations")));
  std::optional<ToyModel> model;
  if (cfg["model"].is_string()) model = read_toy_model(cfg["model"].get<std::string>());
  nc.validate(set->dim());
  begin_run(inv, "ndm-train", cfg);

  const fs::path out(inv.out);
  const std::string provenance = cfg.dump();
  auto save = [&](const Partition& p, const fs::path& path) {
    write_partition(PartitionFile{p.dim(), p.config(), p.rotation(), provenance}, path);
  };
  ActivationBuffer buffer(set, nc.recycle_buffer);
  const Matrix r0 = initial_rotation(init == "identity" ? InitKind::identity : InitKind::random_orthogonal,
                                     set->dim(), nc.seed);
  const NdmResult res = train_ndm(
      buffer, nc, r0,
      [&](std::string_view event, const Partition& p, const TrainTrace&) {
        if (event == "merge") save(p, out / "checkpoint.ndmp");
      },
      [](const StepRecord& r) {
        std::cerr << "step " << r.step << " loss " << r.loss << " S " << r.c.size() << '\n';
      });

  save(res.partition, out / "partition.ndmp");
  std::ofstream trace(out / "trace.jsonl");
  for (const auto& s : res.trace.steps)
    trace << json{{"type", "step"}, {"step", s.step}, {"loss", s.loss}, {"c", s.c},
                  {"orthogonality_error", s.orthogonality_error}}.dump() << '\n';
  for (const auto& r : res.trace.reinits)
    trace << json{{"type", "reinit"}, {"step", r.step}, {"a", r.a}, {"b", r.b}, {"losses", r.losses}}.dump() << '\n';
  for (const auto& m : res.trace.mi) {
    json line = mi_grid_json(m.mi);
    line["type"] = "mi";
    line["step"] = m.step;
    trace << line.dump() << '\n';
  }
  for (const auto& m : res.trace.merges)
    trace << json{{"type", "merge"}, {"step", m.step}, {"a", m.a}, {"b", m.b}, {"dim_a", m.dim_a},
                  {"dim_b", m.dim_b}, {"normalized_mi", m.normalized_mi}}.dump() << '\n';
  if (!res.trace.mi.empty()) write_grid_csv(res.trace.mi.back().mi.normalized, out / "mi_final.csv");

  json summary{{"c", res.partition.config()},
               {"stop_reason", res.trace.stop_reason},
               {"final_step", res.trace.final_step},
               {"merges", res.trace.merges.size()},
               {"max_orthogonality_error", res.trace.max_orthogonality_error}};
  if (model) {
    const PurityReport pur = block_purity(res.partition.rotation() * model->w, model->spec, res.partition.config());
    summary["purity"] = pur.purity;
    summary["mean_purity"] = pur.mean();
    write_grid_csv(res.partition.rotation() * model->w, out / "rw.csv");
  }
  cli::write_json(out / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---- mi ----

int run_mi(const Invocation& inv) {
  const json cfg = resolve(inv,
                           {{"partition", nullptr}, {"activations", nullptr}, {"samples", 4096}, {"k", 3},
                            {"jitter", KsgOptions{}.jitter}},
                           nullptr);
  const Partition p = load_partition(require_path(cfg, "partition"));
  auto set = std::make_shared<ActivationSet>(read_activations(require_path(cfg, "activations")));
  begin_run(inv, "mi", cfg);

  ActivationBuffer buffer(set);
  const std::size_t n = std::min<std::size_t>(cfg["samples"].get<std::size_t>(), set->rows());
  const RowBatch rows = buffer.next(n);
  const auto parts = subspace_split(rows.rows * p.rotation().transpose(), p.config());
  const MIMatrix mi = pairwise_mi(parts, KsgOptions{cfg["k"].get<int>(), cfg["jitter"].get<double>()});
  const fs::path out(inv.out);
  write_grid_csv(mi.raw, out / "mi_raw.csv");
  write_grid_csv(mi.normalized, out / "mi_normalized.csv");
  json summary = mi_grid_json(mi);
  summary["c"] = p.config();
  cli::write_json(out / "summary.json", summary);
  for (const auto& w : mi.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---- eval-gini ----

std::string format_gini_row(const std::string& test, const GiniReport& g) {
  char buf[160];
  auto mark = [](double v) { return v > 0.6 ? "*" : " "; };
  std::snprintf(buf, sizeof buf, "%-16s %7.3f%s %7.3f%s %7.3f%s", test.c_str(), g.raw, mark(g.raw), g.per_dim,
                mark(g.per_dim), g.per_var, mark(g.per_var));
  return buf;
}

int run_eval_gini(const Invocation& inv) {
  const json cfg = resolve(inv, {{"effects", nullptr}}, nullptr);
  const std::string path = require_path(cfg, "effects");
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_failure, "cannot open effects file " + path);
  begin_run(inv, "eval-gini", cfg);

  std::ofstream report(fs::path(inv.out) / "report.jsonl");
  std::cout << "test                raw      d_s      Var_s   (* = above 0.6)\n";
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
      throw Error(Errc::invalid_argument, path + ":" + std::to_string(lineno) + ": not a JSON object");
    const std::string test = rec.value("test", "line" + std::to_string(lineno));
    PatchingRecord pr;
    try {
      pr.effect = rec.at("effect").get<std::vector<double>>();
      pr.dims = rec.at("dims").get<std::vector<std::size_t>>();
      pr.var = rec.at("var").get<std::vector<double>>();
    } catch (const json::exception&) {
      throw Error(Errc::invalid_argument, path + ":" + std::to_string(lineno) + ": needs effect, dims and var arrays");
    }
    const GiniReport g = gini_report(pr);
    report << json{{"test", test},         {"g_raw", g.raw},         {"g_per_dim", g.per_dim},
                   {"g_per_var", g.per_var}, {"clamped", g.clamped},   {"warnings", g.warnings},
                   {"satisfactory", g.raw > 0.6}}.dump()
           << '\n';
    std::cout << format_gini_row(test, g) << '\n';
    for (const auto& w : g.warnings) std::cout << "  warning: " << w << '\n';
  }
  return 0;
}

// ---- patch-toy ----

int run_patch_toy(const Invocation& inv) {
  const json cfg = resolve(
      inv, {{"model", nullptr}, {"partition", nullptr}, {"group", 0}, {"samples", 1000}, {"seed", 0}}, nullptr);
  const ToyModel m = read_toy_model(require_path(cfg, "model"));
  const Partition p = load_partition(require_path(cfg, "partition"));
  begin_run(inv, "patch-toy", cfg);

  const ToyPatchingOptions opt{cfg["group"].get<std::size_t>(), cfg["samples"].get<std::size_t>(),
                               cfg["seed"].get<std::uint64_t>()};
  const ToyPatchingResult r = toy_patching(m, p, opt);
  const fs::path out(inv.out);
  cli::write_json(out / "record.json",
                  json{{"effect", r.record.effect}, {"dims", r.record.dims}, {"var", r.record.var}});
  const json report{{"g_raw", r.gini.raw},       {"g_per_dim", r.gini.per_dim},
                    {"g_per_var", r.gini.per_var}, {"clamped", r.gini.clamped},
                    {"warnings", r.gini.warnings}, {"clean_readout_mean", r.clean_readout_mean}};
  cli::write_json(out / "report.json", report);
  std::cout << report.dump() << '\n';
  return 0;
}

// ---- baseline ----

int run_baseline(const Invocation& inv) {
  const json cfg = resolve(
      inv, {{"activations", nullptr}, {"kind", "pca1"}, {"c", json::array()}, {"partition", nullptr}, {"seed", 0}},
      nullptr);
  const BaselineKind kind = parse_baseline(cfg["kind"].get<std::string>());
  const ActivationSet set = read_activations(require_path(cfg, "activations"));
  std::vector<std::size_t> c = to_sizes(cfg["c"]);
  if (cfg["partition"].is_string()) c = read_partition(cfg["partition"].get<std::string>()).c;
  if (c.empty()) throw UsageError("baseline needs a configuration: set 'c' or 'partition'");
  begin_run(inv, "baseline", cfg);

  const std::string provenance = cfg.dump();
  auto save = [&](BaselineKind k, const fs::path& path) {
    const Partition p = baseline_partition(k, set, c, cfg["seed"].get<std::uint64_t>());
    write_partition(PartitionFile{p.dim(), p.config(), p.rotation(), provenance}, path);
  };
  const fs::path out(inv.out);
  save(kind, out / "partition.ndmp");
  // The other PCA assignment too, so both readings can be evaluated.
  if (kind == BaselineKind::pca1) save(BaselineKind::pca2, out / "partition_reversed.ndmp");
  if (kind == BaselineKind::pca2) save(BaselineKind::pca1, out / "partition_reversed.ndmp");
  std::cout << json{{"kind", cfg["kind"]}, {"c", c}}.dump() << '\n';
  return 0;
}

// ---- preimage ----

int run_preimage(const Invocation& inv) {
  const json cfg = resolve(inv,
                           {{"partition", nullptr},
                            {"activations", nullptr},
                            {"subspace", 0},
                            {"row", 0},
                            {"query", nullptr},
                            {"threshold", kDefaultPreimageThreshold},
                            {"top_k", 20},
                            {"before", 30},
                            {"after", 5}},
                           nullptr);
  const Partition p = load_partition(require_path(cfg, "partition"));
  const ActivationSet set = read_activations(require_path(cfg, "activations"));
  const auto index = build_index(set, p);
  const std::size_t s = cfg["subspace"];
  if (s >= index.size()) throw Error(Errc::invalid_argument, "subspace index out of range");

  Vector q;
  std::optional<QuerySource> source;
  if (cfg["query"].is_array()) {
    const auto values = cfg["query"].get<std::vector<double>>();
    q = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  } else {
    const std::size_t row = cfg["row"];
    if (row >= set.rows()) throw Error(Errc::invalid_argument, "query row out of range");
    q = index[s].vectors.row(static_cast<Eigen::Index>(row)).transpose();
    source = QuerySource{set.meta[row].doc_id, set.meta[row].position};
  }
  const auto hits = query(index[s], q, cfg["threshold"], cfg["top_k"], source);
  std::cout << render(hits, set.meta, ContextWindow{cfg["before"], cfg["after"]});

  if (!inv.out.empty()) {
    begin_run(inv, "preimage", cfg);
    std::ofstream os(fs::path(inv.out) / "hits.jsonl");
    for (const auto& h : hits)
      os << json{{"similarity", h.similarity}, {"row", h.row}, {"doc_id", h.doc_id},
                 {"position", h.position}, {"self", h.self}}.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neighbor distance minimization: toy models, subspace partitions, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  struct Command {
    const char* name;
    const char* help;
    bool preset;
    std::vector<std::pair<std::string, std::string>> paths;
    int (*run)(const Invocation&);
  };
  const std::vector<Command> commands{
      {"toy-train", "Train a toy superposition model", true, {}, run_toy_train},
      {"toy-dump", "Dump hidden activations of a toy model", false, {{"model", "Toy model file"}}, run_toy_dump},
      {"ndm-train", "Learn an orthogonal subspace partition", true,
       {{"activations", "NDMA activation file"}, {"model", "Toy model, for purity reporting"}}, run_ndm_train},
      {"mi", "Pairwise subspace mutual information", false,
       {{"partition", "Partition file"}, {"activations", "NDMA activation file"}}, run_mi},
      {"eval-gini", "Gini report over patching effects", false, {{"effects", "JSONL effects file"}}, run_eval_gini},
      {"patch-toy", "Subspace patching on a toy model", false,
       {{"model", "Toy model file"}, {"partition", "Partition file"}}, run_patch_toy},
      {"baseline", "Identity, random or PCA partition", false,
       {{"activations", "NDMA activation file"}, {"partition", "Take the configuration from this partition"}},
       run_baseline},
      {"preimage", "Cosine-threshold preimage search", false,
       {{"partition", "Partition file"}, {"activations", "NDMA activation file with .meta"}}, run_preimage},
  };

  std::vector<Invocation> invocations(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* sub = app.add_subcommand(commands[i].name, commands[i].help);
    add_common(sub, invocations[i], commands[i].preset);
    for (const auto& [key, help] : commands[i].paths) add_path(sub, invocations[i], key, help);
    sub->add_option_function<long long>(
        "--seed", [&inv = invocations[i]](long long v) { inv.seed = v; }, "Seed override");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (std::size_t i = 0; i < commands.size(); ++i)
      if (subs[i]->parsed()) return commands[i].run(invocations[i]);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
