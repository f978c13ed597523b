#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "csmil/attention_map.hpp"
#include "csmil/cli.hpp"
#include "csmil/clustering.hpp"
#include "csmil/error.hpp"
#include "csmil/evaluation.hpp"
#include "json.hpp"

namespace csmil::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  RunConfig cfg;
  fs::path out_dir;
  std::ostream& out;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) items.push_back(item);
  return items;
}

void write_text(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << text;
}

std::string read_text(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot read " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path manifest_path(const Context& c) {
  return c.cfg.dataset.empty() ? c.out_dir / "data" / "manifest.json" : fs::path(c.cfg.dataset);
}

data::Dataset load_input_dataset(const Context& c) {
  const fs::path manifest = manifest_path(c);
  if (!fs::exists(manifest)) throw ConfigError("dataset manifest not found: " + manifest.string());
  return data::load_dataset(manifest);
}

train::SplitPlan load_plan(const Context& c) {
  const fs::path file = c.out_dir / "cohort" / "splits.json";
  if (!fs::exists(file)) throw ConfigError("no split plan at " + file.string() + "; run `cluster` first");
  return train::load_split_plan(file);
}

cluster::ClusterModel load_clusters(const Context& c, const std::string& label) {
  const fs::path file = c.out_dir / "cohort" / ("clusters_" + label + ".json");
  if (!fs::exists(file))
    throw ConfigError("no cluster model for scale '" + label + "' at " + file.string() + "; run `cluster` first");
  return cluster::load_cluster_model(file);
}

struct VariantInfo {
  std::string name;
  std::string clustering;
  int bag_size = 0;
  std::vector<model::Checkpoint> models;
};

VariantInfo load_variant(const Context& c, const std::string& name) {
  const fs::path dir = c.out_dir / "models" / name;
  const fs::path info_file = dir / "info.json";
  if (!fs::exists(info_file)) throw ConfigError("no trained model '" + name + "' under " + dir.string());
  VariantInfo v;
  v.name = name;
  try {
    const json info = json::parse(read_text(info_file));
    v.clustering = info.at("clustering_scale").get<std::string>();
    v.bag_size = info.at("bag_size").get<int>();
    const int n = info.at("n_splits").get<int>();
    for (int i = 0; i < n; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "split_%02d.ckpt", i);
      if (!fs::exists(dir / buf)) throw ConfigError("missing checkpoint " + (dir / buf).string());
      v.models.push_back(model::load_checkpoint(dir / buf));
    }
  } catch (const json::exception& e) {
    throw FormatError(info_file.string() + ": " + e.what());
  }
  if (v.models.empty()) throw ConfigError("model '" + name + "' has no checkpoints");
  return v;
}

std::map<std::string, std::string> read_key_values(const fs::path& file) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(read_text(file));
  for (std::string line; std::getline(ss, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// ---------------------------------------------------------------------------

void cmd_gen_data(const Context& c) {
  data::SyntheticSpec spec = c.cfg.data;
  spec.seed = c.cfg.stage_seed("data");
  const auto synth = data::generate_synthetic(spec);
  const fs::path dir = c.out_dir / "data";
  fs::create_directories(dir);
  const fs::path manifest = data::save_dataset(synth.dataset, dir);
  data::save_ground_truth(synth.truth, dir / "ground_truth.json");
  write_text(dir / "resolved_config.json", c.cfg.resolved_json());
  c.out << manifest.string() << "\n";
}

void cmd_cluster(const Context& c) {
  const auto dataset = load_input_dataset(c);
  const auto plan = train::make_splits(dataset, c.cfg.train.n_splits, c.cfg.stage_seed("splits"),
                                       c.cfg.train.test_fraction);
  const fs::path dir = c.out_dir / "cohort";
  fs::create_directories(dir);
  train::save_split_plan(plan, dir / "splits.json");

  std::vector<std::string> choices;
  if (c.cfg.cluster.scale == "auto") {
    choices = dataset.scale_labels;
    choices.push_back("multi");
  } else {
    choices.push_back(c.cfg.cluster.scale);
  }
  const data::Dataset cohort = dataset.subset(plan.cohort());
  for (const auto& choice : choices) {
    const int scale = cluster::parse_scale_choice(dataset, choice);
    const std::string label = scale == cluster::kMultiScale ? "multi" : dataset.scale_labels.at(scale);
    const auto model = cluster::cluster_dataset(cohort, scale, c.cfg.cluster.k,
                                                derive_seed(c.cfg.stage_seed("cluster"), label),
                                                c.cfg.cluster.max_iter, c.cfg.cluster.tol);
    const fs::path file = dir / ("clusters_" + label + ".json");
    cluster::save_cluster_model(model, file);
    c.out << file.string() << "\n";
  }
  write_text(dir / "resolved_config.json", c.cfg.resolved_json());
}

void cmd_train(const Context& c) {
  const auto dataset = load_input_dataset(c);
  const auto plan = load_plan(c);
  const auto mcfg = model_config(c.cfg, dataset);
  const std::string label = clustering_label(c.cfg, dataset);
  const auto clusters = load_clusters(c, label);
  train::TrainConfig tcfg = c.cfg.train;
  tcfg.seed = c.cfg.stage_seed("train");
  if (tcfg.n_splits != static_cast<int>(plan.splits.size()))
    throw ConfigError("train.n_splits is " + std::to_string(tcfg.n_splits) + " but the split plan has " +
                      std::to_string(plan.splits.size()) + " splits");

  const auto trained = train::train_all(dataset, plan, clusters, tcfg, mcfg);
  const std::string name = variant_name(c.cfg);
  const fs::path dir = c.out_dir / "models" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  json selection = json::array();
  for (const auto& t : trained) {
    char ckpt[32], loss[32];
    std::snprintf(ckpt, sizeof ckpt, "split_%02d.ckpt", t.split_id);
    std::snprintf(loss, sizeof loss, "loss_%02d.csv", t.split_id);
    model::save_checkpoint(dir / ckpt, mcfg, t.params);
    train::write_loss_curve(dir / loss, t.curve);
    selection.push_back(t.selection_epoch);
  }
  json info = {{"name", name},
               {"fusion", c.cfg.model.fusion},
               {"clustering_scale", label},
               {"bag_size", tcfg.bag_size},
               {"n_splits", static_cast<int>(trained.size())},
               {"selection_epochs", selection}};
  write_text(dir / "info.json", info.dump(2) + "\n");
  write_text(dir / "resolved_config.json", c.cfg.resolved_json());
  c.out << dir.string() << "\n";
}

void cmd_eval(const Context& c) {
  const auto dataset = load_input_dataset(c);
  const auto plan = load_plan(c);
  if (plan.test.empty()) throw ConfigError("the split plan holds out no test patients (train.test_fraction)");
  const std::string name = variant_name(c.cfg);
  const auto variant = load_variant(c, name);
  const auto clusters = load_clusters(c, variant.clustering);

  eval::EvalSettings settings;
  settings.bag_size = variant.bag_size;
  settings.seed = c.cfg.stage_seed("eval");
  settings.mode = eval::parse_scoring_mode(c.cfg.eval.mode);
  const auto result = eval::evaluate(dataset.subset(plan.test), variant.models, clusters, settings);

  const fs::path dir = c.out_dir / "eval" / name;
  eval::write_report(dir / "report.txt", result.report, name, settings.mode);
  eval::write_curve(dir / "roc.csv", "fpr,tpr", result.report.roc);
  eval::write_curve(dir / "pr.csv", "recall,precision", result.report.pr);
  eval::write_scores(dir / "scores.csv", result.scored);
  write_text(dir / "resolved_config.json", c.cfg.resolved_json());
  c.out << name << " auc=" << data::format_double(result.report.auc)
        << " ap=" << data::format_double(result.report.ap)
        << " acc=" << data::format_double(result.report.accuracy) << "\n";
}

void cmd_compare(const Context& c) {
  std::vector<std::string> variants = c.cfg.eval.variants;
  const fs::path eval_dir = c.out_dir / "eval";
  if (variants.empty() && fs::exists(eval_dir)) {
    for (const auto& entry : fs::directory_iterator(eval_dir))
      if (entry.is_directory()) variants.push_back(entry.path().filename().string());
    std::sort(variants.begin(), variants.end());
  }
  if (variants.size() < 2) throw ConfigError("compare needs at least two evaluated variants");
  const std::string ref = c.cfg.eval.ref.empty() ? variants.front() : c.cfg.eval.ref;
  if (std::find(variants.begin(), variants.end(), ref) == variants.end()) variants.insert(variants.begin(), ref);

  std::map<std::string, std::vector<eval::ScoredPatient>> scores;
  std::map<std::string, eval::EvalReport> reports;
  for (const auto& v : variants) {
    const fs::path dir = eval_dir / v;
    if (!fs::exists(dir / "scores.csv") || !fs::exists(dir / "report.txt"))
      throw ConfigError("variant '" + v + "' has not been evaluated; run `eval` first");
    scores[v] = eval::read_scores(dir / "scores.csv");
    const auto kv = read_key_values(dir / "report.txt");
    eval::EvalReport r;
    try {
      r.auc = data::parse_double(kv.at("auc"));
      r.ap = data::parse_double(kv.at("ap"));
      r.accuracy = data::parse_double(kv.at("accuracy"));
    } catch (const std::out_of_range&) {
      throw FormatError((dir / "report.txt").string() + ": incomplete report");
    }
    reports[v] = r;
  }

  std::vector<eval::CompareRow> rows;
  for (const auto& v : variants) {
    eval::CompareRow row;
    row.model = v;
    row.report = reports[v];
    row.vs_ref = eval::compare_models(v, scores[v], ref, scores[ref], c.cfg.eval.n_bootstrap,
                                      c.cfg.stage_seed("bootstrap"));
    rows.push_back(std::move(row));
  }
  eval::write_compare_table(c.out_dir / "compare.csv", rows);
  write_text(c.out_dir / "compare_config.json", c.cfg.resolved_json());
  c.out << (c.out_dir / "compare.csv").string() << "\n";
}

void cmd_attn_map(const Context& c) {
  const auto dataset = load_input_dataset(c);
  const auto plan = load_plan(c);
  const std::string name = variant_name(c.cfg);
  const auto variant = load_variant(c, name);
  if (variant.models.front().config.fusion != model::Fusion::CrossScaleAttention)
    throw ContractError("no cross-scale attention in this variant ('" + name + "')");
  const auto clusters = load_clusters(c, variant.clustering);

  std::vector<std::string> patients = c.cfg.render.patients.empty() ? plan.test : c.cfg.render.patients;
  if (patients.empty()) throw ConfigError("no patients to render");
  const std::uint64_t seed = c.cfg.stage_seed("render");
  const fs::path dir = c.out_dir / "attn" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::vector<AttentionRecord> all;
  for (const auto& pid : patients) {
    const auto& patient = dataset.patient(pid);
    const auto assigned = clusters.assign(patient);
    std::vector<AttentionRecord> visits;
    for (int pass = 0; pass < c.cfg.render.passes; ++pass) {
      const auto bag = train::seeded_bag(patient, assigned, clusters.k, variant.bag_size, seed,
                                         "pass/" + std::to_string(pass));
      for (const auto& m : variant.models) {
        auto pred = model::predict_bag(bag, m.params, m.config);
        visits.insert(visits.end(), pred.attention.begin(), pred.attention.end());
      }
    }
    const auto raw = render::aggregate_visits(visits);
    all.insert(all.end(), raw.begin(), raw.end());
    const auto maps = render::render_heatmaps(render::normalize_per_scale(raw), render::geometry_for(patient));
    for (const auto& map : maps)
      render::write_pgm(dir / (pid + "_" + dataset.scale_labels.at(map.scale) + ".pgm"), map);
  }
  render::write_attention_csv(dir / "attention.csv", all);
  write_text(dir / "resolved_config.json", c.cfg.resolved_json());
  c.out << dir.string() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-scale multi-instance learning pipeline", "csmil"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, out_dir = ".", dataset, fusion, name, variants, ref, patients;
    std::uint64_t seed = 0;
    int bag_size = 0;
  } flags;

  using Handler = void (*)(const Context&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
      {"gen-data", "Generate a synthetic multi-scale dataset", cmd_gen_data},
      {"cluster", "Split the cohort and fit phenotype clusters", cmd_cluster},
      {"train", "Train one model per split", cmd_train},
      {"eval", "Score the test patients", cmd_eval},
      {"compare", "Pairwise tests of evaluated variants against a reference", cmd_compare},
      {"attn-map", "Render cross-scale attention heatmaps", cmd_attn_map},
  };
  std::vector<std::pair<CLI::App*, Handler>> subs;
  for (const auto& [cmd, help, handler] : commands) {
    CLI::App* sub = app.add_subcommand(cmd, help);
    sub->add_option("--config", flags.config, "JSON run configuration");
    sub->add_option("--seed", flags.seed, "Global seed (overrides the config)");
    sub->add_option("--out-dir", flags.out_dir, "Run directory");
    sub->add_option("--dataset", flags.dataset, "Dataset manifest (default <out-dir>/data/manifest.json)");
    sub->add_option("--fusion", flags.fusion, "cs-attn, concat, add, instance-pool or single-<scale>");
    sub->add_option("--name", flags.name, "Variant name");
    sub->add_option("--bag-size", flags.bag_size, "Instances per bag");
    if (cmd == "compare") {
      sub->add_option("--variants", flags.variants, "Comma-separated variant names");
      sub->add_option("--ref", flags.ref, "Reference variant");
    }
    if (cmd == "attn-map") sub->add_option("--patients", flags.patients, "Comma-separated patient ids");
    subs.emplace_back(sub, handler);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    for (const auto& [sub, handler] : subs) {
      if (!sub->parsed()) continue;
      RunConfig cfg = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
      if (sub->count("--seed")) cfg.seed = flags.seed;
      if (sub->count("--dataset")) cfg.dataset = flags.dataset;
      if (sub->count("--fusion")) cfg.model.fusion = flags.fusion;
      if (sub->count("--name")) cfg.model.name = flags.name;
      if (sub->count("--bag-size")) cfg.train.bag_size = flags.bag_size;
      if (sub->get_option_no_throw("--variants") && sub->count("--variants"))
        cfg.eval.variants = split_list(flags.variants);
      if (sub->get_option_no_throw("--ref") && sub->count("--ref")) cfg.eval.ref = flags.ref;
      if (sub->get_option_no_throw("--patients") && sub->count("--patients"))
        cfg.render.patients = split_list(flags.patients);
      cfg.validate();
      handler(Context{cfg, fs::path(flags.out_dir), out});
    }
    return 0;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace csmil::cli
