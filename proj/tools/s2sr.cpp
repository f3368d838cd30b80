// s2sr: prepare data, train, evaluate and compare set-to-set ranking models.
//
// Exit codes: 0 success, 2 usage/config/data error, 3 runtime/numeric error.
// Config precedence (lowest first): built-in defaults, --preset, --config
// files in order, --set overrides, dedicated flags (--seed, --workers,
// --deterministic).

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <set2set/set2set.hpp>

namespace fs = std::filesystem;
using set2set::json;

namespace {

constexpr int exit_usage = 2;
constexpr int exit_runtime = 3;

struct CommonOptions {
  std::vector<std::string> config_paths;
  std::string preset;
  std::vector<std::string> overrides;
  std::string run_dir;
  std::string runs_root = "runs";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool deterministic = false;
};

struct Effective {
  set2set::ExperimentConfig cfg;
  std::string hash;
  json canonical;
};

Effective load_config(const CommonOptions& opt) {
  json doc = json::object();
  if (!opt.preset.empty()) doc.merge_patch(set2set::preset(opt.preset));
  for (const auto& path : opt.config_paths) {
    std::ifstream in(path);
    if (!in) throw set2set::IoError("cannot open config file: " + path);
    try {
      doc.merge_patch(json::parse(in, nullptr, true, true));
    } catch (const json::parse_error& e) {
      throw set2set::ConfigError("config " + path + ": " + e.what());
    }
  }
  for (const auto& s : opt.overrides) set2set::apply_override(doc, s);
  if (opt.seed) doc["train"]["seed"] = *opt.seed;
  if (opt.workers) doc["train"]["workers"] = *opt.workers;

  Effective eff;
  eff.cfg = set2set::config_from_json(doc);
  if (opt.deterministic) eff.cfg.train.workers = 1;
  set2set::validate(eff.cfg);
  eff.canonical = set2set::config_to_json(eff.cfg);
  eff.hash = set2set::config_hash(eff.cfg);
  return eff;
}

fs::path make_run_dir(const CommonOptions& opt, const std::string& hash) {
  fs::path dir;
  if (!opt.run_dir.empty()) {
    dir = opt.run_dir;
  } else {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    std::ostringstream name;
    name << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-" << hash.substr(0, 8);
    dir = fs::path(opt.runs_root) / name.str();
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw set2set::IoError("cannot write " + path.string());
  os << text;
}

void write_report(const fs::path& dir, const std::string& stem, const std::string& label,
                  const set2set::EvalReport& report) {
  write_text(dir / (stem + ".json"), set2set::to_json(report).dump(2) + "\n");
  write_text(dir / (stem + ".txt"), set2set::format_table(label, report));
}

set2set::InteractionDataset dataset_for(const Effective& eff, const std::string& dataset_flag) {
  if (!dataset_flag.empty()) {
    if (!fs::exists(dataset_flag)) throw set2set::IoError("dataset not found: " + dataset_flag);
    return set2set::load_dataset(dataset_flag);
  }
  return set2set::load_or_prepare(eff.cfg.data);
}

void print_stats(const set2set::InteractionDataset& ds) {
  std::cout << "users: " << ds.num_users << "\n"
            << "items: " << ds.num_items << "\n"
            << "interactions: " << ds.num_interactions() << " (train " << ds.train.total() << ", val "
            << ds.val.total() << ", test " << ds.test.total() << ")\n"
            << "density: " << ds.density() << "\n";
  if (ds.dropped_in_split) std::cout << "dropped in split: " << ds.dropped_in_split << "\n";
}

// ---- commands -----------------------------------------------------------------

int cmd_prepare(const CommonOptions& opt, const std::string& out_flag) {
  auto eff = load_config(opt);
  auto ds = set2set::prepare_dataset(eff.cfg.data);
  std::string out = out_flag;
  if (out.empty()) out = eff.cfg.data.dataset;
  if (out.empty()) out = (make_run_dir(opt, eff.hash) / "dataset.bin").string();
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  set2set::save_dataset(ds, out, set2set::data_hash(eff.cfg.data));
  print_stats(ds);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_train(const CommonOptions& opt, const std::string& dataset_flag) {
  auto eff = load_config(opt);
  auto ds = dataset_for(eff, dataset_flag);
  auto dir = make_run_dir(opt, eff.hash);
  write_text(dir / "config.json", eff.canonical.dump(2) + "\n");

  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  auto result = set2set::train(ds, eff.cfg.train, [&](const set2set::EpochRecord& r) {
    log << set2set::to_json(r, eff.cfg.train.select_cutoff).dump() << '\n';
    log.flush();
  });
  set2set::CheckpointMeta meta{eff.hash, set2set::data_hash(eff.cfg.data), result.report.best_epoch};
  set2set::save_checkpoint(result.model, (dir / "model.ck").string(), meta);

  auto report = set2set::evaluate(result.model, ds, set2set::Split::test, eff.cfg.cutoffs, eff.cfg.train.workers);
  report.config_hash = eff.hash;
  report.seed = eff.cfg.train.seed;
  report.epoch = result.report.best_epoch;
  const auto label = set2set::cell_label(eff.cfg.train, set2set::Variant::full);
  write_report(dir, "report_test", label, report);
  std::cout << "best epoch " << result.report.best_epoch << " of " << result.report.last_epoch << "\n"
            << set2set::format_table(label, report) << "run dir: " << dir.string() << "\n";
  return 0;
}

int cmd_evaluate(const CommonOptions& opt, const std::string& checkpoint, const std::string& dataset_flag,
                 const std::vector<std::size_t>& cutoff_flag, const std::string& split_name) {
  if (checkpoint.empty() || !fs::exists(checkpoint)) {
    std::cerr << "error: checkpoint not found: " << checkpoint << "\n";
    return exit_usage;
  }
  auto eff = load_config(opt);
  auto split = set2set::parse_split(split_name);
  auto cutoffs = cutoff_flag.empty() ? eff.cfg.cutoffs : cutoff_flag;
  set2set::validate_cutoffs(cutoffs);
  auto ds = dataset_for(eff, dataset_flag);

  std::optional<std::string> expected;
  if (!opt.config_paths.empty() || !opt.preset.empty()) expected = eff.hash;
  auto ck = set2set::load_checkpoint(checkpoint, expected);
  std::string dataset_side = dataset_flag.empty() ? eff.cfg.data.dataset : dataset_flag;
  if (!dataset_side.empty() && fs::exists(set2set::io::sidecar_path(dataset_side))) {
    std::ifstream js(set2set::io::sidecar_path(dataset_side));
    auto side = json::parse(js);
    auto ds_hash = side.value("config_hash", std::string());
    if (!ck.meta.dataset_hash.empty() && !ds_hash.empty() && ds_hash != ck.meta.dataset_hash) {
      set2set::log::warn("dataset hash ", ds_hash, " differs from the one the checkpoint was trained on (",
                         ck.meta.dataset_hash, ")");
    }
  }

  auto report = set2set::evaluate(ck.model, ds, split, cutoffs, opt.deterministic ? 1 : eff.cfg.train.workers);
  report.config_hash = ck.meta.config_hash;
  report.epoch = ck.meta.epoch;
  fs::path dir = opt.run_dir.empty() ? fs::path(checkpoint).parent_path() : fs::path(opt.run_dir);
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  const std::string stem = std::string("report_") + set2set::to_string(split);
  write_report(dir, stem, fs::path(checkpoint).filename().string(), report);
  std::cout << set2set::format_table(fs::path(checkpoint).filename().string(), report);
  std::cout << "wrote " << (dir / (stem + ".json")).string() << "\n";
  return 0;
}

int cmd_compare(const CommonOptions& opt, const std::string& dataset_flag, bool no_item_to_set, bool no_set_to_set,
                std::size_t parallel) {
  auto eff = load_config(opt);
  if (!eff.cfg.grid.present) {
    std::cerr << "error: compare needs a grid block\n";
    return exit_usage;
  }
  if (no_item_to_set && no_set_to_set) {
    std::cerr << "error: --no-item-to-set and --no-set-to-set together leave no objective\n";
    return exit_usage;
  }
  std::optional<set2set::Variant> forced;
  if (no_item_to_set) forced = set2set::Variant::no_item_to_set;
  if (no_set_to_set) forced = set2set::Variant::no_set_to_set;
  auto cells = set2set::expand_grid(eff.cfg, forced);
  auto seeds = eff.cfg.grid.seeds ? *eff.cfg.grid.seeds : std::vector<std::uint64_t>{eff.cfg.train.seed};
  if (cells.empty() || seeds.empty()) {
    std::cerr << "error: grid is empty\n";
    return exit_usage;
  }
  std::cout << "grid: " << cells.size() << " cells x " << seeds.size() << " seeds\n";

  auto ds = dataset_for(eff, dataset_flag);
  auto dir = make_run_dir(opt, eff.hash);
  write_text(dir / "config.json", eff.canonical.dump(2) + "\n");
  if (opt.deterministic) parallel = 1;
  auto results = set2set::run_grid(ds, cells, seeds, eff.cfg.cutoffs, parallel, eff.hash);

  nlohmann::ordered_json out;
  out["config_hash"] = eff.hash;
  out["seeds"] = seeds;
  out["rows"] = nlohmann::ordered_json::array();
  std::vector<std::pair<std::string, set2set::EvalReport>> table;
  for (const auto& r : results) {
    nlohmann::ordered_json row;
    row["label"] = r.cell.label;
    row["variant"] = set2set::to_string(r.cell.variant);
    row["train"] = set2set::train_to_json(r.cell.train);
    row["train"].erase("workers");
    row["median"] = set2set::to_json(r.median);
    row["runs"] = nlohmann::ordered_json::array();
    for (const auto& run : r.runs) row["runs"].push_back(set2set::to_json(run.test));
    out["rows"].push_back(row);
    table.emplace_back(r.cell.label, r.median);
  }
  const auto text = set2set::format_table(table);
  write_text(dir / "compare.json", out.dump(2) + "\n");
  write_text(dir / "compare.txt", text);
  std::cout << text << "run dir: " << dir.string() << "\n";
  return 0;
}

int cmd_probe(const CommonOptions& opt, const std::string& dataset_flag, const std::vector<std::size_t>& ks,
              std::size_t epochs, std::size_t synthetic_users) {
  auto eff = load_config(opt);
  set2set::InteractionDataset ds;
  if (!dataset_flag.empty() || !eff.cfg.data.dataset.empty() || !eff.cfg.data.path.empty()) {
    ds = dataset_for(eff, dataset_flag);
  } else {
    set2set::SyntheticConfig sc;
    sc.num_users = synthetic_users;
    sc.seed = eff.cfg.data.seed;
    ds = set2set::build_dataset(set2set::synthetic_interactions(sc), 1);
  }
  auto cfg = eff.cfg.train;
  cfg.eval_every = cfg.epochs + 1;
  auto points = set2set::epoch_time_probe(ds, cfg, ks, epochs);
  std::vector<double> x, y;
  json out;
  out["L"] = cfg.sampler.L;
  out["points"] = json::array();
  std::cout << "K\tK+L\tseconds/epoch\n";
  for (const auto& p : points) {
    x.push_back(static_cast<double>(p.K + cfg.sampler.L));
    y.push_back(p.seconds_per_epoch);
    out["points"].push_back({{"K", p.K}, {"seconds_per_epoch", p.seconds_per_epoch}});
    std::cout << p.K << "\t" << p.K + cfg.sampler.L << "\t" << p.seconds_per_epoch << "\n";
  }
  if (points.size() >= 2) {
    const double r2 = set2set::linear_fit_r2(x, y);
    out["r2"] = r2;
    std::cout << "R^2 of time vs K+L: " << r2 << "\n";
  }
  auto dir = make_run_dir(opt, eff.hash);
  write_text(dir / "probe.json", out.dump(2) + "\n");
  return 0;
}

int cmd_synth(const std::string& out, const set2set::SyntheticConfig& sc, const std::string& format) {
  auto fmt = format == "csv" ? set2set::FileFormat::csv : set2set::FileFormat::tsv;
  if (format != "csv" && format != "tsv") throw set2set::ConfigError("format must be tsv or csv");
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw set2set::IoError("cannot write " + out);
  auto rows = set2set::synthetic_ratings(sc);
  set2set::write_ratings(os, rows, fmt);
  std::cout << "wrote " << rows.size() << " rows to " << out << "\n";
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("-c,--config", opt.config_paths, "JSON config file (repeatable, merged in order)");
  cmd->add_option("--preset", opt.preset, "paper-default | paper-adaptive | bpr");
  cmd->add_option("--set", opt.overrides, "override, e.g. train.lr=0.01 (repeatable)");
  cmd->add_option("--run-dir", opt.run_dir, "output directory (default: <runs-root>/<time>-<hash>)");
  cmd->add_option("--runs-root", opt.runs_root, "parent of generated run directories");
  cmd->add_option("--seed", opt.seed, "training seed");
  cmd->add_option("--workers", opt.workers, "gradient/eval worker threads");
  cmd->add_flag("--deterministic", opt.deterministic, "force a single worker");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* level = std::getenv("S2SR_LOG")) {
    if (!set2set::log::set_level(level)) std::cerr << "warning: ignoring S2SR_LOG=" << level << "\n";
  }

  CLI::App app{"set-to-set collaborative ranking toolkit"};
  app.require_subcommand(1);
  CommonOptions opt;

  std::string out_path;
  auto* prepare = app.add_subcommand("prepare", "parse, filter and split a ratings file");
  add_common(prepare, opt);
  prepare->add_option("--out", out_path, "dataset output path");

  std::string dataset;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train, opt);
  train->add_option("--dataset", dataset, "prepared dataset file");

  std::string checkpoint, split = "test";
  std::vector<std::size_t> cutoffs;
  auto* evaluate = app.add_subcommand("evaluate", "full-ranking HR/NDCG of a checkpoint");
  add_common(evaluate, opt);
  evaluate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  evaluate->add_option("--dataset", dataset, "prepared dataset file");
  evaluate->add_option("--cutoffs", cutoffs, "cutoffs N (default 10,20,30,40,50)")->delimiter(',');
  evaluate->add_option("--split", split, "val | test");

  bool no_item_to_set = false, no_set_to_set = false;
  std::size_t parallel = 1;
  auto* compare = app.add_subcommand("compare", "train and evaluate every cell of a grid");
  add_common(compare, opt);
  compare->add_option("--dataset", dataset, "prepared dataset file");
  compare->add_flag("--no-item-to-set", no_item_to_set, "drop the item-to-set term (lambda * set-to-set only)");
  compare->add_flag("--no-set-to-set", no_set_to_set, "drop the set-to-set term (lambda = 0)");
  compare->add_option("--parallel", parallel, "cells trained concurrently");

  std::vector<std::size_t> ks{5, 10, 20, 40};
  std::size_t probe_epochs = 3, synthetic_users = 2000;
  auto* probe = app.add_subcommand("probe-complexity", "per-epoch time as K grows");
  add_common(probe, opt);
  probe->add_option("--dataset", dataset, "prepared dataset file (default: synthetic)");
  probe->add_option("--k", ks, "K values")->delimiter(',');
  probe->add_option("--epochs", probe_epochs, "timed epochs per K");
  probe->add_option("--synthetic-users", synthetic_users, "users in the synthetic probe dataset");

  set2set::SyntheticConfig synth_cfg;
  std::string synth_out, synth_format = "tsv";
  auto* synth = app.add_subcommand("synth", "write a synthetic implicit-feedback ratings file");
  synth->add_option("--out", synth_out, "output ratings file")->required();
  synth->add_option("--users", synth_cfg.num_users, "number of users");
  synth->add_option("--items", synth_cfg.num_items, "number of items");
  synth->add_option("--mean", synth_cfg.mean_interactions, "mean interactions per user");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--format", synth_format, "tsv | csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : exit_usage;
  }

  try {
    if (*prepare) return cmd_prepare(opt, out_path);
    if (*train) return cmd_train(opt, dataset);
    if (*evaluate) return cmd_evaluate(opt, checkpoint, dataset, cutoffs, split);
    if (*compare) return cmd_compare(opt, dataset, no_item_to_set, no_set_to_set, parallel);
    if (*probe) return cmd_probe(opt, dataset, ks, probe_epochs, synthetic_users);
    if (*synth) return cmd_synth(synth_out, synth_cfg, synth_format);
  } catch (const set2set::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_usage;
  } catch (const set2set::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return exit_usage;
  } catch (const set2set::EmptyDatasetError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_usage;
  } catch (const set2set::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const set2set::FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_usage;
  } catch (const set2set::Error& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return exit_runtime;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return exit_runtime;
  }
  return exit_usage;
}
