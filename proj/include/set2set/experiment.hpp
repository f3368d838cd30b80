#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "trainer.hpp"

namespace set2set {

using json = nlohmann::json;

// Ablations over the combined objective.
enum class Variant { full, no_item_to_set, no_set_to_set };

struct DataBlock {
  std::string path;
  FileFormat format = FileFormat::tsv;
  double rating_threshold = 4.0;
  bool skip_header = false;
  std::size_t min_interactions = 10;
  SplitRatios split{0.8, 0.1, 0.1};
  SplitMode split_mode = SplitMode::random;
  std::uint64_t seed = 7;
  // Prepared dataset file; when set and present it is loaded instead of
  // re-parsing `path`.
  std::string dataset;
};

// Absent lists keep the base train value; a list that is present but empty
// makes the cross product empty.
struct GridBlock {
  std::optional<std::vector<std::size_t>> L;
  std::optional<std::vector<std::size_t>> K;
  std::optional<std::vector<Objective>> objective;
  std::optional<std::vector<double>> beta;
  std::optional<std::vector<double>> lambda;
  std::optional<std::vector<Variant>> variant;
  std::optional<std::vector<std::uint64_t>> seeds;
  bool present = false;

  bool any_list() const { return L || K || objective || beta || lambda || variant; }
};

struct ExperimentConfig {
  DataBlock data;
  TrainConfig train;
  std::vector<std::size_t> cutoffs = default_cutoffs();
  GridBlock grid;
};

// ---- enum names -----------------------------------------------------------

namespace detail {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const EnumName<E> (&table)[N], const char* what) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string options;
  for (const auto& e : table) options += (options.empty() ? "" : ", ") + std::string(e.name);
  throw ConfigError("unknown " + std::string(what) + " '" + s + "' (expected one of: " + options + ")");
}

template <typename E, std::size_t N>
const char* enum_name(E v, const EnumName<E> (&table)[N]) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

inline constexpr EnumName<Objective> objective_names[] = {
    {Objective::bpr, "bpr"}, {Objective::set2set, "set2set"}, {Objective::set2set_easy, "set2set_easy"}};
inline constexpr EnumName<NegativeMode> neg_mode_names[] = {{NegativeMode::uniform, "uniform"},
                                                            {NegativeMode::popularity, "popularity"}};
inline constexpr EnumName<OptimizerKind> optimizer_names[] = {{OptimizerKind::sgd, "sgd"},
                                                              {OptimizerKind::adam, "adam"}};
inline constexpr EnumName<FileFormat> format_names[] = {{FileFormat::tsv, "tsv"}, {FileFormat::csv, "csv"}};
inline constexpr EnumName<SplitMode> split_mode_names[] = {{SplitMode::random, "random"},
                                                           {SplitMode::temporal, "temporal"}};
inline constexpr EnumName<Variant> variant_names[] = {
    {Variant::full, "full"}, {Variant::no_item_to_set, "no-item-to-set"}, {Variant::no_set_to_set, "no-set-to-set"}};

}  // namespace detail

inline Objective parse_objective(const std::string& s) { return detail::parse_enum(s, detail::objective_names, "objective"); }
inline const char* to_string(Objective o) { return detail::enum_name(o, detail::objective_names); }
inline Variant parse_variant(const std::string& s) { return detail::parse_enum(s, detail::variant_names, "variant"); }
inline const char* to_string(Variant v) { return detail::enum_name(v, detail::variant_names); }
inline Split parse_split(const std::string& s) {
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected one of: val, test)");
}

// ---- json <-> config -------------------------------------------------------

namespace detail {

inline void check_keys(const json& block, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!block.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : block.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& block, const char* key, T& out, const std::string& where) {
  if (!block.contains(key)) return;
  try {
    out = block.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <typename E, std::size_t N>
void read_enum(const json& block, const char* key, E& out, const EnumName<E> (&table)[N], const std::string& where) {
  if (!block.contains(key)) return;
  if (!block.at(key).is_string()) throw ConfigError(where + "." + key + " must be a string");
  out = parse_enum(block.at(key).get<std::string>(), table, key);
}

template <typename T>
void read_list(const json& block, const char* key, std::optional<std::vector<T>>& out, const std::string& where) {
  if (!block.contains(key)) return;
  if (!block.at(key).is_array()) throw ConfigError(where + "." + key + " must be a list");
  std::vector<T> v;
  read(block, key, v, where);
  out = std::move(v);
}

template <typename E, std::size_t N>
void read_enum_list(const json& block, const char* key, std::optional<std::vector<E>>& out,
                    const EnumName<E> (&table)[N], const std::string& where) {
  if (!block.contains(key)) return;
  if (!block.at(key).is_array()) throw ConfigError(where + "." + key + " must be a list");
  out.emplace();
  for (const auto& x : block.at(key)) {
    if (!x.is_string()) throw ConfigError(where + "." + key + " entries must be strings");
    out->push_back(parse_enum(x.get<std::string>(), table, key));
  }
}

}  // namespace detail

// Builds a config from a JSON document, filling defaults for absent keys and
// rejecting unknown keys.
inline ExperimentConfig config_from_json(const json& doc) {
  using namespace detail;
  ExperimentConfig cfg;
  check_keys(doc, {"data", "model", "train", "eval", "grid"}, "config");

  if (doc.contains("data")) {
    const auto& d = doc["data"];
    check_keys(d, {"path", "format", "rating_threshold", "skip_header", "min_interactions", "split", "split_mode",
                   "seed", "dataset"},
               "data");
    read(d, "path", cfg.data.path, "data");
    read_enum(d, "format", cfg.data.format, format_names, "data");
    read(d, "rating_threshold", cfg.data.rating_threshold, "data");
    read(d, "skip_header", cfg.data.skip_header, "data");
    read(d, "min_interactions", cfg.data.min_interactions, "data");
    read_enum(d, "split_mode", cfg.data.split_mode, split_mode_names, "data");
    read(d, "seed", cfg.data.seed, "data");
    read(d, "dataset", cfg.data.dataset, "data");
    if (d.contains("split")) {
      const auto& s = d["split"];
      if (s.is_array()) {
        if (s.size() != 3) throw ConfigError("data.split must have three entries");
        cfg.data.split = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
      } else {
        check_keys(s, {"train", "val", "test"}, "data.split");
        read(s, "train", cfg.data.split.train, "data.split");
        read(s, "val", cfg.data.split.val, "data.split");
        read(s, "test", cfg.data.split.test, "data.split");
      }
    }
  }

  auto& t = cfg.train;
  if (doc.contains("model")) {
    const auto& m = doc["model"];
    check_keys(m, {"dim", "init_scale"}, "model");
    read(m, "dim", t.dim, "model");
    read(m, "init_scale", t.init_scale, "model");
  }

  if (doc.contains("train")) {
    const auto& b = doc["train"];
    check_keys(b, {"epochs", "lr", "optimizer", "adam", "l2_reg", "eval_every", "patience", "seed", "batch_size",
                   "workers", "objective", "lambda", "beta", "f_floor", "include_self_pairs",
                   "normalize_by_survivors", "item_to_set", "L", "K", "neg_mode", "mask_enabled", "mask_keep_prob",
                   "popularity_smoothing"},
               "train");
    read(b, "epochs", t.epochs, "train");
    read(b, "lr", t.optimizer.lr, "train");
    read_enum(b, "optimizer", t.optimizer.kind, optimizer_names, "train");
    if (b.contains("adam")) {
      const auto& a = b["adam"];
      check_keys(a, {"beta1", "beta2", "eps"}, "train.adam");
      read(a, "beta1", t.optimizer.beta1, "train.adam");
      read(a, "beta2", t.optimizer.beta2, "train.adam");
      read(a, "eps", t.optimizer.eps, "train.adam");
    }
    read(b, "l2_reg", t.optimizer.l2_reg, "train");
    read(b, "eval_every", t.eval_every, "train");
    read(b, "patience", t.patience, "train");
    read(b, "seed", t.seed, "train");
    read(b, "batch_size", t.batch_size, "train");
    read(b, "workers", t.workers, "train");
    read_enum(b, "objective", t.loss.objective, objective_names, "train");
    read(b, "lambda", t.loss.lambda, "train");
    read(b, "beta", t.loss.beta, "train");
    read(b, "f_floor", t.loss.f_floor, "train");
    read(b, "include_self_pairs", t.loss.include_self_pairs, "train");
    read(b, "normalize_by_survivors", t.loss.normalize_by_survivors, "train");
    read(b, "item_to_set", t.loss.item_to_set, "train");
    read(b, "L", t.sampler.L, "train");
    read(b, "K", t.sampler.K, "train");
    read_enum(b, "neg_mode", t.sampler.neg_mode, neg_mode_names, "train");
    read(b, "mask_enabled", t.sampler.mask_enabled, "train");
    read(b, "mask_keep_prob", t.sampler.mask_keep_prob, "train");
    read(b, "popularity_smoothing", t.sampler.popularity_smoothing, "train");
  }
  t.loss.mask_enabled = t.sampler.mask_enabled;
  t.sampler.seed = t.seed;

  if (doc.contains("eval")) {
    const auto& e = doc["eval"];
    check_keys(e, {"cutoffs"}, "eval");
    read(e, "cutoffs", cfg.cutoffs, "eval");
  }

  if (doc.contains("grid")) {
    const auto& g = doc["grid"];
    check_keys(g, {"L", "K", "objective", "beta", "lambda", "variant", "seeds"}, "grid");
    cfg.grid.present = true;
    read_list(g, "L", cfg.grid.L, "grid");
    read_list(g, "K", cfg.grid.K, "grid");
    read_enum_list(g, "objective", cfg.grid.objective, objective_names, "grid");
    read_list(g, "beta", cfg.grid.beta, "grid");
    read_list(g, "lambda", cfg.grid.lambda, "grid");
    read_enum_list(g, "variant", cfg.grid.variant, variant_names, "grid");
    read_list(g, "seeds", cfg.grid.seeds, "grid");
  }
  return cfg;
}

inline json data_to_json(const DataBlock& d) {
  using namespace detail;
  return json{{"path", d.path},
              {"format", enum_name(d.format, format_names)},
              {"rating_threshold", d.rating_threshold},
              {"skip_header", d.skip_header},
              {"min_interactions", d.min_interactions},
              {"split", {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}},
              {"split_mode", enum_name(d.split_mode, split_mode_names)},
              {"seed", d.seed},
              {"dataset", d.dataset}};
}

inline json train_to_json(const TrainConfig& t) {
  using namespace detail;
  return json{{"epochs", t.epochs},
              {"lr", t.optimizer.lr},
              {"optimizer", enum_name(t.optimizer.kind, optimizer_names)},
              {"adam", {{"beta1", t.optimizer.beta1}, {"beta2", t.optimizer.beta2}, {"eps", t.optimizer.eps}}},
              {"l2_reg", t.optimizer.l2_reg},
              {"eval_every", t.eval_every},
              {"patience", t.patience},
              {"seed", t.seed},
              {"batch_size", t.batch_size},
              {"workers", t.workers},
              {"objective", to_string(t.loss.objective)},
              {"lambda", t.loss.lambda},
              {"beta", t.loss.beta},
              {"f_floor", t.loss.f_floor},
              {"include_self_pairs", t.loss.include_self_pairs},
              {"normalize_by_survivors", t.loss.normalize_by_survivors},
              {"item_to_set", t.loss.item_to_set},
              {"L", t.sampler.L},
              {"K", t.sampler.K},
              {"neg_mode", enum_name(t.sampler.neg_mode, neg_mode_names)},
              {"mask_enabled", t.sampler.mask_enabled},
              {"mask_keep_prob", t.sampler.mask_keep_prob},
              {"popularity_smoothing", t.sampler.popularity_smoothing}};
}

// Canonical form with every default spelled out; keys are sorted, so the
// dump is stable.
inline json config_to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["data"] = data_to_json(cfg.data);
  doc["model"] = {{"dim", cfg.train.dim}, {"init_scale", cfg.train.init_scale}};
  auto t = train_to_json(cfg.train);
  t.erase("workers");  // does not change results
  doc["train"] = t;
  doc["eval"] = {{"cutoffs", cfg.cutoffs}};
  if (cfg.grid.present) {
    const auto& gb = cfg.grid;
    json g = json::object();
    if (gb.L) g["L"] = *gb.L;
    if (gb.K) g["K"] = *gb.K;
    if (gb.beta) g["beta"] = *gb.beta;
    if (gb.lambda) g["lambda"] = *gb.lambda;
    if (gb.seeds) g["seeds"] = *gb.seeds;
    if (gb.objective) {
      g["objective"] = json::array();
      for (auto o : *gb.objective) g["objective"].push_back(to_string(o));
    }
    if (gb.variant) {
      g["variant"] = json::array();
      for (auto v : *gb.variant) g["variant"].push_back(to_string(v));
    }
    doc["grid"] = g;
  }
  return doc;
}

inline std::string config_hash(const ExperimentConfig& cfg) { return io::hex64(io::fnv1a(config_to_json(cfg).dump())); }

// The dataset file path itself is excluded so moving a prepared file keeps
// its hash.
inline std::string data_hash(const DataBlock& d) {
  auto j = data_to_json(d);
  j.erase("dataset");
  return io::hex64(io::fnv1a(j.dump()));
}

inline void validate(const ExperimentConfig& cfg) {
  validate_ratios(cfg.data.split);
  validate_cutoffs(cfg.cutoffs);
  cfg.train.validate();
}

// ---- presets and overrides -------------------------------------------------

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"paper-default", "paper-adaptive", "bpr"};
  return names;
}

inline json preset(const std::string& name) {
  if (name == "paper-default") {
    return {{"train",
             {{"objective", "set2set"}, {"L", 2}, {"K", 5}, {"beta", 0.5}, {"lambda", 1.0}, {"mask_enabled", false}}}};
  }
  if (name == "paper-adaptive") {
    return {{"train",
             {{"objective", "set2set"},
              {"L", 5},
              {"K", 5},
              {"beta", 0.2},
              {"lambda", 1.0},
              {"mask_enabled", true},
              {"mask_keep_prob", 0.5}}}};
  }
  if (name == "bpr") {
    return {{"train", {{"objective", "bpr"}, {"L", 1}, {"K", 5}, {"mask_enabled", false}}}};
  }
  std::string options;
  for (const auto& n : preset_names()) options += (options.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (expected one of: " + options + ")");
}

// "train.lr=0.01": the value is parsed as JSON when possible, else taken as
// a string.
inline void apply_override(json& doc, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like block.key=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

// ---- pipeline ----------------------------------------------------------------

inline InteractionDataset prepare_dataset(const DataBlock& d) {
  if (d.path.empty()) throw ConfigError("data.path is not set");
  auto log = parse_ratings_file(d.path, ParseOptions{d.format, d.rating_threshold, d.skip_header});
  auto full = build_dataset(log.interactions, d.min_interactions);
  return split_dataset(full, d.split, d.seed, d.split_mode);
}

inline InteractionDataset load_or_prepare(const DataBlock& d) {
  if (!d.dataset.empty() && std::filesystem::exists(d.dataset)) return load_dataset(d.dataset);
  return prepare_dataset(d);
}

struct Cell {
  std::string label;
  Variant variant = Variant::full;
  TrainConfig train;
};

inline std::string cell_label(const TrainConfig& t, Variant v) {
  std::ostringstream os;
  os << to_string(t.loss.objective) << "(L=" << t.sampler.L << ",K=" << t.sampler.K;
  if (t.loss.objective != Objective::bpr) {
    os << ",beta=" << format_metric(t.loss.beta) << ",lambda=" << format_metric(t.loss.lambda);
    if (t.sampler.mask_enabled) os << ",mask";
  }
  os << ")";
  if (v != Variant::full) os << " " << to_string(v);
  return os.str();
}

inline TrainConfig apply_variant(TrainConfig t, Variant v) {
  if (v == Variant::no_item_to_set) t.loss.item_to_set = false;
  if (v == Variant::no_set_to_set) t.loss.lambda = 0.0;
  return t;
}

// Cross product of the grid lists over the base train block. `forced`
// replaces the variant list (CLI ablation flags). A grid block without any
// list and without `forced` is empty.
inline std::vector<Cell> expand_grid(const ExperimentConfig& cfg, std::optional<Variant> forced = {}) {
  const auto& g = cfg.grid;
  const auto& base = cfg.train;
  if (!g.any_list() && !forced) return {};
  auto or_base = [](const auto& list, auto value) {
    using T = std::decay_t<decltype(value)>;
    return list ? *list : std::vector<T>{value};
  };
  auto objectives = or_base(g.objective, base.loss.objective);
  auto Ls = or_base(g.L, base.sampler.L);
  auto Ks = or_base(g.K, base.sampler.K);
  auto betas = or_base(g.beta, base.loss.beta);
  auto lambdas = or_base(g.lambda, base.loss.lambda);
  auto variants = forced ? std::vector<Variant>{*forced} : or_base(g.variant, Variant::full);

  std::vector<Cell> cells;
  for (auto obj : objectives)
    for (auto L : Ls)
      for (auto K : Ks)
        for (auto beta : betas)
          for (auto lambda : lambdas)
            for (auto v : variants) {
              TrainConfig t = base;
              t.loss.objective = obj;
              t.sampler.L = obj == Objective::bpr ? 1 : L;
              t.sampler.K = K;
              t.loss.beta = beta;
              t.loss.lambda = lambda;
              if (obj == Objective::bpr) {
                t.sampler.mask_enabled = false;
                t.loss.mask_enabled = false;
              }
              const Variant applied = obj == Objective::bpr ? Variant::full : v;
              Cell c{cell_label(t, applied), applied, apply_variant(t, applied)};
              bool dup = std::any_of(cells.begin(), cells.end(), [&](const Cell& x) { return x.label == c.label; });
              if (!dup) cells.push_back(std::move(c));
            }
  return cells;
}

inline std::size_t grid_size(const ExperimentConfig& cfg, std::optional<Variant> forced = {}) {
  return expand_grid(cfg, forced).size();
}

// Per-metric median across seeds (mean of the middle two for even counts).
inline EvalReport median_report(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw EvalError("median of no reports");
  EvalReport out = reports.front();
  out.seed.reset();
  out.epoch.reset();
  auto median = [](std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  };
  for (std::size_t c = 0; c < out.cutoffs.size(); ++c) {
    std::vector<double> hr, nd;
    for (const auto& r : reports) {
      hr.push_back(r.hr.at(c));
      nd.push_back(r.ndcg.at(c));
    }
    out.hr[c] = median(hr);
    out.ndcg[c] = median(nd);
  }
  return out;
}

struct SeedRun {
  std::uint64_t seed = 0;
  EvalReport test;
  TrainReport train;
};

struct CellResult {
  Cell cell;
  std::vector<SeedRun> runs;
  EvalReport median;
};

inline CellResult run_cell(const InteractionDataset& ds, const Cell& cell, const std::vector<std::uint64_t>& seeds,
                           const std::vector<std::size_t>& cutoffs, const std::string& hash = "") {
  CellResult result{cell, {}, {}};
  std::vector<EvalReport> reports;
  for (auto seed : seeds) {
    TrainConfig t = cell.train;
    t.seed = seed;
    t.sampler.seed = seed;
    auto trained = train(ds, t);
    auto rep = evaluate(trained.model, ds, Split::test, cutoffs, t.workers);
    rep.config_hash = hash;
    rep.seed = seed;
    rep.epoch = trained.report.best_epoch;
    reports.push_back(rep);
    result.runs.push_back({seed, rep, trained.report});
  }
  result.median = median_report(reports);
  result.median.config_hash = hash;
  return result;
}

// Runs every cell (cells in `parallel` threads when > 1) and returns them
// sorted by median NDCG at `rank_cutoff`, best first; ties keep grid order.
inline std::vector<CellResult> run_grid(const InteractionDataset& ds, const std::vector<Cell>& cells,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::vector<std::size_t>& cutoffs, std::size_t parallel = 1,
                                        const std::string& hash = "") {
  if (cells.empty()) throw ConfigError("grid is empty");
  std::vector<CellResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  auto work = [&](std::size_t k) {
    try {
      results[k] = run_cell(ds, cells[k], seeds, cutoffs, hash);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (parallel <= 1) {
    for (std::size_t k = 0; k < cells.size(); ++k) work(k);
  } else {
    std::size_t next = 0;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(parallel, cells.size()); ++w) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t k;
          {
            std::lock_guard lock(mu);
            if (next >= cells.size()) return;
            k = next++;
          }
          work(k);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const std::size_t rank_n =
      std::find(cutoffs.begin(), cutoffs.end(), 10) != cutoffs.end() ? std::size_t{10} : cutoffs.front();
  std::stable_sort(results.begin(), results.end(), [&](const CellResult& a, const CellResult& b) {
    return a.median.ndcg_at(rank_n) > b.median.ndcg_at(rank_n);
  });
  return results;
}

}  // namespace set2set
