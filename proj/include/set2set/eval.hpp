#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "error.hpp"
#include "model.hpp"

namespace set2set {

enum class Split { val, test };

inline const char* to_string(Split s) { return s == Split::val ? "val" : "test"; }

inline const std::vector<std::size_t>& default_cutoffs() {
  static const std::vector<std::size_t> cutoffs{10, 20, 30, 40, 50};
  return cutoffs;
}

struct EvalReport {
  std::vector<std::size_t> cutoffs;
  std::vector<double> hr;
  std::vector<double> ndcg;
  std::size_t num_evaluated_users = 0;
  Split split = Split::test;
  // Provenance, filled in by callers that know it.
  std::string config_hash;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epoch;

  double hr_at(std::size_t n) const { return hr.at(index_of(n)); }
  double ndcg_at(std::size_t n) const { return ndcg.at(index_of(n)); }

private:
  std::size_t index_of(std::size_t n) const {
    auto it = std::find(cutoffs.begin(), cutoffs.end(), n);
    if (it == cutoffs.end()) throw EvalError("cutoff " + std::to_string(n) + " not in report");
    return static_cast<std::size_t>(it - cutoffs.begin());
  }
};

namespace detail {

// Descending score, ascending id on ties.
struct ScoreOrder {
  const std::vector<double>* scores;
  bool operator()(ItemId a, ItemId b) const {
    const double sa = (*scores)[a], sb = (*scores)[b];
    if (sa != sb) return sa > sb;
    return a < b;
  }
};

inline std::vector<ItemId> candidates_of(const InteractionDataset& ds, UserId u) {
  auto seen = ds.train.row(u);
  std::vector<ItemId> out;
  out.reserve(ds.num_items - seen.size());
  std::size_t k = 0;
  for (ItemId v = 0; v < ds.num_items; ++v) {
    if (k < seen.size() && seen[k] == v) {
      ++k;
      continue;
    }
    out.push_back(v);
  }
  return out;
}

// Top `n` candidates in rank order.
inline std::vector<ItemId> top_candidates(const EmbeddingModel& model, const InteractionDataset& ds, UserId u,
                                          std::size_t n, std::vector<double>& scores) {
  scores.resize(ds.num_items);
  score_all_items(model, u, scores);
  auto cand = candidates_of(ds, u);
  n = std::min(n, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + n, cand.end(), ScoreOrder{&scores});
  cand.resize(n);
  return cand;
}

}  // namespace detail

// Every item outside train(u), best first. Val and test items both stay in
// the pool.
inline std::vector<ItemId> rank_candidates(const EmbeddingModel& model, const InteractionDataset& ds, UserId u) {
  if (u >= ds.num_users) throw IndexError("user id " + std::to_string(u) + " out of range");
  if (model.num_items() != ds.num_items) throw ShapeError("model and dataset item counts differ");
  std::vector<double> scores;
  return detail::top_candidates(model, ds, u, ds.num_items, scores);
}

// Truncated recall: |top-N ∩ targets| / min(N, |targets|). `targets` sorted.
inline double hr_at_n(std::span<const ItemId> ranked, std::span<const ItemId> targets, std::size_t n) {
  if (targets.empty()) throw EvalError("hr_at_n needs a non-empty target set");
  if (n == 0) throw ConfigError("cutoff must be >= 1");
  std::size_t hits = 0;
  const std::size_t upto = std::min(n, ranked.size());
  for (std::size_t p = 0; p < upto; ++p)
    if (std::binary_search(targets.begin(), targets.end(), ranked[p])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(std::min(n, targets.size()));
}

inline double ndcg_at_n(std::span<const ItemId> ranked, std::span<const ItemId> targets, std::size_t n) {
  if (targets.empty()) throw EvalError("ndcg_at_n needs a non-empty target set");
  if (n == 0) throw ConfigError("cutoff must be >= 1");
  double dcg = 0.0;
  const std::size_t upto = std::min(n, ranked.size());
  for (std::size_t p = 0; p < upto; ++p)
    if (std::binary_search(targets.begin(), targets.end(), ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(n, targets.size());
  for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return dcg / idcg;
}

inline void validate_cutoffs(std::span<const std::size_t> cutoffs) {
  if (cutoffs.empty()) throw ConfigError("at least one cutoff is required");
  for (auto n : cutoffs)
    if (n == 0) throw ConfigError("cutoffs must be >= 1");
}

// Averages over users whose target split is non-empty. Per-user metrics are
// computed (optionally on several threads) then summed in user order.
inline EvalReport evaluate(const EmbeddingModel& model, const InteractionDataset& ds, Split split,
                           std::span<const std::size_t> cutoffs, std::size_t workers = 1) {
  validate_cutoffs(cutoffs);
  if (model.num_items() != ds.num_items || model.num_users() != ds.num_users) {
    throw ShapeError("model and dataset dimensions differ");
  }
  const ItemLists& targets = split == Split::val ? ds.val : ds.test;
  const std::size_t max_n = *std::max_element(cutoffs.begin(), cutoffs.end());
  const std::size_t nc = cutoffs.size();

  std::vector<double> per_user(ds.num_users * 2 * nc, 0.0);
  std::vector<char> counted(ds.num_users, 0);
  auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores;
    for (std::size_t u = begin; u < end; ++u) {
      auto t = targets.row(u);
      if (t.empty()) continue;
      counted[u] = 1;
      auto top = detail::top_candidates(model, ds, static_cast<UserId>(u), max_n, scores);
      for (std::size_t c = 0; c < nc; ++c) {
        per_user[(u * 2) * nc + c] = hr_at_n(top, t, cutoffs[c]);
        per_user[(u * 2 + 1) * nc + c] = ndcg_at_n(top, t, cutoffs[c]);
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, ds.num_users));
  if (workers == 1) {
    run(0, ds.num_users);
  } else {
    std::vector<std::thread> pool;
    const std::size_t step = (ds.num_users + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * step, e = std::min(ds.num_users, b + step);
      if (b < e) pool.emplace_back(run, b, e);
    }
    for (auto& t : pool) t.join();
  }

  EvalReport report;
  report.split = split;
  report.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  report.hr.assign(nc, 0.0);
  report.ndcg.assign(nc, 0.0);
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    if (!counted[u]) continue;
    ++report.num_evaluated_users;
    for (std::size_t c = 0; c < nc; ++c) {
      report.hr[c] += per_user[(u * 2) * nc + c];
      report.ndcg[c] += per_user[(u * 2 + 1) * nc + c];
    }
  }
  if (report.num_evaluated_users == 0) throw EvalError(std::string("no users with ") + to_string(split) + " items");
  for (std::size_t c = 0; c < nc; ++c) {
    report.hr[c] /= static_cast<double>(report.num_evaluated_users);
    report.ndcg[c] /= static_cast<double>(report.num_evaluated_users);
  }
  return report;
}

inline EvalReport evaluate(const EmbeddingModel& model, const InteractionDataset& ds, Split split,
                           std::initializer_list<std::size_t> cutoffs, std::size_t workers = 1) {
  std::vector<std::size_t> c(cutoffs);
  return evaluate(model, ds, split, std::span<const std::size_t>(c), workers);
}

// Both renderings print numbers through the same formatter so they agree
// digit for digit.
inline std::string format_metric(double x) { return nlohmann::json(x).dump(); }

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["split"] = to_string(r.split);
  j["num_evaluated_users"] = r.num_evaluated_users;
  j["cutoffs"] = r.cutoffs;
  j["hr"] = r.hr;
  j["ndcg"] = r.ndcg;
  j["config_hash"] = r.config_hash;
  if (r.seed) j["seed"] = *r.seed;
  if (r.epoch) j["epoch"] = *r.epoch;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.split = j.at("split").get<std::string>() == "val" ? Split::val : Split::test;
  r.num_evaluated_users = j.at("num_evaluated_users").get<std::size_t>();
  r.cutoffs = j.at("cutoffs").get<std::vector<std::size_t>>();
  r.hr = j.at("hr").get<std::vector<double>>();
  r.ndcg = j.at("ndcg").get<std::vector<double>>();
  r.config_hash = j.value("config_hash", std::string());
  if (j.contains("seed")) r.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("epoch")) r.epoch = j["epoch"].get<std::size_t>();
  return r;
}

// One row per labelled report, columns N=.. with HR and NDCG sub-columns.
// All reports must share the same cutoffs.
inline std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  if (rows.empty()) return {};
  const auto& cutoffs = rows.front().second.cutoffs;
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head1{""}, head2{"model"};
  for (auto n : cutoffs) {
    head1.push_back("N=" + std::to_string(n));
    head1.push_back("");
    head2.push_back("HR");
    head2.push_back("NDCG");
  }
  cells.push_back(head1);
  cells.push_back(head2);
  for (const auto& [label, r] : rows) {
    if (r.cutoffs != cutoffs) throw EvalError("reports in one table must share cutoffs");
    std::vector<std::string> line{label};
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      line.push_back(format_metric(r.hr[c]));
      line.push_back(format_metric(r.ndcg[c]));
    }
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& line : cells)
    for (std::size_t k = 0; k < line.size(); ++k) width[k] = std::max(width[k], line[k].size());
  std::ostringstream os;
  for (const auto& line : cells) {
    std::string text;
    for (std::size_t k = 0; k < line.size(); ++k) {
      if (k > 0) text += (k % 2 == 1) ? " | " : "  ";
      text += line[k] + std::string(width[k] - line[k].size(), ' ');
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    os << text << '\n';
  }
  return os.str();
}

inline std::string format_table(const std::string& label, const EvalReport& r) {
  std::ostringstream os;
  os << "split: " << to_string(r.split) << "  users: " << r.num_evaluated_users << '\n';
  os << format_table({{label, r}});
  return os.str();
}

}  // namespace set2set
