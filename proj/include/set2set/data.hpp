#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "error.hpp"
#include "log.hpp"

namespace set2set {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Parsed log plus the raw string keys behind each dense id.
struct RatingLog {
  std::vector<Interaction> interactions;
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;
};

enum class FileFormat { tsv, csv };

inline char separator(FileFormat format) { return format == FileFormat::tsv ? '\t' : ','; }

// Compressed per-user item lists: row u is items[offsets[u] .. offsets[u+1]).
struct ItemLists {
  std::vector<std::uint64_t> offsets{0};
  std::vector<ItemId> items;

  static ItemLists from_rows(const std::vector<std::vector<ItemId>>& rows) {
    ItemLists out;
    out.offsets.reserve(rows.size() + 1);
    for (const auto& row : rows) {
      out.items.insert(out.items.end(), row.begin(), row.end());
      out.offsets.push_back(out.items.size());
    }
    return out;
  }

  std::size_t num_rows() const { return offsets.size() - 1; }
  std::size_t total() const { return items.size(); }

  std::span<const ItemId> row(std::size_t u) const {
    return std::span<const ItemId>(items).subspan(offsets[u], offsets[u + 1] - offsets[u]);
  }

  std::span<const ItemId> operator[](std::size_t u) const { return row(u); }

  // Rows are kept sorted ascending.
  bool contains(std::size_t u, ItemId v) const {
    auto r = row(u);
    return std::binary_search(r.begin(), r.end(), v);
  }

  friend bool operator==(const ItemLists&, const ItemLists&) = default;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

enum class SplitMode { random, temporal };

struct InteractionDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  ItemLists train;
  ItemLists val;
  ItemLists test;
  std::vector<std::uint64_t> popularity;
  // Parallel to train.items; empty when the source log had no timestamps.
  std::vector<std::int64_t> train_time;

  bool is_split = false;
  SplitRatios ratios{1.0, 0.0, 0.0};
  std::uint64_t split_seed = 0;
  std::size_t dropped_in_split = 0;

  std::size_t num_interactions() const { return train.total() + val.total() + test.total(); }

  double density() const {
    if (num_users == 0 || num_items == 0) return 0.0;
    return static_cast<double>(num_interactions()) / (static_cast<double>(num_users) * num_items);
  }

  bool in_train(UserId u, ItemId v) const { return train.contains(u, v); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& ids,
                            std::vector<std::string>& keys, std::string_view key) {
  auto [it, inserted] = ids.try_emplace(std::string(key), static_cast<std::uint32_t>(keys.size()));
  if (inserted) keys.emplace_back(key);
  return it->second;
}

}  // namespace detail

struct ParseOptions {
  FileFormat format = FileFormat::tsv;
  double rating_threshold = 4.0;
  bool skip_header = false;
};

// Reads `user<sep>item<sep>rating[<sep>timestamp]` lines. Blank lines and
// lines starting with '#' are ignored. Rows below the threshold are dropped
// before ids are assigned, so dense ids cover retained rows only.
inline RatingLog parse_ratings(std::istream& in, const ParseOptions& opts) {
  RatingLog log;
  std::unordered_map<std::string, std::uint32_t> user_ids, item_ids;
  std::map<std::pair<UserId, ItemId>, std::size_t> seen;
  const char sep = separator(opts.format);

  std::string line;
  std::size_t line_no = 0;
  bool header_pending = opts.skip_header;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    auto fields = detail::split_fields(body, sep);
    if (fields.size() != 3 && fields.size() != 4) {
      throw ParseError(line_no, "expected 3 or 4 fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(line_no, "empty user or item id");
    double rating = 0.0;
    if (!detail::parse_number(fields[2], rating)) {
      throw ParseError(line_no, "bad rating '" + std::string(fields[2]) + "'");
    }
    std::optional<std::int64_t> ts;
    if (fields.size() == 4) {
      std::int64_t t = 0;
      if (!detail::parse_number(fields[3], t)) {
        throw ParseError(line_no, "bad timestamp '" + std::string(fields[3]) + "'");
      }
      ts = t;
    }
    if (rating < opts.rating_threshold) continue;

    UserId u = detail::intern(user_ids, log.user_keys, fields[0]);
    ItemId v = detail::intern(item_ids, log.item_keys, fields[1]);
    auto [it, fresh] = seen.try_emplace({u, v}, log.interactions.size());
    if (fresh) {
      log.interactions.push_back({u, v, ts});
    } else {
      auto& kept = log.interactions[it->second].timestamp;
      if (ts && (!kept || *ts < *kept)) kept = ts;
    }
  }
  if (log.interactions.empty()) throw EmptyDatasetError("no interactions retained from input");
  return log;
}

inline RatingLog parse_ratings_file(const std::string& path, const ParseOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ratings file: " + path);
  return parse_ratings(in, opts);
}

inline RatingLog parse_ratings_file(const std::string& path, FileFormat format, double rating_threshold) {
  return parse_ratings_file(path, ParseOptions{format, rating_threshold, false});
}

// Drops users with fewer than `min_interactions` interactions, re-densifies
// user and item ids (ascending old id), and places everything in train.
inline InteractionDataset build_dataset(std::span<const Interaction> interactions, std::size_t min_interactions) {
  if (interactions.empty()) throw EmptyDatasetError("no interactions");

  std::size_t max_user = 0, max_item = 0;
  for (const auto& x : interactions) {
    max_user = std::max<std::size_t>(max_user, x.user);
    max_item = std::max<std::size_t>(max_item, x.item);
  }
  std::vector<std::size_t> user_count(max_user + 1, 0);
  for (const auto& x : interactions) ++user_count[x.user];

  constexpr std::uint32_t absent = ~std::uint32_t{0};
  std::vector<std::uint32_t> user_map(max_user + 1, absent);
  std::vector<std::uint32_t> item_map(max_item + 1, absent);
  std::vector<char> item_used(max_item + 1, 0);
  std::uint32_t num_users = 0;
  for (std::size_t u = 0; u <= max_user; ++u) {
    if (user_count[u] > 0 && user_count[u] >= min_interactions) user_map[u] = num_users++;
  }
  if (num_users == 0) {
    throw EmptyDatasetError("all users have fewer than " + std::to_string(min_interactions) + " interactions");
  }
  for (const auto& x : interactions) {
    if (user_map[x.user] != absent) item_used[x.item] = 1;
  }
  std::uint32_t num_items = 0;
  for (std::size_t v = 0; v <= max_item; ++v) {
    if (item_used[v]) item_map[v] = num_items++;
  }

  bool all_timed = std::all_of(interactions.begin(), interactions.end(),
                               [](const Interaction& x) { return x.timestamp.has_value(); });
  std::vector<std::vector<std::pair<ItemId, std::int64_t>>> rows(num_users);
  for (const auto& x : interactions) {
    auto u = user_map[x.user];
    if (u == absent) continue;
    rows[u].emplace_back(item_map[x.item], x.timestamp.value_or(0));
  }

  InteractionDataset ds;
  ds.num_users = num_users;
  ds.num_items = num_items;
  ds.popularity.assign(num_items, 0);
  ds.val.offsets.assign(num_users + 1, 0);
  ds.test.offsets.assign(num_users + 1, 0);
  for (auto& row : rows) {
    std::sort(row.begin(), row.end());
    // duplicates can only come from callers that skipped parse_ratings
    row.erase(std::unique(row.begin(), row.end(),
                          [](const auto& a, const auto& b) { return a.first == b.first; }),
              row.end());
    for (auto [v, t] : row) {
      ds.train.items.push_back(v);
      if (all_timed) ds.train_time.push_back(t);
      ++ds.popularity[v];
    }
    ds.train.offsets.push_back(ds.train.items.size());
  }
  return ds;
}

inline void validate_ratios(const SplitRatios& r) {
  if (!(r.train >= 0.0) || !(r.val >= 0.0) || !(r.test >= 0.0)) {
    throw ConfigError("split ratios must be non-negative");
  }
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
}

// Per-user partition sizes: floor for val and test, remainder to train,
// then every part is forced to hold at least one item. Requires n >= 3.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  auto n_val = static_cast<std::size_t>(std::floor(r.val * static_cast<double>(n) + 1e-9));
  auto n_test = static_cast<std::size_t>(std::floor(r.test * static_cast<double>(n) + 1e-9));
  n_val = std::max<std::size_t>(n_val, 1);
  n_test = std::max<std::size_t>(n_test, 1);
  while (n_val + n_test > n - 1) {
    if (n_val >= n_test) --n_val;
    else --n_test;
  }
  return {n - n_val - n_test, n_val, n_test};
}

// Splits every user's train list into train/val/test. Users with fewer than
// three items are dropped (counted in dropped_in_split) and user ids are
// re-densified; item ids are left untouched.
inline InteractionDataset split_dataset(const InteractionDataset& ds, const SplitRatios& ratios, std::uint64_t seed,
                                        SplitMode mode = SplitMode::random) {
  validate_ratios(ratios);
  if (ds.is_split) throw ConfigError("dataset is already split");
  if (mode == SplitMode::temporal && ds.train_time.size() != ds.train.total()) {
    throw ConfigError("temporal split requires timestamps");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::vector<ItemId>> train_rows, val_rows, test_rows;
  std::size_t dropped = 0;
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    auto row = ds.train.row(u);
    const std::size_t n = row.size();
    if (n < 3) {
      ++dropped;
      continue;
    }
    std::vector<ItemId> order(row.begin(), row.end());
    if (mode == SplitMode::random) {
      std::shuffle(order.begin(), order.end(), rng);
    } else {
      std::vector<std::pair<std::int64_t, ItemId>> timed;
      timed.reserve(n);
      for (std::size_t k = 0; k < n; ++k) timed.emplace_back(ds.train_time[ds.train.offsets[u] + k], row[k]);
      std::stable_sort(timed.begin(), timed.end());
      for (std::size_t k = 0; k < n; ++k) order[k] = timed[k].second;
    }
    auto [n_train, n_val, n_test] = split_sizes(n, ratios);
    auto first = order.begin();
    std::vector<ItemId> tr(first, first + n_train);
    std::vector<ItemId> va(first + n_train, first + n_train + n_val);
    std::vector<ItemId> te(first + n_train + n_val, order.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    std::sort(te.begin(), te.end());
    train_rows.push_back(std::move(tr));
    val_rows.push_back(std::move(va));
    test_rows.push_back(std::move(te));
  }
  if (train_rows.empty()) throw EmptyDatasetError("no user has at least 3 interactions to split");
  if (dropped > 0) log::warn("split dropped ", dropped, " users with fewer than 3 interactions");

  InteractionDataset out;
  out.num_users = train_rows.size();
  out.num_items = ds.num_items;
  out.train = ItemLists::from_rows(train_rows);
  out.val = ItemLists::from_rows(val_rows);
  out.test = ItemLists::from_rows(test_rows);
  out.popularity.assign(out.num_items, 0);
  for (auto v : out.train.items) ++out.popularity[v];
  out.is_split = true;
  out.ratios = ratios;
  out.split_seed = seed;
  out.dropped_in_split = dropped;
  return out;
}

// Sampling weights proportional to train popularity + smoothing.
inline std::vector<double> popularity_distribution(const InteractionDataset& ds, double smoothing) {
  if (!(smoothing >= 0.0)) throw ConfigError("popularity smoothing must be >= 0");
  std::vector<double> w(ds.num_items);
  double total = 0.0;
  for (std::size_t v = 0; v < ds.num_items; ++v) {
    w[v] = static_cast<double>(ds.popularity[v]) + smoothing;
    total += w[v];
  }
  if (!(total > 0.0)) throw EmptyDatasetError("popularity weights are all zero");
  for (auto& x : w) x /= total;
  return w;
}

inline constexpr std::string_view dataset_magic = "S2SR-DS1";

namespace detail {

inline void put_lists(std::ostream& os, const ItemLists& lists) {
  for (auto off : lists.offsets) io::put_u64(os, off);
  for (auto v : lists.items) io::put_u32(os, v);
}

inline ItemLists get_lists(std::istream& is, std::size_t num_users, std::uint64_t count, std::size_t num_items,
                           const char* name) {
  ItemLists lists;
  lists.offsets.resize(num_users + 1);
  for (auto& off : lists.offsets) {
    if (!io::get_u64(is, off)) throw FormatError(std::string("truncated ") + name + " offsets");
  }
  if (lists.offsets.front() != 0 || lists.offsets.back() != count ||
      !std::is_sorted(lists.offsets.begin(), lists.offsets.end())) {
    throw FormatError(std::string("inconsistent ") + name + " offsets");
  }
  lists.items.resize(count);
  for (auto& v : lists.items) {
    if (!io::get_u32(is, v)) throw FormatError(std::string("truncated ") + name + " items");
    if (v >= num_items) throw FormatError(std::string(name) + " item id out of range");
  }
  return lists;
}

}  // namespace detail

// Binary layout (all little-endian): magic, u64 num_users, num_items,
// n_train, n_val, n_test, then offsets (u64) + ids (u32) for train, val and
// test, then u64 popularity per item. A JSON sidecar sits at path + ".json".
inline void save_dataset(const InteractionDataset& ds, const std::string& path, const std::string& config_hash = "") {
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write dataset: " + path);
    io::put_magic(os, dataset_magic);
    io::put_u64(os, ds.num_users);
    io::put_u64(os, ds.num_items);
    io::put_u64(os, ds.train.total());
    io::put_u64(os, ds.val.total());
    io::put_u64(os, ds.test.total());
    detail::put_lists(os, ds.train);
    detail::put_lists(os, ds.val);
    detail::put_lists(os, ds.test);
    for (auto p : ds.popularity) io::put_u64(os, p);
    if (!os) throw IoError("write failed: " + path);
  }
  nlohmann::ordered_json side;
  side["format"] = std::string(dataset_magic);
  side["num_users"] = ds.num_users;
  side["num_items"] = ds.num_items;
  side["num_train"] = ds.train.total();
  side["num_val"] = ds.val.total();
  side["num_test"] = ds.test.total();
  side["is_split"] = ds.is_split;
  side["split"] = {{"train", ds.ratios.train}, {"val", ds.ratios.val}, {"test", ds.ratios.test}};
  side["seed"] = ds.split_seed;
  side["dropped_in_split"] = ds.dropped_in_split;
  side["config_hash"] = config_hash;
  std::ofstream js(io::sidecar_path(path), std::ios::trunc);
  if (!js) throw IoError("cannot write sidecar: " + io::sidecar_path(path));
  js << side.dump(2) << '\n';
}

inline InteractionDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path);
  if (!io::check_magic(is, dataset_magic)) throw FormatError("bad dataset magic in " + path);
  std::uint64_t header[5];
  for (auto& h : header) {
    if (!io::get_u64(is, h)) throw FormatError("truncated dataset header");
  }
  InteractionDataset ds;
  ds.num_users = header[0];
  ds.num_items = header[1];
  ds.train = detail::get_lists(is, ds.num_users, header[2], ds.num_items, "train");
  ds.val = detail::get_lists(is, ds.num_users, header[3], ds.num_items, "val");
  ds.test = detail::get_lists(is, ds.num_users, header[4], ds.num_items, "test");
  ds.popularity.resize(ds.num_items);
  for (auto& p : ds.popularity) {
    if (!io::get_u64(is, p)) throw FormatError("truncated popularity");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path);
  std::vector<std::uint64_t> recount(ds.num_items, 0);
  for (auto v : ds.train.items) ++recount[v];
  if (recount != ds.popularity) throw FormatError("popularity does not match train interactions");

  ds.is_split = ds.val.total() > 0 || ds.test.total() > 0;
  std::ifstream js(io::sidecar_path(path));
  if (js) {
    try {
      auto side = nlohmann::json::parse(js);
      ds.is_split = side.value("is_split", ds.is_split);
      if (side.contains("split")) {
        ds.ratios = {side["split"].value("train", 1.0), side["split"].value("val", 0.0),
                     side["split"].value("test", 0.0)};
      }
      ds.split_seed = side.value("seed", std::uint64_t{0});
      ds.dropped_in_split = side.value("dropped_in_split", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad dataset sidecar: ") + e.what());
    }
  }
  return ds;
}

}  // namespace set2set
