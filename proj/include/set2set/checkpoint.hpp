#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "error.hpp"
#include "log.hpp"
#include "model.hpp"

namespace set2set {

inline constexpr std::string_view checkpoint_magic = "S2SR-CK1";

struct CheckpointMeta {
  std::string config_hash;
  // Hash of the data block the model was trained on.
  std::string dataset_hash;
  std::size_t epoch = 0;
};

struct Checkpoint {
  EmbeddingModel model;
  CheckpointMeta meta;
  // Set when an expected hash was given and the sidecar disagrees.
  bool hash_mismatch = false;
};

// Layout: magic, u64 num_users, num_items, dim, then user and item matrices
// as little-endian IEEE-754 doubles, row-major. Sidecar at path + ".json".
inline void save_checkpoint(const EmbeddingModel& model, const std::string& path, const CheckpointMeta& meta = {}) {
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint: " + path);
    io::put_magic(os, checkpoint_magic);
    io::put_u64(os, model.num_users());
    io::put_u64(os, model.num_items());
    io::put_u64(os, model.dim);
    for (double x : model.user_emb.data()) io::put_f64(os, x);
    for (double x : model.item_emb.data()) io::put_f64(os, x);
    if (!os) throw CheckpointError("write failed: " + path);
  }
  nlohmann::ordered_json side;
  side["format"] = std::string(checkpoint_magic);
  side["num_users"] = model.num_users();
  side["num_items"] = model.num_items();
  side["dim"] = model.dim;
  side["config_hash"] = meta.config_hash;
  side["dataset_hash"] = meta.dataset_hash;
  side["epoch"] = meta.epoch;
  std::ofstream js(io::sidecar_path(path), std::ios::trunc);
  if (!js) throw CheckpointError("cannot write sidecar: " + io::sidecar_path(path));
  js << side.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path, const std::optional<std::string>& expected_hash = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  if (!io::check_magic(is, checkpoint_magic)) throw CheckpointError("bad checkpoint magic in " + path);
  std::uint64_t users = 0, items = 0, dim = 0;
  if (!io::get_u64(is, users) || !io::get_u64(is, items) || !io::get_u64(is, dim)) {
    throw CheckpointError("truncated checkpoint header");
  }
  if (users == 0 || items == 0 || dim == 0 || users > (1ull << 32) || items > (1ull << 32) || dim > (1ull << 20)) {
    throw CheckpointError("implausible checkpoint dimensions");
  }
  Checkpoint ck;
  ck.model = EmbeddingModel{dim, Matrix(users, dim), Matrix(items, dim)};
  for (double& x : ck.model.user_emb.data()) {
    if (!io::get_f64(is, x)) throw CheckpointError("truncated checkpoint data");
  }
  for (double& x : ck.model.item_emb.data()) {
    if (!io::get_f64(is, x)) throw CheckpointError("truncated checkpoint data");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in " + path);

  std::ifstream js(io::sidecar_path(path));
  if (js) {
    try {
      auto side = nlohmann::json::parse(js);
      ck.meta.config_hash = side.value("config_hash", std::string());
      ck.meta.dataset_hash = side.value("dataset_hash", std::string());
      ck.meta.epoch = side.value("epoch", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("bad checkpoint sidecar: ") + e.what());
    }
  }
  if (expected_hash && *expected_hash != ck.meta.config_hash) {
    ck.hash_mismatch = true;
    log::warn("checkpoint ", path, " was written under config hash ", ck.meta.config_hash, ", loading under ",
              *expected_hash);
  }
  return ck;
}

}  // namespace set2set
