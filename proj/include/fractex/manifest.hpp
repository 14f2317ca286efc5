#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fractex/error.hpp"
#include "fractex/sparse.hpp"

namespace fractex {

struct BlockCount {
  Index block_row = 0;
  Index block_col = 0;
  double keep_prob = 0.0;  // multiplier value in deterministic mode
  Index nnz = 0;
  friend bool operator==(const BlockCount&, const BlockCount&) = default;
};

struct ShardRecord {
  std::string file;
  Index nnz = 0;
  std::string fnv1a64;
  friend bool operator==(const ShardRecord&, const ShardRecord&) = default;
};

/// Run record for one expanded matrix. Nothing here depends on scheduling
/// (worker count, timing), so equal inputs give byte-equal manifests.
struct ExpansionManifest {
  std::string role = "expanded";  // "expanded", "train" or "test"
  Index reduced_rows = 0, reduced_cols = 0;
  Index base_rows = 0, base_cols = 0;
  Index expanded_rows = 0, expanded_cols = 0;
  Index base_nnz = 0;
  double expected_nnz = 0.0;
  Index total_nnz = 0;
  std::uint64_t seed = 0;
  nlohmann::ordered_json config;
  std::vector<BlockCount> blocks;
  std::vector<ShardRecord> shards;
  bool complete = false;
  std::string error;
};

inline nlohmann::ordered_json to_json(const ExpansionManifest& m) {
  nlohmann::ordered_json j;
  j["format"] = "fractex-expansion-manifest/1";
  j["role"] = m.role;
  j["reduced_dims"] = {m.reduced_rows, m.reduced_cols};
  j["base_dims"] = {m.base_rows, m.base_cols};
  j["expanded_dims"] = {m.expanded_rows, m.expanded_cols};
  j["base_nnz"] = m.base_nnz;
  j["expected_nnz"] = m.expected_nnz;
  j["total_nnz"] = m.total_nnz;
  j["seed"] = m.seed;
  j["config"] = m.config;
  auto& blocks = j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : m.blocks)
    blocks.push_back({{"row", b.block_row}, {"col", b.block_col}, {"keep_prob", b.keep_prob},
                      {"nnz", b.nnz}});
  auto& shards = j["shards"] = nlohmann::ordered_json::array();
  for (const auto& s : m.shards)
    shards.push_back({{"file", s.file}, {"nnz", s.nnz}, {"fnv1a64", s.fnv1a64}});
  j["complete"] = m.complete;
  if (!m.error.empty()) j["error"] = m.error;
  return j;
}

inline std::string dump_manifest(const ExpansionManifest& m) { return to_json(m).dump(2) + "\n"; }

inline ExpansionManifest manifest_from_json(const nlohmann::ordered_json& j) {
  try {
    ExpansionManifest m;
    m.role = j.at("role").get<std::string>();
    m.reduced_rows = j.at("reduced_dims").at(0).get<Index>();
    m.reduced_cols = j.at("reduced_dims").at(1).get<Index>();
    m.base_rows = j.at("base_dims").at(0).get<Index>();
    m.base_cols = j.at("base_dims").at(1).get<Index>();
    m.expanded_rows = j.at("expanded_dims").at(0).get<Index>();
    m.expanded_cols = j.at("expanded_dims").at(1).get<Index>();
    m.base_nnz = j.at("base_nnz").get<Index>();
    m.expected_nnz = j.at("expected_nnz").get<double>();
    m.total_nnz = j.at("total_nnz").get<Index>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.at("config");
    for (const auto& b : j.at("blocks"))
      m.blocks.push_back({b.at("row").get<Index>(), b.at("col").get<Index>(),
                          b.at("keep_prob").get<double>(), b.at("nnz").get<Index>()});
    for (const auto& s : j.at("shards"))
      m.shards.push_back({s.at("file").get<std::string>(), s.at("nnz").get<Index>(),
                          s.at("fnv1a64").get<std::string>()});
    m.complete = j.at("complete").get<bool>();
    if (j.contains("error")) m.error = j.at("error").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed manifest: ") + e.what());
  }
}

inline ExpansionManifest parse_manifest(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("manifest is not valid JSON: ") + e.what());
  }
  return manifest_from_json(j);
}

}  // namespace fractex
