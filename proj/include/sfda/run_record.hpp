#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfda/types.hpp"

namespace sfda {

using Json = nlohmann::ordered_json;

/// Seeded experiment manifest plus per-epoch metric rows. Everything except
/// `wall_clock_seconds` is a pure function of the config snapshot and seed.
struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  Json config = Json::object();
  std::vector<Json> rows;
  /// Paths of every artifact written for this run, relative to the out dir.
  std::vector<std::string> artifacts;
  double wall_clock_seconds = 0.0;

  void append(const RunRecord& other);
  Json manifest() const;
};

/// One JSON object per line, in row order.
std::string to_jsonl(const std::vector<Json>& rows);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Rounds to 4 decimal places for reporting.
double round4(double v);

}  // namespace sfda
