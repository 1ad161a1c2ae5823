#include "sfda/run_record.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace sfda {

void RunRecord::append(const RunRecord& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  artifacts.insert(artifacts.end(), other.artifacts.begin(), other.artifacts.end());
}

Json RunRecord::manifest() const {
  Json m;
  m["run_id"] = run_id;
  m["seed"] = seed;
  m["config"] = config;
  m["artifacts"] = artifacts;
  m["metric_rows"] = rows.size();
  m["wall_clock_seconds"] = wall_clock_seconds;
  return m;
}

std::string to_jsonl(const std::vector<Json>& rows) {
  std::string out;
  for (const Json& r : rows) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  write_text(path, to_jsonl(rows));
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(Json::parse(line));
  }
  return rows;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

}  // namespace sfda
