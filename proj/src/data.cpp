#include "sfda/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sfda/rng.hpp"

namespace sfda {

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.domain = domain;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  out.is_private.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Index>(r)) = features.row(static_cast<Index>(rows[r]));
    out.labels.push_back(labels[rows[r]]);
    out.is_private.push_back(is_private.empty() ? 0 : is_private[rows[r]]);
  }
  return out;
}

std::vector<std::string> DomainSpec::validate() const {
  std::vector<std::string> errors;
  if (n_shared < 0 || n_source_private < 0 || n_target_private < 0) {
    errors.emplace_back("class counts must be >= 0");
  }
  if (n_shared + n_source_private < 1) errors.emplace_back("source needs at least one class");
  if (n_target_private > 0 && n_shared < 1) {
    errors.emplace_back("universal setting needs n_shared >= 1");
  }
  if (samples_per_class < 1) errors.emplace_back("samples_per_class must be >= 1");
  if (input_dim < 2) errors.emplace_back("input_dim must be >= 2");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) errors.emplace_back("noise_sigma must be finite and >= 0");
  if (!std::isfinite(shift) || shift < 0.0) errors.emplace_back("shift must be finite and >= 0");
  if (!std::isfinite(rotation)) errors.emplace_back("rotation must be finite");
  return errors;
}

namespace {

constexpr Scalar kRadius = 3.0;
constexpr Scalar kJitter = 0.25;  // fraction of one angular slot
// Target-private classes sit on an inner ring: off every source class and
// away from the decision boundaries between neighbouring source classes.
constexpr Scalar kPrivateRadius = 1.5;

void fill_class(Matrix& out, Index& row, const RowVector& mean, int count, Scalar sigma, Rng& rng) {
  for (int s = 0; s < count; ++s, ++row) {
    for (Index j = 0; j < out.cols(); ++j) out(row, j) = mean(j) + sigma * rng.normal();
  }
}

}  // namespace

GeneratedDomains generate(const DomainSpec& spec) {
  if (auto errors = spec.validate(); !errors.empty()) {
    std::string msg = "invalid domain spec:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ContractError(msg);
  }
  Rng rng(Rng::derive(spec.seed, stream::kData));
  const int n_source = spec.n_shared + spec.n_source_private;
  const int n_all = n_source + spec.n_target_private;
  const Index d = spec.input_dim;

  // Class c occupies a random slot on the circle.
  const std::vector<std::size_t> slot = rng.permutation(static_cast<std::size_t>(n_all));
  std::vector<RowVector> source_means(static_cast<std::size_t>(n_all), RowVector::Zero(d));
  for (int c = 0; c < n_all; ++c) {
    const Scalar jitter = rng.uniform(-kJitter, kJitter);
    const Scalar theta =
        2.0 * std::numbers::pi * (static_cast<Scalar>(slot[static_cast<std::size_t>(c)]) + jitter) / n_all;
    source_means[static_cast<std::size_t>(c)](0) = kRadius * std::cos(theta);
    source_means[static_cast<std::size_t>(c)](1) = kRadius * std::sin(theta);
  }
  for (int c = n_source; c < n_all; ++c) source_means[static_cast<std::size_t>(c)] *= kPrivateRadius / kRadius;
  const Scalar shift_dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Scalar cr = std::cos(spec.rotation), sr = std::sin(spec.rotation);
  std::vector<RowVector> target_means = source_means;
  for (RowVector& m : target_means) {
    const Scalar x = m(0), y = m(1);
    m(0) = cr * x - sr * y + spec.shift * std::cos(shift_dir);
    m(1) = sr * x + cr * y + spec.shift * std::sin(shift_dir);
  }

  const int per = spec.samples_per_class;
  GeneratedDomains out;

  LabeledDataset& src = out.source;
  src.domain = Domain::source;
  src.num_classes = n_source;
  src.features.resize(static_cast<Index>(n_source) * per, d);
  Index row = 0;
  for (int c = 0; c < n_source; ++c) {
    fill_class(src.features, row, source_means[static_cast<std::size_t>(c)], per, spec.noise_sigma, rng);
    for (int s = 0; s < per; ++s) {
      src.labels.push_back(c);
      src.is_private.push_back(c >= spec.n_shared ? 1 : 0);
    }
  }

  // Target classes: shared ids then target-private ids after the source range.
  std::vector<int> target_classes;
  for (int c = 0; c < spec.n_shared; ++c) target_classes.push_back(c);
  for (int c = n_source; c < n_all; ++c) target_classes.push_back(c);
  const auto n_target = static_cast<Index>(target_classes.size()) * per;

  UnlabeledDataset& tt = out.target_train;
  tt.features.resize(n_target, d);
  row = 0;
  for (int c : target_classes) {
    fill_class(tt.features, row, target_means[static_cast<std::size_t>(c)], per, spec.noise_sigma, rng);
    for (int s = 0; s < per; ++s) tt.private_flags.push_back(c >= n_source ? 1 : 0);
  }

  LabeledDataset& te = out.target_eval;
  te.domain = Domain::target;
  te.num_classes = n_source;
  te.features.resize(n_target, d);
  row = 0;
  for (int c : target_classes) {
    fill_class(te.features, row, target_means[static_cast<std::size_t>(c)], per, spec.noise_sigma, rng);
    for (int s = 0; s < per; ++s) {
      te.labels.push_back(c);
      te.is_private.push_back(c >= n_source ? 1 : 0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw CsvError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::string format_double(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) fail(path, line_no, "missing header row");
  const auto header = split_commas(line);
  int n_feat = 0;
  while (n_feat < static_cast<int>(header.size()) &&
         trim(header[static_cast<std::size_t>(n_feat)]) == "f" + std::to_string(n_feat)) {
    ++n_feat;
  }
  if (n_feat == 0) fail(path, line_no, "header must start with f0");
  CsvTable table;
  std::size_t col = static_cast<std::size_t>(n_feat);
  if (col < header.size() && trim(header[col]) == "label") {
    table.has_labels = true;
    ++col;
  }
  if (col < header.size() && trim(header[col]) == "is_private") {
    table.has_private = true;
    ++col;
  }
  if (col != header.size()) fail(path, line_no, "unexpected header column '" + trim(header[col]) + "'");
  if (schema.feature_dim > 0 && schema.feature_dim != n_feat) {
    fail(path, line_no,
         "expected " + std::to_string(schema.feature_dim) + " feature columns, found " + std::to_string(n_feat));
  }
  if (schema.require_labels && !table.has_labels) fail(path, line_no, "label column required");

  std::vector<Scalar> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      fail(path, line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                              std::to_string(cells.size()));
    }
    for (int j = 0; j < n_feat; ++j) {
      const std::string cell = trim(cells[static_cast<std::size_t>(j)]);
      char* end = nullptr;
      const Scalar v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size()) {
        fail(path, line_no, "malformed number '" + cell + "' in column f" + std::to_string(j));
      }
      if (!std::isfinite(v)) fail(path, line_no, "non-finite value '" + cell + "' in column f" + std::to_string(j));
      values.push_back(v);
    }
    std::size_t c = static_cast<std::size_t>(n_feat);
    auto parse_int = [&](const std::string& raw, const char* name) {
      const std::string cell = trim(raw);
      int v = 0;
      const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size()) {
        fail(path, line_no, std::string("malformed ") + name + " '" + cell + "'");
      }
      return v;
    };
    if (table.has_labels) {
      const int y = parse_int(cells[c++], "label");
      if (y < 0) fail(path, line_no, "negative label");
      table.labels.push_back(y);
    }
    if (table.has_private) {
      const int f = parse_int(cells[c++], "is_private");
      if (f != 0 && f != 1) fail(path, line_no, "is_private must be 0 or 1");
      table.is_private.push_back(static_cast<std::uint8_t>(f));
    }
    ++rows;
  }
  table.features = Eigen::Map<Matrix>(values.data(), static_cast<Index>(rows), n_feat);
  return table;
}

LabeledDataset load_labeled_csv(const std::filesystem::path& path, int num_classes) {
  CsvTable t = read_csv(path, CsvSchema{0, true});
  LabeledDataset out;
  out.features = std::move(t.features);
  out.labels = std::move(t.labels);
  out.is_private = t.has_private ? std::move(t.is_private)
                                 : std::vector<std::uint8_t>(out.labels.size(), 0);
  if (num_classes > 0) {
    out.num_classes = num_classes;
  } else {
    int max_label = -1;
    for (int y : out.labels) max_label = std::max(max_label, y);
    out.num_classes = max_label + 1;
  }
  return out;
}

UnlabeledDataset load_unlabeled_csv(const std::filesystem::path& path) {
  CsvTable t = read_csv(path);
  UnlabeledDataset out;
  out.features = std::move(t.features);
  if (t.has_private) out.private_flags = std::move(t.is_private);
  return out;
}

namespace {

void write_rows(const std::filesystem::path& path, const Matrix& x, const Labels* labels,
                const std::vector<std::uint8_t>* priv) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CsvError("cannot open " + path.string() + " for writing");
  for (Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << "f" << j;
  if (labels) out << ",label";
  if (priv) out << ",is_private";
  out << "\n";
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << format_double(x(i, j));
    if (labels) out << "," << (*labels)[static_cast<std::size_t>(i)];
    if (priv) out << "," << static_cast<int>((*priv)[static_cast<std::size_t>(i)]);
    out << "\n";
  }
  if (!out) throw CsvError("failed writing " + path.string());
}

}  // namespace

void save_csv(const std::filesystem::path& path, const LabeledDataset& data) {
  write_rows(path, data.features, &data.labels, data.is_private.empty() ? nullptr : &data.is_private);
}

void save_csv(const std::filesystem::path& path, const UnlabeledDataset& data) {
  write_rows(path, data.features, nullptr, nullptr);
}

}  // namespace sfda
