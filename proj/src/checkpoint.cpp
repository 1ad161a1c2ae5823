// Checkpoint layout (all integers little-endian, doubles IEEE-754 binary64):
//
//   "SFDACKPT"                       8 bytes magic
//   u32 version                      kCheckpointVersion
//   u64 input_dim, u64 n_hidden, u64 hidden[n_hidden]
//   u64 feature_dim, u64 num_classes
//   f64 bn_eps, f64 bn_momentum
//   u64 n_arrays
//   n_arrays x { u32 name_len, name bytes, u64 rows, u64 cols, f64 data[rows*cols] }
//
// Arrays appear in Model::parameters() order followed by bn.running_mean and
// bn.running_var. Frozen flags are runtime state and are not stored.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sfda/model.hpp"

namespace sfda {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'S', 'F', 'D', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void array(const std::string& name, const Matrix& m) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    bytes(reinterpret_cast<const char*>(m.data()), sizeof(Scalar) * static_cast<std::size_t>(m.size()));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void array(const std::string& expected, Matrix& dst) {
    const auto len = pod<std::uint32_t>();
    const std::string name = str(len);
    if (name != expected) {
      throw CheckpointError("checkpoint: expected array '" + expected + "', found '" + name + "'");
    }
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (static_cast<Index>(rows) != dst.rows() || static_cast<Index>(cols) != dst.cols()) {
      throw CheckpointError("checkpoint: array '" + name + "' has shape " + std::to_string(rows) +
                            "x" + std::to_string(cols) + ", architecture expects " +
                            shape_str(dst));
    }
    const std::size_t n = sizeof(Scalar) * rows * cols;
    need(n);
    std::memcpy(dst.data(), in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  const Architecture& a = model.arch();
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(a.input_dim));
  w.pod<std::uint64_t>(a.hidden.size());
  for (Index h : a.hidden) w.pod<std::uint64_t>(static_cast<std::uint64_t>(h));
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(a.feature_dim));
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(a.num_classes));
  w.pod<double>(model.bn.state.eps);
  w.pod<double>(model.bn.state.momentum);
  const auto params = model.parameters();
  w.pod<std::uint64_t>(params.size() + 2);
  for (const Parameter* p : params) w.array(p->name, p->value);
  w.array("bn.running_mean", model.bn.state.running_mean);
  w.array("bn.running_var", model.bn.state.running_var);
  return w.take();
}

Model deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  Architecture a;
  a.input_dim = static_cast<Index>(r.pod<std::uint64_t>());
  a.hidden.resize(r.pod<std::uint64_t>());
  for (Index& h : a.hidden) h = static_cast<Index>(r.pod<std::uint64_t>());
  a.feature_dim = static_cast<Index>(r.pod<std::uint64_t>());
  a.num_classes = static_cast<Index>(r.pod<std::uint64_t>());
  Model model(a, 0);
  model.bn.state.eps = r.pod<double>();
  model.bn.state.momentum = r.pod<double>();
  const auto n_arrays = r.pod<std::uint64_t>();
  auto params = model.parameters();
  if (n_arrays != params.size() + 2) throw CheckpointError("checkpoint: array count mismatch");
  for (Parameter* p : params) {
    r.array(p->name, p->value);
    p->zero_grad();
  }
  Matrix mean = model.bn.state.running_mean;
  Matrix var = model.bn.state.running_var;
  r.array("bn.running_mean", mean);
  r.array("bn.running_var", var);
  model.bn.state.running_mean = mean.row(0);
  model.bn.state.running_var = var.row(0);
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace sfda
