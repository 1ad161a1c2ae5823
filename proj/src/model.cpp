#include "sfda/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace sfda {

namespace {

Matrix uniform_fan_in(Index in, Index out, Rng& rng) {
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(in));
  Matrix w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

Linear::Linear(const std::string& name, Index in, Index out, LrGroup group, Rng& rng)
    : weight(name + ".weight", uniform_fan_in(in, out, rng), group),
      bias(name + ".bias", Matrix::Zero(1, out), group) {}

Var Linear::forward(Tape& tape, const Var& x) {
  return add_bias(matmul(x, tape.param(weight)), tape.param(bias));
}

BatchNorm::BatchNorm(const std::string& name, Index d)
    : gamma(name + ".gamma", Matrix::Ones(1, d), LrGroup::head),
      beta(name + ".beta", Matrix::Zero(1, d), LrGroup::head),
      state(d) {}

Var BatchNorm::forward(Tape& tape, const Var& x, BnMode mode, bool update_running) {
  return batchnorm_forward(x, tape.param(gamma), tape.param(beta), mode, state, update_running);
}

Model::Model(const Architecture& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.input_dim < 1 || arch.feature_dim < 1 || arch.num_classes < 1) {
    throw ContractError("architecture dimensions must be positive");
  }
  Rng rng(Rng::derive(seed, stream::kInit));
  Index in = arch.input_dim;
  for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
    if (arch.hidden[l] < 1) throw ContractError("hidden widths must be positive");
    trunk.emplace_back("trunk." + std::to_string(l), in, arch.hidden[l], LrGroup::trunk, rng);
    in = arch.hidden[l];
  }
  bottleneck = Linear("bottleneck", in, arch.feature_dim, LrGroup::head, rng);
  bn = BatchNorm("bn", arch.feature_dim);
  classifier = Linear("classifier", arch.feature_dim, arch.num_classes, LrGroup::head, rng);
}

ForwardResult Model::forward(Tape& tape, const Matrix& x, BnMode mode, bool update_running) {
  if (x.cols() != arch_.input_dim) {
    throw DimensionError("model expects " + std::to_string(arch_.input_dim) +
                         " input columns, got " + std::to_string(x.cols()));
  }
  Var h = tape.constant(x);
  for (Linear& layer : trunk) h = relu(layer.forward(tape, h));
  Var features = bn.forward(tape, bottleneck.forward(tape, h), mode, update_running);
  Var logits = classifier.forward(tape, features);
  return {features, logits};
}

Outputs Model::predict(const Matrix& x) const {
  Model copy = *this;
  Tape tape;
  ForwardResult r = copy.forward(tape, x, BnMode::eval, false);
  return {r.features.value(), r.logits.value()};
}

std::vector<Parameter*> Model::feature_parameters() {
  std::vector<Parameter*> out;
  for (Linear& l : trunk) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&bottleneck.weight);
  out.push_back(&bottleneck.bias);
  out.push_back(&bn.gamma);
  out.push_back(&bn.beta);
  return out;
}

std::vector<Parameter*> Model::classifier_parameters() {
  return {&classifier.weight, &classifier.bias};
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = feature_parameters();
  for (Parameter* p : classifier_parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

void Model::freeze_classifier() {
  for (Parameter* p : classifier_parameters()) {
    p->frozen = true;
    p->zero_grad();
  }
}

bool Model::classifier_frozen() const {
  return classifier.weight.frozen && classifier.bias.frozen;
}

Scalar ema_step(Scalar shadow, Scalar live, Scalar coefficient) {
  const Scalar next = shadow + (1.0 - coefficient) * (live - shadow);
  return std::clamp(next, std::min(shadow, live), std::max(shadow, live));
}

void ema_update(EmaModel& ema, const Model& live) {
  if (!(ema.shadow.arch() == live.arch())) {
    throw ContractError("ema_update: architecture drifted between shadow and live model");
  }
  auto dst = ema.shadow.parameters();
  auto src = live.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Matrix& s = dst[i]->value;
    const Matrix& l = src[i]->value;
    if (s.rows() != l.rows() || s.cols() != l.cols()) {
      throw ContractError("ema_update: shape drift in " + dst[i]->name);
    }
    for (Index e = 0; e < s.size(); ++e) {
      s.data()[e] = ema_step(s.data()[e], l.data()[e], ema.coefficient);
    }
  }
  ema.shadow.bn.state = live.bn.state;
}

bool bit_identical(const Model& a, const Model& b) {
  if (!(a.arch() == b.arch())) return false;
  auto pa = a.parameters();
  auto pb = b.parameters();
  auto same = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::equal(x.data(), x.data() + x.size(), y.data(), [](double u, double v) {
             return std::bit_cast<std::uint64_t>(u) == std::bit_cast<std::uint64_t>(v);
           });
  };
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!same(pa[i]->value, pb[i]->value)) return false;
  }
  return same(a.bn.state.running_mean, b.bn.state.running_mean) &&
         same(a.bn.state.running_var, b.bn.state.running_var);
}

}  // namespace sfda
