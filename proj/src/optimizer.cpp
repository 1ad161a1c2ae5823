#include "sfda/optimizer.hpp"

namespace sfda {

Sgd::Sgd(std::vector<Parameter*> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  velocity_.reserve(params_.size());
  for (const Parameter* p : params_) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
}

void Sgd::step(Scalar lr_trunk, Scalar lr_head) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.frozen) continue;
    const Scalar lr = p.group == LrGroup::trunk ? lr_trunk : lr_head;
    Matrix& v = velocity_[i];
    for (Index e = 0; e < p.value.size(); ++e) {
      Scalar& w = p.value.data()[e];
      const Scalar d = p.grad.data()[e] + cfg_.weight_decay * w;
      Scalar& buf = v.data()[e];
      buf = cfg_.momentum * buf + d;
      w -= lr * buf;
    }
  }
}

void Sgd::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace sfda
