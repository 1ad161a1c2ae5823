#pragma once

#include <vector>

#include "sfda/diffcore.hpp"

namespace sfda {

struct SgdConfig {
  Scalar momentum = 0.9;
  Scalar weight_decay = 1e-3;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///   d = grad + wd * w;  buf = momentum * buf + d;  w -= lr * buf
/// Each parameter uses the learning rate of its LrGroup. Frozen parameters
/// are never touched.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, SgdConfig cfg);

  void step(Scalar lr_trunk, Scalar lr_head);
  void zero_grad();

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> velocity_;
  SgdConfig cfg_;
};

}  // namespace sfda
