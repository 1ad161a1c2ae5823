#include "sfda/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sfda {

namespace {

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError("operands belong to different tapes");
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

Matrix transpose(const Matrix& m) { return m.transpose(); }

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Scalar Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionError("item() on non-scalar node " + shape_str(v));
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (p.frozen) return constant(p.value);
  nodes_.push_back(Node{p.value, Matrix(), nullptr, &p, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw ContractError("operand recorded on a different tape");
    needs = needs || nodes_[p.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr,
                        nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  n.grad += g;
}

Matrix& Tape::grad_slot(std::size_t id) { return nodes_[id].grad; }

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  if (loss.value().size() != 1) throw DimensionError("backward needs a 1x1 loss");
  for (Node& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  nodes_[loss.id()].grad(0, 0) = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.backward) {
      n.backward(*this, i);
    } else if (n.param != nullptr) {
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------
// Kernels

Matrix gemm(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a) + " x " +
                         shape_str(b));
  }
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  Matrix c = Matrix::Zero(m, n);
  for (Index i = 0; i < m; ++i) {
    for (Index p = 0; p < k; ++p) {
      const Scalar aip = a(i, p);
      for (Index j = 0; j < n; ++j) c(i, j) += aip * b(p, j);
    }
  }
  return c;
}

Matrix log_softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    Scalar mx = z(i, 0);
    for (Index k = 1; k < z.cols(); ++k) mx = std::max(mx, z(i, k));
    Scalar s = 0.0;
    for (Index k = 0; k < z.cols(); ++k) s += std::exp(z(i, k) - mx);
    const Scalar lse = mx + std::log(s);
    for (Index k = 0; k < z.cols(); ++k) out(i, k) = z(i, k) - lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    Scalar mx = z(i, 0);
    for (Index k = 1; k < z.cols(); ++k) mx = std::max(mx, z(i, k));
    Scalar s = 0.0;
    for (Index k = 0; k < z.cols(); ++k) {
      out(i, k) = std::exp(z(i, k) - mx);
      s += out(i, k);
    }
    for (Index k = 0; k < z.cols(); ++k) out(i, k) /= s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  Tape& t = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(gemm(a.value(), b.value()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.accumulate(ia, gemm(g, transpose(tp.value(ib))));
    if (tp.needs_grad(ib)) tp.accumulate(ib, gemm(transpose(tp.value(ia)), g));
  });
}

Var add_bias(const Var& x, const Var& b) {
  require_same_tape(x, b);
  const Matrix& xv = x.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bv) + " does not fit " + shape_str(xv));
  }
  Matrix out = xv;
  for (Index i = 0; i < out.rows(); ++i) out.row(i) += bv;
  const std::size_t ix = x.id(), ib = b.id();
  return x.tape()->record(std::move(out), {x, b}, [ix, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ix, g);
    if (tp.needs_grad(ib)) {
      Matrix gb = Matrix::Zero(1, g.cols());
      for (Index i = 0; i < g.rows(); ++i) gb.row(0) += g.row(i);
      tp.accumulate(ib, gb);
    }
  });
}

Var relu(const Var& x) {
  Matrix out = x.value().cwiseMax(0.0);
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Matrix& xv = tp.value(ix);
    Matrix g = tp.grad(self);
    for (Index i = 0; i < g.size(); ++i) {
      if (!(xv.data()[i] > 0.0)) g.data()[i] = 0.0;
    }
    tp.accumulate(ix, g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia, ib](Tape& tp, std::size_t self) {
                            const Matrix& g = tp.grad(self);
                            if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                            if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                          });
}

Var mul_const(const Var& a, const Matrix& c) {
  require_same_shape(a.value(), c, "mul_const");
  const std::size_t ia = a.id();
  return a.tape()->record(a.value().cwiseProduct(c), {a}, [ia, c](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self).cwiseProduct(c));
  });
}

Var scale(const Var& a, Scalar s) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self) * s);
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

Var sum(const Var& a) {
  const Matrix& v = a.value();
  Scalar s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += v.data()[i];
  Matrix out(1, 1);
  out(0, 0) = s;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Matrix& v = tp.value(ia);
    tp.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), tp.grad(self)(0, 0)));
  });
}

Var log_softmax(const Var& z) {
  const std::size_t iz = z.id();
  return z.tape()->record(log_softmax_rows(z.value()), {z}, [iz](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& out = tp.value(self);
    Matrix dz(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      Scalar gs = 0.0;
      for (Index k = 0; k < g.cols(); ++k) gs += g(i, k);
      for (Index k = 0; k < g.cols(); ++k) dz(i, k) = g(i, k) - std::exp(out(i, k)) * gs;
    }
    tp.accumulate(iz, dz);
  });
}

Var softmax(const Var& z) { return exp(log_softmax(z)); }

Var select_rows(const Var& a, std::span<const Index> rows) {
  const Matrix& v = a.value();
  Matrix out(static_cast<Index>(rows.size()), v.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= v.rows()) throw DimensionError("select_rows: index out of range");
    out.row(static_cast<Index>(r)) = v.row(rows[r]);
  }
  const std::size_t ia = a.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape()->record(std::move(out), {a}, [ia, idx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix& dst = tp.grad_slot(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) dst.row(idx[r]) += g.row(static_cast<Index>(r));
  });
}

Var pick(const Var& a, std::span<const int> cols) {
  const Matrix& v = a.value();
  if (static_cast<Index>(cols.size()) != v.rows()) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " +
                         std::to_string(v.rows()) + " rows");
  }
  Matrix out(v.rows(), 1);
  for (Index i = 0; i < v.rows(); ++i) {
    const int c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= v.cols()) throw ContractError("pick: class index out of range");
    out(i, 0) = v(i, c);
  }
  const std::size_t ia = a.id();
  std::vector<int> idx(cols.begin(), cols.end());
  return a.tape()->record(std::move(out), {a}, [ia, idx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix& dst = tp.grad_slot(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      dst(static_cast<Index>(i), idx[i]) += g(static_cast<Index>(i), 0);
    }
  });
}

Var detach(const Var& a) { return a.tape()->constant(a.value()); }

// ---------------------------------------------------------------------------
// Batch normalization

Var batchnorm_forward(const Var& x, const Var& gamma, const Var& beta, BnMode mode,
                      BatchNormState& state, bool update_running) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Matrix& xv = x.value();
  const Index B = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d || state.running_mean.size() != d) {
    throw DimensionError("batchnorm: feature width " + std::to_string(d) +
                         " does not match parameters");
  }
  const RowVector g = gamma.value().row(0);
  const RowVector b = beta.value().row(0);

  RowVector mean(d), inv_std(d);
  if (mode == BnMode::train) {
    if (B < 2) {
      throw DegenerateBatchError("batchnorm: train mode needs at least 2 rows, got " +
                                 std::to_string(B));
    }
    RowVector var(d);
    for (Index j = 0; j < d; ++j) {
      Scalar s = 0.0;
      for (Index i = 0; i < B; ++i) s += xv(i, j);
      mean(j) = s / static_cast<Scalar>(B);
      Scalar ss = 0.0;
      for (Index i = 0; i < B; ++i) {
        const Scalar c = xv(i, j) - mean(j);
        ss += c * c;
      }
      var(j) = ss / static_cast<Scalar>(B);
      inv_std(j) = 1.0 / std::sqrt(var(j) + state.eps);
    }
    if (update_running) {
      const Scalar unbias = static_cast<Scalar>(B) / static_cast<Scalar>(B - 1);
      for (Index j = 0; j < d; ++j) {
        state.running_mean(j) =
            (1.0 - state.momentum) * state.running_mean(j) + state.momentum * mean(j);
        state.running_var(j) =
            (1.0 - state.momentum) * state.running_var(j) + state.momentum * var(j) * unbias;
      }
    }
  } else {
    mean = state.running_mean;
    for (Index j = 0; j < d; ++j) inv_std(j) = 1.0 / std::sqrt(state.running_var(j) + state.eps);
  }

  Matrix xhat(B, d), out(B, d);
  for (Index i = 0; i < B; ++i) {
    for (Index j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean(j)) * inv_std(j);
      out(i, j) = xhat(i, j) * g(j) + b(j);
    }
  }

  const std::size_t ix = x.id(), ig = gamma.id(), ibeta = beta.id();
  const bool batch_stats = mode == BnMode::train;
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ibeta, xhat, inv_std, g, batch_stats](Tape& tp, std::size_t self) {
        const Matrix& dy = tp.grad(self);
        const Index B = dy.rows(), d = dy.cols();
        Matrix dgamma = Matrix::Zero(1, d), dbeta = Matrix::Zero(1, d);
        for (Index i = 0; i < B; ++i) {
          for (Index j = 0; j < d; ++j) {
            dbeta(0, j) += dy(i, j);
            dgamma(0, j) += dy(i, j) * xhat(i, j);
          }
        }
        tp.accumulate(ig, dgamma);
        tp.accumulate(ibeta, dbeta);
        if (!tp.needs_grad(ix)) return;
        Matrix dx(B, d);
        if (batch_stats) {
          const Scalar n = static_cast<Scalar>(B);
          for (Index j = 0; j < d; ++j) {
            // dxhat = dy * gamma; its column sum is dbeta*gamma and its
            // xhat-weighted sum is dgamma*gamma.
            const Scalar sum_dxhat = dbeta(0, j) * g(j);
            const Scalar sum_dxhat_xhat = dgamma(0, j) * g(j);
            for (Index i = 0; i < B; ++i) {
              const Scalar dxhat = dy(i, j) * g(j);
              dx(i, j) = inv_std(j) / n * (n * dxhat - sum_dxhat - xhat(i, j) * sum_dxhat_xhat);
            }
          }
        } else {
          for (Index i = 0; i < B; ++i)
            for (Index j = 0; j < d; ++j) dx(i, j) = dy(i, j) * g(j) * inv_std(j);
        }
        tp.accumulate(ix, dx);
      });
}

// ---------------------------------------------------------------------------
// Gradient check

Scalar relative_error(Scalar analytic, Scalar numeric, Scalar floor) {
  const Scalar denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(const std::function<Var(Tape&)>& loss_fn,
                               std::span<Parameter* const> params, Scalar step, Scalar tol) {
  auto evaluate = [&loss_fn]() {
    Tape t;
    return loss_fn(t).item();
  };

  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    Var loss = loss_fn(t);
    if (!std::isfinite(loss.item())) {
      throw GradCheckAborted("gradient check aborted: loss is " + std::to_string(loss.item()));
    }
    t.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (Parameter* p : params) {
    if (p->frozen) continue;
    for (Index e = 0; e < p->value.size(); ++e) {
      Scalar& w = p->value.data()[e];
      const Scalar saved = w;
      w = saved + step;
      const Scalar up = evaluate();
      w = saved - step;
      const Scalar down = evaluate();
      w = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw GradCheckAborted("gradient check aborted: non-finite loss perturbing " + p->name);
      }
      const Scalar numeric = (up - down) / (2.0 * step);
      const Scalar err = relative_error(p->grad.data()[e], numeric);
      ++report.entries_checked;
      if (err > report.max_rel_error || report.worst_entry.empty()) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          std::ostringstream os;
          os << p->name << "[" << e << "] analytic=" << p->grad.data()[e] << " numeric=" << numeric;
          report.worst_entry = os.str();
        }
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace sfda
