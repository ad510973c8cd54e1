#include "sqb/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>

namespace sqb::ad {

const std::vector<double>& Var::value() const { return tape_->value(*this); }
const std::vector<double>& Var::grad() const { return tape_->grad(*this); }
double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar on a non-scalar tensor");
  return v[0];
}

Var Tape::leaf(std::vector<double> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(std::vector<double> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::vector<double> value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::logic_error("Tape::record: input from another tape");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const std::vector<double>& Tape::grad(Var v) const {
  static const std::vector<double> kEmpty;
  const Node& n = nodes_[v.id()];
  return n.requires_grad ? n.grad : kEmpty;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::logic_error("Tape::backward: foreign variable");
  if (nodes_[loss.id()].value.size() != 1) throw std::logic_error("Tape::backward: loss must be scalar");
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      n.grad.assign(n.value.size(), 0.0);
    } else {
      n.grad.clear();
    }
  }
  last_visits_ = 0;
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;

  std::vector<std::span<double>> in_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    ++last_visits_;
    if (std::all_of(n.grad.begin(), n.grad.end(), [](double g) { return g == 0.0; })) continue;
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      in_grads.push_back(src.requires_grad ? std::span<double>(src.grad) : std::span<double>());
    }
    n.backward(n.grad, in_grads);
  }
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands recorded on different tapes");
  return *a.tape();
}

std::size_t broadcast_size(std::size_t na, std::size_t nb) {
  if (na == nb || nb == 1) return na;
  if (na == 1) return nb;
  throw std::invalid_argument("tensor size mismatch");
}

template <class F>
Var unary(Var a, F&& fwd, std::function<double(double x, double y)> dydx) {
  const auto& x = a.value();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  std::vector<double> xs = x;
  std::vector<double> ys = y;
  return a.tape()->record(std::move(y), {a},
                          [xs = std::move(xs), ys = std::move(ys), dydx](std::span<const double> g,
                                                                         std::span<const std::span<double>> gi) {
                            if (gi[0].empty()) return;
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * dydx(xs[i], ys[i]);
                          });
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  const std::size_t n = broadcast_size(x.size(), y.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[x.size() == 1 ? 0 : i] + y[y.size() == 1 ? 0 : i];
  const std::size_t na = x.size(), nb = y.size();
  return t.record(std::move(out), {a, b}, [na, nb](std::span<const double> g, std::span<const std::span<double>> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!gi[0].empty()) gi[0][na == 1 ? 0 : i] += g[i];
      if (!gi[1].empty()) gi[1][nb == 1 ? 0 : i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  const std::size_t n = broadcast_size(x.size(), y.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[x.size() == 1 ? 0 : i] - y[y.size() == 1 ? 0 : i];
  const std::size_t na = x.size(), nb = y.size();
  return t.record(std::move(out), {a, b}, [na, nb](std::span<const double> g, std::span<const std::span<double>> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!gi[0].empty()) gi[0][na == 1 ? 0 : i] += g[i];
      if (!gi[1].empty()) gi[1][nb == 1 ? 0 : i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  std::vector<double> x = a.value();
  std::vector<double> y = b.value();
  const std::size_t n = broadcast_size(x.size(), y.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[x.size() == 1 ? 0 : i] * y[y.size() == 1 ? 0 : i];
  return t.record(std::move(out), {a, b},
                  [x = std::move(x), y = std::move(y)](std::span<const double> g, std::span<const std::span<double>> gi) {
                    const std::size_t na = x.size(), nb = y.size();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      const std::size_t ia = na == 1 ? 0 : i, ib = nb == 1 ? 0 : i;
                      if (!gi[0].empty()) gi[0][ia] += g[i] * y[ib];
                      if (!gi[1].empty()) gi[1][ib] += g[i] * x[ia];
                    }
                  });
}

Var scale(Var a, double s) {
  const auto& x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
  return a.tape()->record(std::move(out), {a}, [s](std::span<const double> g, std::span<const std::span<double>> gi) {
    if (gi[0].empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  const auto& x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + s;
  return a.tape()->record(std::move(out), {a}, [](std::span<const double> g, std::span<const std::span<double>> gi) {
    if (gi[0].empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
  });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  return a.tape()->record({s}, {a}, [](std::span<const double> g, std::span<const std::span<double>> gi) {
    if (gi[0].empty()) return;
    for (double& x : gi[0]) x += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.size();
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var slice(Var a, std::size_t offset, std::size_t count) {
  const auto& x = a.value();
  if (offset + count > x.size()) throw std::out_of_range("slice out of range");
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(offset),
                          x.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return a.tape()->record(std::move(out), {a},
                          [offset](std::span<const double> g, std::span<const std::span<double>> gi) {
                            if (gi[0].empty()) return;
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][offset + i] += g[i];
                          });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  Tape* t = parts.front().tape();
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    out.insert(out.end(), p.value().begin(), p.value().end());
    sizes.push_back(p.size());
  }
  return t->record(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                   [sizes](std::span<const double> g, std::span<const std::span<double>> gi) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < sizes.size(); ++k) {
                       if (!gi[k].empty())
                         for (std::size_t i = 0; i < sizes[k]; ++i) gi[k][i] += g[off + i];
                       off += sizes[k];
                     }
                   });
}

Var gather(Var a, std::span<const std::size_t> indices) {
  const auto& x = a.value();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = x.at(indices[i]);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape()->record(std::move(out), {a},
                          [idx = std::move(idx)](std::span<const double> g, std::span<const std::span<double>> gi) {
                            if (gi[0].empty()) return;
                            for (std::size_t i = 0; i < idx.size(); ++i) gi[0][idx[i]] += g[i];
                          });
}

Var mse(Var a, std::span<const double> target) {
  const auto& x = a.value();
  if (x.size() != target.size()) throw std::invalid_argument("mse: size mismatch");
  std::vector<double> diff(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff[i] = x[i] - target[i];
    s += diff[i] * diff[i];
  }
  const double n = static_cast<double>(x.size());
  return a.tape()->record({s / n}, {a},
                          [diff = std::move(diff), n](std::span<const double> g, std::span<const std::span<double>> gi) {
                            if (gi[0].empty()) return;
                            const double c = 2.0 * g[0] / n;
                            for (std::size_t i = 0; i < diff.size(); ++i) gi[0][i] += c * diff[i];
                          });
}

Var l1(Var a, std::span<const double> target) {
  const auto& x = a.value();
  if (x.size() != target.size()) throw std::invalid_argument("l1: size mismatch");
  std::vector<double> sign(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - target[i];
    s += std::abs(d);
    sign[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  const double n = static_cast<double>(x.size());
  return a.tape()->record({s / n}, {a},
                          [sign = std::move(sign), n](std::span<const double> g, std::span<const std::span<double>> gi) {
                            if (gi[0].empty()) return;
                            for (std::size_t i = 0; i < sign.size(); ++i) gi[0][i] += g[0] * sign[i] / n;
                          });
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (state.m.size() != params.size()) state.resize(params.size());
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

double ExponentialLr::at(long step) const {
  if (max_steps <= 0) return lr_final;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(max_steps), 0.0, 1.0);
  return std::exp(std::log(lr_init) * (1.0 - t) + std::log(lr_final) * t);
}

}  // namespace sqb::ad
