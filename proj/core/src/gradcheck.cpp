#include "eatkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eatkit {
namespace {

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
}

double eval_scalar(const ScalarFn& f, const Tensor& x) {
  Tape tape(false);
  Var out = f(tape, tape.constant(x));
  if (out.value().numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, const GradCheckOptions& opt) {
  if (opt.h <= 0.0) throw std::invalid_argument("grad_check: h must be > 0");
  Tensor analytic;
  {
    Tape tape;
    if (!opt.fault_op.empty()) tape.inject_backward_fault(opt.fault_op, opt.fault_factor);
    Var xv = tape.leaf(x);
    Var loss = f(tape, xv);
    tape.backward(loss);
    analytic = xv.grad();
  }
  std::vector<std::size_t> coords;
  if (opt.coordinates) {
    coords = *opt.coordinates;
  } else {
    coords.resize(x.numel());
    std::iota(coords.begin(), coords.end(), 0);
  }
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + opt.h;
    const double fp = eval_scalar(f, probe);
    probe[i] = orig - opt.h;
    const double fm = eval_scalar(f, probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * opt.h);
    const double err = relative_error(analytic[i], numeric);
    if (err >= result.max_rel_error) {
      result = GradCheckResult{err, i, analytic[i], numeric};
    }
  }
  return result;
}

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  GradCheckOptions opt;
  opt.h = h;
  return grad_check(f, x, opt).max_rel_error;
}

GradCheckResult grad_check_params(const std::function<Var(Tape&)>& loss,
                                  std::span<const ParamCoordinate> coords, double h,
                                  const std::string& fault_op, double fault_factor) {
  if (h <= 0.0) throw std::invalid_argument("grad_check_params: h must be > 0");
  std::vector<Parameter*> touched;
  for (const auto& c : coords) touched.push_back(c.param);
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

  // Snapshot and clear gradients so the analytic pass starts from zero.
  std::vector<Tensor> saved;
  for (Parameter* p : touched) {
    saved.push_back(p->grad);
    p->zero_grad();
  }
  std::vector<double> analytic;
  {
    Tape tape;
    if (!fault_op.empty()) tape.inject_backward_fault(fault_op, fault_factor);
    tape.backward(loss(tape));
    for (const auto& c : coords) analytic.push_back(c.param->grad[c.offset]);
  }
  for (std::size_t i = 0; i < touched.size(); ++i) touched[i]->grad = saved[i];

  auto eval = [&]() {
    Tape tape(false);
    return loss(tape).value()[0];
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double& slot = coords[i].param->value[coords[i].offset];
    const double orig = slot;
    slot = orig + h;
    const double fp = eval();
    slot = orig - h;
    const double fm = eval();
    slot = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = relative_error(analytic[i], numeric);
    if (err >= result.max_rel_error) result = GradCheckResult{err, i, analytic[i], numeric};
  }
  return result;
}

}  // namespace eatkit
