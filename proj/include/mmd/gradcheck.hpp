#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmd/common.hpp"
#include "mmd/tensor.hpp"

namespace mmd {

struct GradCheckReport {
  std::map<std::string, double> per_param;  // max relative error per tensor
  double worst = 0.0;
  // Same discrepancies normalized by the tensor's gradient scale instead of
  // per-coordinate magnitudes. Immune to FD quantization noise on
  // near-zero coordinates; this is what large-model checks assert.
  std::map<std::string, double> per_param_scaled;
  double worst_scaled = 0.0;
};

// Central-difference check of an analytic gradient. f evaluates the scalar
// objective at the params' current values; it is re-invoked 2x per
// coordinate with one coordinate nudged by +/- eps. Relative error uses a
// max(|fd|, |analytic|, 1e-8) denominator.
template <typename T>
GradCheckReport grad_check(
    const std::function<double()>& f,
    std::vector<std::pair<std::string, Tensor<T>>> params,
    const std::map<std::string, std::vector<double>>& analytic, double eps) {
  GradCheckReport report;
  for (auto& [name, p] : params) {
    auto it = analytic.find(name);
    if (it == analytic.end())
      raise(ErrorKind::Usage, "grad_check: no analytic gradient for " + name);
    const auto& a = it->second;
    if (a.size() != static_cast<std::size_t>(p.numel()))
      raise(ErrorKind::Shape, "grad_check: gradient size mismatch for " + name);
    double worst = 0.0;
    double worst_abs = 0.0;
    double scale = 0.0;
    for (i64 i = 0; i < p.numel(); ++i) {
      T saved = p.at(i);
      p.at(i) = saved + T(eps);
      double fp = f();
      p.at(i) = saved - T(eps);
      double fm = f();
      p.at(i) = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        raise(ErrorKind::Numerical,
              strprintf("grad_check: non-finite objective at %s[%lld]",
                        name.c_str(), static_cast<long long>(i)));
      double fd = (fp - fm) / (2.0 * eps);
      double denom = std::max({std::abs(fd), std::abs(a[i]), 1e-8});
      worst = std::max(worst, std::abs(fd - a[i]) / denom);
      worst_abs = std::max(worst_abs, std::abs(fd - a[i]));
      scale = std::max({scale, std::abs(fd), std::abs(a[i])});
    }
    report.per_param[name] = worst;
    report.worst = std::max(report.worst, worst);
    double scaled = worst_abs / std::max(scale, 1e-8);
    report.per_param_scaled[name] = scaled;
    report.worst_scaled = std::max(report.worst_scaled, scaled);
  }
  return report;
}

template <typename T>
std::map<std::string, std::vector<double>> grads_as_doubles(
    const std::vector<std::pair<std::string, Tensor<T>>>& params) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, p] : params) {
    std::vector<double> g(p.numel(), 0.0);
    if (p.has_grad())
      for (i64 i = 0; i < p.numel(); ++i) g[i] = static_cast<double>(p.grad()[i]);
    out[name] = std::move(g);
  }
  return out;
}

}  // namespace mmd
