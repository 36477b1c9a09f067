// SPDX-License-Identifier: Apache-2.0
#include "emofuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "emofuse/error.hpp"

namespace emofuse::ad {

namespace {

double evaluate(const LossBuilder &build) {
  Tape tape;
  tape.setGradientsEnabled(false);
  Var loss = build(tape);
  if (tape.stochastic())
    throw ContractError("gradient check on a stochastic graph");
  return loss.value().item();
}

std::vector<std::size_t> pickCoordinates(std::size_t n, std::size_t limit,
                                         std::mt19937_64 &rng) {
  std::vector<std::size_t> idx;
  if (limit == 0 || limit >= n) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  // Partial Fisher-Yates over the implicit identity permutation; only
  // displaced slots are stored.
  std::unordered_map<std::size_t, std::size_t> moved;
  auto at = [&](std::size_t i) {
    auto it = moved.find(i);
    return it == moved.end() ? i : it->second;
  };
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + rng() % (n - i);
    const std::size_t vi = at(i), vj = at(j);
    idx.push_back(vj);
    moved[j] = vi;
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

} // namespace

GradCheckReport finiteDiffCheck(const LossBuilder &build,
                                const std::vector<Parameter *> &params,
                                const GradCheckOptions &options) {
  if (!(options.eps > 0.0))
    throw ContractError("finite-difference eps must be positive");
  for (Parameter *p : params)
    p->zeroGrad();

  double base = 0.0;
  {
    Tape tape;
    Var loss = build(tape);
    if (tape.stochastic())
      throw ContractError("gradient check on a stochastic graph (dropout in "
                          "train mode?)");
    base = loss.value().item();
    tape.backward(loss);
  }
  if (evaluate(build) != base)
    throw ContractError("gradient check on a non-deterministic graph");

  std::mt19937_64 rng(options.samplingSeed);
  GradCheckReport report;
  for (Parameter *p : params) {
    // Probes run with gradients disabled, so p->grad stays the analytic one.
    const Tensor &analytic = p->grad;
    ParameterError err;
    err.name = p->name;
    for (std::size_t i :
         pickCoordinates(p->value.numel(), options.maxCoordsPerParameter, rng)) {
      const double a = analytic[i];
      auto measure = [&](double eps, double &numeric) {
        const double saved = p->value[i];
        p->value[i] = saved + eps;
        const double up = evaluate(build);
        p->value[i] = saved - eps;
        const double down = evaluate(build);
        p->value[i] = saved;
        numeric = (up - down) / (2.0 * eps);
        const double denom =
            std::max({std::abs(a), std::abs(numeric), options.scaleFloor});
        return std::abs(a - numeric) / denom;
      };
      double numeric = 0.0;
      double rel = measure(options.eps, numeric);
      if (options.narrowAbove > 0.0 && rel > options.narrowAbove) {
        double narrowNumeric = 0.0;
        const double narrowRel = measure(options.eps / 100.0, narrowNumeric);
        ++report.coordinatesNarrowed;
        if (narrowRel < rel) {
          rel = narrowRel;
          numeric = narrowNumeric;
        }
      }
      ++report.coordinatesChecked;
      if (rel >= err.maxRelError) {
        err.maxRelError = rel;
        err.worstIndex = i;
        err.analytic = a;
        err.numeric = numeric;
      }
    }
    report.maxRelError = std::max(report.maxRelError, err.maxRelError);
    report.perParameter.push_back(std::move(err));
  }
  return report;
}

} // namespace emofuse::ad
