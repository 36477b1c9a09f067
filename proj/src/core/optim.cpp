// SPDX-License-Identifier: Apache-2.0
#include "emofuse/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "emofuse/error.hpp"
#include "emofuse/textio.hpp"

namespace emofuse::optim {

void sgdStep(Tensor &param, const Tensor &grad, double lr) {
  if (param.shape() != grad.shape())
    throw ShapeError("sgd step: parameter " + shapeToString(param.shape()) +
                     " vs gradient " + shapeToString(grad.shape()));
  for (std::size_t i = 0; i < param.numel(); ++i)
    param[i] -= lr * grad[i];
}

void sgdStep(std::span<Parameter *const> params, double lr) {
  for (Parameter *p : params)
    sgdStep(p->value, p->grad, lr);
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg_.epsilon > 0.0))
    throw ConfigError("Adam epsilon must be positive");
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 &&
        cfg_.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
}

Adam::Moments &Adam::momentsFor(const std::string &key, const Shape &shape) {
  auto it = moments_.find(key);
  if (it == moments_.end())
    it = moments_.emplace(key, Moments{Tensor(shape), Tensor(shape)}).first;
  if (it->second.m.shape() != shape)
    throw ShapeError("Adam state for " + key + " has shape " +
                     shapeToString(it->second.m.shape()) + ", parameter is " +
                     shapeToString(shape));
  return it->second;
}

void Adam::advance() {
  if (t_ == std::numeric_limits<std::uint64_t>::max())
    throw NumericError("Adam step counter overflow");
  ++t_;
}

void Adam::update(Moments &mo, Tensor &param, const Tensor &grad,
                  double lr) const {
  if (param.shape() != grad.shape())
    throw ShapeError("Adam step: parameter " + shapeToString(param.shape()) +
                     " vs gradient " + shapeToString(grad.shape()));
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * g;
    mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * g * g;
    const double mhat = mo.m[i] / c1;
    const double vhat = mo.v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
  }
}

void Adam::step(std::span<Parameter *const> params, double lr) {
  advance();
  for (Parameter *p : params)
    update(momentsFor(p->name, p->value.shape()), p->value, p->grad, lr);
}

void Adam::step(const std::string &key, Tensor &param, const Tensor &grad,
                double lr) {
  advance();
  update(momentsFor(key, param.shape()), param, grad, lr);
}

const Tensor *Adam::firstMoment(const std::string &key) const {
  auto it = moments_.find(key);
  return it == moments_.end() ? nullptr : &it->second.m;
}

const Tensor *Adam::secondMoment(const std::string &key) const {
  auto it = moments_.find(key);
  return it == moments_.end() ? nullptr : &it->second.v;
}

double lrAt(const LrSchedule &s, std::uint64_t step) {
  if (s.interval == 0)
    throw ConfigError("learning-rate decay interval must be positive");
  if (s.staircase)
    return s.initial * std::pow(s.decay, static_cast<double>(step / s.interval));
  return s.initial * std::pow(s.decay, static_cast<double>(step) /
                                           static_cast<double>(s.interval));
}

std::size_t StagedPlan::totalEpochs() const {
  std::size_t n = 0;
  for (const auto &s : stages)
    n += s.epochs;
  return n;
}

StagedPlan parsePlan(const std::string &spec) {
  StagedPlan plan;
  for (auto part : text::split(spec, ';')) {
    part = text::trim(part);
    if (part.empty())
      continue;
    auto colon = part.find(':');
    if (colon == std::string_view::npos)
      throw ConfigError("stage '" + std::string(part) +
                        "' must look like <epochs>:<group>[+<group>...]");
    auto epochs = text::parseInt(part.substr(0, colon));
    if (!epochs || *epochs <= 0)
      throw ConfigError("stage '" + std::string(part) +
                        "' needs a positive epoch count");
    Stage st;
    st.epochs = static_cast<std::size_t>(*epochs);
    for (auto g : text::split(part.substr(colon + 1), '+')) {
      g = text::trim(g);
      if (g.empty())
        throw ConfigError("stage '" + std::string(part) + "' has an empty group");
      st.groups.emplace_back(g);
    }
    plan.stages.push_back(std::move(st));
  }
  if (plan.stages.empty())
    throw ConfigError("training plan has no stages");
  return plan;
}

std::string formatPlan(const StagedPlan &plan) {
  std::string out;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    if (i)
      out += ';';
    out += std::to_string(plan.stages[i].epochs) + ":";
    for (std::size_t g = 0; g < plan.stages[i].groups.size(); ++g) {
      if (g)
        out += '+';
      out += plan.stages[i].groups[g];
    }
  }
  return out;
}

std::vector<HistoryRow> runStagedTraining(TrainingTask &task,
                                          const StagedPlan &plan,
                                          const OptimizerConfig &cfg) {
  if (!task.params || !task.beginEpoch || !task.runBatch)
    throw ContractError("training task is incomplete");
  nn::ParameterStore &store = *task.params;
  const auto known = store.groups();

  // Resolve every stage up front so a bad plan fails before any update.
  std::vector<std::vector<Parameter *>> updated;
  for (const Stage &st : plan.stages) {
    if (st.epochs == 0)
      throw ConfigError("stage with zero epochs");
    bool all = false;
    for (const auto &g : st.groups) {
      if (g == "all") {
        all = true;
      } else if (std::find(known.begin(), known.end(), g) == known.end()) {
        std::string list;
        for (const auto &k : known)
          list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("unknown parameter group '" + g + "' (model has: " +
                          list + ")");
      }
    }
    std::vector<Parameter *> ps;
    for (Parameter *p : store.trainable())
      if (all || std::find(st.groups.begin(), st.groups.end(), p->group) !=
                     st.groups.end())
        ps.push_back(p);
    updated.push_back(std::move(ps));
  }

  Adam adam(cfg.adam);
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::vector<HistoryRow> history;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    for (std::size_t e = 0; e < plan.stages[s].epochs; ++e) {
      ++epoch;
      const std::size_t batches = task.beginEpoch(epoch);
      double lossSum = 0.0;
      std::size_t correct = 0, count = 0;
      double lr = lrAt(cfg.schedule, step);
      for (std::size_t b = 0; b < batches; ++b) {
        store.zeroGrad();
        BatchOutcome out = task.runBatch(b);
        lossSum += out.loss * static_cast<double>(out.count);
        correct += out.correct;
        count += out.count;
        lr = lrAt(cfg.schedule, step);
        if (cfg.kind == OptimizerKind::kAdam)
          adam.step(updated[s], lr);
        else
          sgdStep(updated[s], lr);
        ++step;
      }
      HistoryRow row;
      row.step = step;
      row.epoch = epoch;
      row.lr = lr;
      row.loss = count ? lossSum / static_cast<double>(count) : 0.0;
      row.trainAccuracy =
          count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0;
      history.push_back(row);
      if (task.endEpoch)
        task.endEpoch(row);
    }
  }
  return history;
}

std::string historyCsv(const std::vector<HistoryRow> &rows) {
  std::string out = "step,epoch,lr,loss,train_accuracy\n";
  for (const auto &r : rows)
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," +
           text::formatDouble(r.lr) + "," + text::formatDouble(r.loss) + "," +
           text::formatDouble(r.trainAccuracy) + "\n";
  return out;
}

} // namespace emofuse::optim
