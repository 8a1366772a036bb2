#include "tgcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tgcn/parallel.hpp"

namespace tgcn {

void TrainSpec::check() const {
  if (lr0 < 0.0) throw ValueError("train spec: negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ValueError("train spec: momentum must be in [0, 1)");
  if (decay_every <= 0) throw ValueError("train spec: decay_every must be > 0");
  if (decay_factor <= 0.0 || decay_factor > 1.0)
    throw ValueError("train spec: decay factor must be in (0, 1]");
  if (batch_size < 1) throw ValueError("train spec: batch size must be >= 1");
  if (max_steps < 0) throw ValueError("train spec: negative step count");
  if (keep_negative_fraction <= 0.0 || keep_negative_fraction > 1.0)
    throw ValueError("train spec: keep fraction must be in (0, 1]");
  if (eval_every < 0) throw ValueError("train spec: negative eval interval");
  stft.check();
}

double lr_at(int step, const TrainSpec& spec) {
  if (step < 0) throw ValueError("lr_at: negative step");
  return spec.lr0 * std::pow(spec.decay_factor, step / spec.decay_every);
}

double bce_loss(double probability, int label) {
  if (label != 0 && label != 1) throw ValueError("bce_loss: label must be 0 or 1");
  constexpr double kEps = 1e-7;
  const double p = std::clamp(probability, kEps, 1.0 - kEps);
  return -(label * std::log(p) + (1 - label) * std::log(1.0 - p));
}

void sgd_momentum_step(std::vector<NamedTensor>& params,
                       const std::vector<Tensor>& grads,
                       std::vector<Tensor>& velocity, double lr, double mu) {
  if (grads.size() != params.size() || velocity.size() != params.size())
    throw ShapeError("sgd step: parameter/gradient/velocity counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i].value;
    const Tensor& g = grads[i];
    Tensor& v = velocity[i];
    if (!theta.same_shape(g) || !theta.same_shape(v))
      throw ShapeError("sgd step: shape mismatch at parameter '" +
                       params[i].name + "'");
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      v[j] = mu * v[j] + g[j];
      theta[j] -= lr * v[j];
    }
  }
}

Dataset subsample_negatives(const Dataset& ds, double keep, std::uint64_t seed) {
  if (keep <= 0.0 || keep > 1.0)
    throw ValueError("subsample: keep fraction must be in (0, 1]");
  Dataset out = ds;
  out.samples.clear();
  Rng rng(derive_seed(seed, 0, "subsample"));
  for (const auto& s : ds.samples) {
    const bool keep_this = s.label == 1 || keep >= 1.0 || rng.bernoulli(keep);
    if (keep_this) out.samples.push_back(s);
  }
  return out;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "step,lr,train_loss,eval_auroc,eval_aupr,eval_f1,eval_sens97,eval_sens99\n";
  for (const auto& row : log) {
    os << row.step << "," << num(row.lr) << "," << num(row.loss) << ",";
    if (row.evaluated)
      os << num(row.auroc) << "," << num(row.aupr) << "," << num(row.f1) << ","
         << num(row.sens97) << "," << num(row.sens99);
    else
      os << ",,,,";
    os << "\n";
  }
  return os.str();
}

namespace {

// STFT of every sample, computed once; samples never change across steps and
// the transform carries no parameters.
std::vector<Tensor> preprocess_all(const Dataset& ds, const StftSpec& stft) {
  std::vector<Tensor> out(ds.samples.size());
  parallel_for(ds.samples.size(), [&](std::size_t i) {
    out[i] = stft_log_magnitude(ds.samples[i].x, stft);
  });
  return out;
}

ScoredLabels score_preprocessed(TgcnModel& model, const Dataset& ds,
                                const std::vector<Tensor>& pre) {
  ScoredLabels scored(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    Tape tape;
    TgcnModel::Binding binding = model.bind(tape);
    auto out = model.forward(tape, binding, pre[i], ds.samples[i].adjacency);
    scored[i] = {tape.value(out.probability)[0], ds.samples[i].label};
  }
  return scored;
}

}  // namespace

ScoredLabels score_dataset(TgcnModel& model, const Dataset& ds,
                           const StftSpec& stft) {
  const Mode saved = model.mode();
  model.set_mode(Mode::Eval);
  ScoredLabels scored = score_preprocessed(model, ds, preprocess_all(ds, stft));
  model.set_mode(saved);
  return scored;
}

TrainResult train(const TgcnModel& model, const Dataset& train_set,
                  const TrainSpec& spec, const Dataset* eval_set) {
  spec.check();
  const Dataset working =
      subsample_negatives(train_set, spec.keep_negative_fraction, spec.seed);
  if (working.samples.empty())
    throw ValueError("train: dataset empty after subsampling");

  TrainResult result;
  result.final_model = model;
  TgcnModel& m = result.final_model;

  const std::vector<Tensor> pre = preprocess_all(working, spec.stft);
  std::vector<Tensor> eval_pre;
  if (eval_set) eval_pre = preprocess_all(*eval_set, spec.stft);

  std::vector<Tensor> velocity;
  velocity.reserve(m.params().size());
  for (const auto& p : m.params()) velocity.emplace_back(p.value.shape());

  Rng order_rng(derive_seed(spec.seed, 0, "order"));
  Rng dropout_rng(derive_seed(spec.seed, 0, "dropout"));
  std::vector<std::size_t> order(working.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();  // forces a shuffle on first use

  result.best = m;
  result.best_auroc = -1.0;
  result.best_step = 0;

  auto evaluate = [&](int step, TrainLogRow& row) {
    if (!eval_set) return;
    m.set_mode(Mode::Eval);
    const ScoredLabels scored = score_preprocessed(m, *eval_set, eval_pre);
    row.evaluated = true;
    row.auroc = au_roc(scored);
    row.aupr = au_pr(scored);
    row.f1 = best_f1(scored).f1;
    row.sens97 = sensitivity_at_specificity(scored, 0.97).sensitivity;
    row.sens99 = sensitivity_at_specificity(scored, 0.99).sensitivity;
    if (row.auroc > result.best_auroc) {
      result.best = m;
      result.best_auroc = row.auroc;
      result.best_step = step;
    }
  };

  for (int step = 0; step < spec.max_steps; ++step) {
    m.set_mode(Mode::Train);
    const double lr = lr_at(step, spec);

    Tape tape;
    TgcnModel::Binding binding = m.bind(tape);
    std::vector<Value> losses;
    losses.reserve(static_cast<std::size_t>(spec.batch_size));
    for (int b = 0; b < spec.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[order_rng.uniform_index(i)]);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      auto out = m.forward(tape, binding, pre[idx],
                           working.samples[idx].adjacency, &dropout_rng);
      losses.push_back(
          tape.bce_loss(out.probability, working.samples[idx].label));
    }
    const Value loss = losses.size() == 1
                           ? losses[0]
                           : tape.reduce(tape.stack(losses, 0), 0, ReduceKind::Mean);
    const double loss_value = tape.value(loss)[0];
    if (!std::isfinite(loss_value))
      throw DivergenceError("training diverged: non-finite loss at step " +
                            std::to_string(step) + " (lr " + std::to_string(lr) +
                            ")");
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i)
      grads.push_back(tape.grad(binding.params[i]));
    sgd_momentum_step(m.params(), grads, velocity, lr, spec.momentum);

    TrainLogRow row;
    row.step = step + 1;
    row.lr = lr;
    row.loss = loss_value;
    const bool last = step + 1 == spec.max_steps;
    if (eval_set && (last || (spec.eval_every > 0 && (step + 1) % spec.eval_every == 0)))
      evaluate(step + 1, row);
    result.log.push_back(row);
    result.steps_run = step + 1;
    if (row.evaluated && spec.stop_at_auroc > 0.0 && row.auroc >= spec.stop_at_auroc)
      break;
  }

  m.set_mode(Mode::Eval);
  if (result.best_auroc < 0.0) {
    result.best = m;
    result.best_auroc = 0.0;
    result.best_step = result.steps_run;
  }
  result.best.set_mode(Mode::Eval);
  return result;
}

}  // namespace tgcn
