#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgcn/data.hpp"
#include "tgcn/metrics.hpp"
#include "tgcn/model.hpp"
#include "tgcn/stft.hpp"

namespace tgcn {

struct TrainSpec {
  double lr0 = 0.01;
  double momentum = 0.9;
  int decay_every = 100;      // gradient steps between learning-rate decays
  double decay_factor = 0.9;
  int batch_size = 16;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  double keep_negative_fraction = 0.1;
  int eval_every = 100;       // 0: evaluate only after the last step
  double stop_at_auroc = 0.0; // stop early once reached on the eval set; 0 off
  StftSpec stft;              // preprocessing applied to raw samples

  void check() const;
};

// lr0 * decay_factor^floor(step / decay_every); non-increasing in step.
double lr_at(int step, const TrainSpec& spec);

// Plain (non-tape) helper with the same 1e-7 clamp as the tape op.
double bce_loss(double probability, int label);

// v <- mu * v + g; theta <- theta - lr * v (classical momentum).
void sgd_momentum_step(std::vector<NamedTensor>& params,
                       const std::vector<Tensor>& grads,
                       std::vector<Tensor>& velocity, double lr, double mu);

// Keeps every positive; keeps each negative independently with probability
// `keep`. Order is preserved; deterministic per seed.
Dataset subsample_negatives(const Dataset& ds, double keep, std::uint64_t seed);

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  bool evaluated = false;
  double auroc = 0.0, aupr = 0.0, f1 = 0.0, sens97 = 0.0, sens99 = 0.0;
};

// CSV with header step,lr,train_loss,eval_auroc,eval_aupr,eval_f1,
// eval_sens97,eval_sens99; eval columns are empty on non-eval rows.
std::string train_log_csv(const std::vector<TrainLogRow>& log);

struct TrainResult {
  TgcnModel best;        // checkpoint with the best eval AU-ROC
  TgcnModel final_model; // state after the last step
  double best_auroc = 0.0;
  int best_step = 0;
  int steps_run = 0;
  std::vector<TrainLogRow> log;
};

// Subsamples negatives, then runs minibatch SGD with momentum and the step
// schedule. Periodically evaluates on eval_set (when given) and retains the
// checkpoint with the best AU-ROC. Throws DivergenceError on non-finite loss.
TrainResult train(const TgcnModel& model, const Dataset& train_set,
                  const TrainSpec& spec, const Dataset* eval_set);

// Eval-mode scores (probabilities) with labels, for the metrics module.
ScoredLabels score_dataset(TgcnModel& model, const Dataset& ds,
                           const StftSpec& stft);

}  // namespace tgcn
