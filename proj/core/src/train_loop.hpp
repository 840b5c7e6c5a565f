#pragma once

// Generic AdamW step loop shared by the feature-encoder trainer and the
// cross-subject ceiling trainer. Deterministic: batch order, update order,
// and eval cadence depend only on the configs and seeds.

#include "aenc/encoder.hpp"
#include "aenc/trainer.hpp"
#include "model_math.hpp"

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace aenc::detail {

template <class S>
struct OptStateT {
  std::vector<MatT<S>> moment1, moment2;
  long step = 0;
};

template <class S>
void adamw_step_t(const std::vector<BlockRefT<S>>& params,
                  const std::vector<BlockRefT<S>>& grads, OptStateT<S>& state,
                  double lr, double weight_decay, double beta1, double beta2,
                  double eps) {
  if (params.size() != grads.size())
    throw std::runtime_error("adamw: parameter/gradient block mismatch");
  if (state.moment1.empty()) {
    for (const auto& b : params) {
      state.moment1.push_back(MatT<S>::Zero(b.value->rows(), b.value->cols()));
      state.moment2.push_back(MatT<S>::Zero(b.value->rows(), b.value->cols()));
    }
  }
  for (const auto& g : grads)
    if (!g.value->allFinite())
      throw std::runtime_error("adamw: non-finite gradient in block " + g.name);

  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
  for (size_t i = 0; i < params.size(); ++i) {
    MatT<S>& p = *params[i].value;
    const MatT<S>& g = *grads[i].value;
    MatT<S>& m1 = state.moment1[i];
    MatT<S>& m2 = state.moment2[i];
    m1 = b1 * m1 + (S(1) - b1) * g;
    m2.array() = b2 * m2.array() + (S(1) - b2) * g.array().square();
    // decoupled decay on the pre-step parameters
    const MatT<S> update =
        (m1.array() / static_cast<S>(bc1)) /
        ((m2.array() / static_cast<S>(bc2)).sqrt() + static_cast<S>(eps));
    p.array() -= static_cast<S>(lr) * (update.array() + static_cast<S>(weight_decay) * p.array());
  }
}

struct StepRecord {
  long step;
  double loss;
};

template <class Params>
struct LoopResult {
  Params best;
  double best_score = std::numeric_limits<double>::quiet_NaN();
  long best_step = -1;
  std::vector<EvalPoint> evals;
  std::vector<std::pair<long, double>> losses;
};

// next_batch(step) -> Batch; loss_grad(params, batch, grads) -> double;
// collect(Params&) -> block refs; make_zeros() -> Params; evaluate(params)
// -> validation score (larger is better).
template <class S, class Params, class MakeZeros, class Collect, class NextBatch,
          class LossGrad, class Evaluate>
LoopResult<Params> run_steps(Params params, const TrainConfig& cfg,
                             MakeZeros make_zeros, Collect collect,
                             NextBatch next_batch, LossGrad loss_grad,
                             Evaluate evaluate) {
  LoopResult<Params> result;
  OptStateT<S> opt;
  auto param_blocks = collect(params);
  bool have_best = false;
  for (long step = 1; step <= cfg.max_steps; ++step) {
    auto batch = next_batch(step);
    Params grads = make_zeros();
    auto grad_blocks = collect(grads);
    const double step_loss = loss_grad(params, batch, grads);
    adamw_step_t<S>(param_blocks, grad_blocks, opt, cfg.lr, cfg.weight_decay,
                    cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    result.losses.emplace_back(step, step_loss);
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double score = evaluate(params);
      result.evals.push_back({step, step_loss, score});
      if (!have_best || score > result.best_score) {
        result.best = params;
        result.best_score = score;
        result.best_step = step;
        have_best = true;
      }
    }
  }
  if (!have_best) result.best = std::move(params);
  return result;
}

}  // namespace aenc::detail
