#pragma once

// Minibatch Adam training of L_total = L_ELBO + alpha * L_order.

#include "covae/diff/adam.hpp"
#include "covae/model.hpp"
#include "covae/ordering.hpp"
#include "covae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace covae::train {

using diff::RowMatrix;
using diff::Tensor;

enum class OrderInput { samples, means };

struct TrainConfig {
  std::size_t steps = 15600;
  std::size_t batch = 256;
  double lr = 5e-4;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::size_t trace_every = 100;
  std::size_t mc_samples = 1;
  OrderInput order_on = OrderInput::samples;
  ordering::OrderLossConfig order;
  double divergence_threshold = 1e8;
};

struct TraceRow {
  std::size_t step = 0;  // 1-based index of the completed update
  double elbo = 0.0;     // negative ELBO
  double reconstruction = 0.0;
  double kl_z = 0.0;
  double kl_u = 0.0;
  double order_loss = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::size_t steps_done = 0;
  TraceRow last;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, std::vector<TraceRow> partial, std::size_t step)
      : NumericalError(what), trace(std::move(partial)), step(step) {}
  std::vector<TraceRow> trace;
  std::size_t step;
};

// Epoch-shuffled fixed-size minibatches; partial tail batches are dropped.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t n, std::size_t batch, Rng rng) : n_(n), batch_(std::min(batch, n)), rng_(std::move(rng)) {
    if (n == 0 || batch == 0) throw std::invalid_argument("minibatch sampler needs n > 0 and batch > 0");
    perm_.resize(n);
    reshuffle();
  }

  std::size_t batch_size() const { return batch_; }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > n_) reshuffle();
    std::vector<std::size_t> idx(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return idx;
  }

 private:
  void reshuffle() {
    std::iota(perm_.begin(), perm_.end(), 0);
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    pos_ = 0;
  }

  std::size_t n_, batch_, pos_ = 0;
  Rng rng_;
  std::vector<std::size_t> perm_;
};

inline RowMatrix gather_rows(const RowMatrix& x, const std::vector<std::size_t>& idx) {
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline std::vector<double> standard_normal(Rng& rng, std::size_t count) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(count);
  for (double& x : v) x = n(rng);
  return v;
}

// Streams shared by the trainer and by any reference implementation that
// wants to replay exactly the same minibatches and reparameterization noise.
struct TrainingStreams {
  MinibatchSampler batches;
  Rng noise;

  TrainingStreams(std::uint64_t seed, std::size_t n, std::size_t batch)
      : batches(n, batch, make_stream(seed, "batch")), noise(make_stream(seed, "noise")) {}
};

inline TraceRow evaluate_row(std::size_t step, const model::ElboTerms& t, double order_value, double total) {
  TraceRow r;
  r.step = step;
  r.elbo = t.total.item();
  r.reconstruction = t.reconstruction.item();
  r.kl_z = t.kl_z.item();
  r.kl_u = t.kl_u.item();
  r.order_loss = order_value;
  r.total = total;
  return r;
}

// Order loss evaluated for reporting only; NaN if the estimator fails.
inline double monitor_order_loss(const Tensor& z, const ordering::OrderLossConfig& cfg) {
  try {
    return ordering::order_loss(z.detach(), cfg).item();
  } catch (const std::exception&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

using StepCallback = std::function<void(const TraceRow&)>;

inline TrainResult train(model::CovaeModel& m, const RowMatrix& x, const TrainConfig& cfg,
                         const StepCallback& on_trace = {}) {
  if (static_cast<std::size_t>(x.cols()) != m.config().obs_dim) {
    throw ShapeError("train: dataset has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(m.config().obs_dim));
  }
  if (cfg.alpha < 0.0) throw std::invalid_argument("train: alpha must be non-negative");
  if (cfg.mc_samples == 0) throw std::invalid_argument("train: mc_samples must be positive");
  auto params = m.parameters();
  auto adam = diff::AdamState::for_params(params, cfg.lr);
  TrainingStreams streams(cfg.seed, static_cast<std::size_t>(x.rows()), cfg.batch);
  const std::size_t d = m.config().latent_dim;
  const std::size_t B = streams.batches.batch_size();
  TrainResult result;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    TraceRow row;
    try {
      const Tensor xb = Tensor::from_matrix(gather_rows(x, streams.batches.next()));
      std::vector<Tensor> eps;
      for (std::size_t s = 0; s < cfg.mc_samples; ++s)
        eps.push_back(Tensor::constant(B, d, standard_normal(streams.noise, B * d)));
      const auto terms = m.elbo(xb, eps);
      const Tensor& order_input = cfg.order_on == OrderInput::samples ? terms.z : terms.mean;
      Tensor total = terms.total;
      double order_value = 0.0;
      const bool tracing = cfg.trace_every > 0 && (step % cfg.trace_every == 0 || step == cfg.steps);
      if (cfg.alpha > 0.0) {
        const Tensor lo = ordering::order_loss(order_input, cfg.order);
        order_value = lo.item();
        total = diff::add(total, diff::scale(lo, cfg.alpha));
      } else if (tracing) {
        order_value = monitor_order_loss(order_input, cfg.order);
      }
      const double total_value = total.item();
      row = evaluate_row(step, terms, order_value, total_value);
      if (!std::isfinite(total_value) || total_value > cfg.divergence_threshold) {
        throw NumericalError("loss " + std::to_string(total_value) + " exceeds divergence threshold");
      }
      diff::zero_grad(params);
      diff::backward(total);
      diff::adam_step(adam, params);
      if (tracing) {
        result.trace.push_back(row);
        if (on_trace) on_trace(row);
      }
    } catch (const NumericalError& e) {
      if (row.step != 0) result.trace.push_back(row);
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(),
                             std::move(result.trace), step);
    }
    result.last = row;
    result.steps_done = step;
  }
  return result;
}

}  // namespace covae::train
