// SPDX-License-Identifier: Apache-2.0
//
// The four parallelism mechanisms and their composition: synchronous and
// staleness-compensated asynchronous data-parallel updates, column-split
// tensor-parallel matmul, fill-drain pipeline schedules with counted bubble
// accounting, and hash-gated top-k MoE routing.

#pragma once

#include <algorithm>
#include <optional>

#include "parsim/collectives.hpp"
#include "parsim/compression.hpp"
#include "parsim/numerics.hpp"

namespace parsim {

enum class ExecutionMode { sync, async };

struct StrategyConfig {
  std::size_t data_degree = 1;     // P
  std::size_t tensor_degree = 1;   // T
  std::size_t pipeline_stages = 1; // S
  std::size_t micro_batches = 1;   // M
  ExecutionMode mode = ExecutionMode::sync;
  CollectiveAlgorithm collective = CollectiveAlgorithm::ring;
  CompressorConfig compressor;
  double overlap_fraction = 0.0;

  std::size_t devices_required() const {
    return data_degree * tensor_degree * pipeline_stages;
  }

  void validate() const {
    detail::require(data_degree >= 1 && tensor_degree >= 1 && pipeline_stages >= 1 &&
                        micro_batches >= 1,
                    "StrategyConfig: degrees must be >= 1");
    detail::require(overlap_fraction >= 0.0 && overlap_fraction <= 1.0,
                    "StrategyConfig: overlap_fraction must be in [0,1]");
  }

  void validate_against(const Topology& topo) const {
    validate();
    detail::require(devices_required() <= topo.device_count(),
                    "StrategyConfig: P*T*S = " + std::to_string(devices_required()) +
                        " exceeds topology device count " +
                        std::to_string(topo.device_count()));
  }
};

struct HyperParams {
  double learning_rate = 0.01;
  std::size_t batch_size = 1;
  std::size_t steps = 1;

  void validate() const {
    detail::require(learning_rate > 0.0, "HyperParams: learning_rate must be > 0");
    detail::require(batch_size >= 1 && steps >= 1, "HyperParams: counts must be >= 1");
  }
};

/// Tracks, per worker, how many global updates have landed since that worker
/// last pulled parameters.
class StalenessTracker {
 public:
  explicit StalenessTracker(std::size_t workers) : pulled_at_(workers, 0) {}

  std::size_t workers() const { return pulled_at_.size(); }
  std::size_t staleness(std::size_t p) const { return global_updates_ - pulled_at_[p]; }
  void on_pull(std::size_t p) { pulled_at_[p] = global_updates_; }
  void on_global_update() { ++global_updates_; }

 private:
  std::size_t global_updates_ = 0;
  std::vector<std::size_t> pulled_at_;
};

// ---------------------------------------------------------------------------
// Data parallelism

/// Synchronous step: params - eta * mean_p(contribution_p). With a compressor
/// configured, each worker's gradient goes through error feedback and the
/// decompressed message is what enters the mean (compress at the worker,
/// aggregate dense).
inline DenseVector sync_data_parallel_step(const WorkerGroup& workers, const DenseVector& params,
                                           const HyperParams& h, const StrategyConfig& cfg,
                                           const Topology& topo,
                                           std::vector<ErrorFeedbackState>* ef_states = nullptr) {
  std::size_t dim = workers.checked_dim();
  detail::require(dim == params.size(), "sync_data_parallel_step: worker/param dim mismatch");

  DenseVector mean;
  if (cfg.compressor.kind == CompressorKind::none) {
    mean = allreduce_mean(workers, cfg.collective, topo);
  } else {
    std::vector<ErrorFeedbackState> transient;
    std::vector<ErrorFeedbackState>* states = ef_states;
    if (states == nullptr) {
      transient.assign(workers.size(), ErrorFeedbackState::zeros(dim));
      states = &transient;
    }
    detail::require(states->size() == workers.size(),
                    "sync_data_parallel_step: one error-feedback state per worker required");
    WorkerGroup decompressed;
    for (std::size_t p = 0; p < workers.size(); ++p) {
      auto msg = ef_compress_step((*states)[p], workers.buffers[p], cfg.compressor);
      decompressed.buffers.push_back(decompress(msg));
    }
    mean = allreduce_mean(decompressed, cfg.collective, topo);
  }
  return vec_axpy(-h.learning_rate, mean, params);
}

inline DenseVector sync_data_parallel_step(const WorkerGroup& workers, const DenseVector& params,
                                           const HyperParams& h, const StrategyConfig& cfg,
                                           std::vector<ErrorFeedbackState>* ef_states = nullptr) {
  Topology flat;
  flat.devices_per_node = std::max<std::size_t>(workers.size(), 1);
  return sync_data_parallel_step(workers, params, h, cfg, flat, ef_states);
}

/// Delay-compensated asynchronous update: params - eta * g / (1 + tau).
/// tau = 0 reduces to the plain synchronous update bit-for-bit.
inline DenseVector async_step(const DenseVector& params, const DenseVector& g_p, std::size_t tau,
                              double eta) {
  double scale = eta / (1.0 + static_cast<double>(tau));
  return vec_axpy(-scale, g_p, params);
}

// ---------------------------------------------------------------------------
// Tensor parallelism

/// Column-partitions A (and correspondingly x) into T shards, computes the T
/// partial products and folds them in shard order, mirroring a sum
/// all-reduce. A non-divisible column count just makes the last shard
/// narrower, which is equivalent to zero-padding.
inline DenseVector tensor_parallel_matmul(const DenseMatrix& a, const DenseVector& x,
                                          std::size_t T) {
  detail::require(T >= 1, "tensor_parallel_matmul: T must be >= 1");
  detail::require(a.cols == x.size(), "tensor_parallel_matmul: shape mismatch");
  std::size_t shard = (a.cols + T - 1) / T;
  DenseVector acc(a.rows, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t lo = std::min(a.cols, t * shard);
    std::size_t hi = std::min(a.cols, (t + 1) * shard);
    if (lo == hi) continue;
    DenseVector partial(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
      double s = 0.0;
      for (std::size_t k = lo; k < hi; ++k) s += a.at(i, k) * x[k];
      partial[i] = s;
    }
    vec_add_inplace(acc, partial);
  }
  check_finite(acc, "tensor_parallel_matmul");
  return acc;
}

// ---------------------------------------------------------------------------
// Pipeline parallelism

enum class PipelinePhase { forward, backward };

struct PipelineSlot {
  std::size_t stage = 0;
  std::size_t micro_batch = 0;
  PipelinePhase phase = PipelinePhase::forward;
  double start = 0.0;
  double end = 0.0;
};

struct PipelineSchedule {
  std::size_t stages = 0;
  std::size_t micro_batches = 0;
  std::vector<PipelineSlot> slots;

  double span() const {
    double s = 0.0;
    for (const auto& slot : slots) s = std::max(s, slot.end);
    return s;
  }
};

/// Canonical fill-drain (GPipe-style) schedule: every micro-batch runs its
/// forward through the stages in order, and backwards begin only after the
/// whole forward phase has drained.
inline PipelineSchedule build_pipeline_schedule(std::size_t S, std::size_t M, double fwd_cost,
                                                double bwd_cost) {
  detail::require(S >= 1 && M >= 1, "build_pipeline_schedule: S and M must be >= 1");
  detail::require(fwd_cost > 0.0 && bwd_cost > 0.0,
                  "build_pipeline_schedule: stage costs must be > 0");
  PipelineSchedule sched;
  sched.stages = S;
  sched.micro_batches = M;

  std::vector<std::vector<double>> f_end(M, std::vector<double>(S, 0.0));
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t s = 0; s < S; ++s) {
      double ready = 0.0;
      if (m > 0) ready = std::max(ready, f_end[m - 1][s]);
      if (s > 0) ready = std::max(ready, f_end[m][s - 1]);
      f_end[m][s] = ready + fwd_cost;
      sched.slots.push_back({s, m, PipelinePhase::forward, ready, f_end[m][s]});
    }
  }
  double forward_done = f_end[M - 1][S - 1];

  std::vector<std::vector<double>> b_end(M, std::vector<double>(S, 0.0));
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t si = 0; si < S; ++si) {
      std::size_t s = S - 1 - si;  // backward flows last stage -> first
      double ready = forward_done;
      if (m > 0) ready = std::max(ready, b_end[m - 1][s]);
      if (si > 0) ready = std::max(ready, b_end[m][s + 1]);
      b_end[m][s] = ready + bwd_cost;
      sched.slots.push_back({s, m, PipelinePhase::backward, ready, b_end[m][s]});
    }
  }
  return sched;
}

/// Idle fraction measured by directly counting occupied time per stage on
/// the schedule; no closed-form shortcut.
inline double bubble_fraction(const PipelineSchedule& sched) {
  detail::require(sched.stages >= 1 && !sched.slots.empty(), "bubble_fraction: empty schedule");
  double span = sched.span();
  if (span <= 0.0) return 0.0;
  std::vector<double> busy(sched.stages, 0.0);
  for (const auto& slot : sched.slots) busy[slot.stage] += slot.end - slot.start;
  double idle = 0.0;
  for (double b : busy) idle += span - b;
  return idle / (static_cast<double>(sched.stages) * span);
}

// ---------------------------------------------------------------------------
// Mixture of experts

struct MoEConfig {
  std::size_t num_experts = 1;  // E
  std::size_t active_k = 1;     // experts activated per input
  std::uint64_t gate_seed = 0;

  void validate() const {
    detail::require(num_experts >= 1, "MoEConfig: num_experts must be >= 1");
    detail::require(active_k >= 1 && active_k <= num_experts,
                    "MoEConfig: active_k must be in [1, num_experts]");
  }
};

struct LoadBalanceReport {
  std::vector<std::size_t> expert_counts;
  double imbalance = 1.0;  // max_count / mean_count
};

struct MoERouting {
  std::vector<std::vector<std::size_t>> assignments;  // per input, sorted expert ids
  LoadBalanceReport report;
};

inline double moe_gate_score(std::uint64_t gate_seed, std::uint64_t input_id,
                             std::uint64_t expert_id) {
  std::uint64_t h = mix64(gate_seed ^ (input_id * 0x9E3779B97F4A7C15ULL));
  h = mix64(h ^ (expert_id * 0xBF58476D1CE4E5B9ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Assigns each input to its active_k top-scoring experts under the seeded
/// hash gate. Ties break toward the lower expert id.
inline MoERouting moe_route(const std::vector<std::uint64_t>& batch, const MoEConfig& cfg) {
  cfg.validate();
  MoERouting out;
  out.assignments.reserve(batch.size());
  out.report.expert_counts.assign(cfg.num_experts, 0);

  std::vector<std::size_t> experts(cfg.num_experts);
  for (std::uint64_t input : batch) {
    std::vector<double> scores(cfg.num_experts);
    for (std::size_t e = 0; e < cfg.num_experts; ++e) {
      scores[e] = moe_gate_score(cfg.gate_seed, input, e);
    }
    std::iota(experts.begin(), experts.end(), 0);
    std::stable_sort(experts.begin(), experts.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> chosen(experts.begin(),
                                    experts.begin() + static_cast<long>(cfg.active_k));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t e : chosen) out.report.expert_counts[e]++;
    out.assignments.push_back(std::move(chosen));
  }

  double total = static_cast<double>(batch.size() * cfg.active_k);
  if (total > 0) {
    double mean = total / static_cast<double>(cfg.num_experts);
    std::size_t max_count =
        *std::max_element(out.report.expert_counts.begin(), out.report.expert_counts.end());
    out.report.imbalance = static_cast<double>(max_count) / mean;
  }
  return out;
}

inline const char* to_string(ExecutionMode m) {
  return m == ExecutionMode::sync ? "sync" : "async";
}

inline const char* to_string(CompressorKind k) {
  switch (k) {
    case CompressorKind::none: return "none";
    case CompressorKind::onebit: return "onebit";
    case CompressorKind::topk: return "topk";
  }
  return "?";
}

}  // namespace parsim
