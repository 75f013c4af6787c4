// SPDX-License-Identifier: Apache-2.0
//
// Deterministic iteration-time model. Given a strategy, a topology and cost
// parameters it produces the compute/communication decomposition of one
// training iteration, a per-device event timeline, and the derived report
// metrics (throughput, speedup, utilization, communication overhead).
//
// The engine models time only; the numerical effects of compression and
// staleness live in the trainer. An iteration is composed as
//
//   wall = serial overhead + pipeline span + (comm - overlap credit)
//
// where the pipeline span comes from the fill-drain schedule, communication
// is costed with the alpha-beta collective model, and the overlap credit is
// overlap_fraction * min(compute, comm).

#pragma once

#include <array>
#include <map>
#include <string>

#include "parsim/strategies.hpp"

namespace parsim {

struct CostParams {
  double compute_time_per_sample_per_device = 1e-3;  // fwd+bwd seconds per sample
  std::vector<double> pipeline_stage_cost_split;     // empty = uniform across stages
  double activation_bytes_per_microbatch = 0.0;
  double gradient_bytes = 0.0;
  double fixed_overhead_per_iteration = 0.0;  // data loading / launch / optimizer serial time

  void validate(std::size_t stages) const {
    detail::require(compute_time_per_sample_per_device >= 0.0 &&
                        activation_bytes_per_microbatch >= 0.0 && gradient_bytes >= 0.0 &&
                        fixed_overhead_per_iteration >= 0.0,
                    "CostParams: negative cost");
    if (!pipeline_stage_cost_split.empty()) {
      detail::require(pipeline_stage_cost_split.size() == stages,
                      "CostParams: pipeline_stage_cost_split size != pipeline stages");
      double sum = 0.0;
      for (double f : pipeline_stage_cost_split) {
        detail::require(f >= 0.0, "CostParams: negative stage split");
        sum += f;
      }
      detail::require(std::abs(sum - 1.0) <= 1e-9, "CostParams: stage splits must sum to 1");
    }
  }
};

struct IterationProfile {
  double compute_time = 0.0;    // busy compute on the critical device
  double comm_time = 0.0;       // total modeled communication
  double overlapped_time = 0.0; // comm hidden under compute
  double idle_time = 0.0;       // pipeline bubbles + serial overhead

  double non_overlapped_comm() const { return comm_time - overlapped_time; }
  double wall_time() const { return compute_time + idle_time + non_overlapped_comm(); }
};

enum class EventKind { compute, comm };

struct TimelineEvent {
  std::size_t iteration = 0;
  std::size_t device = 0;
  EventKind kind = EventKind::compute;
  double start = 0.0;
  double end = 0.0;
};

/// Deterministic event ordering: time first, ties broken by device id then
/// event kind, so traces are byte-identical across runs and platforms.
struct EventQueue {
  std::vector<TimelineEvent> events;

  void push(TimelineEvent e) { events.push_back(e); }

  void finalize() {
    std::stable_sort(events.begin(), events.end(),
                     [](const TimelineEvent& a, const TimelineEvent& b) {
                       if (a.start != b.start) return a.start < b.start;
                       if (a.iteration != b.iteration) return a.iteration < b.iteration;
                       if (a.device != b.device) return a.device < b.device;
                       return static_cast<int>(a.kind) < static_cast<int>(b.kind);
                     });
  }
};

struct SimReport {
  double throughput = 0.0;          // samples/second
  double speedup = 1.0;             // vs single-device baseline, same costs
  double device_utilization = 0.0;  // busy compute / (devices * wall)
  double comm_overhead_ms = 0.0;    // non-overlapped comm per iteration
  double comm_share = 0.0;          // non-overlapped comm / wall
  double memory_utilization = 0.0;  // modeled allocated bytes / device capacity
};

namespace detail {

// Forward/backward split of a stage's per-microbatch cost. The 1:2 ratio is
// the usual fwd:bwd work balance; the pipeline span is insensitive to it.
inline constexpr double kForwardShare = 1.0 / 3.0;

// Modeled accelerator memory per device (A100-40GB class).
inline constexpr double kDeviceMemoryBytes = 40e9;

struct IterationBreakdown {
  IterationProfile profile;
  double exec_span = 0.0;          // pipeline/compute span, no overhead or comm
  double busy_per_stage_device = 0.0;
  std::vector<double> stage_busy;  // busy seconds per stage index
  PipelineSchedule schedule;       // slots for S > 1, empty otherwise
  double comm_grad = 0.0;
  double comm_tensor = 0.0;
  double comm_pipe = 0.0;
};

inline IterationBreakdown simulate_iteration_detail(const StrategyConfig& cfg,
                                                    const Topology& topo, const CostParams& costs,
                                                    std::size_t global_batch) {
  topo.validate();
  cfg.validate_against(topo);
  costs.validate(cfg.pipeline_stages);
  require(global_batch >= 1, "simulate_iteration: global_batch must be >= 1");

  const std::size_t P = cfg.data_degree;
  const std::size_t T = cfg.tensor_degree;
  const std::size_t S = cfg.pipeline_stages;
  const double cps = costs.compute_time_per_sample_per_device;

  // Shards that do not divide evenly are padded up to the next whole sample.
  const std::size_t replica_batch = (global_batch + P - 1) / P;
  const std::size_t mb_count = S > 1 ? cfg.micro_batches : 1;
  const std::size_t mb_samples = (replica_batch + mb_count - 1) / mb_count;

  std::vector<double> split = costs.pipeline_stage_cost_split;
  if (split.empty()) split.assign(S, 1.0 / static_cast<double>(S));

  IterationBreakdown out;
  out.stage_busy.assign(S, 0.0);

  double c_max = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    double c_s = static_cast<double>(mb_samples) * cps * split[s] / static_cast<double>(T);
    out.stage_busy[s] = c_s * static_cast<double>(mb_count);
    c_max = std::max(c_max, c_s);
  }

  double bubble_idle = 0.0;
  if (S == 1) {
    out.exec_span = static_cast<double>(replica_batch) * cps / static_cast<double>(T);
    out.stage_busy[0] = out.exec_span;
    out.busy_per_stage_device = out.exec_span;
  } else {
    out.schedule = build_pipeline_schedule(S, mb_count, std::max(c_max * kForwardShare, 1e-300),
                                           std::max(c_max * (1.0 - kForwardShare), 1e-300));
    out.exec_span = out.schedule.span();
    out.busy_per_stage_device = c_max * static_cast<double>(mb_count);
    bubble_idle = out.exec_span - out.busy_per_stage_device;
  }

  // Data-parallel gradient all-reduce, message scaled by the compressor.
  if (P > 1) {
    std::size_t grad_dim = std::max<std::size_t>(1, static_cast<std::size_t>(costs.gradient_bytes / 8.0));
    double ratio = compression_ratio_for(cfg.compressor, grad_dim);
    double msg = costs.gradient_bytes / ratio;
    out.comm_grad = comm_cost(cfg.collective, msg, P, topo, cfg.devices_required());
  }

  // Tensor-parallel partial-sum all-reduce: one per micro-batch per stage per
  // direction, ring over the T adjacent devices of the group.
  if (T > 1) {
    double per_op = comm_cost(CollectiveAlgorithm::ring, costs.activation_bytes_per_microbatch,
                              T, topo, T);
    out.comm_tensor = 2.0 * static_cast<double>(mb_count) * static_cast<double>(S) * per_op;
  }

  // Pipeline stage-boundary activation transfers, forward and backward.
  if (S > 1) {
    Link link = slowest_link_spanning(topo, T * S);
    double per_op = link.latency + costs.activation_bytes_per_microbatch / link.bandwidth;
    out.comm_pipe = 2.0 * static_cast<double>(mb_count) * static_cast<double>(S - 1) * per_op;
  }

  IterationProfile& prof = out.profile;
  prof.compute_time = out.busy_per_stage_device;
  prof.comm_time = out.comm_grad + out.comm_tensor + out.comm_pipe;
  prof.overlapped_time = cfg.overlap_fraction * std::min(prof.compute_time, prof.comm_time);
  prof.idle_time = bubble_idle + costs.fixed_overhead_per_iteration;
  return out;
}

}  // namespace detail

inline IterationProfile simulate_iteration(const StrategyConfig& cfg, const Topology& topo,
                                           const CostParams& costs, std::size_t global_batch) {
  return detail::simulate_iteration_detail(cfg, topo, costs, global_batch).profile;
}

/// Event timeline for `iterations` identical iterations. Layout per replica:
/// device id = replica*(T*S) + stage*T + tensor_rank. Compute events follow
/// the pipeline schedule slots (shifted past the serial overhead); the gaps
/// between them are the fill/drain bubbles. The non-overlapped part of
/// communication is appended as one comm window per device, so the last event
/// of each iteration ends exactly at its wall time.
inline EventQueue build_timeline(const StrategyConfig& cfg, const Topology& topo,
                                 const CostParams& costs, std::size_t global_batch,
                                 std::size_t iterations) {
  auto d = detail::simulate_iteration_detail(cfg, topo, costs, global_batch);
  const double wall = d.profile.wall_time();
  const double overhead = costs.fixed_overhead_per_iteration;
  const std::size_t S = cfg.pipeline_stages;
  const std::size_t T = cfg.tensor_degree;
  const double nonov = d.profile.non_overlapped_comm();

  EventQueue q;
  for (std::size_t it = 0; it < iterations; ++it) {
    double base = static_cast<double>(it) * wall;
    for (std::size_t r = 0; r < cfg.data_degree; ++r) {
      for (std::size_t t = 0; t < T; ++t) {
        if (S == 1) {
          std::size_t device = r * T + t;
          double c0 = base + overhead;
          q.push({it, device, EventKind::compute, c0, c0 + d.exec_span});
        } else {
          for (const auto& slot : d.schedule.slots) {
            std::size_t device = r * (T * S) + slot.stage * T + t;
            q.push({it, device, EventKind::compute, base + overhead + slot.start,
                    base + overhead + slot.end});
          }
        }
      }
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t t = 0; t < T; ++t) {
          if (nonov > 0.0) {
            std::size_t device = r * (T * S) + s * T + t;
            double m0 = base + overhead + d.exec_span;
            q.push({it, device, EventKind::comm, m0, m0 + nonov});
          }
        }
      }
    }
  }
  q.finalize();
  return q;
}

inline SimReport simulate_run(const StrategyConfig& cfg, const Topology& topo,
                              const CostParams& costs, std::size_t global_batch,
                              std::size_t iterations) {
  detail::require(iterations >= 1, "simulate_run: iterations must be >= 1");
  auto d = detail::simulate_iteration_detail(cfg, topo, costs, global_batch);
  const double wall = d.profile.wall_time();

  StrategyConfig baseline;
  baseline.collective = CollectiveAlgorithm::naive;
  auto base = detail::simulate_iteration_detail(baseline, topo, costs, global_batch);
  double baseline_throughput = static_cast<double>(global_batch) / base.profile.wall_time();

  SimReport rep;
  rep.throughput = static_cast<double>(global_batch) / wall;
  rep.speedup = rep.throughput / baseline_throughput;

  double busy_total = 0.0;
  for (double b : d.stage_busy) busy_total += b * static_cast<double>(cfg.tensor_degree);
  busy_total *= static_cast<double>(cfg.data_degree);
  double devices = static_cast<double>(cfg.devices_required());
  rep.device_utilization = busy_total / (devices * wall);

  rep.comm_overhead_ms = d.profile.non_overlapped_comm() * 1000.0;
  rep.comm_share = d.profile.non_overlapped_comm() / wall;

  double model_shard = cfg.tensor_degree * cfg.pipeline_stages;
  double alloc = 2.0 * costs.gradient_bytes / model_shard +
                 costs.activation_bytes_per_microbatch *
                     static_cast<double>(cfg.pipeline_stages > 1 ? cfg.micro_batches : 1);
  rep.memory_utilization = std::min(1.0, alloc / detail::kDeviceMemoryBytes);
  return rep;
}

/// Mean non-overlapped communication share across iteration profiles.
inline double comm_share_breakdown(const std::vector<IterationProfile>& profiles) {
  detail::require(!profiles.empty(), "comm_share_breakdown: no profiles");
  double acc = 0.0;
  for (const auto& p : profiles) acc += p.non_overlapped_comm() / p.wall_time();
  return acc / static_cast<double>(profiles.size());
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationTarget {
  std::string name;
  StrategyConfig strategy;
  std::size_t global_batch = 1;
  double observed_throughput = 0.0;
};

struct CalibrationResult {
  CostParams params;
  std::vector<double> residuals;  // per target, relative throughput error
  double objective = 0.0;         // sum of squared relative errors
};

namespace detail {

enum class FreeParam { compute, gradient_bytes, activation_bytes, fixed_overhead };

inline FreeParam parse_free_param(const std::string& name) {
  if (name == "compute_time_per_sample_per_device") return FreeParam::compute;
  if (name == "gradient_bytes") return FreeParam::gradient_bytes;
  if (name == "activation_bytes_per_microbatch") return FreeParam::activation_bytes;
  if (name == "fixed_overhead_per_iteration") return FreeParam::fixed_overhead;
  fail("calibrate: unknown free parameter '" + name + "'");
}

inline double& param_ref(CostParams& p, FreeParam which) {
  switch (which) {
    case FreeParam::compute: return p.compute_time_per_sample_per_device;
    case FreeParam::gradient_bytes: return p.gradient_bytes;
    case FreeParam::activation_bytes: return p.activation_bytes_per_microbatch;
    case FreeParam::fixed_overhead: return p.fixed_overhead_per_iteration;
  }
  fail("calibrate: bad parameter");
}

}  // namespace detail

/// Least-squares fit (sum of squared relative throughput errors) of the named
/// free cost parameters to the observed anchors. Deterministic coordinate
/// descent over a multiplicative grid; the baseline anchor pins the compute
/// cost in closed form each sweep.
inline CalibrationResult calibrate(const std::vector<CalibrationTarget>& targets,
                                   const std::vector<std::string>& free_params,
                                   const CostParams& start, const Topology& topo) {
  detail::require(!targets.empty(), "calibrate: at least one target required");
  bool all_identical = true;
  for (const auto& t : targets) {
    if (t.name != targets[0].name || t.observed_throughput != targets[0].observed_throughput ||
        t.global_batch != targets[0].global_batch) {
      all_identical = false;
    }
    detail::require(t.observed_throughput > 0.0, "calibrate: observed throughput must be > 0");
  }
  detail::require(targets.size() == 1 || !all_identical, "calibrate: degenerate targets (all identical)");

  const CalibrationTarget* baseline = nullptr;
  for (const auto& t : targets) {
    if (t.strategy.devices_required() == 1) baseline = &t;
  }
  detail::require(baseline != nullptr, "calibrate: a single-device baseline anchor is required");

  std::vector<detail::FreeParam> free;
  for (const auto& n : free_params) free.push_back(detail::parse_free_param(n));
  detail::require(!free.empty(), "calibrate: no free parameters");

  auto objective = [&](const CostParams& p) {
    double acc = 0.0;
    for (const auto& t : targets) {
      auto rep = simulate_run(t.strategy, topo, p, t.global_batch, 1);
      double rel = (rep.throughput - t.observed_throughput) / t.observed_throughput;
      acc += rel * rel;
    }
    return acc;
  };

  CostParams cur = start;

  auto solve_baseline_compute = [&](CostParams& p) {
    // baseline wall = batch*cps + overhead, so the anchor fixes cps exactly.
    double b = static_cast<double>(baseline->global_batch);
    double cps = (b / baseline->observed_throughput - p.fixed_overhead_per_iteration) / b;
    p.compute_time_per_sample_per_device = std::max(cps, 1e-15);
  };

  auto refine = [&](CostParams& p, detail::FreeParam which) {
    double& v = detail::param_ref(p, which);
    double best_obj = objective(p);
    // Coarse multiplicative ladder, then two refinement passes.
    for (double step : {std::pow(2.0, 0.5), std::pow(2.0, 1.0 / 16.0), std::pow(2.0, 1.0 / 128.0)}) {
      const int radius = step > 1.3 ? 20 : 8;
      double center = v;
      if (center <= 0.0) {
        // Absolute ladder for a parameter starting at zero.
        double best_v = v;
        for (double cand : {0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
          v = cand;
          double obj = objective(p);
          if (obj < best_obj - 1e-15 * (1.0 + best_obj)) {
            best_obj = obj;
            best_v = cand;
          }
        }
        v = best_v;
        if (v <= 0.0) continue;
        center = v;
      }
      double best_v = v;
      for (int i = -radius; i <= radius; ++i) {
        if (i == 0) continue;
        v = center * std::pow(step, i);
        double obj = objective(p);
        if (obj < best_obj - 1e-15 * (1.0 + best_obj)) {
          best_obj = obj;
          best_v = v;
        }
      }
      v = best_v;
    }
  };

  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    CostParams before = cur;
    for (auto which : free) {
      if (which == detail::FreeParam::compute) {
        solve_baseline_compute(cur);
      } else {
        refine(cur, which);
      }
    }
    bool changed = false;
    auto differs = [](double a, double b) {
      return std::abs(a - b) > 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
    };
    if (differs(before.compute_time_per_sample_per_device, cur.compute_time_per_sample_per_device) ||
        differs(before.gradient_bytes, cur.gradient_bytes) ||
        differs(before.activation_bytes_per_microbatch, cur.activation_bytes_per_microbatch) ||
        differs(before.fixed_overhead_per_iteration, cur.fixed_overhead_per_iteration)) {
      changed = true;
    }
    if (!changed) break;
  }

  CalibrationResult result;
  result.params = cur;
  for (const auto& t : targets) {
    auto rep = simulate_run(t.strategy, topo, cur, t.global_batch, 1);
    result.residuals.push_back((rep.throughput - t.observed_throughput) / t.observed_throughput);
  }
  result.objective = objective(cur);
  return result;
}

inline const char* to_string(EventKind k) {
  return k == EventKind::compute ? "compute" : "comm";
}

}  // namespace parsim
