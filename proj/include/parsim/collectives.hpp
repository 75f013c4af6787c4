// SPDX-License-Identifier: Apache-2.0
//
// In-process All-Reduce over virtual workers plus analytic alpha-beta cost
// models for the naive, ring, hierarchical and pipelined variants. The
// numeric reductions run serially in each algorithm's canonical order so
// results are bit-identical across runs and platforms.

#pragma once

#include <cmath>
#include <cstdint>

#include "parsim/numerics.hpp"

namespace parsim {

/// racks -> nodes -> devices, with one latency/bandwidth class per level.
struct Topology {
  std::size_t racks = 1;
  std::size_t nodes_per_rack = 1;
  std::size_t devices_per_node = 1;
  double intra_node_bw = 1.0;   // bytes/second
  double inter_node_bw = 1.0;
  double inter_rack_bw = 1.0;
  double intra_node_lat = 0.0;  // seconds
  double inter_node_lat = 0.0;
  double inter_rack_lat = 0.0;

  std::size_t device_count() const { return racks * nodes_per_rack * devices_per_node; }

  void validate() const {
    detail::require(racks >= 1 && nodes_per_rack >= 1 && devices_per_node >= 1,
                    "Topology: counts must be >= 1");
    detail::require(intra_node_bw > 0 && inter_node_bw > 0 && inter_rack_bw > 0,
                    "Topology: zero bandwidth");
    detail::require(intra_node_lat >= 0 && inter_node_lat >= 0 && inter_rack_lat >= 0,
                    "Topology: negative latency");
  }
};

enum class CollectiveAlgorithm { naive, ring, hierarchical, pipelined_ring };

/// P virtual workers, each holding one gradient buffer of equal dimension.
struct WorkerGroup {
  std::vector<DenseVector> buffers;

  std::size_t size() const { return buffers.size(); }

  std::size_t checked_dim() const {
    detail::require(!buffers.empty(), "WorkerGroup: no workers");
    std::size_t dim = buffers[0].size();
    for (const auto& b : buffers) {
      detail::require(b.size() == dim, "WorkerGroup: dim mismatch across workers");
    }
    return dim;
  }
};

namespace detail {

inline DenseVector fold_mean(const std::vector<const DenseVector*>& parts, std::size_t divisor) {
  DenseVector acc = *parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) vec_add_inplace(acc, *parts[i]);
  vec_scale_inplace(acc, 1.0 / static_cast<double>(divisor));
  return acc;
}

inline DenseVector allreduce_naive(const WorkerGroup& g) {
  DenseVector acc = g.buffers[0];
  for (std::size_t p = 1; p < g.size(); ++p) vec_add_inplace(acc, g.buffers[p]);
  vec_scale_inplace(acc, 1.0 / static_cast<double>(g.size()));
  return acc;
}

// Canonical chunked ring: chunk j is accumulated walking the ring starting
// at worker (j+1) mod P, which is the order a reduce-scatter visits it.
inline DenseVector allreduce_ring(const WorkerGroup& g) {
  std::size_t P = g.size();
  std::size_t dim = g.buffers[0].size();
  DenseVector out(dim, 0.0);
  for (std::size_t j = 0; j < P; ++j) {
    std::size_t lo = j * dim / P;
    std::size_t hi = (j + 1) * dim / P;
    if (lo == hi) continue;
    std::size_t start = (j + 1) % P;
    for (std::size_t i = lo; i < hi; ++i) out[i] = g.buffers[start][i];
    for (std::size_t s = 1; s < P; ++s) {
      const DenseVector& buf = g.buffers[(start + s) % P];
      for (std::size_t i = lo; i < hi; ++i) out[i] += buf[i];
    }
  }
  vec_scale_inplace(out, 1.0 / static_cast<double>(P));
  return out;
}

// Fold within each node, then within each rack, then across racks, with
// workers laid out canonically (fill a node, then the rack, then the next
// rack). Any trailing partial groups are folded the same way.
inline DenseVector allreduce_hierarchical(const WorkerGroup& g, const Topology& topo) {
  std::size_t P = g.size();
  std::size_t dpn = topo.devices_per_node;
  std::size_t per_rack = dpn * topo.nodes_per_rack;

  std::vector<DenseVector> node_sums;
  for (std::size_t base = 0; base < P; base += dpn) {
    DenseVector acc = g.buffers[base];
    for (std::size_t p = base + 1; p < std::min(base + dpn, P); ++p) {
      vec_add_inplace(acc, g.buffers[p]);
    }
    node_sums.push_back(std::move(acc));
  }

  std::size_t nodes_per_rack_used = (per_rack + dpn - 1) / dpn;
  std::vector<DenseVector> rack_sums;
  for (std::size_t base = 0; base < node_sums.size(); base += nodes_per_rack_used) {
    DenseVector acc = node_sums[base];
    for (std::size_t n = base + 1; n < std::min(base + nodes_per_rack_used, node_sums.size());
         ++n) {
      vec_add_inplace(acc, node_sums[n]);
    }
    rack_sums.push_back(std::move(acc));
  }

  DenseVector total = rack_sums[0];
  for (std::size_t r = 1; r < rack_sums.size(); ++r) vec_add_inplace(total, rack_sums[r]);
  vec_scale_inplace(total, 1.0 / static_cast<double>(P));
  return total;
}

}  // namespace detail

/// Arithmetic mean of all worker buffers, reduced in the algorithm's
/// canonical deterministic order. All algorithms agree with the brute-force
/// mean to ~1e-12 relative; they differ only in summation order.
inline DenseVector allreduce_mean(const WorkerGroup& group, CollectiveAlgorithm algo,
                                  const Topology& topo) {
  group.checked_dim();
  switch (algo) {
    case CollectiveAlgorithm::naive:
      return detail::allreduce_naive(group);
    case CollectiveAlgorithm::ring:
    case CollectiveAlgorithm::pipelined_ring:
      return detail::allreduce_ring(group);
    case CollectiveAlgorithm::hierarchical:
      return detail::allreduce_hierarchical(group, topo);
  }
  detail::fail("allreduce_mean: unknown algorithm");
}

inline DenseVector allreduce_mean(const WorkerGroup& group, CollectiveAlgorithm algo) {
  Topology flat;
  flat.devices_per_node = std::max<std::size_t>(group.size(), 1);
  return allreduce_mean(group, algo, flat);
}

struct Link {
  double latency = 0.0;
  double bandwidth = 1.0;
};

/// Worst latency/bandwidth pair among the link classes a contiguous group of
/// `span_devices` devices touches under canonical placement.
inline Link slowest_link_spanning(const Topology& topo, std::size_t span_devices) {
  Link link{topo.intra_node_lat, topo.intra_node_bw};
  if (span_devices > topo.devices_per_node) {
    link.latency = std::max(link.latency, topo.inter_node_lat);
    link.bandwidth = std::min(link.bandwidth, topo.inter_node_bw);
  }
  if (span_devices > topo.devices_per_node * topo.nodes_per_rack) {
    link.latency = std::max(link.latency, topo.inter_rack_lat);
    link.bandwidth = std::min(link.bandwidth, topo.inter_rack_bw);
  }
  return link;
}

namespace detail {

inline double ring_phase_cost(std::size_t p, double msg_bytes, const Link& link) {
  if (p <= 1) return 0.0;
  double steps = static_cast<double>(p - 1);
  return 2.0 * steps * link.latency +
         2.0 * (steps / static_cast<double>(p)) * msg_bytes / link.bandwidth;
}

}  // namespace detail

/// Modeled wall time for one all-reduce of `msg_bytes` over P participants.
/// `span_devices` is the number of physical devices the group is spread
/// across (defaults to P, i.e. a contiguous group); it selects the link class.
inline double comm_cost(CollectiveAlgorithm algo, double msg_bytes, std::size_t P,
                        const Topology& topo, std::size_t span_devices = 0) {
  topo.validate();
  detail::require(msg_bytes >= 0.0, "comm_cost: negative message size");
  detail::require(P >= 1, "comm_cost: P must be >= 1");
  if (P == 1) return 0.0;
  std::size_t span = span_devices == 0 ? P : span_devices;
  Link link = slowest_link_spanning(topo, span);

  switch (algo) {
    case CollectiveAlgorithm::naive:
      // Gather to a root plus broadcast back, each P-1 serial messages.
      return 2.0 * static_cast<double>(P - 1) * (link.latency + msg_bytes / link.bandwidth);
    case CollectiveAlgorithm::ring:
    case CollectiveAlgorithm::pipelined_ring:
      return detail::ring_phase_cost(P, msg_bytes, link);
    case CollectiveAlgorithm::hierarchical: {
      // Ring within each node, across nodes of a rack, then across racks,
      // each phase paying for the full message on its own link class.
      std::size_t d = std::min<std::size_t>(P, topo.devices_per_node);
      std::size_t nodes_needed = (P + d - 1) / d;
      std::size_t n = std::min<std::size_t>(nodes_needed, topo.nodes_per_rack);
      std::size_t r = (P + d * n - 1) / (d * n);
      return detail::ring_phase_cost(d, msg_bytes, {topo.intra_node_lat, topo.intra_node_bw}) +
             detail::ring_phase_cost(n, msg_bytes, {topo.inter_node_lat, topo.inter_node_bw}) +
             detail::ring_phase_cost(r, msg_bytes, {topo.inter_rack_lat, topo.inter_rack_bw});
    }
  }
  detail::fail("comm_cost: unknown algorithm");
}

inline const char* to_string(CollectiveAlgorithm a) {
  switch (a) {
    case CollectiveAlgorithm::naive: return "naive";
    case CollectiveAlgorithm::ring: return "ring";
    case CollectiveAlgorithm::hierarchical: return "hierarchical";
    case CollectiveAlgorithm::pipelined_ring: return "pipelined_ring";
  }
  return "?";
}

}  // namespace parsim
