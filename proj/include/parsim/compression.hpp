// SPDX-License-Identifier: Apache-2.0
//
// Gradient compressors: 1-bit sign quantization and top-k sparsification,
// plus the error-feedback residual bookkeeping that makes them safe to
// train with. The residual update is exactly r' = (r + g) - decompress(msg),
// so r' + decompress(msg) == r + g holds to the last ulp by construction.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <numeric>
#include <variant>

#include "parsim/numerics.hpp"

namespace parsim {

enum class CompressorKind { none, onebit, topk };

struct CompressorConfig {
  CompressorKind kind = CompressorKind::none;
  std::size_t top_k = 0;  // used iff kind == topk
};

struct DensePayload {
  DenseVector values;
};

/// Sign bits are stored wire-packed: bit (i % 8) of byte (i / 8), 1 = positive.
struct SignBitPayload {
  std::size_t dim = 0;
  double scale = 0.0;
  std::vector<std::uint8_t> sign_bytes;

  bool positive_at(std::size_t i) const {
    return (sign_bytes[i / 8] >> (i % 8)) & 1u;
  }
};

struct TopKPayload {
  std::size_t dim = 0;
  std::vector<std::size_t> indices;  // strictly increasing, all < dim
  DenseVector values;
};

struct CompressedGradient {
  std::variant<DensePayload, SignBitPayload, TopKPayload> payload;

  std::size_t dim() const {
    if (auto* d = std::get_if<DensePayload>(&payload)) return d->values.size();
    if (auto* s = std::get_if<SignBitPayload>(&payload)) return s->dim;
    return std::get<TopKPayload>(payload).dim;
  }
};

struct ErrorFeedbackState {
  DenseVector residual;

  static ErrorFeedbackState zeros(std::size_t dim) { return {DenseVector(dim, 0.0)}; }
};

/// 1-bit quantization: sign pattern plus a single scale. sign(0) = +1.
/// The scale is the mean absolute value ||g||_1 / dim so the reconstruction
/// is magnitude-unbiased for i.i.d. entries.
inline CompressedGradient compress_onebit(const DenseVector& g) {
  detail::require(!g.empty(), "compress_onebit: empty vector");
  SignBitPayload p;
  p.dim = g.size();
  p.scale = l1_norm(g) / static_cast<double>(g.size());
  p.sign_bytes.assign((g.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] >= 0.0) p.sign_bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return {p};
}

/// Keeps the k entries of largest magnitude. Ties break toward the lower
/// index so the output is deterministic; indices come back sorted ascending.
inline CompressedGradient compress_topk(const DenseVector& g, std::size_t k) {
  detail::require(k >= 1 && k <= g.size(), "compress_topk: k out of range (k=" +
                                               std::to_string(k) + ", dim=" +
                                               std::to_string(g.size()) + ")");
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(g[a]) > std::abs(g[b]);
  });
  order.resize(k);
  std::sort(order.begin(), order.end());

  TopKPayload p;
  p.dim = g.size();
  p.indices = std::move(order);
  p.values.reserve(k);
  for (std::size_t idx : p.indices) p.values.push_back(g[idx]);
  return {p};
}

inline CompressedGradient compress(const DenseVector& g, const CompressorConfig& cfg) {
  switch (cfg.kind) {
    case CompressorKind::none:
      return {DensePayload{g}};
    case CompressorKind::onebit:
      return compress_onebit(g);
    case CompressorKind::topk:
      return compress_topk(g, cfg.top_k);
  }
  detail::fail("compress: unknown compressor kind");
}

inline DenseVector decompress(const CompressedGradient& c) {
  if (const auto* d = std::get_if<DensePayload>(&c.payload)) {
    return d->values;
  }
  if (const auto* s = std::get_if<SignBitPayload>(&c.payload)) {
    detail::require(s->sign_bytes.size() == (s->dim + 7) / 8,
                    "decompress: sign byte count does not match dim");
    DenseVector out(s->dim);
    for (std::size_t i = 0; i < s->dim; ++i) {
      out[i] = s->positive_at(i) ? s->scale : -s->scale;
    }
    return out;
  }
  const auto& t = std::get<TopKPayload>(c.payload);
  detail::require(t.indices.size() == t.values.size(),
                  "decompress: index/value count mismatch");
  DenseVector out(t.dim, 0.0);
  std::size_t prev = 0;
  bool first = true;
  for (std::size_t j = 0; j < t.indices.size(); ++j) {
    std::size_t idx = t.indices[j];
    detail::require(idx < t.dim, "decompress: index " + std::to_string(idx) +
                                     " out of range for dim " + std::to_string(t.dim));
    detail::require(first || idx > prev, "decompress: indices not strictly increasing");
    out[idx] = t.values[j];
    prev = idx;
    first = false;
  }
  return out;
}

/// One error-feedback step: compress (residual + g), emit the message, and
/// keep what the message failed to carry as the next residual.
inline CompressedGradient ef_compress_step(ErrorFeedbackState& state, const DenseVector& g,
                                           const CompressorConfig& cfg) {
  detail::require(state.residual.size() == g.size(),
                  "ef_compress_step: residual/gradient dimension mismatch");
  DenseVector p = state.residual;
  vec_add_inplace(p, g);
  CompressedGradient msg = compress(p, cfg);
  DenseVector approx = decompress(msg);
  for (std::size_t i = 0; i < p.size(); ++i) state.residual[i] = p[i] - approx[i];
  check_finite(state.residual, "ef_compress_step residual");
  return msg;
}

// Wire encoding, little-endian throughout:
//   Dense:   u64 dim | dim x f64
//   SignBit: u64 dim | f64 scale | ceil(dim/8) sign bytes (bit i%8 of byte i/8, 1 = positive)
//   TopK:    u64 dim | u64 count | count x (u64 index, f64 value)

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  require(pos + 8 <= in.size(), "wire_decode: truncated input");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(in[pos + b]) << (8 * b);
  pos += 8;
  return v;
}

inline double get_f64(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  return std::bit_cast<double>(get_u64(in, pos));
}

}  // namespace detail

inline std::vector<std::uint8_t> wire_encode(const CompressedGradient& c) {
  std::vector<std::uint8_t> out;
  if (const auto* d = std::get_if<DensePayload>(&c.payload)) {
    detail::put_u64(out, d->values.size());
    for (double v : d->values) detail::put_f64(out, v);
  } else if (const auto* s = std::get_if<SignBitPayload>(&c.payload)) {
    detail::put_u64(out, s->dim);
    detail::put_f64(out, s->scale);
    out.insert(out.end(), s->sign_bytes.begin(), s->sign_bytes.end());
  } else {
    const auto& t = std::get<TopKPayload>(c.payload);
    detail::put_u64(out, t.dim);
    detail::put_u64(out, t.indices.size());
    for (std::size_t j = 0; j < t.indices.size(); ++j) {
      detail::put_u64(out, t.indices[j]);
      detail::put_f64(out, t.values[j]);
    }
  }
  return out;
}

/// Tag-free decode: the caller states which payload kind the bytes carry
/// (the trace format keeps the kind in a separate column).
enum class WireKind { dense, signbit, topk };

inline CompressedGradient wire_decode(WireKind kind, const std::vector<std::uint8_t>& in) {
  std::size_t pos = 0;
  if (kind == WireKind::dense) {
    std::uint64_t dim = detail::get_u64(in, pos);
    DensePayload d;
    d.values.reserve(dim);
    for (std::uint64_t i = 0; i < dim; ++i) d.values.push_back(detail::get_f64(in, pos));
    return {d};
  }
  if (kind == WireKind::signbit) {
    SignBitPayload s;
    s.dim = detail::get_u64(in, pos);
    s.scale = detail::get_f64(in, pos);
    std::size_t nbytes = (s.dim + 7) / 8;
    detail::require(pos + nbytes <= in.size(), "wire_decode: truncated sign bytes");
    s.sign_bytes.assign(in.begin() + pos, in.begin() + pos + nbytes);
    return {s};
  }
  TopKPayload t;
  t.dim = detail::get_u64(in, pos);
  std::uint64_t count = detail::get_u64(in, pos);
  for (std::uint64_t j = 0; j < count; ++j) {
    t.indices.push_back(detail::get_u64(in, pos));
    t.values.push_back(detail::get_f64(in, pos));
  }
  return {t};
}

/// Raw gradient bytes (8 per entry) over the bytes actually put on the wire.
/// Dense is the identity encoding, so its ratio is exactly 1.
inline double compression_ratio(const CompressedGradient& c) {
  std::size_t dim = c.dim();
  double dense_bytes = 8.0 * static_cast<double>(dim);
  if (std::holds_alternative<DensePayload>(c.payload)) return 1.0;
  if (const auto* s = std::get_if<SignBitPayload>(&c.payload)) {
    return dense_bytes / (8.0 + 8.0 + static_cast<double>((s->dim + 7) / 8));
  }
  const auto& t = std::get<TopKPayload>(c.payload);
  return dense_bytes / (8.0 + 8.0 + 16.0 * static_cast<double>(t.indices.size()));
}

/// Same ratio computed from a config and a dimension, without materializing
/// a message. Used by the cost model to scale collective message sizes.
inline double compression_ratio_for(const CompressorConfig& cfg, std::size_t dim) {
  detail::require(dim >= 1, "compression_ratio_for: dim must be >= 1");
  switch (cfg.kind) {
    case CompressorKind::none:
      return 1.0;
    case CompressorKind::onebit:
      return 8.0 * static_cast<double>(dim) /
             (16.0 + static_cast<double>((dim + 7) / 8));
    case CompressorKind::topk: {
      std::size_t k = std::min(cfg.top_k, dim);
      detail::require(k >= 1, "compression_ratio_for: top_k must be >= 1");
      return 8.0 * static_cast<double>(dim) / (16.0 + 16.0 * static_cast<double>(k));
    }
  }
  detail::fail("compression_ratio_for: unknown compressor kind");
}

}  // namespace parsim
