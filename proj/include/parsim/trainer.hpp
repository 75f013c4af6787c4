// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale recommendation training under emulated multi-worker parallelism:
// a matrix-factorization model with pairwise logistic (BPR) loss, trained by
// P virtual workers in sync or staleness-compensated async mode, with optional
// gradient compression + error feedback per worker. Evaluation is sampled
// HR@K / NDCG@K.

#pragma once

#include <deque>
#include <unordered_set>

#include "parsim/dataset.hpp"
#include "parsim/strategies.hpp"

namespace parsim {

struct RecModel {
  DenseMatrix user_embeddings;  // num_users x dim
  DenseMatrix item_embeddings;  // num_items x dim

  std::size_t num_users() const { return user_embeddings.rows; }
  std::size_t num_items() const { return item_embeddings.rows; }
  std::size_t embedding_dim() const { return user_embeddings.cols; }

  /// Uniform init in [-0.01, 0.01], a documented function of the seed.
  static RecModel init(std::size_t users, std::size_t items, std::size_t dim,
                       std::uint64_t seed) {
    detail::require(users >= 1 && items >= 1 && dim >= 1, "RecModel: sizes must be >= 1");
    RecModel m;
    m.user_embeddings = DenseMatrix(users, dim);
    m.item_embeddings = DenseMatrix(items, dim);
    SeededRng rng(seed);
    for (auto& v : m.user_embeddings.values) v = rng.uniform(-0.01, 0.01);
    for (auto& v : m.item_embeddings.values) v = rng.uniform(-0.01, 0.01);
    return m;
  }

  double score(std::size_t user, std::size_t item) const {
    double s = 0.0;
    std::size_t d = embedding_dim();
    const double* u = &user_embeddings.values[user * d];
    const double* i = &item_embeddings.values[item * d];
    for (std::size_t k = 0; k < d; ++k) s += u[k] * i[k];
    return s;
  }
};

/// Flat parameter layout: user embedding rows, then item embedding rows.
inline DenseVector flatten_params(const RecModel& m) {
  DenseVector theta;
  theta.reserve(m.user_embeddings.values.size() + m.item_embeddings.values.size());
  theta.insert(theta.end(), m.user_embeddings.values.begin(), m.user_embeddings.values.end());
  theta.insert(theta.end(), m.item_embeddings.values.begin(), m.item_embeddings.values.end());
  return theta;
}

inline void unflatten_params(const DenseVector& theta, RecModel& m) {
  std::size_t nu = m.user_embeddings.values.size();
  detail::require(theta.size() == nu + m.item_embeddings.values.size(),
                  "unflatten_params: size mismatch");
  std::copy(theta.begin(), theta.begin() + static_cast<long>(nu),
            m.user_embeddings.values.begin());
  std::copy(theta.begin() + static_cast<long>(nu), theta.end(),
            m.item_embeddings.values.begin());
}

struct BprTriple {
  std::size_t user = 0;
  std::size_t pos_item = 0;
  std::size_t neg_item = 0;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + exp(-x)) without overflow.
inline double softplus_neg(double x) {
  if (x > 0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

struct FlatLayout {
  std::size_t users, items, dim;
  std::size_t user_off(std::size_t u) const { return u * dim; }
  std::size_t item_off(std::size_t i) const { return (users + i) * dim; }
  std::size_t total() const { return (users + items) * dim; }
};

}  // namespace detail

/// Mean pairwise logistic loss -log sigma(s(u,pos) - s(u,neg)) over a batch.
inline double bpr_batch_loss(const DenseVector& theta, std::size_t users, std::size_t items,
                             std::size_t dim, const std::vector<BprTriple>& batch) {
  detail::FlatLayout lay{users, items, dim};
  detail::require(theta.size() == lay.total(), "bpr_batch_loss: theta size mismatch");
  detail::require(!batch.empty(), "bpr_batch_loss: empty batch");
  double acc = 0.0;
  for (const auto& t : batch) {
    const double* u = &theta[lay.user_off(t.user)];
    const double* p = &theta[lay.item_off(t.pos_item)];
    const double* n = &theta[lay.item_off(t.neg_item)];
    double x = 0.0;
    for (std::size_t k = 0; k < dim; ++k) x += u[k] * (p[k] - n[k]);
    acc += detail::softplus_neg(x);
  }
  return acc / static_cast<double>(batch.size());
}

/// Analytic gradient of bpr_batch_loss with respect to the flat parameters.
inline DenseVector bpr_batch_gradient(const DenseVector& theta, std::size_t users,
                                      std::size_t items, std::size_t dim,
                                      const std::vector<BprTriple>& batch) {
  detail::FlatLayout lay{users, items, dim};
  detail::require(theta.size() == lay.total(), "bpr_batch_gradient: theta size mismatch");
  detail::require(!batch.empty(), "bpr_batch_gradient: empty batch");
  DenseVector grad(theta.size(), 0.0);
  double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& t : batch) {
    const double* u = &theta[lay.user_off(t.user)];
    const double* p = &theta[lay.item_off(t.pos_item)];
    const double* n = &theta[lay.item_off(t.neg_item)];
    double x = 0.0;
    for (std::size_t k = 0; k < dim; ++k) x += u[k] * (p[k] - n[k]);
    double coeff = -detail::sigmoid(-x) * inv;  // d/dx of mean softplus(-x)
    double* gu = &grad[lay.user_off(t.user)];
    double* gp = &grad[lay.item_off(t.pos_item)];
    double* gn = &grad[lay.item_off(t.neg_item)];
    for (std::size_t k = 0; k < dim; ++k) {
      gu[k] += coeff * (p[k] - n[k]);
      gp[k] += coeff * u[k];
      gn[k] -= coeff * u[k];
    }
  }
  return grad;
}

/// Deterministic BPR triple stream: positives drawn uniformly from the train
/// records, one sampled negative per positive (rejected against the user's
/// train positives).
class TripleSampler {
 public:
  TripleSampler(const std::vector<Interaction>& train, std::size_t num_users,
                std::size_t num_items, std::uint64_t seed)
      : train_(&train), num_items_(num_items), rng_(seed) {
    detail::require(!train.empty(), "TripleSampler: empty train split");
    positives_.resize(num_users);
    for (const auto& r : train) positives_[r.user].insert(r.item);
  }

  BprTriple next() {
    const Interaction& rec = (*train_)[rng_.next_below(train_->size())];
    const auto& pos_set = positives_[rec.user];
    std::size_t neg = rec.item;
    for (int tries = 0; tries < 100; ++tries) {
      std::size_t cand = rng_.next_below(num_items_);
      if (!pos_set.contains(cand)) {
        neg = cand;
        break;
      }
    }
    return {rec.user, rec.item, neg};
  }

  std::vector<BprTriple> next_batch(std::size_t n) {
    std::vector<BprTriple> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  const std::vector<Interaction>* train_;
  std::size_t num_items_;
  SeededRng rng_;
  std::vector<std::unordered_set<std::size_t>> positives_;
};

struct TrainResult {
  RecModel model;
  std::vector<std::pair<std::size_t, double>> loss_curve;  // (step, mean batch loss)
};

/// Trains under the given parallelism strategy. The quality harness covers
/// data parallelism only: tensor and pipeline degrees must be 1 (their
/// numerics are validated separately and they do not perturb gradients).
///
/// sync: per step, each of P workers computes the gradient of its contiguous
/// batch shard, optionally compressed with per-worker error feedback, and the
/// mean update is applied once.
///
/// async: per step the P workers apply their shard gradients one at a time in
/// round-robin order; worker p computes its gradient on the parameters from
/// (p mod 4) global updates ago and the update is down-weighted by 1/(1+tau).
inline TrainResult train(RecModel model, const ChronoSplit& split, const StrategyConfig& strategy,
                         const HyperParams& h, std::uint64_t seed) {
  strategy.validate();
  h.validate();
  detail::require(strategy.tensor_degree == 1 && strategy.pipeline_stages == 1,
                  "train: quality harness requires tensor_degree == 1 and pipeline_stages == 1");
  detail::require(!split.train.empty(), "train: empty train split");
  const std::size_t P = strategy.data_degree;
  detail::require(h.batch_size >= P, "train: batch_size must be >= data_degree");

  const std::size_t users = model.num_users();
  const std::size_t items = model.num_items();
  const std::size_t dim = model.embedding_dim();

  DenseVector theta = flatten_params(model);
  TripleSampler sampler(split.train, users, items, seed);

  std::vector<ErrorFeedbackState> ef_states(P, ErrorFeedbackState::zeros(theta.size()));
  const bool compressed = strategy.compressor.kind != CompressorKind::none;

  // Parameter history for the async staleness pattern (tau <= 3).
  std::deque<DenseVector> history;
  std::size_t global_updates = 0;

  TrainResult result;
  for (std::size_t step = 0; step < h.steps; ++step) {
    auto batch = sampler.next_batch(h.batch_size);
    if (step % 100 == 0) {
      result.loss_curve.emplace_back(step, bpr_batch_loss(theta, users, items, dim, batch));
    }

    // Contiguous shards; the first (batch % P) workers take one extra triple.
    auto shard_of = [&](std::size_t p) {
      std::size_t base = h.batch_size / P, rem = h.batch_size % P;
      std::size_t lo = p * base + std::min(p, rem);
      std::size_t hi = lo + base + (p < rem ? 1 : 0);
      return std::vector<BprTriple>(batch.begin() + static_cast<long>(lo),
                                    batch.begin() + static_cast<long>(hi));
    };

    if (strategy.mode == ExecutionMode::sync) {
      WorkerGroup grads;
      for (std::size_t p = 0; p < P; ++p) {
        grads.buffers.push_back(bpr_batch_gradient(theta, users, items, dim, shard_of(p)));
      }
      theta = sync_data_parallel_step(grads, theta, h, strategy,
                                      compressed ? &ef_states : nullptr);
    } else {
      for (std::size_t p = 0; p < P; ++p) {
        std::size_t tau = std::min<std::size_t>(global_updates, p % 4);
        const DenseVector& snapshot = tau == 0 ? theta : history[history.size() - tau];
        DenseVector g = bpr_batch_gradient(snapshot, users, items, dim, shard_of(p));
        if (compressed) g = decompress(ef_compress_step(ef_states[p], g, strategy.compressor));
        history.push_back(theta);
        if (history.size() > 3) history.pop_front();
        theta = async_step(theta, g, tau, h.learning_rate);
        ++global_updates;
      }
    }
  }

  unflatten_params(theta, model);
  result.model = std::move(model);
  return result;
}

struct EvalResult {
  double hr_at_10 = 0.0;
  double ndcg_at_10 = 0.0;
  std::size_t num_eval_users = 0;  // test records actually scored
  std::size_t skipped = 0;         // records with no candidate negatives
};

/// Sampled ranking evaluation: for each test interaction the true item is
/// ranked against `negatives` items the user never interacted with anywhere
/// in the dataset. Ties rank the lower item id first. HR@K counts rank <= K;
/// NDCG@K contributes 1/log2(rank+1) for rank <= K.
inline EvalResult evaluate_topk(const RecModel& model, const ChronoSplit& split, std::size_t K = 10,
                                std::size_t negatives = 99, std::uint64_t seed = 42) {
  detail::require(!split.test.empty(), "evaluate_topk: empty test split");
  detail::require(K >= 1 && negatives >= 1, "evaluate_topk: K and negatives must be >= 1");

  const std::size_t num_items = model.num_items();
  std::vector<std::unordered_set<std::size_t>> interacted(model.num_users());
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    for (const auto& r : *part) interacted[r.user].insert(r.item);
  }

  EvalResult out;
  double ndcg_acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t rec_idx = 0; rec_idx < split.test.size(); ++rec_idx) {
    const Interaction& rec = split.test[rec_idx];
    const auto& seen = interacted[rec.user];
    std::size_t available = num_items - seen.size();
    if (available == 0) {
      ++out.skipped;
      continue;
    }

    SeededRng rng(seed ^ mix64(rec_idx));
    std::size_t want = std::min(negatives, available);
    std::unordered_set<std::size_t> negs;
    std::size_t attempts = 0, cap = 100 * (negatives + 1);
    while (negs.size() < want && attempts < cap) {
      ++attempts;
      std::size_t cand = rng.next_below(num_items);
      if (seen.contains(cand) || cand == rec.item) continue;
      negs.insert(cand);
    }
    if (negs.size() < want) {  // deterministic fallback for tiny candidate pools
      for (std::size_t cand = 0; cand < num_items && negs.size() < want; ++cand) {
        if (!seen.contains(cand) && cand != rec.item) negs.insert(cand);
      }
    }

    double true_score = model.score(rec.user, rec.item);
    std::size_t rank = 1;
    for (std::size_t cand : negs) {
      double s = model.score(rec.user, cand);
      if (s > true_score || (s == true_score && cand < rec.item)) ++rank;
    }
    ++out.num_eval_users;
    if (rank <= K) {
      ++hits;
      ndcg_acc += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }

  detail::require(out.num_eval_users > 0, "evaluate_topk: all test records were skipped");
  out.hr_at_10 = static_cast<double>(hits) / static_cast<double>(out.num_eval_users);
  out.ndcg_at_10 = ndcg_acc / static_cast<double>(out.num_eval_users);
  return out;
}

// Binary model snapshot: "PSMF" magic, u64 users/items/dim, then the flat
// parameter doubles, all little-endian.
inline void save_model(const std::string& path, const RecModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot open '" + path + "'");
  out.write("PSMF", 4);
  auto put_u64 = [&](std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>(v >> (8 * i));
    out.write(buf, 8);
  };
  put_u64(m.num_users());
  put_u64(m.num_items());
  put_u64(m.embedding_dim());
  auto theta = flatten_params(m);
  for (double v : theta) put_u64(std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("save_model: write failed for '" + path + "'");
}

inline RecModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PSMF") {
    throw std::runtime_error("load_model: '" + path + "' is not a model file");
  }
  auto get_u64 = [&]() {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  };
  std::uint64_t users = get_u64(), items = get_u64(), dim = get_u64();
  if (!in || users == 0 || items == 0 || dim == 0) {
    throw std::runtime_error("load_model: corrupt header in '" + path + "'");
  }
  RecModel m;
  m.user_embeddings = DenseMatrix(users, dim);
  m.item_embeddings = DenseMatrix(items, dim);
  DenseVector theta((users + items) * dim);
  for (auto& v : theta) v = std::bit_cast<double>(get_u64());
  if (!in) throw std::runtime_error("load_model: truncated '" + path + "'");
  unflatten_params(theta, m);
  return m;
}

}  // namespace parsim
