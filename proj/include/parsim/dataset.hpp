// SPDX-License-Identifier: Apache-2.0
//
// Interaction dataset ingestion, chronological splitting, and the synthetic
// generator used for desk-scale experiments.

#pragma once

#include <array>
#include <charconv>
#include <fstream>
#include <set>
#include <unordered_map>

#include "parsim/numerics.hpp"

namespace parsim {

struct Interaction {
  std::uint64_t user = 0;
  std::uint64_t item = 0;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct InteractionDataset {
  std::vector<Interaction> records;  // ids densely reindexed to [0, vocab)
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t duplicates_dropped = 0;
};

namespace detail {

inline std::uint64_t parse_u64_field(const std::string& field, std::size_t line_no,
                                     const std::string& path, const char* what) {
  std::uint64_t value = 0;
  const char* b = field.data();
  const char* e = b + field.size();
  auto [ptr, ec] = std::from_chars(b, e, value);
  if (ec != std::errc{} || ptr != e || field.empty()) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": invalid " + what +
                             " '" + field + "'");
  }
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return fields;
}

}  // namespace detail

/// Loads `user_id,item_id,timestamp` CSV. Ids are densely reindexed in order
/// of first appearance; exact duplicate triples are dropped and counted.
inline InteractionDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open '" + path + "'");

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_dataset: '" + path + "' is empty");
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "user_id,item_id,timestamp") {
    throw std::runtime_error(path + ":1: expected header 'user_id,item_id,timestamp'");
  }

  InteractionDataset ds;
  std::unordered_map<std::uint64_t, std::uint64_t> user_ids, item_ids;
  std::set<std::array<std::uint64_t, 3>> seen;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 3) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 3 comma-separated fields");
    }
    std::uint64_t raw_user = detail::parse_u64_field(fields[0], line_no, path, "user id");
    std::uint64_t raw_item = detail::parse_u64_field(fields[1], line_no, path, "item id");
    std::uint64_t ts = detail::parse_u64_field(fields[2], line_no, path, "timestamp");

    if (!seen.insert({raw_user, raw_item, ts}).second) {
      ++ds.duplicates_dropped;
      continue;
    }
    auto [uit, unew] = user_ids.try_emplace(raw_user, user_ids.size());
    auto [iit, inew] = item_ids.try_emplace(raw_item, item_ids.size());
    ds.records.push_back({uit->second, iit->second, static_cast<std::int64_t>(ts)});
  }
  if (ds.records.empty()) {
    throw std::runtime_error("load_dataset: '" + path + "' contains no interactions");
  }
  ds.num_users = user_ids.size();
  ds.num_items = item_ids.size();
  return ds;
}

struct ChronoSplit {
  std::vector<Interaction> train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
};

/// Chronological split: sort by (timestamp, user, item) and cut at
/// floor(train_ratio*N) and floor((train_ratio+val_ratio)*N).
inline ChronoSplit chrono_split(const InteractionDataset& ds, double train_ratio = 0.8,
                                double val_ratio = 0.1) {
  detail::require(ds.records.size() >= 10, "chrono_split: need at least 10 records, got " +
                                               std::to_string(ds.records.size()));
  detail::require(train_ratio > 0.0 && val_ratio > 0.0 && train_ratio + val_ratio < 1.0,
                  "chrono_split: ratios must be positive and sum below 1");

  std::vector<Interaction> sorted = ds.records;
  std::sort(sorted.begin(), sorted.end(), [](const Interaction& a, const Interaction& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.user != b.user) return a.user < b.user;
    return a.item < b.item;
  });

  std::size_t n = sorted.size();
  auto cut1 = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(n)));
  auto cut2 = static_cast<std::size_t>(std::floor((train_ratio + val_ratio) * static_cast<double>(n)));

  ChronoSplit split;
  split.train.assign(sorted.begin(), sorted.begin() + static_cast<long>(cut1));
  split.validation.assign(sorted.begin() + static_cast<long>(cut1),
                          sorted.begin() + static_cast<long>(cut2));
  split.test.assign(sorted.begin() + static_cast<long>(cut2), sorted.end());
  return split;
}

/// Synthetic interactions: Zipf(s=1.1) item popularity with item id equal to
/// popularity rank, uniform users, strictly increasing timestamps.
inline InteractionDataset generate_synthetic(std::size_t num_users, std::size_t num_items,
                                             std::size_t num_interactions, std::uint64_t seed) {
  detail::require(num_users >= 1 && num_items >= 1 && num_interactions >= 1,
                  "generate_synthetic: counts must be >= 1");
  std::vector<double> cdf(num_items);
  double acc = 0.0;
  for (std::size_t i = 0; i < num_items; ++i) {
    acc += std::pow(static_cast<double>(i + 1), -1.1);
    cdf[i] = acc;
  }
  for (double& c : cdf) c /= acc;

  SeededRng rng(seed);
  InteractionDataset ds;
  ds.num_users = num_users;
  ds.num_items = num_items;
  ds.records.reserve(num_interactions);
  for (std::size_t i = 0; i < num_interactions; ++i) {
    std::uint64_t user = rng.next_below(num_users);
    double u = rng.next_double();
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    std::uint64_t item = static_cast<std::uint64_t>(it - cdf.begin());
    if (item >= num_items) item = num_items - 1;
    ds.records.push_back({user, item, static_cast<std::int64_t>(1'000'000 + i)});
  }
  return ds;
}

}  // namespace parsim
