// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a line-oriented `[section]` / `key = value` text
// format whose sections mirror the library types one to one. Parsing is
// strict: unknown sections or keys are errors, and every value is validated
// against the owning type's invariants before a run starts.

#pragma once

#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>

#include "parsim/simulator.hpp"
#include "parsim/trainer.hpp"

namespace parsim {

/// Configuration problems exit with code 1; runtime problems with code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StrategyRun {
  StrategyConfig strategy;
  std::size_t global_batch = 512;
  std::optional<double> learning_rate;  // per-scheme trainer override
};

struct TrainerSpec {
  std::string dataset_path;  // empty: use the synthetic generator
  std::size_t synthetic_users = 400;
  std::size_t synthetic_items = 200;
  std::size_t synthetic_interactions = 20000;
  std::uint64_t synthetic_seed = 42;
  std::size_t embedding_dim = 16;
  double learning_rate = 0.03;
  std::size_t batch_size = 256;
  std::size_t steps = 1000;
  std::size_t eval_k = 10;
  std::size_t eval_negatives = 99;
};

struct OutputSpec {
  std::string directory = "out";
  bool csv = true;
  bool md = false;
};

struct CalibrationSpec {
  std::vector<std::string> free_params;
  double max_residual = 0.15;
};

struct ExperimentConfig {
  Topology topology;
  CostParams costs;
  std::size_t iterations = 1;
  std::vector<std::pair<std::string, StrategyRun>> strategies;
  std::vector<std::pair<std::string, double>> anchors;  // strategy name -> samples/s
  CalibrationSpec calibration;
  TrainerSpec trainer;
  OutputSpec output;

  const StrategyRun* find_strategy(const std::string& name) const {
    for (const auto& [n, run] : strategies) {
      if (n == name) return &run;
    }
    return nullptr;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double cfg_double(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw ConfigError("config: " + where + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t cfg_count(const std::string& v, const std::string& where) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("config: " + where + ": expected an integer, got '" + v + "'");
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    std::size_t comma = v.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(trim(v.substr(pos)));
      break;
    }
    out.push_back(trim(v.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

inline CollectiveAlgorithm parse_collective(const std::string& v, const std::string& where) {
  if (v == "naive") return CollectiveAlgorithm::naive;
  if (v == "ring") return CollectiveAlgorithm::ring;
  if (v == "hierarchical") return CollectiveAlgorithm::hierarchical;
  if (v == "pipelined_ring") return CollectiveAlgorithm::pipelined_ring;
  throw ConfigError("config: " + where + ": unknown collective '" + v + "'");
}

inline CompressorKind parse_compressor(const std::string& v, const std::string& where) {
  if (v == "none") return CompressorKind::none;
  if (v == "onebit") return CompressorKind::onebit;
  if (v == "topk") return CompressorKind::topk;
  throw ConfigError("config: " + where + ": unknown compressor '" + v + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section, strategy_name;
  StrategyRun* strategy = nullptr;
  std::size_t line_no = 0;

  auto unknown_key = [&](const std::string& key) {
    throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                      "' in section [" + section +
                      (strategy_name.empty() ? "" : " " + strategy_name) + "]");
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;

    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      }
      std::string inside = detail::trim(t.substr(1, t.size() - 2));
      strategy = nullptr;
      strategy_name.clear();
      if (inside.rfind("strategy ", 0) == 0) {
        section = "strategy";
        strategy_name = detail::trim(inside.substr(9));
        if (strategy_name.empty()) {
          throw ConfigError("config line " + std::to_string(line_no) + ": strategy needs a name");
        }
        if (cfg.find_strategy(strategy_name) != nullptr) {
          throw ConfigError("config line " + std::to_string(line_no) + ": duplicate strategy '" +
                            strategy_name + "'");
        }
        cfg.strategies.emplace_back(strategy_name, StrategyRun{});
        strategy = &cfg.strategies.back().second;
      } else if (inside == "topology" || inside == "costs" || inside == "simulation" ||
                 inside == "anchors" || inside == "calibration" || inside == "trainer" ||
                 inside == "output") {
        section = inside;
      } else {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" +
                          inside + "]");
      }
      continue;
    }

    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    std::string where = "[" + section + "] " + key;
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    }

    if (section == "topology") {
      Topology& topo = cfg.topology;
      if (key == "racks") topo.racks = detail::cfg_count(value, where);
      else if (key == "nodes_per_rack") topo.nodes_per_rack = detail::cfg_count(value, where);
      else if (key == "devices_per_node") topo.devices_per_node = detail::cfg_count(value, where);
      else if (key == "intra_node_bw") topo.intra_node_bw = detail::cfg_double(value, where);
      else if (key == "inter_node_bw") topo.inter_node_bw = detail::cfg_double(value, where);
      else if (key == "inter_rack_bw") topo.inter_rack_bw = detail::cfg_double(value, where);
      else if (key == "intra_node_lat") topo.intra_node_lat = detail::cfg_double(value, where);
      else if (key == "inter_node_lat") topo.inter_node_lat = detail::cfg_double(value, where);
      else if (key == "inter_rack_lat") topo.inter_rack_lat = detail::cfg_double(value, where);
      else unknown_key(key);
    } else if (section == "costs") {
      CostParams& c = cfg.costs;
      if (key == "compute_time_per_sample_per_device") {
        c.compute_time_per_sample_per_device = detail::cfg_double(value, where);
      } else if (key == "gradient_bytes") {
        c.gradient_bytes = detail::cfg_double(value, where);
      } else if (key == "activation_bytes_per_microbatch") {
        c.activation_bytes_per_microbatch = detail::cfg_double(value, where);
      } else if (key == "fixed_overhead_per_iteration") {
        c.fixed_overhead_per_iteration = detail::cfg_double(value, where);
      } else if (key == "pipeline_stage_cost_split") {
        c.pipeline_stage_cost_split.clear();
        for (const auto& f : detail::split_list(value)) {
          c.pipeline_stage_cost_split.push_back(detail::cfg_double(f, where));
        }
      } else {
        unknown_key(key);
      }
    } else if (section == "simulation") {
      if (key == "iterations") cfg.iterations = detail::cfg_count(value, where);
      else unknown_key(key);
    } else if (section == "strategy") {
      StrategyConfig& s = strategy->strategy;
      if (key == "data_degree") s.data_degree = detail::cfg_count(value, where);
      else if (key == "tensor_degree") s.tensor_degree = detail::cfg_count(value, where);
      else if (key == "pipeline_stages") s.pipeline_stages = detail::cfg_count(value, where);
      else if (key == "micro_batches") s.micro_batches = detail::cfg_count(value, where);
      else if (key == "mode") {
        if (value == "sync") s.mode = ExecutionMode::sync;
        else if (value == "async") s.mode = ExecutionMode::async;
        else throw ConfigError("config: " + where + ": unknown mode '" + value + "'");
      } else if (key == "collective") {
        s.collective = detail::parse_collective(value, where);
      } else if (key == "compressor") {
        s.compressor.kind = detail::parse_compressor(value, where);
      } else if (key == "top_k") {
        s.compressor.top_k = detail::cfg_count(value, where);
      } else if (key == "overlap_fraction") {
        s.overlap_fraction = detail::cfg_double(value, where);
      } else if (key == "global_batch") {
        strategy->global_batch = detail::cfg_count(value, where);
      } else if (key == "learning_rate") {
        strategy->learning_rate = detail::cfg_double(value, where);
      } else {
        unknown_key(key);
      }
    } else if (section == "anchors") {
      cfg.anchors.emplace_back(key, detail::cfg_double(value, "[anchors] " + key));
    } else if (section == "calibration") {
      if (key == "free_params") cfg.calibration.free_params = detail::split_list(value);
      else if (key == "max_residual") cfg.calibration.max_residual = detail::cfg_double(value, where);
      else unknown_key(key);
    } else if (section == "trainer") {
      TrainerSpec& tr = cfg.trainer;
      if (key == "dataset_path") tr.dataset_path = value;
      else if (key == "synthetic_users") tr.synthetic_users = detail::cfg_count(value, where);
      else if (key == "synthetic_items") tr.synthetic_items = detail::cfg_count(value, where);
      else if (key == "synthetic_interactions") {
        tr.synthetic_interactions = detail::cfg_count(value, where);
      } else if (key == "synthetic_seed") tr.synthetic_seed = detail::cfg_count(value, where);
      else if (key == "embedding_dim") tr.embedding_dim = detail::cfg_count(value, where);
      else if (key == "learning_rate") tr.learning_rate = detail::cfg_double(value, where);
      else if (key == "batch_size") tr.batch_size = detail::cfg_count(value, where);
      else if (key == "steps") tr.steps = detail::cfg_count(value, where);
      else if (key == "eval_k") tr.eval_k = detail::cfg_count(value, where);
      else if (key == "eval_negatives") tr.eval_negatives = detail::cfg_count(value, where);
      else unknown_key(key);
    } else if (section == "output") {
      if (key == "directory") cfg.output.directory = value;
      else if (key == "formats") {
        cfg.output.csv = cfg.output.md = false;
        for (const auto& f : detail::split_list(value)) {
          if (f == "csv") cfg.output.csv = true;
          else if (f == "md") cfg.output.md = true;
          else throw ConfigError("config: [output] formats: unknown format '" + f + "'");
        }
      } else {
        unknown_key(key);
      }
    }
  }

  // Validate against the owning types' invariants before any run starts.
  try {
    cfg.topology.validate();
    for (auto& [name, run] : cfg.strategies) {
      run.strategy.validate_against(cfg.topology);
      if (run.strategy.compressor.kind == CompressorKind::topk) {
        detail::require(run.strategy.compressor.top_k >= 1,
                        "strategy '" + name + "': topk compressor needs top_k >= 1");
      }
      detail::require(run.global_batch >= 1, "strategy '" + name + "': global_batch must be >= 1");
      if (run.learning_rate) {
        detail::require(*run.learning_rate > 0.0,
                        "strategy '" + name + "': learning_rate must be > 0");
      }
    }
    detail::require(cfg.iterations >= 1, "[simulation] iterations must be >= 1");
    detail::require(cfg.trainer.learning_rate > 0.0, "[trainer] learning_rate must be > 0");
    detail::require(cfg.calibration.max_residual > 0.0, "[calibration] max_residual must be > 0");
    for (const auto& [name, observed] : cfg.anchors) {
      detail::require(cfg.find_strategy(name) != nullptr,
                      "[anchors] references unknown strategy '" + name + "'");
      detail::require(observed > 0.0, "[anchors] " + name + ": throughput must be > 0");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string serialize_costs(const CostParams& c) {
  std::ostringstream out;
  out << "[costs]\n";
  out << "compute_time_per_sample_per_device = "
      << detail::fmt_double(c.compute_time_per_sample_per_device) << "\n";
  out << "gradient_bytes = " << detail::fmt_double(c.gradient_bytes) << "\n";
  out << "activation_bytes_per_microbatch = "
      << detail::fmt_double(c.activation_bytes_per_microbatch) << "\n";
  out << "fixed_overhead_per_iteration = "
      << detail::fmt_double(c.fixed_overhead_per_iteration) << "\n";
  if (!c.pipeline_stage_cost_split.empty()) {
    out << "pipeline_stage_cost_split = ";
    for (std::size_t i = 0; i < c.pipeline_stage_cost_split.size(); ++i) {
      out << (i ? "," : "") << detail::fmt_double(c.pipeline_stage_cost_split[i]);
    }
    out << "\n";
  }
  return out.str();
}

/// Canonical serialization; parse(serialize(parse(x))) is a fixed point.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  const Topology& t = cfg.topology;
  out << "[topology]\n";
  out << "racks = " << t.racks << "\n";
  out << "nodes_per_rack = " << t.nodes_per_rack << "\n";
  out << "devices_per_node = " << t.devices_per_node << "\n";
  out << "intra_node_bw = " << detail::fmt_double(t.intra_node_bw) << "\n";
  out << "inter_node_bw = " << detail::fmt_double(t.inter_node_bw) << "\n";
  out << "inter_rack_bw = " << detail::fmt_double(t.inter_rack_bw) << "\n";
  out << "intra_node_lat = " << detail::fmt_double(t.intra_node_lat) << "\n";
  out << "inter_node_lat = " << detail::fmt_double(t.inter_node_lat) << "\n";
  out << "inter_rack_lat = " << detail::fmt_double(t.inter_rack_lat) << "\n";
  out << "\n" << serialize_costs(cfg.costs);
  out << "\n[simulation]\niterations = " << cfg.iterations << "\n";

  for (const auto& [name, run] : cfg.strategies) {
    const StrategyConfig& s = run.strategy;
    out << "\n[strategy " << name << "]\n";
    out << "data_degree = " << s.data_degree << "\n";
    out << "tensor_degree = " << s.tensor_degree << "\n";
    out << "pipeline_stages = " << s.pipeline_stages << "\n";
    out << "micro_batches = " << s.micro_batches << "\n";
    out << "mode = " << to_string(s.mode) << "\n";
    out << "collective = " << to_string(s.collective) << "\n";
    out << "compressor = " << to_string(s.compressor.kind) << "\n";
    if (s.compressor.kind == CompressorKind::topk) {
      out << "top_k = " << s.compressor.top_k << "\n";
    }
    out << "overlap_fraction = " << detail::fmt_double(s.overlap_fraction) << "\n";
    out << "global_batch = " << run.global_batch << "\n";
    if (run.learning_rate) {
      out << "learning_rate = " << detail::fmt_double(*run.learning_rate) << "\n";
    }
  }

  if (!cfg.anchors.empty()) {
    out << "\n[anchors]\n";
    for (const auto& [name, v] : cfg.anchors) out << name << " = " << detail::fmt_double(v) << "\n";
  }
  if (!cfg.calibration.free_params.empty()) {
    out << "\n[calibration]\nfree_params = ";
    for (std::size_t i = 0; i < cfg.calibration.free_params.size(); ++i) {
      out << (i ? "," : "") << cfg.calibration.free_params[i];
    }
    out << "\nmax_residual = " << detail::fmt_double(cfg.calibration.max_residual) << "\n";
  }

  const TrainerSpec& tr = cfg.trainer;
  out << "\n[trainer]\n";
  if (!tr.dataset_path.empty()) out << "dataset_path = " << tr.dataset_path << "\n";
  out << "synthetic_users = " << tr.synthetic_users << "\n";
  out << "synthetic_items = " << tr.synthetic_items << "\n";
  out << "synthetic_interactions = " << tr.synthetic_interactions << "\n";
  out << "synthetic_seed = " << tr.synthetic_seed << "\n";
  out << "embedding_dim = " << tr.embedding_dim << "\n";
  out << "learning_rate = " << detail::fmt_double(tr.learning_rate) << "\n";
  out << "batch_size = " << tr.batch_size << "\n";
  out << "steps = " << tr.steps << "\n";
  out << "eval_k = " << tr.eval_k << "\n";
  out << "eval_negatives = " << tr.eval_negatives << "\n";

  out << "\n[output]\n";
  out << "directory = " << cfg.output.directory << "\n";
  out << "formats = ";
  if (cfg.output.csv && cfg.output.md) out << "csv,md";
  else if (cfg.output.md) out << "md";
  else out << "csv";
  out << "\n";
  return out.str();
}

/// Reads a standalone `[costs]` fragment, e.g. the file cmd_calibrate writes.
inline CostParams load_costs_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open costs file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  // Reuse the full parser on a minimal synthetic document.
  ExperimentConfig cfg = parse_config(buf.str());
  return cfg.costs;
}

}  // namespace parsim
