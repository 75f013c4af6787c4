// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the parsim binary. Each returns the process
// exit code: 0 success, 1 configuration error, 2 runtime error. Seeds derive
// from the --seed flag (default 42): model init uses seed, the training
// stream seed+1, evaluation seed+2.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>

#include "parsim/reports.hpp"

namespace parsim {

struct CliOptions {
  std::string config_path;
  std::uint64_t seed = 42;
  std::string out_dir;     // overrides [output] directory when set
  std::string format;      // overrides [output] formats when set
  std::string costs_path;  // overrides [costs] when set (simulate/calibrate start point)
  bool eval_only = false;
  std::string model_dir;   // where eval-only looks for model_<scheme>.bin
};

namespace detail {

inline int log_level() {
  static int level = [] {
    const char* env = std::getenv("PARSIM_LOG");
    if (env == nullptr) return 1;
    std::string v = env;
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "parsim: " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "parsim[debug]: " << msg << "\n";
}

inline ExperimentConfig load_with_overrides(const CliOptions& opts) {
  detail::require(!opts.config_path.empty(), "--config is required");
  ExperimentConfig cfg = load_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.output.directory = opts.out_dir;
  if (!opts.format.empty()) {
    cfg.output.csv = cfg.output.md = false;
    for (const auto& f : split_list(opts.format)) {
      if (f == "csv") cfg.output.csv = true;
      else if (f == "md") cfg.output.md = true;
      else throw ConfigError("--format: unknown format '" + f + "'");
    }
  }
  if (!opts.costs_path.empty()) cfg.costs = load_costs_file(opts.costs_path);
  std::filesystem::create_directories(cfg.output.directory);
  return cfg;
}

inline std::size_t nodes_spanned(const Topology& topo, std::size_t devices) {
  return (devices + topo.devices_per_node - 1) / topo.devices_per_node;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "parsim: config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "parsim: config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "parsim: error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace detail

inline int run_simulate(const CliOptions& opts) {
  return detail::guarded([&] {
    ExperimentConfig cfg = detail::load_with_overrides(opts);
    detail::require(!cfg.strategies.empty(), "config has no [strategy ...] sections");

    std::vector<ReportRow> rows;
    std::vector<std::pair<std::string, EventQueue>> timelines;
    for (const auto& [name, run] : cfg.strategies) {
      detail::log_debug("simulating strategy " + name);
      SimReport rep = simulate_run(run.strategy, cfg.topology, cfg.costs, run.global_batch,
                                   cfg.iterations);
      ReportRow row;
      row.scheme = name;
      row.devices = run.strategy.devices_required();
      row.nodes = detail::nodes_spanned(cfg.topology, row.devices);
      row.report = rep;
      rows.push_back(row);
      timelines.emplace_back(name, build_timeline(run.strategy, cfg.topology, cfg.costs,
                                                  run.global_batch, cfg.iterations));
    }

    const std::string dir = cfg.output.directory;
    if (cfg.output.csv) write_report_csv(dir + "/report.csv", rows);
    if (cfg.output.md) write_report_md(dir + "/report.md", rows);
    write_timeline_csv(dir + "/timeline.csv", timelines);

    std::cout << report_csv_header() << "\n";
    for (const auto& r : rows) std::cout << report_csv_line(r) << "\n";
    detail::log_info("simulate: wrote " + dir + "/report.csv");
    return 0;
  });
}

inline int run_train(const CliOptions& opts) {
  return detail::guarded([&] {
    ExperimentConfig cfg = detail::load_with_overrides(opts);
    detail::require(!cfg.strategies.empty(), "config has no [strategy ...] sections");
    for (const auto& [name, run] : cfg.strategies) {
      if (run.strategy.tensor_degree != 1 || run.strategy.pipeline_stages != 1) {
        throw ConfigError("strategy '" + name +
                          "': training requires tensor_degree = 1 and pipeline_stages = 1");
      }
    }

    const TrainerSpec& tr = cfg.trainer;
    InteractionDataset ds;
    if (!tr.dataset_path.empty()) {
      detail::log_info("loading dataset " + tr.dataset_path);
      ds = load_dataset(tr.dataset_path);
      if (ds.duplicates_dropped > 0) {
        detail::log_info("dropped " + std::to_string(ds.duplicates_dropped) + " duplicate rows");
      }
    } else {
      detail::log_info("generating synthetic dataset (" + std::to_string(tr.synthetic_users) +
                       " users, " + std::to_string(tr.synthetic_items) + " items, " +
                       std::to_string(tr.synthetic_interactions) + " interactions)");
      ds = generate_synthetic(tr.synthetic_users, tr.synthetic_items, tr.synthetic_interactions,
                              tr.synthetic_seed);
    }
    ChronoSplit split = chrono_split(ds);

    const std::string dir = cfg.output.directory;
    std::vector<QualityRow> rows;
    for (const auto& [name, run] : cfg.strategies) {
      QualityRow row;
      row.scheme = name;
      if (opts.eval_only) {
        std::string model_path =
            (opts.model_dir.empty() ? dir : opts.model_dir) + "/model_" + name + ".bin";
        RecModel model = load_model(model_path);
        row.eval = evaluate_topk(model, split, tr.eval_k, tr.eval_negatives, opts.seed + 2);
      } else {
        HyperParams h;
        h.learning_rate = run.learning_rate.value_or(tr.learning_rate);
        h.batch_size = tr.batch_size;
        h.steps = tr.steps;
        detail::log_info("training scheme " + name + " (lr " + std::to_string(h.learning_rate) +
                         ", " + std::to_string(h.steps) + " steps)");
        RecModel init = RecModel::init(ds.num_users, ds.num_items, tr.embedding_dim, opts.seed);
        TrainResult result = train(std::move(init), split, run.strategy, h, opts.seed + 1);
        save_model(dir + "/model_" + name + ".bin", result.model);
        write_loss_curve_csv(dir + "/loss_curve_" + name + ".csv", result.loss_curve);
        row.final_loss = result.loss_curve.empty() ? 0.0 : result.loss_curve.back().second;
        row.eval = evaluate_topk(result.model, split, tr.eval_k, tr.eval_negatives, opts.seed + 2);
      }
      detail::log_info(name + ": HR@" + std::to_string(tr.eval_k) + " = " +
                       std::to_string(row.eval.hr_at_10) + ", NDCG = " +
                       std::to_string(row.eval.ndcg_at_10));
      rows.push_back(std::move(row));
    }

    write_quality_csv(dir + "/quality.csv", rows);
    std::cout << "scheme,hr_at_10,ndcg_at_10\n";
    for (const auto& r : rows) {
      std::cout << r.scheme << ',' << detail::fmt_fixed(r.eval.hr_at_10, 6) << ','
                << detail::fmt_fixed(r.eval.ndcg_at_10, 6) << "\n";
    }
    return 0;
  });
}

inline int run_calibrate(const CliOptions& opts) {
  return detail::guarded([&] {
    ExperimentConfig cfg = detail::load_with_overrides(opts);
    detail::require(!cfg.anchors.empty(), "config has no [anchors] section");

    std::vector<CalibrationTarget> targets;
    for (const auto& [name, observed] : cfg.anchors) {
      const StrategyRun* run = cfg.find_strategy(name);
      detail::require(run != nullptr, "[anchors] references unknown strategy '" + name + "'");
      targets.push_back({name, run->strategy, run->global_batch, observed});
    }
    std::vector<std::string> free = cfg.calibration.free_params;
    if (free.empty()) {
      free = {"compute_time_per_sample_per_device", "fixed_overhead_per_iteration",
              "gradient_bytes", "activation_bytes_per_microbatch"};
    }

    detail::log_info("calibrating " + std::to_string(free.size()) + " parameters against " +
                     std::to_string(targets.size()) + " anchors");
    CalibrationResult fit = calibrate(targets, free, cfg.costs, cfg.topology);

    const std::string dir = cfg.output.directory;
    detail::write_text_file(dir + "/costs_fitted.cfg", serialize_costs(fit.params));
    std::vector<ResidualRow> rrows;
    double worst = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      auto rep = simulate_run(targets[i].strategy, cfg.topology, fit.params,
                              targets[i].global_batch, 1);
      rrows.push_back({targets[i].name, targets[i].observed_throughput, rep.throughput,
                       fit.residuals[i]});
      worst = std::max(worst, std::abs(fit.residuals[i]));
    }
    write_residuals_csv(dir + "/residuals.csv", rrows);

    std::cout << "anchor,observed_throughput,simulated_throughput,residual_pct\n";
    for (const auto& r : rrows) {
      std::cout << r.anchor << ',' << detail::fmt_fixed(r.observed, 1) << ','
                << detail::fmt_fixed(r.simulated, 1) << ','
                << detail::fmt_fixed(100.0 * r.residual, 3) << "\n";
    }
    detail::log_info("calibrate: wrote " + dir + "/costs_fitted.cfg (worst residual " +
                     detail::fmt_fixed(100.0 * worst, 2) + "%)");
    if (worst > cfg.calibration.max_residual) {
      std::cerr << "parsim: anchors not fittable within " << 100.0 * cfg.calibration.max_residual
                << "% (worst " << 100.0 * worst << "%)\n";
      return 2;
    }
    return 0;
  });
}

inline int run_report(const std::vector<std::string>& run_dirs, const std::string& out_path) {
  return detail::guarded([&] {
    detail::require(!run_dirs.empty(), "report: at least one run directory required");
    std::vector<std::pair<std::string, std::vector<ReportRow>>> runs;
    for (const auto& dir : run_dirs) {
      std::string path = dir + "/report.csv";
      if (!std::filesystem::exists(path)) {
        throw std::runtime_error("report: missing artifact '" + path + "'");
      }
      runs.emplace_back(dir, read_report_csv(path));
    }

    std::ostringstream md;
    md << "# Combined run report\n\n";

    md << "## Communication share\n\n| Run | Scheme | Comm share | Comm overhead (ms/iter) |\n"
       << "|---|---|---|---|\n";
    for (const auto& [dir, rows] : runs) {
      for (const auto& r : rows) {
        md << "| " << dir << " | " << r.scheme << " | "
           << detail::fmt_fixed(100.0 * r.report.comm_share, 1) << "% | "
           << detail::fmt_fixed(r.report.comm_overhead_ms, 2) << " |\n";
      }
    }
    // Note the per-run ordering by share, highest first.
    for (const auto& [dir, rows] : runs) {
      std::vector<ReportRow> sorted = rows;
      std::stable_sort(sorted.begin(), sorted.end(), [](const ReportRow& a, const ReportRow& b) {
        return a.report.comm_share > b.report.comm_share;
      });
      md << "\nComm-share ordering for " << dir << ": ";
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        md << (i ? " > " : "") << sorted[i].scheme;
      }
      md << "\n";
    }

    md << "\n## Utilization\n\n| Run | Scheme | GPU util | Memory util |\n|---|---|---|---|\n";
    for (const auto& [dir, rows] : runs) {
      for (const auto& r : rows) {
        md << "| " << dir << " | " << r.scheme << " | "
           << detail::fmt_fixed(100.0 * r.report.device_utilization, 1) << "% | "
           << detail::fmt_fixed(100.0 * r.report.memory_utilization, 1) << "% |\n";
      }
    }

    // Scalability: rows by node count, one throughput/speedup column per scheme.
    std::vector<std::string> schemes;
    std::map<std::size_t, std::map<std::string, const ReportRow*>> by_nodes;
    for (const auto& [dir, rows] : runs) {
      for (const auto& r : rows) {
        if (std::find(schemes.begin(), schemes.end(), r.scheme) == schemes.end()) {
          schemes.push_back(r.scheme);
        }
        by_nodes[r.nodes][r.scheme] = &r;
      }
    }
    md << "\n## Scalability\n\n| Nodes |";
    for (const auto& s : schemes) md << " " << s << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < schemes.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& [nodes, per_scheme] : by_nodes) {
      md << "| " << nodes << " |";
      for (const auto& s : schemes) {
        auto it = per_scheme.find(s);
        if (it == per_scheme.end()) {
          md << " - |";
        } else {
          md << " " << detail::fmt_fixed(it->second->report.throughput, 0) << " / "
             << detail::fmt_fixed(it->second->report.speedup, 2) << "x |";
        }
      }
      md << "\n";
    }

    detail::write_text_file(out_path, md.str());
    std::cout << md.str();
    detail::log_info("report: wrote " + out_path);
    return 0;
  });
}

}  // namespace parsim
