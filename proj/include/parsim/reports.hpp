// SPDX-License-Identifier: Apache-2.0
//
// CSV and markdown emission for simulator and trainer results. The main
// report keeps a fixed throughput / speedup / utilization / overhead column
// order so rows from different runs line up.

#pragma once

#include <filesystem>
#include <iomanip>

#include "parsim/config.hpp"

namespace parsim {

struct ReportRow {
  std::string scheme;
  std::size_t devices = 1;
  std::size_t nodes = 1;
  SimReport report;
};

namespace detail {

inline std::string fmt_fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace detail

inline const char* report_csv_header() {
  return "scheme,throughput_samples_per_s,speedup,gpu_util_pct,comm_overhead_ms_per_iter,"
         "comm_share_pct,mem_util_pct,devices,nodes";
}

inline std::string report_csv_line(const ReportRow& r) {
  std::ostringstream s;
  s << r.scheme << ',' << detail::fmt_fixed(r.report.throughput, 1) << ','
    << detail::fmt_fixed(r.report.speedup, 3) << ','
    << detail::fmt_fixed(100.0 * r.report.device_utilization, 1) << ','
    << detail::fmt_fixed(r.report.comm_overhead_ms, 2) << ','
    << detail::fmt_fixed(100.0 * r.report.comm_share, 1) << ','
    << detail::fmt_fixed(100.0 * r.report.memory_utilization, 1) << ',' << r.devices << ','
    << r.nodes;
  return s.str();
}

inline void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << report_csv_header() << "\n";
  for (const auto& r : rows) out << report_csv_line(r) << "\n";
  detail::write_text_file(path, out.str());
}

inline void write_report_md(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "| Scheme | Throughput (samples/s) | Speedup | GPU Util% | Comm. Overhead (ms/iter) | "
         "Comm Share% | Mem Util% |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out << "| " << r.scheme << " | " << detail::fmt_fixed(r.report.throughput, 0) << " | "
        << detail::fmt_fixed(r.report.speedup, 2) << "x | "
        << detail::fmt_fixed(100.0 * r.report.device_utilization, 0) << "% | "
        << detail::fmt_fixed(r.report.comm_overhead_ms, 2) << " | "
        << detail::fmt_fixed(100.0 * r.report.comm_share, 1) << "% | "
        << detail::fmt_fixed(100.0 * r.report.memory_utilization, 1) << "% |\n";
  }
  detail::write_text_file(path, out.str());
}

/// One block of `iter,device,event_kind,start_s,end_s` rows per scheme,
/// separated by a `# strategy <name>` comment line.
inline void write_timeline_csv(const std::string& path,
                               const std::vector<std::pair<std::string, EventQueue>>& timelines) {
  std::ostringstream out;
  out << "iter,device,event_kind,start_s,end_s\n";
  for (const auto& [name, queue] : timelines) {
    out << "# strategy " << name << "\n";
    for (const auto& e : queue.events) {
      out << e.iteration << ',' << e.device << ',' << to_string(e.kind) << ','
          << detail::fmt_fixed(e.start, 9) << ',' << detail::fmt_fixed(e.end, 9) << "\n";
    }
  }
  detail::write_text_file(path, out.str());
}

struct QualityRow {
  std::string scheme;
  EvalResult eval;
  double final_loss = 0.0;
};

inline void write_quality_csv(const std::string& path, const std::vector<QualityRow>& rows) {
  std::ostringstream out;
  out << "scheme,hr_at_10,ndcg_at_10,num_eval_users,final_loss\n";
  for (const auto& r : rows) {
    out << r.scheme << ',' << detail::fmt_fixed(r.eval.hr_at_10, 6) << ','
        << detail::fmt_fixed(r.eval.ndcg_at_10, 6) << ',' << r.eval.num_eval_users << ','
        << detail::fmt_fixed(r.final_loss, 6) << "\n";
  }
  detail::write_text_file(path, out.str());
}

inline void write_loss_curve_csv(const std::string& path,
                                 const std::vector<std::pair<std::size_t, double>>& curve) {
  std::ostringstream out;
  out << "step,loss\n";
  for (const auto& [step, loss] : curve) out << step << ',' << detail::fmt_fixed(loss, 8) << "\n";
  detail::write_text_file(path, out.str());
}

struct ResidualRow {
  std::string anchor;
  double observed = 0.0;
  double simulated = 0.0;
  double residual = 0.0;  // relative
};

inline void write_residuals_csv(const std::string& path, const std::vector<ResidualRow>& rows) {
  std::ostringstream out;
  out << "anchor,observed_throughput,simulated_throughput,residual_pct\n";
  for (const auto& r : rows) {
    out << r.anchor << ',' << detail::fmt_fixed(r.observed, 1) << ','
        << detail::fmt_fixed(r.simulated, 1) << ',' << detail::fmt_fixed(100.0 * r.residual, 3)
        << "\n";
  }
  detail::write_text_file(path, out.str());
}

/// Minimal reader for the report.csv files this library writes.
inline std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != report_csv_header()) {
    throw std::runtime_error("'" + path + "' is not a parsim report (bad header)");
  }
  std::vector<ReportRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 9) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 9 fields");
    }
    ReportRow r;
    r.scheme = fields[0];
    std::string where = path + ":" + std::to_string(line_no);
    try {
      r.report.throughput = detail::cfg_double(fields[1], where);
      r.report.speedup = detail::cfg_double(fields[2], where);
      r.report.device_utilization = detail::cfg_double(fields[3], where) / 100.0;
      r.report.comm_overhead_ms = detail::cfg_double(fields[4], where);
      r.report.comm_share = detail::cfg_double(fields[5], where) / 100.0;
      r.report.memory_utilization = detail::cfg_double(fields[6], where) / 100.0;
      r.devices = detail::cfg_count(fields[7], where);
      r.nodes = detail::cfg_count(fields[8], where);
    } catch (const ConfigError& e) {
      throw std::runtime_error(e.what());  // corrupt artifact, not a config problem
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace parsim
