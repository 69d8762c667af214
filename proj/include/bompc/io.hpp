#pragma once

// Text formats for episode trajectories and BO traces, and all-or-nothing
// file writes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bompc/bo.hpp"
#include "bompc/ecm.hpp"
#include "bompc/harness.hpp"

namespace bompc {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 17 significant digits: parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr std::string_view kTrajectoryHeader = "k,t_s,i_a,z,u1_v,vt_v,vt_limit_v";

inline void write_trajectory_csv(std::ostream& out, std::span<const EpisodeStep> trajectory) {
  out << kTrajectoryHeader << '\n';
  for (const auto& r : trajectory) {
    out << r.k << ',' << format_double(r.t_s) << ',' << format_double(r.i_a) << ',' << format_double(r.z) << ','
        << format_double(r.u1_v) << ',' << format_double(r.vt_v) << ',' << format_double(r.vt_limit_v) << '\n';
  }
}

inline std::string trajectory_csv(std::span<const EpisodeStep> trajectory) {
  std::ostringstream os;
  write_trajectory_csv(os, trajectory);
  return os.str();
}

inline std::vector<EpisodeStep> parse_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kTrajectoryHeader) {
    throw IoError("trajectory: missing header '" + std::string(kTrajectoryHeader) + "'");
  }
  std::vector<EpisodeStep> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(detail::trim(line), ',');
    if (f.size() != 7) throw IoError("trajectory: line " + std::to_string(lineno) + ": expected 7 fields");
    double v[7];
    for (std::size_t c = 0; c < 7; ++c) {
      if (!detail::parse_double(f[c], v[c])) {
        throw IoError("trajectory: line " + std::to_string(lineno) + ": bad number '" + std::string(f[c]) + "'");
      }
    }
    rows.push_back({static_cast<int>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6]});
  }
  return rows;
}

/// One trace line: {"n":..,"theta":[..],"g":..,"best_g":..}.
inline std::string bo_record_json(const BoRecord& r) {
  std::string s = "{\"n\":" + std::to_string(r.n) + ",\"theta\":[";
  for (std::size_t i = 0; i < r.theta.size(); ++i) {
    if (i) s += ',';
    s += format_double(r.theta[i]);
  }
  s += "],\"g\":" + format_double(r.g) + ",\"best_g\":" + format_double(r.best_g) + "}";
  return s;
}

inline std::string bo_trace_jsonl(const BoTrace& trace) {
  std::string s;
  for (const auto& r : trace.records) s += bo_record_json(r) + '\n';
  return s;
}

/// Writes `content` to a sibling temporary file and renames it over `path`,
/// so readers see either the old file, nothing, or the complete new file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) {
      out.close();
      std::error_code ignored;
      fs::remove(tmp, ignored);
      throw IoError("write to " + tmp.string() + " failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace bompc
