#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bros/solvers.hpp"

namespace bros {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a content hash of the resolved configuration text.
inline std::string content_hash(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

// Leading comment block carried by every output file: tool version,
// subcommand, resolved configuration, seed.
struct Manifest {
  std::string subcommand;
  std::string config;  // resolved configuration, one line
  std::uint64_t seed = 0;

  void write(std::ostream& os) const {
    os << "# tool-version: " << kToolVersion << "\n";
    os << "# subcommand: " << subcommand << "\n";
    os << "# config: " << config << "\n";
    os << "# config-hash: " << content_hash(config) << "\n";
    os << "# seed: " << seed << "\n";
  }
};

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace detail

// Generic CSV table with a manifest header. Byte output is a pure function
// of the manifest and cell values.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void write(std::ostream& os, const Manifest& manifest) const {
    manifest.write(os);
    for (size_t c = 0; c < columns.size(); ++c) {
      if (c) os << ",";
      os << columns[c];
    }
    os << "\n";
    for (const auto& row : rows) {
      if (row.size() != columns.size()) throw std::invalid_argument("CsvTable: ragged row");
      for (size_t c = 0; c < row.size(); ++c) {
        if (c) os << ",";
        os << detail::format_double(row[c]);
      }
      os << "\n";
    }
  }
};

inline void write_csv_file(const std::string& path, const CsvTable& table, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_csv_file: cannot open " + path);
  table.write(out, manifest);
  if (!out) throw std::runtime_error("write_csv_file: write failed for " + path);
}

// Parses a file written by write_csv_file (manifest comments skipped).
inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv_file: cannot open " + path);
  CsvTable table;
  std::string line;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string cell;
    if (!header_done) {
      while (std::getline(ss, cell, ',')) table.columns.push_back(cell);
      header_done = true;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != table.columns.size()) throw std::runtime_error("read_csv_file: ragged row in " + path);
    table.rows.push_back(std::move(row));
  }
  if (!header_done) throw std::runtime_error("read_csv_file: missing header in " + path);
  return table;
}

inline CsvTable trajectory_table(const Trajectory& traj) {
  CsvTable table;
  table.columns = {"k", "grad_norm", "phi", "f_xy", "y_err", "z_err", "h_err", "wall_time"};
  for (const auto& r : traj.records)
    table.rows.push_back({static_cast<double>(r.k), r.grad_norm, r.phi, r.f_xy, r.y_err, r.z_err, r.h_err,
                          r.wall_time});
  return table;
}

}  // namespace bros
