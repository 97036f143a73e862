#pragma once

// Versioned CSV files written by runs and sweeps, and a small reader for them.
//
//   run_record.csv   # rwfm run_record v1    one row per epoch, epoch 0 = pretrained baseline
//   loss.csv         # rwfm pretrain_loss v1 one row per pretraining epoch
//   aggregate.csv    # rwfm aggregate v1     one row per sweep value
//
// Numbers are written in shortest round-trip form.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwfm/checkpoint.hpp"
#include "rwfm/finetune.hpp"

namespace rwfm {

inline const std::string kRunRecordTag = "# rwfm run_record v1";
inline const std::string kPretrainLossTag = "# rwfm pretrain_loss v1";
inline const std::string kAggregateTag = "# rwfm aggregate v1";

inline const std::vector<std::string>& run_record_columns() {
  static const std::vector<std::string> cols = {
      "epoch",          "mean_reward",  "mean_weight",    "loss",
      "w2_penalty",     "mc_w2_integrand", "w2_bound",    "diversity",
      "mode_entropy",   "top_mode_share", "mean_pairwise_distance", "skipped_batches",
      "wall_time_s",    "mode_histogram"};
  return cols;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::string histogram_cell(const std::vector<std::size_t>& h) {
  std::vector<std::string> parts;
  for (auto c : h) parts.push_back(std::to_string(c));
  return join(parts, ';');
}

inline std::string run_record_row(const EpochRecord& r) {
  return join({std::to_string(r.epoch), format_double(r.mean_reward), format_double(r.mean_weight),
               format_double(r.loss), format_double(r.w2_penalty), format_double(r.mc_w2_integrand),
               format_double(r.w2_bound), format_double(r.diversity), format_double(r.mode_entropy),
               format_double(r.top_mode_share), format_double(r.mean_pairwise_distance),
               std::to_string(r.skipped_batches), format_double(r.wall_time_s), histogram_cell(r.mode_histogram)},
              ',');
}

inline void write_run_record(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << kRunRecordTag << '\n' << join(run_record_columns(), ',') << '\n';
  os << run_record_row(record.baseline) << '\n';
  for (const auto& e : record.epochs) os << run_record_row(e) << '\n';
}

struct CsvTable {
  std::string tag;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::out_of_range("csv: no column '" + name + "'");
  }

  std::vector<double> numbers(const std::string& name) const {
    const auto c = column_index(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(parse_double(r.at(c)));
    return out;
  }

  std::vector<std::string> strings(const std::string& name) const {
    const auto c = column_index(name);
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r.at(c));
    return out;
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# rwfm ", 0) != 0)
    throw std::runtime_error(path.string() + ": missing version line");
  t.tag = line;
  if (!std::getline(is, line)) throw std::runtime_error(path.string() + ": missing header");
  t.header = split(line, ',');
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != t.header.size())
      throw std::runtime_error(path.string() + ": row has " + std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace rwfm
