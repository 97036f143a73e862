#pragma once

// SVG line / scatter charts and a plain-text summary rendered from the CSV
// files of a run or sweep directory. Output depends only on the CSV contents.
//
// Every plotted point is also written as a comment
//   <!-- rwfm-point series="mean_reward" x="3" y="0.51" -->
// holding the exact CSV values, so charts can be checked without rasterizing.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rwfm/checkpoint.hpp"
#include "rwfm/records.hpp"

namespace rwfm::report {

namespace fs = std::filesystem;

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<std::string> labels;  // optional per-point annotations
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool scatter = false;
  std::vector<Series> series;
  std::optional<double> reference_y;  // dashed horizontal line
  std::string reference_label;
};

inline Chart make_chart(std::string title, std::string x_label, std::string y_label, std::vector<Series> series,
                        bool scatter = false) {
  Chart c;
  c.title = std::move(title);
  c.x_label = std::move(x_label);
  c.y_label = std::move(y_label);
  c.series = std::move(series);
  c.scatter = scatter;
  return c;
}

namespace detail {

inline constexpr double kWidth = 640, kHeight = 420, kLeft = 80, kRight = 160, kTop = 40, kBottom = 60;
inline const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void fit(const std::vector<double>& v, bool& any) {
    for (double x : v) {
      if (!std::isfinite(x)) continue;
      if (!any) lo = hi = x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      any = true;
    }
  }
  void pad() {
    if (hi - lo < 1e-12) {
      lo -= 1.0;
      hi += 1.0;
    } else {
      const double m = 0.05 * (hi - lo);
      lo -= m;
      hi += m;
    }
  }
};

}  // namespace detail

inline std::string render_svg(const Chart& chart) {
  using namespace detail;
  Range xr, yr;
  bool any_x = false, any_y = false;
  for (const auto& s : chart.series) {
    xr.fit(s.x, any_x);
    yr.fit(s.y, any_y);
  }
  if (chart.reference_y) yr.fit({*chart.reference_y}, any_y);
  xr.pad();
  yr.pad();
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<!-- rwfm-chart title=\"" << escape(chart.title) << "\" -->\n";
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      os << "<!-- rwfm-point series=\"" << escape(s.name) << "\" x=\"" << format_double(s.x[i]) << "\" y=\""
         << format_double(s.y[i]) << "\" -->\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << px(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(chart.title) << "</text>\n";
  os << "<rect x=\"" << px(kLeft) << "\" y=\"" << px(kTop) << "\" width=\"" << px(pw) << "\" height=\"" << px(ph)
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = xr.lo + (xr.hi - xr.lo) * k / 4.0, yv = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    os << "<line x1=\"" << px(sx(xv)) << "\" y1=\"" << px(kTop + ph) << "\" x2=\"" << px(sx(xv)) << "\" y2=\""
       << px(kTop + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(sx(xv)) << "\" y=\"" << px(kTop + ph + 18) << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n";
    os << "<line x1=\"" << px(kLeft - 5) << "\" y1=\"" << px(sy(yv)) << "\" x2=\"" << px(kLeft) << "\" y2=\""
       << px(sy(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(kLeft - 8) << "\" y=\"" << px(sy(yv) + 4) << "\" text-anchor=\"end\">" << num(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << px(kLeft + pw / 2) << "\" y=\"" << px(kHeight - 15) << "\" text-anchor=\"middle\">"
     << escape(chart.x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << px(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << px(kTop + ph / 2) << ")\">" << escape(chart.y_label) << "</text>\n";
  if (chart.reference_y) {
    os << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(sy(*chart.reference_y)) << "\" x2=\"" << px(kLeft + pw)
       << "\" y2=\"" << px(sy(*chart.reference_y)) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const auto& s = chart.series[si];
    const char* color = kPalette[si % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += px(sx(s.x[i])) + "," + px(sy(s.y[i]));
    }
    if (!chart.scatter && !pts.empty())
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << "<circle cx=\"" << px(sx(s.x[i])) << "\" cy=\"" << px(sy(s.y[i])) << "\" r=\""
         << (chart.scatter ? "4" : "2.5") << "\" fill=\"" << color << "\"/>\n";
      if (i < s.labels.size() && !s.labels[i].empty())
        os << "<text x=\"" << px(sx(s.x[i]) + 6) << "\" y=\"" << px(sy(s.y[i]) - 6) << "\">" << escape(s.labels[i])
           << "</text>\n";
    }
    const double ly = kTop + 12 + 18.0 * static_cast<double>(si);
    os << "<rect x=\"" << px(kLeft + pw + 12) << "\" y=\"" << px(ly - 8) << "\" width=\"10\" height=\"10\" fill=\""
       << color << "\"/>\n";
    os << "<text x=\"" << px(kLeft + pw + 28) << "\" y=\"" << px(ly + 1) << "\">" << escape(s.name) << "</text>\n";
  }
  if (chart.reference_y) {
    const double ly = kTop + 12 + 18.0 * static_cast<double>(chart.series.size());
    os << "<text x=\"" << px(kLeft + pw + 12) << "\" y=\"" << px(ly + 1) << "\" fill=\"gray\">- - "
       << escape(chart.reference_label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Points embedded in a rendered chart, keyed by series name.
inline std::map<std::string, std::vector<std::pair<double, double>>> parse_svg_points(const std::string& svg) {
  static const std::regex re(R"re(<!-- rwfm-point series="([^"]*)" x="([^"]*)" y="([^"]*)" -->)re");
  std::map<std::string, std::vector<std::pair<double, double>>> out;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it)
    out[(*it)[1].str()].emplace_back(parse_double((*it)[2].str()), parse_double((*it)[3].str()));
  return out;
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << s;
}

inline Series column_series(const CsvTable& t, const std::string& x, const std::string& y, std::size_t skip = 0) {
  Series s;
  s.name = y;
  const auto xs = t.numbers(x), ys = t.numbers(y);
  s.x.assign(xs.begin() + static_cast<std::ptrdiff_t>(std::min(skip, xs.size())), xs.end());
  s.y.assign(ys.begin() + static_cast<std::ptrdiff_t>(std::min(skip, ys.size())), ys.end());
  return s;
}

inline std::string fmt_row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::string c = cells[i];
    if (c.size() < widths[i]) c.insert(0, widths[i] - c.size(), ' ');
    out += (i ? "  " : "") + c;
  }
  return out + "\n";
}

inline std::string table_text(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) widths[i] = header[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
  std::string out = fmt_row(header, widths);
  for (const auto& r : rows) out += fmt_row(r, widths);
  return out;
}

// Charts for a run directory with run_record.csv. Row 0 is the baseline; the
// curves show epochs 1..N with the baseline as a reference line.
inline std::vector<fs::path> run_report(const fs::path& dir, std::string& text) {
  const auto t = read_csv(dir / "run_record.csv");
  if (t.tag != kRunRecordTag) throw std::runtime_error("run_record.csv: unsupported version '" + t.tag + "'");
  std::vector<fs::path> written;
  const bool has_baseline = !t.rows.empty() && t.rows.front().at(0) == "0";
  const std::size_t skip = has_baseline ? 1 : 0;

  Chart reward = make_chart("Mean reward per epoch", "epoch", "mean reward", {column_series(t, "epoch", "mean_reward", skip)});
  if (has_baseline) {
    reward.reference_y = parse_double(t.rows.front()[t.column_index("mean_reward")]);
    reward.reference_label = "pretrained";
  }
  write_text(dir / "reward_curve.svg", render_svg(reward));
  written.push_back(dir / "reward_curve.svg");

  Chart w2 = make_chart("Distance to the reference per epoch", "epoch", "squared velocity gap", {column_series(t, "epoch", "mc_w2_integrand", skip), column_series(t, "epoch", "w2_penalty", skip)});
  write_text(dir / "w2_curve.svg", render_svg(w2));
  written.push_back(dir / "w2_curve.svg");

  Chart bound = make_chart("W2 upper bound per epoch", "epoch", "e^{2L} x integrand", {column_series(t, "epoch", "w2_bound", skip)});
  write_text(dir / "w2_bound.svg", render_svg(bound));
  written.push_back(dir / "w2_bound.svg");

  Chart div = make_chart("Diversity per epoch", "epoch", "diversity", {column_series(t, "epoch", "diversity", skip)});
  if (has_baseline) {
    div.reference_y = parse_double(t.rows.front()[t.column_index("diversity")]);
    div.reference_label = "pretrained";
  }
  write_text(dir / "diversity_curve.svg", render_svg(div));
  written.push_back(dir / "diversity_curve.svg");

  const std::vector<std::string> cols = {"epoch", "mean_reward", "diversity", "mode_entropy", "top_mode_share",
                                         "mc_w2_integrand", "w2_bound", "loss"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : t.rows) {
    std::vector<std::string> cells;
    for (const auto& c : cols) {
      const auto& cell = r[t.column_index(c)];
      cells.push_back(c == "epoch" ? cell : num(parse_double(cell)));
    }
    rows.push_back(cells);
  }
  text += "run: " + dir.filename().string() + "\n";
  text += "epochs: " + std::to_string(t.rows.size() - skip) + (has_baseline ? " (row 0 is the pretrained model)" : "") +
          "\n\n";
  text += table_text(cols, rows);
  return written;
}

inline std::vector<fs::path> sweep_report(const fs::path& dir, std::string& text) {
  const auto t = read_csv(dir / "aggregate.csv");
  if (t.tag != kAggregateTag) throw std::runtime_error("aggregate.csv: unsupported version '" + t.tag + "'");
  std::vector<fs::path> written;
  std::string parameter = "value";
  if (fs::exists(dir / "summary.json")) {
    std::ifstream is(dir / "summary.json");
    std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    static const std::regex re(R"re("parameter"\s*:\s*"([^"]*)")re");
    std::smatch m;
    if (std::regex_search(s, m, re)) parameter = m[1].str();
  }

  Series pts;
  pts.name = "final reward vs distance";
  pts.x = t.numbers("final_mc_w2_integrand");
  pts.y = t.numbers("final_reward");
  for (const auto& v : t.strings("value")) pts.labels.push_back(parameter + "=" + num(parse_double(v)));
  Chart trade = make_chart("Reward / distance trade-off", "Monte-Carlo W2 integrand to the reference", "final mean reward", {pts}, true);
  write_text(dir / "tradeoff.svg", render_svg(trade));
  written.push_back(dir / "tradeoff.svg");

  Chart curves = make_chart("Mean reward per epoch by " + parameter, "epoch", "mean reward", {});
  Chart dcurves = make_chart("Diversity per epoch by " + parameter, "epoch", "diversity", {});
  const auto values = t.strings("value");
  const auto run_dirs = t.strings("run_dir");
  for (std::size_t i = 0; i < run_dirs.size(); ++i) {
    const auto rec = dir / run_dirs[i] / "run_record.csv";
    if (!fs::exists(rec)) continue;
    const auto rt = read_csv(rec);
    const std::size_t skip = !rt.rows.empty() && rt.rows.front().at(0) == "0" ? 1 : 0;
    auto s = column_series(rt, "epoch", "mean_reward", skip);
    s.name = parameter + "=" + num(parse_double(values[i]));
    curves.series.push_back(s);
    auto d = column_series(rt, "epoch", "diversity", skip);
    d.name = s.name;
    dcurves.series.push_back(d);
  }
  if (!curves.series.empty()) {
    write_text(dir / "reward_curves.svg", render_svg(curves));
    write_text(dir / "diversity_curves.svg", render_svg(dcurves));
    written.push_back(dir / "reward_curves.svg");
    written.push_back(dir / "diversity_curves.svg");
  }

  const std::vector<std::string> cols = {"value", "final_reward", "final_diversity", "final_top_mode_share",
                                         "final_mc_w2_integrand", "final_w2_bound"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : t.rows) {
    std::vector<std::string> cells;
    for (const auto& c : cols) cells.push_back(num(parse_double(r[t.column_index(c)])));
    rows.push_back(cells);
  }
  text += "sweep over " + parameter + ": " + std::to_string(t.rows.size()) + " runs\n\n";
  text += table_text(cols, rows);
  return written;
}

inline std::vector<fs::path> pretrain_report(const fs::path& dir, std::string& text) {
  const auto t = read_csv(dir / "loss.csv");
  if (t.tag != kPretrainLossTag) throw std::runtime_error("loss.csv: unsupported version '" + t.tag + "'");
  Chart loss = make_chart("Pretraining loss per epoch", "epoch", "flow-matching loss", {column_series(t, "epoch", "loss")});
  write_text(dir / "loss_curve.svg", render_svg(loss));
  const auto l = t.numbers("loss");
  text += "pretraining: " + std::to_string(l.size()) + " epochs\n";
  if (!l.empty()) text += "first loss " + num(l.front()) + ", last loss " + num(l.back()) + "\n";
  return {dir / "loss_curve.svg"};
}

}  // namespace detail

// Renders every chart the directory's CSV files support and report.txt.
// Throws when the directory holds none of run_record.csv, aggregate.csv or
// loss.csv.
inline std::vector<fs::path> emit_report(const fs::path& dir) {
  std::string text;
  std::vector<fs::path> written;
  auto add = [&](std::vector<fs::path> w) { written.insert(written.end(), w.begin(), w.end()); };
  if (fs::exists(dir / "aggregate.csv")) add(detail::sweep_report(dir, text));
  if (fs::exists(dir / "run_record.csv")) add(detail::run_report(dir, text));
  if (fs::exists(dir / "loss.csv")) add(detail::pretrain_report(dir, text));
  if (written.empty())
    throw std::runtime_error("report: no run_record.csv, aggregate.csv or loss.csv in '" + dir.string() + "'");
  if (fs::exists(dir / "ABORTED")) text += "\nrun was aborted; see the ABORTED marker\n";
  detail::write_text(dir / "report.txt", text);
  written.push_back(dir / "report.txt");
  return written;
}

}  // namespace rwfm::report
