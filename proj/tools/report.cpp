#include "report.hpp"

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

namespace dex::cli {

namespace {

struct GroupKey {
  std::string scenario;
  double latency_ms = 0.0;
  std::string frame;
  bool matching = true;

  // Relative before global and on before off, matching the ablation layout.
  bool operator<(const GroupKey& o) const {
    return std::make_tuple(scenario, latency_ms, frame != "relative", !matching) <
           std::make_tuple(o.scenario, o.latency_ms, o.frame != "relative", !o.matching);
  }
};

struct Group {
  GroupKey key;
  ConditionSummary summary;
  std::vector<int> i_stars;
};

std::string f(const char* fmt, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, x);
  return buf;
}

std::string pct(double r) { return f("%.1f%%", 100.0 * r); }

std::string label_name(const std::string& frame) {
  return frame == "relative" ? "chest-relative" : frame == "global" ? "global" : frame;
}

std::string failures_text(const std::map<std::string, int>& m) {
  if (m.empty()) return "-";
  std::string s;
  for (const auto& [k, v] : m) s += (s.empty() ? "" : "; ") + (k.empty() ? std::string("unknown") : k) + " " + std::to_string(v);
  return s;
}

std::vector<Group> group_rows(const std::vector<EpisodeMetrics>& rows) {
  std::map<GroupKey, std::vector<EpisodeMetrics>> by;
  for (const EpisodeMetrics& m : rows) by[{m.scenario, m.latency_ms, m.frame, m.matching}].push_back(m);
  std::vector<Group> out;
  for (const auto& [k, v] : by) {
    Condition c;
    c.frame = k.frame == "global" ? LabelFrame::global : LabelFrame::relative;
    c.matching = k.matching;
    Group g{k, summarize(c, v), {}};
    for (const EpisodeMetrics& m : v) g.i_stars.insert(g.i_stars.end(), m.i_stars.begin(), m.i_stars.end());
    if (g.i_stars.empty()) {
      // Older CSVs without per-splice values: fall back to episode means.
      double s = 0.0, s2 = 0.0, n = 0.0;
      for (const EpisodeMetrics& m : v) {
        if (m.splices == 0) continue;
        s += m.i_star_mean * m.splices;
        s2 += (m.i_star_std * m.i_star_std + m.i_star_mean * m.i_star_mean) * m.splices;
        n += m.splices;
      }
      if (n > 0) {
        g.summary.i_star_mean = s / n;
        g.summary.i_star_std = std::sqrt(std::max(0.0, s2 / n - g.summary.i_star_mean * g.summary.i_star_mean));
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::string condition_name(const GroupKey& k) {
  return k.scenario + " " + f("%g", k.latency_ms) + " ms, " + label_name(k.frame) + ", matching " +
         (k.matching ? "on" : "off");
}

struct Matrix {
  std::string scenario;
  double latency_ms;
  const Group* cell[2][2] = {{nullptr, nullptr}, {nullptr, nullptr}};  // [relative, global][on, off]
};

std::vector<Matrix> find_matrices(const std::vector<Group>& groups) {
  std::map<std::pair<std::string, double>, Matrix> m;
  for (const Group& g : groups) {
    auto& x = m[{g.key.scenario, g.key.latency_ms}];
    x.scenario = g.key.scenario;
    x.latency_ms = g.key.latency_ms;
    const int r = g.key.frame == "relative" ? 0 : g.key.frame == "global" ? 1 : -1;
    if (r >= 0) x.cell[r][g.key.matching ? 0 : 1] = &g;
  }
  std::vector<Matrix> out;
  for (const auto& [k, x] : m) {
    bool full = true;
    for (const auto& row : x.cell)
      for (const Group* c : row) full = full && c != nullptr;
    if (full) out.push_back(x);
  }
  return out;
}

std::string markdown(const std::vector<Group>& groups, std::size_t episodes) {
  std::ostringstream os;
  os << "# Simulation report\n\n" << episodes << " episodes in " << groups.size() << " condition"
     << (groups.size() == 1 ? "" : "s") << ".\n\n";
  os << "| scenario | latency (ms) | labels | matching | trials | success | mean time (s) | rollbacks/episode | "
        "jitter/episode | i* mean | i* std | failures |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const Group& g : groups) {
    const ConditionSummary& s = g.summary;
    os << "| " << g.key.scenario << " | " << f("%g", g.key.latency_ms) << " | " << label_name(g.key.frame) << " | "
       << (g.key.matching ? "on" : "off") << " | " << s.trials << " | " << pct(s.success_rate) << " | "
       << f("%.2f", s.mean_time) << " | " << f("%.2f", s.rollbacks_mean) << " | " << f("%.2f", s.jitter_mean)
       << " | " << f("%.2f", s.i_star_mean) << " | " << f("%.2f", s.i_star_std) << " | "
       << failures_text(s.failures) << " |\n";
  }
  for (const Matrix& m : find_matrices(groups)) {
    os << "\n## Success matrix: " << m.scenario << ", " << f("%g", m.latency_ms) << " ms\n\n";
    os << "| labels | matching on | matching off |\n|---|---|---|\n";
    const char* rows[2] = {"chest-relative", "global"};
    for (int r = 0; r < 2; ++r)
      os << "| " << rows[r] << " | " << pct(m.cell[r][0]->summary.success_rate) << " | "
         << pct(m.cell[r][1]->summary.success_rate) << " |\n";
  }
  os << "\nJitter counts forward-velocity sign reversals in the window around each splice. It is a proxy for "
        "visible mechanical jitter, not a measurement of it. Rollbacks count executed base waypoints more than "
        "5 mm behind the robot along its heading while the chunk moves forward.\n\n";
  os << "Plots: `istar_hist.svg` (per-splice i* histograms) and `rollbacks_jitter.svg`.\n";
  return os.str();
}

std::string text(const std::vector<Group>& groups) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-48s %6s %8s %9s %9s %6s %6s\n", "condition", "trials", "success", "rollbacks",
                "jitter", "i*", "i*sd");
  os << line;
  for (const Group& g : groups) {
    const ConditionSummary& s = g.summary;
    std::snprintf(line, sizeof line, "%-48s %6d %7.1f%% %9.2f %9.2f %6.2f %6.2f\n", condition_name(g.key).c_str(),
                  s.trials, 100.0 * s.success_rate, s.rollbacks_mean, s.jitter_mean, s.i_star_mean, s.i_star_std);
    os << line;
  }
  for (const Matrix& m : find_matrices(groups)) {
    os << "\nsuccess matrix " << m.scenario << " " << f("%g", m.latency_ms) << " ms\n";
    std::snprintf(line, sizeof line, "%-16s %12s %12s\n", "labels", "matching on", "matching off");
    os << line;
    const char* rows[2] = {"chest-relative", "global"};
    for (int r = 0; r < 2; ++r) {
      std::snprintf(line, sizeof line, "%-16s %11.1f%% %11.1f%%\n", rows[r],
                    100.0 * m.cell[r][0]->summary.success_rate, 100.0 * m.cell[r][1]->summary.success_rate);
      os << line;
    }
  }
  return os.str();
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f("%.0f", w) + "\" height=\"" + f("%.0f", h) +
         "\" viewBox=\"0 0 " + f("%.0f", w) + " " + f("%.0f", h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string rect(double x, double y, double w, double h, const char* fill) {
  return "<rect x=\"" + f("%.2f", x) + "\" y=\"" + f("%.2f", y) + "\" width=\"" + f("%.2f", w) + "\" height=\"" +
         f("%.2f", h) + "\" fill=\"" + fill + "\"/>\n";
}

std::string label(double x, double y, const std::string& s, const char* anchor = "start") {
  return "<text x=\"" + f("%.2f", x) + "\" y=\"" + f("%.2f", y) + "\" text-anchor=\"" + anchor + "\">" + s +
         "</text>\n";
}

std::string istar_svg(const std::vector<Group>& groups) {
  int max_i = 0;
  for (const Group& g : groups)
    for (int i : g.i_stars) max_i = std::max(max_i, i);
  const double panel_h = 110.0, left = 60.0, width = 480.0, bar_w = width / (max_i + 1);
  std::string s = svg_open(left + width + 20.0, 30.0 + panel_h * static_cast<double>(groups.size()));
  s += label(10, 18, "Per-splice i* histogram by condition");
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    const double top = 30.0 + panel_h * static_cast<double>(gi), base = top + panel_h - 30.0;
    std::vector<int> counts(static_cast<std::size_t>(max_i) + 1, 0);
    for (int i : g.i_stars) ++counts[static_cast<std::size_t>(i)];
    const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
    s += label(left, top + 10, condition_name(g.key) + " (" + std::to_string(g.i_stars.size()) + " splices)");
    for (int i = 0; i <= max_i; ++i) {
      const double h = (panel_h - 50.0) * counts[static_cast<std::size_t>(i)] / peak;
      s += rect(left + i * bar_w + 1.0, base - h, bar_w - 2.0, h, kPalette[gi % 8]);
      s += label(left + (i + 0.5) * bar_w, base + 12, std::to_string(i), "middle");
    }
    s += label(left - 6, base, "0", "end") + label(left - 6, base - (panel_h - 50.0) + 8, std::to_string(peak), "end");
  }
  return s + "</svg>\n";
}

std::string bars_svg(const std::vector<Group>& groups) {
  double peak = 1e-9;
  for (const Group& g : groups) peak = std::max({peak, g.summary.rollbacks_mean, g.summary.jitter_mean});
  const double row_h = 36.0, left = 330.0, width = 300.0;
  std::string s = svg_open(left + width + 80.0, 50.0 + row_h * static_cast<double>(groups.size()));
  s += label(10, 18, "Mean rollbacks (dark) and splice-jitter proxy (light) per episode");
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    const double y = 34.0 + row_h * static_cast<double>(gi);
    s += label(left - 8, y + 14, condition_name(g.key), "end");
    const double rb = width * g.summary.rollbacks_mean / peak, jt = width * g.summary.jitter_mean / peak;
    s += rect(left, y, rb, 12, "#444444") + label(left + rb + 4, y + 10, f("%.2f", g.summary.rollbacks_mean));
    s += rect(left, y + 14, jt, 12, "#aaaaaa") + label(left + jt + 4, y + 24, f("%.2f", g.summary.jitter_mean));
  }
  return s + "</svg>\n";
}

}  // namespace

ReportFiles render_report(const std::vector<EpisodeMetrics>& rows) {
  if (rows.empty()) throw DomainRejected("report: no episodes in the metrics input");
  const std::vector<Group> groups = group_rows(rows);
  return {markdown(groups, rows.size()), text(groups), istar_svg(groups), bars_svg(groups)};
}

}  // namespace dex::cli
