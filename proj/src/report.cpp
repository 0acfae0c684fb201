// SPDX-License-Identifier: Apache-2.0
#include "torsd/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "torsd/errors.hpp"

namespace torsd {
namespace fs = std::filesystem;

namespace {

constexpr double kW = 480, kH = 480, kPad = 40;
const char *const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

void write_file(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

struct Range {
  double lo, hi;
  double map(double v, double out_lo, double out_hi) const {
    const double span = hi > lo ? hi - lo : 1.0;
    return out_lo + (v - lo) / span * (out_hi - out_lo);
  }
};

template <typename F>
Range range_of(std::size_t n, F value) {
  Range r{0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double v = value(i);
    if (i == 0 || v < r.lo) r.lo = v;
    if (i == 0 || v > r.hi) r.hi = v;
  }
  return r;
}

std::string svg_open(const std::string &title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
     << " font-size=\"14\">" << title << "</text>\n"
     << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kW - 2 * kPad
     << "\" height=\"" << kH - 2 * kPad << "\" fill=\"none\" stroke=\"#999\"/>\n";
  return os.str();
}

std::string scatter_svg(const EmbeddingSet &e) {
  std::ostringstream os;
  os << svg_open("t-SNE of depth " + std::to_string(e.depth) + " features");
  const auto xs = range_of(e.points.size(), [&](std::size_t i) { return e.points[i][0]; });
  const auto ys = range_of(e.points.size(), [&](std::size_t i) { return e.points[i][1]; });
  for (std::size_t i = 0; i < e.points.size(); ++i) {
    const auto colour = kPalette[static_cast<std::size_t>(std::max(e.labels[i], 0)) % 10];
    os << "<circle cx=\"" << fmt(xs.map(e.points[i][0], kPad + 5, kW - kPad - 5)) << "\" cy=\""
       << fmt(ys.map(e.points[i][1], kH - kPad - 5, kPad + 5)) << "\" r=\"2.5\" fill=\"" << colour
       << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string ratio_svg(const std::vector<Separability> &seps) {
  std::ostringstream os;
  os << svg_open("SSE/SSB by depth");
  std::vector<std::pair<double, double>> pts;
  for (const auto &s : seps) {
    if (s.ratio) pts.emplace_back(static_cast<double>(s.depth), *s.ratio);
  }
  if (!pts.empty()) {
    Range xs = range_of(pts.size(), [&](std::size_t i) { return pts[i].first; });
    Range ys = range_of(pts.size(), [&](std::size_t i) { return pts[i].second; });
    ys.lo = std::min(ys.lo, 0.0);
    os << "<polyline fill=\"none\" stroke=\"" << kPalette[0] << "\" stroke-width=\"2\" points=\"";
    for (const auto &[x, y] : pts) {
      os << fmt(xs.map(x, kPad + 10, kW - kPad - 10)) << ','
         << fmt(ys.map(y, kH - kPad - 10, kPad + 10)) << ' ';
    }
    os << "\"/>\n";
    for (const auto &[x, y] : pts) {
      const double px = xs.map(x, kPad + 10, kW - kPad - 10);
      const double py = ys.map(y, kH - kPad - 10, kPad + 10);
      os << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"4\" fill=\""
         << kPalette[0] << "\"/>\n"
         << "<text x=\"" << fmt(px) << "\" y=\"" << fmt(kH - kPad + 16)
         << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">depth "
         << static_cast<std::size_t>(x) << "</text>\n"
         << "<text x=\"" << fmt(px + 6) << "\" y=\"" << fmt(py - 6)
         << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(y) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

} // namespace

void emit_report(const std::vector<Separability> &separability,
                 const std::vector<EmbeddingSet> &embeddings,
                 const std::vector<EvalReport> &history, const fs::path &out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create " + out_dir.string());

  std::ostringstream csv;
  csv << "depth,SSE,SSB,ratio\n";
  for (const auto &s : separability) {
    csv << s.depth << ',' << fmt(s.sse) << ',' << fmt(s.ssb) << ','
        << (s.ratio ? fmt(*s.ratio) : std::string()) << '\n';
  }
  write_file(out_dir / "separability.csv", csv.str());
  write_file(out_dir / "separability.svg", ratio_svg(separability));

  for (const auto &e : embeddings) {
    if (e.points.size() != e.labels.size()) {
      throw ArgumentError("embedding of depth " + std::to_string(e.depth) +
                          " has mismatched labels");
    }
    std::ostringstream pts;
    pts << "x,y,label\n";
    for (std::size_t i = 0; i < e.points.size(); ++i) {
      pts << fmt(e.points[i][0]) << ',' << fmt(e.points[i][1]) << ',' << e.labels[i] << '\n';
    }
    const std::string stem = "embeddings_depth" + std::to_string(e.depth);
    write_file(out_dir / (stem + ".csv"), pts.str());
    write_file(out_dir / (stem + ".svg"), scatter_svg(e));
  }

  if (!history.empty()) {
    std::ostringstream ev;
    ev << "epoch,accuracy,loss\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
      ev << i + 1 << ',' << fmt(history[i].accuracy) << ',' << fmt(history[i].loss) << '\n';
    }
    write_file(out_dir / "eval_history.csv", ev.str());
  }
}

} // namespace torsd
