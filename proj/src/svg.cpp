#include "mqtts/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "mqtts/error.hpp"

namespace mqtts {
namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 24.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 48.0;

const char* kPalette[] = {"#1f6fb2", "#d1495b", "#3a8f5f", "#8a6bbe", "#c98a1f", "#4f5d75"};
constexpr int kPaletteSize = 6;

struct Range {
  double lo = 0.0;
  double hi = 1.0;

  void widen(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

Range data_range(const std::vector<Series>& series, bool use_x) {
  Range r;
  r.lo = std::numeric_limits<double>::infinity();
  r.hi = -std::numeric_limits<double>::infinity();
  for (const Series& s : series) {
    const std::vector<double>& v = use_x ? s.x : s.y;
    for (double d : v) r.widen(d);
  }
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi)) {
    r.lo = 0.0;
    r.hi = 1.0;
  }
  if (r.hi <= r.lo) {
    const double pad = r.lo == 0.0 ? 1.0 : std::fabs(r.lo) * 0.5;
    r.lo -= pad;
    r.hi += pad;
  }
  return r;
}

double map_x(double v, const Range& r) {
  return kLeft + (v - r.lo) / (r.hi - r.lo) * (kWidth - kLeft - kRight);
}

double map_y(double v, const Range& r) {
  return kHeight - kBottom - (v - r.lo) / (r.hi - r.lo) * (kHeight - kTop - kBottom);
}

void axes(std::ostringstream& out, const std::string& title, const std::string& xlabel,
          const std::string& ylabel, const Range& rx, const Range& ry) {
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight
      << "\" height=\"" << kHeight - kTop - kBottom
      << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
  out << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
      << "transform=\"rotate(-90 16 " << kHeight / 2 << ")\">" << escape(ylabel) << "</text>\n";
  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double f = static_cast<double>(i) / kTicks;
    const double xv = rx.lo + f * (rx.hi - rx.lo);
    const double yv = ry.lo + f * (ry.hi - ry.lo);
    const double px = map_x(xv, rx);
    const double py = map_y(yv, ry);
    out << "<line x1=\"" << px << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << px << "\" y2=\""
        << kHeight - kBottom + 5 << "\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << px << "\" y=\"" << kHeight - kBottom + 18
        << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_tick(xv) << "</text>\n";
    out << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py << "\" x2=\"" << kLeft << "\" y2=\"" << py
        << "\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << py + 3
        << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_tick(yv) << "</text>\n";
  }
}

void polyline(std::ostringstream& out, const Series& s, const Range& rx, const Range& ry,
              const char* color) {
  if (s.x.size() != s.y.size())
    fail(ErrorKind::dimension, "svg: series '" + s.label + "' has mismatched x/y lengths");
  if (s.x.empty()) return;
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    if (i) out << ' ';
    out << map_x(s.x[i], rx) << ',' << map_y(s.y[i], ry);
  }
  out << "\"/>\n";
}

void legend(std::ostringstream& out, const std::vector<Series>& series) {
  double y = kTop + 16.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].label.empty()) continue;
    const char* color = kPalette[i % kPaletteSize];
    out << "<line x1=\"" << kLeft + 10 << "\" y1=\"" << y - 4 << "\" x2=\"" << kLeft + 34
        << "\" y2=\"" << y - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << kLeft + 40 << "\" y=\"" << y << "\" font-size=\"11\">"
        << escape(series[i].label) << "</text>\n";
    y += 16.0;
  }
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "svg: cannot open " + path + " for writing");
  out << body;
  if (!out) fail(ErrorKind::io, "svg: write failed for " + path);
}

}  // namespace

std::string render_line_plot(const std::string& title, const std::string& xlabel,
                             const std::string& ylabel, const std::vector<Series>& series) {
  const Range rx = data_range(series, true);
  const Range ry = data_range(series, false);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"#fff\"/>\n";
  axes(out, title, xlabel, ylabel, rx, ry);
  for (std::size_t i = 0; i < series.size(); ++i)
    polyline(out, series[i], rx, ry, kPalette[i % kPaletteSize]);
  legend(out, series);
  out << "</svg>\n";
  return out.str();
}

void write_line_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<Series>& series) {
  write_text(path, render_line_plot(title, xlabel, ylabel, series));
}

void write_alignment_plot(const std::string& path, const SynthesisDiagnostics& diag) {
  Series pos;
  pos.label = "encoder position";
  for (std::size_t i = 0; i < diag.alignment_path.size(); ++i) {
    pos.x.push_back(static_cast<double>(i));
    pos.y.push_back(static_cast<double>(diag.alignment_path[i]));
  }
  Series ent;
  ent.label = "window attention entropy (scaled)";
  // rescale onto the position axis so one plot carries both curves
  double emax = 0.0;
  for (double e : diag.attn_entropy) emax = std::max(emax, e);
  const double scale = emax > 0.0 ? static_cast<double>(diag.enc_len - 1) / emax : 1.0;
  for (std::size_t i = 0; i < diag.attn_entropy.size(); ++i) {
    ent.x.push_back(static_cast<double>(i));
    ent.y.push_back(diag.attn_entropy[i] * scale);
  }
  write_line_plot(path, "alignment path", "decoder step", "encoder position", {pos, ent});
}

}  // namespace mqtts
