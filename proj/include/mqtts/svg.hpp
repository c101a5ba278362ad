#pragma once

// Minimal SVG line plots, enough for loss curves, sweeps, and alignment
// paths. Output is a standalone .svg with axes, ticks, and a legend.

#include <string>
#include <vector>

#include "mqtts/inference.hpp"

namespace mqtts {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string render_line_plot(const std::string& title, const std::string& xlabel,
                             const std::string& ylabel, const std::vector<Series>& series);

void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series);

// Alignment path (encoder position per decoder step) with the window
// attention entropy overlaid on a secondary scale.
void write_alignment_plot(const std::string& path, const SynthesisDiagnostics& diag);

}  // namespace mqtts
