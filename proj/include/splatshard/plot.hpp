#pragma once

#include <optional>
#include <string>
#include <vector>

namespace splatshard {

struct MetricsSample {
  long long step = 0;
  double minutes = 0;
  double loss = 0;
  std::optional<double> psnr;
};

/// Rows of a trainer metrics CSV; ParseError carries the 1-based line of a bad row.
std::vector<MetricsSample> parse_metrics_csv(const std::string& text, const std::string& source);

struct PlotOutput {
  std::string svg;
  std::string csv;  // minutes,step,loss,test_psnr
};

/// Line chart of test PSNR (left axis) and loss (right axis) against wall-clock minutes. Each
/// series is one <path> whose vertices are the data points.
PlotOutput plot_metrics(const std::vector<MetricsSample>& samples);

}  // namespace splatshard
