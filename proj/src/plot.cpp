#include "splatshard/plot.hpp"

#include "splatshard/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace splatshard {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, const std::string& source, std::size_t line,
                    const std::string& field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParseError(source, line, field, "'" + text + "' is not a finite number");
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

struct Range {
  double lo = 0, hi = 1;
  void fit(const std::vector<double>& values) {
    if (values.empty()) return;
    lo = *std::min_element(values.begin(), values.end());
    hi = *std::max_element(values.begin(), values.end());
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

}  // namespace

std::vector<MetricsSample> parse_metrics_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(source, 1, "header", "empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  auto column = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError(source, 1, name, "missing column");
    return std::size_t(it - header.begin());
  };
  const std::size_t c_step = column("step"), c_loss = column("loss"),
                    c_wall = column("wall_seconds"), c_psnr = column("test_psnr");
  std::vector<MetricsSample> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw ParseError(source, line_no, "row", "expected " + std::to_string(header.size()) +
                                                   " fields, found " + std::to_string(cells.size()));
    MetricsSample s;
    s.step = static_cast<long long>(parse_number(cells[c_step], source, line_no, "step"));
    s.loss = parse_number(cells[c_loss], source, line_no, "loss");
    s.minutes = parse_number(cells[c_wall], source, line_no, "wall_seconds") / 60.0;
    if (!cells[c_psnr].empty()) s.psnr = parse_number(cells[c_psnr], source, line_no, "test_psnr");
    out.push_back(s);
  }
  return out;
}

PlotOutput plot_metrics(const std::vector<MetricsSample>& samples) {
  constexpr double kWidth = 720, kHeight = 420, kLeft = 70, kRight = 70, kTop = 30, kBottom = 50;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;

  std::vector<double> minutes, losses, psnr_minutes, psnrs;
  for (const auto& s : samples) {
    minutes.push_back(s.minutes);
    losses.push_back(s.loss);
    if (s.psnr) {
      psnr_minutes.push_back(s.minutes);
      psnrs.push_back(*s.psnr);
    }
  }
  Range rx, rloss, rpsnr;
  rx.fit(minutes);
  rloss.fit(losses);
  rpsnr.fit(psnrs);
  auto sx = [&](double m) { return kLeft + (m - rx.lo) / (rx.hi - rx.lo) * plot_w; };
  auto sy = [&](double v, const Range& r) { return kTop + (1 - (v - r.lo) / (r.hi - r.lo)) * plot_h; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\"/>\n"
      << "<line x1=\"" << kLeft + plot_w << "\" y1=\"" << kTop << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\"/>\n"
      << "</g>\n"
      << "<g class=\"labels\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\">wall-clock minutes</text>\n"
      << "<text x=\"16\" y=\"" << kTop + plot_h / 2 << "\" transform=\"rotate(-90 16 "
      << kTop + plot_h / 2 << ")\" text-anchor=\"middle\" fill=\"#1f77b4\">test PSNR (dB)</text>\n"
      << "<text x=\"" << kWidth - 16 << "\" y=\"" << kTop + plot_h / 2 << "\" transform=\"rotate(90 "
      << kWidth - 16 << ' ' << kTop + plot_h / 2
      << ")\" text-anchor=\"middle\" fill=\"#d62728\">loss</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double f = k / 4.0;
    svg << "<text x=\"" << num(kLeft + f * plot_w) << "\" y=\"" << kTop + plot_h + 18
        << "\" text-anchor=\"middle\">" << num(rx.lo + f * (rx.hi - rx.lo)) << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(kTop + (1 - f) * plot_h + 4)
        << "\" text-anchor=\"end\">" << num(rpsnr.lo + f * (rpsnr.hi - rpsnr.lo)) << "</text>\n";
    svg << "<text x=\"" << kLeft + plot_w + 6 << "\" y=\"" << num(kTop + (1 - f) * plot_h + 4)
        << "\" text-anchor=\"start\">" << num(rloss.lo + f * (rloss.hi - rloss.lo)) << "</text>\n";
  }
  svg << "</g>\n";
  auto series = [&](const char* cls, const char* colour, const std::vector<double>& xs,
                    const std::vector<double>& ys, const Range& r) {
    if (xs.empty()) return;
    svg << "<path class=\"" << cls << "\" fill=\"none\" stroke=\"" << colour << "\" d=\"";
    for (std::size_t k = 0; k < xs.size(); ++k)
      svg << (k == 0 ? "M" : " L") << num(sx(xs[k])) << ' ' << num(sy(ys[k], r));
    svg << "\"/>\n";
  };
  series("series-psnr", "#1f77b4", psnr_minutes, psnrs, rpsnr);
  series("series-loss", "#d62728", minutes, losses, rloss);
  svg << "</svg>\n";

  std::ostringstream csv;
  csv.precision(17);
  csv << "minutes,step,loss,test_psnr\n";
  for (const auto& s : samples) {
    csv << s.minutes << ',' << s.step << ',' << s.loss << ',';
    if (s.psnr) csv << *s.psnr;
    csv << '\n';
  }
  return {svg.str(), csv.str()};
}

}  // namespace splatshard
