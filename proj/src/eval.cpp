#include "svloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "svloc/error.hpp"

namespace svloc {

namespace {

double point_to_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double s = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + s * ab)).norm();
}

ErrorSeries error_series_impl(const Trajectory& est, const Trajectory& truth, bool parallel) {
  if (est.empty()) throw DomainError("estimate trajectory is empty");
  if (truth.size() < 2) throw DomainError("truth polyline needs at least 2 points");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(est.size());
  ErrorSeries out;
  out.frames.resize(n);
  out.values.resize(n);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out.frames[i] = static_cast<int>(i);
    out.values[i] =
        point_to_polyline(Vec2(est.points[i].east, est.points[i].north), truth);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG plotting
// ---------------------------------------------------------------------------

struct PlotLine {
  std::string css_class;  // class attribute on the <path>
  std::string name;       // legend text
  std::string color;
  std::vector<Vec2> points;
};

struct AxisRange {
  double lo = 0.0;
  double hi = 1.0;
  double span() const { return hi - lo; }
};

AxisRange padded_range(double lo, double hi) {
  if (!(hi > lo)) return {lo - 1.0, hi + 1.0};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void write_svg_plot(const std::string& path, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotLine>& lines,
                    bool equal_aspect) {
  constexpr double kWidth = 800.0, kHeight = 500.0;
  constexpr double kLeft = 70.0, kRight = 20.0, kTop = 20.0, kBottom = 50.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  bool any = false;
  for (const PlotLine& line : lines) {
    for (const Vec2& p : line.points) {
      xlo = std::min(xlo, p.x());
      xhi = std::max(xhi, p.x());
      ylo = std::min(ylo, p.y());
      yhi = std::max(yhi, p.y());
      any = true;
    }
  }
  if (!any) {
    xlo = ylo = 0.0;
    xhi = yhi = 1.0;
  }
  AxisRange xr = padded_range(xlo, xhi);
  AxisRange yr = padded_range(ylo, yhi);
  if (equal_aspect) {
    // Grow the tighter axis about its center until meters-per-pixel match.
    const double scale = std::max(xr.span() / plot_w, yr.span() / plot_h);
    const double xc = 0.5 * (xr.lo + xr.hi), yc = 0.5 * (yr.lo + yr.hi);
    xr = {xc - 0.5 * scale * plot_w, xc + 0.5 * scale * plot_w};
    yr = {yc - 0.5 * scale * plot_h, yc + 0.5 * scale * plot_h};
  }

  const auto px = [&](double x) { return kLeft + (x - xr.lo) / xr.span() * plot_w; };
  const auto py = [&](double y) { return kHeight - kBottom - (y - yr.lo) / yr.span() * plot_h; };

  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fputs("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n", f);
  std::fprintf(f,
               "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
               "viewBox=\"0 0 %g %g\" font-family=\"sans-serif\" font-size=\"12\">\n",
               kWidth, kHeight, kWidth, kHeight);
  std::fputs("<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n", f);

  // Grid and ticks: five evenly spaced divisions per axis.
  constexpr int kTicks = 5;
  for (int k = 0; k < kTicks; ++k) {
    const double fx = xr.lo + xr.span() * k / (kTicks - 1);
    const double fy = yr.lo + yr.span() * k / (kTicks - 1);
    const double gx = px(fx), gy = py(fy);
    std::fprintf(f,
                 "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n",
                 gx, kTop, gx, kHeight - kBottom);
    std::fprintf(f,
                 "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n",
                 kLeft, gy, kWidth - kRight, gy);
    std::fprintf(f,
                 "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%.4g</text>\n",
                 gx, kHeight - kBottom + 18.0, fx);
    std::fprintf(f,
                 "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\">%.4g</text>\n",
                 kLeft - 8.0, gy + 4.0, fy);
  }

  // Axis lines and labels.
  std::fprintf(f,
               "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n",
               kLeft, kTop, kLeft, kHeight - kBottom);
  std::fprintf(f,
               "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n",
               kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom);
  std::fprintf(f,
               "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%s</text>\n",
               kLeft + plot_w / 2.0, kHeight - 12.0, x_label.c_str());
  std::fprintf(f,
               "<text transform=\"translate(16,%.2f) rotate(-90)\" "
               "text-anchor=\"middle\">%s</text>\n",
               kTop + plot_h / 2.0, y_label.c_str());

  // Data paths.
  for (const PlotLine& line : lines) {
    if (line.points.empty()) continue;
    std::fprintf(f, "<path class=\"%s\" fill=\"none\" stroke=\"%s\" stroke-width=\"1.5\" d=\"",
                 line.css_class.c_str(), line.color.c_str());
    for (std::size_t i = 0; i < line.points.size(); ++i) {
      std::fprintf(f, "%s%.2f %.2f", i == 0 ? "M" : " L", px(line.points[i].x()),
                   py(line.points[i].y()));
    }
    std::fputs("\"/>\n", f);
  }

  // Legend, only when more than one line is drawn.
  std::size_t drawn = 0;
  for (const PlotLine& line : lines)
    if (!line.points.empty()) ++drawn;
  if (drawn > 1) {
    double ly = kTop + 16.0;
    for (const PlotLine& line : lines) {
      if (line.points.empty()) continue;
      const double lx = kWidth - kRight - 130.0;
      std::fprintf(f,
                   "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" "
                   "stroke-width=\"1.5\"/>\n",
                   lx, ly - 4.0, lx + 24.0, ly - 4.0, line.color.c_str());
      std::fprintf(f, "<text x=\"%.2f\" y=\"%.2f\">%s</text>\n", lx + 30.0, ly,
                   line.name.c_str());
      ly += 18.0;
    }
  }

  std::fputs("</svg>\n", f);
  std::fclose(f);
}

std::vector<Vec2> trajectory_points_2d(const Trajectory& t) {
  std::vector<Vec2> out;
  out.reserve(t.size());
  for (const TrajectoryPoint& p : t.points) out.emplace_back(p.east, p.north);
  return out;
}

}  // namespace

double point_to_polyline(const Vec2& p, const Trajectory& truth) {
  if (truth.size() < 2) throw DomainError("truth polyline needs at least 2 points");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < truth.size(); ++i) {
    const Vec2 a(truth.points[i].east, truth.points[i].north);
    const Vec2 b(truth.points[i + 1].east, truth.points[i + 1].north);
    best = std::min(best, point_to_segment(p, a, b));
  }
  return best;
}

ErrorSeries error_series(const Trajectory& est, const Trajectory& truth) {
  return error_series_impl(est, truth, true);
}

ErrorSeries error_series_serial(const Trajectory& est, const Trajectory& truth) {
  return error_series_impl(est, truth, false);
}

double rmse(const Trajectory& est, const Trajectory& truth, RmseMode mode) {
  const ErrorSeries series = error_series_serial(est, truth);
  double acc = 0.0;
  for (double e : series.values) acc += mode == RmseMode::kSquared ? e * e : e;
  return std::sqrt(acc / static_cast<double>(series.size()));
}

ErrorSummary summarize(const ErrorSeries& series) {
  ErrorSummary s;
  s.count = series.size();
  if (s.count == 0) return s;
  const double n = static_cast<double>(s.count);
  double sum = 0.0, sum_sq = 0.0;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -s.min;
  for (double e : series.values) {
    sum += e;
    sum_sq += e * e;
    s.min = std::min(s.min, e);
    s.max = std::max(s.max, e);
  }
  s.mean = sum / n;
  double dev_sq = 0.0;
  for (double e : series.values) dev_sq += (e - s.mean) * (e - s.mean);
  s.std_dev = std::sqrt(dev_sq / n);
  s.rmse = std::sqrt(sum_sq / n);
  s.root_mean_error = std::sqrt(sum / n);
  return s;
}

std::string summary_to_json(const ErrorSummary& summary, int indent) {
  nlohmann::json j;
  j["count"] = summary.count;
  if (summary.count == 0) {
    for (const char* key :
         {"rmse_m", "root_mean_error", "mean_m", "std_dev_m", "min_m", "max_m"})
      j[key] = nullptr;
  } else {
    j["rmse_m"] = summary.rmse;
    j["root_mean_error"] = summary.root_mean_error;
    j["mean_m"] = summary.mean;
    j["std_dev_m"] = summary.std_dev;
    j["min_m"] = summary.min;
    j["max_m"] = summary.max;
  }
  return j.dump(indent);
}

void emit_results(const ErrorSeries& series, const Trajectory& est, const Trajectory& truth,
                  const LocalFrame& frame, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  {
    const std::string path = out_dir + "/errors.csv";
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fputs("frame,err_m\n", f);
    for (std::size_t i = 0; i < series.size(); ++i)
      std::fprintf(f, "%d,%.6f\n", series.frames[i], series.values[i]);
    std::fclose(f);
  }

  write_trajectory_csv(out_dir + "/trajectory_est.csv", est, frame);
  write_trajectory_csv(out_dir + "/trajectory_truth.csv", truth, frame);

  {
    const std::string path = out_dir + "/summary.json";
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    const std::string body = summary_to_json(summarize(series), 2);
    std::fputs(body.c_str(), f);
    std::fputs("\n", f);
    std::fclose(f);
  }

  {
    PlotLine err_line;
    err_line.css_class = "series";
    err_line.name = "error";
    err_line.color = "#1f77b4";
    err_line.points.reserve(series.size());
    for (std::size_t i = 0; i < series.size(); ++i)
      err_line.points.emplace_back(static_cast<double>(series.frames[i]), series.values[i]);
    write_svg_plot(out_dir + "/error_plot.svg", "frame", "error (m)", {std::move(err_line)},
                   false);
  }

  {
    PlotLine est_line{"trajectory", "estimate", "#d62728", trajectory_points_2d(est)};
    PlotLine truth_line{"trajectory", "truth", "#1f77b4", trajectory_points_2d(truth)};
    write_svg_plot(out_dir + "/trajectory_plot.svg", "east (m)", "north (m)",
                   {std::move(est_line), std::move(truth_line)}, true);
  }
}

}  // namespace svloc
