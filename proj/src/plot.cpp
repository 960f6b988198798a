#include "recondet/plot.hpp"

#include <algorithm>
#include <map>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "recondet/common.hpp"

namespace recondet {

namespace {

struct Series {
  std::string label;
  cv::Scalar color;                 // BGR
  std::map<int, double> points;     // level -> mean accuracy
};

int parse_level(const std::string& tag, const std::string& prefix) {
  const std::string digits = tag.substr(prefix.size());
  if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("unrecognized perturbation tag: " + tag);
  return std::stoi(digits);
}

void put_point(Series& s, int level, double acc, const std::string& tag) {
  const auto [it, fresh] = s.points.emplace(level, acc);
  // An explicit identity point (blur sigma 0) coincides with the baseline
  // anchor; that is fine as long as the two reports agree.
  if (!fresh && it->second != acc)
    throw ConfigError("conflicting grid points in sweep at: " + tag);
}

}  // namespace

void plot_robustness(const std::vector<EvalReport>& reports,
                     const std::filesystem::path& path) {
  if (reports.empty()) throw DataError("nothing to plot: empty sweep");
  const InputMode mode = reports.front().mode;
  for (const auto& r : reports)
    if (r.mode != mode) throw ConfigError("sweep mixes reports from different input modes");

  Series blur{"gaussian blur", cv::Scalar(160, 80, 30), {}};
  Series jpeg{"jpeg", cv::Scalar(40, 60, 200), {}};
  for (const auto& r : reports) {
    const std::string& tag = r.perturbation;
    if (tag == "none") {
      // The unperturbed point is the origin of both curves.
      put_point(blur, 0, r.mean_acc, tag);
      put_point(jpeg, 0, r.mean_acc, tag);
    } else if (tag.rfind("blur_sigma_", 0) == 0) {
      put_point(blur, parse_level(tag, "blur_sigma_"), r.mean_acc, tag);
    } else if (tag.rfind("jpeg_level_", 0) == 0) {
      put_point(jpeg, parse_level(tag, "jpeg_level_"), r.mean_acc, tag);
    } else {
      throw ConfigError("unrecognized perturbation tag: " + tag);
    }
  }

  const int width = 720, height = 480;
  const int x0 = 70, y0 = 50, x1 = 560, y1 = 420;
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));

  int max_level = 1;
  for (const auto* s : {&blur, &jpeg})
    for (const auto& [level, acc] : s->points) max_level = std::max(max_level, level);

  const auto px = [&](double level) {
    return static_cast<int>(std::lround(x0 + level / max_level * (x1 - x0)));
  };
  const auto py = [&](double acc) {
    return static_cast<int>(std::lround(y1 - acc * (y1 - y0)));
  };

  // Frame and grid.
  const cv::Scalar axis(40, 40, 40), grid(220, 220, 220), text(40, 40, 40);
  for (int tick = 0; tick <= 5; ++tick) {
    const double acc = tick / 5.0;
    cv::line(canvas, {x0, py(acc)}, {x1, py(acc)}, grid, 1, cv::LINE_AA);
    char label[16];
    std::snprintf(label, sizeof(label), "%d%%", tick * 20);
    cv::putText(canvas, label, {x0 - 45, py(acc) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, text, 1,
                cv::LINE_AA);
  }
  for (int level = 0; level <= max_level; ++level) {
    cv::line(canvas, {px(level), y1}, {px(level), y1 + 5}, axis, 1, cv::LINE_AA);
    cv::putText(canvas, std::to_string(level), {px(level) - 4, y1 + 22},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, text, 1, cv::LINE_AA);
  }
  cv::rectangle(canvas, {x0, y0}, {x1, y1}, axis, 1, cv::LINE_AA);
  cv::putText(canvas, "perturbation level", {x0 + (x1 - x0) / 2 - 60, y1 + 45},
              cv::FONT_HERSHEY_SIMPLEX, 0.45, text, 1, cv::LINE_AA);
  cv::putText(canvas, std::string("robustness, mode ") + input_mode_name(mode), {x0, y0 - 18},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, text, 1, cv::LINE_AA);

  int legend_y = y0 + 15;
  for (const auto* s : {&blur, &jpeg}) {
    if (s->points.empty()) continue;
    std::vector<cv::Point> poly;
    for (const auto& [level, acc] : s->points) poly.emplace_back(px(level), py(acc));
    for (std::size_t i = 1; i < poly.size(); ++i)
      cv::line(canvas, poly[i - 1], poly[i], s->color, 2, cv::LINE_AA);
    for (const auto& pt : poly) cv::circle(canvas, pt, 4, s->color, cv::FILLED, cv::LINE_AA);

    cv::line(canvas, {x1 + 15, legend_y}, {x1 + 40, legend_y}, s->color, 2, cv::LINE_AA);
    cv::putText(canvas, s->label, {x1 + 48, legend_y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.42, text,
                1, cv::LINE_AA);
    legend_y += 22;
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas))
    throw std::runtime_error("failed to write plot: " + path.string());
}

}  // namespace recondet
