#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "recondet/plot.hpp"

using namespace recondet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

EvalReport point(const std::string& tag, double acc) {
  EvalReport r;
  r.mode = InputMode::cascade_multi;
  r.perturbation = tag;
  r.rows = {{"real", 10, acc, -1}, {"toygan", 10, acc, acc}};
  r.mean_acc = acc;
  r.mean_ap = acc;
  return r;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("robustness chart renders deterministically") {
  const fs::path dir = fresh_dir("recondet_plot");
  const std::vector<EvalReport> sweep = {
      point("none", 0.95),         point("blur_sigma_1", 0.9), point("blur_sigma_2", 0.71),
      point("blur_sigma_3", 0.52), point("jpeg_level_1", 0.88), point("jpeg_level_2", 0.67),
      point("jpeg_level_3", 0.41),
  };
  plot_robustness(sweep, dir / "sweep.png");

  cv::Mat img = cv::imread((dir / "sweep.png").string(), cv::IMREAD_COLOR);
  REQUIRE_FALSE(img.empty());
  CHECK(img.cols == 720);
  CHECK(img.rows == 480);

  // Both series colors appear somewhere on the canvas.
  int blur_px = 0, jpeg_px = 0;
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) {
      const cv::Vec3b& p = img.at<cv::Vec3b>(y, x);
      if (p == cv::Vec3b(160, 80, 30)) ++blur_px;
      if (p == cv::Vec3b(40, 60, 200)) ++jpeg_px;
    }
  CHECK(blur_px > 50);
  CHECK(jpeg_px > 50);

  plot_robustness(sweep, dir / "sweep2.png");
  CHECK(read_bytes(dir / "sweep2.png") == read_bytes(dir / "sweep.png"));

  // A baseline-only sweep still renders.
  plot_robustness({point("none", 0.8)}, dir / "base.png");
  CHECK_FALSE(cv::imread((dir / "base.png").string()).empty());
}

TEST_CASE("robustness chart rejects malformed sweeps") {
  const fs::path dir = fresh_dir("recondet_plot_bad");
  CHECK_THROWS_AS(plot_robustness({}, dir / "x.png"), DataError);
  CHECK_THROWS_AS(plot_robustness({point("sharpen_9", 0.5)}, dir / "x.png"), ConfigError);
  CHECK_THROWS_AS(plot_robustness({point("blur_sigma_", 0.5)}, dir / "x.png"), ConfigError);
  // The same grid point with two different values is a caller bug.
  CHECK_THROWS_AS(plot_robustness({point("none", 0.5), point("jpeg_level_1", 0.5),
                                   point("jpeg_level_1", 0.6)},
                                  dir / "x.png"),
                  ConfigError);
  // An explicit identity point that matches the baseline renders fine.
  plot_robustness({point("none", 0.5), point("blur_sigma_0", 0.5), point("blur_sigma_1", 0.4)},
                  dir / "ok.png");
  CHECK(fs::exists(dir / "ok.png"));
  auto other = point("blur_sigma_1", 0.4);
  other.mode = InputMode::residual_dm;
  CHECK_THROWS_AS(plot_robustness({point("none", 0.5), other}, dir / "x.png"), ConfigError);
}
