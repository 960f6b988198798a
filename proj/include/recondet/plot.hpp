#pragma once

#include <filesystem>
#include <vector>

#include "recondet/metrics.hpp"

namespace recondet {

// Draws a robustness sweep as a line chart: mean accuracy against the
// perturbation level, one series per perturbation kind. The baseline
// ("none") report anchors every series at level zero. Written as a PNG.
void plot_robustness(const std::vector<EvalReport>& reports,
                     const std::filesystem::path& path);

}  // namespace recondet
