#pragma once

// Markdown, plain-text and SVG summaries of per-episode metrics.

#include "dex/sim.hpp"

#include <string>
#include <vector>

namespace dex::cli {

struct ReportFiles {
  std::string markdown;
  std::string text;
  std::string istar_svg;
  std::string bars_svg;
};

/// Throws DomainRejected on an empty input.
ReportFiles render_report(const std::vector<EpisodeMetrics>& rows);

}  // namespace dex::cli
