#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace geia {

struct RenderedReport {
  std::string text;
  std::string csv;
};

// Table-shaped summaries of finished run directories. Attack runs become one
// row each of the reconstruction table (P/R/F1, SWR, NERR) and the
// generation table (ES, PPL, ROUGE, BLEU); audit runs become the
// likelihood grid with both aggregations. Rows follow the input order.
// ReportError on unreadable runs or mixed result versions.
RenderedReport render_report(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace geia
