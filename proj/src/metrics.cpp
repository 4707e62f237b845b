#include "tocoad/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace tocoad {

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string results_csv(const std::vector<EvalResult>& results) {
  std::ostringstream os;
  os << "category,image_auroc,pixel_auroc\n";
  for (const auto& r : results)
    os << r.category << "," << fixed6(r.image_auroc) << "," << (r.pixel_auroc ? fixed6(*r.pixel_auroc) : "") << "\n";
  return os.str();
}

std::vector<EvalResult> parse_results_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "category,image_auroc,pixel_auroc") throw MetricError("results csv: bad header");
  std::vector<EvalResult> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw MetricError("results csv: malformed row '" + line + "'");
    EvalResult r;
    r.category = line.substr(0, a);
    r.image_auroc = std::stod(line.substr(a + 1, b - a - 1));
    if (b + 1 < line.size()) r.pixel_auroc = std::stod(line.substr(b + 1));
    out.push_back(r);
  }
  return out;
}

std::string results_table(const std::vector<EvalResult>& results) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-16s %10s %10s\n", "Category", "I-AUROC", "P-AUROC");
  os << line;
  double image_sum = 0, pixel_sum = 0;
  std::size_t pixel_count = 0;
  for (const auto& r : results) {
    char pixel[32] = "-";
    if (r.pixel_auroc) std::snprintf(pixel, sizeof(pixel), "%.2f", 100 * *r.pixel_auroc);
    std::snprintf(line, sizeof(line), "%-16s %10.2f %10s\n", r.category.c_str(), 100 * r.image_auroc, pixel);
    os << line;
    image_sum += r.image_auroc;
    if (r.pixel_auroc) {
      pixel_sum += *r.pixel_auroc;
      ++pixel_count;
    }
  }
  if (!results.empty()) {
    const double image_avg = 100 * image_sum / static_cast<double>(results.size());
    if (pixel_count > 0) {
      std::snprintf(line, sizeof(line), "%-16s %10.2f %10.2f\n", "Total avg.", image_avg, 100 * pixel_sum / static_cast<double>(pixel_count));
    } else {
      std::snprintf(line, sizeof(line), "%-16s %10.2f %10s\n", "Total avg.", image_avg, "-");
    }
    os << line;
  }
  return os.str();
}

}  // namespace tocoad
