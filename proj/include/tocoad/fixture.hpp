#pragma once

#include "tocoad/common.hpp"
#include "tocoad/image.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tocoad {

// Procedural dataset in the MVTec directory schema: striped and dotted
// fields with planted square and blob defects in the test split, plus a
// flat directory of smooth color textures.
struct FixtureOptions {
  int size = 64;
  int train_count = 64;
  int test_good_count = 8;
  int test_defect_count = 6;  // per defect kind
  int texture_count = 8;
  std::uint64_t seed = 7;
  std::vector<std::string> categories{"stripes", "dots"};
};

// Returns the number of image files written (masks excluded).
std::size_t make_fixture(const std::filesystem::path& root, const FixtureOptions& options = {});

Image render_pattern(const std::string& category, int size, std::uint64_t seed);

}  // namespace tocoad
