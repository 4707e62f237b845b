#pragma once

#include "tocoad/autograd.hpp"
#include "tocoad/common.hpp"

#include <filesystem>
#include <functional>
#include <string>

namespace testing {

using namespace tocoad;

inline std::filesystem::path source_dir() { return TOCOAD_SOURCE_DIR; }

// Fresh, empty directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(TOCOAD_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Tensor random_tensor(Shape shape, Rng& rng, Scalar lo = -1, Scalar hi = 1) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = uniform(rng, lo, hi);
  return t;
}

// Central difference of a scalar function of one parameter entry.
inline Scalar numeric_partial(const std::function<Scalar()>& f, const ag::Var& param, Index i, Scalar step) {
  Scalar& x = param->value.data()[i];
  const Scalar saved = x;
  x = saved + step;
  const Scalar up = f();
  x = saved - step;
  const Scalar down = f();
  x = saved;
  return (up - down) / (2 * step);
}

inline Scalar relative_error(Scalar a, Scalar b, Scalar floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testing
