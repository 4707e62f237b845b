#pragma once

#include "tocoad/coreset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace tocoad {

// Coreset of normal patch features plus, for each member, its b nearest
// members (itself first). Immutable after construction.
template <typename T>
class MemoryBank {
 public:
  using Matrix = RowMatrix<T>;

  MemoryBank() = default;
  MemoryBank(Matrix coreset, Index full_size, double ratio, Index neighbor_count, std::string extractor_hash,
             Index start_index = 0)
      : coreset_(std::move(coreset)),
        full_size_(full_size),
        ratio_(ratio),
        neighbor_count_(std::min<Index>(neighbor_count, coreset_.rows())),
        extractor_hash_(std::move(extractor_hash)),
        start_index_(start_index) {
    if (coreset_.rows() == 0) throw ArgumentError("memory bank: empty coreset");
    for (Index r = 0; r < coreset_.rows(); ++r) {
      const auto nb = nearest_members(r, neighbor_count_);
      table_.insert(table_.end(), nb.begin(), nb.end());
    }
  }

  const Matrix& coreset() const { return coreset_; }
  Index size() const { return coreset_.rows(); }
  Index dim() const { return coreset_.cols(); }
  Index full_size() const { return full_size_; }
  double ratio() const { return ratio_; }
  Index neighbor_count() const { return neighbor_count_; }
  Index start_index() const { return start_index_; }
  const std::string& extractor_hash() const { return extractor_hash_; }

  // The b coreset rows nearest to row `row` (row itself first; ties by index).
  std::vector<Index> neighbors(Index row, Index b) const {
    if (b == neighbor_count_) {
      const auto first = table_.begin() + row * neighbor_count_;
      return {first, first + neighbor_count_};
    }
    return nearest_members(row, b);
  }

  // Header then row-major little-endian float32 rows.
  //   char[8] "TCADBANK" | u32 version | u32 dim | u64 count | u64 full_size
  //   f64 ratio | u32 b | u32 reserved | u64 start_index | char[16] extractor hash
  void save(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);

 private:
  std::vector<Index> nearest_members(Index row, Index b) const {
    if (b < 1 || b > size()) throw ArgumentError("memory bank: neighbor count out of range");
    const Eigen::Matrix<T, Eigen::Dynamic, 1> d = (coreset_.rowwise() - coreset_.row(row)).rowwise().squaredNorm();
    std::vector<Index> order(static_cast<std::size_t>(size()));
    std::iota(order.begin(), order.end(), Index{0});
    auto closer = [&](Index a, Index c) {
      if (a == row || c == row) return a == row && c != row;
      return d[a] < d[c] || (d[a] == d[c] && a < c);
    };
    std::partial_sort(order.begin(), order.begin() + b, order.end(), closer);
    order.resize(static_cast<std::size_t>(b));
    return order;
  }

  Matrix coreset_;
  Index full_size_ = 0;
  double ratio_ = 1;
  Index neighbor_count_ = 1;
  std::string extractor_hash_;
  Index start_index_ = 0;
  std::vector<Index> table_;
};

// Coreset of `features` (rows) by greedy k-center from a seeded start.
template <typename T>
MemoryBank<T> build_bank(const RowMatrix<T>& features, double ratio, std::uint64_t seed, Index neighbor_count,
                         std::string extractor_hash = {}) {
  if (features.rows() == 0) throw ArgumentError("build_bank: no training features");
  const Index k = coreset_size(features.rows(), ratio);
  std::vector<Index> order(static_cast<std::size_t>(features.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const Index start = order.front();
  const std::vector<Index> picked = greedy_k_center(features, k, start);
  RowMatrix<T> coreset(k, features.cols());
  for (Index i = 0; i < k; ++i) coreset.row(i) = features.row(picked[static_cast<std::size_t>(i)]);
  return MemoryBank<T>(std::move(coreset), features.rows(), ratio, neighbor_count, std::move(extractor_hash), start);
}

struct ScoringConfig {
  Index b = 9;
  double smoothing_sigma = 4;

  // b = 1 makes the re-weighting factor identically zero; it is rejected.
  void validate(Index bank_size) const {
    if (b < 2) throw ConfigError("scoring: b must be >= 2 (b = 1 collapses every score to zero)");
    if (b > bank_size) throw ConfigError("scoring: b exceeds the memory bank size");
    if (smoothing_sigma < 0) throw ConfigError("scoring: smoothing sigma must be >= 0");
  }
};

template <typename T>
struct PatchScore {
  T score = 0;             // re-weighted
  T nearest_distance = 0;  // min over the bank
  Index nearest = 0;
};

// s' = min_c |p - c|, c* its argmin; s = (1 - exp(s') / sum_{c' in N_b(c*)} exp(|p - c'|)) s'.
// No validation of b here so the degenerate b = 1 case stays observable.
template <typename T, typename Derived>
PatchScore<T> score_patch(const Eigen::MatrixBase<Derived>& patch, const MemoryBank<T>& bank, Index b) {
  if (patch.size() != bank.dim())
    throw ArgumentError("score_patch: patch dim " + std::to_string(patch.size()) + " != bank dim " + std::to_string(bank.dim()));
  const Eigen::Matrix<T, 1, Eigen::Dynamic> p = patch.template cast<T>().reshaped().transpose();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> dist = (bank.coreset().rowwise() - p).rowwise().norm();
  PatchScore<T> out;
  out.nearest_distance = dist.minCoeff(&out.nearest);
  const std::vector<Index> nb = bank.neighbors(out.nearest, b);
  T shift = out.nearest_distance;
  for (Index c : nb) shift = std::max(shift, dist[c]);
  T denom = 0;
  for (Index c : nb) denom += std::exp(dist[c] - shift);
  const T weight = T(1) - std::exp(out.nearest_distance - shift) / denom;
  out.score = weight * out.nearest_distance;
  return out;
}

namespace bank_io {

template <typename U>
void put(std::ostream& os, U value) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  const auto bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename U>
U get(std::istream& is) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw IntegrityError("memory bank file truncated");
    bits |= static_cast<Bits>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return std::bit_cast<U>(bits);
}

inline constexpr char kMagic[8] = {'T', 'C', 'A', 'D', 'B', 'A', 'N', 'K'};
inline constexpr std::uint32_t kVersion = 1;

}  // namespace bank_io

template <typename T>
void MemoryBank<T>::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IntegrityError("cannot write memory bank " + path.string());
  os.write(bank_io::kMagic, 8);
  bank_io::put<std::uint32_t>(os, bank_io::kVersion);
  bank_io::put<std::uint32_t>(os, static_cast<std::uint32_t>(dim()));
  bank_io::put<std::uint64_t>(os, static_cast<std::uint64_t>(size()));
  bank_io::put<std::uint64_t>(os, static_cast<std::uint64_t>(full_size_));
  bank_io::put<double>(os, ratio_);
  bank_io::put<std::uint32_t>(os, static_cast<std::uint32_t>(neighbor_count_));
  bank_io::put<std::uint32_t>(os, 0);
  bank_io::put<std::uint64_t>(os, static_cast<std::uint64_t>(start_index_));
  std::string hash = extractor_hash_;
  hash.resize(16, '0');
  os.write(hash.data(), 16);
  for (Index r = 0; r < size(); ++r)
    for (Index c = 0; c < dim(); ++c) bank_io::put<float>(os, static_cast<float>(coreset_(r, c)));
  if (!os) throw IntegrityError("failed writing memory bank " + path.string());
}

template <typename T>
MemoryBank<T> MemoryBank<T>::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot read memory bank " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, bank_io::kMagic, 8) != 0) throw IntegrityError(path.string() + " is not a memory bank file");
  if (bank_io::get<std::uint32_t>(is) != bank_io::kVersion) throw IntegrityError("unsupported memory bank version");
  const auto dim = static_cast<Index>(bank_io::get<std::uint32_t>(is));
  const auto count = static_cast<Index>(bank_io::get<std::uint64_t>(is));
  const auto full = static_cast<Index>(bank_io::get<std::uint64_t>(is));
  const double ratio = bank_io::get<double>(is);
  const auto b = static_cast<Index>(bank_io::get<std::uint32_t>(is));
  bank_io::get<std::uint32_t>(is);
  const auto start = static_cast<Index>(bank_io::get<std::uint64_t>(is));
  std::string hash(16, '\0');
  is.read(hash.data(), 16);
  Matrix rows(count, dim);
  for (Index r = 0; r < count; ++r)
    for (Index c = 0; c < dim; ++c) rows(r, c) = static_cast<T>(bank_io::get<float>(is));
  return MemoryBank<T>(std::move(rows), full, ratio, b, std::move(hash), start);
}

}  // namespace tocoad
