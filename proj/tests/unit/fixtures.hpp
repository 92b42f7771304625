#pragma once

// Shared synthetic data for the unit tests.

#include <cmath>
#include <sstream>
#include <string>

#include "ensx/core/rng.hpp"
#include "ensx/dataio/dataset.hpp"
#include "ensx/dataio/encoding.hpp"

namespace fixtures {

// N rows, two numeric features and one categorical, binary label with
// balanced classes. Class 1 sits at +offset in both numeric features.
inline std::string blobs_csv(int n, double offset, std::uint64_t seed = 1) {
  ensx::Rng rng(seed);
  std::ostringstream out;
  out << "x1,x2,color,label\n";
  const char* colors[] = {"red", "green", "blue"};
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    const double x1 = rng.normal() + (y ? offset : 0.0);
    const double x2 = rng.normal() + (y ? offset : 0.0);
    out << x1 << "," << x2 << "," << colors[rng.below(3)] << "," << (y ? "pos" : "neg") << "\n";
  }
  return out.str();
}

inline ensx::dataio::Dataset blobs(int n, double offset, std::uint64_t seed = 1, double test_fraction = 0.2,
                                   int folds = 5) {
  auto ds = ensx::dataio::parse_csv(blobs_csv(n, offset, seed), "label");
  return ensx::dataio::split_and_fold(std::move(ds), test_fraction, folds, seed);
}

}  // namespace fixtures
