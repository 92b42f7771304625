#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ensx/core/binary_io.hpp"
#include "ensx/core/matrix.hpp"
#include "ensx/dataio/encoding.hpp"
#include "ensx/models/spec.hpp"

namespace ensx::models {

/// Rows of an encoded matrix selected for training. `labels` is indexed by
/// matrix row, not by position in `rows`.
struct TrainingData {
  const Matrix& features;
  std::span<const std::size_t> rows;
  std::span<const int> labels;
  int num_classes = 0;
  // Encoded column layout; empty means every column is numeric.
  std::span<const dataio::EncodedColumn> columns = {};
};

/// Fitted model state. Implementations are immutable after training and
/// predict_proba is safe to call concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Family family() const = 0;
  virtual std::size_t input_width() const = 0;
  virtual int num_classes() const = 0;
  /// Writes one probability row per requested row into `out` (rows.size() x K).
  virtual void predict_rows(const Matrix& features, std::span<const std::size_t> rows, Matrix& out) const = 0;
  virtual void save(ByteWriter& out) const = 0;
};

struct TrainedModel {
  ModelSpec spec;
  std::uint64_t train_seed = 0;
  std::shared_ptr<const Classifier> state;

  /// Probability rows for the given matrix rows (all rows when `rows` is empty).
  Matrix predict_proba(const Matrix& features, std::span<const std::size_t> rows = {}) const;

  /// Versioned binary form: magic "EATM", u16 version, u8 family tag, spec, seed, payload.
  std::string serialize() const;
  static TrainedModel deserialize(std::string_view bytes);
};

inline constexpr std::uint16_t kModelFormatVersion = 1;

/// Fits `spec` on the selected rows. Randomized families draw only from a PRNG
/// seeded by (seed, spec id).
TrainedModel train(const ModelSpec& spec, const TrainingData& data, std::uint64_t seed);

}  // namespace ensx::models
