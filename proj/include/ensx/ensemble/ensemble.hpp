#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensx/core/matrix.hpp"
#include "ensx/library/library.hpp"
#include "json.hpp"

namespace ensx::ensemble {

enum class Block { Test, Cv };

/// Mean of the members' cached rows. Members may repeat (multiset weights).
Matrix combine(const library::ModelLibrary& lib, std::span<const int> members, Block block);

struct Perf {
  double accuracy_test = 0.0;
  double auc_weighted_test = 0.0;
  double accuracy_cv = 0.0;

  friend bool operator==(const Perf&, const Perf&) = default;
};

/// Evaluated ensemble. Members form an ascending set. The running sums make
/// single-member toggles O(N K); because caches sit on the 2^-24 grid the sums
/// are exact and an incremental update equals a full recompute bit for bit.
struct EnsembleState {
  std::vector<int> members;
  Matrix sum_test;
  Matrix sum_cv;
  Matrix combined_test;
  std::vector<int> predicted;
  std::vector<std::uint8_t> correct;
  Perf perf;

  bool contains(int model_id) const;
  std::size_t error_count() const;
};

EnsembleState evaluate(const library::ModelLibrary& lib, std::vector<int> members);

/// Adds or removes one member, updating the running sums.
EnsembleState toggle(const library::ModelLibrary& lib, const EnsembleState& state, int model_id);

enum class Hillclimb { AccCv, AucCv };

const char* hillclimb_name(Hillclimb h);
Hillclimb hillclimb_from_name(const std::string& name);

/// Hillclimb objective of a combined cv block.
double hillclimb_value(const library::ModelLibrary& lib, const Matrix& combined_cv, Hillclimb metric);

struct SelectOptions {
  Hillclimb metric = Hillclimb::AccCv;
  int max_size = 10;
  int bags = 1;
  double bag_fraction = 0.5;
  std::uint64_t seed = 1;
};

enum class Phase { Init, Forward, Backward, Set };
enum class Action { Add, Remove };

/// Steps with phase Init/Forward/Backward act on the multiset of their bag;
/// bags start empty. Set steps act on the union of the bags' supports.
struct TraceStep {
  int bag = 0;
  Phase phase = Phase::Init;
  Action action = Action::Add;
  int model_id = 0;
  double value = 0.0;  // hillclimb value after the step (bag multiset or final set)
};

struct SelectionTrace {
  SelectOptions options;
  std::vector<TraceStep> steps;
  std::vector<int> members;      // deduplicated, ascending
  std::vector<double> weights;   // per model, averaged over bags, from the multisets
  double value = 0.0;            // hillclimb value of `members` as a set
  double best_single_value = 0.0;
  int best_single = 0;

  nlohmann::json to_json(const library::ModelLibrary& lib) const;
};

SelectionTrace auto_select(const library::ModelLibrary& lib, const SelectOptions& options = {});

/// Final member set obtained by replaying the trace steps from empty.
std::vector<int> replay_trace(const SelectionTrace& trace);

struct GuardVerdict {
  bool ok = true;
  double delta = 0.0;  // before - after test accuracy
};

GuardVerdict guard_check(const EnsembleState& before, const EnsembleState& after, double tolerance = 0.0);

nlohmann::json perf_json(const Perf& p);

}  // namespace ensx::ensemble
