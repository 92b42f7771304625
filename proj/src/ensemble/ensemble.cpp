#include "ensx/ensemble/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ensx/core/error.hpp"
#include "ensx/core/rng.hpp"
#include "ensx/metrics/metrics.hpp"

namespace ensx::ensemble {

using library::ModelLibrary;

namespace {

constexpr double kImprovement = 1e-12;

const Matrix& block_of(const ModelLibrary& lib, int id, Block block) {
  const auto& c = lib.caches[static_cast<std::size_t>(id)];
  return block == Block::Test ? c.test_probs : c.cv_probs;
}

void check_id(const ModelLibrary& lib, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= lib.size()) {
    throw Error(ErrorCode::InvalidArgument, "model id " + std::to_string(id) + " out of range");
  }
}

void add_into(Matrix& sum, const Matrix& m, double sign = 1.0) {
  auto& s = sum.data();
  const auto& v = m.data();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += sign * v[i];
}

Matrix scaled(const Matrix& sum, std::size_t n) {
  Matrix out = sum;
  const double d = static_cast<double>(n);
  for (auto& v : out.data()) v /= d;
  return out;
}

void finalize(const ModelLibrary& lib, EnsembleState& s) {
  const std::size_t n = s.members.size();
  s.combined_test = scaled(s.sum_test, n);
  s.predicted = metrics::argmax_rows(s.combined_test);
  s.correct = metrics::correctness(s.predicted, lib.test_labels);
  s.perf.accuracy_test = metrics::accuracy(s.predicted, lib.test_labels);
  s.perf.auc_weighted_test = lib.test_rows() >= 2 ? metrics::auc_weighted(s.combined_test, lib.test_labels).value : 0.5;
  s.perf.accuracy_cv = metrics::accuracy(metrics::argmax_rows(scaled(s.sum_cv, n)), lib.cv_labels);
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Init: return "init";
    case Phase::Forward: return "forward";
    case Phase::Backward: return "backward";
    case Phase::Set: return "set";
  }
  return "?";
}

}  // namespace

Matrix combine(const ModelLibrary& lib, std::span<const int> members, Block block) {
  if (members.empty()) throw Error(ErrorCode::InvalidArgument, "cannot combine an empty member set");
  for (int id : members) check_id(lib, id);
  Matrix sum(block_of(lib, members[0], block).rows(), static_cast<std::size_t>(lib.num_classes()));
  for (int id : members) add_into(sum, block_of(lib, id, block));
  return scaled(sum, members.size());
}

bool EnsembleState::contains(int model_id) const {
  return std::binary_search(members.begin(), members.end(), model_id);
}

std::size_t EnsembleState::error_count() const {
  return static_cast<std::size_t>(std::count(correct.begin(), correct.end(), std::uint8_t{0}));
}

EnsembleState evaluate(const ModelLibrary& lib, std::vector<int> members) {
  if (members.empty()) throw Error(ErrorCode::InvalidArgument, "ensemble needs at least one member");
  for (int id : members) check_id(lib, id);
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  EnsembleState s;
  s.members = std::move(members);
  const auto k = static_cast<std::size_t>(lib.num_classes());
  s.sum_test = Matrix(lib.test_rows(), k);
  s.sum_cv = Matrix(lib.cv_rows(), k);
  for (int id : s.members) {
    add_into(s.sum_test, block_of(lib, id, Block::Test));
    add_into(s.sum_cv, block_of(lib, id, Block::Cv));
  }
  finalize(lib, s);
  return s;
}

EnsembleState toggle(const ModelLibrary& lib, const EnsembleState& state, int model_id) {
  check_id(lib, model_id);
  EnsembleState s;
  s.sum_test = state.sum_test;
  s.sum_cv = state.sum_cv;
  s.members = state.members;
  const auto it = std::lower_bound(s.members.begin(), s.members.end(), model_id);
  if (it != s.members.end() && *it == model_id) {
    if (s.members.size() == 1) throw Error(ErrorCode::Conflict, "cannot remove the last ensemble member");
    s.members.erase(it);
    add_into(s.sum_test, block_of(lib, model_id, Block::Test), -1.0);
    add_into(s.sum_cv, block_of(lib, model_id, Block::Cv), -1.0);
  } else {
    s.members.insert(it, model_id);
    add_into(s.sum_test, block_of(lib, model_id, Block::Test));
    add_into(s.sum_cv, block_of(lib, model_id, Block::Cv));
  }
  finalize(lib, s);
  return s;
}

const char* hillclimb_name(Hillclimb h) { return h == Hillclimb::AccCv ? "acc_cv" : "auc_w"; }

Hillclimb hillclimb_from_name(const std::string& name) {
  if (name == "acc_cv") return Hillclimb::AccCv;
  if (name == "auc_w" || name == "auc_cv" || name == "auc") return Hillclimb::AucCv;
  throw Error(ErrorCode::InvalidArgument, "hillclimb metric must be acc_cv or auc_w, got '" + name + "'");
}

double hillclimb_value(const ModelLibrary& lib, const Matrix& combined_cv, Hillclimb metric) {
  if (metric == Hillclimb::AccCv) return metrics::accuracy(metrics::argmax_rows(combined_cv), lib.cv_labels);
  return metrics::auc_weighted(combined_cv, lib.cv_labels).value;
}

SelectionTrace auto_select(const ModelLibrary& lib, const SelectOptions& options) {
  if (lib.size() == 0) throw Error(ErrorCode::Precondition, "library is empty");
  if (options.max_size < 1 || options.bags < 1 || !(options.bag_fraction > 0.0 && options.bag_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "max_size and bags must be >= 1 and bag_fraction in (0, 1]");
  }
  const std::size_t m = lib.size();
  const auto k = static_cast<std::size_t>(lib.num_classes());
  const auto metric = options.metric;
  auto value_of = [&](const Matrix& sum, std::size_t n) { return hillclimb_value(lib, scaled(sum, n), metric); };

  SelectionTrace trace;
  trace.options = options;
  trace.weights.assign(m, 0.0);
  std::vector<double> single(m);
  for (std::size_t i = 0; i < m; ++i) single[i] = hillclimb_value(lib, lib.caches[i].cv_probs, metric);
  trace.best_single = static_cast<int>(std::max_element(single.begin(), single.end()) - single.begin());
  trace.best_single_value = single[static_cast<std::size_t>(trace.best_single)];

  std::set<int> support;
  for (int bag = 0; bag < options.bags; ++bag) {
    std::vector<int> pool(m);
    for (std::size_t i = 0; i < m; ++i) pool[i] = static_cast<int>(i);
    if (options.bags > 1) {
      Rng rng(options.seed, "bag" + std::to_string(bag));
      rng.shuffle(std::span(pool));
      const auto take = static_cast<std::size_t>(std::ceil(options.bag_fraction * static_cast<double>(m)));
      pool.resize(std::clamp<std::size_t>(take, 1, m));
      std::sort(pool.begin(), pool.end());
    }
    std::map<int, int> counts;
    Matrix sum(lib.cv_rows(), k);
    std::size_t size = 0;

    int first = pool[0];
    for (int id : pool) {
      if (single[static_cast<std::size_t>(id)] > single[static_cast<std::size_t>(first)]) first = id;
    }
    add_into(sum, lib.caches[static_cast<std::size_t>(first)].cv_probs);
    ++counts[first];
    size = 1;
    double current = single[static_cast<std::size_t>(first)];
    trace.steps.push_back({bag, Phase::Init, Action::Add, first, current});

    while (size < static_cast<std::size_t>(options.max_size)) {
      int best = -1;
      double best_value = 0.0;
      for (int id : pool) {
        Matrix trial = sum;
        add_into(trial, lib.caches[static_cast<std::size_t>(id)].cv_probs);
        const double v = value_of(trial, size + 1);
        if (best < 0 || v > best_value) {
          best = id;
          best_value = v;
        }
      }
      if (!(best_value > current + kImprovement)) break;
      add_into(sum, lib.caches[static_cast<std::size_t>(best)].cv_probs);
      ++counts[best];
      ++size;
      current = best_value;
      trace.steps.push_back({bag, Phase::Forward, Action::Add, best, current});
    }

    while (size > 1) {
      int best = -1;
      double best_value = 0.0;
      for (const auto& [id, count] : counts) {
        Matrix trial = sum;
        add_into(trial, lib.caches[static_cast<std::size_t>(id)].cv_probs, -1.0);
        const double v = value_of(trial, size - 1);
        if (best < 0 || v > best_value) {
          best = id;
          best_value = v;
        }
      }
      if (!(best_value > current + kImprovement)) break;
      add_into(sum, lib.caches[static_cast<std::size_t>(best)].cv_probs, -1.0);
      if (--counts[best] == 0) counts.erase(best);
      --size;
      current = best_value;
      trace.steps.push_back({bag, Phase::Backward, Action::Remove, best, current});
    }

    for (const auto& [id, count] : counts) {
      trace.weights[static_cast<std::size_t>(id)] +=
          static_cast<double>(count) / static_cast<double>(size) / static_cast<double>(options.bags);
      support.insert(id);
    }
  }

  // The session works with member sets; prune the deduplicated support as a set.
  std::vector<int> members(support.begin(), support.end());
  auto set_value = [&](const std::vector<int>& ids) { return hillclimb_value(lib, combine(lib, ids, Block::Cv), metric); };
  double current = set_value(members);
  while (members.size() > 1) {
    std::size_t best = 0;
    double best_value = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto trial = members;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(i));
      const double v = set_value(trial);
      if (i == 0 || v > best_value) {
        best = i;
        best_value = v;
      }
    }
    if (!(best_value > current + kImprovement)) break;
    const int removed = members[best];
    members.erase(members.begin() + static_cast<std::ptrdiff_t>(best));
    current = best_value;
    trace.steps.push_back({options.bags - 1, Phase::Set, Action::Remove, removed, current});
  }
  if (current < trace.best_single_value) {
    const int keep = trace.best_single;
    for (int id : std::vector<int>(members)) {
      if (id == keep) continue;
      members.erase(std::find(members.begin(), members.end(), id));
      if (members.empty()) break;
      trace.steps.push_back({options.bags - 1, Phase::Set, Action::Remove, id, set_value(members)});
    }
    if (std::find(members.begin(), members.end(), keep) == members.end()) {
      members = {keep};
      trace.steps.push_back({options.bags - 1, Phase::Set, Action::Add, keep, trace.best_single_value});
    }
    current = trace.best_single_value;
  }
  trace.members = members;
  trace.value = current;
  return trace;
}

std::vector<int> replay_trace(const SelectionTrace& trace) {
  std::map<int, std::map<int, int>> bags;
  std::set<int> final_set;
  bool set_phase = false;
  for (const auto& s : trace.steps) {
    if (s.phase == Phase::Set) {
      if (!set_phase) {
        for (const auto& [bag, counts] : bags)
          for (const auto& [id, c] : counts) final_set.insert(id);
        set_phase = true;
      }
      if (s.action == Action::Add) final_set.insert(s.model_id);
      else final_set.erase(s.model_id);
      continue;
    }
    auto& counts = bags[s.bag];
    if (s.action == Action::Add) {
      ++counts[s.model_id];
    } else if (--counts[s.model_id] == 0) {
      counts.erase(s.model_id);
    }
  }
  if (!set_phase) {
    for (const auto& [bag, counts] : bags)
      for (const auto& [id, c] : counts) final_set.insert(id);
  }
  return {final_set.begin(), final_set.end()};
}

nlohmann::json SelectionTrace::to_json(const ModelLibrary& lib) const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps) {
    steps_json.push_back({{"bag", s.bag},
                          {"phase", phase_name(s.phase)},
                          {"action", s.action == Action::Add ? "add" : "remove"},
                          {"model_id", s.model_id},
                          {"spec_id", lib.spec_id(s.model_id)},
                          {"value", s.value}});
  }
  return {{"hillclimb_metric", hillclimb_name(options.metric)},
          {"max_size", options.max_size},
          {"bags", options.bags},
          {"bag_fraction", options.bag_fraction},
          {"seed", options.seed},
          {"steps", steps_json},
          {"members", members},
          {"value", value},
          {"best_single", {{"model_id", best_single}, {"value", best_single_value}}}};
}

GuardVerdict guard_check(const EnsembleState& before, const EnsembleState& after, double tolerance) {
  const double delta = before.perf.accuracy_test - after.perf.accuracy_test;
  return {!(after.perf.accuracy_test < before.perf.accuracy_test - tolerance), delta};
}

nlohmann::json perf_json(const Perf& p) {
  return {{"accuracy_test", p.accuracy_test}, {"auc_weighted_test", p.auc_weighted_test}, {"accuracy_cv", p.accuracy_cv}};
}

}  // namespace ensx::ensemble
