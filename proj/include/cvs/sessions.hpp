#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cvs/dataset.hpp"
#include "cvs/rng.hpp"

namespace cvs {

enum class SetupKind { disjoint, blurry, general };

std::string to_string(SetupKind kind);
SetupKind parse_setup_kind(const std::string& name);

/// Setup parameters. `num_sessions` is used by disjoint and blurry; the
/// general setup is described by (S, C, M, L).
struct SetupDescriptor {
  SetupKind kind = SetupKind::general;
  std::size_t num_sessions = 5;
  double major_fraction = 0.9;
  std::size_t initial_classes = 20;  // S
  std::size_t classes_per_session = 20;  // C
  double old_percent = 10.0;  // M
  std::size_t general_sessions = 5;  // L

  std::size_t sessions() const noexcept {
    return kind == SetupKind::general ? general_sessions : num_sessions;
  }
};

struct SessionSpec {
  std::size_t index = 0;                // 1-based
  std::vector<ItemId> allocated_ids;    // everything assigned to the session
  std::vector<ItemId> train_ids;        // allocation minus withheld validation queries
  std::vector<ItemId> validation_own;   // queries withheld from this session
  std::vector<ItemId> validation_ids;   // queries used for model selection in this session
  std::set<ClassId> classes;            // classes with items in this session
  std::vector<ClassId> new_classes;     // classes appearing for the first time
  std::size_t new_items = 0;            // allocated items of new classes
  std::size_t old_items = 0;            // allocated items of previously seen classes
};

struct SessionPlan {
  SetupDescriptor setup;
  std::vector<SessionSpec> sessions;

  /// Union of all session classes.
  std::set<ClassId> all_classes() const;

  /// Union of the classes of sessions 1..j.
  std::set<ClassId> classes_up_to(std::size_t j) const;
};

/// Classes shuffled by seed and partitioned, remainder to the earliest
/// sessions; a session trains on every train item of its classes.
SessionPlan disjoint_split(const Dataset& ds, std::size_t num_sessions, Rng& rng);

/// Each class has one major session receiving round(major_fraction * N) of
/// its items; the rest is spread evenly over the other sessions (remainder to
/// the earliest). Items are handed out in arrival order.
SessionPlan blurry_split(const Dataset& ds, std::size_t num_sessions, double major_fraction, Rng& rng);

/// (S, C, M, L): session 1 holds S fresh classes, each later session adds C
/// fresh classes and draws M% of its items from held-back pools of the classes
/// seen before, class-uniformly. Pools are sized backwards from the last
/// session so every session is feasible.
SessionPlan general_split(const Dataset& ds, std::size_t s, std::size_t c, double m_pct,
                          std::size_t l, Rng& rng);

/// Validation-query amount: a per-class fraction of the session allocation,
/// or a fixed per-class count.
struct ValidationSpec {
  double fraction = 0.1;
  std::optional<std::size_t> per_class;
};

/// Withholds per-class validation queries from training. With `accumulate`
/// (disjoint, general) each session draws from its own allocation and the
/// query set grows over sessions; without it (blurry) one fixed portion of the
/// entire training pool is drawn once and shared by every session.
void sample_validation_queries(SessionPlan& plan, const ValidationSpec& spec, bool accumulate,
                               const Dataset& ds, Rng& rng);

/// Builds the plan for `setup` (dispatching to the split functions).
SessionPlan make_plan(const Dataset& ds, const SetupDescriptor& setup, Rng& rng);

}  // namespace cvs
