#include "cvs/sessions.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cvs/errors.hpp"

namespace cvs {

namespace {

std::vector<ClassId> shuffled_classes(const Dataset& ds, Rng& rng) {
  std::vector<ClassId> classes = ds.classes();
  rng.shuffle(std::span<ClassId>(classes));
  return classes;
}

// Sizes of `total` split into `parts` groups, remainder to the earliest.
std::vector<std::size_t> even_parts(std::size_t total, std::size_t parts) {
  std::vector<std::size_t> sizes(parts, total / parts);
  for (std::size_t i = 0; i < total % parts; ++i) ++sizes[i];
  return sizes;
}

// Fills classes/new_classes/new_items/old_items from the allocations.
void finalize(SessionPlan& plan, const Dataset& ds) {
  std::set<ClassId> seen;
  for (auto& session : plan.sessions) {
    session.classes.clear();
    session.new_classes.clear();
    session.new_items = session.old_items = 0;
    std::set<ClassId> fresh;
    for (ItemId id : session.allocated_ids) {
      const ClassId label = ds.item(id).label;
      session.classes.insert(label);
      if (!seen.contains(label)) fresh.insert(label);
    }
    for (ItemId id : session.allocated_ids) {
      (fresh.contains(ds.item(id).label) ? session.new_items : session.old_items)++;
    }
    session.new_classes.assign(fresh.begin(), fresh.end());
    seen.insert(fresh.begin(), fresh.end());
    session.train_ids = session.allocated_ids;
  }
}

SessionPlan empty_plan(SetupDescriptor setup, std::size_t sessions) {
  SessionPlan plan;
  plan.setup = setup;
  plan.sessions.resize(sessions);
  for (std::size_t i = 0; i < sessions; ++i) plan.sessions[i].index = i + 1;
  return plan;
}

}  // namespace

std::string to_string(SetupKind kind) {
  switch (kind) {
    case SetupKind::disjoint: return "disjoint";
    case SetupKind::blurry: return "blurry";
    case SetupKind::general: return "general";
  }
  return "unknown";
}

SetupKind parse_setup_kind(const std::string& name) {
  if (name == "disjoint") return SetupKind::disjoint;
  if (name == "blurry") return SetupKind::blurry;
  if (name == "general") return SetupKind::general;
  throw ContractError("invalid_setup", "unknown setup '" + name + "'");
}

std::set<ClassId> SessionPlan::all_classes() const { return classes_up_to(sessions.size()); }

std::set<ClassId> SessionPlan::classes_up_to(std::size_t j) const {
  std::set<ClassId> out;
  for (std::size_t i = 0; i < j && i < sessions.size(); ++i) {
    out.insert(sessions[i].classes.begin(), sessions[i].classes.end());
  }
  return out;
}

SessionPlan disjoint_split(const Dataset& ds, std::size_t num_sessions, Rng& rng) {
  require(num_sessions >= 1, "invalid_setup", "at least one session is required");
  require(num_sessions <= ds.num_classes(), "invalid_setup",
          std::to_string(num_sessions) + " sessions exceed " + std::to_string(ds.num_classes()) +
              " classes");
  SetupDescriptor setup;
  setup.kind = SetupKind::disjoint;
  setup.num_sessions = num_sessions;
  SessionPlan plan = empty_plan(setup, num_sessions);

  const auto classes = shuffled_classes(ds, rng);
  const auto sizes = even_parts(classes.size(), num_sessions);
  std::size_t next = 0;
  for (std::size_t s = 0; s < num_sessions; ++s) {
    std::vector<ClassId> group(classes.begin() + static_cast<std::ptrdiff_t>(next),
                               classes.begin() + static_cast<std::ptrdiff_t>(next + sizes[s]));
    next += sizes[s];
    std::ranges::sort(group);
    for (ClassId c : group) {
      auto ids = ds.ids_of(c, Split::train);
      plan.sessions[s].allocated_ids.insert(plan.sessions[s].allocated_ids.end(), ids.begin(), ids.end());
    }
  }
  finalize(plan, ds);
  return plan;
}

SessionPlan blurry_split(const Dataset& ds, std::size_t num_sessions, double major_fraction, Rng& rng) {
  require(major_fraction > 0.0 && major_fraction <= 1.0, "invalid_setup",
          "major fraction must lie in (0, 1]");
  require(num_sessions >= 1 && num_sessions <= ds.num_classes(), "invalid_setup",
          "blurry setup needs 1 <= sessions <= classes");
  SetupDescriptor setup;
  setup.kind = SetupKind::blurry;
  setup.num_sessions = num_sessions;
  setup.major_fraction = major_fraction;
  SessionPlan plan = empty_plan(setup, num_sessions);

  const auto classes = shuffled_classes(ds, rng);
  const auto sizes = even_parts(classes.size(), num_sessions);
  std::map<ClassId, std::size_t> major_session;
  std::size_t next = 0;
  for (std::size_t s = 0; s < num_sessions; ++s) {
    for (std::size_t k = 0; k < sizes[s]; ++k) major_session[classes[next++]] = s;
  }

  for (const auto& [label, major] : major_session) {
    const auto ids = ds.ids_of(label, Split::train);
    const std::size_t total = ids.size();
    const auto major_count =
        num_sessions == 1 ? total
                          : static_cast<std::size_t>(std::llround(major_fraction * static_cast<double>(total)));
    if (major_count == 0) {
      throw ContractError("class_too_small", "class " + std::to_string(label) + " with " +
                                                 std::to_string(total) +
                                                 " items gets no major-session items");
    }
    std::vector<std::size_t> counts(num_sessions, 0);
    counts[major] = std::min(major_count, total);
    if (num_sessions > 1) {
      const auto minor = even_parts(total - counts[major], num_sessions - 1);
      std::size_t k = 0;
      for (std::size_t s = 0; s < num_sessions; ++s) {
        if (s != major) counts[s] = minor[k++];
      }
    }
    std::size_t pos = 0;
    for (std::size_t s = 0; s < num_sessions; ++s) {
      auto& dst = plan.sessions[s].allocated_ids;
      dst.insert(dst.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
                 ids.begin() + static_cast<std::ptrdiff_t>(pos + counts[s]));
      pos += counts[s];
    }
  }
  finalize(plan, ds);
  return plan;
}

SessionPlan general_split(const Dataset& ds, std::size_t s, std::size_t c, double m_pct,
                          std::size_t l, Rng& rng) {
  require(l >= 1 && s >= 1, "invalid_setup", "general setup needs S >= 1 and L >= 1");
  require(l == 1 || c >= 1, "invalid_setup", "general setup needs C >= 1 when L > 1");
  require(m_pct >= 0.0 && m_pct < 100.0, "invalid_setup", "M must lie in [0, 100)");
  require(s + c * (l - 1) <= ds.num_classes(), "invalid_setup",
          "S + C(L-1) = " + std::to_string(s + c * (l - 1)) + " exceeds " +
              std::to_string(ds.num_classes()) + " classes");
  SetupDescriptor setup;
  setup.kind = SetupKind::general;
  setup.initial_classes = s;
  setup.classes_per_session = c;
  setup.old_percent = m_pct;
  setup.general_sessions = l;
  SessionPlan plan = empty_plan(setup, l);

  const auto classes = shuffled_classes(ds, rng);
  // new_by_session[k]: classes introduced in session k (0-based).
  std::vector<std::vector<ClassId>> new_by_session(l);
  std::size_t next = 0;
  for (std::size_t k = 0; k < l; ++k) {
    const std::size_t count = k == 0 ? s : c;
    new_by_session[k].assign(classes.begin() + static_cast<std::ptrdiff_t>(next),
                             classes.begin() + static_cast<std::ptrdiff_t>(next + count));
    next += count;
  }
  std::map<ClassId, std::vector<ItemId>> pools;
  for (const auto& group : new_by_session) {
    for (ClassId label : group) pools[label] = ds.ids_of(label, Split::train);
  }

  // held[label][k]: items of `label` reserved as old-class share of session k.
  std::map<ClassId, std::vector<std::size_t>> held;
  for (const auto& [label, ids] : pools) held[label].assign(l, 0);
  auto reserved = [&](ClassId label) {
    const auto& h = held[label];
    return std::accumulate(h.begin(), h.end(), std::size_t{0});
  };

  const double ratio = m_pct / (100.0 - m_pct);
  for (std::size_t k = l; k-- > 1;) {
    std::size_t fresh = 0;
    for (ClassId label : new_by_session[k]) fresh += pools[label].size() - reserved(label);
    const auto demand = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(fresh)));
    std::vector<ClassId> old;
    for (std::size_t i = 0; i < k; ++i) old.insert(old.end(), new_by_session[i].begin(), new_by_session[i].end());
    const auto shares = even_parts(demand, old.size());
    for (std::size_t i = 0; i < old.size(); ++i) held[old[i]][k] = shares[i];
  }

  for (std::size_t k = 0; k < l; ++k) {
    for (ClassId label : new_by_session[k]) {
      const std::size_t total = pools[label].size();
      if (reserved(label) + 1 > total) {
        throw ContractError("insufficient_old_class_items",
                            "session " + std::to_string(k + 1) + ": class " + std::to_string(label) +
                                " has " + std::to_string(total) + " items but later sessions need " +
                                std::to_string(reserved(label)) + " of them");
      }
    }
  }

  for (std::size_t k = 0; k < l; ++k) {
    auto& dst = plan.sessions[k].allocated_ids;
    // Old-class shares first, in class-introduction order, then the fresh classes.
    for (std::size_t i = 0; i < k; ++i) {
      for (ClassId label : new_by_session[i]) {
        const auto& ids = pools[label];
        const auto& h = held[label];
        std::size_t pos = ids.size() - reserved(label);
        for (std::size_t kk = 0; kk < k; ++kk) pos += h[kk];
        dst.insert(dst.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
                   ids.begin() + static_cast<std::ptrdiff_t>(pos + h[k]));
      }
    }
    for (ClassId label : new_by_session[k]) {
      const auto& ids = pools[label];
      dst.insert(dst.end(), ids.begin(),
                 ids.begin() + static_cast<std::ptrdiff_t>(ids.size() - reserved(label)));
    }
  }
  finalize(plan, ds);
  return plan;
}

void sample_validation_queries(SessionPlan& plan, const ValidationSpec& spec, bool accumulate,
                               const Dataset& ds, Rng& rng) {
  require(spec.per_class || (spec.fraction >= 0.0 && spec.fraction < 1.0), "invalid_validation",
          "validation fraction must lie in [0, 1)");

  auto quota = [&](std::size_t count) {
    return spec.per_class ? *spec.per_class
                          : static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(count) + 1e-9));
  };
  // Draws q items of `ids` at random, keeping arrival order in the result.
  auto draw = [&](const std::vector<ItemId>& ids, std::size_t q) {
    std::vector<std::size_t> idx(ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(q);
    std::ranges::sort(idx);
    std::vector<ItemId> out;
    for (std::size_t i : idx) out.push_back(ids[i]);
    return out;
  };
  auto group_by_class = [&](const std::vector<ItemId>& ids) {
    std::map<ClassId, std::vector<ItemId>> groups;
    for (ItemId id : ids) groups[ds.item(id).label].push_back(id);
    return groups;
  };
  auto check_size = [](ClassId label, std::size_t count, std::size_t q, std::size_t session) {
    if (q > 0 && q >= count) {
      throw ContractError("class_too_small",
                          "class " + std::to_string(label) + " in session " + std::to_string(session) +
                              " has " + std::to_string(count) + " items, cannot withhold " +
                              std::to_string(q) + " validation queries");
    }
  };

  for (auto& session : plan.sessions) {
    session.validation_own.clear();
    session.validation_ids.clear();
  }

  if (accumulate) {
    for (auto& session : plan.sessions) {
      for (const auto& [label, ids] : group_by_class(session.allocated_ids)) {
        const std::size_t q = quota(ids.size());
        check_size(label, ids.size(), q, session.index);
        auto picked = draw(ids, q);
        session.validation_own.insert(session.validation_own.end(), picked.begin(), picked.end());
      }
    }
  } else {
    std::vector<ItemId> pool;
    for (const auto& session : plan.sessions) {
      pool.insert(pool.end(), session.allocated_ids.begin(), session.allocated_ids.end());
    }
    std::set<ItemId> chosen;
    for (const auto& [label, ids] : group_by_class(pool)) {
      const std::size_t q = quota(ids.size());
      check_size(label, ids.size(), q, 0);
      for (ItemId id : draw(ids, q)) chosen.insert(id);
    }
    for (auto& session : plan.sessions) {
      for (ItemId id : session.allocated_ids) {
        if (chosen.contains(id)) session.validation_own.push_back(id);
      }
    }
  }

  std::vector<ItemId> accumulated;
  std::vector<ItemId> fixed;
  for (const auto& session : plan.sessions) {
    fixed.insert(fixed.end(), session.validation_own.begin(), session.validation_own.end());
  }
  for (auto& session : plan.sessions) {
    const std::set<ItemId> withheld(session.validation_own.begin(), session.validation_own.end());
    session.train_ids.clear();
    for (ItemId id : session.allocated_ids) {
      if (!withheld.contains(id)) session.train_ids.push_back(id);
    }
    for (const auto& [label, ids] : group_by_class(session.allocated_ids)) {
      if (!accumulate) break;
      const auto kept = std::ranges::count_if(ids, [&](ItemId id) { return !withheld.contains(id); });
      require(kept >= 1, "class_too_small",
              "class " + std::to_string(label) + " has no training item left in session " +
                  std::to_string(session.index));
    }
    accumulated.insert(accumulated.end(), session.validation_own.begin(), session.validation_own.end());
    session.validation_ids = accumulate ? accumulated : fixed;
  }
}

SessionPlan make_plan(const Dataset& ds, const SetupDescriptor& setup, Rng& rng) {
  switch (setup.kind) {
    case SetupKind::disjoint: return disjoint_split(ds, setup.num_sessions, rng);
    case SetupKind::blurry: return blurry_split(ds, setup.num_sessions, setup.major_fraction, rng);
    case SetupKind::general:
      return general_split(ds, setup.initial_classes, setup.classes_per_session, setup.old_percent,
                           setup.general_sessions, rng);
  }
  throw ContractError("invalid_setup", "unknown setup kind");
}

}  // namespace cvs
