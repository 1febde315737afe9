#pragma once

// Virtual sensors: lazily evaluated arithmetic over other sensors, with
// linear interpolation onto the virtual sensor's own grid and write-back of
// computed points into the store.

#include "shv/database.hpp"
#include "shv/metadata.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace shv {

/// Linear interpolation between the samples bracketing `t`; exact at sample
/// times. Throws Error{out_of_range} when no bracketing pair exists.
double interpolate(std::span<const TimedValue> series, std::uint64_t t);

/// Validates and persists a virtual sensor. Every operand must already be
/// known, either through metadata or as an ingested topic.
/// Throws Error{unknown_operand} or Error{cycle_detected}.
void define_vsensor(Database& db, VSensorDef def);

struct EvalStats {
  std::uint64_t operand_fetches = 0;  // storage reads for operands, recursively
  std::uint64_t cached = 0;
  std::uint64_t computed = 0;
  std::uint64_t skipped_out_of_range = 0;
  std::uint64_t skipped_division_by_zero = 0;
  std::uint64_t skipped_overflow = 0;
};

/// Grid points of the virtual sensor in [t0, t1). Points already stored are
/// reused; the rest are computed from the operands and written back.
/// Values are in the virtual sensor's unit.
std::vector<TimedValue> evaluate(Database& db, const Topic& vsensor, std::uint64_t t0,
                                 std::uint64_t t1, EvalStats* stats = nullptr);

/// Operand values converted for use inside `target`'s expression: same
/// dimension converts to the target unit, other dimensions to their base unit.
double convert_operand(double value, const Unit& operand_unit, const Unit& target_unit);

} // namespace shv
