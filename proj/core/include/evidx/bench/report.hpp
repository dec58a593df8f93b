#pragma once

#include <span>
#include <string>

#include "evidx/bench/scenario.hpp"

namespace evidx::bench {

// "table" mirrors the columns of a selection-timing table (selection,
// events scanned, events selected, CPU time and per-event costs); "csv" has
// one header row and one row per result; "plotdata" lists "x rate" pairs
// for every result that belongs to a series, one block per series. Throws
// kInvalidArgument for an empty result list or an unknown format.
std::string emit_report(std::span<const ScenarioResult> results, const std::string& format);

}  // namespace evidx::bench
