#pragma once

#include "epi/date.hpp"

#include <optional>
#include <string>
#include <vector>

namespace epi::eval {

enum class Objective {
    NewDailyDeaths,
    NewDailyCases,
    CumulativeDeathsPer100k,
};

const char* objective_name(Objective objective);
Objective objective_from_string(const std::string& name);

/// One forecasting experiment: what to predict, the double window
/// (w_in observed days, w_out forecast days), the held-out test period, and
/// an optional region exclusion list.
struct ForecastTask {
    Objective objective = Objective::NewDailyDeaths;
    int w_in = 10;
    int w_out = 10;
    std::optional<Date> test_start;
    std::optional<Date> test_end;  // inclusive; defaults to panel end
    std::vector<std::string> exclude_fips;
    std::vector<std::string> exclude_states;
};

} // namespace epi::eval
