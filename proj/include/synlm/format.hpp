#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "json.hpp"

namespace synlm {

/// Rounds to 9 significant digits so JSON output stays diffable across
/// runs; non-finite values pass through.
inline double sig9(double x) {
    if (!std::isfinite(x)) return x;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::strtod(buf, nullptr);
}

/// Applies sig9 to every floating-point number in a JSON document.
inline nlohmann::json round_numbers(nlohmann::json j) {
    if (j.is_number_float()) return sig9(j.get<double>());
    if (j.is_structured()) {
        for (auto& v : j) v = round_numbers(std::move(v));
    }
    return j;
}

}  // namespace synlm
