#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

/// Best published values for the two problems, with their printed digits.
namespace improvolve::known_best {

enum class Direction { min, max };

struct Row {
    std::string_view problem; ///< "hex" or "aci"
    int n = 0;                ///< hexagon count; 0 for aci
    std::string_view source;  ///< human, alphaevolve, improvevolve, improvevolve+E
    std::string_view printed; ///< the value exactly as published
    Direction direction = Direction::min;

    double value() const;
    int decimals() const;
};

const std::vector<Row>& table();

/// Rows for a problem instance (n ignored for aci).
std::vector<Row> rows_for(std::string_view problem, int n);

enum class Verdict { beats, matches, unmet };

std::string to_string(Verdict v);

/// Compares at the row's printed precision: equal after rounding matches.
Verdict compare(const Row& row, double value);

/// Human-readable comparison table for a solution value.
std::string bench_report(std::string_view problem, int n, double value);

} // namespace improvolve::known_best
