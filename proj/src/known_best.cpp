#include "improvolve/known_best.hpp"

#include <fmt/format.h>

#include <cmath>
#include <string>

namespace improvolve::known_best {

double Row::value() const { return std::stod(std::string(printed)); }

int Row::decimals() const {
    const auto dot = printed.find('.');
    return dot == std::string_view::npos ? 0 : static_cast<int>(printed.size() - dot - 1);
}

namespace {

Row hex_row(int n, std::string_view source, std::string_view printed) {
    return Row{"hex", n, source, printed, Direction::min};
}

std::vector<Row> build() {
    std::vector<Row> t = {
        hex_row(11, "human", "3.9434"),
        hex_row(11, "alphaevolve", "3.9301"),
        hex_row(11, "improvevolve", "3.9245"),
        hex_row(11, "improvevolve+E", "3.9245"),
        hex_row(12, "human", "4.0000"),
        hex_row(12, "alphaevolve", "3.9419"),
        hex_row(12, "improvevolve", "3.9416"),
        hex_row(12, "improvevolve+E", "3.9416"),
        Row{"aci", 0, "human", "0.94136", Direction::max},
        Row{"aci", 0, "alphaevolve", "0.96102", Direction::max},
        Row{"aci", 0, "improvevolve", "0.9512", Direction::max},
        Row{"aci", 0, "improvevolve+E", "0.96258", Direction::max},
    };
    struct Line {
        int n;
        std::string_view human, improv, edited;
    };
    // The larger instances; "" marks no earlier packing.
    const Line lines[] = {
        {13, "4.0000", "4.0000", "4.0000"}, {14, "4.2724", "4.2724", "4.2690"}, {15, "4.4541", "4.4473", "4.4473"},
        {16, "4.5363", "4.5275", "4.5275"}, {17, "4.6188", "4.6188", "4.6136"}, {18, "4.6188", "4.6188", "4.6188"},
        {19, "4.6188", "4.6188", "4.6188"}, {20, "5.0000", "5.0000", "5.0000"}, {21, "5.0000", "5.0000", "5.0000"},
        {22, "5.2856", "5.2857", "5.2856"}, {23, "5.4286", "5.4848", "5.4000"}, {24, "5.4848", "5.4848", "5.4848"},
        {25, "", "5.6510", "5.6239"},       {26, "", "5.7142", "5.7097"},       {27, "", "5.7142", "5.7142"},
        {28, "", "5.9723", "5.9089"},       {29, "", "6.0000", "6.0000"},       {30, "", "6.0045", "6.0000"},
    };
    for (const auto& l : lines) {
        if (!l.human.empty()) t.push_back(hex_row(l.n, "human", l.human));
        t.push_back(hex_row(l.n, "improvevolve", l.improv));
        t.push_back(hex_row(l.n, "improvevolve+E", l.edited));
    }
    return t;
}

} // namespace

const std::vector<Row>& table() {
    static const std::vector<Row> t = build();
    return t;
}

std::vector<Row> rows_for(std::string_view problem, int n) {
    std::vector<Row> out;
    for (const auto& r : table()) {
        if (r.problem == problem && (problem == "aci" || r.n == n)) out.push_back(r);
    }
    return out;
}

std::string to_string(Verdict v) {
    switch (v) {
    case Verdict::beats:
        return "beats";
    case Verdict::matches:
        return "matches";
    case Verdict::unmet:
        return "unmet";
    }
    return "unmet";
}

Verdict compare(const Row& row, double value) {
    const double scale = std::pow(10.0, row.decimals());
    const double rounded = std::round(value * scale);
    const double target = std::round(row.value() * scale);
    if (rounded == target) return Verdict::matches;
    const bool better = row.direction == Direction::min ? rounded < target : rounded > target;
    return better ? Verdict::beats : Verdict::unmet;
}

std::string bench_report(std::string_view problem, int n, double value) {
    const auto rows = rows_for(problem, n);
    const bool is_hex = problem == "hex";
    std::string out = is_hex ? fmt::format("HEX {}: L = {:.6f}\n", n, value) : fmt::format("ACI: C = {:.6f}\n", value);
    if (rows.empty()) return out + "no published values for this instance\n";

    std::vector<std::string> beaten;
    std::vector<std::string> unmet;
    for (const auto& r : rows) {
        const auto v = compare(r, value);
        const double gap = r.direction == Direction::min ? value - r.value() : r.value() - value;
        out += fmt::format("  {:<16} {:>8}  {:<8} gap {:+.6f}\n", r.source, r.printed, to_string(v), gap);
        const auto label = fmt::format("{} {}", r.source, r.printed);
        if (v == Verdict::unmet) {
            unmet.push_back(label);
        } else {
            beaten.push_back(fmt::format("{} {}", to_string(v), label));
        }
    }
    auto join = [](const std::vector<std::string>& xs) {
        std::string s;
        for (const auto& x : xs) s += (s.empty() ? "" : ", ") + x;
        return s;
    };
    out += "summary: " + (beaten.empty() ? std::string("beats none") : join(beaten));
    if (!unmet.empty()) out += "; " + join(unmet) + " unmet";
    out += '\n';
    return out;
}

} // namespace improvolve::known_best
