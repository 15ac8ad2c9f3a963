// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
// Usage: acceptance [name ...]   (no names runs everything)

#include "improvolve/basinhop.hpp"
#include "improvolve/builtin_ops.hpp"
#include "improvolve/evolution.hpp"
#include "improvolve/geometry.hpp"
#include "improvolve/param_set.hpp"
#include "improvolve/protocol.hpp"
#include "improvolve/solution_io.hpp"

#include <fmt/format.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace improvolve;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using namespace std::chrono_literals;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / "improvolve-acceptance" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(IMPROVOLVE_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---- oracles -------------------------------------------------------------------

std::vector<double> double_loop(const std::vector<double>& f) {
    std::vector<double> g(2 * f.size() - 1, 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        for (std::size_t j = 0; j < f.size(); ++j) g[i + j] += f[i] * f[j];
    }
    return g;
}

double uniform_closed_form(double N) { return (2 * (N - 1) * N * (2 * N - 1) / 6 + N * N) / (N * N * N); }

std::vector<double> random_function(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> f(n);
    for (auto& v : f) v = u(rng) < 0.2 ? 0.0 : u(rng);
    f[n / 2] += 0.1;
    return f;
}

// ---- criteria ------------------------------------------------------------------

Verdict geometry_oracle() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pos(-2.5, 2.5), ang(-10, 10);
    const auto t0 = Clock::now();
    int disagreements = 0, overlapping = 0;
    for (int i = 0; i < 1000; ++i) {
        const geometry::Hexagon a{{pos(rng), pos(rng)}, ang(rng), 1};
        const geometry::Hexagon b{{pos(rng), pos(rng)}, ang(rng), 1};
        const bool by_depth = geometry::penetration_depth(a, b) > geometry::kOverlapTolerance;
        const bool by_area = geometry::intersection_area(a, b) > 1e-9;
        disagreements += by_depth != by_area ? 1 : 0;
        overlapping += by_area ? 1 : 0;
    }
    const double secs = seconds_since(t0);
    return {disagreements == 0 && secs < 5.0,
            fmt::format("{} disagreements over 1000 pairs ({} overlapping), {:.3f} s", disagreements, overlapping, secs)};
}

Verdict aci_analytic() {
    const double pair = aci::fitness({{1, 1}}).c_value;
    const double N = 4096;
    const double uniform = aci::fitness({std::vector<double>(4096, 1.0)}).c_value;
    const double uniform_err = std::abs(uniform - uniform_closed_form(N));
    std::mt19937_64 rng(3);
    double worst = 0;
    for (std::size_t n = 1; n <= 256; n += (n < 16 ? 1 : 15)) {
        const auto f = random_function(rng, n);
        const auto ref = double_loop(f);
        const auto got = aci::autoconvolve(f);
        if (got.size() != ref.size()) return {false, fmt::format("length mismatch at N={}", n)};
        for (std::size_t k = 0; k < ref.size(); ++k) {
            if (ref[k] != 0.0) worst = std::max(worst, std::abs(got[k] - ref[k]) / std::abs(ref[k]));
            else worst = std::max(worst, std::abs(got[k]));
        }
    }
    return {pair == 0.75 && uniform_err <= 1e-12 && worst <= 1e-10,
            fmt::format("C([1,1]) = {}, uniform N=4096 error {:.2e}, autoconvolution rel. error {:.2e}", pair, uniform_err,
                        worst)};
}

Verdict aci_invariance() {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> len(2, 600);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto f = random_function(rng, len(rng));
        const double c = aci::fitness({f}).c_value;
        for (double s : {1e-6, 3.0, 1e6}) {
            auto g = f;
            for (auto& v : g) v *= s;
            worst = std::max(worst, std::abs(aci::fitness({g}).c_value - c));
        }
        std::reverse(f.begin(), f.end());
        worst = std::max(worst, std::abs(aci::fitness({f}).c_value - c));
    }
    return {worst <= 1e-12, fmt::format("max deviation {:.2e} over 1000 functions", worst)};
}

Verdict hex_solve(int n, double target, double budget_s) {
    const auto d = scratch("hex" + std::to_string(n));
    const auto out = d / "solution.json";
    const auto t0 = Clock::now();
    const int code = run_cli(fmt::format("solve hex --n {} --preset table3-hex -o {}", n, out.string()));
    const double secs = seconds_since(t0);
    if (code != 0) return {false, fmt::format("solve exited with {}", code)};
    const auto c = io::hex_from_json(nlohmann::json::parse(std::ifstream(out)), n);
    const auto report = hex::validate(c);
    return {report.valid() && report.side_length <= target && secs <= budget_s,
            fmt::format("L = {:.6f} (gate {}), valid {}, {:.0f} s (budget {:.0f} s)", report.side_length, target,
                        report.valid() ? "yes" : "no", secs, budget_s)};
}

Verdict aci_floor() {
    const auto start = aci::generate(1024, 0);
    auto t0 = Clock::now();
    const auto improved = aci::improve(start, aci::GridMode::standard, Clock::now() + 10min);
    const double improve_s = seconds_since(t0);
    aci::check_valid(improved.values);
    const double c_improve = aci::fitness(improved).c_value;

    const auto d = scratch("aci");
    const auto out = d / "solution.json";
    t0 = Clock::now();
    const int code = run_cli("solve aci --preset table3-aci -o " + out.string());
    const double preset_s = seconds_since(t0);
    if (code != 0) return {false, fmt::format("solve exited with {}", code)};
    const auto f = io::aci_from_json(nlohmann::json::parse(std::ifstream(out)));
    aci::check_valid(f.values);
    const double c_preset = aci::fitness(f).c_value;
    return {c_improve >= 0.85 && improve_s <= 600 && c_preset >= 0.88 && preset_s <= 3600,
            fmt::format("one improve: C = {:.5f} in {:.0f} s; preset: C = {:.5f} in {:.0f} s", c_improve, improve_s,
                        c_preset, preset_s)};
}

// Mock solution for engine checks: a value and the Stage-A seed it came from.
struct Tagged {
    double value = 0;
    std::uint64_t origin = 0;
};

basinhop::FitnessFn<Tagged> tagged_fitness() {
    return [](const Tagged& t) {
        if (std::isnan(t.value)) throw Error("invalid");
        return t.value;
    };
}

basinhop::BasinHopParams mock_params(int K, int R, std::vector<double> sigmas) {
    basinhop::BasinHopParams p;
    p.K = K;
    p.R = R;
    p.schedule = basinhop::SigmaSchedule::explicit_list(std::move(sigmas));
    p.per_call_timeout = 10s;
    return p;
}

Verdict engine_invariants() {
    std::vector<std::string> problems;
    // 1. Monotone best curve over randomized operators.
    int runs = 0;
    for (std::uint64_t salt = 0; salt < 200; ++salt) {
        basinhop::OperatorTriple<Tagged> ops;
        ops.generate = [salt](std::uint64_t seed, basinhop::Deadline) {
            std::mt19937_64 rng(seed * 7919 + salt);
            return Tagged{std::uniform_real_distribution<double>(-10, 0)(rng), seed};
        };
        ops.improve = [salt](const Tagged& x, basinhop::Deadline) {
            std::mt19937_64 rng(std::hash<double>{}(x.value) ^ salt);
            const double r = std::uniform_real_distribution<double>(0, 1)(rng);
            if (r < 0.05) throw ImprovementFailed("mock");
            if (r < 0.1) return Tagged{NAN, x.origin};
            return Tagged{x.value + std::normal_distribution<double>(0, 1)(rng), x.origin};
        };
        ops.perturb = [](const Tagged& x, double sigma, std::uint64_t seed, basinhop::Deadline) {
            std::mt19937_64 rng(seed);
            return Tagged{x.value + sigma * std::normal_distribution<double>(0, 1)(rng), x.origin};
        };
        try {
            const auto r = basinhop::run_validation(ops, tagged_fitness(), mock_params(8, 2, {10, 1, 0.1}), salt);
            const auto& c = r.trace.best_fitness_curve;
            for (std::size_t i = 1; i < c.size(); ++i) {
                if (c[i] < c[i - 1]) {
                    problems.push_back(fmt::format("curve decreases in run {}", salt));
                    break;
                }
            }
            if (!c.empty() && c.back() != r.fitness) problems.push_back("curve does not end at the result");
            ++runs;
        } catch (const basinhop::NoValidStart&) {
        }
    }
    if (runs < 190) problems.push_back(fmt::format("only {} of 200 runs started", runs));

    // 2. Geometric endpoints.
    const auto g = basinhop::SigmaSchedule::geometric(1000, 0.001, 25);
    if (g.at(1) != 1000.0 || g.at(25) != 0.001) problems.push_back("geometric endpoints are not exact");

    // 3. The schedule restarts every round.
    std::vector<double> seen;
    basinhop::OperatorTriple<Tagged> rec;
    rec.generate = [](std::uint64_t s, basinhop::Deadline) { return Tagged{0, s}; };
    rec.improve = [](const Tagged& x, basinhop::Deadline) { return x; };
    rec.perturb = [&seen](const Tagged& x, double sigma, std::uint64_t, basinhop::Deadline) {
        seen.push_back(sigma);
        return x;
    };
    basinhop::run_validation(rec, tagged_fitness(), mock_params(1, 3, {5, 0.5, 0.05}), 0);
    if (seen != std::vector<double>{5, 0.5, 0.05, 5, 0.5, 0.05, 5, 0.5, 0.05}) problems.push_back("schedule does not restart");

    // 4. Stage-A ties go to the lowest seed.
    basinhop::OperatorTriple<Tagged> tie;
    tie.generate = [](std::uint64_t s, basinhop::Deadline) { return Tagged{s % 2 == 0 ? 1.0 : 0.0, s}; };
    tie.improve = [](const Tagged& x, basinhop::Deadline) { return x; };
    tie.perturb = [](const Tagged& x, double, std::uint64_t, basinhop::Deadline) { return Tagged{-1, x.origin}; };
    const auto t = basinhop::run_validation(tie, tagged_fitness(), mock_params(6, 1, {1}), 0);
    if (t.best.origin != basinhop::stage_a_seed(0, 6, 2)) problems.push_back("tie not broken by the lowest seed");

    return {problems.empty(), problems.empty() ? fmt::format("{} randomized runs monotone; endpoints, restart, tie-break ok", runs)
                                               : problems.front()};
}

Verdict ablation() {
    const auto d = scratch("ablation");
    const auto t0 = Clock::now();
    const int code = run_cli("ablate --n 7 --a-only-k 50 --output-dir " + d.string());
    const double secs = seconds_since(t0);
    if (code != 0) return {false, fmt::format("ablate exited with {}", code)};
    const auto summary = nlohmann::json::parse(std::ifstream(d / "summary.json"));
    std::string detail;
    bool ok = summary.size() == 3;
    for (const auto& row : summary) {
        const auto mode = row.at("mode").get<std::string>();
        const auto c = io::hex_from_json(nlohmann::json::parse(std::ifstream(d / (mode + ".json"))), 7);
        const auto report = hex::validate(c);
        ok = ok && report.valid();
        detail += fmt::format("{} L={:.4f}{}; ", mode, report.side_length, report.valid() ? "" : " INVALID");
    }
    ok = ok && secs <= 900;
    return {ok, detail + fmt::format("total {:.0f} s (budget 900 s)", secs)};
}

basinhop::BasinHopParams tiny_engine() {
    basinhop::BasinHopParams p;
    p.K = 2;
    p.R = 1;
    p.schedule = basinhop::SigmaSchedule::explicit_list({1.0, 0.1});
    p.per_call_timeout = 60s;
    return p;
}

std::string evolution_reports(std::uint64_t seed, std::vector<double>& curve) {
    const evolution::EngineEvaluator eval({"hex", 3, 1024}, tiny_engine());
    evolution::Archive a(-3.0, -1.5);
    evolution::seed_archive(a, params::hex_defaults(), eval, seed);
    evolution::EvolutionParams p;
    p.generations = 5;
    evolution::BuiltinMutator mut;
    std::ostringstream os;
    curve = evolution::run_evolution(a, p, mut, eval, seed,
                                     [&](const evolution::GenerationReport& r, const evolution::Archive&) { r.write_jsonl(os); });
    return os.str();
}

Verdict evolution_loop() {
    std::vector<double> c1, c2;
    const auto r1 = evolution_reports(23, c1);
    const auto r2 = evolution_reports(23, c2);
    const bool reproducible = r1 == r2 && !r1.empty();
    bool monotone = c1.size() == 6;
    for (std::size_t i = 1; i < c1.size(); ++i) monotone = monotone && c1[i] >= c1[i - 1];

    evolution::Archive a(-6.0, -3.85);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-6.5, -3.5);
    std::array<double, evolution::kArchiveBins> seen;
    seen.fill(-INFINITY);
    bool bins_ok = true;
    for (int i = 0; i < 10000; ++i) {
        evolution::Candidate c;
        c.id = std::to_string(i);
        c.payload = params::hex_defaults();
        c.fitness = u(rng);
        a.insert(c);
        for (std::size_t b = 0; b < evolution::kArchiveBins; ++b) {
            if (!a.bin(b)) continue;
            bins_ok = bins_ok && *a.bin(b)->fitness >= seen[b];
            seen[b] = *a.bin(b)->fitness;
        }
    }
    return {reproducible && monotone && bins_ok,
            fmt::format("reports identical: {}; best-ever non-decreasing: {}; bins monotone over 10000 inserts: {}",
                        reproducible, monotone, bins_ok)};
}

Verdict protocol_loopback() {
    const protocol::LaunchSpec server{{IMPROVOLVE_CLI, "serve"}, {}};
    const auto far = [] { return Clock::now() + 120s; };
    int mismatches = 0;

    protocol::InitParams hinit;
    hinit.problem = "hex";
    hinit.n = 4;
    auto hs = protocol::RemoteSession::spawn(server, hinit, 30s);
    const auto hops = builtin::hex_triple(4);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto x = hops.generate(s, std::nullopt);
        mismatches += std::get<hex::HexConfig>(hs->generate(s, far())) == x ? 0 : 1;
        const auto y = hops.improve(x, far());
        mismatches += std::get<hex::HexConfig>(hs->improve(x, far())) == y ? 0 : 1;
        mismatches += std::get<hex::HexConfig>(hs->perturb(y, 0.5, s, far())) == hops.perturb(y, 0.5, s, std::nullopt) ? 0 : 1;
    }
    hs->shutdown();

    const nlohmann::json small{{"problem", "aci"}, {"values", {{"iterations_per_stage", 10}}}};
    protocol::InitParams ainit;
    ainit.problem = "aci";
    ainit.resolution = 64;
    ainit.operator_params = small;
    auto as = protocol::RemoteSession::spawn(server, ainit, 30s);
    const auto aops = builtin::aci_triple(64, params::to_aci(params::from_json(small)));
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto x = aops.generate(s, std::nullopt);
        mismatches += std::get<aci::StepFunction>(as->generate(s, far())) == x ? 0 : 1;
        const auto k = aops.perturb(x, 0.5, s, std::nullopt);
        mismatches += std::get<aci::StepFunction>(as->perturb(x, 0.5, s, far())) == k ? 0 : 1;
        if (s % 5 == 0) mismatches += std::get<aci::StepFunction>(as->improve(k, far())) == aops.improve(k, far()) ? 0 : 1;
    }
    as->shutdown();

    // Fuzz: mutated valid responses and random bytes through the parser, and
    // hostile peers through a live session. Anything but ProtocolError is a crash.
    std::mt19937_64 rng(99);
    const std::string valid = R"({"id":2,"result":{"problem":"hex","n":2,"centers":[[0,0],[0,2]],"angles":[0,0]}})";
    int fuzzed = 0, unexpected = 0;
    std::string first_unexpected;
    auto note = [&](const std::string& what) {
        if (unexpected++ == 0) first_unexpected = what;
    };
    for (int i = 0; i < 5000; ++i) {
        std::string line = valid;
        const int edits = 1 + static_cast<int>(rng() % 4);
        for (int e = 0; e < edits; ++e) {
            const auto pos = rng() % line.size();
            switch (rng() % 3) {
            case 0: line[pos] = static_cast<char>(rng() % 256); break;
            case 1: line.erase(pos, 1 + rng() % 8); break;
            default: line.insert(pos, 1, "{}[]\",:0-e"[rng() % 10]); break;
            }
            if (line.empty()) line = "x";
        }
        try {
            const auto r = protocol::parse_response(line);
            if (r.result) {
                try {
                    io::hex_from_json(*r.result, 2);
                } catch (const MalformedSolution&) {
                }
            }
        } catch (const protocol::ProtocolError&) {
        } catch (const std::exception& e) {
            note(fmt::format("parser threw '{}' on {}", e.what(), line));
        }
        ++fuzzed;
    }
    const char* hostile[] = {
        R"(read l; echo '{"id":1,"result":{"ok":true}}'; read l; echo '{"id":2,"result":{"problem":"hex","n":4,"centers":"nope"}}'; sleep 5)",
        R"(read l; echo '{"id":1,"result":{"ok":true}}'; read l; echo '{"id":2,"result":{"problem":"hex","n":4,"centers":[[0,0]],"angles":[0]}}'; sleep 5)",
        R"(read l; echo '{"id":1,"result":{"ok":true}}'; read l; echo '{"id":2,"result":{"problem":"hex","n":4,"centers":[[0,0],[1e400,0],[0,5],[5,5]],"angles":[0,0,0,0]}}'; sleep 5)",
        R"(read l; echo '{"id":1,"result":{"ok":true}}'; read l; head -c 100000 /dev/urandom 2>/dev/null; echo; sleep 5)",
        R"(read l; echo '{"id":1,"result":{"ok":true}}'; read l; printf '{"id":2,"res'; exit 0)",
        R"(read l; echo '{"id":1,"result":{"ok":true}}'; read l; echo '{"id":7,"result":null}'; sleep 5)",
    };
    for (const char* script : hostile) {
        try {
            auto s = protocol::RemoteSession::spawn({{"sh", "-c", script}, {}}, hinit, 5s);
            s->generate(0, Clock::now() + 5s);
            note(std::string("hostile reply decoded: ") + script);
        } catch (const protocol::ProtocolError&) {
        } catch (const std::exception& e) {
            note(fmt::format("session threw '{}' for {}", e.what(), script));
        }
        ++fuzzed;
    }
    return {mismatches == 0 && unexpected == 0,
            fmt::format("{} mismatches over 50 seeds per problem; {} fuzz cases, {} unexpected outcomes{}", mismatches,
                        fuzzed, unexpected, first_unexpected.empty() ? "" : " (first: " + first_unexpected + ")")};
}

Verdict invalid_policy() {
    // Stage A gives 1, 2, 3; the first improve in Stage B is invalid.
    auto make_ops = [] {
        auto calls = std::make_shared<int>(0);
        basinhop::OperatorTriple<Tagged> ops;
        ops.generate = [](std::uint64_t s, basinhop::Deadline) { return Tagged{static_cast<double>(s), s}; };
        ops.improve = [calls](const Tagged& x, basinhop::Deadline) {
            if (++*calls == 4) return Tagged{NAN, x.origin};
            return x;
        };
        ops.perturb = [](const Tagged& x, double, std::uint64_t, basinhop::Deadline) { return Tagged{x.value - 1, x.origin}; };
        return ops;
    };
    auto p = mock_params(3, 1, {1, 0.5});

    bool discarded = false;
    p.invalid_policy = basinhop::InvalidPolicy::discard;
    try {
        basinhop::run_validation(make_ops(), tagged_fitness(), p, 0);
    } catch (const basinhop::CandidateDiscarded&) {
        discarded = true;
    }

    p.invalid_policy = basinhop::InvalidPolicy::skip;
    const auto r = basinhop::run_validation(make_ops(), tagged_fitness(), p, 0);
    std::size_t invalid = 0;
    for (const auto& ev : r.trace.events) invalid += ev.invalid ? 1 : 0;
    const bool kept = r.fitness == 3.0 && r.best.origin == 3 && invalid == 1 && r.trace.events.size() == 5;
    return {discarded && kept, fmt::format("discard aborts: {}; skip returns prior best {} with {} invalid event(s)",
                                           discarded, r.fitness, invalid)};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"geometry-oracle", geometry_oracle},
        {"aci-analytic", aci_analytic},
        {"aci-invariance", aci_invariance},
        {"hex13-lattice", [] { return hex_solve(13, 4.0 + 1e-3, 600); }},
        // Pinned at what the built-in operators reach with seed 0 (L = 3.92691);
        // any 11 sites of the 13-site lattice give 4.0.
        {"hex11-floor", [] { return hex_solve(11, 3.93, 1800); }},
        {"aci-floor", aci_floor},
        {"engine-invariants", engine_invariants},
        {"ablation", ablation},
        {"evolution-loop", evolution_loop},
        {"protocol-loopback", protocol_loopback},
        {"invalid-policy", invalid_policy},
    };
    std::vector<std::string> only(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += v.pass ? 0 : 1;
        std::cout << (v.pass ? "PASS " : "FAIL ") << fmt::format("{:<18} {}", name, v.detail) << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
