// improvolve command line: validate, solve, evolve, ablate, render, bench, serve.

#include "improvolve/basinhop.hpp"
#include "improvolve/builtin_ops.hpp"
#include "improvolve/evolution.hpp"
#include "improvolve/known_best.hpp"
#include "improvolve/mutation_service.hpp"
#include "improvolve/param_set.hpp"
#include "improvolve/protocol.hpp"
#include "improvolve/render.hpp"
#include "improvolve/solution_io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace improvolve;
using nlohmann::json;
namespace bh = improvolve::basinhop;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitUsage = 2;

int env_workers() {
    if (const char* w = std::getenv("IMPROVOLVE_WORKERS")) {
        try {
            return std::max(1, std::stoi(w));
        } catch (const std::exception&) {
        }
    }
    return 1;
}

// ---- validate ------------------------------------------------------------

int cmd_validate(const std::string& path) {
    io::Solution sol;
    try {
        sol = io::read_solution_file(path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    if (const auto* c = std::get_if<hex::HexConfig>(&sol)) {
        try {
            hex::check_well_formed(*c);
        } catch (const MalformedSolution& e) {
            std::cout << "invalid: " << e.what() << '\n';
            return kExitInvalid;
        }
        const auto report = hex::validate(*c);
        std::cout << fmt::format("hex n={} L={:.10f}\n", c->size(), report.side_length);
        if (report.valid()) {
            std::cout << "valid\n";
            return kExitOk;
        }
        std::cout << "invalid: " << report.overlaps.size() << " overlapping pair(s)\n";
        for (const auto& o : report.overlaps) std::cout << fmt::format("  overlap {} {} depth {:.3e}\n", o.i, o.j, o.depth);
        return kExitInvalid;
    }
    const auto& f = std::get<aci::StepFunction>(sol);
    try {
        aci::check_valid(f.values);
    } catch (const MalformedSolution& e) {
        std::cout << "invalid: " << e.what() << '\n';
        return kExitInvalid;
    }
    const auto r = aci::fitness(f);
    std::cout << fmt::format("aci N={} C={:.10f} l1={:.6e} l2^2={:.6e} linf={:.6e}\nvalid\n", f.size(), r.c_value, r.l1,
                             r.l2_sq, r.linf);
    return kExitOk;
}

// ---- solve / ablate --------------------------------------------------------

json preset(const std::string& name) {
    if (name == "table3-hex") {
        return json{{"problem", "hex"}, {"K", 10}, {"R", 15}, {"timeout", 300},
                    {"schedule", bh::hex_table_schedule().values()}};
    }
    if (name == "table3-aci") {
        return json{{"problem", "aci"}, {"K", 3}, {"R", 5}, {"timeout", 1200},
                    {"schedule", bh::aci_table_schedule().values()}};
    }
    if (name == "final-hex") {
        return json{{"problem", "hex"}, {"K", 100}, {"R", 100}, {"timeout", 300},
                    {"sigma_max", 1000.0}, {"sigma_min", 0.001}, {"steps", 25}};
    }
    throw InvalidArgument("unknown preset '" + name + "' (table3-hex, table3-aci, final-hex)");
}

struct SolveFlags {
    std::string problem;
    std::string preset_name;
    std::string config;
    // Every key below maps to the same key name in config files.
    int n = 11;
    std::size_t resolution = 1024;
    std::uint64_t seed = 0;
    int K = 0;
    int R = 0;
    std::vector<double> schedule;
    double sigma_max = 0, sigma_min = 0;
    int steps = 0;
    double timeout = 0;
    std::string invalid_policy;
    std::string stage_mode;
    std::string mode;
    std::string operator_params;
    int workers = 0;
    std::string output;
    std::string trace;
};

struct SolveSettings {
    std::string problem;
    int n = 11;
    std::size_t resolution = 1024;
    std::uint64_t seed = 0;
    bh::BasinHopParams params;
    std::string mode;
    json operator_params;
};

SolveSettings resolve_settings(const SolveFlags& f, CLI::App& app) {
    // Built-in preset, then config file, then explicit flags.
    json s = preset(!f.preset_name.empty() ? f.preset_name : (f.problem == "aci" ? "table3-aci" : "table3-hex"));
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw InvalidArgument("cannot open config " + f.config);
        const json cfg = json::parse(in);
        if (cfg.contains("schedule")) {
            s.erase("sigma_max");
            s.erase("sigma_min");
            s.erase("steps");
        }
        if (cfg.contains("sigma_max")) s.erase("schedule");
        s.update(cfg);
    }
    auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("--n")) s["n"] = f.n;
    if (given("--resolution")) s["resolution"] = f.resolution;
    if (given("--seed")) s["seed"] = f.seed;
    if (given("--K")) s["K"] = f.K;
    if (given("--R")) s["R"] = f.R;
    if (given("--schedule")) {
        s["schedule"] = f.schedule;
        s.erase("sigma_max");
        s.erase("sigma_min");
        s.erase("steps");
    }
    if (given("--sigma-max") || given("--sigma-min") || given("--steps")) {
        s.erase("schedule");
        if (given("--sigma-max")) s["sigma_max"] = f.sigma_max;
        if (given("--sigma-min")) s["sigma_min"] = f.sigma_min;
        if (given("--steps")) s["steps"] = f.steps;
    }
    if (given("--timeout")) s["timeout"] = f.timeout;
    if (given("--invalid-policy")) s["invalid_policy"] = f.invalid_policy;
    if (given("--stage-mode")) s["stage_mode"] = f.stage_mode;
    if (given("--mode")) s["mode"] = f.mode;
    if (given("--workers")) s["workers"] = f.workers;
    if (given("--operator-params")) {
        std::ifstream in(f.operator_params);
        if (!in) throw InvalidArgument("cannot open " + f.operator_params);
        s["operator_params"] = json::parse(in);
    }

    SolveSettings out;
    out.problem = f.problem;
    if (s.at("problem") != f.problem) {
        throw InvalidArgument("preset is for " + s.at("problem").get<std::string>() + ", not " + f.problem);
    }
    out.n = s.value("n", 11);
    out.resolution = s.value("resolution", std::size_t{1024});
    out.seed = s.value("seed", std::uint64_t{0});
    auto& p = out.params;
    p.K = s.value("K", 10);
    p.R = s.value("R", 15);
    if (s.contains("schedule")) {
        p.schedule = bh::SigmaSchedule::explicit_list(s.at("schedule").get<std::vector<double>>());
    } else {
        p.schedule = bh::SigmaSchedule::geometric(s.value("sigma_max", 100.0), s.value("sigma_min", 0.001),
                                                  s.value("steps", 11));
    }
    p.per_call_timeout = std::chrono::milliseconds(static_cast<long long>(1000.0 * s.value("timeout", 300.0)));
    p.invalid_policy = bh::invalid_policy_from_string(s.value("invalid_policy", std::string("skip")));
    p.stage_mode = bh::stage_mode_from_string(s.value("stage_mode", std::string("A+B")));
    p.workers = s.value("workers", env_workers());
    out.mode = s.value("mode", std::string("default"));
    out.operator_params = s.value("operator_params", json(nullptr));
    p.check();
    return out;
}

std::string solution_summary(const io::Solution& s) {
    if (const auto* c = std::get_if<hex::HexConfig>(&s)) return fmt::format("L = {:.6f}", hex::side_length(*c));
    return fmt::format("C = {:.6f}", aci::fitness(std::get<aci::StepFunction>(s)).c_value);
}

struct SolveOutcome {
    io::Solution best;
    double fitness;
    bh::RunTrace trace;
};

SolveOutcome run_solve(const SolveSettings& st) {
    if (st.problem == "hex") {
        hex::OperatorParams op;
        if (!st.operator_params.is_null()) op = params::to_hex(params::from_json(st.operator_params));
        if (st.mode != "default") op.improve = hex::improve_params_for(hex::optimizer_mode_from_string(st.mode));
        auto r = bh::run_validation(builtin::hex_triple(st.n, op), builtin::hex_fitness(), st.params, st.seed);
        return {std::move(r.best), r.fitness, std::move(r.trace)};
    }
    aci::OperatorParams op;
    if (!st.operator_params.is_null()) op = params::to_aci(params::from_json(st.operator_params));
    if (st.mode != "default") op.improve = aci::improve_params_for(aci::grid_mode_from_string(st.mode));
    auto r = bh::run_validation(builtin::aci_triple(st.resolution, op), builtin::aci_fitness(), st.params, st.seed);
    auto final_f = aci::finalize(r.best);
    const double c = aci::fitness(final_f).c_value;
    return {std::move(final_f), c, std::move(r.trace)};
}

void write_trace(const std::string& path, const bh::RunTrace& t) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    bh::write_trace_jsonl(t, out);
}

int cmd_solve(const SolveFlags& f, CLI::App& app) {
    const auto st = resolve_settings(f, app);
    std::cerr << fmt::format("solve {} K={} R={} M={} stage={} seed={}\n", st.problem, st.params.K, st.params.R,
                             st.params.schedule.size(), bh::to_string(st.params.stage_mode), st.seed);
    const auto out = run_solve(st);
    const std::string output = f.output.empty() ? st.problem + "_solution.json" : f.output;
    io::write_solution_file(output, out.best);
    write_trace(f.trace.empty() ? output + ".trace.jsonl" : f.trace, out.trace);
    std::cout << fmt::format("fitness {:.10f}  {}\n", out.fitness, solution_summary(out.best));
    return kExitOk;
}

struct AblationMode {
    std::string name;
    bh::StageMode stage;
    int K;
    int R;
};

int cmd_ablate(int n, int a_only_k, const std::string& which, std::uint64_t seed, const std::string& outdir, int workers) {
    std::vector<AblationMode> modes = {
        {"A-only", bh::StageMode::a_only, a_only_k, 0},
        {"B-only", bh::StageMode::b_only, 1, 100},
        {"A+B", bh::StageMode::a_and_b, 100, 5},
    };
    json summary = json::array();
    std::cout << fmt::format("{:<8} {:>6} {:>5} {:>10} {:>6} {:>9}\n", "mode", "K", "R", "L", "valid", "seconds");
    for (const auto& m : modes) {
        if (which != "all" && bh::stage_mode_from_string(which) != m.stage) continue;
        bh::BasinHopParams p;
        p.K = m.K;
        p.R = m.R;
        p.stage_mode = m.stage;
        p.schedule = bh::hex_table_schedule();
        p.per_call_timeout = std::chrono::minutes(5);
        p.workers = workers;
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = bh::run_validation(builtin::hex_triple(n), builtin::hex_fitness(), p, seed);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool valid = hex::validate(r.best).valid();
        std::cout << fmt::format("{:<8} {:>6} {:>5} {:>10.6f} {:>6} {:>9.1f}\n", m.name, m.K, m.R, -r.fitness,
                                 valid ? "yes" : "no", secs);
        summary.push_back({{"mode", m.name}, {"K", m.K}, {"R", m.R}, {"L", -r.fitness}, {"valid", valid}, {"seconds", secs}});
        if (!outdir.empty()) {
            std::filesystem::create_directories(outdir);
            io::write_solution_file(std::filesystem::path(outdir) / (m.name + ".json"), r.best);
            write_trace((std::filesystem::path(outdir) / (m.name + ".trace.jsonl")).string(), r.trace);
        }
    }
    if (!outdir.empty()) std::ofstream(std::filesystem::path(outdir) / "summary.json") << summary.dump(1) << '\n';
    return kExitOk;
}

// ---- evolve ------------------------------------------------------------------

struct EvolveFlags {
    std::string problem;
    int generations = 3;
    std::string mutation = "builtin";
    std::string endpoint;
    std::string archive = "archive.json";
    std::string report;
    std::string candidates = "candidates";
    std::string shim = "python3 -m improvolve_shim";
    std::uint64_t seed = 0;
    int n = 11;
    std::size_t resolution = 1024;
    int K = 0;
    int R = 3;
    std::vector<double> schedule;
    double timeout = 0;
    int workers = 0;
    std::string selection = "shifted-proportional";
};

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

int cmd_evolve(const EvolveFlags& f, CLI::App& app) {
    evolution::ProblemSpec problem{f.problem, f.n, f.resolution};
    auto eval_params = evolution::default_eval_params(f.problem);
    eval_params.R = f.R;
    if (app.count("--K")) eval_params.K = f.K;
    if (app.count("--schedule")) eval_params.schedule = bh::SigmaSchedule::explicit_list(f.schedule);
    if (app.count("--timeout")) {
        eval_params.per_call_timeout = std::chrono::milliseconds(static_cast<long long>(f.timeout * 1000));
    }
    const evolution::EngineEvaluator evaluator(problem, eval_params);

    std::unique_ptr<evolution::MutationOperator> mutator;
    mutation::ServiceMutator* service = nullptr;
    if (f.mutation == "builtin") {
        mutator = std::make_unique<evolution::BuiltinMutator>();
    } else if (f.mutation == "external") {
        if (f.endpoint.empty()) throw InvalidArgument("--mutation external requires --endpoint");
        auto m = std::make_unique<mutation::ServiceMutator>(mutation::EndpointConfig::load(f.endpoint), problem,
                                                            f.candidates, split_words(f.shim));
        service = m.get();
        mutator = std::move(m);
    } else {
        throw InvalidArgument("unknown mutation mode '" + f.mutation + "' (builtin, external)");
    }

    evolution::EvolutionParams ep;
    ep.generations = f.generations;
    ep.workers = app.count("--workers") ? f.workers : env_workers();
    ep.selection = evolution::selection_from_string(f.selection);

    std::optional<evolution::Archive> archive;
    if (std::filesystem::exists(f.archive)) {
        archive = evolution::Archive::load(f.archive);
        std::cerr << "resuming " << f.archive << " at generation " << archive->generation << '\n';
    } else {
        const auto [lo, hi] = evolution::default_fitness_range(f.problem);
        archive.emplace(lo, hi);
        const auto ref = evolution::seed_archive(*archive, params::defaults_for(f.problem), evaluator, f.seed);
        std::cerr << fmt::format("generation 0: reference fitness {:.6f}\n", *ref.fitness);
        archive->save(f.archive);
    }

    std::ofstream report_out;
    if (!f.report.empty()) report_out.open(f.report, std::ios::app);
    evolution::run_evolution(*archive, ep, *mutator, evaluator, f.seed,
                             [&](const evolution::GenerationReport& r, const evolution::Archive& a) {
                                 a.save(f.archive);
                                 if (report_out) {
                                     r.write_jsonl(report_out);
                                     report_out.flush();
                                 }
                                 std::cerr << fmt::format("generation {}: births {} discards {} inserts {} "
                                                          "mutation failures {} best {:.6f}\n",
                                                          r.generation, r.births, r.discards, r.inserts,
                                                          r.mutation_failures, r.best_fitness);
                             });
    if (service != nullptr) {
        for (const auto& [kind, count] : service->failures) {
            std::cerr << fmt::format("skipped offspring ({}): {}\n", mutation::to_string(kind), count);
        }
    }
    std::cout << "best-ever curve:";
    for (double v : archive->best_curve) std::cout << fmt::format(" {:.6f}", v);
    std::cout << '\n';
    return kExitOk;
}

// ---- render / bench ------------------------------------------------------------

bool looks_like_trace(const std::string& path) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    try {
        const auto j = json::parse(first);
        return j.is_object() && j.contains("stage");
    } catch (const json::exception&) {
        return false;
    }
}

int cmd_render(const std::string& input, const std::string& output) {
    std::string svg;
    try {
        if (looks_like_trace(input)) {
            std::ifstream in(input);
            svg = render::trace_svg(bh::read_trace_jsonl(in));
        } else {
            const auto sol = io::read_solution_file(input);
            svg = std::holds_alternative<hex::HexConfig>(sol) ? render::hex_svg(std::get<hex::HexConfig>(sol))
                                                              : render::aci_svg(std::get<aci::StepFunction>(sol));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    std::ofstream out(output);
    if (!out) {
        std::cerr << "error: cannot write " << output << '\n';
        return kExitUsage;
    }
    out << svg;
    std::cout << "wrote " << output << '\n';
    return kExitOk;
}

int cmd_bench(const std::string& path) {
    io::Solution sol;
    try {
        sol = io::read_solution_file(path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    try {
        if (const auto* c = std::get_if<hex::HexConfig>(&sol)) {
            const double L = -hex::fitness(*c);
            std::cout << known_best::bench_report("hex", static_cast<int>(c->size()), L);
        } else {
            const auto& f = std::get<aci::StepFunction>(sol);
            aci::check_valid(f.values);
            std::cout << known_best::bench_report("aci", 0, aci::fitness(f).c_value);
        }
    } catch (const std::exception& e) {
        std::cout << "invalid: " << e.what() << '\n';
        return kExitInvalid;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Operator-triple basin hopping for hexagon packing and the autocorrelation inequality"};
    app.require_subcommand(1);

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "Check a solution file (exit 0 valid, 1 invalid, 2 unreadable)");
    validate->add_option("file", validate_path)->required();

    SolveFlags sf;
    auto* solve = app.add_subcommand("solve", "Run the two-stage basin hopping with the built-in operators");
    solve->add_option("problem", sf.problem)->required()->check(CLI::IsMember({"hex", "aci"}));
    solve->add_option("--preset", sf.preset_name, "table3-hex, table3-aci or final-hex");
    solve->add_option("--config", sf.config, "JSON file with the same keys as the flags");
    solve->add_option("--n", sf.n, "number of hexagons");
    solve->add_option("--resolution", sf.resolution, "ACI step count for generate");
    solve->add_option("--seed", sf.seed);
    solve->add_option("--K", sf.K, "Stage-A seeds");
    solve->add_option("--R", sf.R, "Stage-B rounds");
    solve->add_option("--schedule", sf.schedule, "explicit sigma list")->delimiter(',');
    solve->add_option("--sigma-max", sf.sigma_max);
    solve->add_option("--sigma-min", sf.sigma_min);
    solve->add_option("--steps", sf.steps, "geometric schedule length M");
    solve->add_option("--timeout", sf.timeout, "per-call timeout in seconds");
    solve->add_option("--invalid-policy", sf.invalid_policy, "skip or discard");
    solve->add_option("--stage-mode", sf.stage_mode, "A-only, B-only or A+B");
    solve->add_option("--mode", sf.mode, "hex: gradient|sqp, aci: standard|extended");
    solve->add_option("--operator-params", sf.operator_params, "parameter-set JSON file");
    solve->add_option("--workers", sf.workers, "concurrent Stage-A evaluations");
    solve->add_option("--output,-o", sf.output, "solution file");
    solve->add_option("--trace", sf.trace, "trace file (JSON lines)");

    EvolveFlags ef;
    auto* evolve = app.add_subcommand("evolve", "MAP-Elites over operator candidates");
    evolve->add_option("problem", ef.problem)->required()->check(CLI::IsMember({"hex", "aci"}));
    evolve->add_option("--generations", ef.generations);
    evolve->add_option("--mutation", ef.mutation, "builtin or external");
    evolve->add_option("--endpoint", ef.endpoint, "endpoint config JSON for external mutation");
    evolve->add_option("--archive", ef.archive, "checkpoint file; resumed when it exists");
    evolve->add_option("--report", ef.report, "generation report (JSON lines, appended)");
    evolve->add_option("--candidates", ef.candidates, "directory for external candidates");
    evolve->add_option("--shim", ef.shim, "command that hosts an external candidate");
    evolve->add_option("--seed", ef.seed);
    evolve->add_option("--n", ef.n);
    evolve->add_option("--resolution", ef.resolution);
    evolve->add_option("--K", ef.K, "evaluation Stage-A seeds");
    evolve->add_option("--R", ef.R, "evaluation rounds");
    evolve->add_option("--schedule", ef.schedule, "evaluation sigma list")->delimiter(',');
    evolve->add_option("--timeout", ef.timeout, "per-call timeout in seconds");
    evolve->add_option("--workers", ef.workers, "concurrent offspring evaluations");
    evolve->add_option("--selection", ef.selection, "shifted-proportional or rank-proportional");

    int ablate_n = 11;
    int ablate_k = 50;
    std::string ablate_mode = "all";
    std::uint64_t ablate_seed = 0;
    std::string ablate_out;
    int ablate_workers = 0;
    auto* ablate = app.add_subcommand("ablate", "Stage ablation on HEX: A-only, B-only, A+B");
    ablate->add_option("--n", ablate_n);
    ablate->add_option("--a-only-k", ablate_k, "seeds for the A-only column (1000 in the full setting)");
    ablate->add_option("--mode", ablate_mode, "all, A-only, B-only or A+B");
    ablate->add_option("--seed", ablate_seed);
    ablate->add_option("--output-dir", ablate_out);
    ablate->add_option("--workers", ablate_workers);

    std::string render_in;
    std::string render_out = "figure.svg";
    auto* render_cmd = app.add_subcommand("render", "SVG of a solution or a trace");
    render_cmd->add_option("input", render_in)->required();
    render_cmd->add_option("--output,-o", render_out);

    std::string bench_path;
    auto* bench = app.add_subcommand("bench", "Compare a solution with published values");
    bench->add_option("file", bench_path)->required();

    auto* serve = app.add_subcommand("serve", "Serve the built-in operators over stdin/stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*validate) return cmd_validate(validate_path);
        if (*solve) return cmd_solve(sf, *solve);
        if (*evolve) return cmd_evolve(ef, *evolve);
        if (*ablate) {
            return cmd_ablate(ablate_n, ablate_k, ablate_mode, ablate_seed, ablate_out,
                              ablate->count("--workers") ? ablate_workers : env_workers());
        }
        if (*render_cmd) return cmd_render(render_in, render_out);
        if (*bench) return cmd_bench(bench_path);
        if (*serve) return protocol::serve_builtin(std::cin, std::cout);
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
    return kExitUsage;
}
