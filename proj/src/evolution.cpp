#include "improvolve/evolution.hpp"

#include "improvolve/builtin_ops.hpp"
#include "improvolve/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace improvolve::evolution {

std::string to_string(CandidateKind k) {
    return k == CandidateKind::builtin_parametric ? "builtin-parametric" : "external-process";
}

CandidateKind Candidate::kind() const {
    return std::holds_alternative<params::ParamSet>(payload) ? CandidateKind::builtin_parametric
                                                             : CandidateKind::external_process;
}

json Candidate::to_json() const {
    json j;
    j["id"] = id;
    j["kind"] = to_string(kind());
    if (const auto* ps = std::get_if<params::ParamSet>(&payload)) {
        j["payload"] = ps->to_json();
    } else {
        const auto& ext = std::get<ExternalPayload>(payload);
        j["payload"] = json{{"launch", ext.launch.to_json()}, {"source", ext.source}};
    }
    j["fitness"] = fitness ? json(*fitness) : json(nullptr);
    j["generation"] = generation;
    j["parent_ids"] = parent_ids;
    j["metrics"] = metrics;
    return j;
}

Candidate Candidate::from_json(const json& j) {
    Candidate c;
    c.id = j.at("id").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "builtin-parametric") {
        c.payload = params::from_json(j.at("payload"));
    } else if (kind == "external-process") {
        const json& p = j.at("payload");
        c.payload = ExternalPayload{protocol::LaunchSpec::from_json(p.at("launch")), p.value("source", "")};
    } else {
        throw InvalidArgument("unknown candidate kind '" + kind + "'");
    }
    if (!j.at("fitness").is_null()) c.fitness = j.at("fitness").get<double>();
    c.generation = j.at("generation").get<int>();
    c.parent_ids = j.at("parent_ids").get<std::vector<std::string>>();
    c.metrics = j.at("metrics").get<std::map<std::string, double>>();
    return c;
}

Archive::Archive(double lo, double hi) : lo_(lo), hi_(hi) {
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) throw InvalidArgument("archive: need lo < hi");
}

std::size_t Archive::bin_index(double fitness) const {
    const double scaled = std::floor(static_cast<double>(kArchiveBins) * (fitness - lo_) / (hi_ - lo_));
    return static_cast<std::size_t>(std::clamp(scaled, 0.0, static_cast<double>(kArchiveBins - 1)));
}

InsertResult Archive::insert(const Candidate& c) {
    if (!c.fitness) return {false, 0, "candidate has not been evaluated"};
    if (!std::isfinite(*c.fitness)) return {false, 0, "non-finite fitness"};
    const std::size_t b = bin_index(*c.fitness);
    auto& slot = bins_[b];
    if (slot && !(*c.fitness > *slot->fitness)) return {false, b, "bin incumbent is at least as fit"};
    slot = c;
    return {true, b, {}};
}

std::vector<const Candidate*> Archive::occupants() const {
    std::vector<const Candidate*> out;
    for (const auto& slot : bins_) {
        if (slot) out.push_back(&*slot);
    }
    return out;
}

std::size_t Archive::occupancy() const {
    return static_cast<std::size_t>(std::count_if(bins_.begin(), bins_.end(), [](const auto& s) { return s.has_value(); }));
}

const Candidate* Archive::best() const {
    for (auto it = bins_.rbegin(); it != bins_.rend(); ++it) {
        if (*it) return &**it;
    }
    return nullptr;
}

json Archive::to_json() const {
    json bins = json::array();
    for (std::size_t i = 0; i < kArchiveBins; ++i) {
        if (bins_[i]) bins.push_back(json{{"bin", i}, {"candidate", bins_[i]->to_json()}});
    }
    return json{{"fitness_range", {lo_, hi_}}, {"generation", generation}, {"best_curve", best_curve}, {"bins", bins}};
}

Archive Archive::from_json(const json& j) {
    const auto range = j.at("fitness_range").get<std::vector<double>>();
    if (range.size() != 2) throw InvalidArgument("archive: fitness_range needs two values");
    Archive a(range[0], range[1]);
    a.generation = j.at("generation").get<int>();
    a.best_curve = j.value("best_curve", std::vector<double>{});
    for (const auto& entry : j.at("bins")) {
        const auto b = entry.at("bin").get<std::size_t>();
        if (b >= kArchiveBins) throw InvalidArgument("archive: bin index out of range");
        a.bins_[b] = Candidate::from_json(entry.at("candidate"));
    }
    return a;
}

void Archive::save(const std::filesystem::path& path) const {
    // Write then rename, so an interrupted run leaves the previous checkpoint.
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error("cannot write " + tmp);
        out << to_json().dump(1) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return from_json(json::parse(in));
}

std::pair<double, double> default_fitness_range(const std::string& problem) {
    if (problem == "hex") return {-6.0, -3.85};
    if (problem == "aci") return {0.5, 1.0};
    throw InvalidArgument("unknown problem '" + problem + "'");
}

Selection selection_from_string(const std::string& s) {
    if (s == "shifted-proportional" || s == "shifted") return Selection::shifted_proportional;
    if (s == "rank-proportional" || s == "rank") return Selection::rank_proportional;
    throw InvalidArgument("unknown selection scheme '" + s + "'");
}

std::vector<double> selection_weights(const std::vector<double>& fitness, Selection scheme) {
    if (fitness.empty()) throw InvalidArgument("selection over an empty set");
    const auto [lo_it, hi_it] = std::minmax_element(fitness.begin(), fitness.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (lo == hi) return std::vector<double>(fitness.size(), 1.0);

    std::vector<double> w(fitness.size());
    if (scheme == Selection::shifted_proportional) {
        const double eps = 1e-6 * (hi - lo + 1.0);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = fitness[i] - lo + eps;
        return w;
    }
    // Average ranks, 1 for the worst.
    std::vector<std::size_t> order(fitness.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return fitness[a] < fitness[b]; });
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && fitness[order[j + 1]] == fitness[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) w[order[k]] = rank;
        i = j + 1;
    }
    return w;
}

std::vector<const Candidate*> select_elites(const Archive& a, std::size_t n, std::uint64_t seed, Selection scheme) {
    const auto pool = a.occupants();
    if (pool.empty()) throw InvalidArgument("select_elites: archive is empty");
    std::vector<double> f;
    for (const auto* c : pool) f.push_back(*c->fitness);
    const auto w = selection_weights(f, scheme);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    auto rng = make_rng(seed);
    std::vector<const Candidate*> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[pick(rng)]);
    return out;
}

ArchiveStats archive_stats(const Archive& a) {
    ArchiveStats s;
    const auto pool = a.occupants();
    s.occupancy = pool.size();
    if (pool.empty()) return s;
    s.best = -std::numeric_limits<double>::infinity();
    s.worst = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto* c : pool) {
        s.best = std::max(s.best, *c->fitness);
        s.worst = std::min(s.worst, *c->fitness);
        sum += *c->fitness;
    }
    s.mean = sum / static_cast<double>(pool.size());
    return s;
}

std::string MutationContext::describe() const {
    std::ostringstream os;
    os.precision(10);
    os << "Archive: " << stats.occupancy << " occupied bins, best fitness " << stats.best << ", mean " << stats.mean
       << ", worst " << stats.worst << ".\n";
    for (std::size_t i = 0; i < parents.size(); ++i) {
        const auto* p = parents[i];
        os << "\nParent " << i + 1 << " (" << p->id << ", generation " << p->generation << ")\n";
        if (p->fitness) os << "fitness: " << *p->fitness << " (" << (*p->fitness - stats.best) << " from best)\n";
        for (const auto& [k, v] : p->metrics) os << k << ": " << v << '\n';
        if (const auto* ps = std::get_if<params::ParamSet>(&p->payload)) os << "parameters: " << ps->to_json().dump() << '\n';
    }
    return os.str();
}

params::ParamSet mutate_builtin(const std::vector<const params::ParamSet*>& parents, std::uint64_t seed,
                                bool zero_variance) {
    if (parents.empty()) throw MutationFailed("mutation needs at least one parent");
    auto rng = make_rng(seed);
    params::ParamSet child = *parents.front();
    for (const auto* p : parents) {
        if (p->problem != child.problem || p->fields.size() != child.fields.size()) {
            throw MutationFailed("parents disagree on the parameter layout");
        }
    }
    std::uniform_int_distribution<std::size_t> which(0, parents.size() - 1);
    std::normal_distribution<double> noise(0.0, 0.2);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    for (std::size_t k = 0; k < child.fields.size(); ++k) {
        child.fields[k] = parents[which(rng)]->fields[k];
        if (zero_variance) continue;
        if (auto* n = std::get_if<params::NumericField>(&child.fields[k])) {
            n->value *= std::exp(noise(rng));
        } else {
            auto& c = std::get<params::ChoiceField>(child.fields[k]);
            if (coin(rng) < 0.1 && c.choices.size() > 1) {
                std::vector<std::string> others;
                for (const auto& s : c.choices) {
                    if (s != c.value) others.push_back(s);
                }
                c.value = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
            }
        }
    }
    child.normalize();
    return child;
}

Payload BuiltinMutator::mutate(const MutationContext& ctx) {
    std::vector<const params::ParamSet*> ps;
    for (const auto* p : ctx.parents) {
        const auto* set = std::get_if<params::ParamSet>(&p->payload);
        if (set == nullptr) throw MutationFailed("builtin mutator cannot mutate external candidate " + p->id);
        ps.push_back(set);
    }
    return mutate_builtin(ps, ctx.seed, zero_variance_);
}

EngineEvaluator::EngineEvaluator(ProblemSpec problem, basinhop::BasinHopParams eval_params)
    : problem_(std::move(problem)), params_(std::move(eval_params)) {
    params_.invalid_policy = basinhop::InvalidPolicy::discard;
    params_.check();
}

namespace {

template <class S>
EvalOutcome run_engine(const basinhop::OperatorTriple<S>& ops, const basinhop::FitnessFn<S>& fitness,
                       const basinhop::BasinHopParams& p, std::uint64_t seed) {
    EvalOutcome out;
    const auto result = basinhop::run_validation(ops, fitness, p, seed);
    std::size_t invalid = 0;
    for (const auto& ev : result.trace.events) invalid += ev.invalid ? 1 : 0;
    out.fitness = result.fitness;
    out.metrics["events"] = static_cast<double>(result.trace.events.size());
    out.metrics["invalid_rate"] =
        result.trace.events.empty() ? 0.0 : static_cast<double>(invalid) / static_cast<double>(result.trace.events.size());
    return out;
}

} // namespace

EvalOutcome EngineEvaluator::evaluate(const Candidate& c, std::uint64_t seed) const {
    const auto start = std::chrono::steady_clock::now();
    EvalOutcome out;
    try {
        if (const auto* ps = std::get_if<params::ParamSet>(&c.payload)) {
            if (ps->problem != problem_.problem) throw InvalidArgument("candidate targets " + ps->problem);
            if (problem_.problem == "hex") {
                out = run_engine(builtin::hex_triple(problem_.n, params::to_hex(*ps)), builtin::hex_fitness(), params_,
                                 seed);
            } else {
                out = run_engine(builtin::aci_triple(problem_.resolution, params::to_aci(*ps)), builtin::aci_fitness(),
                                 params_, seed);
            }
        } else {
            const auto& ext = std::get<ExternalPayload>(c.payload);
            protocol::InitParams init;
            init.problem = problem_.problem;
            init.n = problem_.n;
            init.resolution = problem_.resolution;
            init.seed = seed;
            auto session = protocol::RemoteSession::spawn(ext.launch, init, handshake_timeout);
            auto p = params_;
            p.workers = 1; // one session, strictly sequential
            if (problem_.problem == "hex") {
                out = run_engine(protocol::remote_hex_triple(session, p.per_call_timeout), builtin::hex_fitness(), p, seed);
            } else {
                out = run_engine(protocol::remote_aci_triple(session, p.per_call_timeout), builtin::aci_fitness(), p, seed);
            }
            session->shutdown();
        }
    } catch (const std::exception& e) {
        out.fitness.reset();
        out.reason = e.what();
    }
    out.metrics["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

basinhop::BasinHopParams default_eval_params(const std::string& problem) {
    basinhop::BasinHopParams p;
    p.R = 3;
    p.invalid_policy = basinhop::InvalidPolicy::discard;
    if (problem == "hex") {
        p.K = 10;
        p.schedule = basinhop::hex_table_schedule();
        p.per_call_timeout = std::chrono::minutes(5);
    } else if (problem == "aci") {
        p.K = 3;
        p.schedule = basinhop::aci_table_schedule();
        p.per_call_timeout = std::chrono::minutes(20);
    } else {
        throw InvalidArgument("unknown problem '" + problem + "'");
    }
    return p;
}

void EvolutionParams::check() const {
    if (n_elites < 1) throw InvalidArgument("n_elites must be at least 1");
    if (n_parents < 1 || n_parents > n_elites) throw InvalidArgument("need 1 <= n_parents <= n_elites");
    if (n_offspring < 1) throw InvalidArgument("n_offspring must be at least 1");
    if (generations < 0) throw InvalidArgument("generations must be non-negative");
}

std::string to_string(OffspringStatus s) {
    switch (s) {
    case OffspringStatus::inserted:
        return "inserted";
    case OffspringStatus::rejected:
        return "rejected";
    case OffspringStatus::discarded:
        return "discarded";
    case OffspringStatus::mutation_failed:
        return "mutation_failed";
    }
    return "rejected";
}

json OffspringRecord::to_json() const {
    return json{{"generation", generation},
                {"index", index},
                {"child_id", child_id},
                {"parent_ids", parent_ids},
                {"status", to_string(status)},
                {"fitness", fitness ? json(*fitness) : json(nullptr)},
                {"bin", bin ? json(*bin) : json(nullptr)},
                {"reason", reason}};
}

void GenerationReport::write_jsonl(std::ostream& out) const {
    for (const auto& r : offspring) out << r.to_json().dump() << '\n';
}

Candidate seed_archive(Archive& a, Payload reference, const Evaluator& eval, std::uint64_t seed) {
    Candidate c;
    c.id = "g0-ref";
    c.payload = std::move(reference);
    const auto outcome = eval.evaluate(c, derive_seed(seed, 0, 0));
    if (!outcome.fitness) throw Error("reference candidate is invalid: " + outcome.reason);
    c.fitness = outcome.fitness;
    c.metrics = outcome.metrics;
    a.insert(c);
    a.best_curve.push_back(*a.best()->fitness);
    return c;
}

GenerationReport step_generation(Archive& a, const EvolutionParams& p, MutationOperator& mutate,
                                 const Evaluator& eval, std::uint64_t seed) {
    p.check();
    if (a.empty()) throw InvalidArgument("step_generation: archive is empty");
    const int gen = a.generation + 1;
    const auto g = static_cast<std::uint64_t>(gen);

    const auto elites = select_elites(a, p.n_elites, derive_seed(seed, g, 0), p.selection);
    const auto stats = archive_stats(a);

    GenerationReport report;
    report.generation = gen;
    report.offspring.resize(p.n_offspring);
    std::vector<std::optional<Candidate>> children(p.n_offspring);

    // Mutation runs in order so that seeds and ids are reproducible.
    for (std::size_t i = 0; i < p.n_offspring; ++i) {
        auto& rec = report.offspring[i];
        rec.generation = gen;
        rec.index = i;
        rec.child_id = "g" + std::to_string(gen) + "-o" + std::to_string(i);

        auto rng = make_rng(derive_seed(seed, g, 1000 + i));
        std::vector<std::size_t> idx(elites.size());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        MutationContext ctx;
        for (std::size_t k = 0; k < p.n_parents; ++k) {
            const auto j = std::uniform_int_distribution<std::size_t>(k, idx.size() - 1)(rng);
            std::swap(idx[k], idx[j]);
            ctx.parents.push_back(elites[idx[k]]);
            rec.parent_ids.push_back(elites[idx[k]]->id);
        }
        ctx.stats = stats;
        ctx.child_id = rec.child_id;
        ctx.generation = gen;
        ctx.seed = derive_seed(seed, g, 2000 + i);

        try {
            Candidate c;
            c.id = rec.child_id;
            c.payload = mutate.mutate(ctx);
            c.generation = gen;
            c.parent_ids = rec.parent_ids;
            children[i] = std::move(c);
        } catch (const std::exception& e) {
            rec.status = OffspringStatus::mutation_failed;
            rec.reason = e.what();
            ++report.mutation_failures;
        }
    }

    std::vector<EvalOutcome> outcomes(p.n_offspring);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < p.n_offspring; i = next++) {
            if (children[i]) outcomes[i] = eval.evaluate(*children[i], derive_seed(seed, g, 3000 + i));
        }
    };
    const auto n_workers = static_cast<std::size_t>(std::clamp<int>(p.workers, 1, static_cast<int>(p.n_offspring)));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Single owner inserts in offspring order.
    for (std::size_t i = 0; i < p.n_offspring; ++i) {
        if (!children[i]) continue;
        auto& rec = report.offspring[i];
        ++report.births;
        auto& c = *children[i];
        c.metrics = outcomes[i].metrics;
        if (!outcomes[i].fitness) {
            rec.status = OffspringStatus::discarded;
            rec.reason = outcomes[i].reason;
            ++report.discards;
            continue;
        }
        c.fitness = outcomes[i].fitness;
        rec.fitness = c.fitness;
        const auto ins = a.insert(c);
        rec.bin = ins.bin;
        if (ins.inserted) {
            rec.status = OffspringStatus::inserted;
            ++report.inserts;
        } else {
            rec.status = OffspringStatus::rejected;
            rec.reason = ins.reason;
        }
    }

    a.generation = gen;
    report.best_fitness = *a.best()->fitness;
    a.best_curve.push_back(report.best_fitness);
    return report;
}

std::vector<double> run_evolution(Archive& a, const EvolutionParams& p, MutationOperator& mutate,
                                  const Evaluator& eval, std::uint64_t seed,
                                  const std::function<void(const GenerationReport&, const Archive&)>& on_generation) {
    p.check();
    for (int k = 0; k < p.generations; ++k) {
        const auto report = step_generation(a, p, mutate, eval, seed);
        if (on_generation) on_generation(report, a);
    }
    return a.best_curve;
}

} // namespace improvolve::evolution
