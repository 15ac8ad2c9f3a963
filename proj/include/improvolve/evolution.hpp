#pragma once

#include "improvolve/basinhop.hpp"
#include "improvolve/param_set.hpp"
#include "improvolve/protocol.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

/// MAP-Elites over operator candidates, with fitness as the only descriptor.
namespace improvolve::evolution {

using nlohmann::json;

enum class CandidateKind { builtin_parametric, external_process };

std::string to_string(CandidateKind k);

struct ExternalPayload {
    protocol::LaunchSpec launch;
    /// Program text handed to the mutation service as parent source.
    std::string source;
};

using Payload = std::variant<params::ParamSet, ExternalPayload>;

struct Candidate {
    std::string id;
    Payload payload;
    std::optional<double> fitness;
    int generation = 0;
    std::vector<std::string> parent_ids;
    std::map<std::string, double> metrics;

    CandidateKind kind() const;
    json to_json() const;
    static Candidate from_json(const json& j);
};

inline constexpr std::size_t kArchiveBins = 150;

struct InsertResult {
    bool inserted = false;
    std::size_t bin = 0;
    std::string reason;
};

class Archive {
public:
    Archive(double lo, double hi);

    double lo() const { return lo_; }
    double hi() const { return hi_; }
    std::size_t bin_index(double fitness) const;

    /// Strict improvement over the incumbent is required to replace it.
    InsertResult insert(const Candidate& c);

    const std::optional<Candidate>& bin(std::size_t i) const { return bins_.at(i); }
    std::vector<const Candidate*> occupants() const;
    std::size_t occupancy() const;
    bool empty() const { return occupancy() == 0; }
    const Candidate* best() const;

    int generation = 0;
    /// Best fitness after each completed generation (generation 0 included).
    std::vector<double> best_curve;

    json to_json() const;
    static Archive from_json(const json& j);
    void save(const std::filesystem::path& path) const;
    static Archive load(const std::filesystem::path& path);

private:
    double lo_;
    double hi_;
    std::array<std::optional<Candidate>, kArchiveBins> bins_;
};

/// Bin ranges: hex n=11 spans (-6.0, -3.85), aci spans (0.5, 1.0).
std::pair<double, double> default_fitness_range(const std::string& problem);

enum class Selection { shifted_proportional, rank_proportional };

Selection selection_from_string(const std::string& s);

/// Sampling weights over `fitness` (all equal falls back to uniform).
std::vector<double> selection_weights(const std::vector<double>& fitness, Selection scheme);

/// n draws with replacement.
std::vector<const Candidate*> select_elites(const Archive& a, std::size_t n, std::uint64_t seed,
                                           Selection scheme = Selection::shifted_proportional);

struct ArchiveStats {
    std::size_t occupancy = 0;
    double best = 0.0;
    double mean = 0.0;
    double worst = 0.0;
};

ArchiveStats archive_stats(const Archive& a);

struct MutationContext {
    std::vector<const Candidate*> parents;
    ArchiveStats stats;
    std::string child_id;
    int generation = 0;
    std::uint64_t seed = 0;

    /// Plain-text block: parent payloads and metrics plus archive statistics.
    std::string describe() const;
};

class MutationFailed : public Error {
public:
    using Error::Error;
};

class MutationOperator {
public:
    virtual ~MutationOperator() = default;
    /// Throws MutationFailed (or any exception) to skip the offspring.
    virtual Payload mutate(const MutationContext& ctx) = 0;
};

/// Field-wise parent mixing plus multiplicative log-normal noise.
params::ParamSet mutate_builtin(const std::vector<const params::ParamSet*>& parents, std::uint64_t seed,
                                bool zero_variance = false);

class BuiltinMutator : public MutationOperator {
public:
    explicit BuiltinMutator(bool zero_variance = false) : zero_variance_(zero_variance) {}
    Payload mutate(const MutationContext& ctx) override;

private:
    bool zero_variance_;
};

struct ProblemSpec {
    std::string problem = "hex";
    int n = 11;
    std::size_t resolution = 1024;
};

struct EvalOutcome {
    std::optional<double> fitness;
    std::string reason;
    std::map<std::string, double> metrics;
};

/// Scores a candidate by running the basin-hopping engine on it.
class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual EvalOutcome evaluate(const Candidate& c, std::uint64_t seed) const = 0;
};

class EngineEvaluator : public Evaluator {
public:
    EngineEvaluator(ProblemSpec problem, basinhop::BasinHopParams eval_params);
    EvalOutcome evaluate(const Candidate& c, std::uint64_t seed) const override;

    std::chrono::milliseconds handshake_timeout{std::chrono::seconds(30)};

private:
    ProblemSpec problem_;
    basinhop::BasinHopParams params_;
};

/// Reduced-R evaluation settings used while evolving.
basinhop::BasinHopParams default_eval_params(const std::string& problem);

struct EvolutionParams {
    std::size_t n_elites = 6;
    std::size_t n_parents = 2;
    std::size_t n_offspring = 10;
    int generations = 10;
    Selection selection = Selection::shifted_proportional;
    /// Concurrent offspring evaluations.
    int workers = 1;

    void check() const;
};

enum class OffspringStatus { inserted, rejected, discarded, mutation_failed };

std::string to_string(OffspringStatus s);

struct OffspringRecord {
    int generation = 0;
    std::size_t index = 0;
    std::string child_id;
    std::vector<std::string> parent_ids;
    OffspringStatus status = OffspringStatus::rejected;
    std::optional<double> fitness;
    std::optional<std::size_t> bin;
    std::string reason;

    json to_json() const;
};

struct GenerationReport {
    int generation = 0;
    std::vector<OffspringRecord> offspring;
    std::size_t births = 0;
    std::size_t discards = 0;
    std::size_t inserts = 0;
    std::size_t mutation_failures = 0;
    double best_fitness = 0.0;

    /// One offspring per line.
    void write_jsonl(std::ostream& out) const;
};

/// Evaluates and inserts the generation-0 candidate. Throws Error when it is invalid.
Candidate seed_archive(Archive& a, Payload reference, const Evaluator& eval, std::uint64_t seed);

GenerationReport step_generation(Archive& a, const EvolutionParams& p, MutationOperator& mutate,
                                 const Evaluator& eval, std::uint64_t seed);

/// Runs p.generations further generations, calling on_generation after each.
std::vector<double> run_evolution(Archive& a, const EvolutionParams& p, MutationOperator& mutate,
                                  const Evaluator& eval, std::uint64_t seed,
                                  const std::function<void(const GenerationReport&, const Archive&)>& on_generation = {});

} // namespace improvolve::evolution
