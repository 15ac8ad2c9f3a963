#pragma once

#include "improvolve/basinhop.hpp"
#include "improvolve/errors.hpp"
#include "improvolve/solution_io.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

/// JSON-lines request/response protocol that lets an external process act
/// as an operator triple.
///
///   -> {"id":1,"method":"init","params":{"problem":"hex","n":11,"seed":0}}
///   <- {"id":1,"result":{"ok":true}}
///
/// Methods: init, generate{seed}, improve{solution, deadline_ms},
/// perturb{solution, sigma, seed}, shutdown{}.
namespace improvolve::protocol {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

enum class ErrorCode {
    spawn_failed,
    timeout,
    malformed_message, ///< not JSON, not an object, missing fields
    wrong_id,
    process_exited,
    remote_error,      ///< the peer replied with an error object
    decode_failed,     ///< result is not a well-formed solution
    closed,
};

std::string to_string(ErrorCode code);

class ProtocolError : public Error {
public:
    ProtocolError(ErrorCode code, const std::string& message);
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

/// Error codes carried in response error objects.
namespace wire {
inline constexpr int parse_error = -32700;
inline constexpr int invalid_request = -32600;
inline constexpr int method_not_found = -32601;
inline constexpr int invalid_params = -32602;
inline constexpr int operator_failed = 1;
inline constexpr int not_initialized = 2;
} // namespace wire

json make_request(long long id, const std::string& method, json params);
json make_result(long long id, json result);
json make_error(const json& id, int code, const std::string& message);

struct Response {
    long long id = 0;
    std::optional<json> result;
    int error_code = 0;
    std::string error_message;
};

/// Parses one response line; throws ProtocolError(malformed_message).
Response parse_response(const std::string& line);

/// Reassembles newline-terminated lines from arbitrary byte chunks.
class LineReader {
public:
    explicit LineReader(std::size_t max_line = std::size_t{256} << 20);
    void feed(const char* data, std::size_t size);
    void feed(const std::string& s) { feed(s.data(), s.size()); }
    std::optional<std::string> next();
    bool has_partial() const { return !buffer_.empty(); }

private:
    std::string buffer_;
    std::size_t max_line_;
};

/// Command line and working directory of an external candidate.
struct LaunchSpec {
    std::vector<std::string> command;
    std::filesystem::path working_dir;

    json to_json() const;
    static LaunchSpec from_json(const json& j);
    friend bool operator==(const LaunchSpec&, const LaunchSpec&) = default;
};

/// A child process with piped stdin/stdout. stderr is inherited.
class Subprocess {
public:
    /// Throws ProtocolError(spawn_failed) when the executable cannot be started.
    explicit Subprocess(const LaunchSpec& spec);
    ~Subprocess();
    Subprocess(const Subprocess&) = delete;
    Subprocess& operator=(const Subprocess&) = delete;

    void write_line(const std::string& line, Clock::time_point deadline);
    /// Next complete line; throws ProtocolError(timeout | process_exited).
    std::string read_line(Clock::time_point deadline);
    void kill();
    /// Waits for exit up to the deadline, then kills. Returns the exit code or -1.
    int wait(Clock::time_point deadline);
    bool running();

private:
    int pid_ = -1;
    int stdin_fd_ = -1;
    int stdout_fd_ = -1;
    std::optional<int> exit_code_;
    LineReader reader_;
};

struct InitParams {
    std::string problem = "hex";
    int n = 11;
    std::size_t resolution = 1024;
    std::uint64_t seed = 0;
    /// Optional operator parameters understood by the built-in server.
    std::optional<json> operator_params;
};

/// One strictly sequential request/response session with a candidate process.
class RemoteSession {
public:
    /// Starts the process and performs the init handshake.
    static std::shared_ptr<RemoteSession> spawn(const LaunchSpec& spec, const InitParams& init,
                                                std::chrono::milliseconds timeout);
    ~RemoteSession();

    io::Solution generate(std::uint64_t seed, Clock::time_point deadline);
    io::Solution improve(const io::Solution& x, Clock::time_point deadline);
    io::Solution perturb(const io::Solution& x, double sigma, std::uint64_t seed, Clock::time_point deadline);
    /// Sends shutdown and waits for a clean exit; returns the exit code.
    int shutdown(std::chrono::milliseconds timeout = std::chrono::seconds(5));

    bool closed() const { return closed_; }
    const InitParams& init_params() const { return init_; }
    /// Where large ACI payloads are spilled on the way out.
    std::filesystem::path spill_dir;

private:
    RemoteSession(const LaunchSpec& spec, InitParams init);
    json call(const std::string& method, json params, Clock::time_point deadline);
    io::Solution decode(const json& result);
    void fail();

    std::mutex mutex_;
    std::unique_ptr<Subprocess> process_;
    InitParams init_;
    long long next_id_ = 1;
    bool closed_ = false;
};

/// Operator triples backed by a session; calls without a deadline get `fallback`.
basinhop::OperatorTriple<hex::HexConfig> remote_hex_triple(std::shared_ptr<RemoteSession> session,
                                                           std::chrono::milliseconds fallback);
basinhop::OperatorTriple<aci::StepFunction> remote_aci_triple(std::shared_ptr<RemoteSession> session,
                                                              std::chrono::milliseconds fallback);

/// Serves the built-in operators over a stream pair until shutdown or EOF.
/// Returns the process exit code (0 after a clean shutdown).
int serve_builtin(std::istream& in, std::ostream& out);

} // namespace improvolve::protocol
