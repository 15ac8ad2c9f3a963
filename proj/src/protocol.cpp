#include "improvolve/protocol.hpp"

#include "improvolve/builtin_ops.hpp"
#include "improvolve/param_set.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

namespace improvolve::protocol {

std::string to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::spawn_failed:
        return "spawn_failed";
    case ErrorCode::timeout:
        return "timeout";
    case ErrorCode::malformed_message:
        return "malformed_message";
    case ErrorCode::wrong_id:
        return "wrong_id";
    case ErrorCode::process_exited:
        return "process_exited";
    case ErrorCode::remote_error:
        return "remote_error";
    case ErrorCode::decode_failed:
        return "decode_failed";
    case ErrorCode::closed:
        return "closed";
    }
    return "unknown";
}

ProtocolError::ProtocolError(ErrorCode code, const std::string& message)
    : Error(to_string(code) + ": " + message), code_(code) {}

json make_request(long long id, const std::string& method, json params) {
    return json{{"id", id}, {"method", method}, {"params", std::move(params)}};
}

json make_result(long long id, json result) { return json{{"id", id}, {"result", std::move(result)}}; }

json make_error(const json& id, int code, const std::string& message) {
    return json{{"id", id}, {"error", {{"code", code}, {"message", message}}}};
}

Response parse_response(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception&) {
        const auto shown = line.size() > 80 ? line.substr(0, 80) + "..." : line;
        throw ProtocolError(ErrorCode::malformed_message, "not JSON: " + shown);
    }
    if (!j.is_object()) throw ProtocolError(ErrorCode::malformed_message, "response is not an object");
    if (!j.contains("id") || !j.at("id").is_number_integer()) {
        throw ProtocolError(ErrorCode::malformed_message, "response without integer id");
    }
    Response r;
    r.id = j.at("id").get<long long>();
    const bool has_result = j.contains("result");
    const bool has_error = j.contains("error");
    if (has_result == has_error) {
        throw ProtocolError(ErrorCode::malformed_message, "response needs exactly one of result/error");
    }
    if (has_result) {
        r.result = j.at("result");
        return r;
    }
    const json& e = j.at("error");
    if (!e.is_object() || !e.contains("code") || !e.at("code").is_number_integer()) {
        throw ProtocolError(ErrorCode::malformed_message, "error object without integer code");
    }
    r.error_code = e.at("code").get<int>();
    if (e.contains("message") && e.at("message").is_string()) r.error_message = e.at("message").get<std::string>();
    return r;
}

LineReader::LineReader(std::size_t max_line) : max_line_(max_line) {}

void LineReader::feed(const char* data, std::size_t size) {
    buffer_.append(data, size);
    if (buffer_.size() > max_line_ && buffer_.find('\n') == std::string::npos) {
        buffer_.clear();
        throw ProtocolError(ErrorCode::malformed_message, "line exceeds size limit");
    }
}

std::optional<std::string> LineReader::next() {
    const auto pos = buffer_.find('\n');
    if (pos == std::string::npos) return std::nullopt;
    std::string line = buffer_.substr(0, pos);
    buffer_.erase(0, pos + 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

json LaunchSpec::to_json() const { return json{{"command", command}, {"working_dir", working_dir.string()}}; }

LaunchSpec LaunchSpec::from_json(const json& j) {
    LaunchSpec s;
    s.command = j.at("command").get<std::vector<std::string>>();
    if (j.contains("working_dir")) s.working_dir = j.at("working_dir").get<std::string>();
    if (s.command.empty()) throw InvalidArgument("launch spec: empty command");
    return s;
}

namespace {

void ignore_sigpipe() {
    static const bool once = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)once;
}

int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return static_cast<int>(std::clamp<long long>(left, 0, 1000 * 60 * 60));
}

void close_fd(int& fd) {
    if (fd >= 0) ::close(fd);
    fd = -1;
}

} // namespace

Subprocess::Subprocess(const LaunchSpec& spec) {
    ignore_sigpipe();
    if (spec.command.empty()) throw ProtocolError(ErrorCode::spawn_failed, "empty command");

    int in_pipe[2];
    int out_pipe[2];
    int err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw ProtocolError(ErrorCode::spawn_failed, std::strerror(errno));
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw ProtocolError(ErrorCode::spawn_failed, std::strerror(errno));
    }
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
        throw ProtocolError(ErrorCode::spawn_failed, std::strerror(errno));
    }

    // Everything the child needs is prepared before fork.
    std::vector<char*> argv;
    for (const auto& a : spec.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const std::string cwd = spec.working_dir.string();

    const pid_t pid = ::fork();
    if (pid < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
        throw ProtocolError(ErrorCode::spawn_failed, std::strerror(errno));
    }
    if (pid == 0) {
        ::dup2(in_pipe[0], 0);
        ::dup2(out_pipe[1], 1);
        int err = 0;
        if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) {
            err = errno;
        } else {
            ::execvp(argv[0], argv.data());
            err = errno;
        }
        [[maybe_unused]] auto w = ::write(err_pipe[1], &err, sizeof err);
        ::_exit(127);
    }

    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    pid_ = pid;
    stdin_fd_ = in_pipe[1];
    stdout_fd_ = out_pipe[0];

    int child_errno = 0;
    ssize_t got;
    do {
        got = ::read(err_pipe[0], &child_errno, sizeof child_errno);
    } while (got < 0 && errno == EINTR);
    ::close(err_pipe[0]);
    if (got > 0) {
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
        close_fd(stdin_fd_);
        close_fd(stdout_fd_);
        throw ProtocolError(ErrorCode::spawn_failed, spec.command.front() + ": " + std::strerror(child_errno));
    }
    ::fcntl(stdin_fd_, F_SETFL, ::fcntl(stdin_fd_, F_GETFL) | O_NONBLOCK);
}

Subprocess::~Subprocess() {
    close_fd(stdin_fd_);
    close_fd(stdout_fd_);
    if (pid_ > 0 && !exit_code_) kill();
}

bool Subprocess::running() {
    if (pid_ <= 0 || exit_code_) return false;
    int status = 0;
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
        exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        return false;
    }
    return true;
}

void Subprocess::write_line(const std::string& line, Clock::time_point deadline) {
    std::string data = line;
    data.push_back('\n');
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t w = ::write(stdin_fd_, data.data() + off, data.size() - off);
        if (w > 0) {
            off += static_cast<std::size_t>(w);
            continue;
        }
        if (w < 0 && errno == EINTR) continue;
        if (w < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
            pollfd p{stdin_fd_, POLLOUT, 0};
            const int ms = remaining_ms(deadline);
            if (ms == 0 || ::poll(&p, 1, ms) == 0) throw ProtocolError(ErrorCode::timeout, "writing request");
            continue;
        }
        throw ProtocolError(ErrorCode::process_exited, "peer closed its input");
    }
}

std::string Subprocess::read_line(Clock::time_point deadline) {
    char buf[1 << 16];
    for (;;) {
        if (auto line = reader_.next()) return *line;
        pollfd p{stdout_fd_, POLLIN, 0};
        const int ms = remaining_ms(deadline);
        const int ready = ms == 0 ? 0 : ::poll(&p, 1, ms);
        if (ready < 0 && errno == EINTR) continue;
        if (ready <= 0) throw ProtocolError(ErrorCode::timeout, "waiting for response");
        const ssize_t r = ::read(stdout_fd_, buf, sizeof buf);
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) throw ProtocolError(ErrorCode::process_exited, "peer closed its output");
        reader_.feed(buf, static_cast<std::size_t>(r));
    }
}

void Subprocess::kill() {
    if (pid_ <= 0 || exit_code_) return;
    ::kill(pid_, SIGKILL);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    exit_code_ = -1;
}

int Subprocess::wait(Clock::time_point deadline) {
    while (running()) {
        if (Clock::now() >= deadline) {
            kill();
            return -1;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return exit_code_.value_or(-1);
}

RemoteSession::RemoteSession(const LaunchSpec& spec, InitParams init)
    : process_(std::make_unique<Subprocess>(spec)), init_(std::move(init)) {
    spill_dir = std::filesystem::temp_directory_path() / "improvolve-wire";
}

RemoteSession::~RemoteSession() {
    if (process_) process_->kill();
}

std::shared_ptr<RemoteSession> RemoteSession::spawn(const LaunchSpec& spec, const InitParams& init,
                                                    std::chrono::milliseconds timeout) {
    if (init.problem != "hex" && init.problem != "aci") {
        throw InvalidArgument("unknown problem '" + init.problem + "'");
    }
    std::shared_ptr<RemoteSession> s(new RemoteSession(spec, init));
    json params{{"problem", init.problem}, {"seed", init.seed}};
    if (init.problem == "hex") {
        params["n"] = init.n;
    } else {
        params["resolution"] = init.resolution;
    }
    if (init.operator_params) params["operator_params"] = *init.operator_params;
    s->call("init", std::move(params), Clock::now() + timeout);
    return s;
}

void RemoteSession::fail() {
    closed_ = true;
    if (process_) process_->kill();
}

json RemoteSession::call(const std::string& method, json params, Clock::time_point deadline) {
    std::lock_guard lock(mutex_);
    if (closed_) throw ProtocolError(ErrorCode::closed, "session is closed");
    const long long id = next_id_++;
    Response r;
    try {
        process_->write_line(make_request(id, method, std::move(params)).dump(), deadline);
        r = parse_response(process_->read_line(deadline));
    } catch (const ProtocolError&) {
        fail();
        throw;
    }
    if (r.id != id) {
        fail();
        throw ProtocolError(ErrorCode::wrong_id,
                            "expected id " + std::to_string(id) + ", got " + std::to_string(r.id));
    }
    if (!r.result) {
        throw ProtocolError(ErrorCode::remote_error,
                            method + " failed (" + std::to_string(r.error_code) + "): " + r.error_message);
    }
    return *r.result;
}

io::Solution RemoteSession::decode(const json& result) {
    try {
        if (init_.problem == "hex") {
            auto c = io::hex_from_json(result, init_.n);
            hex::check_well_formed(c);
            return c;
        }
        auto f = io::aci_from_json(result);
        aci::check_valid(f.values);
        return f;
    } catch (const std::exception& e) {
        // A peer that sends ill-formed solutions is not trusted again.
        std::lock_guard lock(mutex_);
        fail();
        throw ProtocolError(ErrorCode::decode_failed, e.what());
    }
}

io::Solution RemoteSession::generate(std::uint64_t seed, Clock::time_point deadline) {
    return decode(call("generate", json{{"seed", seed}}, deadline));
}

io::Solution RemoteSession::improve(const io::Solution& x, Clock::time_point deadline) {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return decode(call("improve", json{{"solution", io::to_wire(x, spill_dir)}, {"deadline_ms", std::max<long long>(ms, 0)}},
                       deadline));
}

io::Solution RemoteSession::perturb(const io::Solution& x, double sigma, std::uint64_t seed,
                                    Clock::time_point deadline) {
    return decode(
        call("perturb", json{{"solution", io::to_wire(x, spill_dir)}, {"sigma", sigma}, {"seed", seed}}, deadline));
}

int RemoteSession::shutdown(std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    try {
        call("shutdown", json::object(), deadline);
    } catch (const ProtocolError&) {
        fail();
        return -1;
    }
    std::lock_guard lock(mutex_);
    closed_ = true;
    return process_->wait(deadline);
}

namespace {

template <class S>
basinhop::OperatorTriple<S> remote_triple(std::shared_ptr<RemoteSession> session, std::chrono::milliseconds fallback) {
    auto resolve = [fallback](basinhop::Deadline d) { return d.value_or(Clock::now() + fallback); };
    basinhop::OperatorTriple<S> ops;
    ops.generate = [session, resolve](std::uint64_t seed, basinhop::Deadline d) {
        return std::get<S>(session->generate(seed, resolve(d)));
    };
    ops.improve = [session, resolve](const S& x, basinhop::Deadline d) {
        return std::get<S>(session->improve(x, resolve(d)));
    };
    ops.perturb = [session, resolve](const S& x, double sigma, std::uint64_t seed, basinhop::Deadline d) {
        return std::get<S>(session->perturb(x, sigma, seed, resolve(d)));
    };
    return ops;
}

} // namespace

basinhop::OperatorTriple<hex::HexConfig> remote_hex_triple(std::shared_ptr<RemoteSession> session,
                                                           std::chrono::milliseconds fallback) {
    if (session->init_params().problem != "hex") throw InvalidArgument("session is not serving hex");
    return remote_triple<hex::HexConfig>(std::move(session), fallback);
}

basinhop::OperatorTriple<aci::StepFunction> remote_aci_triple(std::shared_ptr<RemoteSession> session,
                                                              std::chrono::milliseconds fallback) {
    if (session->init_params().problem != "aci") throw InvalidArgument("session is not serving aci");
    return remote_triple<aci::StepFunction>(std::move(session), fallback);
}

namespace {

// Request-level failure that becomes an error response.
struct RequestError {
    int code;
    std::string message;
};

struct ServerState {
    std::string problem;
    int n = 0;
    std::size_t resolution = 0;
    std::optional<basinhop::OperatorTriple<hex::HexConfig>> hex_ops;
    std::optional<basinhop::OperatorTriple<aci::StepFunction>> aci_ops;
    std::filesystem::path spill_dir = std::filesystem::temp_directory_path() / "improvolve-wire";
};

const json& param(const json& params, const char* key) {
    if (!params.contains(key)) throw RequestError{wire::invalid_params, std::string("missing param '") + key + "'"};
    return params.at(key);
}

std::uint64_t seed_param(const json& params) {
    const json& s = param(params, "seed");
    if (!s.is_number_integer()) throw RequestError{wire::invalid_params, "'seed' must be an integer"};
    return s.get<std::uint64_t>();
}

json handle_init(ServerState& st, const json& params) {
    const json& problem = param(params, "problem");
    if (problem == "hex") {
        const json& n = param(params, "n");
        if (!n.is_number_integer() || n.get<long long>() < 1 || n.get<long long>() > hex::kMaxHexagons) {
            throw RequestError{wire::invalid_params, "'n' out of range"};
        }
        hex::OperatorParams op;
        if (params.contains("operator_params")) op = params::to_hex(params::from_json(params.at("operator_params")));
        st = ServerState{};
        st.problem = "hex";
        st.n = n.get<int>();
        st.hex_ops = builtin::hex_triple(st.n, op);
    } else if (problem == "aci") {
        const json& r = param(params, "resolution");
        if (!r.is_number_integer() || r.get<long long>() < 16) {
            throw RequestError{wire::invalid_params, "'resolution' must be an integer >= 16"};
        }
        aci::OperatorParams op;
        if (params.contains("operator_params")) op = params::to_aci(params::from_json(params.at("operator_params")));
        st = ServerState{};
        st.problem = "aci";
        st.resolution = r.get<std::size_t>();
        st.aci_ops = builtin::aci_triple(st.resolution, op);
    } else {
        throw RequestError{wire::invalid_params, "unknown problem " + problem.dump()};
    }
    return json{{"ok", true}};
}

basinhop::Deadline deadline_param(const json& params) {
    if (!params.contains("deadline_ms")) return std::nullopt;
    const json& d = params.at("deadline_ms");
    if (!d.is_number()) throw RequestError{wire::invalid_params, "'deadline_ms' must be a number"};
    return Clock::now() + std::chrono::milliseconds(static_cast<long long>(d.get<double>()));
}

double sigma_param(const json& params) {
    const json& s = param(params, "sigma");
    if (!s.is_number() || !(s.get<double>() > 0.0)) throw RequestError{wire::invalid_params, "'sigma' must be > 0"};
    return s.get<double>();
}

json handle(ServerState& st, const std::string& method, const json& params) {
    if (method == "init") return handle_init(st, params);
    if (method != "generate" && method != "improve" && method != "perturb") {
        throw RequestError{wire::method_not_found, "unknown method '" + method + "'"};
    }
    if (st.problem.empty()) throw RequestError{wire::not_initialized, "init has not been called"};

    try {
        if (st.hex_ops) {
            const auto& ops = *st.hex_ops;
            if (method == "generate") return io::to_json(ops.generate(seed_param(params), std::nullopt));
            const auto x = io::hex_from_json(param(params, "solution"), st.n);
            hex::check_well_formed(x);
            if (method == "improve") return io::to_json(ops.improve(x, deadline_param(params)));
            return io::to_json(ops.perturb(x, sigma_param(params), seed_param(params), std::nullopt));
        }
        const auto& ops = *st.aci_ops;
        if (method == "generate") return io::to_wire(ops.generate(seed_param(params), std::nullopt), st.spill_dir);
        const auto x = io::aci_from_json(param(params, "solution"));
        aci::check_valid(x.values);
        if (method == "improve") return io::to_wire(ops.improve(x, deadline_param(params)), st.spill_dir);
        return io::to_wire(ops.perturb(x, sigma_param(params), seed_param(params), std::nullopt), st.spill_dir);
    } catch (const MalformedSolution& e) {
        throw RequestError{wire::invalid_params, e.what()};
    }
}

} // namespace

int serve_builtin(std::istream& in, std::ostream& out) {
    ServerState st;
    std::string line;
    auto send = [&](const json& j) { out << j.dump() << '\n' << std::flush; };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        json req;
        try {
            req = json::parse(line);
        } catch (const json::exception& e) {
            send(make_error(nullptr, wire::parse_error, e.what()));
            continue;
        }
        if (!req.is_object() || !req.contains("id") || !req.contains("method") || !req.at("method").is_string()) {
            send(make_error(req.is_object() && req.contains("id") ? req.at("id") : json(nullptr),
                            wire::invalid_request, "request needs id and method"));
            continue;
        }
        const json id = req.at("id");
        const auto method = req.at("method").get<std::string>();
        const json params = req.contains("params") ? req.at("params") : json::object();
        if (!params.is_object()) {
            send(make_error(id, wire::invalid_params, "params must be an object"));
            continue;
        }
        if (method == "shutdown") {
            send(json{{"id", id}, {"result", {{"ok", true}}}});
            return 0;
        }
        try {
            send(json{{"id", id}, {"result", handle(st, method, params)}});
        } catch (const RequestError& e) {
            send(make_error(id, e.code, e.message));
        } catch (const InvalidArgument& e) {
            send(make_error(id, wire::invalid_params, e.what()));
        } catch (const std::exception& e) {
            send(make_error(id, wire::operator_failed, e.what()));
        }
    }
    return 1;
}

} // namespace improvolve::protocol
