#include "improvolve/builtin_ops.hpp"
#include "improvolve/param_set.hpp"
#include "improvolve/protocol.hpp"

#include <doctest.h>

#include <sstream>

using namespace improvolve;
using namespace improvolve::protocol;
using namespace std::chrono_literals;

namespace {

const LaunchSpec kServer{{IMPROVOLVE_CLI, "serve"}, {}};

// A fake candidate written in shell: answers init, then whatever `after` prints.
LaunchSpec scripted(const std::string& after) {
    return {{"sh", "-c", R"(read l; echo '{"id":1,"result":{"ok":true}}'; read l; )" + after}, {}};
}

InitParams hex_init(int n) {
    InitParams p;
    p.problem = "hex";
    p.n = n;
    return p;
}

const json kSmallAci = {{"problem", "aci"}, {"values", {{"iterations_per_stage", 10}}}};

InitParams aci_init() {
    InitParams p;
    p.problem = "aci";
    p.resolution = 64;
    p.operator_params = kSmallAci;
    return p;
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const ProtocolError& e) {
        return e.code();
    }
    FAIL("expected a ProtocolError");
    return ErrorCode::closed;
}

std::vector<json> serve(const std::string& input) {
    std::istringstream in(input);
    std::ostringstream out;
    serve_builtin(in, out);
    std::vector<json> replies;
    std::istringstream lines(out.str());
    for (std::string l; std::getline(lines, l);) replies.push_back(json::parse(l));
    return replies;
}

auto far() { return Clock::now() + 120s; }

} // namespace

TEST_CASE("line reader reassembles arbitrary chunks") {
    const std::string stream = "{\"id\":1}\n{\"id\":2,\"result\":[1,2]}\n\npartial";
    for (std::size_t chunk : {1, 2, 3, 7, 100}) {
        LineReader r;
        std::vector<std::string> lines;
        for (std::size_t i = 0; i < stream.size(); i += chunk) {
            r.feed(stream.substr(i, chunk));
            while (auto l = r.next()) lines.push_back(*l);
        }
        CHECK(lines == std::vector<std::string>{"{\"id\":1}", "{\"id\":2,\"result\":[1,2]}", ""});
        CHECK(r.has_partial());
    }
    LineReader small(8);
    CHECK_THROWS_AS(small.feed("0123456789"), ProtocolError);
}

TEST_CASE("response parsing rejects malformed messages") {
    const auto ok = parse_response(R"({"id":4,"result":{"ok":true}})");
    CHECK(ok.id == 4);
    REQUIRE(ok.result);
    const auto err = parse_response(R"({"id":5,"error":{"code":1,"message":"boom"}})");
    CHECK_FALSE(err.result);
    CHECK(err.error_code == 1);
    CHECK(err.error_message == "boom");

    for (const char* bad : {"", "garbage", R"({"id":1,"result":)", "[1,2]", R"({"result":{}})", R"({"id":"x","result":{}})",
                            R"({"id":1})", R"({"id":1,"result":1,"error":{"code":1,"message":"m"}})",
                            R"({"id":1,"error":"oops"})", R"({"id":2,"result":{"values":[1e400]}})"}) {
        CHECK_MESSAGE(code_of([&] { parse_response(bad); }) == ErrorCode::malformed_message, bad);
    }
}

TEST_CASE("the built-in server answers protocol errors") {
    const auto r = serve("garbage\n"
                         R"({"id":1,"method":"generate","params":{"seed":0}})" "\n"
                         R"({"id":2,"method":"fly","params":{}})" "\n"
                         R"({"id":3,"method":"init","params":{"problem":"hex","n":0}})" "\n"
                         R"({"id":4,"method":"init","params":{"problem":"hex","n":2}})" "\n"
                         R"({"id":5,"method":"improve","params":{"solution":{"problem":"hex","n":3,"centers":[[0,0],[1,1],[2,2]],"angles":[0,0,0]}}})" "\n"
                         R"({"id":6,"method":"generate","params":{"seed":3}})" "\n"
                         R"({"id":7,"method":"shutdown","params":{}})" "\n");
    REQUIRE(r.size() == 8);
    CHECK(r[0]["error"]["code"] == wire::parse_error);
    CHECK(r[0]["id"].is_null());
    CHECK(r[1]["error"]["code"] == wire::not_initialized);
    CHECK(r[2]["error"]["code"] == wire::method_not_found);
    CHECK(r[3]["error"]["code"] == wire::invalid_params);
    CHECK(r[4]["result"]["ok"] == true);
    CHECK(r[5]["id"] == 5);
    CHECK(r[5].contains("error"));
    CHECK(io::hex_from_json(r[6]["result"], 2) == builtin::hex_triple(2).generate(3, std::nullopt));
    CHECK(r[7]["id"] == 7);

    std::istringstream eof("");
    std::ostringstream sink;
    CHECK(serve_builtin(eof, sink) == 1);
}

TEST_CASE("hex loopback is bit-exact with the in-process operators") {
    const int n = 4;
    auto session = RemoteSession::spawn(kServer, hex_init(n), 30s);
    const auto ops = builtin::hex_triple(n);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto local = ops.generate(seed, std::nullopt);
        const auto remote = std::get<hex::HexConfig>(session->generate(seed, far()));
        REQUIRE(remote == local);
        const auto improved = std::get<hex::HexConfig>(session->improve(remote, far()));
        CHECK(improved == ops.improve(local, far()));
        const auto kicked = std::get<hex::HexConfig>(session->perturb(improved, 0.1 * (seed + 1), seed, far()));
        CHECK(kicked == ops.perturb(improved, 0.1 * (seed + 1), seed, std::nullopt));
    }
    CHECK(session->shutdown() == 0);
    CHECK(session->closed());
}

TEST_CASE("aci loopback is bit-exact with the in-process operators") {
    auto session = RemoteSession::spawn(kServer, aci_init(), 30s);
    const auto ops = builtin::aci_triple(64, params::to_aci(params::from_json(kSmallAci)));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto local = ops.generate(seed, std::nullopt);
        const auto remote = std::get<aci::StepFunction>(session->generate(seed, far()));
        REQUIRE(remote == local);
        const auto kicked = std::get<aci::StepFunction>(session->perturb(remote, 0.5, seed, far()));
        CHECK(kicked == ops.perturb(local, 0.5, seed, std::nullopt));
        if (seed % 10 == 0) {
            const auto improved = std::get<aci::StepFunction>(session->improve(kicked, far()));
            CHECK(improved == ops.improve(kicked, far()));
        }
    }
    CHECK(session->shutdown() == 0);
}

TEST_CASE("a whole engine run through the protocol matches the in-process run") {
    basinhop::BasinHopParams p;
    p.K = 3;
    p.R = 2;
    p.schedule = basinhop::SigmaSchedule::explicit_list({1.0, 0.1, 0.01});
    p.per_call_timeout = 60s;
    auto session = RemoteSession::spawn(kServer, hex_init(5), 30s);
    const auto remote = basinhop::run_validation(remote_hex_triple(session, p.per_call_timeout), builtin::hex_fitness(), p, 6);
    const auto local = basinhop::run_validation(builtin::hex_triple(5), builtin::hex_fitness(), p, 6);
    CHECK(remote.fitness == local.fitness);
    CHECK(remote.best == local.best);
    session->shutdown();
}

TEST_CASE("hex n=1 improve through the protocol") {
    auto session = RemoteSession::spawn(kServer, hex_init(1), 30s);
    const hex::HexConfig off_centre{{{3, -2}}, {0.7}};
    const auto out = std::get<hex::HexConfig>(session->improve(off_centre, far()));
    CHECK(out == builtin::hex_triple(1).improve(off_centre, far()));
    CHECK(hex::side_length(out) <= 1.0 + 1e-6);
    session->shutdown();
}

TEST_CASE("misbehaving candidates") {
    CHECK(code_of([] { RemoteSession::spawn({{"/nonexistent/improvolve-candidate"}, {}}, hex_init(3), 5s); }) ==
          ErrorCode::spawn_failed);
    CHECK(code_of([] { RemoteSession::spawn({{"sh", "-c", "read l; echo garbage"}, {}}, hex_init(3), 5s); }) ==
          ErrorCode::malformed_message);
    CHECK(code_of([] {
              RemoteSession::spawn({{"sh", "-c", R"(read l; echo '{"id":99,"result":{"ok":true}}')"}, {}}, hex_init(3), 5s);
          }) == ErrorCode::wrong_id);
    CHECK(code_of([] { RemoteSession::spawn({{"sh", "-c", "exit 0"}, {}}, hex_init(3), 5s); }) == ErrorCode::process_exited);

    const auto t0 = Clock::now();
    CHECK(code_of([] { RemoteSession::spawn({{"sh", "-c", "sleep 20"}, {}}, hex_init(3), 300ms); }) == ErrorCode::timeout);
    CHECK(Clock::now() - t0 < 5s);

    // Two hexagons when three were promised.
    auto wrong_n = RemoteSession::spawn(
        scripted(R"(echo '{"id":2,"result":{"problem":"hex","n":2,"centers":[[0,0],[0,2]],"angles":[0,0]}}'; sleep 5)"),
        hex_init(3), 5s);
    CHECK(code_of([&] { wrong_n->generate(0, Clock::now() + 5s); }) == ErrorCode::decode_failed);
    CHECK(wrong_n->closed());
    CHECK(code_of([&] { wrong_n->generate(0, Clock::now() + 5s); }) == ErrorCode::closed);

    auto negative = RemoteSession::spawn(scripted(R"(echo '{"id":2,"result":{"problem":"aci","values":[1,-1]}}'; sleep 5)"),
                                         aci_init(), 5s);
    CHECK(code_of([&] { negative->generate(0, Clock::now() + 5s); }) == ErrorCode::decode_failed);

    auto remote_err = RemoteSession::spawn(
        scripted(R"(echo '{"id":2,"error":{"code":1,"message":"nope"}}'; read l; echo '{"id":3,"result":{"problem":"hex","n":3,"centers":[[0,0],[0,2],[0,4]],"angles":[0,0,0]}}'; sleep 5)"),
        hex_init(3), 5s);
    CHECK(code_of([&] { remote_err->generate(0, Clock::now() + 5s); }) == ErrorCode::remote_error);
    CHECK_FALSE(remote_err->closed());
    CHECK(std::get<hex::HexConfig>(remote_err->generate(1, Clock::now() + 5s)).size() == 3);

    auto dies = RemoteSession::spawn(scripted("exit 3"), hex_init(3), 5s);
    CHECK(code_of([&] { dies->generate(0, Clock::now() + 5s); }) == ErrorCode::process_exited);

    auto stalls = RemoteSession::spawn(scripted("sleep 20"), hex_init(3), 5s);
    CHECK(code_of([&] { stalls->generate(0, Clock::now() + 200ms); }) == ErrorCode::timeout);
    CHECK(stalls->closed());
}

TEST_CASE("a dying candidate yields invalid engine events") {
    basinhop::BasinHopParams p;
    p.K = 2;
    p.R = 1;
    p.schedule = basinhop::SigmaSchedule::explicit_list({1.0});
    p.per_call_timeout = 5s;
    auto skip_session = RemoteSession::spawn(scripted("exit 1"), hex_init(3), 5s);
    CHECK_THROWS_AS(basinhop::run_validation(remote_hex_triple(skip_session, 5s), builtin::hex_fitness(), p, 0),
                    basinhop::NoValidStart);

    p.invalid_policy = basinhop::InvalidPolicy::discard;
    auto discard_session = RemoteSession::spawn(scripted("exit 1"), hex_init(3), 5s);
    CHECK_THROWS_AS(basinhop::run_validation(remote_hex_triple(discard_session, 5s), builtin::hex_fitness(), p, 0),
                    basinhop::CandidateDiscarded);
}

TEST_CASE("large aci payloads travel by file reference") {
    InitParams init = aci_init();
    init.resolution = io::kInlineSampleLimit * 2;
    auto session = RemoteSession::spawn(kServer, init, 30s);
    session->spill_dir = std::filesystem::temp_directory_path() / "improvolve-spill-test";
    const auto f = std::get<aci::StepFunction>(session->generate(2, far()));
    CHECK(f.size() == io::kInlineSampleLimit * 2);
    const auto kicked = std::get<aci::StepFunction>(session->perturb(f, 0.01, 1, far()));
    CHECK(kicked.size() >= io::kInlineSampleLimit);
    session->shutdown();
}

TEST_CASE("launch specs serialize") {
    const LaunchSpec s{{"python3", "shim.py", "--n", "11"}, "/tmp/x"};
    CHECK(LaunchSpec::from_json(s.to_json()) == s);
    CHECK(to_string(ErrorCode::wrong_id) == "wrong_id");
}
