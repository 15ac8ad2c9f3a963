#include "improvolve/mutation_service.hpp"

#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

using namespace improvolve;
using namespace improvolve::mutation;

namespace {

// Chat-completions stand-in on a random localhost port.
class MockService {
public:
    explicit MockService(std::string reply) : reply_(std::move(reply)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            last_body = json::parse(req.body);
            last_auth = req.get_header_value("Authorization");
            ++calls;
            if (reply_ == "500") {
                res.status = 500;
                return;
            }
            if (reply_ == "not json") {
                res.set_content("<html>", "text/html");
                return;
            }
            const json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply_}}}}}}};
            res.set_content(body.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockService() {
        server_.stop();
        thread_.join();
    }

    EndpointConfig config() const {
        EndpointConfig c;
        c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
        c.model = "mock";
        c.timeout = std::chrono::seconds(10);
        return c;
    }

    json last_body;
    std::string last_auth;
    int calls = 0;

private:
    std::string reply_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

evolution::Candidate parent(const std::string& id, double fitness) {
    evolution::Candidate c;
    c.id = id;
    c.payload = evolution::ExternalPayload{{{"true"}, {}}, "class Improver:\n    pass\n"};
    c.fitness = fitness;
    c.metrics["invalid_rate"] = 0.0;
    return c;
}

evolution::MutationContext context(const std::vector<const evolution::Candidate*>& parents) {
    evolution::MutationContext ctx;
    ctx.parents = parents;
    ctx.child_id = "g2-o5";
    ctx.generation = 2;
    ctx.seed = 42;
    ctx.stats.occupancy = 2;
    return ctx;
}

std::filesystem::path scratch() {
    const auto dir = std::filesystem::temp_directory_path() / "improvolve-mutation-test";
    std::filesystem::remove_all(dir);
    return dir;
}

} // namespace

TEST_CASE("first fenced block") {
    CHECK(extract_first_code_block("text\n```python\nx = 1\n```\nmore ```\ny\n```") == std::string("x = 1\n"));
    CHECK(extract_first_code_block("```\nplain\n```") == std::string("plain\n"));
    CHECK_FALSE(extract_first_code_block("no code here"));
    CHECK_FALSE(extract_first_code_block("```python\nunterminated"));
}

TEST_CASE("chat body carries parents, context and constraints") {
    MutationRequest req{{"A = 1", "B = 2"}, "best fitness -3.93", interface_constraints("hex")};
    EndpointConfig cfg;
    cfg.model = "m";
    cfg.temperature = 0.7;
    const auto body = build_chat_body(req, cfg);
    CHECK(body["model"] == "m");
    CHECK(body["temperature"] == 0.7);
    REQUIRE(body["messages"].size() == 2);
    CHECK(body["messages"][0]["content"].get<std::string>().find("hex_num") != std::string::npos);
    const auto user = body["messages"][1]["content"].get<std::string>();
    CHECK(user.find("A = 1") != std::string::npos);
    CHECK(user.find("B = 2") != std::string::npos);
    CHECK(user.find("-3.93") != std::string::npos);
    CHECK(interface_constraints("aci").find("non-negative") != std::string::npos);
    CHECK_THROWS_AS(build_chat_body({}, cfg), InvalidArgument);
}

TEST_CASE("endpoint configuration") {
    const auto c = EndpointConfig::from_json(json{{"base_url", "http://h:1/v1"}, {"model", "x"}, {"timeout_s", 5}});
    CHECK(c.base_url == "http://h:1/v1");
    CHECK(c.timeout == std::chrono::seconds(5));
    CHECK(c.temperature == 1.0);
    CHECK_THROWS(EndpointConfig::from_json(json{{"model", "x"}}));
}

TEST_CASE("a fenced reply becomes an external candidate") {
    MockService svc("Here you go:\n```python\nclass Improver:\n    pass\n```\nEnjoy.");
    auto cfg = svc.config();
    cfg.api_key_env = "IMPROVOLVE_TEST_KEY";
    setenv("IMPROVOLVE_TEST_KEY", "sekrit", 1);
    const auto root = scratch();
    ServiceMutator m(cfg, {"hex", 11, 1024}, root, {"python3", "shim.py"});
    const auto a = parent("g1-o0", -3.95);
    const auto b = parent("g1-o1", -3.97);
    const auto payload = m.mutate(context({&a, &b}));

    const auto& ext = std::get<evolution::ExternalPayload>(payload);
    CHECK(ext.source == "class Improver:\n    pass\n");
    const auto file = root / "g2-o5" / "candidate.py";
    REQUIRE(std::filesystem::exists(file));
    std::stringstream text;
    text << std::ifstream(file).rdbuf();
    CHECK(text.str() == ext.source);
    CHECK(ext.launch.command == std::vector<std::string>{"python3", "shim.py", "--source", std::filesystem::absolute(file).string(),
                                                         "--problem", "hex", "--n", "11", "--seed", "42"});
    CHECK(protocol::LaunchSpec::from_json(json::parse(std::ifstream(root / "g2-o5" / "launch.json"))) == ext.launch);

    CHECK(svc.calls == 1);
    CHECK(svc.last_auth == "Bearer sekrit");
    CHECK(svc.last_body["model"] == "mock");
    CHECK(svc.last_body["messages"][1]["content"].get<std::string>().find("g1-o1") != std::string::npos);
}

TEST_CASE("aci candidates get the resolution flag") {
    MockService svc("```\npass\n```");
    ServiceMutator m(svc.config(), {"aci", 11, 2048}, scratch(), {"shim"});
    const auto a = parent("p", 0.9);
    const auto cmd = std::get<evolution::ExternalPayload>(m.mutate(context({&a}))).launch.command;
    CHECK(std::find(cmd.begin(), cmd.end(), "--resolution") != cmd.end());
    CHECK(std::find(cmd.begin(), cmd.end(), "2048") != cmd.end());
}

TEST_CASE("service failures are classified and counted") {
    const auto a = parent("p", -4.0);
    {
        MockService svc("I would rather not write code today.");
        ServiceMutator m(svc.config(), {"hex", 11, 1024}, scratch(), {"shim"});
        try {
            m.mutate(context({&a}));
            FAIL("expected a ServiceError");
        } catch (const ServiceError& e) {
            CHECK(e.kind() == FailureKind::no_code_block);
        }
        CHECK(m.failures[FailureKind::no_code_block] == 1);
        CHECK_FALSE(std::filesystem::exists(scratch() / "g2-o5"));
    }
    {
        MockService svc("not json");
        try {
            mutation_service_call({{"x"}, "", ""}, svc.config());
            FAIL("expected a ServiceError");
        } catch (const ServiceError& e) {
            CHECK(e.kind() == FailureKind::bad_response);
        }
    }
    {
        MockService svc("500");
        try {
            mutation_service_call({{"x"}, "", ""}, svc.config());
            FAIL("expected a ServiceError");
        } catch (const ServiceError& e) {
            CHECK(e.kind() == FailureKind::network);
        }
    }
    EndpointConfig dead;
    dead.base_url = "http://127.0.0.1:1/v1";
    dead.timeout = std::chrono::seconds(2);
    try {
        mutation_service_call({{"x"}, "", ""}, dead);
        FAIL("expected a ServiceError");
    } catch (const ServiceError& e) {
        CHECK(e.kind() == FailureKind::network);
    }
}

TEST_CASE("evolution survives a service that never returns code") {
    MockService svc("no fence");
    ServiceMutator m(svc.config(), {"hex", 3, 1024}, scratch(), {"shim"});
    struct Fixed : evolution::Evaluator {
        evolution::EvalOutcome evaluate(const evolution::Candidate&, std::uint64_t) const override { return {-2.0, {}, {}}; }
    } eval;
    evolution::Archive archive(-3.0, -1.5);
    evolution::seed_archive(archive, evolution::ExternalPayload{{{"true"}, {}}, "seed"}, eval, 0);
    const auto report = evolution::step_generation(archive, {}, m, eval, 0);
    CHECK(report.mutation_failures == 10);
    CHECK(report.births == 0);
    CHECK(svc.calls == 10);
    CHECK(archive.occupancy() == 1);
}
