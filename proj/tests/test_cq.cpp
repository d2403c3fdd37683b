#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "trellis/rt/cq.hpp"

using namespace trellis;

namespace {

struct CqHarness {
    std::vector<std::pair<std::string, std::string>> proposed;  // (config, cmd id)
    std::set<std::string> dead;
    std::vector<std::pair<std::string, bool>> finished;  // (key, ok)

    CommandQueue make(CommandQueueOptions opt = {}) {
        CommandQueue::Hooks hooks;
        hooks.propose = [this](const ConfigId& c, const Command& cmd) {
            proposed.emplace_back(c.v, cmd.id);
        };
        hooks.configDead = [this](const ConfigId& c) { return dead.count(c.v) != 0; };
        hooks.done = [this](const std::string& key, bool ok, int64_t) {
            finished.emplace_back(key, ok);
        };
        return CommandQueue(NodeId{"n1"}, hooks, opt);
    }
};

}  // namespace

TEST_CASE("commands aim at the newest live ready configuration") {
    CqHarness h;
    auto cq = h.make();
    cq.on_ready(ConfigId{"C0"});
    cq.on_ready(ConfigId{"C1"});

    cq.submit("k", "payload", 0);
    REQUIRE(h.proposed.size() == 1);
    CHECK(h.proposed[0] == std::pair<std::string, std::string>{"C1", "k.a1"});

    cq.on_learned("k.a1");
    CHECK(h.finished == std::vector<std::pair<std::string, bool>>{{"k", true}});
    CHECK(cq.idle());
}

TEST_CASE("a ready configuration announced twice keeps its place") {
    CqHarness h;
    auto cq = h.make();
    cq.on_ready(ConfigId{"C0"});
    cq.on_ready(ConfigId{"C1"});
    cq.on_ready(ConfigId{"C0"});
    cq.submit("k", "", 0);
    CHECK(h.proposed[0].first == "C1");
}

TEST_CASE("without a live target the entry parks and spends nothing") {
    CqHarness h;
    CommandQueueOptions opt;
    opt.attemptBudget = 2;
    auto cq = h.make(opt);

    cq.submit("k", "", 0);
    CHECK(h.proposed.empty());
    CHECK_FALSE(cq.idle());

    // ticks while nothing is ready burn no attempts
    for (int i = 1; i <= 10; ++i) cq.on_tick(i * 100);
    CHECK(h.proposed.empty());
    CHECK(h.finished.empty());

    cq.on_ready(ConfigId{"C0"});
    cq.on_tick(1100);
    REQUIRE(h.proposed.size() == 1);
    CHECK(h.proposed[0].second == "k.a1");
    cq.on_learned("k.a1");
    CHECK(h.finished == std::vector<std::pair<std::string, bool>>{{"k", true}});
}

TEST_CASE("a dead target is re-aimed on the next tick under a fresh id") {
    CqHarness h;
    auto cq = h.make();
    cq.on_ready(ConfigId{"C0"});
    cq.submit("k", "", 0);
    REQUIRE(h.proposed.size() == 1);
    CHECK(h.proposed[0].first == "C0");

    h.dead.insert("C0");
    cq.on_ready(ConfigId{"C1"});
    cq.on_tick(10);  // well before the retry timeout: death triggers the retry
    REQUIRE(h.proposed.size() == 2);
    CHECK(h.proposed[1] == std::pair<std::string, std::string>{"C1", "k.a2"});

    // the stale attempt answering later is ignored once the key resolved
    cq.on_learned("k.a2");
    cq.on_learned("k.a1");
    CHECK(h.finished == std::vector<std::pair<std::string, bool>>{{"k", true}});
}

TEST_CASE("slow replies retry after the timeout") {
    CqHarness h;
    CommandQueueOptions opt;
    opt.retryTimeoutMs = 500;
    auto cq = h.make(opt);
    cq.on_ready(ConfigId{"C0"});
    cq.submit("k", "", 0);
    cq.on_tick(499);
    CHECK(h.proposed.size() == 1);
    cq.on_tick(500);
    REQUIRE(h.proposed.size() == 2);
    CHECK(h.proposed[1].second == "k.a2");
}

TEST_CASE("the attempt budget caps retries and reports failure") {
    CqHarness h;
    CommandQueueOptions opt;
    opt.retryTimeoutMs = 100;
    opt.attemptBudget = 3;
    auto cq = h.make(opt);
    cq.on_ready(ConfigId{"C0"});
    cq.submit("k", "", 0);
    for (int i = 1; i <= 10; ++i) cq.on_tick(i * 100);

    CHECK(h.proposed.size() == 3);
    CHECK(h.finished == std::vector<std::pair<std::string, bool>>{{"k", false}});
    CHECK(cq.idle());
}

TEST_CASE("a duplicate in-flight key is the caller's bug") {
    CqHarness h;
    auto cq = h.make();
    cq.on_ready(ConfigId{"C0"});
    cq.submit("k", "", 0);
    CHECK_THROWS_AS(cq.submit("k", "", 1), WellFormednessError);
    // resolved keys may be reused
    cq.on_learned("k.a1");
    cq.submit("k", "", 2);
    CHECK(h.proposed.size() == 2);
}

TEST_CASE("learns for unknown command ids are ignored") {
    CqHarness h;
    auto cq = h.make();
    cq.on_learned("nobody.a1");
    CHECK(h.finished.empty());
}
