#include <algorithm>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trellis/checker.hpp"
#include "trellis/sim.hpp"

using namespace trellis;
using test::make_config;

namespace {

PlanOp propose_op(int64_t t, const std::string& node, const std::string& key) {
    PlanOp op;
    op.kind = PlanOp::Kind::Propose;
    op.t = t;
    op.node = NodeId{node};
    op.key = key;
    op.payload = "v-" + key;
    return op;
}

PlanOp recon_op(int64_t t, const std::string& node, std::vector<std::string> members) {
    PlanOp op;
    op.kind = PlanOp::Kind::Recon;
    op.t = t;
    op.node = NodeId{node};
    for (auto& m : members) op.members.push_back(NodeId{m});
    return op;
}

PlanOp crash_op(int64_t t, const std::string& node) {
    PlanOp op;
    op.kind = PlanOp::Kind::Crash;
    op.t = t;
    op.node = NodeId{node};
    return op;
}

Plan small_plan(uint64_t seed) {
    Plan p;
    p.seed = seed;
    p.nodes = {NodeId{"n1"}, NodeId{"n2"}, NodeId{"n3"}};
    p.c0 = make_config("C0", {"n1", "n2", "n3"});
    p.delay = DelayModel::uniform_ms(20, 80);
    p.tickMs = 5;
    p.gossipMs = 25;
    p.horizonMs = 60000;
    for (int i = 0; i < 12; ++i)
        p.ops.push_back(propose_op(100 + i * 30, i % 2 ? "n2" : "n1", "k" + std::to_string(i)));
    p.ops.push_back(recon_op(250, "n2", {"n1", "n2", "n3"}));
    return p;
}

std::vector<std::string> trunk_ids(const EntrySeq& s) {
    std::vector<std::string> out;
    for (const auto& e : s) out.push_back(e.entry_id());
    return out;
}

// Command ids carry a queue-internal attempt suffix ("k6.a2") that varies
// with delivery timing, so cross-backend comparisons look at the client key.
std::vector<std::string> trunk_keys(const EntrySeq& s) {
    std::vector<std::string> out;
    for (const auto& e : s) {
        std::string id = e.entry_id();
        if (!e.is_config()) {
            auto pos = id.rfind(".a");
            if (pos != std::string::npos) id.resize(pos);
        }
        out.push_back(std::move(id));
    }
    return out;
}

}  // namespace

TEST_CASE("a seeded run is deterministic down to the trace bytes") {
    Plan p = small_plan(42);
    p.traceNet = true;
    SimResult a = run_sim(p);
    SimResult b = run_sim(p);
    CHECK(a.quiescent);
    CHECK(a.trace.to_text() == b.trace.to_text());
    CHECK(a.endMs == b.endMs);
    CHECK(a.delivered == b.delivered);
}

TEST_CASE("a clean run settles, answers every client, and passes the checks") {
    SimResult res = run_sim(small_plan(7));
    CHECK(res.quiescent);
    CHECK(res.failedKeys.empty());
    CHECK(res.latencyByKey.size() == 12);
    for (auto& [key, ms] : res.latencyByKey) CHECK(ms > 0);

    // every surviving node ends on the same trunk
    REQUIRE(res.trunks.size() == 3);
    auto ref = trunk_ids(res.trunks.begin()->second);
    for (auto& [id, trunk] : res.trunks) CHECK(trunk_ids(trunk) == ref);
    // 12 commands plus the one installed configuration
    CHECK(ref.size() == 13);
    CHECK(std::count(ref.begin(), ref.end(), "R1") == 1);

    CheckReport report = check_trace(res.trace);
    CHECK(report.ok());
    CHECK(report.liveness == CheckReport::Liveness::Satisfied);
    CHECK(report.summary() == "safety: pass; liveness: satisfied");
}

TEST_CASE("plan text round-trips exactly") {
    PlanShape shape;
    shape.commands = 50;
    Plan p = make_plan(9, shape);
    std::string text = p.to_text();
    Plan back = Plan::from_text(text);
    CHECK(back.to_text() == text);

    CHECK_THROWS_AS(Plan::from_text(""), CodecError);
    CHECK_THROWS_AS(Plan::from_text("X nonsense\n"), CodecError);
}

TEST_CASE("network tracing records sends and deliveries") {
    Plan p = small_plan(3);
    p.traceNet = true;
    SimResult res = run_sim(p);

    size_t sends = 0, dlvrs = 0;
    for (const auto& rec : res.trace.records) {
        if (const auto* n = std::get_if<TraceNet>(&rec)) {
            if (n->deliver) ++dlvrs;
            else ++sends;
        }
    }
    CHECK(sends > 0);
    CHECK(dlvrs > 0);
    CHECK(sends >= dlvrs);  // crashed or late deliveries may be dropped
    CHECK(res.delivered == dlvrs);

    std::string text = res.trace.to_text();
    Trace back = Trace::from_text(text);
    CHECK(back.to_text() == text);
    CHECK(back.records.size() == res.trace.records.size());
}

TEST_CASE("both back-ends serialize the same closed-loop history") {
    Plan base;
    base.nodes = {NodeId{"n1"}, NodeId{"n2"}, NodeId{"n3"}};
    base.c0 = make_config("C0", {"n1", "n2", "n3"});
    base.delay = DelayModel::uniform_ms(10, 40);
    base.tickMs = 5;
    base.gossipMs = 25;
    base.horizonMs = 120000;
    base.serial = true;
    for (int i = 0; i < 20; ++i) {
        base.ops.push_back(propose_op(100 + i * 10, i % 2 ? "n3" : "n2", "k" + std::to_string(i)));
        if (i == 6 || i == 13)
            base.ops.push_back(recon_op(100 + i * 10 + 5, "n1", {"n1", "n2", "n3"}));
    }

    Plan paxos = base;
    paxos.seed = 1001;
    paxos.backend = "paxos";
    Plan sequencer = base;
    sequencer.seed = 2002;  // different delays, same history
    sequencer.backend = "sequencer";

    SimResult a = run_sim(paxos);
    SimResult b = run_sim(sequencer);
    REQUIRE(a.quiescent);
    REQUIRE(b.quiescent);
    CHECK(a.failedKeys.empty());
    CHECK(b.failedKeys.empty());

    auto ta = trunk_keys(a.trunks.at(NodeId{"n1"}));
    auto tb = trunk_keys(b.trunks.at(NodeId{"n1"}));
    CHECK(ta == tb);
    CHECK(check_trace(a.trace).ok());
    CHECK(check_trace(b.trace).ok());
}

TEST_CASE("a crashed follower does not stop the rest") {
    Plan p = small_plan(11);
    p.ops.push_back(crash_op(230, "n3"));
    SimResult res = run_sim(p);

    CHECK(res.quiescent);
    CHECK(res.failedKeys.empty());
    CHECK(res.trunks.count(NodeId{"n3"}) == 0);
    CHECK(res.dropped > 0);  // traffic to the corpse

    CheckReport report = check_trace(res.trace);  // correct defaults to n1, n2
    CHECK(report.ok());
    CHECK(report.liveness == CheckReport::Liveness::Satisfied);
}

TEST_CASE("a crashed leader is replaced and the run still settles") {
    Plan p;
    p.seed = 5;
    p.nodes = {NodeId{"n1"}, NodeId{"n2"}, NodeId{"n3"}};
    p.c0 = make_config("C0", {"n1", "n2", "n3"});
    p.delay = DelayModel::uniform_ms(10, 30);
    p.tickMs = 5;
    p.gossipMs = 25;
    p.horizonMs = 120000;
    for (int i = 0; i < 10; ++i)
        p.ops.push_back(propose_op(100 + i * 40, "n2", "k" + std::to_string(i)));
    p.ops.push_back(crash_op(170, "n1"));

    SimResult res = run_sim(p);
    REQUIRE(res.quiescent);
    CHECK(res.failedKeys.empty());
    CHECK(res.latencyByKey.size() == 10);
    CHECK(trunk_ids(res.trunks.at(NodeId{"n2"})) == trunk_ids(res.trunks.at(NodeId{"n3"})));

    CheckReport report = check_trace(res.trace);
    CHECK(report.ok());
    CHECK(report.liveness == CheckReport::Liveness::Satisfied);
}

TEST_CASE("a run that cannot settle ends at the horizon as inconclusive") {
    Plan p;
    p.seed = 6;
    p.nodes = {NodeId{"n1"}, NodeId{"n2"}, NodeId{"n3"}};
    p.c0 = make_config("C0", {"n1", "n2", "n3"});
    p.delay = DelayModel::fixed_ms(20);
    p.tickMs = 5;
    p.gossipMs = 25;
    p.horizonMs = 30000;
    p.ops.push_back(crash_op(50, "n2"));
    p.ops.push_back(crash_op(50, "n3"));
    p.ops.push_back(propose_op(200, "n1", "stuck"));

    SimResult res = run_sim(p);
    CHECK_FALSE(res.quiescent);
    // the retry budget ran out long before the horizon
    CHECK(res.failedKeys == std::vector<std::string>{"stuck"});

    CheckReport report = check_trace(res.trace);
    CHECK(report.violations.empty());
    CHECK(report.liveness == CheckReport::Liveness::Inconclusive);
    CHECK(report.ok());
    CHECK(report.summary() ==
          "safety: pass; liveness: inconclusive (run did not settle)");
}

TEST_CASE("a reconfiguration request from a dormant node is dropped after its retries") {
    Plan p;
    p.seed = 8;
    p.nodes = {NodeId{"n1"}, NodeId{"n2"}, NodeId{"n3"}};
    p.c0 = make_config("C0", {"n1", "n2"});
    p.delay = DelayModel::fixed_ms(10);
    p.tickMs = 5;
    p.gossipMs = 25;
    p.horizonMs = 60000;
    p.ops.push_back(recon_op(100, "n3", {"n1", "n2", "n3"}));

    SimResult res = run_sim(p);
    CHECK(res.quiescent);
    CHECK(res.installed.empty());
    for (const auto& rec : res.trace.records)
        CHECK_FALSE(std::holds_alternative<TraceInput>(rec));
}

TEST_CASE("generated stress plans keep their anchors safe") {
    PlanShape shape;
    shape.commands = 40;
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        CAPTURE(seed);
        Plan p = make_plan(seed, shape);
        REQUIRE(p.nodes.size() >= 3);
        REQUIRE(p.nodes.size() <= 5);
        CHECK(p.c0.has_member(p.nodes[0]));
        CHECK(p.c0.has_member(p.nodes[1]));

        size_t proposes = 0;
        for (const auto& op : p.ops) {
            switch (op.kind) {
                case PlanOp::Kind::Propose:
                    ++proposes;
                    break;
                case PlanOp::Kind::Recon: {
                    Configuration c{ConfigId{"x"}, op.members};
                    CHECK(c.has_member(p.nodes[0]));
                    CHECK(c.has_member(p.nodes[1]));
                    CHECK((op.members.size() == 3 || op.members.size() == 5));
                    break;
                }
                case PlanOp::Kind::Crash:
                    CHECK(op.node != p.nodes[0]);
                    CHECK(op.node != p.nodes[1]);
                    CHECK(op.node != p.nodes.back());
                    break;
            }
        }
        CHECK(proposes == 40);
    }
}

TEST_CASE("a generated stress plan survives its own chaos") {
    PlanShape shape;
    shape.commands = 60;
    Plan p = make_plan(123, shape);
    SimResult res = run_sim(p);
    REQUIRE(res.quiescent);

    CheckReport report = check_trace(res.trace);
    for (auto& v : report.violations) {
        CAPTURE(v.rule);
        CAPTURE(v.detail);
        CHECK(false);
    }
    CHECK(report.liveness == CheckReport::Liveness::Satisfied);
}
