#include <string>

#include "doctest.h"
#include "trellis/checker.hpp"
#include "trellis/trace.hpp"

using namespace trellis;

namespace {

const char* kCleanText =
    "H seed=1 nodes=n1,n2,n3 backend=paxos speculation=on c0=C0:n1,n2,n3\n"
    "I t=10 propose node=n1 conf=C0 cmd=a payload=61\n"
    "O t=20 node=n1 seq=0 learn id=a\n"
    "O t=22 node=n2 seq=0 learn id=a\n"
    "O t=23 node=n3 seq=0 learn id=a\n"
    "I t=30 recon node=n2 parent=C0 new=C1:n1,n2\n"
    "O t=31 node=n1 seq=1 ready id=C1 members=n1,n2\n"
    "O t=32 node=n2 seq=1 ready id=C1 members=n1,n2\n"
    "O t=40 node=n1 seq=2 newconf id=C1 members=n1,n2\n"
    "O t=41 node=n2 seq=2 newconf id=C1 members=n1,n2\n"
    "O t=42 node=n3 seq=1 newconf id=C1 members=n1,n2\n"
    "I t=50 propose node=n1 conf=C1 cmd=b payload=62\n"
    "O t=60 node=n1 seq=3 learn id=b\n"
    "O t=61 node=n2 seq=3 learn id=b\n"
    "O t=62 node=n3 seq=2 learn id=b\n"
    "Q quiescent=1\n";

bool has_rule(const CheckReport& r, const std::string& rule) {
    for (const auto& v : r.violations)
        if (v.rule == rule) return true;
    return false;
}

CheckReport check_text(const std::string& text) { return check_trace(Trace::from_text(text)); }

}  // namespace

TEST_CASE("trace text round-trips exactly") {
    Trace t = Trace::from_text(kCleanText);
    CHECK(t.to_text() == kCleanText);
    CHECK(t.header.nodes.size() == 3);
    CHECK(t.quiescent);
    CHECK_THROWS_AS(Trace::from_text("I t=1 propose node=n1\n"), CodecError);  // no header
    CHECK_THROWS_AS(Trace::from_text("H seed=x nodes=n1 backend=paxos speculation=on c0=C0:n1\n"),
                    CodecError);
}

TEST_CASE("a clean quiescent history satisfies every rule") {
    CheckReport r = check_text(kCleanText);
    CHECK(r.violations.empty());
    CHECK(r.liveness == CheckReport::Liveness::Satisfied);
    CHECK(r.ok());
    CHECK(r.summary() == "safety: pass; liveness: satisfied");
}

TEST_CASE("proposing the same command twice is flagged") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "I t=11 propose node=n2 conf=C0 cmd=a payload=00\n"
        "O t=20 node=n1 seq=0 learn id=a\n"
        "O t=21 node=n2 seq=0 learn id=a\n"
        "Q quiescent=1\n";
    CheckReport r = check_text(text);
    CHECK_FALSE(r.ok());
    CHECK(has_rule(r, "well-formedness"));
}

TEST_CASE("requesting the same configuration id twice is flagged") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 recon node=n1 parent=C0 new=C1:n1,n2\n"
        "I t=11 recon node=n2 parent=C0 new=C1:n1,n2\n"
        "O t=20 node=n1 seq=0 ready id=C1 members=n1,n2\n"
        "O t=21 node=n2 seq=0 ready id=C1 members=n1,n2\n"
        "O t=30 node=n1 seq=1 newconf id=C1 members=n1,n2\n"
        "O t=31 node=n2 seq=1 newconf id=C1 members=n1,n2\n"
        "Q quiescent=1\n";
    CheckReport r = check_text(text);
    CHECK_FALSE(r.ok());
    CHECK(has_rule(r, "well-formedness"));
}

TEST_CASE("using a configuration before it turned ready is flagged") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 recon node=n1 parent=C0 new=C1:n1,n2\n"
        "I t=15 propose node=n2 conf=C1 cmd=a payload=00\n"
        "O t=16 node=n2 seq=0 ready id=C1 members=n1,n2\n"
        "Q quiescent=0\n";
    CheckReport r = check_text(text);
    CHECK(has_rule(r, "well-formedness"));
    for (const auto& v : r.violations)
        if (v.rule == "well-formedness") CHECK(v.detail.find("before seeing it ready") != std::string::npos);
}

TEST_CASE("outputs without a justifying input are flagged") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "O t=20 node=n1 seq=0 learn id=ghost\n"
        "Q quiescent=0\n";
    CheckReport r = check_text(text);
    CHECK_FALSE(r.ok());
    CHECK(has_rule(r, "integrity"));

    std::string text2 =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "O t=20 node=n1 seq=0 newconf id=C9 members=n1\n"
        "Q quiescent=0\n";
    CHECK(has_rule(check_text(text2), "integrity"));

    std::string text3 =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "O t=20 node=n1 seq=0 ready id=C9 members=n1\n"
        "Q quiescent=0\n";
    CHECK(has_rule(check_text(text3), "integrity"));
}

TEST_CASE("learning in a superseded context needs a proposal from that context") {
    // "a" was proposed into C0, but n1 learns it after installing C1: the
    // learn is attributed to C1 where no such proposal exists.
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=5 propose node=n1 conf=C0 cmd=a payload=00\n"
        "I t=10 recon node=n1 parent=C0 new=C1:n1,n2\n"
        "O t=11 node=n1 seq=0 ready id=C1 members=n1,n2\n"
        "O t=20 node=n1 seq=1 newconf id=C1 members=n1,n2\n"
        "O t=30 node=n1 seq=2 learn id=a\n"
        "Q quiescent=0\n";
    CheckReport r = check_text(text);
    CHECK(has_rule(r, "integrity"));
}

TEST_CASE("repeating an output for the same id is flagged") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "O t=20 node=n1 seq=0 learn id=a\n"
        "O t=21 node=n1 seq=1 learn id=a\n"
        "Q quiescent=0\n";
    CheckReport r = check_text(text);
    CHECK_FALSE(r.ok());
    CHECK(has_rule(r, "no-duplication"));
}

TEST_CASE("gaps in a node's output sequence are flagged") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "O t=20 node=n1 seq=4 learn id=a\n"
        "Q quiescent=0\n";
    CheckReport r = check_text(text);
    CHECK(has_rule(r, "well-formedness"));
}

TEST_CASE("nodes that disagree on the order are flagged") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "I t=11 propose node=n2 conf=C0 cmd=b payload=00\n"
        "O t=20 node=n1 seq=0 learn id=a\n"
        "O t=21 node=n1 seq=1 learn id=b\n"
        "O t=22 node=n2 seq=0 learn id=b\n"
        "O t=23 node=n2 seq=1 learn id=a\n"
        "Q quiescent=1\n";
    CheckReport r = check_text(text);
    CHECK_FALSE(r.ok());
    CHECK(has_rule(r, "linearizability"));
}

TEST_CASE("divergence in installed configurations is a linearizability violation too") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 recon node=n1 parent=C0 new=C1:n1,n2\n"
        "I t=11 recon node=n2 parent=C0 new=C2:n1,n2\n"
        "O t=12 node=n1 seq=0 ready id=C1 members=n1,n2\n"
        "O t=13 node=n2 seq=0 ready id=C2 members=n1,n2\n"
        "O t=20 node=n1 seq=1 newconf id=C1 members=n1,n2\n"
        "O t=21 node=n2 seq=1 newconf id=C2 members=n1,n2\n"
        "Q quiescent=0\n";
    CheckReport r = check_text(text);
    CHECK(has_rule(r, "linearizability"));
}

TEST_CASE("liveness is judged only on settled runs") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "Q quiescent=0\n";
    CheckReport r = check_text(text);
    CHECK(r.violations.empty());
    CHECK(r.liveness == CheckReport::Liveness::Inconclusive);
    CHECK(r.ok());
    CHECK(r.summary() == "safety: pass; liveness: inconclusive (run did not settle)");
}

TEST_CASE("a settled run missing a learn at one member violates liveness") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "O t=20 node=n1 seq=0 learn id=a\n"
        "Q quiescent=1\n";
    CheckReport r = check_text(text);
    CHECK(r.violations.empty());
    CHECK(r.liveness == CheckReport::Liveness::Violated);
    CHECK_FALSE(r.ok());
    CHECK(r.summary() == "safety: pass; liveness: violated(1)");
    REQUIRE(r.livenessIssues.size() == 1);
    CHECK(r.livenessIssues[0].detail.find("n2 never learned a") != std::string::npos);
}

TEST_CASE("naming the correct nodes excuses the silent ones") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "O t=20 node=n1 seq=0 learn id=a\n"
        "Q quiescent=1\n";
    CheckReport r = check_trace(Trace::from_text(text), {NodeId{"n1"}});
    CHECK(r.liveness == CheckReport::Liveness::Satisfied);

    // a crash record does the same implicitly
    std::string text2 =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=5 crash node=n2\n"
        "I t=10 propose node=n1 conf=C0 cmd=a payload=00\n"
        "O t=20 node=n1 seq=0 learn id=a\n"
        "Q quiescent=1\n";
    CHECK(check_text(text2).liveness == CheckReport::Liveness::Satisfied);
}

TEST_CASE("a settled reconfiguration must install its successor everywhere") {
    std::string text =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 recon node=n1 parent=C0 new=C1:n1,n2\n"
        "O t=11 node=n1 seq=0 ready id=C1 members=n1,n2\n"
        "O t=12 node=n2 seq=0 ready id=C1 members=n1,n2\n"
        "O t=20 node=n1 seq=1 newconf id=C1 members=n1,n2\n"
        "Q quiescent=1\n";  // n2 never installs C1
    CheckReport r = check_text(text);
    CHECK(r.liveness == CheckReport::Liveness::Violated);
    REQUIRE_FALSE(r.livenessIssues.empty());
    CHECK(r.livenessIssues[0].detail.find("never installed C1") != std::string::npos);

    std::string unresolved =
        "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n"
        "I t=10 recon node=n1 parent=C0 new=C1:n1,n2\n"
        "O t=11 node=n1 seq=0 ready id=C1 members=n1,n2\n"
        "O t=12 node=n2 seq=0 ready id=C1 members=n1,n2\n"
        "Q quiescent=1\n";  // nobody ever installs anything
    CheckReport r2 = check_text(unresolved);
    CHECK(r2.liveness == CheckReport::Liveness::Violated);
    bool found = false;
    for (auto& issue : r2.livenessIssues)
        if (issue.detail.find("never produced a successor") != std::string::npos) found = true;
    CHECK(found);
}

TEST_CASE("readiness must reach the requested members, except losers without speculation") {
    std::string base =
        "I t=10 recon node=n1 parent=C0 new=C1:n1,n2\n"
        "I t=11 recon node=n2 parent=C0 new=C2:n1,n2\n"
        "O t=12 node=n1 seq=0 ready id=C2 members=n1,n2\n"
        "O t=13 node=n2 seq=0 ready id=C2 members=n1,n2\n"
        "O t=20 node=n1 seq=1 newconf id=C2 members=n1,n2\n"
        "O t=21 node=n2 seq=1 newconf id=C2 members=n1,n2\n"
        "Q quiescent=1\n";  // C1 lost the race and nobody turned it ready

    std::string on = "H seed=1 nodes=n1,n2 backend=paxos speculation=on c0=C0:n1,n2\n" + base;
    CheckReport r = check_text(on);
    CHECK(r.liveness == CheckReport::Liveness::Violated);
    bool aboutC1 = false;
    for (auto& issue : r.livenessIssues)
        if (issue.detail.find("never saw C1 become ready") != std::string::npos) aboutC1 = true;
    CHECK(aboutC1);

    // without speculation only configurations that reach the trunk owe a Ready
    std::string off = "H seed=1 nodes=n1,n2 backend=paxos speculation=off c0=C0:n1,n2\n" + base;
    CHECK(check_text(off).liveness == CheckReport::Liveness::Satisfied);
}
