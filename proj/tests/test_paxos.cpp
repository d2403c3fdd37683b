#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trellis/paxos.hpp"
#include "trellis/sim.hpp"

using namespace trellis;
using test::EnginePump;
using test::make_config;

namespace {

struct Trio {
    Configuration cfg = make_config("C0", {"n1", "n2", "n3"});
    std::unique_ptr<PaxosEngine> e1, e2, e3;
    EnginePump net;
    std::map<std::string, std::vector<std::string>> learned;  // node -> entry ids

    Trio() {
        NodeId lead = initial_leader(cfg);
        e1 = std::make_unique<PaxosEngine>(cfg, NodeId{"n1"}, lead);
        e2 = std::make_unique<PaxosEngine>(cfg, NodeId{"n2"}, lead);
        e3 = std::make_unique<PaxosEngine>(cfg, NodeId{"n3"}, lead);
        net.add(NodeId{"n1"}, e1.get());
        net.add(NodeId{"n2"}, e2.get());
        net.add(NodeId{"n3"}, e3.get());
        e1->join();
        e2->join();
        e3->join();
    }

    void collect() {
        for (auto* e : {e1.get(), e2.get(), e3.get()})
            for (auto& ev : e->poll()) learned[name_of(e)].push_back(ev.value.entry_id());
    }

    std::string name_of(PaxosEngine* e) {
        if (e == e1.get()) return "n1";
        if (e == e2.get()) return "n2";
        return "n3";
    }

    uint64_t counter_total(const std::string& key) {
        uint64_t total = 0;
        for (auto* e : {e1.get(), e2.get(), e3.get()}) {
            auto c = e->counters();
            auto it = c.find(key);
            if (it != c.end()) total += it->second;
        }
        return total;
    }
};

}  // namespace

TEST_CASE("membership and join contract") {
    Configuration cfg = make_config("C0", {"n1", "n2"});
    CHECK_THROWS_AS(PaxosEngine(cfg, NodeId{"nx"}, NodeId{"n1"}), WellFormednessError);
    PaxosEngine e(cfg, NodeId{"n2"}, NodeId{"n1"});
    CHECK_THROWS_AS(e.propose(Entry::cmd(Command{"a", ""})), WellFormednessError);
    e.join();
    CHECK_THROWS_AS(e.join(), WellFormednessError);
}

TEST_CASE("the pre-configured leader decides with a single message round") {
    Trio t;
    CHECK(t.e1->leading());
    CHECK_FALSE(t.e2->leading());

    t.e1->propose(Entry::cmd(Command{"a", "x"}));
    t.net.pump();
    t.collect();

    CHECK(t.learned["n1"] == std::vector<std::string>{"a"});
    CHECK(t.learned["n2"] == std::vector<std::string>{"a"});
    CHECK(t.learned["n3"] == std::vector<std::string>{"a"});

    // one Accept fan-out, one Accepted from each follower, one Decided
    // fan-out, and no phase 1, retries, or catch-up traffic anywhere
    CHECK(t.counter_total("accept_broadcast") == 1);
    CHECK(t.counter_total("accepted") == 2);
    CHECK(t.counter_total("decided_broadcast") == 1);
    CHECK(t.counter_total("prepare_broadcast") == 0);
    CHECK(t.counter_total("promise") == 0);
    CHECK(t.counter_total("nack") == 0);
    CHECK(t.counter_total("noop") == 0);
    CHECK(t.counter_total("forward") == 0);
    CHECK(t.counter_total("catchup_ack") == 0);
    CHECK(t.counter_total("accept_retransmit") == 0);
    CHECK(t.counter_total("decided_resend") == 0);
    CHECK(t.counter_total("forward_resend") == 0);

    CHECK(t.e1->quiescent());
    CHECK(t.e2->quiescent());
    CHECK(t.e3->quiescent());
}

TEST_CASE("follower proposals are forwarded and decided in arrival order") {
    Trio t;
    t.e2->propose(Entry::cmd(Command{"from2", ""}));
    t.e3->propose(Entry::cmd(Command{"from3", ""}));
    t.net.pump();
    t.collect();

    CHECK(t.counter_total("forward") == 2);
    CHECK(t.learned["n1"].size() == 2);
    CHECK(t.learned["n1"] == t.learned["n2"]);
    CHECK(t.learned["n1"] == t.learned["n3"]);
}

TEST_CASE("a duplicate command id is decided twice but delivered once") {
    Trio t;
    t.e1->propose(Entry::cmd(Command{"dup", ""}));
    t.net.pump();
    t.e3->propose(Entry::cmd(Command{"dup", ""}));
    t.net.pump();
    t.collect();
    CHECK(t.learned["n1"] == std::vector<std::string>{"dup"});
    CHECK(t.learned["n2"] == std::vector<std::string>{"dup"});
    CHECK(t.learned["n3"] == std::vector<std::string>{"dup"});
}

TEST_CASE("a stalled follower takes over after the leader crashes") {
    Trio t;
    t.net.tick_all(0);
    t.e1->propose(Entry::cmd(Command{"a", ""}));
    t.net.pump();
    t.collect();
    REQUIRE(t.learned["n2"] == std::vector<std::string>{"a"});

    t.net.remove(NodeId{"n1"});  // crash the leader

    t.e2->on_tick(1000);
    t.e3->on_tick(1000);
    t.e2->propose(Entry::cmd(Command{"b", ""}));
    t.net.pump();  // forward to n1 falls on the floor

    // n2's stall patience is suspectBaseMs * 2 for the second-ranked member
    t.e2->on_tick(1301);
    t.e3->on_tick(1301);
    CHECK(t.e2->preparing());
    t.net.pump();
    t.collect();

    CHECK(t.e2->leading());
    CHECK(t.learned["n2"] == std::vector<std::string>{"a", "b"});
    CHECK(t.learned["n3"] == std::vector<std::string>{"a", "b"});
    CHECK(t.counter_total("prepare_broadcast") >= 1);
    CHECK(t.e2->current_ballot().proposer == NodeId{"n2"});
}

TEST_CASE("takeover adopts reported values and plugs holes with no-ops") {
    Configuration cfg = make_config("C0", {"n1", "n2", "n3"});
    NodeId lead = initial_leader(cfg);
    PaxosEngine e1(cfg, NodeId{"n1"}, lead);
    PaxosEngine e2(cfg, NodeId{"n2"}, lead);
    PaxosEngine e3(cfg, NodeId{"n3"}, lead);
    for (auto* e : {&e1, &e2, &e3}) {
        e->join();
        e->on_tick(0);
    }

    // The leader opens slot 0 ("a", lost to everyone) and slot 1 ("b",
    // reaching only n3), then dies before anything is decided.
    e1.propose(Entry::cmd(Command{"a", ""}));
    e1.take_outbox();
    e1.propose(Entry::cmd(Command{"b", ""}));
    for (auto& out : e1.take_outbox()) {
        if (out.to == NodeId{"n3"}) {
            ByteReader r(out.payload);
            e3.on_message(NodeId{"n1"}, r);
        }
    }
    e3.take_outbox();  // its Accepted reply dies with the leader

    e2.propose(Entry::cmd(Command{"c", ""}));
    e2.take_outbox();  // forwarded to the dead leader
    e2.on_tick(301);   // past the stall patience of the second-ranked member
    REQUIRE(e2.preparing());

    EnginePump net;  // n1 stays out, so messages to it vanish
    net.add(NodeId{"n2"}, &e2);
    net.add(NodeId{"n3"}, &e3);
    net.pump();

    auto ids = [](std::vector<LearnEvent> evs) {
        std::vector<std::string> out;
        for (auto& ev : evs) out.push_back(ev.value.entry_id());
        return out;
    };
    // Slot 0 was never reported, so it closes as a skipped no-op; slot 1
    // resurfaces n3's accepted value ahead of the new proposal.
    CHECK(ids(e2.poll()) == std::vector<std::string>{"b", "c"});
    CHECK(ids(e3.poll()) == std::vector<std::string>{"b", "c"});
    CHECK(e2.counters().at("noop") == 1);
    CHECK(e2.leading());
    CHECK(e2.quiescent());
    CHECK(e3.quiescent());
}

TEST_CASE("seeded lossy schedules never break per-slot agreement") {
    // Random interleaving plus 10% message loss, then a lossless drain. The
    // delivered command sequences must be pairwise prefix-comparable at every
    // step and equal after the drain.
    for (uint64_t seed : {11ull, 23ull, 47ull}) {
        CAPTURE(seed);
        Configuration cfg = make_config("C0", {"n1", "n2", "n3"});
        NodeId lead = initial_leader(cfg);
        std::map<NodeId, std::unique_ptr<PaxosEngine>> engines;
        for (const auto& m : cfg.members) {
            engines[m] = std::make_unique<PaxosEngine>(cfg, m, lead);
            engines[m]->join();
        }

        std::map<std::pair<NodeId, NodeId>, std::deque<std::string>> wire;
        std::map<NodeId, std::vector<std::string>> got;
        auto flush_outboxes = [&] {
            for (auto& [id, e] : engines)
                for (auto& out : e->take_outbox()) wire[{id, out.to}].push_back(out.payload);
        };
        auto poll_all = [&] {
            for (auto& [id, e] : engines)
                for (auto& ev : e->poll()) got[id].push_back(ev.value.entry_id());
        };
        auto prefix_comparable = [&] {
            std::vector<const std::vector<std::string>*> seqs;
            for (auto& [id, v] : got) seqs.push_back(&v);
            for (size_t i = 0; i < seqs.size(); ++i)
                for (size_t j = i + 1; j < seqs.size(); ++j) {
                    size_t n = std::min(seqs[i]->size(), seqs[j]->size());
                    for (size_t k = 0; k < n; ++k)
                        if ((*seqs[i])[k] != (*seqs[j])[k]) return false;
                }
            return true;
        };

        uint64_t rng = seed;
        int64_t now = 0;
        int proposed = 0;
        for (int step = 0; step < 3000; ++step) {
            uint64_t roll = splitmix64(rng);
            if (roll % 5 == 0) {
                now += 25;
                for (auto& [id, e] : engines) e->on_tick(now);
            } else if (roll % 5 == 1 && proposed < 30) {
                auto it = engines.begin();
                std::advance(it, splitmix64(rng) % engines.size());
                it->second->propose(
                    Entry::cmd(Command{"k" + std::to_string(proposed++), "payload"}));
            } else {
                std::vector<decltype(wire.begin())> nonEmpty;
                for (auto it = wire.begin(); it != wire.end(); ++it)
                    if (!it->second.empty()) nonEmpty.push_back(it);
                if (!nonEmpty.empty()) {
                    auto it = nonEmpty[splitmix64(rng) % nonEmpty.size()];
                    std::string payload = std::move(it->second.front());
                    it->second.pop_front();
                    if (splitmix64(rng) % 10 != 0) {  // 10% loss
                        ByteReader r(payload);
                        engines.at(it->first.second)->on_message(it->first.first, r);
                    }
                }
            }
            flush_outboxes();
            poll_all();
            REQUIRE(prefix_comparable());
        }

        // lossless drain with generous time
        for (int round = 0; round < 1000; ++round) {
            now += 50;
            for (auto& [id, e] : engines) e->on_tick(now);
            flush_outboxes();
            bool moved = false;
            for (auto& [link, q] : wire) {
                while (!q.empty()) {
                    std::string payload = std::move(q.front());
                    q.pop_front();
                    ByteReader r(payload);
                    engines.at(link.second)->on_message(link.first, r);
                    moved = true;
                }
                flush_outboxes();
            }
            poll_all();
            REQUIRE(prefix_comparable());
            bool allQuiet = !moved;
            for (auto& [id, e] : engines) allQuiet = allQuiet && e->quiescent();
            if (allQuiet) break;
        }

        for (auto& [id, e] : engines) {
            CAPTURE(id.v);
            CHECK(e->quiescent());
        }
        REQUIRE(got.size() == 3);
        auto first = got.begin()->second;
        CHECK(first.size() == static_cast<size_t>(proposed));
        for (auto& [id, v] : got) CHECK(v == first);
    }
}
