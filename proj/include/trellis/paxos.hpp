#pragma once

#include <deque>
#include <map>
#include <set>

#include "trellis/engine.hpp"

namespace trellis {

// Proposal ballots, ordered by (round, proposer). Round 0 belongs exclusively
// to the pre-configured leader, which lets it skip phase 1: no value can ever
// be accepted at a lower ballot.
struct Ballot {
    uint64_t round = 0;
    NodeId proposer;
    auto operator<=>(const Ballot&) const = default;
};

// Multi-decree Paxos over one fixed configuration. The first member in
// canonical order leads at ballot (0, leader) from the start; everyone else
// forwards proposals to the leader they currently believe in. A member that
// sees its own work stall takes over by preparing ballot
// (maxRoundSeen + 1, self) from its lowest undecided slot, adopting reported
// values and plugging holes with no-ops. Gaps in delivery never happen:
// slots are consumed in order, no-ops and duplicate entry ids silently.
class PaxosEngine : public LogEngine {
public:
    PaxosEngine(Configuration cfg, NodeId self, NodeId leaderHint, EngineOptions opt = {});

    void join() override;
    void propose(const Entry& value) override;
    std::vector<LearnEvent> poll() override;
    void on_message(const NodeId& from, ByteReader& body) override;
    void on_tick(int64_t nowMs) override;
    std::vector<Outbound> take_outbox() override;
    bool quiescent() const override;
    std::map<std::string, uint64_t> counters() const override;

    const Ballot& current_ballot() const { return myBallot_; }
    const NodeId& believed_leader() const { return believedLeader_; }
    bool leading() const { return leading_; }
    bool preparing() const { return preparing_; }

private:
    struct Value {
        bool noop = false;
        Entry entry;
    };
    struct AcceptedSlot {
        Ballot at;
        Value v;
    };
    struct Inflight {
        Value v;
        std::set<NodeId> acks;
        int64_t sentMs = 0;
    };
    struct PrepSlot {
        Ballot at;
        Value v;
        bool decided = false;
    };

    static void encode_value(ByteWriter& w, const Value& v);
    static Value decode_value(ByteReader& r);

    void broadcast(const std::string& payload);
    void send(const NodeId& to, const std::string& payload);
    size_t majority() const { return cfg_.members.size() / 2 + 1; }
    size_t rank() const;

    void lead_slot(Value v);
    void lead_slot_at(uint64_t slot, Value v);
    void forward_to_leader(const Entry& e);
    void start_prepare();
    void finish_prepare();
    void step_down(const Ballot& b);
    void decide(uint64_t slot, const Value& v, bool rebroadcast);
    void deliver_ready();
    uint64_t first_undecided() const;
    bool has_work() const;

    void on_prepare(const NodeId& from, ByteReader& r);
    void on_promise(const NodeId& from, ByteReader& r);
    void on_accept(const NodeId& from, ByteReader& r);
    void on_accepted(const NodeId& from, ByteReader& r);
    void on_decided(const NodeId& from, ByteReader& r);
    void on_nack(const NodeId& from, ByteReader& r);
    void on_forward(const NodeId& from, ByteReader& r);

    Configuration cfg_;
    NodeId self_;
    EngineOptions opt_;
    bool joined_ = false;

    // acceptor
    Ballot promisedFloor_;
    std::map<uint64_t, AcceptedSlot> accepted_;
    std::set<uint64_t> acceptedUndecided_;

    // learner
    std::map<uint64_t, Value> decided_;
    std::map<uint64_t, int64_t> decidedAtMs_;
    uint64_t deliverNext_ = 0;
    uint64_t deliveredCount_ = 0;
    std::set<std::string> deliveredIds_;
    std::vector<LearnEvent> ready_;

    // proposer
    NodeId believedLeader_;
    bool leading_ = false;
    bool preparing_ = false;
    Ballot myBallot_;
    uint64_t nextSlot_ = 0;
    uint64_t maxRoundSeen_ = 0;
    std::map<uint64_t, Inflight> inflight_;
    std::deque<Entry> pendingMine_;  // queued while phase 1 runs

    struct ForwardedEntry {
        Entry e;
        int64_t sentMs;
    };
    std::vector<ForwardedEntry> forwarded_;

    // phase 1 bookkeeping
    uint64_t prepFromSlot_ = 0;
    std::set<NodeId> promisers_;
    std::map<uint64_t, PrepSlot> prepBest_;
    int64_t prepareStartedMs_ = -1;

    // decided-slot acknowledgements per member, for tail rebroadcast; the
    // floor is the lowest slot a member has not acknowledged yet, so the
    // rebroadcast scan skips the settled prefix
    std::map<NodeId, std::set<uint64_t>> ackedSlots_;
    std::map<NodeId, uint64_t> ackedFloor_;
    // rebroadcast pacing: a member that stays silent for kMaxTailResends
    // rounds is presumed crashed and left alone until it acks again
    std::map<NodeId, int64_t> lastTailMs_;
    std::map<NodeId, uint32_t> tailAttempts_;

    int64_t nowMs_ = 0;
    int64_t lastProgressMs_ = 0;
    std::vector<Outbound> outbox_;
    std::map<std::string, uint64_t> counters_;
};

}  // namespace trellis
