#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trellis/codec.hpp"
#include "trellis/types.hpp"

namespace trellis {

// One learned entry from a fixed-membership ordering engine. slot is the
// zero-based position in the delivered order; slots at a given process are
// consecutive starting at 0 and never repeat.
struct LearnEvent {
    ConfigId config;
    Entry value;
    uint64_t slot;
};

struct EngineOptions {
    int64_t suspectBaseMs = 150;   // leader stall detection, staggered by member rank
    int64_t retransmitMs = 300;    // resend window for undecided and unacked slots
    int64_t reforwardMs = 300;     // resend window for forwarded proposals
};

// Total-order engine over one fixed configuration. One instance per
// (configuration, node). Implementations are single-threaded and driven by
// the host: deliver inbound bytes via on_message, pump timers via on_tick,
// then drain poll() and take_outbox().
class LogEngine {
public:
    virtual ~LogEngine() = default;

    // Activates this member. Calling twice, or proposing before join, is a
    // caller bug and throws WellFormednessError.
    virtual void join() = 0;
    virtual void propose(const Entry& value) = 0;

    // All not-yet-consumed learns, in slot order. Never re-delivers.
    virtual std::vector<LearnEvent> poll() = 0;

    virtual void on_message(const NodeId& from, ByteReader& body) = 0;
    virtual void on_tick(int64_t nowMs) = 0;

    struct Outbound {
        NodeId to;
        std::string payload;  // engine-specific bytes, no envelope
    };
    virtual std::vector<Outbound> take_outbox() = 0;

    // No local work in flight: nothing forwarded and unlearned, nothing
    // proposed and undecided, nothing decided and undelivered.
    virtual bool quiescent() const = 0;

    virtual std::map<std::string, uint64_t> counters() const { return {}; }
};

// leaderHint is the deterministically pre-configured coordinator: the first
// member in the configuration's canonical order.
inline NodeId initial_leader(const Configuration& c) { return c.members.front(); }

using EngineFactory = std::function<std::unique_ptr<LogEngine>(
    const Configuration&, const NodeId& self, const NodeId& leaderHint)>;

// Factory for a back-end by name: "paxos" or "sequencer". Throws
// WellFormednessError for anything else.
EngineFactory backend_factory(const std::string& name);

// Single-sequencer engine: the leaderHint node assigns consecutive slots in
// arrival order and broadcasts assignments. No fault tolerance: if the
// sequencer crashes the engine stops making progress. Serves as the ground
// truth ordering for differential tests.
class SequencerEngine : public LogEngine {
public:
    SequencerEngine(Configuration cfg, NodeId self, NodeId sequencer);

    void join() override;
    void propose(const Entry& value) override;
    std::vector<LearnEvent> poll() override;
    void on_message(const NodeId& from, ByteReader& body) override;
    void on_tick(int64_t nowMs) override;
    std::vector<Outbound> take_outbox() override;
    bool quiescent() const override;
    std::map<std::string, uint64_t> counters() const override;

private:
    void assign(const Entry& value);
    void deliver_ready();

    Configuration cfg_;
    NodeId self_;
    NodeId sequencer_;
    bool joined_ = false;

    uint64_t nextAssign_ = 0;                  // sequencer only
    std::map<uint64_t, Entry> pendingSlots_;   // assigned, not yet delivered
    uint64_t deliverNext_ = 0;
    uint64_t deliveredCount_ = 0;
    std::set<std::string> deliveredIds_;
    std::vector<std::string> forwarded_;       // entry ids awaiting a slot
    std::vector<LearnEvent> ready_;
    std::vector<Outbound> outbox_;
    std::map<std::string, uint64_t> counters_;
};

}  // namespace trellis
