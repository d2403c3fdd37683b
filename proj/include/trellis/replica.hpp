#pragma once

#include <map>
#include <memory>
#include <set>
#include <utility>
#include <vector>

#include "trellis/engine.hpp"

namespace trellis {

struct ReplicaOptions {
    // With speculation on, Ready fires as soon as the join request for a new
    // configuration arrives; off defers it until the configuration lands on
    // the trunk, so clients never target a configuration that may still lose.
    bool speculation = true;
    int64_t gossipMs = 25;
    // Gossip ships each peer only the trunk entries it has not been sent
    // yet. Every refresh interval the cursor rewinds and the peer gets the
    // whole trunk again, healing any segment lost to backpressure; zero or
    // negative disables the rewind (for transports that never drop frames).
    int64_t gossipRefreshMs = 2000;
    // Engine messages for a configuration this node has not joined yet are
    // buffered so nothing is lost when the join arrives later.
    size_t prejoinCap = 100000;
};

// One node of the reconfigurable machine: runs an independent ordering
// engine per proposed configuration, prunes the configuration tree by each
// branch's first configuration entry, splices the surviving branches into
// the trunk, and gossips the trunk so non-members catch up.
class Replica {
public:
    Replica(NodeId self, Configuration c0, EngineFactory factory, ReplicaOptions opt = {});

    // Environment inputs. Guard failures (unknown or superseded target
    // configuration) drop silently and bump a counter; retries are the
    // command queue's job.
    void propose(const ConfigId& c, const Command& cmd);
    void recon(const ConfigId& c, const Configuration& cNew);

    // Inbound peer traffic: cls must be Join, State, or Backend.
    void on_message(const NodeId& from, MsgClass cls, ByteReader& body);

    // Drives engine timers, gossip, and buffer housekeeping.
    void on_tick(int64_t nowMs);

    struct Outbound {
        NodeId to;
        MsgClass cls;
        std::string payload;
    };
    std::vector<OutputEvent> take_outputs();
    std::vector<Outbound> take_outbox();

    // Introspection for hosts, the command queue, and the config manager.
    const NodeId& self() const { return self_; }
    const EntrySeq& trunk() const { return trunk_; }
    // Canonical encoding of the trunk; byte equality means trunk equality.
    const std::string& trunk_bytes() const { return trunkBytes_; }
    const ConfigId& cur_conf() const { return curConf_; }
    const std::set<NodeId>& view() const { return view_; }
    bool active() const { return active_; }
    bool is_member(const ConfigId& c) const;
    bool ready_seen(const ConfigId& c) const { return readyEmitted_.count(c) != 0; }
    // The proposal guard: the configuration is known here and its branch has
    // not ordered a successor yet.
    bool branch_open(const ConfigId& c) const;
    // True when c can no longer reach the trunk: its branch or the trunk
    // already chose a successor, or an ancestor chose a different child.
    bool config_dead(const ConfigId& c) const;
    const Configuration* config_info(const ConfigId& c) const;

    // All live (non-dead) machines idle. Dead branches' machines are frozen
    // and excluded; their pending work can never reach the trunk.
    bool engines_quiescent() const;
    std::map<std::string, uint64_t> engine_counters() const;
    uint64_t dropped_proposals() const { return droppedProposals_; }
    uint64_t dropped_recons() const { return droppedRecons_; }

private:
    void join_conf(const Configuration& c);
    void learn_next(const Entry& x);
    void drain();
    void on_engine_learn(const ConfigId& c, const LearnEvent& ev);
    void pump();
    void emit(OutputKind kind, Entry body);
    void emit_ready_once(const Configuration& c);
    void handle_join(const NodeId& from, ByteReader& r);
    void handle_state(const NodeId& from, ByteReader& r);
    void handle_backend(const NodeId& from, ByteReader& r);

    NodeId self_;
    ConfigId c0_;
    EngineFactory factory_;
    ReplicaOptions opt_;

    bool active_ = false;
    std::set<NodeId> view_;
    std::map<ConfigId, EntrySeq> branches_;  // presence means joined
    std::map<ConfigId, std::unique_ptr<LogEngine>> machines_;
    EntrySeq trunk_;
    size_t next_ = 0;
    ConfigId curConf_;

    // Everything this node knows about the configuration tree.
    std::map<ConfigId, Configuration> configs_;
    std::map<ConfigId, ConfigId> parentOf_;
    std::map<ConfigId, ConfigId> successorOf_;  // trunk edges

    std::set<ConfigId> readyEmitted_;
    std::set<std::string> learnedCmdIds_;  // trunk duplicate guard
    uint64_t outputSeq_ = 0;
    std::vector<OutputEvent> outputs_;
    std::vector<Outbound> outbox_;

    std::map<ConfigId, std::vector<std::pair<NodeId, std::string>>> prejoin_;
    size_t prejoinTotal_ = 0;

    std::string trunkBytes_;  // concatenated encoded trunk entries, grown on append
    std::vector<uint32_t> trunkEnds_;  // byte offset after each encoded entry
    struct GossipMark {
        size_t sentLen = static_cast<size_t>(-1);  // trunk entries shipped so far
        size_t viewSize = 0;
        int64_t at = 0;
    };
    std::map<NodeId, GossipMark> gossipSent_;
    int64_t nowMs_ = 0;
    int64_t lastGossipMs_ = -(1LL << 40);
    uint64_t droppedProposals_ = 0;
    uint64_t droppedRecons_ = 0;
};

// Offline decommissioning rule over an observed delivery log (node → set of
// configurations it delivered NewConf for). first: a minority of the parent's
// members may stop gossiping (a majority of the parent delivered the
// successor). second: all of them may (a majority of the successor did).
std::pair<bool, bool> decommission_safe(const Configuration& parent,
                                        const Configuration& successor,
                                        const std::map<NodeId, std::set<ConfigId>>& delivered);

}  // namespace trellis
