#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "trellis/types.hpp"

namespace trellis::rt {

struct CmOptions {
    int64_t suspectAfterMs = 2000;  // silence before a peer is suspected
    int64_t reconHoldMs = 5000;     // patience for an outstanding proposal
    size_t targetSize = 0;          // 0: keep the current configuration's size
    size_t minSize = 0;             // 0: majority of the target size
};

// Failure detector plus membership policy. Every member runs one; the
// replicated reconfiguration path arbitrates between concurrent proposals,
// so the manager only rate-limits itself: at most one outstanding proposal
// per parent configuration, retried after a hold if nothing got installed.
//
// Health comes from last-heard timestamps (gossip and dedicated pings both
// refresh them; a node never heard from gets grace measured from manager
// start). A member silent past the suspicion threshold triggers a proposal
// that drops it and refills from healthy candidates, keeping the survivors'
// order so the front node usually keeps coordinating.
class ConfigManager {
public:
    struct Hooks {
        std::function<int64_t(const NodeId&)> lastHeardMs;       // -1: never heard
        std::function<void(const Configuration& next)> propose;  // invoke the recon
    };

    ConfigManager(NodeId self, std::vector<NodeId> pool, Hooks hooks, CmOptions opt = {});

    // cur is the newest installed configuration. Pass branchOpen=false while
    // a successor is already chosen there, selfMember=false when this node
    // merely hosts state (non-members must not propose).
    void on_tick(int64_t nowMs, const Configuration& cur, bool branchOpen, bool selfMember);

    void add_candidate(const NodeId& id);

    ConfigId fresh_id();
    uint64_t proposals() const { return proposals_; }

private:
    bool heard(const NodeId& id, int64_t nowMs) const;

    NodeId self_;
    std::vector<NodeId> pool_;
    Hooks hooks_;
    CmOptions opt_;
    int64_t startMs_ = -1;
    ConfigId outstandingParent_;
    int64_t outstandingAtMs_ = -1;
    uint64_t seq_ = 0;
    uint64_t proposals_ = 0;
};

}  // namespace trellis::rt
