#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "trellis/types.hpp"

namespace trellis {

struct CommandQueueOptions {
    int64_t retryTimeoutMs = 3000;
    int attemptBudget = 8;
};

// Client-facing retry queue. Holds one entry per submitted key, aims it at
// the newest configuration the local replica reported ready, and re-issues
// it under a fresh command id when the target configuration dies or the
// reply is slow. Transport-free: the host wires it to a replica and feeds
// it readiness and learn notifications.
class CommandQueue {
public:
    struct Hooks {
        // Issue a command into the given configuration (trace it, hand it
        // to the replica). Never null.
        std::function<void(const ConfigId&, const Command&)> propose;
        // True when the configuration can no longer reach the trunk.
        std::function<bool(const ConfigId&)> configDead;
        // Final word on a key: ok=false means the attempt budget ran out.
        std::function<void(const std::string& key, bool ok, int64_t submittedAtMs)> done;
    };

    CommandQueue(NodeId self, Hooks hooks, CommandQueueOptions opt = {});

    void on_ready(const ConfigId& c);
    void submit(const std::string& key, std::string payload, int64_t nowMs);
    void on_learned(const std::string& cmdId);
    void on_tick(int64_t nowMs);

    bool idle() const { return pending_.empty(); }
    size_t depth() const { return pending_.size(); }

private:
    struct Entry {
        std::string key;
        std::string payload;
        int64_t submittedAt = 0;
        int64_t lastAttempt = 0;
        int attempts = 0;
        ConfigId target;  // empty until an attempt found a live target
    };

    // Returns false when the budget is exhausted and the entry must go.
    bool attempt(Entry& e, int64_t nowMs);
    const ConfigId* pick_target() const;

    NodeId self_;
    Hooks hooks_;
    CommandQueueOptions opt_;
    std::vector<ConfigId> readyOrder_;           // oldest first
    std::map<std::string, Entry> pending_;       // key
    std::map<std::string, std::string> issued_;  // command id -> key
};

}  // namespace trellis
