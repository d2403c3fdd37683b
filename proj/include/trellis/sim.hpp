#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trellis/trace.hpp"
#include "trellis/types.hpp"

namespace trellis {

// splitmix64: tiny, seedable, identical everywhere. Good enough for delay
// sampling and plan generation; nothing here needs cryptographic quality.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct DelayModel {
    bool fixed = false;
    int64_t lo = 50;
    int64_t hi = 150;
    static DelayModel fixed_ms(int64_t ms) { return {true, ms, ms}; }
    static DelayModel uniform_ms(int64_t lo, int64_t hi) { return {false, lo, hi}; }
};

struct PlanOp {
    enum class Kind { Propose, Recon, Crash };
    Kind kind = Kind::Propose;
    int64_t t = 0;
    NodeId node;                  // invocation site, or the crash victim
    std::string key;              // propose: stable client key
    std::string payload;          // propose
    std::vector<NodeId> members;  // recon: desired membership, order matters
};

struct Plan {
    uint64_t seed = 1;
    std::vector<NodeId> nodes;
    std::string backend = "paxos";  // or "sequencer"
    bool speculation = true;
    Configuration c0;
    DelayModel delay;
    int64_t tickMs = 5;
    int64_t gossipMs = 10;
    int64_t horizonMs = 600000;
    bool traceNet = false;
    // Closed loop: ops run one at a time, each waiting for the previous
    // one's completion (reply for proposals, installation for recons).
    bool serial = false;
    std::vector<PlanOp> ops;

    std::string to_text() const;
    static Plan from_text(const std::string& text);
};

struct SimResult {
    Trace trace;
    bool quiescent = false;
    int64_t endMs = 0;
    std::map<std::string, uint64_t> counters;  // ordering-engine counters, summed
    std::map<NodeId, EntrySeq> trunks;         // final trunks of surviving nodes
    std::map<std::string, int64_t> latencyByKey;
    std::vector<std::string> failedKeys;
    std::map<NodeId, std::set<ConfigId>> installed;  // per-node installed configurations
    uint64_t delivered = 0;
    uint64_t dropped = 0;
};

SimResult run_sim(const Plan& plan);

// Deterministic stress-plan generator. Anchor nodes (the first two) are
// never crashed and sit in every configuration, so each configuration keeps
// a correct majority no matter which eligible victims the seed picks.
struct PlanShape {
    int nodesLo = 3;
    int nodesHi = 5;
    int commands = 1000;
    int reconEveryLo = 25;
    int reconEveryHi = 100;
    int maxCrashes = 3;
    std::string backend = "paxos";
    bool speculation = true;
    int cmdGapMs = 30;
    bool racingRecons = true;
};
Plan make_plan(uint64_t seed, const PlanShape& shape);

}  // namespace trellis
