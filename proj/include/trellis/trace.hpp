#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "trellis/types.hpp"

namespace trellis {

// Traces capture a run as a flat stream: one header, then inputs (I),
// outputs (O), and optional network records (N) in the order they
// happened, then a quiescence marker (Q). The text form is line-based and
// deterministic, so identical runs produce identical bytes.

struct TraceHeader {
    uint64_t seed = 0;
    std::vector<NodeId> nodes;
    std::string backend;  // "paxos" or "sequencer"
    bool speculation = true;
    Configuration c0;
};

struct TraceInput {
    enum class Kind { Propose, Recon, Crash };
    int64_t t = 0;
    Kind kind = Kind::Propose;
    NodeId node;      // where the call was invoked (or which node crashed)
    ConfigId conf;    // propose target / recon parent
    Command cmd;      // propose only
    Configuration newConf;  // recon only
};

struct TraceOutput {
    int64_t t = 0;
    NodeId node;
    uint64_t seq = 0;
    OutputKind kind = OutputKind::Learn;
    std::string id;  // command id or configuration id
    std::vector<NodeId> members;  // newconf and ready only
};

struct TraceNet {
    int64_t t = 0;
    bool deliver = false;  // false: send
    NodeId from;
    NodeId to;
    uint8_t cls = 0;
    uint32_t len = 0;    // body bytes, class tag excluded
    uint64_t hash = 0;   // fnv-1a over the body
};

using TraceRecord = std::variant<TraceInput, TraceOutput, TraceNet>;

struct Trace {
    TraceHeader header;
    std::vector<TraceRecord> records;
    bool quiescent = false;

    std::string to_text() const;
    static Trace from_text(const std::string& text);
};

// Single-line renderers (no trailing newline). to_text is built from these;
// the node runtime uses them to append to a trace file as events happen.
std::string trace_header_line(const TraceHeader& h);
std::string trace_record_line(const TraceRecord& r);
std::string trace_quiescent_line(bool quiescent);

// Concatenates per-node traces into one stream ordered by timestamp
// (stable, so each node's own record order survives). The header keeps the
// first trace's settings with the node lists merged; quiescent is the
// conjunction.
Trace merge_traces(const std::vector<Trace>& parts);

}  // namespace trellis
