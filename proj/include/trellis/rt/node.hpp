#pragma once

#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "trellis/replica.hpp"
#include "trellis/rt/cm.hpp"
#include "trellis/rt/cq.hpp"
#include "trellis/rt/transport.hpp"
#include "trellis/trace.hpp"

namespace trellis::rt {

// Startup file shared by every node of a cluster: the initial configuration
// plus the address book. Line-based, '#' starts a comment:
//
//   config C0
//   member n1 127.0.0.1:7101
//   member n2 127.0.0.1:7102
//   member n3 127.0.0.1:7103
//   standby n4 127.0.0.1:7104
//
// member lines are ordered (the first coordinates the initial
// configuration); standby lines add address-book entries that start outside
// it.
struct ClusterConfig {
    Configuration c0;
    std::map<NodeId, std::string> addrs;

    std::string to_text() const;
    static ClusterConfig from_text(const std::string& text);
    static ClusterConfig from_file(const std::string& path);
};

struct NodeOptions {
    NodeId id;
    std::string listen;  // defaults to the address-book entry for id
    ClusterConfig cluster;
    std::string backend = "paxos";
    bool speculation = true;
    std::string traceFile;  // empty: skip checker-grade tracing
    bool cmEnabled = true;
    int64_t tickMs = 2;
    int64_t gossipMs = 50;
    int64_t pingMs = 250;
    int64_t suspectAfterMs = 2000;
    CommandQueueOptions cq;

    // TRELLIS_TICK_MS, TRELLIS_GOSSIP_MS, TRELLIS_PING_MS,
    // TRELLIS_SUSPECT_MS, TRELLIS_CQ_RETRY_MS override the corresponding
    // fields when set.
    void apply_env();
};

// One cluster node: owns the replica, its command queue, the configuration
// manager and the TCP transport. Inbound frames, timers and admin requests
// all funnel through one queue into a single core thread, so the replica
// never sees concurrency; transport reader threads and client sessions stay
// outside it.
class NodeHost {
public:
    explicit NodeHost(NodeOptions opt);
    ~NodeHost();

    void start();
    void stop();

    struct Status {
        bool active = false;
        bool member = false;
        uint64_t trunkLen = 0;
        ConfigId curConf;
        std::vector<NodeId> view;
    };
    Status status();

    // Command queue drained and every live engine settled.
    bool idle();

    uint16_t port() const { return tp_ ? tp_->port() : 0; }
    Transport& transport() { return *tp_; }
    uint64_t cm_proposals();

    // Runs fn on the core thread and waits for it. Test access to the
    // replica without racing the core loop.
    void run_on_core(std::function<void()> fn);

private:
    struct InFrame {
        bool fromPeer = false;
        NodeId peer;
        uint64_t connId = 0;
        MsgClass cls = MsgClass::State;
        std::string body;
    };
    struct InGone {
        uint64_t connId = 0;
    };
    using Task = std::function<void()>;
    using InEvent = std::variant<InFrame, InGone, Task>;

    void post(InEvent ev);
    void core_loop();
    void handle_frame(InFrame& f);
    void handle_admin(uint64_t connId, ByteReader& r);
    void pump_replica();
    void trace_line(const std::string& line);
    Status snapshot() const;

    NodeOptions opt_;
    std::unique_ptr<Replica> replica_;
    std::unique_ptr<CommandQueue> cq_;
    std::unique_ptr<ConfigManager> cm_;
    std::unique_ptr<Transport> tp_;

    std::thread coreTh_;
    std::mutex qmu_;
    std::condition_variable qcv_;
    std::deque<InEvent> q_;
    bool started_ = false;
    bool stopping_ = false;
    bool coreRunning_ = false;
    bool faulted_ = false;

    std::ofstream traceOut_;
    bool tracing_ = false;
    uint64_t traceLines_ = 0;

    std::map<std::string, uint64_t> clientOfKey_;
    uint64_t adminSeq_ = 0;
    int64_t lastPingMs_ = 0;
};

}  // namespace trellis::rt
