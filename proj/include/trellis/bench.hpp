#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trellis/rt/node.hpp"
#include "trellis/sim.hpp"
#include "trellis/trace.hpp"

namespace trellis::bench {

// Closed-loop load: this many generator threads, each submitting one
// command at a time and waiting for the reply. The measurement window opens
// after the warmup and replies completing outside it are not counted.
struct LoadSpec {
    int threads = 10;
    int64_t durationMs = 5000;
    int64_t warmupMs = 5000;
    size_t payloadBytes = 64;
};

struct RunStats {
    double throughput = 0;  // learned commands per second inside the window
    double p50 = 0, p95 = 0, p99 = 0;  // reply latency, ms
    uint64_t completed = 0;
    uint64_t failed = 0;
    std::vector<double> latenciesMs;
};

struct ClusterSpec {
    int members = 3;
    int standbys = 1;
    std::string backend = "paxos";
    bool speculation = true;
    bool cmEnabled = false;  // load experiments script their own recons
    std::string traceDir;    // when set, nodes write checker-grade traces here
    std::string tag;         // distinguishes trace files of different runs
    int64_t tickMs = 2;
    int64_t gossipMs = 25;
};

// In-process cluster on loopback: member nodes n1..nK plus standbys, all
// sharing one startup file with ephemeral ports.
class LocalCluster {
public:
    explicit LocalCluster(ClusterSpec spec);
    ~LocalCluster();

    void start();
    void stop();

    size_t members() const { return static_cast<size_t>(spec_.members); }
    size_t total() const { return hosts_.size(); }
    NodeId id(size_t i) const;
    std::string addr(size_t i) const;
    rt::NodeHost& host(size_t i) { return *hosts_.at(i); }

    // Blocks until every node reports the same trunk length and idle
    // engines, or the timeout passes. True when it settled.
    bool settle(int64_t timeoutMs = 15000);

    std::vector<std::string> trace_files() const { return traceFiles_; }
    // Reads and merges the per-node trace files; call after stop().
    Trace merged_trace() const;

private:
    ClusterSpec spec_;
    rt::ClusterConfig cc_;
    std::vector<std::unique_ptr<rt::NodeHost>> hosts_;
    std::vector<std::string> traceFiles_;
    bool started_ = false;
};

// Runs the closed-loop load against the cluster and collects reply
// latencies. Generators round-robin over the member nodes.
RunStats run_load(LocalCluster& cluster, const LoadSpec& load);

// Fires admin reconfigurations at a fixed rate from a background thread,
// rotating the last member slot through the standby pool. Returned by
// start_recon_churn; destroying the handle stops the churn.
class ReconChurn {
public:
    ReconChurn(LocalCluster& cluster, double ratePerSec);
    ~ReconChurn();
    uint64_t accepted() const;
    uint64_t rejected() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct BaselinePoint {
    int threads = 0;
    RunStats stats;
};

struct BaselineResult {
    std::vector<BaselinePoint> points;
    int kneeThreads = 0;  // smallest count reaching 90% of peak throughput
};

struct SweepPoint {
    double rate = 0;  // recons per second
    RunStats stats;
    double degradationPct = 0;  // vs the sweep's rate-0 point
    bool traceOk = false;       // merged trace passed the safety checks
};

// Experiment drivers. Each writes one CSV per figure into outDir (created
// if missing) and returns the numbers it plotted. Zero-duration loads
// produce header-only CSVs.
BaselineResult run_baseline(const std::string& outDir, LoadSpec load = {},
                            std::vector<int> threadCounts = {1, 2, 4, 8, 16},
                            const std::string& backend = "paxos");
std::vector<SweepPoint> run_recon_sweep(const std::string& outDir, LoadSpec load = {},
                                        std::vector<double> rates = {0, 1, 5, 20},
                                        const std::string& backend = "paxos");

// Simulated-network latency series around one reconfiguration, run once per
// speculation setting. Commands tick every 50 ms; the row index is the
// command's distance from the reconfiguration mark (negative: before).
struct LatencyPoint {
    int offset = 0;
    bool speculation = false;
    double latencyMs = 0;
};
std::vector<LatencyPoint> run_latency_around_recon(const std::string& outDir,
                                                   int64_t delayMs = 100);

// One CSV per figure: header row, then the data rows, trailing newline.
void emit_csv(const std::string& path, const std::string& header,
              const std::vector<std::vector<std::string>>& rows);

}  // namespace trellis::bench
