#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "trellis/bench.hpp"
#include "trellis/checker.hpp"
#include "trellis/rt/client.hpp"
#include "trellis/rt/node.hpp"
#include "trellis/sim.hpp"

using namespace trellis;

namespace {

volatile std::sig_atomic_t gSignal = 0;
void on_signal(int sig) { gSignal = sig; }

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spill(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

bool flag_on(const std::string& v, const char* name) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw CLI::ValidationError(std::string(name) + " must be on or off");
}

std::vector<NodeId> parse_members(const std::string& csv) {
    std::vector<NodeId> out;
    std::string cur;
    std::stringstream ss(csv);
    while (std::getline(ss, cur, ',')) {
        if (!cur.empty()) out.push_back(NodeId{cur});
    }
    return out;
}

int cmd_sim_run(uint64_t seed, const std::string& planFile, int nodes,
                const std::string& backend, const std::string& speculation, bool traceNet,
                const std::string& traceOut, bool seedSet, bool nodesSet, bool backendSet,
                bool specSet) {
    Plan plan;
    if (!planFile.empty()) {
        plan = Plan::from_text(slurp(planFile));
        if (seedSet) plan.seed = seed;
        if (backendSet) plan.backend = backend;
        if (specSet) plan.speculation = flag_on(speculation, "--speculation");
        if (nodesSet) throw CLI::ValidationError("--nodes does not apply to a plan file");
    } else {
        PlanShape shape;
        shape.nodesLo = shape.nodesHi = nodes;
        shape.backend = backend;
        shape.speculation = flag_on(speculation, "--speculation");
        plan = make_plan(seed, shape);
    }
    if (traceNet) plan.traceNet = true;

    SimResult res = run_sim(plan);
    if (!traceOut.empty()) spill(traceOut, res.trace.to_text());

    std::cout << "seed " << plan.seed << ": quiescent=" << (res.quiescent ? 1 : 0)
              << " end=" << res.endMs << "ms delivered=" << res.delivered
              << " dropped=" << res.dropped << " failed=" << res.failedKeys.size() << "\n";
    size_t trunkLen = 0;
    for (const auto& [node, trunk] : res.trunks) trunkLen = std::max(trunkLen, trunk.size());
    std::cout << "trunk entries: " << trunkLen << "\n";
    if (!res.counters.empty()) {
        std::cout << "counters:";
        for (const auto& [k, v] : res.counters) std::cout << " " << k << "=" << v;
        std::cout << "\n";
    }
    CheckReport report = check_trace(res.trace);
    std::cout << report.summary() << "\n";
    return report.ok() ? 0 : 1;
}

int cmd_check(const std::string& traceFile, const std::string& correctCsv) {
    Trace trace = Trace::from_text(slurp(traceFile));
    CheckReport report;
    if (correctCsv.empty()) {
        report = check_trace(trace);
    } else {
        std::set<NodeId> correct;
        for (auto& n : parse_members(correctCsv)) correct.insert(n);
        report = check_trace(trace, correct);
    }
    std::cout << report.summary() << "\n";
    for (const auto& v : report.violations)
        std::cout << "violation [" << v.rule << "] " << v.detail << "\n";
    for (const auto& v : report.livenessIssues)
        std::cout << "liveness [" << v.rule << "] " << v.detail << "\n";
    return report.ok() ? 0 : 1;
}

int cmd_node_run(const std::string& id, const std::string& listen, const std::string& configFile,
                 const std::string& backend, const std::string& speculation,
                 const std::string& traceFile, const std::string& cm) {
    rt::NodeOptions opt;
    opt.id = NodeId{id};
    opt.listen = listen;
    opt.backend = backend;
    opt.speculation = flag_on(speculation, "--speculation");
    opt.traceFile = traceFile;
    opt.cmEnabled = flag_on(cm, "--cm");
    try {
        opt.cluster = rt::ClusterConfig::from_file(configFile);
        opt.apply_env();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    rt::NodeHost host(std::move(opt));
    try {
        host.start();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cout << id << " listening on port " << host.port() << "\n";

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (gSignal == 0) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    std::cout << "shutting down\n";
    host.stop();
    return 0;
}

int cmd_admin_status(const std::string& to) {
    auto c = rt::Client::connect(to);
    auto st = c.status();
    std::cout << "active: " << (st.active ? "yes" : "no") << "\n"
              << "member: " << (st.member ? "yes" : "no") << "\n"
              << "trunk length: " << st.trunkLen << "\n"
              << "current configuration: " << st.curConf.v << "\n";
    std::cout << "view:";
    for (const auto& n : st.view) std::cout << " " << n.v;
    std::cout << "\n";
    return 0;
}

int cmd_admin_propose(const std::string& to, const std::string& key, const std::string& payload) {
    auto c = rt::Client::connect(to);
    bool ok = c.propose(key, payload);
    std::cout << (ok ? "learned " : "failed ") << key << "\n";
    return ok ? 0 : 1;
}

int cmd_admin_recon(const std::string& to, const std::string& membersCsv) {
    auto members = parse_members(membersCsv);
    if (members.empty()) {
        std::cerr << "error: --members needs at least one node id\n";
        return 1;
    }
    auto c = rt::Client::connect(to);
    auto [ok, detail] = c.recon(members);
    if (ok)
        std::cout << "accepted: new configuration " << detail << "\n";
    else
        std::cout << "rejected: " << detail << "\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trellis: reconfigurable replication toolkit"};
    app.require_subcommand(1);

    // sim
    auto* sim = app.add_subcommand("sim", "deterministic simulated-network runs");
    sim->require_subcommand(1);
    auto* simRun = sim->add_subcommand("run", "execute a plan and check the trace");
    uint64_t seed = 1;
    std::string planFile, backend = "paxos", speculation = "on", traceOut;
    int nodes = 3;
    bool traceNet = false;
    auto* seedOpt = simRun->add_option("--seed", seed, "rng seed for plan generation");
    simRun->add_option("--plan", planFile, "plan file to run instead of generating one");
    auto* nodesOpt = simRun->add_option("--nodes", nodes, "cluster size for generated plans")
                         ->check(CLI::Range(1, 64));
    auto* backendOpt =
        simRun->add_option("--backend", backend, "ordering engine: paxos or sequencer");
    auto* specOpt = simRun->add_option("--speculation", speculation, "on or off");
    simRun->add_flag("--trace-net", traceNet, "record send and deliver events");
    simRun->add_option("--trace", traceOut, "write the run's trace to this file");

    auto* simGen = sim->add_subcommand("gen", "generate a stress plan");
    uint64_t genSeed = 1;
    int genNodes = 3, genCommands = 1000;
    std::string genOut;
    simGen->add_option("--seed", genSeed, "rng seed");
    simGen->add_option("--nodes", genNodes, "cluster size")->check(CLI::Range(1, 64));
    simGen->add_option("--commands", genCommands, "command count");
    simGen->add_option("--out", genOut, "output plan file")->required();

    // check
    auto* check = app.add_subcommand("check", "validate a recorded trace");
    std::string traceFile, correctCsv;
    check->add_option("--trace", traceFile, "trace file")->required();
    check->add_option("--correct", correctCsv, "comma-separated ids of nodes assumed correct");

    // node
    auto* node = app.add_subcommand("node", "cluster node process");
    node->require_subcommand(1);
    auto* nodeRun = node->add_subcommand("run", "serve until SIGINT or SIGTERM");
    std::string nodeId, listen, configFile, nodeBackend = "paxos", nodeSpec = "on";
    std::string nodeTrace, cmFlag = "on";
    nodeRun->add_option("--id", nodeId, "this node's id")->required();
    nodeRun->add_option("--listen", listen, "listen address host:port");
    nodeRun->add_option("--initial-config", configFile, "startup configuration file")->required();
    nodeRun->add_option("--backend", nodeBackend, "ordering engine: paxos or sequencer");
    nodeRun->add_option("--speculation", nodeSpec, "on or off");
    nodeRun->add_option("--trace", nodeTrace, "append checker-grade trace records here");
    nodeRun->add_option("--cm", cmFlag, "automatic failure-driven reconfiguration: on or off");

    // admin
    auto* admin = app.add_subcommand("admin", "talk to a running node");
    admin->require_subcommand(1);
    std::string adminTo = "127.0.0.1:4100";
    auto* adminStatus = admin->add_subcommand("status", "print trunk length, configuration, view");
    adminStatus->add_option("--to", adminTo, "node address");
    auto* adminPropose = admin->add_subcommand("propose", "submit one command and wait");
    std::string propKey, propPayload;
    adminPropose->add_option("--to", adminTo, "node address");
    adminPropose->add_option("--key", propKey, "client-chosen unique key")->required();
    adminPropose->add_option("--payload", propPayload, "command payload");
    auto* adminRecon = admin->add_subcommand("recon", "request a membership change");
    std::string reconMembers;
    adminRecon->add_option("--to", adminTo, "node address");
    adminRecon->add_option("--members", reconMembers, "comma-separated new member ids")
        ->required();

    // bench
    auto* benchCmd = app.add_subcommand("bench", "loopback-cluster experiments");
    benchCmd->require_subcommand(1);
    std::string outDir = "bench-out";
    int64_t durationMs = 5000, warmupMs = 5000, delayMs = 100;
    auto* benchBaseline = benchCmd->add_subcommand("baseline", "throughput vs generator count");
    benchBaseline->add_option("--out", outDir, "output directory");
    benchBaseline->add_option("--duration-ms", durationMs, "measurement window");
    benchBaseline->add_option("--warmup-ms", warmupMs, "warmup before the window");
    auto* benchSweep =
        benchCmd->add_subcommand("recon-sweep", "throughput vs reconfiguration rate");
    benchSweep->add_option("--out", outDir, "output directory");
    benchSweep->add_option("--duration-ms", durationMs, "measurement window");
    benchSweep->add_option("--warmup-ms", warmupMs, "warmup before the window");
    auto* benchLatency =
        benchCmd->add_subcommand("latency", "per-command latency around one reconfiguration");
    benchLatency->add_option("--out", outDir, "output directory");
    benchLatency->add_option("--delay-ms", delayMs, "simulated one-way link delay");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simRun->parsed())
            return cmd_sim_run(seed, planFile, nodes, backend, speculation, traceNet, traceOut,
                               seedOpt->count() > 0, nodesOpt->count() > 0,
                               backendOpt->count() > 0, specOpt->count() > 0);
        if (simGen->parsed()) {
            PlanShape shape;
            shape.nodesLo = shape.nodesHi = genNodes;
            shape.commands = genCommands;
            spill(genOut, make_plan(genSeed, shape).to_text());
            std::cout << "wrote " << genOut << "\n";
            return 0;
        }
        if (check->parsed()) return cmd_check(traceFile, correctCsv);
        if (nodeRun->parsed())
            return cmd_node_run(nodeId, listen, configFile, nodeBackend, nodeSpec, nodeTrace,
                                cmFlag);
        if (adminStatus->parsed()) return cmd_admin_status(adminTo);
        if (adminPropose->parsed()) return cmd_admin_propose(adminTo, propKey, propPayload);
        if (adminRecon->parsed()) return cmd_admin_recon(adminTo, reconMembers);
        if (benchBaseline->parsed()) {
            bench::LoadSpec load;
            load.durationMs = durationMs;
            load.warmupMs = warmupMs;
            auto res = bench::run_baseline(outDir, load);
            std::cout << "knee at " << res.kneeThreads << " generators; wrote " << outDir
                      << "/baseline.csv\n";
            return 0;
        }
        if (benchSweep->parsed()) {
            bench::LoadSpec load;
            load.durationMs = durationMs;
            load.warmupMs = warmupMs;
            auto pts = bench::run_recon_sweep(outDir, load);
            for (const auto& p : pts)
                std::cout << p.rate << " recon/s: " << p.stats.throughput
                          << " cps, degradation " << p.degradationPct << "%, trace "
                          << (p.traceOk ? "ok" : "VIOLATED") << "\n";
            std::cout << "wrote " << outDir << "/recon_sweep.csv\n";
            return 0;
        }
        if (benchLatency->parsed()) {
            bench::run_latency_around_recon(outDir, delayMs);
            std::cout << "wrote " << outDir << "/latency.csv\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
