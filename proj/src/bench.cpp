#include "trellis/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "trellis/checker.hpp"
#include "trellis/rt/client.hpp"

namespace trellis::bench {

namespace fs = std::filesystem;
using clock_t_ = std::chrono::steady_clock;

namespace {

std::string fmt3(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.3f", v);
    return b;
}

std::string fmtg(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%g", v);
    return b;
}

double percentile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0;
    size_t idx = static_cast<size_t>(q * static_cast<double>(sorted.size()));
    if (idx >= sorted.size()) idx = sorted.size() - 1;
    return sorted[idx];
}

uint16_t pick_base_port() {
    static std::atomic<uint32_t> salt{0};
    auto ns = std::chrono::steady_clock::now().time_since_epoch().count();
    uint32_t s = salt.fetch_add(64);
    return static_cast<uint16_t>(18000 + ((static_cast<uint64_t>(ns) / 1000 + s) % 40000));
}

}  // namespace

void emit_csv(const std::string& path, const std::string& header,
              const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << header << '\n';
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) f << ',';
            f << row[i];
        }
        f << '\n';
    }
}

LocalCluster::LocalCluster(ClusterSpec spec) : spec_(std::move(spec)) {}

LocalCluster::~LocalCluster() { stop(); }

NodeId LocalCluster::id(size_t i) const { return NodeId{"n" + std::to_string(i + 1)}; }

std::string LocalCluster::addr(size_t i) const { return cc_.addrs.at(id(i)); }

void LocalCluster::start() {
    if (started_) return;
    size_t count = static_cast<size_t>(spec_.members + spec_.standbys);
    if (spec_.members < 1) throw std::runtime_error("cluster needs at least one member");
    if (!spec_.traceDir.empty()) fs::create_directories(spec_.traceDir);

    for (int attempt = 0; attempt < 5; ++attempt) {
        uint16_t base = pick_base_port();
        cc_ = rt::ClusterConfig{};
        cc_.c0.id = ConfigId{"C0"};
        for (size_t i = 0; i < count; ++i) {
            cc_.addrs[id(i)] = "127.0.0.1:" + std::to_string(base + i);
            if (i < static_cast<size_t>(spec_.members)) cc_.c0.members.push_back(id(i));
        }
        traceFiles_.clear();
        hosts_.clear();
        bool ok = true;
        for (size_t i = 0; i < count && ok; ++i) {
            rt::NodeOptions no;
            no.id = id(i);
            no.cluster = cc_;
            no.backend = spec_.backend;
            no.speculation = spec_.speculation;
            no.cmEnabled = spec_.cmEnabled;
            no.tickMs = spec_.tickMs;
            no.gossipMs = spec_.gossipMs;
            if (!spec_.traceDir.empty()) {
                std::string prefix = spec_.tag.empty() ? "" : spec_.tag + "_";
                no.traceFile = (fs::path(spec_.traceDir) / (prefix + id(i).v + ".trace")).string();
                traceFiles_.push_back(no.traceFile);
            }
            auto host = std::make_unique<rt::NodeHost>(std::move(no));
            try {
                host->start();
            } catch (const std::runtime_error&) {
                ok = false;
                break;
            }
            hosts_.push_back(std::move(host));
        }
        if (ok) {
            started_ = true;
            return;
        }
        for (auto& h : hosts_) h->stop();
        hosts_.clear();
    }
    throw std::runtime_error("could not find a free port range for the cluster");
}

void LocalCluster::stop() {
    if (!started_) return;
    for (auto& h : hosts_) h->stop();
    started_ = false;
}

bool LocalCluster::settle(int64_t timeoutMs) {
    auto deadline = clock_t_::now() + std::chrono::milliseconds(timeoutMs);
    while (clock_t_::now() < deadline) {
        bool good = true;
        uint64_t len = 0;
        for (size_t i = 0; i < hosts_.size() && good; ++i) {
            auto st = hosts_[i]->status();
            if (!st.active || !hosts_[i]->idle()) {
                good = false;
            } else if (i == 0) {
                len = st.trunkLen;
            } else if (st.trunkLen != len) {
                good = false;
            }
        }
        if (good) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
    return false;
}

Trace LocalCluster::merged_trace() const {
    std::vector<Trace> parts;
    for (const auto& path : traceFiles_) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read trace file " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        parts.push_back(Trace::from_text(ss.str()));
    }
    return merge_traces(parts);
}

RunStats run_load(LocalCluster& cluster, const LoadSpec& load) {
    static std::atomic<uint64_t> runNonce{0};
    uint64_t nonce = ++runNonce;

    RunStats out;
    if (load.threads <= 0) return out;

    auto t0 = clock_t_::now();
    auto wStart = t0 + std::chrono::milliseconds(load.warmupMs);
    auto wEnd = wStart + std::chrono::milliseconds(load.durationMs);
    std::atomic<bool> stopFlag{false};

    struct GenResult {
        std::vector<double> lat;
        uint64_t completed = 0;
        uint64_t failed = 0;
    };
    std::vector<GenResult> gens(static_cast<size_t>(load.threads));
    std::vector<std::thread> threads;
    std::string payload(load.payloadBytes, 'x');

    for (int g = 0; g < load.threads; ++g) {
        threads.emplace_back([&, g] {
            GenResult& me = gens[static_cast<size_t>(g)];
            try {
                auto c = rt::Client::connect(
                    cluster.addr(static_cast<size_t>(g) % cluster.members()));
                uint64_t i = 0;
                std::string prefix =
                    "r" + std::to_string(nonce) + "g" + std::to_string(g) + "k";
                while (!stopFlag.load(std::memory_order_relaxed)) {
                    std::string key = prefix + std::to_string(i++);
                    auto a = clock_t_::now();
                    bool ok = c.propose(key, payload, 30000);
                    auto b = clock_t_::now();
                    if (b >= wStart && b < wEnd) {
                        if (ok) {
                            me.completed++;
                            me.lat.push_back(
                                std::chrono::duration<double, std::milli>(b - a).count());
                        } else {
                            me.failed++;
                        }
                    }
                }
            } catch (const std::exception&) {
                me.failed++;
            }
        });
    }

    std::this_thread::sleep_until(wEnd);
    stopFlag.store(true);
    for (auto& t : threads) t.join();

    for (auto& g : gens) {
        out.completed += g.completed;
        out.failed += g.failed;
        out.latenciesMs.insert(out.latenciesMs.end(), g.lat.begin(), g.lat.end());
    }
    std::sort(out.latenciesMs.begin(), out.latenciesMs.end());
    if (load.durationMs > 0)
        out.throughput =
            static_cast<double>(out.completed) / (static_cast<double>(load.durationMs) / 1000.0);
    out.p50 = percentile(out.latenciesMs, 0.50);
    out.p95 = percentile(out.latenciesMs, 0.95);
    out.p99 = percentile(out.latenciesMs, 0.99);
    return out;
}

struct ReconChurn::Impl {
    std::thread th;
    std::atomic<bool> stopFlag{false};
    std::atomic<uint64_t> accepted{0};
    std::atomic<uint64_t> rejected{0};
};

ReconChurn::ReconChurn(LocalCluster& cluster, double ratePerSec) : impl_(new Impl) {
    if (ratePerSec <= 0 || cluster.total() <= cluster.members()) return;
    Impl* im = impl_.get();
    std::string anchor = cluster.addr(0);
    std::vector<NodeId> keep;
    for (size_t i = 0; i + 1 < cluster.members(); ++i) keep.push_back(cluster.id(i));
    NodeId inside = cluster.id(cluster.members() - 1);   // rotates out first
    NodeId outside = cluster.id(cluster.members());      // first standby
    auto period = std::chrono::duration_cast<clock_t_::duration>(
        std::chrono::duration<double>(1.0 / ratePerSec));
    im->th = std::thread([im, anchor, keep, inside, outside, period] {
        rt::Client c;
        try {
            c = rt::Client::connect(anchor);
        } catch (const std::exception&) {
            return;
        }
        bool swapped = false;
        int consecutiveErrors = 0;
        auto next = clock_t_::now() + period;
        while (!im->stopFlag.load(std::memory_order_relaxed)) {
            std::this_thread::sleep_until(next);
            next += period;
            if (im->stopFlag.load(std::memory_order_relaxed)) break;
            std::vector<NodeId> m = keep;
            m.push_back(swapped ? inside : outside);
            try {
                auto [ok, detail] = c.recon(m, 5000);
                (void)detail;
                if (ok) {
                    im->accepted++;
                    swapped = !swapped;
                } else {
                    im->rejected++;
                }
                consecutiveErrors = 0;
            } catch (const std::exception&) {
                im->rejected++;
                if (++consecutiveErrors > 10) break;
                try {
                    c = rt::Client::connect(anchor);
                } catch (const std::exception&) {
                    break;
                }
            }
        }
    });
}

ReconChurn::~ReconChurn() {
    impl_->stopFlag.store(true);
    if (impl_->th.joinable()) impl_->th.join();
}

uint64_t ReconChurn::accepted() const { return impl_->accepted.load(); }
uint64_t ReconChurn::rejected() const { return impl_->rejected.load(); }

BaselineResult run_baseline(const std::string& outDir, LoadSpec load,
                            std::vector<int> threadCounts, const std::string& backend) {
    fs::create_directories(outDir);
    const std::string header = "threads,throughput_cps,p50_ms,p95_ms,p99_ms";
    BaselineResult res;
    if (load.durationMs <= 0) {
        emit_csv((fs::path(outDir) / "baseline.csv").string(), header, {});
        return res;
    }
    std::vector<std::vector<std::string>> rows;
    for (int t : threadCounts) {
        ClusterSpec cs;
        cs.backend = backend;
        cs.standbys = 0;
        LocalCluster cl(cs);
        cl.start();
        LoadSpec l = load;
        l.threads = t;
        RunStats stats = run_load(cl, l);
        cl.stop();
        res.points.push_back({t, stats});
        rows.push_back({std::to_string(t), fmt3(stats.throughput), fmt3(stats.p50),
                        fmt3(stats.p95), fmt3(stats.p99)});
    }
    double peak = 0;
    for (const auto& p : res.points) peak = std::max(peak, p.stats.throughput);
    res.kneeThreads = res.points.empty() ? 0 : res.points.front().threads;
    for (const auto& p : res.points) {
        if (p.stats.throughput >= 0.9 * peak) {
            res.kneeThreads = p.threads;
            break;
        }
    }
    emit_csv((fs::path(outDir) / "baseline.csv").string(), header, rows);
    return res;
}

std::vector<SweepPoint> run_recon_sweep(const std::string& outDir, LoadSpec load,
                                        std::vector<double> rates, const std::string& backend) {
    fs::create_directories(outDir);
    const std::string header =
        "recons_per_sec,throughput_cps,p50_ms,p95_ms,p99_ms,degradation_pct,trace_ok";
    std::vector<SweepPoint> pts;
    if (load.durationMs <= 0) {
        emit_csv((fs::path(outDir) / "recon_sweep.csv").string(), header, {});
        return pts;
    }
    std::vector<std::vector<std::string>> rows;
    double baseThroughput = 0;
    for (double rate : rates) {
        ClusterSpec cs;
        cs.backend = backend;
        cs.traceDir = (fs::path(outDir) / "traces").string();
        cs.tag = "sweep_r" + fmtg(rate);
        LocalCluster cl(cs);
        cl.start();
        RunStats stats;
        {
            std::unique_ptr<ReconChurn> churn;
            if (rate > 0) churn = std::make_unique<ReconChurn>(cl, rate);
            stats = run_load(cl, load);
        }
        cl.settle();
        cl.stop();
        CheckReport report = check_trace(cl.merged_trace());
        SweepPoint p;
        p.rate = rate;
        p.stats = stats;
        p.traceOk = report.violations.empty();
        if (rate == 0 && baseThroughput <= 0) baseThroughput = stats.throughput;
        if (rate > 0 && baseThroughput > 0)
            p.degradationPct = 100.0 * (1.0 - stats.throughput / baseThroughput);
        pts.push_back(p);
        rows.push_back({fmtg(rate), fmt3(stats.throughput), fmt3(stats.p50), fmt3(stats.p95),
                        fmt3(stats.p99), fmt3(p.degradationPct), p.traceOk ? "1" : "0"});
    }
    emit_csv((fs::path(outDir) / "recon_sweep.csv").string(), header, rows);
    return pts;
}

std::vector<LatencyPoint> run_latency_around_recon(const std::string& outDir, int64_t delayMs) {
    fs::create_directories(outDir);
    std::vector<LatencyPoint> out;
    const int before = 30, after = 30;
    const int64_t start = 1000, gap = 50;
    for (bool speculation : {true, false}) {
        Plan p;
        p.seed = 7;
        p.nodes = {NodeId{"n1"}, NodeId{"n2"}, NodeId{"n3"}};
        p.backend = "paxos";
        p.speculation = speculation;
        p.c0 = Configuration{ConfigId{"C0"}, p.nodes};
        p.delay = DelayModel::fixed_ms(delayMs);
        p.tickMs = 5;
        p.gossipMs = 25;
        p.horizonMs = start + gap * (before + after) + 60000;
        int64_t mark = start + gap * before;
        for (int i = 0; i < before + after; ++i) {
            int64_t t = start + gap * i;
            if (i == before) {
                PlanOp recon;
                recon.kind = PlanOp::Kind::Recon;
                recon.t = mark;
                recon.node = NodeId{"n3"};
                recon.members = p.nodes;
                p.ops.push_back(recon);
            }
            PlanOp op;
            op.kind = PlanOp::Kind::Propose;
            op.t = t;
            op.node = NodeId{"n2"};
            op.key = "k" + std::to_string(i);
            op.payload = "p";
            p.ops.push_back(op);
        }
        SimResult res = run_sim(p);
        for (int i = 0; i < before + after; ++i) {
            auto it = res.latencyByKey.find("k" + std::to_string(i));
            if (it == res.latencyByKey.end()) continue;
            out.push_back({i - before, speculation, static_cast<double>(it->second)});
        }
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto& lp : out) {
        rows.push_back({std::to_string(lp.offset), lp.speculation ? "on" : "off",
                        fmt3(lp.latencyMs)});
    }
    emit_csv((fs::path(outDir) / "latency.csv").string(), "offset,speculation,latency_ms", rows);
    return out;
}

}  // namespace trellis::bench
