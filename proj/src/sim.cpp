#include "trellis/sim.hpp"

#include <algorithm>
#include <memory>
#include <queue>
#include <utility>

#include "trellis/codec.hpp"
#include "trellis/detail/text.hpp"
#include "trellis/paxos.hpp"
#include "trellis/replica.hpp"
#include "trellis/rt/cq.hpp"

namespace trellis {

using namespace detail;

std::string Plan::to_text() const {
    std::string out = "P seed=" + std::to_string(seed);
    out += " nodes=" + join_ids(nodes);
    require_token(backend);
    out += " backend=" + backend;
    out += " speculation=";
    out += speculation ? "on" : "off";
    out += " c0=" + config_token(c0);
    out += " delay=";
    out += delay.fixed ? "fixed:" + std::to_string(delay.lo)
                       : "uniform:" + std::to_string(delay.lo) + ":" + std::to_string(delay.hi);
    out += " tick=" + std::to_string(tickMs);
    out += " gossip=" + std::to_string(gossipMs);
    out += " horizon=" + std::to_string(horizonMs);
    out += " tracenet=";
    out += traceNet ? '1' : '0';
    out += " serial=";
    out += serial ? '1' : '0';
    out += '\n';
    for (const auto& op : ops) {
        out += "A t=" + std::to_string(op.t);
        switch (op.kind) {
            case PlanOp::Kind::Propose:
                require_token(op.node.v);
                require_token(op.key);
                out += " propose node=" + op.node.v + " key=" + op.key +
                       " payload=" + hex_bytes(op.payload);
                break;
            case PlanOp::Kind::Recon:
                require_token(op.node.v);
                out += " recon node=" + op.node.v + " members=" + join_ids(op.members);
                break;
            case PlanOp::Kind::Crash:
                require_token(op.node.v);
                out += " crash node=" + op.node.v;
                break;
        }
        out += '\n';
    }
    return out;
}

Plan Plan::from_text(const std::string& text) {
    Plan p;
    bool sawHeader = false;
    size_t lineNo = 0;
    for (auto& line : split(text, '\n')) {
        ++lineNo;
        if (line.empty() || line[0] == '#') continue;
        auto toks = tokens_of(line);
        try {
            if (toks[0] == "P") {
                p.seed = parse_u64(kv(toks.at(1), "seed"));
                p.nodes = parse_ids(kv(toks.at(2), "nodes"));
                p.backend = kv(toks.at(3), "backend");
                std::string spec = kv(toks.at(4), "speculation");
                if (spec != "on" && spec != "off") throw CodecError("bad speculation flag");
                p.speculation = spec == "on";
                p.c0 = parse_config(kv(toks.at(5), "c0"));
                auto d = split(kv(toks.at(6), "delay"), ':');
                if (d.size() == 2 && d[0] == "fixed") {
                    p.delay = DelayModel::fixed_ms(parse_i64(d[1]));
                } else if (d.size() == 3 && d[0] == "uniform") {
                    p.delay = DelayModel::uniform_ms(parse_i64(d[1]), parse_i64(d[2]));
                } else {
                    throw CodecError("bad delay model: " + kv(toks.at(6), "delay"));
                }
                p.tickMs = parse_i64(kv(toks.at(7), "tick"));
                p.gossipMs = parse_i64(kv(toks.at(8), "gossip"));
                p.horizonMs = parse_i64(kv(toks.at(9), "horizon"));
                p.traceNet = kv(toks.at(10), "tracenet") == "1";
                p.serial = kv(toks.at(11), "serial") == "1";
                sawHeader = true;
            } else if (toks[0] == "A") {
                PlanOp op;
                op.t = parse_i64(kv(toks.at(1), "t"));
                const std::string& what = toks.at(2);
                if (what == "propose") {
                    op.kind = PlanOp::Kind::Propose;
                    op.node = NodeId{kv(toks.at(3), "node")};
                    op.key = kv(toks.at(4), "key");
                    op.payload = unhex_bytes(kv(toks.at(5), "payload"));
                } else if (what == "recon") {
                    op.kind = PlanOp::Kind::Recon;
                    op.node = NodeId{kv(toks.at(3), "node")};
                    op.members = parse_ids(kv(toks.at(4), "members"));
                    if (op.members.empty()) throw CodecError("recon with no members");
                } else if (what == "crash") {
                    op.kind = PlanOp::Kind::Crash;
                    op.node = NodeId{kv(toks.at(3), "node")};
                } else {
                    throw CodecError("unknown plan action: " + what);
                }
                p.ops.push_back(std::move(op));
            } else {
                throw CodecError("unknown plan record type: " + toks[0]);
            }
        } catch (const std::out_of_range&) {
            throw CodecError("plan line " + std::to_string(lineNo) + " is missing fields");
        } catch (const std::invalid_argument&) {
            throw CodecError("plan line " + std::to_string(lineNo) + " has a malformed number");
        }
    }
    if (!sawHeader) throw CodecError("plan has no header line");
    return p;
}

namespace {

struct Ev {
    int64_t t = 0;
    uint64_t seq = 0;
    enum Kind { Tick, Deliver, Op, ReconRetry, SerialKick } kind = Tick;
    NodeId from, to;
    std::string payload;  // class byte + body
    size_t op = 0;
    int remaining = 0;
};

struct EvAfter {
    bool operator()(const Ev& a, const Ev& b) const {
        if (a.t != b.t) return a.t > b.t;
        return a.seq > b.seq;
    }
};

class Sim {
public:
    explicit Sim(const Plan& plan) : plan_(plan), rng_(plan.seed) {}

    SimResult run();

private:
    struct Node {
        NodeId id;
        std::unique_ptr<Replica> replica;
        std::unique_ptr<CommandQueue> cq;
        bool crashed = false;
    };

    void push(Ev ev) {
        ev.seq = evSeq_++;
        if (ev.kind == Ev::Deliver) ++pendingMsgs_;
        else if (ev.kind != Ev::Tick) ++pendingOps_;
        heap_.push(std::move(ev));
    }

    int64_t sample_delay() {
        if (plan_.delay.fixed) return plan_.delay.lo;
        return plan_.delay.lo +
               static_cast<int64_t>(splitmix64(rng_) %
                                    static_cast<uint64_t>(plan_.delay.hi - plan_.delay.lo + 1));
    }

    void send(const NodeId& from, const Replica::Outbound& ob) {
        auto it = nodes_.find(ob.to);
        if (it == nodes_.end()) {
            ++result_.dropped;
            return;
        }
        std::string payload;
        payload.reserve(ob.payload.size() + 1);
        payload += static_cast<char>(static_cast<uint8_t>(ob.cls));
        payload += ob.payload;
        if (plan_.traceNet)
            trace_.records.push_back(TraceNet{now_, false, from, ob.to,
                                              static_cast<uint8_t>(ob.cls),
                                              static_cast<uint32_t>(ob.payload.size()),
                                              fnv1a(ob.payload)});
        int64_t& last = linkLast_[{from, ob.to}];
        int64_t at = std::max(now_ + sample_delay(), last);
        last = at;
        Ev ev;
        ev.t = at;
        ev.kind = Ev::Deliver;
        ev.from = from;
        ev.to = ob.to;
        ev.payload = std::move(payload);
        push(std::move(ev));
    }

    void drain(Node& n) {
        for (;;) {
            auto outputs = n.replica->take_outputs();
            auto outbox = n.replica->take_outbox();
            if (outputs.empty() && outbox.empty()) break;
            for (auto& ev : outputs) {
                TraceOutput o;
                o.t = now_;
                o.node = n.id;
                o.seq = ev.seq;
                o.kind = ev.kind;
                o.id = std::string(ev.body.entry_id());
                if (ev.kind != OutputKind::Learn) o.members = ev.body.config().members;
                trace_.records.push_back(std::move(o));
                switch (ev.kind) {
                    case OutputKind::Learn:
                        n.cq->on_learned(std::string(ev.body.entry_id()));
                        break;
                    case OutputKind::Ready:
                        n.cq->on_ready(ev.body.config().id);
                        break;
                    case OutputKind::NewConf:
                        result_.installed[n.id].insert(ev.body.config().id);
                        break;
                }
            }
            for (auto& ob : outbox) send(n.id, ob);
        }
        if (serialWaitCfg_ && n.id == serialWaitNode_ && n.replica->cur_conf() == *serialWaitCfg_) {
            serialWaitCfg_.reset();
            serial_advance();
        }
    }

    void serial_advance() {
        if (serialIdx_ >= plan_.ops.size()) return;
        size_t i = serialIdx_++;
        Ev ev;
        ev.t = std::max(now_, plan_.ops[i].t);
        ev.kind = Ev::SerialKick;
        ev.op = i;
        push(std::move(ev));
    }

    void run_op(size_t idx, int retriesLeft) {
        const PlanOp& op = plan_.ops[idx];
        auto it = nodes_.find(op.node);
        if (it == nodes_.end()) throw CodecError("plan op targets unknown node " + op.node.v);
        Node& n = it->second;
        switch (op.kind) {
            case PlanOp::Kind::Crash:
                if (!n.crashed) {
                    n.crashed = true;
                    TraceInput in;
                    in.t = now_;
                    in.kind = TraceInput::Kind::Crash;
                    in.node = n.id;
                    trace_.records.push_back(std::move(in));
                }
                if (plan_.serial) serial_advance();
                break;
            case PlanOp::Kind::Propose:
                if (n.crashed) {
                    if (plan_.serial) serial_advance();
                    break;
                }
                if (plan_.serial) serialWaitKey_ = op.key;
                n.cq->submit(op.key, op.payload, now_);
                drain(n);
                break;
            case PlanOp::Kind::Recon: {
                if (n.crashed) {
                    if (plan_.serial) serial_advance();
                    break;
                }
                ConfigId parent = n.replica->cur_conf();
                if (!n.replica->branch_open(parent) || !n.replica->ready_seen(parent)) {
                    if (plan_.serial) {
                        serial_advance();
                    } else if (retriesLeft > 0) {
                        Ev ev;
                        ev.t = now_ + 200;
                        ev.kind = Ev::ReconRetry;
                        ev.op = idx;
                        ev.remaining = retriesLeft - 1;
                        push(std::move(ev));
                    }
                    break;
                }
                Configuration c;
                c.id = ConfigId{"R" + std::to_string(++cfgSeq_)};
                c.members = op.members;
                TraceInput in;
                in.t = now_;
                in.kind = TraceInput::Kind::Recon;
                in.node = n.id;
                in.conf = parent;
                in.newConf = c;
                trace_.records.push_back(std::move(in));
                if (plan_.serial) {
                    serialWaitNode_ = n.id;
                    serialWaitCfg_ = c.id;
                }
                n.replica->recon(parent, c);
                drain(n);
                break;
            }
        }
    }

    bool quiescent_now() {
        if (pendingMsgs_ || pendingOps_) return false;
        if (serialWaitCfg_ || !serialWaitKey_.empty() || serialIdx_ < serialScheduled_) return false;
        for (auto& [id, n] : nodes_) {
            if (n.crashed) continue;
            if (!n.cq->idle()) return false;
            if (!n.replica->engines_quiescent()) return false;
        }
        const std::string* ref = nullptr;
        for (auto& [id, n] : nodes_) {
            if (n.crashed || !n.replica->active()) continue;
            if (!ref) ref = &n.replica->trunk_bytes();
            else if (*ref != n.replica->trunk_bytes())
                throw ConsistencyFault("run settled with diverged trunks");
        }
        return true;
    }

    const Plan& plan_;
    uint64_t rng_;
    std::priority_queue<Ev, std::vector<Ev>, EvAfter> heap_;
    uint64_t evSeq_ = 0;
    size_t pendingMsgs_ = 0;
    size_t pendingOps_ = 0;
    int64_t now_ = 0;
    std::map<NodeId, Node> nodes_;
    std::map<std::pair<NodeId, NodeId>, int64_t> linkLast_;
    Trace trace_;
    SimResult result_;
    uint64_t cfgSeq_ = 0;
    size_t serialIdx_ = 0;
    size_t serialScheduled_ = 0;
    std::string serialWaitKey_;
    NodeId serialWaitNode_;
    std::optional<ConfigId> serialWaitCfg_;
};

SimResult Sim::run() {
    if (plan_.nodes.empty()) throw CodecError("plan has no nodes");
    if (plan_.backend != "paxos" && plan_.backend != "sequencer")
        throw CodecError("unknown backend: " + plan_.backend);

    trace_.header.seed = plan_.seed;
    trace_.header.nodes = plan_.nodes;
    trace_.header.backend = plan_.backend;
    trace_.header.speculation = plan_.speculation;
    trace_.header.c0 = plan_.c0;

    EngineFactory factory;
    if (plan_.backend == "paxos") {
        factory = [](const Configuration& c, const NodeId& self, const NodeId& leader) {
            return std::make_unique<PaxosEngine>(c, self, leader);
        };
    } else {
        factory = [](const Configuration& c, const NodeId& self, const NodeId& leader) {
            return std::make_unique<SequencerEngine>(c, self, leader);
        };
    }

    ReplicaOptions ropt;
    ropt.speculation = plan_.speculation;
    ropt.gossipMs = plan_.gossipMs;
    ropt.gossipRefreshMs = 0;  // links never lose frames here

    for (const auto& id : plan_.nodes) {
        Node& n = nodes_[id];
        n.id = id;
        n.replica = std::make_unique<Replica>(id, plan_.c0, factory, ropt);
        CommandQueue::Hooks hooks;
        hooks.propose = [this, id](const ConfigId& c, const Command& cmd) {
            TraceInput in;
            in.t = now_;
            in.kind = TraceInput::Kind::Propose;
            in.node = id;
            in.conf = c;
            in.cmd = cmd;
            trace_.records.push_back(std::move(in));
            nodes_.at(id).replica->propose(c, cmd);
        };
        hooks.configDead = [this, id](const ConfigId& c) {
            return nodes_.at(id).replica->config_dead(c);
        };
        hooks.done = [this, id](const std::string& key, bool ok, int64_t submittedAt) {
            if (ok) result_.latencyByKey[key] = now_ - submittedAt;
            else result_.failedKeys.push_back(key);
            if (key == serialWaitKey_) {
                serialWaitKey_.clear();
                serial_advance();
            }
        };
        n.cq = std::make_unique<CommandQueue>(id, std::move(hooks));
        if (plan_.c0.has_member(id)) n.cq->on_ready(plan_.c0.id);
    }

    if (plan_.serial) {
        serialScheduled_ = plan_.ops.size();
        serialIdx_ = 0;
        if (!plan_.ops.empty()) {
            serialIdx_ = 1;
            Ev ev;
            ev.t = plan_.ops[0].t;
            ev.kind = Ev::SerialKick;
            ev.op = 0;
            push(std::move(ev));
        } else {
            serialScheduled_ = 0;
        }
    } else {
        for (size_t i = 0; i < plan_.ops.size(); ++i) {
            Ev ev;
            ev.t = plan_.ops[i].t;
            ev.kind = Ev::Op;
            ev.op = i;
            push(std::move(ev));
        }
    }
    push(Ev{});  // first tick at t=0

    bool quiescent = false;
    while (!heap_.empty()) {
        Ev ev = heap_.top();
        heap_.pop();
        if (ev.t > plan_.horizonMs) break;
        now_ = ev.t;
        switch (ev.kind) {
            case Ev::Tick: {
                for (auto& [id, n] : nodes_) {
                    if (n.crashed) continue;
                    n.replica->on_tick(now_);
                    drain(n);
                    n.cq->on_tick(now_);
                    drain(n);
                }
                if (quiescent_now()) {
                    quiescent = true;
                } else {
                    Ev next;
                    next.t = now_ + plan_.tickMs;
                    next.kind = Ev::Tick;
                    push(std::move(next));
                }
                break;
            }
            case Ev::Deliver: {
                --pendingMsgs_;
                Node& n = nodes_.at(ev.to);
                if (n.crashed) {
                    ++result_.dropped;
                    break;
                }
                ++result_.delivered;
                if (plan_.traceNet)
                    trace_.records.push_back(
                        TraceNet{now_, true, ev.from, ev.to,
                                 static_cast<uint8_t>(ev.payload[0]),
                                 static_cast<uint32_t>(ev.payload.size() - 1),
                                 fnv1a(std::string_view(ev.payload).substr(1))});
                MsgClass cls = static_cast<MsgClass>(static_cast<uint8_t>(ev.payload[0]));
                ByteReader r(std::string_view(ev.payload).substr(1));
                n.replica->on_message(ev.from, cls, r);
                drain(n);
                break;
            }
            case Ev::Op:
                --pendingOps_;
                run_op(ev.op, 20);
                break;
            case Ev::ReconRetry:
                --pendingOps_;
                run_op(ev.op, ev.remaining);
                break;
            case Ev::SerialKick:
                --pendingOps_;
                run_op(ev.op, 0);
                break;
        }
        if (quiescent) break;
    }

    result_.quiescent = quiescent;
    result_.endMs = now_;
    trace_.quiescent = quiescent;
    for (auto& [id, n] : nodes_) {
        for (const auto& [k, v] : n.replica->engine_counters()) result_.counters[k] += v;
        if (!n.crashed) result_.trunks[id] = n.replica->trunk();
    }
    result_.trace = std::move(trace_);
    return std::move(result_);
}

}  // namespace

SimResult run_sim(const Plan& plan) { return Sim(plan).run(); }

Plan make_plan(uint64_t seed, const PlanShape& shape) {
    uint64_t rng = seed ^ 0xd1b54a32d192ed03ull;
    auto pick = [&rng](uint64_t n) { return n ? splitmix64(rng) % n : 0; };

    Plan p;
    p.seed = seed;
    p.backend = shape.backend;
    p.speculation = shape.speculation;
    p.delay = DelayModel::uniform_ms(20, 80);
    p.tickMs = 5;
    p.gossipMs = 50;
    p.serial = false;

    int n = shape.nodesLo + static_cast<int>(pick(shape.nodesHi - shape.nodesLo + 1));
    for (int i = 1; i <= n; ++i) p.nodes.push_back(NodeId{"n" + std::to_string(i)});
    const NodeId& anchorA = p.nodes[0];
    const NodeId& anchorB = p.nodes[1];

    // Anchors are always members; victims exclude the anchors and the last
    // node, so five-member configurations keep three correct members.
    std::vector<NodeId> others(p.nodes.begin() + 2, p.nodes.end());
    std::vector<NodeId> victims(p.nodes.begin() + 2, p.nodes.end() - (n > 3 ? 1 : 0));
    if (n == 3) victims.clear();

    auto shuffle = [&](std::vector<NodeId>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[pick(i)]);
    };
    auto pick_members = [&]() {
        std::vector<NodeId> m{anchorA, anchorB};
        bool big = n == 5 && pick(3) == 0;
        std::vector<NodeId> pool = others;
        shuffle(pool);
        size_t extra = big ? 3 : 1;
        for (size_t i = 0; i < extra && i < pool.size(); ++i) m.push_back(pool[i]);
        shuffle(m);
        return m;
    };

    p.c0.id = ConfigId{"C0"};
    p.c0.members = pick_members();

    int64_t t = 100;
    int sinceRecon = 0;
    int nextRecon = shape.reconEveryLo +
                    static_cast<int>(pick(shape.reconEveryHi - shape.reconEveryLo + 1));
    for (int i = 0; i < shape.commands; ++i) {
        PlanOp op;
        op.kind = PlanOp::Kind::Propose;
        op.t = t;
        op.node = (i % 2) ? anchorB : anchorA;
        op.key = "k" + std::to_string(i);
        op.payload = "v" + std::to_string(i);
        p.ops.push_back(std::move(op));
        if (++sinceRecon >= nextRecon) {
            sinceRecon = 0;
            nextRecon = shape.reconEveryLo +
                        static_cast<int>(pick(shape.reconEveryHi - shape.reconEveryLo + 1));
            PlanOp rc;
            rc.kind = PlanOp::Kind::Recon;
            rc.t = t + shape.cmdGapMs / 2;
            rc.node = pick(2) ? anchorB : anchorA;
            rc.members = pick_members();
            p.ops.push_back(rc);
            if (shape.racingRecons && pick(4) == 0) {
                PlanOp rc2;
                rc2.kind = PlanOp::Kind::Recon;
                rc2.t = rc.t;
                rc2.node = rc.node == anchorA ? anchorB : anchorA;
                rc2.members = pick_members();
                p.ops.push_back(std::move(rc2));
            }
        }
        t += shape.cmdGapMs;
    }

    if (!victims.empty() && shape.maxCrashes > 0) {
        size_t budget = std::min<size_t>(shape.maxCrashes, victims.size());
        size_t count = pick(budget + 1);
        std::vector<NodeId> pool = victims;
        shuffle(pool);
        for (size_t i = 0; i < count; ++i) {
            PlanOp op;
            op.kind = PlanOp::Kind::Crash;
            op.t = 100 + static_cast<int64_t>(pick(static_cast<uint64_t>(t - 100)));
            op.node = pool[i];
            p.ops.push_back(std::move(op));
        }
    }

    p.horizonMs = t + 120000;
    return p;
}

}  // namespace trellis
