#include "trellis/rt/node.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "trellis/detail/text.hpp"
#include "trellis/rt/frame.hpp"

namespace trellis::rt {

namespace {

int64_t wall_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

int64_t env_ms(const char* name, int64_t fallback) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return fallback;
    try {
        size_t used = 0;
        long long parsed = std::stoll(v, &used);
        if (used != std::string(v).size() || parsed <= 0) throw std::invalid_argument("");
        return parsed;
    } catch (const std::exception&) {
        throw std::runtime_error(std::string(name) + " must be a positive integer, got '" + v +
                                 "'");
    }
}

}  // namespace

std::string ClusterConfig::to_text() const {
    detail::require_token(c0.id.v);
    std::string out = "config " + c0.id.v + "\n";
    for (const auto& m : c0.members) {
        auto it = addrs.find(m);
        out += "member " + m.v + " " + (it == addrs.end() ? "?" : it->second) + "\n";
    }
    for (const auto& [id, addr] : addrs) {
        if (!c0.has_member(id)) out += "standby " + id.v + " " + addr + "\n";
    }
    return out;
}

ClusterConfig ClusterConfig::from_text(const std::string& text) {
    ClusterConfig cc;
    size_t lineNo = 0;
    bool sawConfig = false;
    for (auto& line : detail::split(text, '\n')) {
        ++lineNo;
        auto hash = line.find('#');
        std::string body = hash == std::string::npos ? line : line.substr(0, hash);
        auto toks = detail::tokens_of(body);
        if (toks.empty()) continue;
        try {
            if (toks[0] == "config") {
                if (sawConfig) throw CodecError("duplicate config line");
                if (toks.size() != 2) throw CodecError("config takes exactly one id");
                detail::require_token(toks[1]);
                cc.c0.id = ConfigId{toks[1]};
                sawConfig = true;
            } else if (toks[0] == "member" || toks[0] == "standby") {
                if (!sawConfig) throw CodecError("config line must come first");
                if (toks.size() != 3) throw CodecError(toks[0] + " takes an id and an address");
                detail::require_token(toks[1]);
                NodeId id{toks[1]};
                if (cc.addrs.count(id)) throw CodecError("duplicate node id " + id.v);
                split_addr(toks[2]);  // validates
                cc.addrs[id] = toks[2];
                if (toks[0] == "member") cc.c0.members.push_back(id);
            } else {
                throw CodecError("unknown directive '" + toks[0] + "'");
            }
        } catch (const CodecError& e) {
            throw CodecError("config line " + std::to_string(lineNo) + ": " + e.what());
        }
    }
    if (!sawConfig) throw CodecError("config file has no config line");
    if (cc.c0.members.empty()) throw CodecError("config file lists no members");
    return cc;
}

ClusterConfig ClusterConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void NodeOptions::apply_env() {
    tickMs = env_ms("TRELLIS_TICK_MS", tickMs);
    gossipMs = env_ms("TRELLIS_GOSSIP_MS", gossipMs);
    pingMs = env_ms("TRELLIS_PING_MS", pingMs);
    suspectAfterMs = env_ms("TRELLIS_SUSPECT_MS", suspectAfterMs);
    cq.retryTimeoutMs = env_ms("TRELLIS_CQ_RETRY_MS", cq.retryTimeoutMs);
}

NodeHost::NodeHost(NodeOptions opt) : opt_(std::move(opt)) {}

NodeHost::~NodeHost() { stop(); }

void NodeHost::start() {
    if (started_) return;
    if (opt_.id.v.empty()) throw std::runtime_error("node id must be set");
    auto self = opt_.cluster.addrs.find(opt_.id);
    if (self == opt_.cluster.addrs.end())
        throw std::runtime_error("node " + opt_.id.v + " is not in the config file");
    if (opt_.listen.empty()) opt_.listen = self->second;

    replica_ = std::make_unique<Replica>(
        opt_.id, opt_.cluster.c0, backend_factory(opt_.backend),
        ReplicaOptions{opt_.speculation, opt_.gossipMs, 2000, 100000});

    CommandQueue::Hooks cqHooks;
    cqHooks.propose = [this](const ConfigId& conf, const Command& cmd) {
        TraceInput in;
        in.t = wall_ms();
        in.kind = TraceInput::Kind::Propose;
        in.node = opt_.id;
        in.conf = conf;
        in.cmd = cmd;
        trace_line(trace_record_line(TraceRecord{in}));
        replica_->propose(conf, cmd);
    };
    cqHooks.configDead = [this](const ConfigId& c) { return replica_->config_dead(c); };
    cqHooks.done = [this](const std::string& key, bool ok, int64_t) {
        auto it = clientOfKey_.find(key);
        if (it == clientOfKey_.end()) return;
        tp_->send_client(it->second, MsgClass::ClientRep, client_rep_body(ok, key));
        clientOfKey_.erase(it);
    };
    cq_ = std::make_unique<CommandQueue>(opt_.id, std::move(cqHooks), opt_.cq);
    // The initial configuration never announces itself with a Ready, so
    // founding members aim the queue at it by hand.
    if (opt_.cluster.c0.has_member(opt_.id)) cq_->on_ready(opt_.cluster.c0.id);

    if (opt_.cmEnabled) {
        std::vector<NodeId> pool;
        for (const auto& [id, addr] : opt_.cluster.addrs) pool.push_back(id);
        ConfigManager::Hooks cmHooks;
        cmHooks.lastHeardMs = [this](const NodeId& n) {
            auto at = tp_->last_heard_ms(n);
            if (at < 0) return at;
            // transport reports steady-clock ms; rebase onto the wall clock
            // the manager ticks with
            using namespace std::chrono;
            int64_t steadyNow =
                duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
            return wall_ms() - (steadyNow - at);
        };
        cmHooks.propose = [this](const Configuration& next) {
            ConfigId parent = replica_->cur_conf();
            uint64_t droppedBefore = replica_->dropped_recons();
            TraceInput in;
            in.t = wall_ms();
            in.kind = TraceInput::Kind::Recon;
            in.node = opt_.id;
            in.conf = parent;
            in.newConf = next;
            std::string line = trace_record_line(TraceRecord{in});
            replica_->recon(parent, next);
            if (replica_->dropped_recons() == droppedBefore) trace_line(line);
        };
        CmOptions cmo;
        cmo.suspectAfterMs = opt_.suspectAfterMs;
        cm_ = std::make_unique<ConfigManager>(opt_.id, std::move(pool), std::move(cmHooks), cmo);
    }

    Transport::Options to;
    to.self = opt_.id;
    to.listen = opt_.listen;
    to.addrs = opt_.cluster.addrs;
    Transport::Handlers th;
    th.onPeerFrame = [this](const NodeId& from, MsgClass cls, std::string body) {
        post(InFrame{true, from, 0, cls, std::move(body)});
    };
    th.onClientFrame = [this](uint64_t connId, MsgClass cls, std::string body) {
        post(InFrame{false, NodeId{}, connId, cls, std::move(body)});
    };
    th.onClientGone = [this](uint64_t connId) { post(InGone{connId}); };
    tp_ = std::make_unique<Transport>(std::move(to), std::move(th));

    if (!opt_.traceFile.empty()) {
        traceOut_.open(opt_.traceFile, std::ios::trunc);
        if (!traceOut_) throw std::runtime_error("cannot open trace file: " + opt_.traceFile);
        tracing_ = true;
        TraceHeader h;
        h.seed = 0;
        for (const auto& [id, addr] : opt_.cluster.addrs) h.nodes.push_back(id);
        h.backend = opt_.backend;
        h.speculation = opt_.speculation;
        h.c0 = opt_.cluster.c0;
        traceOut_ << trace_header_line(h) << '\n';
    }

    tp_->start();
    started_ = true;
    {
        std::lock_guard lk(qmu_);
        coreRunning_ = true;
    }
    coreTh_ = std::thread([this] { core_loop(); });
}

void NodeHost::stop() {
    {
        std::lock_guard lk(qmu_);
        if (!started_ || stopping_) return;
        stopping_ = true;
        qcv_.notify_all();
    }
    if (coreTh_.joinable()) coreTh_.join();
    tp_->stop();
    if (tracing_) {
        bool settled =
            !faulted_ && replica_->active() && replica_->engines_quiescent() && cq_->idle();
        traceOut_ << trace_quiescent_line(settled) << '\n';
        traceOut_.flush();
        traceOut_.close();
        tracing_ = false;
    }
}

void NodeHost::post(InEvent ev) {
    std::lock_guard lk(qmu_);
    if (stopping_) return;
    q_.push_back(std::move(ev));
    qcv_.notify_all();
}

void NodeHost::run_on_core(std::function<void()> fn) {
    std::unique_lock lk(qmu_);
    if (!coreRunning_) {
        lk.unlock();
        fn();
        return;
    }
    auto done = std::make_shared<std::promise<void>>();
    auto fut = done->get_future();
    q_.push_back(Task([fn = std::move(fn), done] {
        fn();
        done->set_value();
    }));
    qcv_.notify_all();
    lk.unlock();
    fut.wait();
}

NodeHost::Status NodeHost::snapshot() const {
    Status s;
    s.active = replica_->active();
    s.curConf = replica_->cur_conf();
    s.member = replica_->is_member(s.curConf);
    s.trunkLen = replica_->trunk().size();
    for (const auto& n : replica_->view()) s.view.push_back(n);
    return s;
}

NodeHost::Status NodeHost::status() {
    Status s;
    run_on_core([&] { s = snapshot(); });
    return s;
}

uint64_t NodeHost::cm_proposals() {
    uint64_t n = 0;
    run_on_core([&] { n = cm_ ? cm_->proposals() : 0; });
    return n;
}

bool NodeHost::idle() {
    bool v = false;
    run_on_core([&] { v = cq_->idle() && replica_->engines_quiescent(); });
    return v;
}

void NodeHost::trace_line(const std::string& line) {
    if (!tracing_) return;
    traceOut_ << line << '\n';
    if (++traceLines_ % 256 == 0) traceOut_.flush();
}

void NodeHost::core_loop() {
    using clock = std::chrono::steady_clock;
    const auto tick = std::chrono::milliseconds(opt_.tickMs);
    auto nextTick = clock::now();

    for (;;) {
        InEvent ev;
        bool have = false;
        {
            std::unique_lock lk(qmu_);
            qcv_.wait_until(lk, nextTick, [&] { return stopping_ || !q_.empty(); });
            if (!q_.empty()) {
                ev = std::move(q_.front());
                q_.pop_front();
                have = true;
            } else if (stopping_) {
                break;
            }
        }
        if (have) {
            if (auto* f = std::get_if<InFrame>(&ev)) {
                handle_frame(*f);
            } else if (auto* g = std::get_if<InGone>(&ev)) {
                for (auto it = clientOfKey_.begin(); it != clientOfKey_.end();) {
                    it = it->second == g->connId ? clientOfKey_.erase(it) : std::next(it);
                }
            } else {
                std::get<Task>(ev)();
            }
            if (faulted_) break;
        }
        if (clock::now() >= nextTick) {
            int64_t now = wall_ms();
            try {
                replica_->on_tick(now);
            } catch (const ConsistencyFault& e) {
                std::cerr << opt_.id.v << ": state fault: " << e.what() << "\n";
                faulted_ = true;
                break;
            }
            cq_->on_tick(now);
            if (cm_) {
                if (now - lastPingMs_ >= opt_.pingMs) {
                    tp_->ping_all();
                    lastPingMs_ = now;
                }
                const ConfigId& cur = replica_->cur_conf();
                const Configuration* info = replica_->config_info(cur);
                if (info != nullptr)
                    cm_->on_tick(now, *info, replica_->branch_open(cur),
                                 replica_->is_member(cur));
            }
            nextTick = clock::now() + tick;
        }
        pump_replica();
    }

    // The loop is done (stop or fault). Run any queued control tasks so
    // waiters in run_on_core are released, then park.
    std::deque<InEvent> rest;
    {
        std::lock_guard lk(qmu_);
        coreRunning_ = false;
        rest.swap(q_);
    }
    for (auto& ev : rest) {
        if (auto* t = std::get_if<Task>(&ev)) (*t)();
    }
}

void NodeHost::handle_frame(InFrame& f) {
    int64_t now = wall_ms();
    if (f.fromPeer) {
        ByteReader r(f.body);
        try {
            replica_->on_message(f.peer, f.cls, r);
        } catch (const CodecError& e) {
            std::cerr << opt_.id.v << ": dropping malformed frame from " << f.peer.v << ": "
                      << e.what() << "\n";
        } catch (const ConsistencyFault& e) {
            std::cerr << opt_.id.v << ": state fault: " << e.what() << "\n";
            faulted_ = true;
        }
        return;
    }
    if (f.cls == MsgClass::ClientReq) {
        std::string key, payload;
        try {
            ByteReader r(f.body);
            key = r.str();
            payload = r.str();
        } catch (const CodecError&) {
            return;
        }
        bool hadPrev = clientOfKey_.count(key) != 0;
        uint64_t prev = hadPrev ? clientOfKey_[key] : 0;
        clientOfKey_[key] = f.connId;
        try {
            cq_->submit(key, std::move(payload), now);
        } catch (const WellFormednessError&) {
            if (hadPrev)
                clientOfKey_[key] = prev;
            else
                clientOfKey_.erase(key);
            tp_->send_client(f.connId, MsgClass::ClientRep, client_rep_body(false, key));
        }
        return;
    }
    if (f.cls == MsgClass::Admin) {
        try {
            ByteReader r(f.body);
            handle_admin(f.connId, r);
        } catch (const CodecError&) {
        }
        return;
    }
}

void NodeHost::handle_admin(uint64_t connId, ByteReader& r) {
    auto op = static_cast<AdminOp>(r.u8());
    if (op == AdminOp::StatusReq) {
        Status s = snapshot();
        AdminStatus rep;
        rep.active = s.active;
        rep.member = s.member;
        rep.trunkLen = s.trunkLen;
        rep.curConf = s.curConf;
        rep.view = s.view;
        tp_->send_client(connId, MsgClass::Admin, admin_status_rep_body(rep));
        return;
    }
    if (op == AdminOp::ReconReq) {
        uint32_t n = r.u32();
        std::vector<NodeId> members;
        members.reserve(n);
        for (uint32_t i = 0; i < n; ++i) members.push_back(NodeId{r.str()});
        std::string reason;
        if (members.empty()) {
            reason = "member list is empty";
        } else if (!replica_->active()) {
            reason = "node is not active";
        } else {
            auto book = tp_->peers();
            for (const auto& m : members) {
                if (m != opt_.id && book.find(m) == book.end()) {
                    reason = "unknown node " + m.v;
                    break;
                }
            }
        }
        ConfigId parent = replica_->cur_conf();
        if (reason.empty() && !replica_->is_member(parent)) reason = "not a member of " + parent.v;
        if (reason.empty() && !replica_->branch_open(parent))
            reason = parent.v + " already has a successor";
        if (!reason.empty()) {
            tp_->send_client(connId, MsgClass::Admin, admin_recon_rep_body(false, reason));
            return;
        }
        ConfigId fresh{opt_.id.v + "-a" + std::to_string(++adminSeq_)};
        Configuration next{fresh, members};
        uint64_t droppedBefore = replica_->dropped_recons();
        TraceInput in;
        in.t = wall_ms();
        in.kind = TraceInput::Kind::Recon;
        in.node = opt_.id;
        in.conf = parent;
        in.newConf = next;
        std::string line = trace_record_line(TraceRecord{in});
        replica_->recon(parent, next);
        bool ok = replica_->dropped_recons() == droppedBefore;
        if (ok) trace_line(line);
        tp_->send_client(connId, MsgClass::Admin,
                         admin_recon_rep_body(ok, ok ? fresh.v : "proposal guard rejected"));
        pump_replica();
        return;
    }
}

void NodeHost::pump_replica() {
    auto outs = replica_->take_outputs();
    int64_t now = wall_ms();
    for (const auto& o : outs) {
        TraceOutput to;
        to.t = now;
        to.node = opt_.id;
        to.seq = o.seq;
        to.kind = o.kind;
        if (o.body.is_config()) {
            to.id = o.body.config().id.v;
            to.members = o.body.config().members;
        } else {
            to.id = o.body.command().id;
        }
        trace_line(trace_record_line(TraceRecord{to}));
        if (o.kind == OutputKind::Learn) {
            cq_->on_learned(o.body.command().id);
        } else if (o.kind == OutputKind::Ready) {
            cq_->on_ready(o.body.config().id);
        }
    }
    for (auto& ob : replica_->take_outbox()) tp_->send_peer(ob.to, ob.cls, ob.payload);
}

}  // namespace trellis::rt
