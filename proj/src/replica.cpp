#include "trellis/replica.hpp"

#include <algorithm>
#include <cstring>

#include "trellis/codec.hpp"

namespace trellis {

Replica::Replica(NodeId self, Configuration c0, EngineFactory factory, ReplicaOptions opt)
    : self_(std::move(self)), c0_(c0.id), factory_(std::move(factory)), opt_(opt), curConf_(c0.id) {
    configs_.emplace(c0.id, c0);
    if (c0.has_member(self_)) {
        join_conf(c0);
        view_.insert(c0.members.begin(), c0.members.end());
        // The initial configuration needs no Ready: it never had a rival.
        readyEmitted_.insert(c0.id);
    }
}

void Replica::join_conf(const Configuration& c) {
    active_ = true;
    configs_.try_emplace(c.id, c);
    branches_.try_emplace(c.id);
    auto eng = factory_(c, self_, initial_leader(c));
    eng->on_tick(nowMs_);
    eng->join();
    auto buffered = prejoin_.find(c.id);
    if (buffered != prejoin_.end()) {
        for (auto& [from, payload] : buffered->second) {
            ByteReader r(payload);
            eng->on_message(from, r);
        }
        prejoinTotal_ -= buffered->second.size();
        prejoin_.erase(buffered);
    }
    machines_[c.id] = std::move(eng);
}

bool Replica::branch_open(const ConfigId& c) const {
    auto it = branches_.find(c);
    return it != branches_.end() && !first_config_index(it->second).has_value();
}

bool Replica::is_member(const ConfigId& c) const {
    auto it = configs_.find(c);
    return it != configs_.end() && it->second.has_member(self_);
}

const Configuration* Replica::config_info(const ConfigId& c) const {
    auto it = configs_.find(c);
    return it == configs_.end() ? nullptr : &it->second;
}

bool Replica::config_dead(const ConfigId& c) const {
    auto bit = branches_.find(c);
    if (bit != branches_.end() && first_config_index(bit->second).has_value()) return true;
    if (successorOf_.count(c)) return true;
    // Walk up: if any ancestor's trunk successor is a different child, every
    // configuration below that point lost the race.
    ConfigId cur = c;
    for (int guard = 0; guard < 4096; ++guard) {
        auto pit = parentOf_.find(cur);
        if (pit == parentOf_.end()) return false;
        auto sit = successorOf_.find(pit->second);
        if (sit != successorOf_.end()) return sit->second != cur;
        cur = pit->second;
    }
    return false;
}

void Replica::propose(const ConfigId& c, const Command& cmd) {
    if (!branch_open(c)) {
        ++droppedProposals_;
        return;
    }
    machines_.at(c)->propose(Entry::cmd(cmd));
    pump();
}

void Replica::recon(const ConfigId& c, const Configuration& cNew) {
    if (!branch_open(c)) {
        ++droppedRecons_;
        return;
    }
    const Configuration& parent = configs_.at(c);
    configs_.try_emplace(cNew.id, cNew);
    parentOf_.try_emplace(cNew.id, c);

    ByteWriter w;
    encode_configuration(w, parent);
    encode_configuration(w, cNew);
    std::string payload = w.take();
    for (const auto& q : cNew.members) {
        if (q == self_) continue;
        outbox_.push_back({q, MsgClass::Join, payload});
    }
    if (cNew.has_member(self_) && !branches_.count(cNew.id)) {
        join_conf(cNew);
        if (opt_.speculation) emit_ready_once(cNew);
    }
    machines_.at(c)->propose(Entry::cfg(cNew));
    view_.insert(cNew.members.begin(), cNew.members.end());
    pump();
}

void Replica::on_message(const NodeId& from, MsgClass cls, ByteReader& body) {
    switch (cls) {
        case MsgClass::Join: handle_join(from, body); break;
        case MsgClass::State: handle_state(from, body); break;
        case MsgClass::Backend: handle_backend(from, body); break;
        default: throw CodecError("replica cannot handle this message class");
    }
    pump();
}

void Replica::handle_join(const NodeId& from, ByteReader& r) {
    Configuration parent = decode_configuration(r);
    Configuration cNew = decode_configuration(r);
    if (!parent.has_member(from)) return;  // only members of the old configuration may invite
    configs_.try_emplace(parent.id, parent);
    configs_.try_emplace(cNew.id, cNew);
    parentOf_.try_emplace(cNew.id, parent.id);
    if (!cNew.has_member(self_)) return;
    if (!branches_.count(cNew.id)) {
        join_conf(cNew);
        if (opt_.speculation) emit_ready_once(cNew);
    }
    view_.insert(parent.members.begin(), parent.members.end());
    view_.insert(cNew.members.begin(), cNew.members.end());
    view_.insert(from);
}

void Replica::handle_state(const NodeId& from, ByteReader& r) {
    size_t base = r.u32();
    size_t total = r.u32();
    uint32_t segLen = r.u32();
    std::string_view seg = r.view(segLen);
    if (total < base) throw CodecError("state transfer shrinks the trunk");
    size_t have = trunk_.size();
    if (base <= have) {
        // Entry encoding is canonical: where the segment overlaps entries we
        // already hold, the bytes must agree exactly. This keeps
        // steady-state gossip at memcmp cost.
        size_t localStart = base ? trunkEnds_[base - 1] : 0;
        size_t overlapEnd = std::min(total, have);
        size_t overlapBytes = (overlapEnd ? trunkEnds_[overlapEnd - 1] : 0) - localStart;
        if (overlapBytes > seg.size() ||
            std::memcmp(seg.data(), trunkBytes_.data() + localStart, overlapBytes) != 0)
            throw ConsistencyFault("gossiped trunk diverges from local trunk");
        if (total > have) {
            ByteReader tr(std::string_view(seg.data() + overlapBytes, seg.size() - overlapBytes));
            EntrySeq tail;
            tail.reserve(total - have);
            for (size_t i = have; i < total; ++i) tail.push_back(decode_entry(tr));
            if (!tr.done()) throw CodecError("state transfer has trailing bytes");
            for (size_t i = have; i < total; ++i) {
                drain();  // local ordering may outrun the gossip mid-patch
                const Entry& e = tail[i - have];
                if (trunk_.size() > i) {
                    if (trunk_[i].is_config() != e.is_config() ||
                        trunk_[i].entry_id() != e.entry_id())
                        throw ConsistencyFault("gossiped trunk diverges from local trunk");
                } else {
                    learn_next(e);
                }
            }
            drain();
        } else if (overlapBytes != seg.size()) {
            throw ConsistencyFault("gossiped trunk diverges from local trunk");
        }
    }
    // base > have: a segment we needed was shed somewhere upstream; skip the
    // trunk part and wait for the sender's periodic full resync.
    uint32_t vn = r.u32();
    for (uint32_t i = 0; i < vn; ++i) view_.insert(NodeId{std::string(r.str())});
    view_.insert(from);
}

void Replica::handle_backend(const NodeId& from, ByteReader& r) {
    ConfigId cid{std::string(r.str())};
    auto mit = machines_.find(cid);
    if (mit != machines_.end()) {
        mit->second->on_message(from, r);
        return;
    }
    auto cit = configs_.find(cid);
    if (cit != configs_.end() && !cit->second.has_member(self_)) return;
    if (prejoinTotal_ >= opt_.prejoinCap) return;
    std::string rest(r.view(r.remaining()));
    prejoin_[cid].emplace_back(from, std::move(rest));
    ++prejoinTotal_;
}

void Replica::emit(OutputKind kind, Entry body) {
    outputs_.push_back({kind, std::move(body), self_, outputSeq_++});
}

void Replica::emit_ready_once(const Configuration& c) {
    if (readyEmitted_.insert(c.id).second) emit(OutputKind::Ready, Entry::cfg(c));
}

void Replica::learn_next(const Entry& x) {
    trunk_.push_back(x);
    {
        ByteWriter w;
        encode_entry(w, x);
        trunkBytes_ += w.take();
        trunkEnds_.push_back(static_cast<uint32_t>(trunkBytes_.size()));
    }
    if (x.is_config()) {
        const Configuration& c = x.config();
        configs_.try_emplace(c.id, c);
        parentOf_.try_emplace(c.id, curConf_);
        if (!branches_.count(c.id) && c.has_member(self_)) {
            join_conf(c);
            emit_ready_once(c);
        } else if (c.has_member(self_)) {
            // Covers deferred readiness and a join invitation that never
            // arrived: once the configuration is on the trunk it won.
            emit_ready_once(c);
        }
        emit(OutputKind::NewConf, x);
        successorOf_[curConf_] = c.id;
        next_ = 0;
        curConf_ = c.id;
    } else {
        if (!learnedCmdIds_.insert(x.command().id).second)
            throw ConsistencyFault("command ordered twice on the trunk");
        emit(OutputKind::Learn, x);
        ++next_;
    }
}

void Replica::drain() {
    for (;;) {
        auto it = branches_.find(curConf_);
        if (it == branches_.end() || next_ >= it->second.size()) return;
        learn_next(it->second[next_]);
    }
}

void Replica::on_engine_learn(const ConfigId& c, const LearnEvent& ev) {
    auto& branch = branches_.at(c);
    if (ev.slot != branch.size())
        throw ConsistencyFault("engine delivered a slot out of order");
    branch.push_back(ev.value);
    if (c == curConf_) drain();
}

void Replica::pump() {
    bool again = true;
    while (again) {
        again = false;
        for (auto& [cid, eng] : machines_) {
            auto learns = eng->poll();
            if (!learns.empty()) again = true;
            for (auto& ev : learns) on_engine_learn(cid, ev);
            for (auto& ob : eng->take_outbox()) {
                ByteWriter w;
                w.str(cid.v);
                std::string payload = w.take();
                payload += ob.payload;
                outbox_.push_back({ob.to, MsgClass::Backend, std::move(payload)});
            }
        }
    }
}

void Replica::on_tick(int64_t nowMs) {
    nowMs_ = std::max(nowMs_, nowMs);
    for (auto& [cid, eng] : machines_) {
        if (config_dead(cid)) continue;  // losing branches stay frozen
        eng->on_tick(nowMs_);
    }
    if (!prejoin_.empty()) {
        for (auto it = prejoin_.begin(); it != prejoin_.end();) {
            if (config_dead(it->first)) {
                prejoinTotal_ -= it->second.size();
                it = prejoin_.erase(it);
            } else {
                ++it;
            }
        }
    }
    if (active_ && nowMs_ - lastGossipMs_ >= opt_.gossipMs) {
        lastGossipMs_ = nowMs_;
        for (const auto& q : view_) {
            if (q == self_) continue;
            GossipMark& mark = gossipSent_[q];
            bool never = mark.sentLen == static_cast<size_t>(-1);
            bool changed = never || mark.sentLen != trunk_.size() || mark.viewSize != view_.size();
            bool refresh = opt_.gossipRefreshMs > 0 && nowMs_ - mark.at >= opt_.gossipRefreshMs;
            if (!changed && !refresh) continue;
            // Ship only what this peer has not been sent yet; a refresh
            // restarts from the beginning so receivers that missed a
            // segment (shed under backpressure) converge again.
            size_t base = (never || refresh) ? 0 : mark.sentLen;
            size_t baseBytes = base ? trunkEnds_[base - 1] : 0;
            ByteWriter w;
            w.u32(static_cast<uint32_t>(base));
            w.u32(static_cast<uint32_t>(trunk_.size()));
            w.u32(static_cast<uint32_t>(trunkBytes_.size() - baseBytes));
            w.buffer().append(trunkBytes_, baseBytes, std::string::npos);
            w.u32(static_cast<uint32_t>(view_.size()));
            for (const auto& n : view_) w.str(n.v);
            mark = {trunk_.size(), view_.size(), nowMs_};
            outbox_.push_back({q, MsgClass::State, w.take()});
        }
    }
    pump();
}

std::vector<OutputEvent> Replica::take_outputs() { return std::exchange(outputs_, {}); }

std::vector<Replica::Outbound> Replica::take_outbox() { return std::exchange(outbox_, {}); }

bool Replica::engines_quiescent() const {
    for (const auto& [cid, eng] : machines_) {
        if (config_dead(cid)) continue;
        if (!eng->quiescent()) return false;
    }
    return true;
}

std::map<std::string, uint64_t> Replica::engine_counters() const {
    std::map<std::string, uint64_t> out;
    for (const auto& [cid, eng] : machines_)
        for (const auto& [k, v] : eng->counters()) out[k] += v;
    return out;
}

std::pair<bool, bool> decommission_safe(const Configuration& parent,
                                        const Configuration& successor,
                                        const std::map<NodeId, std::set<ConfigId>>& delivered) {
    auto tally = [&](const std::vector<NodeId>& members) {
        size_t got = 0;
        for (const auto& m : members) {
            auto it = delivered.find(m);
            if (it != delivered.end() && it->second.count(successor.id)) ++got;
        }
        return got;
    };
    bool minorityOk = tally(parent.members) >= parent.members.size() / 2 + 1;
    bool fullOk = tally(successor.members) >= successor.members.size() / 2 + 1;
    return {minorityOk, fullOk};
}

}  // namespace trellis
