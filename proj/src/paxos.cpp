#include "trellis/paxos.hpp"

#include <algorithm>
#include <iterator>
#include <tuple>
#include <utility>

namespace trellis {

namespace {
constexpr uint8_t kPrepare = 0;
constexpr uint8_t kPromise = 1;
constexpr uint8_t kAccept = 2;
constexpr uint8_t kAccepted = 3;
constexpr uint8_t kDecided = 4;
constexpr uint8_t kNack = 5;
constexpr uint8_t kForward = 6;

constexpr uint32_t kMaxTailResends = 10;

void encode_ballot(ByteWriter& w, const Ballot& b) {
    w.u64(b.round);
    w.str(b.proposer.v);
}

Ballot decode_ballot(ByteReader& r) {
    Ballot b;
    b.round = r.u64();
    b.proposer.v = r.str();
    return b;
}
}  // namespace

PaxosEngine::PaxosEngine(Configuration cfg, NodeId self, NodeId leaderHint, EngineOptions opt)
    : cfg_(std::move(cfg)), self_(std::move(self)), opt_(opt) {
    if (!cfg_.has_member(self_))
        throw WellFormednessError("engine member " + self_.v + " not in configuration " + cfg_.id.v);
    believedLeader_ = leaderHint;
    if (self_ == believedLeader_) {
        leading_ = true;
        myBallot_ = Ballot{0, self_};
        promisedFloor_ = myBallot_;
    }
}

void PaxosEngine::encode_value(ByteWriter& w, const Value& v) {
    if (v.noop) {
        w.u8(0);
    } else {
        w.u8(1);
        encode_entry(w, v.entry);
    }
}

PaxosEngine::Value PaxosEngine::decode_value(ByteReader& r) {
    Value v;
    uint8_t tag = r.u8();
    if (tag == 0) {
        v.noop = true;
    } else if (tag == 1) {
        v.entry = decode_entry(r);
    } else {
        throw CodecError("bad value tag");
    }
    return v;
}

void PaxosEngine::broadcast(const std::string& payload) {
    for (const auto& m : cfg_.members)
        if (m != self_) outbox_.push_back({m, payload});
}

void PaxosEngine::send(const NodeId& to, const std::string& payload) {
    if (to != self_) outbox_.push_back({to, payload});
}

size_t PaxosEngine::rank() const {
    for (size_t i = 0; i < cfg_.members.size(); ++i)
        if (cfg_.members[i] == self_) return i;
    return 0;
}

void PaxosEngine::join() {
    if (joined_) throw WellFormednessError("duplicate join for " + cfg_.id.v);
    joined_ = true;
}

void PaxosEngine::propose(const Entry& value) {
    if (!joined_) throw WellFormednessError("propose before join for " + cfg_.id.v);
    if (!has_work()) lastProgressMs_ = nowMs_;  // stall clock starts with the work
    if (leading_) {
        lead_slot(Value{false, value});
    } else if (preparing_ || believedLeader_ == self_) {
        pendingMine_.push_back(value);
    } else {
        forward_to_leader(value);
    }
}

void PaxosEngine::forward_to_leader(const Entry& e) {
    ByteWriter w;
    w.u8(kForward);
    encode_entry(w, e);
    send(believedLeader_, w.take());
    forwarded_.push_back({e, nowMs_});
    counters_["forward"]++;
}

void PaxosEngine::lead_slot(Value v) { lead_slot_at(nextSlot_++, std::move(v)); }

void PaxosEngine::lead_slot_at(uint64_t slot, Value v) {
    accepted_[slot] = {myBallot_, v};
    if (!decided_.count(slot)) acceptedUndecided_.insert(slot);
    inflight_[slot] = Inflight{v, {self_}, nowMs_};
    if (v.noop) counters_["noop"]++;

    ByteWriter w;
    w.u8(kAccept);
    encode_ballot(w, myBallot_);
    w.u32(1);
    w.u64(slot);
    encode_value(w, v);
    broadcast(w.take());
    counters_["accept_broadcast"]++;
    if (majority() <= 1) decide(slot, v, true);
}

void PaxosEngine::decide(uint64_t slot, const Value& v, bool rebroadcast) {
    auto it = decided_.find(slot);
    if (it != decided_.end()) {
        if (it->second.noop != v.noop || (!v.noop && !(it->second.entry == v.entry)))
            throw ConsistencyFault("conflicting decisions for slot in " + cfg_.id.v);
        return;
    }
    decided_.emplace(slot, v);
    decidedAtMs_[slot] = nowMs_;
    if (!accepted_.count(slot)) accepted_[slot] = {promisedFloor_, v};
    acceptedUndecided_.erase(slot);
    inflight_.erase(slot);
    lastProgressMs_ = nowMs_;
    if (rebroadcast) {
        ByteWriter w;
        w.u8(kDecided);
        w.u32(1);
        w.u64(slot);
        encode_value(w, v);
        broadcast(w.take());
        counters_["decided_broadcast"]++;
    }
    deliver_ready();
}

void PaxosEngine::deliver_ready() {
    while (true) {
        auto it = decided_.find(deliverNext_);
        if (it == decided_.end()) break;
        const Value& v = it->second;
        if (!v.noop) {
            const std::string id = v.entry.entry_id();
            if (deliveredIds_.insert(id).second)
                ready_.push_back(LearnEvent{cfg_.id, v.entry, deliveredCount_++});
            std::erase_if(forwarded_, [&](const ForwardedEntry& f) { return f.e.entry_id() == id; });
            std::erase_if(pendingMine_, [&](const Entry& e) { return e.entry_id() == id; });
        }
        ++deliverNext_;
        lastProgressMs_ = nowMs_;
    }
}

uint64_t PaxosEngine::first_undecided() const {
    uint64_t s = deliverNext_;
    while (decided_.count(s)) ++s;
    return s;
}

bool PaxosEngine::has_work() const {
    if (!forwarded_.empty() || !pendingMine_.empty() || !acceptedUndecided_.empty()) return true;
    // a decided slot stuck behind a hole this member never even saw an Accept for
    return !decided_.empty() && decided_.rbegin()->first >= deliverNext_;
}

std::vector<LearnEvent> PaxosEngine::poll() { return std::exchange(ready_, {}); }

std::vector<LogEngine::Outbound> PaxosEngine::take_outbox() { return std::exchange(outbox_, {}); }

bool PaxosEngine::quiescent() const { return !has_work() && ready_.empty(); }

std::map<std::string, uint64_t> PaxosEngine::counters() const { return counters_; }

void PaxosEngine::on_message(const NodeId& from, ByteReader& r) {
    uint8_t kind = r.u8();
    switch (kind) {
        case kPrepare: on_prepare(from, r); break;
        case kPromise: on_promise(from, r); break;
        case kAccept: on_accept(from, r); break;
        case kAccepted: on_accepted(from, r); break;
        case kDecided: on_decided(from, r); break;
        case kNack: on_nack(from, r); break;
        case kForward: on_forward(from, r); break;
        default: throw CodecError("bad paxos message kind");
    }
}

void PaxosEngine::on_prepare(const NodeId& from, ByteReader& r) {
    Ballot b = decode_ballot(r);
    uint64_t fromSlot = r.u64();
    maxRoundSeen_ = std::max(maxRoundSeen_, b.round);
    if (b < promisedFloor_) {
        ByteWriter w;
        w.u8(kNack);
        encode_ballot(w, promisedFloor_);
        send(from, w.take());
        counters_["nack"]++;
        return;
    }
    promisedFloor_ = b;
    if ((leading_ || preparing_) && myBallot_ < b) step_down(b);
    believedLeader_ = b.proposer;
    lastProgressMs_ = nowMs_;  // someone is actively recovering

    ByteWriter w;
    w.u8(kPromise);
    encode_ballot(w, b);
    auto begin = accepted_.lower_bound(fromSlot);
    w.u32(static_cast<uint32_t>(std::distance(begin, accepted_.end())));
    for (auto it = begin; it != accepted_.end(); ++it) {
        w.u64(it->first);
        encode_ballot(w, it->second.at);
        encode_value(w, it->second.v);
        w.u8(decided_.count(it->first) ? 1 : 0);
    }
    send(from, w.take());
    counters_["promise"]++;
}

void PaxosEngine::on_promise(const NodeId& from, ByteReader& r) {
    Ballot b = decode_ballot(r);
    uint32_t n = r.u32();
    std::vector<std::tuple<uint64_t, Ballot, Value, bool>> entries;
    entries.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        uint64_t slot = r.u64();
        Ballot at = decode_ballot(r);
        Value v = decode_value(r);
        bool dec = r.u8() != 0;
        entries.emplace_back(slot, at, std::move(v), dec);
    }
    if (!preparing_ || !(b == myBallot_)) return;
    for (auto& [slot, at, v, dec] : entries) {
        auto it = prepBest_.find(slot);
        if (it == prepBest_.end()) {
            prepBest_.emplace(slot, PrepSlot{at, std::move(v), dec});
        } else if (dec && !it->second.decided) {
            it->second = PrepSlot{at, std::move(v), true};
        } else if (!dec && !it->second.decided && it->second.at < at) {
            it->second = PrepSlot{at, std::move(v), false};
        }
    }
    promisers_.insert(from);
    if (promisers_.size() >= majority()) finish_prepare();
}

void PaxosEngine::on_accept(const NodeId& from, ByteReader& r) {
    Ballot b = decode_ballot(r);
    uint32_t n = r.u32();
    maxRoundSeen_ = std::max(maxRoundSeen_, b.round);
    if (b < promisedFloor_) {
        ByteWriter w;
        w.u8(kNack);
        encode_ballot(w, promisedFloor_);
        send(from, w.take());
        counters_["nack"]++;
        return;
    }
    promisedFloor_ = b;
    if ((leading_ || preparing_) && myBallot_ < b) step_down(b);
    believedLeader_ = b.proposer;
    lastProgressMs_ = nowMs_;

    ByteWriter w;
    w.u8(kAccepted);
    encode_ballot(w, b);
    w.u32(n);
    for (uint32_t i = 0; i < n; ++i) {
        uint64_t slot = r.u64();
        Value v = decode_value(r);
        accepted_[slot] = {b, std::move(v)};
        if (!decided_.count(slot)) acceptedUndecided_.insert(slot);
        w.u64(slot);
    }
    send(from, w.take());
    counters_["accepted"]++;
}

void PaxosEngine::on_accepted(const NodeId& from, ByteReader& r) {
    Ballot b = decode_ballot(r);
    uint32_t n = r.u32();
    tailAttempts_[from] = 0;
    for (uint32_t i = 0; i < n; ++i) {
        uint64_t slot = r.u64();
        ackedSlots_[from].insert(slot);
        if (leading_ && b == myBallot_) {
            auto it = inflight_.find(slot);
            if (it != inflight_.end()) {
                it->second.acks.insert(from);
                if (it->second.acks.size() >= majority()) {
                    Value v = it->second.v;
                    decide(slot, v, true);
                }
            }
        }
    }
}

void PaxosEngine::on_decided(const NodeId& from, ByteReader& r) {
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        uint64_t slot = r.u64();
        Value v = decode_value(r);
        // acknowledge when this is a catch-up (no earlier Accepted covered the
        // slot) or a duplicate, so the sender's rebroadcast stops; the one
        // Decided of an ordinary round stays unacknowledged because the
        // phase 2 Accepted already did that job
        if (decided_.count(slot) || !accepted_.count(slot)) {
            ByteWriter w;
            w.u8(kAccepted);
            encode_ballot(w, promisedFloor_);
            w.u32(1);
            w.u64(slot);
            send(from, w.take());
            counters_["catchup_ack"]++;
        }
        decide(slot, v, false);
    }
}

void PaxosEngine::on_nack(const NodeId&, ByteReader& r) {
    Ballot b = decode_ballot(r);
    maxRoundSeen_ = std::max(maxRoundSeen_, b.round);
    if ((preparing_ || leading_) && myBallot_ < b) step_down(b);
}

void PaxosEngine::on_forward(const NodeId&, ByteReader& r) {
    Entry e = decode_entry(r);
    if (deliveredIds_.count(e.entry_id())) return;
    if (!has_work()) lastProgressMs_ = nowMs_;
    if (leading_) {
        lead_slot(Value{false, e});
    } else if (preparing_ || believedLeader_ == self_) {
        pendingMine_.push_back(e);
    } else {
        forward_to_leader(e);
    }
}

void PaxosEngine::step_down(const Ballot& b) {
    preparing_ = false;
    leading_ = false;
    believedLeader_ = b.proposer;
    maxRoundSeen_ = std::max(maxRoundSeen_, b.round);
    std::vector<Entry> repropose;
    for (auto& [slot, inf] : inflight_)
        if (!inf.v.noop && !decided_.count(slot)) repropose.push_back(inf.v.entry);
    inflight_.clear();
    for (auto& e : pendingMine_) repropose.push_back(e);
    pendingMine_.clear();
    for (auto& e : repropose)
        if (!deliveredIds_.count(e.entry_id())) forward_to_leader(e);
}

void PaxosEngine::start_prepare() {
    myBallot_ = Ballot{maxRoundSeen_ + 1, self_};
    maxRoundSeen_ = myBallot_.round;
    preparing_ = true;
    leading_ = false;
    believedLeader_ = self_;
    prepareStartedMs_ = nowMs_;
    prepFromSlot_ = first_undecided();
    promisers_ = {self_};
    prepBest_.clear();
    for (auto it = accepted_.lower_bound(prepFromSlot_); it != accepted_.end(); ++it)
        prepBest_[it->first] = PrepSlot{it->second.at, it->second.v, decided_.count(it->first) != 0};
    promisedFloor_ = std::max(promisedFloor_, myBallot_);

    ByteWriter w;
    w.u8(kPrepare);
    encode_ballot(w, myBallot_);
    w.u64(prepFromSlot_);
    broadcast(w.take());
    counters_["prepare_broadcast"]++;
    if (promisers_.size() >= majority()) finish_prepare();
}

void PaxosEngine::finish_prepare() {
    preparing_ = false;
    leading_ = true;
    nextSlot_ = prepBest_.empty() ? prepFromSlot_ : prepBest_.rbegin()->first + 1;
    for (uint64_t s = prepFromSlot_; s < nextSlot_; ++s) {
        auto it = prepBest_.find(s);
        if (it == prepBest_.end()) {
            lead_slot_at(s, Value{true, {}});
        } else if (it->second.decided) {
            decide(s, it->second.v, true);
        } else {
            lead_slot_at(s, it->second.v);
        }
    }
    prepBest_.clear();
    promisers_.clear();
    std::deque<Entry> mine = std::exchange(pendingMine_, {});
    for (auto& e : mine)
        if (!deliveredIds_.count(e.entry_id())) lead_slot(Value{false, e});
    std::vector<ForwardedEntry> fwd = std::exchange(forwarded_, {});
    for (auto& f : fwd)
        if (!deliveredIds_.count(f.e.entry_id())) lead_slot(Value{false, f.e});
}

void PaxosEngine::on_tick(int64_t nowMs) {
    nowMs_ = std::max(nowMs_, nowMs);
    if (!joined_) return;

    if (leading_) {
        std::vector<std::pair<uint64_t, const Value*>> stale;
        for (auto& [slot, inf] : inflight_) {
            if (nowMs_ - inf.sentMs >= opt_.retransmitMs) {
                stale.emplace_back(slot, &inf.v);
                inf.sentMs = nowMs_;
            }
        }
        if (!stale.empty()) {
            ByteWriter w;
            w.u8(kAccept);
            encode_ballot(w, myBallot_);
            w.u32(static_cast<uint32_t>(stale.size()));
            for (auto& [slot, v] : stale) {
                w.u64(slot);
                encode_value(w, *v);
            }
            broadcast(w.take());
            counters_["accept_retransmit"]++;
        }

        // republish decisions a member still has not acknowledged
        for (const auto& m : cfg_.members) {
            if (m == self_) continue;
            if (tailAttempts_[m] >= kMaxTailResends) continue;
            if (nowMs_ - lastTailMs_[m] < opt_.retransmitMs) continue;
            const auto& acked = ackedSlots_[m];
            uint64_t& floor = ackedFloor_[m];
            while (acked.count(floor)) ++floor;
            std::vector<uint64_t> missing;
            for (auto it = decidedAtMs_.lower_bound(floor); it != decidedAtMs_.end(); ++it) {
                if (missing.size() >= 64) break;
                if (nowMs_ - it->second < opt_.retransmitMs) continue;
                if (acked.count(it->first)) continue;
                missing.push_back(it->first);
            }
            if (!missing.empty()) {
                ByteWriter w;
                w.u8(kDecided);
                w.u32(static_cast<uint32_t>(missing.size()));
                for (uint64_t slot : missing) {
                    w.u64(slot);
                    encode_value(w, decided_.at(slot));
                }
                send(m, w.take());
                lastTailMs_[m] = nowMs_;
                tailAttempts_[m]++;
                counters_["decided_resend"]++;
            }
        }
    } else {
        for (auto& f : forwarded_) {
            if (nowMs_ - f.sentMs >= opt_.reforwardMs && believedLeader_ != self_) {
                ByteWriter w;
                w.u8(kForward);
                encode_entry(w, f.e);
                send(believedLeader_, w.take());
                f.sentMs = nowMs_;
                counters_["forward_resend"]++;
            }
        }
    }

    int64_t patience = opt_.suspectBaseMs * static_cast<int64_t>(1 + rank());
    if (!leading_ && !preparing_ && has_work() && nowMs_ - lastProgressMs_ > patience) {
        start_prepare();
    } else if (preparing_ && nowMs_ - prepareStartedMs_ > 4 * patience) {
        start_prepare();
    }
}

EngineFactory backend_factory(const std::string& name) {
    if (name == "paxos") {
        return [](const Configuration& c, const NodeId& self, const NodeId& leader) {
            return std::make_unique<PaxosEngine>(c, self, leader);
        };
    }
    if (name == "sequencer") {
        return [](const Configuration& c, const NodeId& self, const NodeId& leader) {
            return std::make_unique<SequencerEngine>(c, self, leader);
        };
    }
    throw WellFormednessError("unknown back-end: " + name);
}

}  // namespace trellis
