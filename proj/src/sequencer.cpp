#include <algorithm>
#include <utility>

#include "trellis/engine.hpp"

namespace trellis {

namespace {
constexpr uint8_t kForward = 0;
constexpr uint8_t kAssign = 1;
}  // namespace

SequencerEngine::SequencerEngine(Configuration cfg, NodeId self, NodeId sequencer)
    : cfg_(std::move(cfg)), self_(std::move(self)), sequencer_(std::move(sequencer)) {
    if (!cfg_.has_member(self_))
        throw WellFormednessError("engine member " + self_.v + " not in configuration " + cfg_.id.v);
}

void SequencerEngine::join() {
    if (joined_) throw WellFormednessError("duplicate join for " + cfg_.id.v);
    joined_ = true;
}

void SequencerEngine::propose(const Entry& value) {
    if (!joined_) throw WellFormednessError("propose before join for " + cfg_.id.v);
    if (self_ == sequencer_) {
        assign(value);
        return;
    }
    ByteWriter w;
    w.u8(kForward);
    encode_entry(w, value);
    outbox_.push_back({sequencer_, w.take()});
    forwarded_.push_back(value.entry_id());
    counters_["forward"]++;
}

void SequencerEngine::assign(const Entry& value) {
    uint64_t slot = nextAssign_++;
    ByteWriter w;
    w.u8(kAssign);
    w.u64(slot);
    encode_entry(w, value);
    std::string payload = w.take();
    for (const auto& m : cfg_.members)
        if (m != self_) outbox_.push_back({m, payload});
    counters_["assign"]++;
    pendingSlots_.emplace(slot, value);
    deliver_ready();
}

void SequencerEngine::on_message(const NodeId&, ByteReader& body) {
    uint8_t kind = body.u8();
    if (kind == kForward) {
        Entry e = decode_entry(body);
        if (self_ == sequencer_) assign(e);
        return;
    }
    if (kind != kAssign) throw CodecError("bad sequencer message");
    uint64_t slot = body.u64();
    Entry e = decode_entry(body);
    std::erase(forwarded_, e.entry_id());
    pendingSlots_.emplace(slot, e);
    deliver_ready();
}

void SequencerEngine::deliver_ready() {
    while (true) {
        auto it = pendingSlots_.find(deliverNext_);
        if (it == pendingSlots_.end()) break;
        const Entry& e = it->second;
        if (deliveredIds_.insert(e.entry_id()).second)
            ready_.push_back(LearnEvent{cfg_.id, e, deliveredCount_++});
        pendingSlots_.erase(it);
        ++deliverNext_;
    }
}

std::vector<LearnEvent> SequencerEngine::poll() { return std::exchange(ready_, {}); }

void SequencerEngine::on_tick(int64_t) {}

std::vector<LogEngine::Outbound> SequencerEngine::take_outbox() {
    return std::exchange(outbox_, {});
}

bool SequencerEngine::quiescent() const {
    return forwarded_.empty() && pendingSlots_.empty() && ready_.empty();
}

std::map<std::string, uint64_t> SequencerEngine::counters() const { return counters_; }

}  // namespace trellis
