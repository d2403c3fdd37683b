#include "trellis/rt/cq.hpp"

#include <algorithm>

namespace trellis {

CommandQueue::CommandQueue(NodeId self, Hooks hooks, CommandQueueOptions opt)
    : self_(std::move(self)), hooks_(std::move(hooks)), opt_(opt) {}

void CommandQueue::on_ready(const ConfigId& c) {
    if (std::find(readyOrder_.begin(), readyOrder_.end(), c) == readyOrder_.end())
        readyOrder_.push_back(c);
}

const ConfigId* CommandQueue::pick_target() const {
    for (auto it = readyOrder_.rbegin(); it != readyOrder_.rend(); ++it)
        if (!hooks_.configDead(*it)) return &*it;
    return nullptr;
}

bool CommandQueue::attempt(Entry& e, int64_t nowMs) {
    const ConfigId* target = pick_target();
    if (!target) {
        // Nothing to aim at right now; keep the entry and look again next
        // tick without spending an attempt.
        e.target = ConfigId{};
        e.lastAttempt = nowMs;
        return true;
    }
    if (e.attempts >= opt_.attemptBudget) return false;
    ++e.attempts;
    e.target = *target;
    e.lastAttempt = nowMs;
    Command cmd;
    cmd.id = e.key + ".a" + std::to_string(e.attempts);
    cmd.payload = e.payload;
    issued_[cmd.id] = e.key;
    hooks_.propose(*target, cmd);
    return true;
}

void CommandQueue::submit(const std::string& key, std::string payload, int64_t nowMs) {
    if (pending_.count(key)) throw WellFormednessError("client key already in flight: " + key);
    Entry e;
    e.key = key;
    e.payload = std::move(payload);
    e.submittedAt = nowMs;
    auto [it, inserted] = pending_.emplace(key, std::move(e));
    if (!attempt(it->second, nowMs)) {
        int64_t at = it->second.submittedAt;
        pending_.erase(it);
        hooks_.done(key, false, at);
    }
}

void CommandQueue::on_learned(const std::string& cmdId) {
    auto iit = issued_.find(cmdId);
    if (iit == issued_.end()) return;
    auto pit = pending_.find(iit->second);
    if (pit == pending_.end()) return;  // an older attempt already answered
    int64_t at = pit->second.submittedAt;
    std::string key = pit->first;
    pending_.erase(pit);
    hooks_.done(key, true, at);
}

void CommandQueue::on_tick(int64_t nowMs) {
    for (auto it = pending_.begin(); it != pending_.end();) {
        Entry& e = it->second;
        bool due = e.target.v.empty() || hooks_.configDead(e.target) ||
                   nowMs - e.lastAttempt >= opt_.retryTimeoutMs;
        if (due && !attempt(e, nowMs)) {
            int64_t at = e.submittedAt;
            std::string key = it->first;
            it = pending_.erase(it);
            hooks_.done(key, false, at);
        } else {
            ++it;
        }
    }
}

}  // namespace trellis
