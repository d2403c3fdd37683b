#include "trellis/rt/cm.hpp"

#include <algorithm>

namespace trellis::rt {

ConfigManager::ConfigManager(NodeId self, std::vector<NodeId> pool, Hooks hooks, CmOptions opt)
    : self_(std::move(self)), pool_(std::move(pool)), hooks_(std::move(hooks)), opt_(opt) {
    if (std::find(pool_.begin(), pool_.end(), self_) == pool_.end()) pool_.push_back(self_);
}

void ConfigManager::add_candidate(const NodeId& id) {
    if (std::find(pool_.begin(), pool_.end(), id) == pool_.end()) pool_.push_back(id);
}

ConfigId ConfigManager::fresh_id() { return ConfigId{self_.v + "-" + std::to_string(++seq_)}; }

bool ConfigManager::heard(const NodeId& id, int64_t nowMs) const {
    if (id == self_) return true;
    int64_t at = hooks_.lastHeardMs ? hooks_.lastHeardMs(id) : -1;
    if (at < 0) at = startMs_;  // grace for peers we have not met yet
    return nowMs - at <= opt_.suspectAfterMs;
}

void ConfigManager::on_tick(int64_t nowMs, const Configuration& cur, bool branchOpen,
                            bool selfMember) {
    if (startMs_ < 0) startMs_ = nowMs;
    if (!selfMember) {
        outstandingAtMs_ = -1;
        return;
    }
    if (outstandingAtMs_ >= 0) {
        if (cur.id == outstandingParent_ && nowMs - outstandingAtMs_ < opt_.reconHoldMs) return;
        outstandingAtMs_ = -1;
    }

    std::vector<NodeId> survivors;
    bool anySuspect = false;
    for (const auto& m : cur.members) {
        if (heard(m, nowMs)) {
            survivors.push_back(m);
        } else {
            anySuspect = true;
        }
    }
    if (!anySuspect) return;
    if (!branchOpen) return;  // a successor is in flight; re-examine once it lands

    size_t target = opt_.targetSize ? opt_.targetSize : cur.members.size();
    for (const auto& cand : pool_) {
        if (survivors.size() >= target) break;
        if (cur.has_member(cand)) continue;
        if (std::find(survivors.begin(), survivors.end(), cand) != survivors.end()) continue;
        if (heard(cand, nowMs)) survivors.push_back(cand);
    }
    size_t minSize = opt_.minSize ? opt_.minSize : target / 2 + 1;
    if (survivors.size() < minSize) return;
    if (survivors == cur.members) return;

    Configuration next{fresh_id(), survivors};
    ++proposals_;
    outstandingParent_ = cur.id;
    outstandingAtMs_ = nowMs;
    if (hooks_.propose) hooks_.propose(next);
}

}  // namespace trellis::rt
