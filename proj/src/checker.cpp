#include "trellis/checker.hpp"

#include <algorithm>
#include <map>
#include <utility>

namespace trellis {

namespace {

constexpr size_t kIssueCap = 1000;

struct Walk {
    const Trace& trace;
    const std::set<NodeId>& correct;
    CheckReport report;

    // Input indexes, order-free: inputs always precede the outputs they
    // justify in real time, so existence is what integrity needs. Relying
    // on stream position would make merged multi-file traces fragile.
    std::map<std::string, size_t> proposeCount;           // cmd id
    std::set<std::string> proposeCtx;                     // ctx \x1f cmd id
    std::map<std::string, size_t> reconTargetCount;       // new config id
    std::set<std::string> reconEdge;                      // parent \x1f new id
    std::set<std::string> reconTarget;                    // new id
    std::map<std::string, std::vector<NodeId>> configs;   // id -> members
    std::map<std::string, std::vector<const TraceInput*>> reconByParent;
    std::vector<const TraceInput*> recons;
    std::vector<const TraceInput*> proposals;

    // Per-node state for order-sensitive checks; these only ever relate
    // records of one node, whose relative order any merge preserves.
    std::map<NodeId, std::set<std::string>> readyAt;
    std::map<NodeId, std::string> context;  // latest new-configuration id
    std::map<NodeId, uint64_t> nextSeq;
    std::set<std::string> learnKey, newconfKey, readyKey;  // node \x1f id
    std::map<NodeId, std::vector<std::pair<bool, std::string>>> projection;

    Walk(const Trace& t, const std::set<NodeId>& c) : trace(t), correct(c) {}

    static std::string key(const NodeId& n, const std::string& id) { return n.v + '\x1f' + id; }
    static std::string key(const std::string& a, const std::string& b) { return a + '\x1f' + b; }

    void flag(const char* rule, std::string detail) {
        if (report.violations.size() < kIssueCap)
            report.violations.push_back({rule, std::move(detail)});
    }
    void flag_live(std::string detail) {
        if (report.livenessIssues.size() < kIssueCap)
            report.livenessIssues.push_back({"liveness", std::move(detail)});
    }

    void index_inputs() {
        configs[trace.header.c0.id.v] = trace.header.c0.members;
        for (const auto& rec : trace.records) {
            const auto* in = std::get_if<TraceInput>(&rec);
            if (!in) continue;
            switch (in->kind) {
                case TraceInput::Kind::Propose:
                    ++proposeCount[in->cmd.id];
                    proposeCtx.insert(key(in->conf.v, in->cmd.id));
                    proposals.push_back(in);
                    break;
                case TraceInput::Kind::Recon:
                    ++reconTargetCount[in->newConf.id.v];
                    reconEdge.insert(key(in->conf.v, in->newConf.id.v));
                    reconTarget.insert(in->newConf.id.v);
                    configs.try_emplace(in->newConf.id.v, in->newConf.members);
                    reconByParent[in->conf.v].push_back(in);
                    recons.push_back(in);
                    break;
                case TraceInput::Kind::Crash:
                    break;
            }
        }
        for (const auto& [id, n] : proposeCount)
            if (n > 1)
                flag("well-formedness",
                     "command " + id + " proposed " + std::to_string(n) + " times");
        for (const auto& [id, n] : reconTargetCount)
            if (n > 1)
                flag("well-formedness", "configuration " + id + " requested " +
                                            std::to_string(n) + " times");
    }

    std::string ctx_of(const NodeId& n) const {
        auto it = context.find(n);
        return it == context.end() ? trace.header.c0.id.v : it->second;
    }

    void on_input(const TraceInput& in) {
        if (in.kind == TraceInput::Kind::Crash) return;
        const std::string& target = in.conf.v;
        if (target != trace.header.c0.id.v && !readyAt[in.node].count(target)) {
            const char* what = in.kind == TraceInput::Kind::Propose ? "proposed into"
                                                                    : "reconfigured";
            flag("well-formedness", in.node.v + " " + what + " " + target +
                                        " before seeing it ready");
        }
    }

    void on_output(const TraceOutput& o) {
        uint64_t& want = nextSeq[o.node];
        if (o.seq != want) {
            flag("well-formedness", o.node.v + " output seq " + std::to_string(o.seq) +
                                        ", expected " + std::to_string(want));
            want = o.seq;
        }
        ++want;

        switch (o.kind) {
            case OutputKind::Learn: {
                if (!learnKey.insert(key(o.node, o.id)).second)
                    flag("no-duplication", o.node.v + " learned " + o.id + " twice");
                if (!proposeCtx.count(key(ctx_of(o.node), o.id)))
                    flag("integrity", o.node.v + " learned " + o.id +
                                          " with no matching proposal in " + ctx_of(o.node));
                projection[o.node].emplace_back(false, o.id);
                break;
            }
            case OutputKind::NewConf: {
                if (!newconfKey.insert(key(o.node, o.id)).second)
                    flag("no-duplication",
                         o.node.v + " installed configuration " + o.id + " twice");
                if (!reconEdge.count(key(ctx_of(o.node), o.id)))
                    flag("integrity", o.node.v + " installed " + o.id +
                                          " with no matching request under " + ctx_of(o.node));
                configs.try_emplace(o.id, o.members);
                projection[o.node].emplace_back(true, o.id);
                context[o.node] = o.id;
                break;
            }
            case OutputKind::Ready: {
                if (!readyKey.insert(key(o.node, o.id)).second)
                    flag("no-duplication", o.node.v + " reported " + o.id + " ready twice");
                if (!reconTarget.count(o.id))
                    flag("integrity",
                         o.node.v + " reported " + o.id + " ready but nobody requested it");
                configs.try_emplace(o.id, o.members);
                readyAt[o.node].insert(o.id);
                break;
            }
        }
    }

    void check_linearizable() {
        // Every pair of nodes must agree on a common order: one node's
        // history is a prefix of the other's.
        std::vector<const NodeId*> nodes;
        for (const auto& [n, p] : projection) nodes.push_back(&n);
        for (size_t i = 0; i < nodes.size(); ++i) {
            for (size_t j = i + 1; j < nodes.size(); ++j) {
                const auto& a = projection[*nodes[i]];
                const auto& b = projection[*nodes[j]];
                size_t common = std::min(a.size(), b.size());
                for (size_t k = 0; k < common; ++k) {
                    if (a[k] != b[k]) {
                        flag("linearizability",
                             nodes[i]->v + " and " + nodes[j]->v +
                                 " diverge at position " + std::to_string(k) + ": " +
                                 a[k].second + " vs " + b[k].second);
                        break;
                    }
                }
            }
        }
    }

    const std::vector<NodeId>* members_of(const std::string& id) {
        auto it = configs.find(id);
        return it == configs.end() ? nullptr : &it->second;
    }

    void check_liveness() {
        if (!trace.quiescent) {
            report.liveness = CheckReport::Liveness::Inconclusive;
            return;
        }
        // Reference history: the longest among correct nodes.
        const std::vector<std::pair<bool, std::string>>* ref = nullptr;
        for (const auto& n : correct) {
            auto it = projection.find(n);
            const auto* p = it == projection.end() ? nullptr : &it->second;
            static const std::vector<std::pair<bool, std::string>> empty;
            if (!p) p = &empty;
            if (!ref || p->size() > ref->size()) ref = p;
        }
        static const std::vector<std::pair<bool, std::string>> none;
        if (!ref) ref = &none;

        std::vector<std::string> chain{trace.header.c0.id.v};
        for (const auto& [isCfg, id] : *ref)
            if (isCfg) chain.push_back(id);

        auto correct_members = [&](const std::string& cfgId, std::vector<NodeId>& out) {
            const auto* m = members_of(cfgId);
            if (!m) return false;
            for (const auto& n : *m)
                if (correct.count(n)) out.push_back(n);
            return true;
        };

        // Commands sent into the final configuration by nodes that stayed
        // up must have reached every correct member of it.
        const std::string& finalCfg = chain.back();
        for (const auto* in : proposals) {
            if (in->conf.v != finalCfg || !correct.count(in->node)) continue;
            std::vector<NodeId> mem;
            if (!correct_members(finalCfg, mem)) continue;
            for (const auto& n : mem)
                if (!learnKey.count(key(n, in->cmd.id)))
                    flag_live(n.v + " never learned " + in->cmd.id +
                              " proposed into the final configuration " + finalCfg);
        }

        // A reconfiguration request against a configuration that stayed up
        // must resolve: some successor follows it on the trunk, and every
        // correct member of both ends installed that successor.
        for (size_t i = 0; i < chain.size(); ++i) {
            const std::string& cfg = chain[i];
            auto rit = reconByParent.find(cfg);
            if (rit == reconByParent.end()) continue;
            bool byCorrect = false;
            for (const auto* in : rit->second)
                if (correct.count(in->node)) byCorrect = true;
            if (!byCorrect) continue;
            if (i + 1 >= chain.size()) {
                flag_live("reconfiguration against " + cfg +
                          " never produced a successor on the trunk");
                continue;
            }
            const std::string& succ = chain[i + 1];
            std::vector<NodeId> affected;
            correct_members(cfg, affected);
            correct_members(succ, affected);
            std::sort(affected.begin(), affected.end());
            affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
            for (const auto& n : affected)
                if (!newconfKey.count(key(n, succ)))
                    flag_live(n.v + " never installed " + succ + ", the successor of " + cfg);
        }

        // Readiness must reach the members of a requested configuration.
        // Without speculation only winners ever turn ready, so losers are
        // exempt there.
        std::set<std::string> onTrunk(chain.begin(), chain.end());
        for (const auto* in : recons) {
            if (!correct.count(in->node)) continue;
            const std::string& target = in->newConf.id.v;
            if (!trace.header.speculation && !onTrunk.count(target)) continue;
            for (const auto& n : in->newConf.members) {
                if (!correct.count(n)) continue;
                if (!readyKey.count(key(n, target)))
                    flag_live(n.v + " never saw " + target + " become ready");
            }
        }

        report.liveness = report.livenessIssues.empty() ? CheckReport::Liveness::Satisfied
                                                        : CheckReport::Liveness::Violated;
    }

    CheckReport run() {
        index_inputs();
        for (const auto& rec : trace.records) {
            if (const auto* in = std::get_if<TraceInput>(&rec)) on_input(*in);
            else if (const auto* o = std::get_if<TraceOutput>(&rec)) on_output(*o);
        }
        check_linearizable();
        check_liveness();
        return std::move(report);
    }
};

}  // namespace

std::string CheckReport::summary() const {
    std::string out;
    if (violations.empty()) {
        out = "safety: pass";
    } else {
        std::map<std::string, size_t> byRule;
        for (const auto& v : violations) ++byRule[v.rule];
        out = "safety: ";
        bool first = true;
        for (const auto& [rule, n] : byRule) {
            if (!first) out += ", ";
            first = false;
            out += rule + "(" + std::to_string(n) + ")";
        }
    }
    out += "; liveness: ";
    switch (liveness) {
        case Liveness::Satisfied: out += "satisfied"; break;
        case Liveness::Violated:
            out += "violated(" + std::to_string(livenessIssues.size()) + ")";
            break;
        case Liveness::Inconclusive: out += "inconclusive (run did not settle)"; break;
    }
    return out;
}

CheckReport check_trace(const Trace& trace) {
    std::set<NodeId> correct(trace.header.nodes.begin(), trace.header.nodes.end());
    for (const auto& rec : trace.records) {
        const auto* in = std::get_if<TraceInput>(&rec);
        if (in && in->kind == TraceInput::Kind::Crash) correct.erase(in->node);
    }
    return check_trace(trace, correct);
}

CheckReport check_trace(const Trace& trace, const std::set<NodeId>& correct) {
    return Walk(trace, correct).run();
}

}  // namespace trellis
