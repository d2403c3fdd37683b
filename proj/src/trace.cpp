#include "trellis/trace.hpp"

#include <algorithm>
#include <stdexcept>

#include "trellis/codec.hpp"
#include "trellis/detail/text.hpp"

namespace trellis {

using namespace detail;

namespace {

const char* kind_name(OutputKind k) {
    switch (k) {
        case OutputKind::Learn: return "learn";
        case OutputKind::NewConf: return "newconf";
        case OutputKind::Ready: return "ready";
    }
    return "?";
}

}  // namespace

std::string trace_header_line(const TraceHeader& h) {
    require_token(h.backend);
    std::string out = "H seed=" + std::to_string(h.seed);
    out += " nodes=" + join_ids(h.nodes);
    out += " backend=" + h.backend;
    out += " speculation=";
    out += h.speculation ? "on" : "off";
    out += " c0=" + config_token(h.c0);
    return out;
}

std::string trace_record_line(const TraceRecord& rec) {
    std::string out;
    if (const auto* in = std::get_if<TraceInput>(&rec)) {
        out += "I t=" + std::to_string(in->t);
        switch (in->kind) {
            case TraceInput::Kind::Propose:
                require_token(in->node.v);
                require_token(in->conf.v);
                require_token(in->cmd.id);
                out += " propose node=" + in->node.v + " conf=" + in->conf.v +
                       " cmd=" + in->cmd.id + " payload=" + hex_bytes(in->cmd.payload);
                break;
            case TraceInput::Kind::Recon:
                require_token(in->node.v);
                require_token(in->conf.v);
                out += " recon node=" + in->node.v + " parent=" + in->conf.v +
                       " new=" + config_token(in->newConf);
                break;
            case TraceInput::Kind::Crash:
                require_token(in->node.v);
                out += " crash node=" + in->node.v;
                break;
        }
    } else if (const auto* o = std::get_if<TraceOutput>(&rec)) {
        require_token(o->node.v);
        require_token(o->id);
        out += "O t=" + std::to_string(o->t) + " node=" + o->node.v +
               " seq=" + std::to_string(o->seq) + ' ' + kind_name(o->kind) + " id=" + o->id;
        if (o->kind != OutputKind::Learn) out += " members=" + join_ids(o->members);
    } else {
        const auto& n = std::get<TraceNet>(rec);
        require_token(n.from.v);
        require_token(n.to.v);
        out += "N t=" + std::to_string(n.t);
        out += n.deliver ? " dlvr" : " send";
        out += " from=" + n.from.v + " to=" + n.to.v + " class=" + std::to_string(n.cls) +
               " len=" + std::to_string(n.len) + " hash=" + hex_u64(n.hash);
    }
    return out;
}

std::string trace_quiescent_line(bool quiescent) {
    return quiescent ? "Q quiescent=1" : "Q quiescent=0";
}

std::string Trace::to_text() const {
    std::string out;
    out.reserve(records.size() * 48 + 128);
    out += trace_header_line(header);
    out += '\n';
    for (const auto& rec : records) {
        out += trace_record_line(rec);
        out += '\n';
    }
    out += trace_quiescent_line(quiescent);
    out += '\n';
    return out;
}

Trace Trace::from_text(const std::string& text) {
    Trace t;
    bool sawHeader = false;
    size_t lineNo = 0;
    for (auto& line : split(text, '\n')) {
        ++lineNo;
        if (line.empty()) continue;
        auto toks = tokens_of(line);
        try {
            if (toks[0] == "H") {
                t.header.seed = parse_u64(kv(toks.at(1), "seed"));
                t.header.nodes = parse_ids(kv(toks.at(2), "nodes"));
                t.header.backend = kv(toks.at(3), "backend");
                std::string spec = kv(toks.at(4), "speculation");
                if (spec != "on" && spec != "off") throw CodecError("bad speculation flag: " + spec);
                t.header.speculation = spec == "on";
                t.header.c0 = parse_config(kv(toks.at(5), "c0"));
                sawHeader = true;
            } else if (toks[0] == "I") {
                TraceInput in;
                in.t = parse_i64(kv(toks.at(1), "t"));
                const std::string& what = toks.at(2);
                if (what == "propose") {
                    in.kind = TraceInput::Kind::Propose;
                    in.node = NodeId{kv(toks.at(3), "node")};
                    in.conf = ConfigId{kv(toks.at(4), "conf")};
                    in.cmd.id = kv(toks.at(5), "cmd");
                    in.cmd.payload = unhex_bytes(kv(toks.at(6), "payload"));
                } else if (what == "recon") {
                    in.kind = TraceInput::Kind::Recon;
                    in.node = NodeId{kv(toks.at(3), "node")};
                    in.conf = ConfigId{kv(toks.at(4), "parent")};
                    in.newConf = parse_config(kv(toks.at(5), "new"));
                } else if (what == "crash") {
                    in.kind = TraceInput::Kind::Crash;
                    in.node = NodeId{kv(toks.at(3), "node")};
                } else {
                    throw CodecError("unknown input record: " + what);
                }
                t.records.emplace_back(std::move(in));
            } else if (toks[0] == "O") {
                TraceOutput o;
                o.t = parse_i64(kv(toks.at(1), "t"));
                o.node = NodeId{kv(toks.at(2), "node")};
                o.seq = parse_u64(kv(toks.at(3), "seq"));
                const std::string& what = toks.at(4);
                if (what == "learn") o.kind = OutputKind::Learn;
                else if (what == "newconf") o.kind = OutputKind::NewConf;
                else if (what == "ready") o.kind = OutputKind::Ready;
                else throw CodecError("unknown output record: " + what);
                o.id = kv(toks.at(5), "id");
                if (o.kind != OutputKind::Learn) o.members = parse_ids(kv(toks.at(6), "members"));
                t.records.emplace_back(std::move(o));
            } else if (toks[0] == "N") {
                TraceNet n;
                n.t = parse_i64(kv(toks.at(1), "t"));
                const std::string& what = toks.at(2);
                if (what == "send") n.deliver = false;
                else if (what == "dlvr") n.deliver = true;
                else throw CodecError("unknown network record: " + what);
                n.from = NodeId{kv(toks.at(3), "from")};
                n.to = NodeId{kv(toks.at(4), "to")};
                n.cls = static_cast<uint8_t>(parse_u64(kv(toks.at(5), "class")));
                n.len = static_cast<uint32_t>(parse_u64(kv(toks.at(6), "len")));
                n.hash = parse_u64(kv(toks.at(7), "hash"), 16);
                t.records.emplace_back(n);
            } else if (toks[0] == "Q") {
                std::string q = kv(toks.at(1), "quiescent");
                if (q != "0" && q != "1") throw CodecError("bad quiescent flag: " + q);
                t.quiescent = q == "1";
            } else {
                throw CodecError("unknown trace record type: " + toks[0]);
            }
        } catch (const std::out_of_range&) {
            throw CodecError("trace line " + std::to_string(lineNo) + " is missing fields");
        } catch (const std::invalid_argument&) {
            throw CodecError("trace line " + std::to_string(lineNo) + " has a malformed number");
        }
    }
    if (!sawHeader) throw CodecError("trace has no header line");
    return t;
}

Trace merge_traces(const std::vector<Trace>& parts) {
    if (parts.empty()) throw CodecError("nothing to merge");
    Trace out;
    out.header = parts.front().header;
    std::set<NodeId> nodes;
    out.quiescent = true;
    for (const auto& p : parts) {
        nodes.insert(p.header.nodes.begin(), p.header.nodes.end());
        out.quiescent = out.quiescent && p.quiescent;
    }
    out.header.nodes.assign(nodes.begin(), nodes.end());

    auto time_of = [](const TraceRecord& r) {
        if (const auto* in = std::get_if<TraceInput>(&r)) return in->t;
        if (const auto* o = std::get_if<TraceOutput>(&r)) return o->t;
        return std::get<TraceNet>(r).t;
    };
    std::vector<std::pair<int64_t, const TraceRecord*>> all;
    for (const auto& p : parts)
        for (const auto& r : p.records) all.emplace_back(time_of(r), &r);
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    out.records.reserve(all.size());
    for (auto& [when, rec] : all) out.records.push_back(*rec);
    return out;
}

}  // namespace trellis
