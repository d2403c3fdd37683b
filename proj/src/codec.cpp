#include "trellis/codec.hpp"

namespace trellis {

namespace {
constexpr uint8_t kEntryCmd = 0;
constexpr uint8_t kEntryCfg = 1;
}  // namespace

void encode_configuration(ByteWriter& w, const Configuration& c) {
    w.str(c.id.v);
    w.u32(static_cast<uint32_t>(c.members.size()));
    for (const auto& m : c.members) w.str(m.v);
}

Configuration decode_configuration(ByteReader& r) {
    Configuration c;
    c.id.v = r.str();
    uint32_t n = r.u32();
    c.members.reserve(n);
    for (uint32_t i = 0; i < n; ++i) c.members.push_back(NodeId{r.str()});
    if (c.members.empty()) throw CodecError("configuration with no members");
    return c;
}

void encode_entry(ByteWriter& w, const Entry& e) {
    if (e.is_config()) {
        w.u8(kEntryCfg);
        encode_configuration(w, e.config());
    } else {
        w.u8(kEntryCmd);
        w.str(e.command().id);
        w.str(e.command().payload);
    }
}

Entry decode_entry(ByteReader& r) {
    uint8_t tag = r.u8();
    if (tag == kEntryCfg) return Entry::cfg(decode_configuration(r));
    if (tag == kEntryCmd) {
        Command c;
        c.id = r.str();
        c.payload = r.str();
        return Entry::cmd(std::move(c));
    }
    throw CodecError("bad entry tag");
}

void encode_entry_seq(ByteWriter& w, const EntrySeq& s) {
    w.u32(static_cast<uint32_t>(s.size()));
    for (const auto& e : s) encode_entry(w, e);
}

EntrySeq decode_entry_seq(ByteReader& r) {
    uint32_t n = r.u32();
    EntrySeq s;
    s.reserve(n);
    for (uint32_t i = 0; i < n; ++i) s.push_back(decode_entry(r));
    return s;
}

EntryCursor skim_entry(ByteReader& r) {
    uint8_t tag = r.u8();
    if (tag == kEntryCfg) {
        std::string_view id = r.view();
        uint32_t n = r.u32();
        for (uint32_t i = 0; i < n; ++i) r.view();
        return EntryCursor{true, id};
    }
    if (tag == kEntryCmd) {
        std::string_view id = r.view();
        r.view();  // payload
        return EntryCursor{false, id};
    }
    throw CodecError("bad entry tag");
}

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace trellis
