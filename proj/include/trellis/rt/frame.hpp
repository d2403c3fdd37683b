#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "trellis/codec.hpp"

namespace trellis::rt {

// TCP wire format: a frame is a 4-byte big-endian length covering the class
// tag plus the body, then the tag byte, then the body. A 10-byte body with
// tag 1 goes out as 00 00 00 0B 01 <body>; an empty body encodes length 1.

constexpr size_t kMaxFrameBytes = 64u << 20;

inline std::string frame_encode(MsgClass cls, std::string_view body) {
    if (body.size() + 1 > kMaxFrameBytes) throw CodecError("frame too large");
    std::string out;
    out.reserve(5 + body.size());
    uint32_t len = static_cast<uint32_t>(body.size()) + 1;
    out.push_back(static_cast<char>((len >> 24) & 0xff));
    out.push_back(static_cast<char>((len >> 16) & 0xff));
    out.push_back(static_cast<char>((len >> 8) & 0xff));
    out.push_back(static_cast<char>(len & 0xff));
    out.push_back(static_cast<char>(cls));
    out.append(body);
    return out;
}

// Incremental parser for a byte stream of frames. Feed whatever arrived,
// then drain complete frames with next().
class FrameParser {
public:
    void feed(const char* data, size_t n) { buf_.append(data, n); }

    bool next(MsgClass& cls, std::string& body) {
        if (buf_.size() - pos_ < 4) return compact();
        const auto* p = reinterpret_cast<const unsigned char*>(buf_.data() + pos_);
        uint32_t len = (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) | (uint32_t{p[2]} << 8) |
                       uint32_t{p[3]};
        if (len < 1) throw CodecError("frame length below minimum");
        if (len > kMaxFrameBytes) throw CodecError("frame too large");
        if (buf_.size() - pos_ < 4 + size_t{len}) return compact();
        uint8_t tag = p[4];
        if (tag > static_cast<uint8_t>(MsgClass::Control)) throw CodecError("unknown frame class");
        cls = static_cast<MsgClass>(tag);
        body.assign(buf_, pos_ + 5, len - 1);
        pos_ += 4 + size_t{len};
        return true;
    }

private:
    bool compact() {
        if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
            buf_.erase(0, pos_);
            pos_ = 0;
        }
        return false;
    }

    std::string buf_;
    size_t pos_ = 0;
};

// Bodies for Control frames: transport-level chatter that is never queued,
// numbered, or retransmitted.
enum class CtrlKind : uint8_t {
    Hello = 0,     // opens a peer link: sender identity
    HelloAck = 1,  // reply: how many data frames the receiver has from us
    Ack = 2,       // cumulative count of data frames received on this link
    Ping = 3,      // liveness probe, carries sender identity
};

inline std::string ctrl_hello(const NodeId& self) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(CtrlKind::Hello));
    w.str(self.v);
    return w.take();
}

inline std::string ctrl_hello_ack(uint64_t recvCount) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(CtrlKind::HelloAck));
    w.u64(recvCount);
    return w.take();
}

inline std::string ctrl_ack(uint64_t recvCount) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(CtrlKind::Ack));
    w.u64(recvCount);
    return w.take();
}

inline std::string ctrl_ping(const NodeId& self) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(CtrlKind::Ping));
    w.str(self.v);
    return w.take();
}

// Client session bodies. A request carries a key (the caller's handle) and
// an opaque payload; the reply echoes the key with an outcome flag.

inline std::string client_req_body(const std::string& key, const std::string& payload) {
    ByteWriter w;
    w.str(key);
    w.str(payload);
    return w.take();
}

inline std::string client_rep_body(bool ok, const std::string& key) {
    ByteWriter w;
    w.u8(ok ? 1 : 0);
    w.str(key);
    return w.take();
}

// Admin session bodies, discriminated by a leading op byte.
enum class AdminOp : uint8_t {
    StatusReq = 0,
    StatusRep = 1,
    ReconReq = 2,
    ReconRep = 3,
};

struct AdminStatus {
    bool active = false;
    bool member = false;
    uint64_t trunkLen = 0;
    ConfigId curConf;
    std::vector<NodeId> view;
};

inline std::string admin_status_req_body() {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(AdminOp::StatusReq));
    return w.take();
}

inline std::string admin_status_rep_body(const AdminStatus& s) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(AdminOp::StatusRep));
    w.u8(s.active ? 1 : 0);
    w.u8(s.member ? 1 : 0);
    w.u64(s.trunkLen);
    w.str(s.curConf.v);
    w.u32(static_cast<uint32_t>(s.view.size()));
    for (const auto& n : s.view) w.str(n.v);
    return w.take();
}

inline AdminStatus parse_admin_status(ByteReader& r) {
    AdminStatus s;
    s.active = r.u8() != 0;
    s.member = r.u8() != 0;
    s.trunkLen = r.u64();
    s.curConf = ConfigId{r.str()};
    uint32_t n = r.u32();
    s.view.reserve(n);
    for (uint32_t i = 0; i < n; ++i) s.view.push_back(NodeId{r.str()});
    return s;
}

inline std::string admin_recon_req_body(const std::vector<NodeId>& members) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(AdminOp::ReconReq));
    w.u32(static_cast<uint32_t>(members.size()));
    for (const auto& n : members) w.str(n.v);
    return w.take();
}

inline std::string admin_recon_rep_body(bool ok, const std::string& idOrReason) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(AdminOp::ReconRep));
    w.u8(ok ? 1 : 0);
    w.str(idOrReason);
    return w.take();
}

}  // namespace trellis::rt
