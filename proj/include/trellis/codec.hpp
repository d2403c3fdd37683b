#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "trellis/types.hpp"

namespace trellis {

// Message class byte. The same tagged encoding is used for simulator
// deliveries (tag + body) and for TCP frames (u32 length prefix + tag + body).
enum class MsgClass : uint8_t {
    Join = 0,
    State = 1,
    Backend = 2,
    ClientReq = 3,
    ClientRep = 4,
    Admin = 5,
    Control = 6,  // transport session management: hello, acks, pings
};

// Big-endian fixed-width integers, u32-length-prefixed byte strings.
class ByteWriter {
public:
    void u8(uint8_t x) { buf_.push_back(static_cast<char>(x)); }
    void u32(uint32_t x) {
        char b[4] = {static_cast<char>(x >> 24), static_cast<char>(x >> 16),
                     static_cast<char>(x >> 8), static_cast<char>(x)};
        buf_.append(b, 4);
    }
    void u64(uint64_t x) {
        u32(static_cast<uint32_t>(x >> 32));
        u32(static_cast<uint32_t>(x));
    }
    void str(std::string_view s) {
        u32(static_cast<uint32_t>(s.size()));
        buf_.append(s.data(), s.size());
    }
    std::string take() { return std::move(buf_); }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }
    uint32_t u32() {
        need(4);
        uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x = (x << 8) | static_cast<uint8_t>(data_[pos_ + i]);
        pos_ += 4;
        return x;
    }
    uint64_t u64() {
        uint64_t hi = u32();
        return (hi << 32) | u32();
    }
    std::string_view view() { return view(u32()); }
    // Raw bytes, no length prefix.
    std::string_view view(size_t n) {
        need(n);
        std::string_view s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() { return std::string(view()); }
    bool done() const { return pos_ == data_.size(); }
    size_t remaining() const { return data_.size() - pos_; }

private:
    void need(size_t n) const {
        if (data_.size() - pos_ < n) throw CodecError("truncated message");
    }
    std::string_view data_;
    size_t pos_ = 0;
};

void encode_configuration(ByteWriter& w, const Configuration& c);
Configuration decode_configuration(ByteReader& r);

void encode_entry(ByteWriter& w, const Entry& e);
Entry decode_entry(ByteReader& r);

void encode_entry_seq(ByteWriter& w, const EntrySeq& s);
EntrySeq decode_entry_seq(ByteReader& r);

// Walks an encoded entry without materializing it; used to skip known trunk
// prefixes in state messages. id() views into the underlying buffer.
struct EntryCursor {
    bool isConfig;
    std::string_view id;
};
EntryCursor skim_entry(ByteReader& r);

// FNV-1a, used for trace digests of message payloads.
uint64_t fnv1a(std::string_view s);

}  // namespace trellis
