#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "trellis/types.hpp"

// Shared plumbing for the line-oriented trace and plan file formats.

namespace trellis::detail {

inline void require_token(const std::string& s) {
    for (char c : s)
        if (c == ' ' || c == '\t' || c == '\n' || c == '=' || c == ',' || c == ':')
            throw CodecError("identifier contains a reserved character: " + s);
    if (s.empty()) throw CodecError("identifier is empty");
}

inline std::string hex_bytes(const std::string& raw) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(raw.size() * 2);
    for (unsigned char c : raw) {
        out += digits[c >> 4];
        out += digits[c & 0xF];
    }
    return out;
}

inline std::string unhex_bytes(const std::string& hex) {
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw CodecError("bad hex digit");
    };
    if (hex.size() % 2) throw CodecError("odd hex length");
    std::string out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2)
        out += static_cast<char>((nib(hex[i]) << 4) | nib(hex[i + 1]));
    return out;
}

inline std::string hex_u64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string join_ids(const std::vector<NodeId>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        require_token(ids[i].v);
        if (i) out += ',';
        out += ids[i].v;
    }
    return out;
}

inline std::string config_token(const Configuration& c) {
    require_token(c.id.v);
    return c.id.v + ":" + join_ids(c.members);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
        size_t end = s.find(sep, start);
        if (end == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

inline std::vector<std::string> tokens_of(const std::string& line) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        size_t j = i;
        while (j < line.size() && line[j] != ' ') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

// Expects "key=value" and returns the value.
inline std::string kv(const std::string& token, const char* key) {
    size_t eq = token.find('=');
    if (eq == std::string::npos || token.compare(0, eq, key) != 0)
        throw CodecError(std::string("expected field ") + key + ", got: " + token);
    return token.substr(eq + 1);
}

inline uint64_t parse_u64(const std::string& s, int base = 10) {
    size_t pos = 0;
    uint64_t v = std::stoull(s, &pos, base);
    if (pos != s.size()) throw CodecError("bad number: " + s);
    return v;
}

inline int64_t parse_i64(const std::string& s) {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos, 10);
    if (pos != s.size()) throw CodecError("bad number: " + s);
    return v;
}

inline std::vector<NodeId> parse_ids(const std::string& s) {
    std::vector<NodeId> out;
    if (s.empty()) return out;
    for (auto& part : split(s, ',')) out.push_back(NodeId{part});
    return out;
}

inline Configuration parse_config(const std::string& s) {
    size_t colon = s.find(':');
    if (colon == std::string::npos) throw CodecError("bad configuration token: " + s);
    Configuration c;
    c.id = ConfigId{s.substr(0, colon)};
    c.members = parse_ids(s.substr(colon + 1));
    if (c.members.empty()) throw CodecError("configuration with no members: " + s);
    return c;
}

}  // namespace trellis::detail
