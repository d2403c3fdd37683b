#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace trellis {

// Identifiers are opaque byte strings chosen by the environment; the library
// never invents them. Ordering is lexicographic and total.
struct NodeId {
    std::string v;
    auto operator<=>(const NodeId&) const = default;
    bool empty() const { return v.empty(); }
};

struct ConfigId {
    std::string v;
    auto operator<=>(const ConfigId&) const = default;
};

// Ordered, non-empty member list. Two configurations with equal member sets
// but different ids are distinct configurations.
struct Configuration {
    ConfigId id;
    std::vector<NodeId> members;

    bool has_member(const NodeId& n) const {
        for (const auto& m : members)
            if (m == n) return true;
        return false;
    }
    auto operator<=>(const Configuration&) const = default;
};

struct Command {
    std::string id;       // unique per proposal attempt
    std::string payload;  // uninterpreted
    auto operator<=>(const Command&) const = default;
};

// Exactly one alternative is populated.
struct Entry {
    std::variant<Command, Configuration> value;

    bool is_config() const { return std::holds_alternative<Configuration>(value); }
    const Command& command() const { return std::get<Command>(value); }
    const Configuration& config() const { return std::get<Configuration>(value); }
    const std::string& entry_id() const {
        return is_config() ? config().id.v : command().id;
    }
    auto operator<=>(const Entry&) const = default;

    static Entry cmd(Command c) { return Entry{std::move(c)}; }
    static Entry cfg(Configuration c) { return Entry{std::move(c)}; }
};

using EntrySeq = std::vector<Entry>;

// Index of the first configuration entry, if any.
std::optional<size_t> first_config_index(const EntrySeq& s);

// True iff a is a (possibly equal) prefix of b.
bool is_prefix(const EntrySeq& a, const EntrySeq& b);

enum class OutputKind : uint8_t { Learn, NewConf, Ready };

// One notification from a replica to its environment. Learn carries a
// command entry, NewConf and Ready carry a configuration entry. seq is a
// per-emitter monotone counter shared by all three kinds.
struct OutputEvent {
    OutputKind kind;
    Entry body;
    NodeId emitter;
    uint64_t seq = 0;
};

// Contract violations by the caller (duplicate join, propose before join).
struct WellFormednessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Internal state disagreement that must never happen between correct nodes
// (trunk prefix mismatch, duplicate entry id reaching the trunk).
struct ConsistencyFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CodecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace trellis
