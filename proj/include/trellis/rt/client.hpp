#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trellis/rt/frame.hpp"

namespace trellis::rt {

// Blocking session with one node: synchronous request/reply over a single
// TCP connection, one outstanding request at a time. Used by the admin CLI,
// load generators, and tests.
class Client {
public:
    Client() = default;
    ~Client();
    Client(Client&& other) noexcept;
    Client& operator=(Client&& other) noexcept;
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    static Client connect(const std::string& addr, int64_t timeoutMs = 5000);
    bool connected() const { return fd_ >= 0; }
    void close();

    // True when the cluster learned the command, false when the node gave
    // up on it. Throws std::runtime_error on connection loss or timeout.
    bool propose(const std::string& key, const std::string& payload, int64_t timeoutMs = 30000);

    AdminStatus status(int64_t timeoutMs = 5000);

    // Requests a configuration change to exactly these members. Returns
    // {true, new config id} or {false, reason}.
    std::pair<bool, std::string> recon(const std::vector<NodeId>& members,
                                       int64_t timeoutMs = 5000);

private:
    std::pair<MsgClass, std::string> roundtrip(MsgClass cls, const std::string& body,
                                               int64_t timeoutMs);
    std::pair<MsgClass, std::string> read_frame(int64_t timeoutMs);

    int fd_ = -1;
    FrameParser parser_;
};

}  // namespace trellis::rt
