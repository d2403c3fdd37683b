#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "trellis/rt/frame.hpp"

namespace trellis::rt {

// "host:port" -> (host, port). Throws CodecError on garbage.
std::pair<std::string, uint16_t> split_addr(const std::string& addr);

// Point-to-point TCP transport with per-peer ordered reliable delivery.
//
// Each direction of a peer pair is its own connection, dialed by the sender.
// Data frames on a link are implicitly numbered by position; the receiver
// acks with a cumulative count, and a reconnect handshake (Hello/HelloAck)
// tells the sender where to resume, so frames survive connection loss
// without being duplicated or reordered. Frames queue across outages up to
// a memory bound; past it the oldest untransmitted State frames are shed
// (gossip is periodic and idempotent), while Join and back-end frames are
// never dropped.
//
// Inbound connections that do not open with Hello are client sessions:
// their frames are handed to onClientFrame keyed by connection id, and
// replies go out with send_client. Handlers run on reader threads; the
// caller is responsible for serializing.
class Transport {
public:
    struct Options {
        NodeId self;
        std::string listen;                   // port 0 binds an ephemeral port
        std::map<NodeId, std::string> addrs;  // peer address book
        size_t maxQueuedBytes = 64u << 20;    // per-link queue bound
        int64_t dialBackoffLoMs = 50;
        int64_t dialBackoffHiMs = 1000;
    };

    struct Handlers {
        std::function<void(const NodeId& from, MsgClass, std::string body)> onPeerFrame;
        std::function<void(uint64_t connId, MsgClass, std::string body)> onClientFrame;
        std::function<void(uint64_t connId)> onClientGone;
    };

    Transport(Options opt, Handlers h);
    ~Transport();

    void start();
    void stop();

    uint16_t port() const { return port_; }

    void send_peer(const NodeId& to, MsgClass cls, const std::string& body);
    void send_client(uint64_t connId, MsgClass cls, const std::string& body);

    void add_peer(const NodeId& id, const std::string& addr);
    std::map<NodeId, std::string> peers() const;

    // Sends a liveness probe to every peer in the address book, dialing
    // links that are down. Probes are fire-and-forget.
    void ping_all();

    // Severs every live peer connection (both directions) without touching
    // queued frames; links redial and resume. Client sessions are left
    // alone. Exists so tests can exercise reconnect recovery.
    void drop_links();

    // Steady-clock ms when a frame (of any kind) last arrived from the
    // peer; -1 if never.
    int64_t last_heard_ms(const NodeId& peer) const;

    std::map<std::string, uint64_t> counters() const;

private:
    struct QFrame {
        uint64_t seq = 0;  // 0 until first transmitted
        MsgClass cls = MsgClass::State;
        std::string bytes;  // encoded frame, header included
    };

    struct Link {
        NodeId peer;
        std::mutex mu;
        std::condition_variable cv;
        std::deque<QFrame> q;
        size_t qBytes = 0;
        size_t sendIdx = 0;    // q[0..sendIdx) transmitted, awaiting ack
        uint64_t nextSeq = 1;  // next sequence number to assign
        bool pingPending = false;
        bool stopFlag = false;
        int fd = -1;
        std::thread th;
    };

    struct Conn {
        uint64_t id = 0;
        int fd = -1;
        std::atomic<bool> done{false};
        std::atomic<bool> isPeerConn{false};
        NodeId peerId;  // set before isPeerConn, read after it
        std::mutex writeMu;
        std::thread th;
    };

    void accept_loop();
    void conn_loop(std::shared_ptr<Conn> c);
    void supersede_peer_conns(const NodeId& peer, uint64_t keepId);
    void link_loop(std::shared_ptr<Link> l);
    std::shared_ptr<Link> link_for(const NodeId& peer, bool create);
    std::string addr_of(const NodeId& peer) const;
    void note_heard(const NodeId& peer);
    void bump(const std::string& key, uint64_t n = 1);
    int dial(const std::string& addr, int64_t timeoutMs);

    Options opt_;
    Handlers h_;
    uint16_t port_ = 0;
    int listenFd_ = -1;
    std::thread acceptTh_;
    bool started_ = false;
    bool stopping_ = false;

    mutable std::mutex mu_;
    std::map<NodeId, std::string> addrs_;
    std::map<NodeId, std::shared_ptr<Link>> links_;
    std::map<uint64_t, std::shared_ptr<Conn>> conns_;
    uint64_t nextConnId_ = 1;
    std::map<NodeId, uint64_t> recvCount_;
    std::map<NodeId, int64_t> lastHeard_;
    std::map<std::string, uint64_t> counters_;
};

}  // namespace trellis::rt
