#include "trellis/rt/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

namespace trellis::rt {

namespace {

int64_t steady_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

bool write_all(int fd, const std::string& bytes) {
    size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        off += static_cast<size_t>(n);
    }
    return true;
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

std::pair<std::string, uint16_t> split_addr(const std::string& addr) {
    auto pos = addr.rfind(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= addr.size())
        throw CodecError("address must be host:port, got '" + addr + "'");
    std::string host = addr.substr(0, pos);
    unsigned long port = 0;
    try {
        size_t used = 0;
        port = std::stoul(addr.substr(pos + 1), &used);
        if (used != addr.size() - pos - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw CodecError("bad port in address '" + addr + "'");
    }
    if (port > 65535) throw CodecError("port out of range in '" + addr + "'");
    return {host, static_cast<uint16_t>(port)};
}

Transport::Transport(Options opt, Handlers h) : opt_(std::move(opt)), h_(std::move(h)) {
    addrs_ = opt_.addrs;
    addrs_.erase(opt_.self);
}

Transport::~Transport() { stop(); }

void Transport::start() {
    auto [host, port] = split_addr(opt_.listen);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket: " + std::string(strerror(errno)));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (host.empty() || host == "0.0.0.0") {
        sa.sin_addr.s_addr = htonl(INADDR_ANY);
    } else if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
        ::close(fd);
        throw std::runtime_error("listen host must be an IPv4 address: " + host);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
        int err = errno;
        ::close(fd);
        throw std::runtime_error("bind " + opt_.listen + ": " + strerror(err));
    }
    if (::listen(fd, 64) != 0) {
        int err = errno;
        ::close(fd);
        throw std::runtime_error("listen: " + std::string(strerror(err)));
    }
    socklen_t salen = sizeof sa;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &salen);
    port_ = ntohs(sa.sin_port);
    listenFd_ = fd;
    started_ = true;
    acceptTh_ = std::thread([this] { accept_loop(); });
}

void Transport::stop() {
    {
        std::lock_guard lk(mu_);
        if (!started_ || stopping_) return;
        stopping_ = true;
    }
    ::shutdown(listenFd_, SHUT_RDWR);
    if (acceptTh_.joinable()) acceptTh_.join();
    ::close(listenFd_);
    listenFd_ = -1;

    std::vector<std::shared_ptr<Link>> links;
    std::vector<std::shared_ptr<Conn>> conns;
    {
        std::lock_guard lk(mu_);
        for (auto& [id, l] : links_) links.push_back(l);
        for (auto& [id, c] : conns_) conns.push_back(c);
    }
    for (auto& l : links) {
        std::lock_guard lk(l->mu);
        l->stopFlag = true;
        if (l->fd >= 0) ::shutdown(l->fd, SHUT_RDWR);
        l->cv.notify_all();
    }
    for (auto& l : links) {
        if (l->th.joinable()) l->th.join();
    }
    for (auto& c : conns) {
        if (c->fd >= 0) ::shutdown(c->fd, SHUT_RDWR);
    }
    for (auto& c : conns) {
        if (c->th.joinable()) c->th.join();
        if (c->fd >= 0) ::close(c->fd);
        c->fd = -1;
    }
}

int Transport::dial(const std::string& addr, int64_t timeoutMs) {
    std::string host;
    uint16_t port;
    try {
        auto hp = split_addr(addr);
        host = hp.first;
        port = hp.second;
    } catch (const CodecError&) {
        return -1;
    }
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    std::string target = (host.empty() || host == "0.0.0.0") ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, target.c_str(), &sa.sin_addr) != 1) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(target.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) return -1;
        sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
        ::freeaddrinfo(res);
    }
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return -1;
    int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
    if (rc != 0 && errno != EINPROGRESS) {
        ::close(fd);
        return -1;
    }
    if (rc != 0) {
        pollfd pf{fd, POLLOUT, 0};
        if (::poll(&pf, 1, static_cast<int>(timeoutMs)) <= 0) {
            ::close(fd);
            return -1;
        }
        int err = 0;
        socklen_t elen = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen);
        if (err != 0) {
            ::close(fd);
            return -1;
        }
    }
    ::fcntl(fd, F_SETFL, flags);
    set_nodelay(fd);
    return fd;
}

void Transport::accept_loop() {
    for (;;) {
        sockaddr_in sa{};
        socklen_t salen = sizeof sa;
        int fd = ::accept(listenFd_, reinterpret_cast<sockaddr*>(&sa), &salen);
        if (fd < 0) {
            if (errno == EINTR) continue;
            return;  // listener closed
        }
        set_nodelay(fd);
        auto c = std::make_shared<Conn>();
        c->fd = fd;
        std::vector<std::shared_ptr<Conn>> reap;
        {
            std::lock_guard lk(mu_);
            if (stopping_) {
                ::close(fd);
                return;
            }
            c->id = nextConnId_++;
            conns_[c->id] = c;
            for (auto it = conns_.begin(); it != conns_.end();) {
                if (it->second->done.load() && it->second->id != c->id) {
                    reap.push_back(it->second);
                    it = conns_.erase(it);
                } else {
                    ++it;
                }
            }
        }
        for (auto& old : reap) {
            if (old->th.joinable()) old->th.join();
            if (old->fd >= 0) ::close(old->fd);
            old->fd = -1;
        }
        c->th = std::thread([this, c] { conn_loop(c); });
    }
}

void Transport::conn_loop(std::shared_ptr<Conn> c) {
    FrameParser parser;
    char buf[65536];
    bool classified = false;
    bool isPeer = false;
    NodeId peer;
    for (;;) {
        ssize_t n = ::recv(c->fd, buf, sizeof buf, 0);
        if (n == 0) break;
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        parser.feed(buf, static_cast<size_t>(n));
        MsgClass cls;
        std::string body;
        bool ackDirty = false;
        uint64_t ackCount = 0;
        bool bad = false;
        try {
            while (parser.next(cls, body)) {
                if (!classified) {
                    if (cls == MsgClass::Control) {
                        ByteReader r(body);
                        if (static_cast<CtrlKind>(r.u8()) != CtrlKind::Hello) {
                            bad = true;
                            break;
                        }
                        peer = NodeId{r.str()};
                        isPeer = true;
                        classified = true;
                        c->peerId = peer;
                        c->isPeerConn.store(true);
                        note_heard(peer);
                        // Retire any earlier inbound connection from this
                        // peer before reporting how much arrived, so frames
                        // still buffered there are either counted or
                        // replayed, never duplicated or reordered.
                        supersede_peer_conns(peer, c->id);
                        uint64_t have;
                        {
                            std::lock_guard lk(mu_);
                            have = recvCount_[peer];
                        }
                        std::lock_guard wl(c->writeMu);
                        write_all(c->fd, frame_encode(MsgClass::Control, ctrl_hello_ack(have)));
                        continue;
                    }
                    classified = true;
                    isPeer = false;
                }
                if (isPeer) {
                    if (cls == MsgClass::Control) {
                        ByteReader r(body);
                        auto kind = static_cast<CtrlKind>(r.u8());
                        if (kind == CtrlKind::Ping) {
                            note_heard(NodeId{r.str()});
                        } else if (kind == CtrlKind::Hello) {
                            uint64_t have;
                            {
                                std::lock_guard lk(mu_);
                                have = recvCount_[peer];
                            }
                            std::lock_guard wl(c->writeMu);
                            write_all(c->fd, frame_encode(MsgClass::Control, ctrl_hello_ack(have)));
                        }
                        continue;
                    }
                    {
                        std::lock_guard lk(mu_);
                        ackCount = ++recvCount_[peer];
                        counters_["peer_frames_recv"]++;
                    }
                    ackDirty = true;
                    note_heard(peer);
                    if (h_.onPeerFrame) h_.onPeerFrame(peer, cls, std::move(body));
                } else {
                    if (cls == MsgClass::Control) continue;
                    bump("client_frames_recv");
                    if (h_.onClientFrame) h_.onClientFrame(c->id, cls, std::move(body));
                }
            }
        } catch (const CodecError&) {
            bad = true;
        }
        if (ackDirty) {
            std::lock_guard wl(c->writeMu);
            write_all(c->fd, frame_encode(MsgClass::Control, ctrl_ack(ackCount)));
        }
        if (bad) break;
    }
    if (classified && !isPeer && h_.onClientGone) h_.onClientGone(c->id);
    ::shutdown(c->fd, SHUT_RDWR);
    c->done.store(true);
}

void Transport::supersede_peer_conns(const NodeId& peer, uint64_t keepId) {
    std::vector<std::shared_ptr<Conn>> old;
    {
        std::lock_guard lk(mu_);
        if (stopping_) return;  // stop() owns every connection now
        for (auto it = conns_.begin(); it != conns_.end();) {
            auto& cand = it->second;
            if (cand->id != keepId && cand->isPeerConn.load() && cand->peerId == peer) {
                old.push_back(cand);
                it = conns_.erase(it);
            } else {
                ++it;
            }
        }
    }
    for (auto& c : old) {
        if (c->fd >= 0) ::shutdown(c->fd, SHUT_RDWR);
        if (c->th.joinable()) c->th.join();
        if (c->fd >= 0) ::close(c->fd);
        c->fd = -1;
    }
}

std::shared_ptr<Transport::Link> Transport::link_for(const NodeId& peer, bool create) {
    std::lock_guard lk(mu_);
    auto it = links_.find(peer);
    if (it != links_.end()) return it->second;
    if (!create || stopping_) return nullptr;
    if (addrs_.find(peer) == addrs_.end()) return nullptr;
    auto l = std::make_shared<Link>();
    l->peer = peer;
    links_[peer] = l;
    l->th = std::thread([this, l] { link_loop(l); });
    return l;
}

std::string Transport::addr_of(const NodeId& peer) const {
    std::lock_guard lk(mu_);
    auto it = addrs_.find(peer);
    return it == addrs_.end() ? std::string{} : it->second;
}

void Transport::link_loop(std::shared_ptr<Link> l) {
    int64_t backoff = opt_.dialBackoffLoMs;
    FrameParser parser;
    std::unique_lock lk(l->mu);
    for (;;) {
        l->cv.wait(lk, [&] {
            return l->stopFlag || l->fd >= 0 || l->sendIdx < l->q.size() || l->pingPending;
        });
        if (l->stopFlag) break;

        if (l->fd < 0) {
            lk.unlock();
            std::string addr = addr_of(l->peer);
            int fd = addr.empty() ? -1 : dial(addr, 1000);
            uint64_t resume = 0;
            bool ok = false;
            if (fd >= 0) {
                // handshake: announce ourselves, learn how far the peer got
                ok = write_all(fd, frame_encode(MsgClass::Control, ctrl_hello(opt_.self)));
                if (ok) {
                    ok = false;
                    timeval tv{2, 0};
                    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
                    FrameParser hp;
                    char buf[4096];
                    while (!ok) {
                        ssize_t n = ::recv(fd, buf, sizeof buf, 0);
                        if (n <= 0) break;
                        hp.feed(buf, static_cast<size_t>(n));
                        MsgClass cls;
                        std::string body;
                        try {
                            while (hp.next(cls, body)) {
                                if (cls != MsgClass::Control) continue;
                                ByteReader r(body);
                                if (static_cast<CtrlKind>(r.u8()) == CtrlKind::HelloAck) {
                                    resume = r.u64();
                                    ok = true;
                                    break;
                                }
                            }
                        } catch (const CodecError&) {
                            break;
                        }
                    }
                    if (ok) {
                        timeval off{0, 0};
                        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &off, sizeof off);
                    }
                }
                if (!ok) ::close(fd);
            }
            lk.lock();
            if (!ok) {
                l->cv.wait_for(lk, std::chrono::milliseconds(backoff), [&] { return l->stopFlag; });
                backoff = std::min(backoff * 2, opt_.dialBackoffHiMs);
                if (l->stopFlag) break;
                continue;
            }
            bump("connect");
            backoff = opt_.dialBackoffLoMs;
            while (!l->q.empty() && l->q.front().seq != 0 && l->q.front().seq <= resume) {
                l->qBytes -= l->q.front().bytes.size();
                l->q.pop_front();
                if (l->sendIdx > 0) --l->sendIdx;
            }
            l->sendIdx = 0;
            l->fd = fd;
            parser = FrameParser{};
        }

        std::vector<std::string> out;
        while (l->sendIdx < l->q.size()) {
            QFrame& f = l->q[l->sendIdx];
            if (f.seq == 0) f.seq = l->nextSeq++;
            out.push_back(f.bytes);
            ++l->sendIdx;
        }
        bool ping = l->pingPending;
        l->pingPending = false;
        int fd = l->fd;
        lk.unlock();

        bool dead = false;
        for (const auto& b : out) {
            if (!write_all(fd, b)) {
                dead = true;
                break;
            }
        }
        if (!dead && !out.empty()) bump("peer_frames_sent", out.size());
        if (!dead && ping && !write_all(fd, frame_encode(MsgClass::Control, ctrl_ping(opt_.self))))
            dead = true;

        uint64_t ackTo = 0;
        if (!dead) {
            char buf[4096];
            for (;;) {
                ssize_t n = ::recv(fd, buf, sizeof buf, MSG_DONTWAIT);
                if (n > 0) {
                    parser.feed(buf, static_cast<size_t>(n));
                    continue;
                }
                if (n == 0) {
                    dead = true;
                } else if (errno == EINTR) {
                    continue;
                } else if (errno != EAGAIN && errno != EWOULDBLOCK) {
                    dead = true;
                }
                break;
            }
            MsgClass cls;
            std::string body;
            try {
                while (parser.next(cls, body)) {
                    if (cls != MsgClass::Control) continue;
                    ByteReader r(body);
                    auto kind = static_cast<CtrlKind>(r.u8());
                    if (kind == CtrlKind::Ack || kind == CtrlKind::HelloAck)
                        ackTo = std::max(ackTo, r.u64());
                }
            } catch (const CodecError&) {
                dead = true;
            }
        }

        lk.lock();
        if (ackTo > 0) {
            while (!l->q.empty() && l->q.front().seq != 0 && l->q.front().seq <= ackTo) {
                l->qBytes -= l->q.front().bytes.size();
                l->q.pop_front();
                if (l->sendIdx > 0) --l->sendIdx;
            }
        }
        if (dead) {
            ::close(l->fd);
            l->fd = -1;
            parser = FrameParser{};
            continue;
        }
        l->cv.wait_for(lk, std::chrono::milliseconds(5), [&] {
            return l->stopFlag || l->sendIdx < l->q.size() || l->pingPending;
        });
    }
    if (l->fd >= 0) {
        ::close(l->fd);
        l->fd = -1;
    }
}

void Transport::send_peer(const NodeId& to, MsgClass cls, const std::string& body) {
    if (to == opt_.self) {
        bump("self_send_dropped");
        return;
    }
    auto l = link_for(to, true);
    if (!l) {
        bump("unknown_peer_dropped");
        return;
    }
    std::string bytes = frame_encode(cls, body);
    {
        std::lock_guard lk(l->mu);
        if (l->qBytes + bytes.size() > opt_.maxQueuedBytes) {
            for (size_t i = l->sendIdx;
                 i < l->q.size() && l->qBytes + bytes.size() > opt_.maxQueuedBytes;) {
                if (l->q[i].cls == MsgClass::State) {
                    l->qBytes -= l->q[i].bytes.size();
                    l->q.erase(l->q.begin() + static_cast<long>(i));
                    bump("state_frames_shed");
                } else {
                    ++i;
                }
            }
            if (l->qBytes + bytes.size() > opt_.maxQueuedBytes && cls == MsgClass::State) {
                bump("state_frames_shed");
                return;
            }
        }
        l->qBytes += bytes.size();
        l->q.push_back(QFrame{0, cls, std::move(bytes)});
        l->cv.notify_all();
    }
}

void Transport::send_client(uint64_t connId, MsgClass cls, const std::string& body) {
    std::shared_ptr<Conn> c;
    {
        std::lock_guard lk(mu_);
        auto it = conns_.find(connId);
        if (it == conns_.end()) return;
        c = it->second;
    }
    if (c->done.load()) return;
    std::string bytes = frame_encode(cls, body);
    std::lock_guard wl(c->writeMu);
    if (c->fd >= 0) write_all(c->fd, bytes);
}

void Transport::add_peer(const NodeId& id, const std::string& addr) {
    if (id == opt_.self) return;
    std::lock_guard lk(mu_);
    addrs_[id] = addr;
}

std::map<NodeId, std::string> Transport::peers() const {
    std::lock_guard lk(mu_);
    return addrs_;
}

void Transport::ping_all() {
    std::vector<NodeId> ids;
    {
        std::lock_guard lk(mu_);
        for (auto& [id, addr] : addrs_) ids.push_back(id);
    }
    for (auto& id : ids) {
        auto l = link_for(id, true);
        if (!l) continue;
        std::lock_guard lk(l->mu);
        l->pingPending = true;
        l->cv.notify_all();
    }
}

void Transport::drop_links() {
    std::vector<std::shared_ptr<Link>> links;
    std::vector<std::shared_ptr<Conn>> conns;
    {
        std::lock_guard lk(mu_);
        for (auto& [id, l] : links_) links.push_back(l);
        for (auto& [id, c] : conns_) conns.push_back(c);
        counters_["links_dropped"]++;
    }
    for (auto& l : links) {
        std::lock_guard lk(l->mu);
        if (l->fd >= 0) ::shutdown(l->fd, SHUT_RDWR);
    }
    for (auto& c : conns) {
        if (c->isPeerConn.load() && !c->done.load() && c->fd >= 0) ::shutdown(c->fd, SHUT_RDWR);
    }
}

int64_t Transport::last_heard_ms(const NodeId& peer) const {
    std::lock_guard lk(mu_);
    auto it = lastHeard_.find(peer);
    return it == lastHeard_.end() ? -1 : it->second;
}

void Transport::note_heard(const NodeId& peer) {
    std::lock_guard lk(mu_);
    lastHeard_[peer] = steady_ms();
}

void Transport::bump(const std::string& key, uint64_t n) {
    std::lock_guard lk(mu_);
    counters_[key] += n;
}

std::map<std::string, uint64_t> Transport::counters() const {
    std::lock_guard lk(mu_);
    return counters_;
}

}  // namespace trellis::rt
