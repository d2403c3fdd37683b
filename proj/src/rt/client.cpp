#include "trellis/rt/client.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

#include "trellis/rt/transport.hpp"

namespace trellis::rt {

namespace {

int64_t steady_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

void write_all_or_throw(int fd, const std::string& bytes) {
    size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error("connection lost: " + std::string(strerror(errno)));
        }
        off += static_cast<size_t>(n);
    }
}

}  // namespace

Client::~Client() { close(); }

Client::Client(Client&& other) noexcept : fd_(other.fd_), parser_(std::move(other.parser_)) {
    other.fd_ = -1;
}

Client& Client::operator=(Client&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        parser_ = std::move(other.parser_);
        other.fd_ = -1;
    }
    return *this;
}

void Client::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Client Client::connect(const std::string& addr, int64_t timeoutMs) {
    auto [host, port] = split_addr(addr);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    std::string target = (host.empty() || host == "0.0.0.0") ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, target.c_str(), &sa.sin_addr) != 1) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(target.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
            throw std::runtime_error("cannot resolve " + host);
        sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
        ::freeaddrinfo(res);
    }
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket: " + std::string(strerror(errno)));
    int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
    if (rc != 0 && errno != EINPROGRESS) {
        int err = errno;
        ::close(fd);
        throw std::runtime_error("connect " + addr + ": " + strerror(err));
    }
    if (rc != 0) {
        pollfd pf{fd, POLLOUT, 0};
        if (::poll(&pf, 1, static_cast<int>(timeoutMs)) <= 0) {
            ::close(fd);
            throw std::runtime_error("connect " + addr + ": timed out");
        }
        int err = 0;
        socklen_t elen = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen);
        if (err != 0) {
            ::close(fd);
            throw std::runtime_error("connect " + addr + ": " + strerror(err));
        }
    }
    ::fcntl(fd, F_SETFL, flags);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    Client c;
    c.fd_ = fd;
    return c;
}

std::pair<MsgClass, std::string> Client::read_frame(int64_t timeoutMs) {
    int64_t deadline = steady_ms() + timeoutMs;
    char buf[65536];
    for (;;) {
        MsgClass cls;
        std::string body;
        if (parser_.next(cls, body)) return {cls, std::move(body)};
        int64_t left = deadline - steady_ms();
        if (left <= 0) throw std::runtime_error("request timed out");
        pollfd pf{fd_, POLLIN, 0};
        int pr = ::poll(&pf, 1, static_cast<int>(left));
        if (pr == 0) throw std::runtime_error("request timed out");
        if (pr < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error("poll: " + std::string(strerror(errno)));
        }
        ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
        if (n == 0) throw std::runtime_error("connection closed by node");
        if (n < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error("recv: " + std::string(strerror(errno)));
        }
        parser_.feed(buf, static_cast<size_t>(n));
    }
}

std::pair<MsgClass, std::string> Client::roundtrip(MsgClass cls, const std::string& body,
                                                   int64_t timeoutMs) {
    if (fd_ < 0) throw std::runtime_error("client is not connected");
    write_all_or_throw(fd_, frame_encode(cls, body));
    return read_frame(timeoutMs);
}

bool Client::propose(const std::string& key, const std::string& payload, int64_t timeoutMs) {
    if (fd_ < 0) throw std::runtime_error("client is not connected");
    write_all_or_throw(fd_, frame_encode(MsgClass::ClientReq, client_req_body(key, payload)));
    int64_t deadline = steady_ms() + timeoutMs;
    for (;;) {
        int64_t left = deadline - steady_ms();
        if (left <= 0) throw std::runtime_error("request timed out");
        auto [cls, body] = read_frame(left);
        if (cls != MsgClass::ClientRep) continue;
        ByteReader r(body);
        bool ok = r.u8() != 0;
        if (r.str() == key) return ok;
    }
}

AdminStatus Client::status(int64_t timeoutMs) {
    int64_t deadline = steady_ms() + timeoutMs;
    write_all_or_throw(fd_, frame_encode(MsgClass::Admin, admin_status_req_body()));
    for (;;) {
        int64_t left = deadline - steady_ms();
        if (left <= 0) throw std::runtime_error("request timed out");
        auto [cls, body] = read_frame(left);
        if (cls != MsgClass::Admin) continue;
        ByteReader r(body);
        if (static_cast<AdminOp>(r.u8()) != AdminOp::StatusRep) continue;
        return parse_admin_status(r);
    }
}

std::pair<bool, std::string> Client::recon(const std::vector<NodeId>& members,
                                           int64_t timeoutMs) {
    int64_t deadline = steady_ms() + timeoutMs;
    write_all_or_throw(fd_, frame_encode(MsgClass::Admin, admin_recon_req_body(members)));
    for (;;) {
        int64_t left = deadline - steady_ms();
        if (left <= 0) throw std::runtime_error("request timed out");
        auto [cls, body] = read_frame(left);
        if (cls != MsgClass::Admin) continue;
        ByteReader r(body);
        if (static_cast<AdminOp>(r.u8()) != AdminOp::ReconRep) continue;
        bool ok = r.u8() != 0;
        return {ok, r.str()};
    }
}

}  // namespace trellis::rt
