/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Socket.cpp
 *
 */

#include "Socket.hpp"

#include "chunkstream/Errors.hpp"

#include <cerrno>
#include <cstring>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace chunkstream
{
namespace wire
{

namespace
{

[[noreturn]] void ThrowErrno(const std::string &what)
{
    throw ConnectionLost(what + ": " + std::strerror(errno));
}

sockaddr_in MakeAddr(const std::string &address, std::uint16_t port)
{
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1)
    {
        throw Error("invalid IPv4 address \"" + address + "\"");
    }
    return addr;
}

} // end anonymous namespace

Socket &Socket::operator=(Socket &&other) noexcept
{
    if (this != &other)
    {
        Close();
        m_Fd = other.m_Fd;
        other.m_Fd = -1;
    }
    return *this;
}

Socket::~Socket() { Close(); }

void Socket::Close() noexcept
{
    if (m_Fd >= 0)
    {
        ::close(m_Fd);
        m_Fd = -1;
    }
}

void Socket::ShutdownWrite() noexcept
{
    if (m_Fd >= 0)
    {
        ::shutdown(m_Fd, SHUT_WR);
    }
}

void Socket::SendAll(std::span<const std::uint8_t> bytes)
{
    std::size_t sent = 0;
    while (sent < bytes.size())
    {
        const ssize_t n = ::send(m_Fd, bytes.data() + sent,
                                 bytes.size() - sent, MSG_NOSIGNAL);
        if (n < 0)
        {
            if (errno == EINTR)
            {
                continue;
            }
            ThrowErrno("send");
        }
        sent += static_cast<std::size_t>(n);
    }
}

bool Socket::RecvAll(std::span<std::uint8_t> bytes)
{
    std::size_t got = 0;
    while (got < bytes.size())
    {
        const ssize_t n =
            ::recv(m_Fd, bytes.data() + got, bytes.size() - got, 0);
        if (n < 0)
        {
            if (errno == EINTR)
            {
                continue;
            }
            ThrowErrno("recv");
        }
        if (n == 0)
        {
            if (got == 0)
            {
                return false; // clean EOF on a message boundary
            }
            throw ConnectionLost("peer closed mid-message");
        }
        got += static_cast<std::size_t>(n);
    }
    return true;
}

Socket Socket::ConnectTo(const std::string &address, std::uint16_t port)
{
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
    {
        ThrowErrno("socket");
    }
    Socket s(fd);
    const sockaddr_in addr = MakeAddr(address, port);
    if (::connect(fd, reinterpret_cast<const sockaddr *>(&addr),
                  sizeof(addr)) != 0)
    {
        ThrowErrno("connect to " + address + ":" + std::to_string(port));
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return s;
}

Listener::Listener(
    const std::string &address,
    std::optional<std::pair<std::uint16_t, std::uint16_t>> range)
{
    if (::pipe(m_StopPipe) != 0)
    {
        ThrowErrno("pipe");
    }
    m_Fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (m_Fd < 0)
    {
        ThrowErrno("socket");
    }
    const int one = 1;
    ::setsockopt(m_Fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    bool bound = false;
    if (range)
    {
        for (std::uint32_t port = range->first; port <= range->second; ++port)
        {
            sockaddr_in addr =
                MakeAddr(address, static_cast<std::uint16_t>(port));
            if (::bind(m_Fd, reinterpret_cast<const sockaddr *>(&addr),
                       sizeof(addr)) == 0)
            {
                bound = true;
                break;
            }
        }
        if (!bound)
        {
            throw Error("no free port in [" + std::to_string(range->first) +
                        ", " + std::to_string(range->second) + "] on " +
                        address);
        }
    }
    else
    {
        sockaddr_in addr = MakeAddr(address, 0);
        if (::bind(m_Fd, reinterpret_cast<const sockaddr *>(&addr),
                   sizeof(addr)) != 0)
        {
            ThrowErrno("bind " + address);
        }
    }
    sockaddr_in bound_addr{};
    socklen_t len = sizeof(bound_addr);
    if (::getsockname(m_Fd, reinterpret_cast<sockaddr *>(&bound_addr),
                      &len) != 0)
    {
        ThrowErrno("getsockname");
    }
    m_Port = ntohs(bound_addr.sin_port);
    if (::listen(m_Fd, 64) != 0)
    {
        ThrowErrno("listen");
    }
}

Listener::~Listener()
{
    Stop();
    if (m_Fd >= 0)
    {
        ::close(m_Fd);
    }
    if (m_StopPipe[0] >= 0)
    {
        ::close(m_StopPipe[0]);
    }
}

void Listener::Stop() noexcept
{
    if (m_StopPipe[1] >= 0)
    {
        ::close(m_StopPipe[1]); // EOF wakes any poll on the read end
        m_StopPipe[1] = -1;
    }
}

std::optional<Socket> Listener::Accept()
{
    while (true)
    {
        pollfd fds[2] = {{m_Fd, POLLIN, 0}, {m_StopPipe[0], POLLIN, 0}};
        const int n = ::poll(fds, 2, -1);
        if (n < 0)
        {
            if (errno == EINTR)
            {
                continue;
            }
            ThrowErrno("poll");
        }
        if (fds[1].revents != 0)
        {
            return std::nullopt; // stopped
        }
        if (fds[0].revents != 0)
        {
            const int client = ::accept(m_Fd, nullptr, nullptr);
            if (client < 0)
            {
                if (errno == EINTR || errno == ECONNABORTED)
                {
                    continue;
                }
                ThrowErrno("accept");
            }
            const int one = 1;
            ::setsockopt(client, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            return Socket(client);
        }
    }
}

std::pair<std::string, std::uint16_t> SplitEndpoint(const std::string &ep)
{
    const std::size_t colon = ep.rfind(':');
    if (colon == std::string::npos || colon + 1 >= ep.size())
    {
        throw ProtocolError("malformed endpoint \"" + ep + "\"");
    }
    const int port = std::stoi(ep.substr(colon + 1));
    if (port <= 0 || port > 65535)
    {
        throw ProtocolError("endpoint port out of range in \"" + ep + "\"");
    }
    return {ep.substr(0, colon), static_cast<std::uint16_t>(port)};
}

} // end namespace wire
} // end namespace chunkstream
