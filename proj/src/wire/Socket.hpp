/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Socket.hpp : minimal RAII TCP sockets used by the stream engine
 *
 */

#ifndef CHUNKSTREAM_SOCKET_HPP
#define CHUNKSTREAM_SOCKET_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace chunkstream
{
namespace wire
{

/** A connected TCP socket.  Movable, closes on destruction.  SendAll
 *  and RecvAll loop over partial transfers; failures throw
 *  ConnectionLost. */
class Socket
{
public:
    Socket() = default;
    explicit Socket(int fd) : m_Fd(fd) {}
    Socket(Socket &&other) noexcept : m_Fd(other.m_Fd) { other.m_Fd = -1; }
    Socket &operator=(Socket &&other) noexcept;
    Socket(const Socket &) = delete;
    Socket &operator=(const Socket &) = delete;
    ~Socket();

    bool Valid() const noexcept { return m_Fd >= 0; }
    int Fd() const noexcept { return m_Fd; }

    void SendAll(std::span<const std::uint8_t> bytes);
    /** Fills the span completely.  Returns false on clean EOF at the
     *  first byte; throws ConnectionLost on mid-message EOF or error. */
    bool RecvAll(std::span<std::uint8_t> bytes);

    /** Half-close for writing (signals EOF to the peer). */
    void ShutdownWrite() noexcept;
    void Close() noexcept;

    static Socket ConnectTo(const std::string &address, std::uint16_t port);

private:
    int m_Fd = -1;
};

/** A listening socket with a wakeable Accept: Stop() unblocks any
 *  pending Accept, which then returns nullopt. */
class Listener
{
public:
    /** Binds to the given address; tries ports in [range] when given,
     *  otherwise an ephemeral port.  Throws Error on failure. */
    Listener(const std::string &address,
             std::optional<std::pair<std::uint16_t, std::uint16_t>> range);
    ~Listener();
    Listener(const Listener &) = delete;
    Listener &operator=(const Listener &) = delete;

    std::uint16_t Port() const noexcept { return m_Port; }

    /** Blocks until a connection arrives (returns it) or Stop() is
     *  called (returns nullopt). */
    std::optional<Socket> Accept();

    /** Unblocks all Accept calls, now and in the future. */
    void Stop() noexcept;

private:
    int m_Fd = -1;
    int m_StopPipe[2] = {-1, -1};
    std::uint16_t m_Port = 0;
};

/** "address:port" split helper. */
std::pair<std::string, std::uint16_t> SplitEndpoint(const std::string &ep);

} // end namespace wire
} // end namespace chunkstream

#endif /* CHUNKSTREAM_SOCKET_HPP */
