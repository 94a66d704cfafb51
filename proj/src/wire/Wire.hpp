/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Wire.hpp : length-prefixed message framing for the stream engine.
 *            Frame layout: 8-byte magic "CHNKSTRM", 2-byte version,
 *            2-byte message kind, 8-byte little-endian payload length,
 *            payload.
 *
 */

#ifndef CHUNKSTREAM_WIRE_HPP
#define CHUNKSTREAM_WIRE_HPP

#include "Socket.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <vector>

namespace chunkstream
{
namespace wire
{

inline constexpr char WireMagic[8] = {'C', 'H', 'N', 'K',
                                      'S', 'T', 'R', 'M'};
inline constexpr std::uint16_t WireVersion = 1;

enum class MsgKind : std::uint16_t
{
    Register = 1,    // reader -> control: join a reader group
    Announce = 2,    // control -> reader: staged step announcement
    Request = 3,     // reader -> data server: fetch a chunk sub-region
    Data = 4,        // data server -> reader: requested bytes
    Release = 5,     // reader -> control/data: done with a step
    Close = 6,       // end-of-stream / clean goodbye
    RegisterAck = 7, // control -> reader: full reader group meta
    WriterJoin = 8,  // peer writer process -> control
    StepOffer = 9,   // peer -> control: step fragment produced
    StepReply = 10,  // control -> peer: staged or discarded
    Free = 11,       // control -> peer: drop a step's payloads
    WriterClose = 12, // peer -> control: this writer process is done
    CloseAck = 13,    // control -> peer: stream fully drained
    Error = 15,
};

struct Frame
{
    MsgKind kind = MsgKind::Error;
    std::vector<std::uint8_t> payload;

    nlohmann::json Json() const;
};

/** Writes one frame.  Throws ConnectionLost on transport failure. */
void SendFrame(Socket &s, MsgKind kind,
               std::span<const std::uint8_t> payload);
void SendJson(Socket &s, MsgKind kind, const nlohmann::json &j);
void SendEmpty(Socket &s, MsgKind kind);

/** Reads one frame; nullopt on clean EOF at a frame boundary.  Throws
 *  ProtocolError on bad magic/version, ConnectionLost on broken
 *  transport. */
std::optional<Frame> RecvFrame(Socket &s);

/** Reads one frame and requires it to be of `kind`; an Error frame is
 *  rethrown as ProtocolError with the carried message. */
Frame Expect(Socket &s, MsgKind kind);

} // end namespace wire
} // end namespace chunkstream

#endif /* CHUNKSTREAM_WIRE_HPP */
