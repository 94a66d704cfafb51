/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Wire.cpp
 *
 */

#include "Wire.hpp"

#include "chunkstream/Errors.hpp"

#include <cstring>

namespace chunkstream
{
namespace wire
{

namespace
{

void PutU16LE(std::uint8_t *p, std::uint16_t v)
{
    p[0] = static_cast<std::uint8_t>(v);
    p[1] = static_cast<std::uint8_t>(v >> 8);
}

std::uint16_t GetU16LE(const std::uint8_t *p)
{
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void PutU64LE(std::uint8_t *p, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
    {
        p[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

std::uint64_t GetU64LE(const std::uint8_t *p)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
    {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

constexpr std::size_t kHeaderSize = 8 + 2 + 2 + 8;

} // end anonymous namespace

nlohmann::json Frame::Json() const
{
    nlohmann::json j = nlohmann::json::parse(
        payload.begin(), payload.end(), /*cb=*/nullptr,
        /*allow_exceptions=*/false);
    if (j.is_discarded())
    {
        throw ProtocolError("frame payload is not valid JSON");
    }
    return j;
}

void SendFrame(Socket &s, MsgKind kind, std::span<const std::uint8_t> payload)
{
    std::uint8_t header[kHeaderSize];
    std::memcpy(header, WireMagic, 8);
    PutU16LE(header + 8, WireVersion);
    PutU16LE(header + 10, static_cast<std::uint16_t>(kind));
    PutU64LE(header + 12, payload.size());
    s.SendAll(std::span<const std::uint8_t>(header, kHeaderSize));
    if (!payload.empty())
    {
        s.SendAll(payload);
    }
}

void SendJson(Socket &s, MsgKind kind, const nlohmann::json &j)
{
    const std::string text = j.dump();
    SendFrame(s, kind,
              std::span<const std::uint8_t>(
                  reinterpret_cast<const std::uint8_t *>(text.data()),
                  text.size()));
}

void SendEmpty(Socket &s, MsgKind kind)
{
    SendFrame(s, kind, std::span<const std::uint8_t>());
}

std::optional<Frame> RecvFrame(Socket &s)
{
    std::uint8_t header[kHeaderSize];
    if (!s.RecvAll(std::span<std::uint8_t>(header, kHeaderSize)))
    {
        return std::nullopt;
    }
    if (std::memcmp(header, WireMagic, 8) != 0)
    {
        throw ProtocolError("bad frame magic");
    }
    const std::uint16_t version = GetU16LE(header + 8);
    if (version != WireVersion)
    {
        throw ProtocolError("unsupported wire version " +
                            std::to_string(version));
    }
    Frame f;
    f.kind = static_cast<MsgKind>(GetU16LE(header + 10));
    const std::uint64_t len = GetU64LE(header + 12);
    f.payload.resize(len);
    if (len > 0 &&
        !s.RecvAll(std::span<std::uint8_t>(f.payload.data(), len)))
    {
        throw ConnectionLost("peer closed mid-frame");
    }
    return f;
}

Frame Expect(Socket &s, MsgKind kind)
{
    auto f = RecvFrame(s);
    if (!f)
    {
        throw ConnectionLost("peer closed while a reply was expected");
    }
    if (f->kind == MsgKind::Error)
    {
        std::string msg(f->payload.begin(), f->payload.end());
        throw ProtocolError("peer reported: " + msg);
    }
    if (f->kind != kind)
    {
        throw ProtocolError(
            "unexpected message kind " +
            std::to_string(static_cast<std::uint16_t>(f->kind)) +
            " (wanted " + std::to_string(static_cast<std::uint16_t>(kind)) +
            ")");
    }
    return std::move(*f);
}

} // end namespace wire
} // end namespace chunkstream
