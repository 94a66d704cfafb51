/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Errors.hpp : exception hierarchy thrown by the chunkstream library
 *
 */

#ifndef CHUNKSTREAM_ERRORS_HPP
#define CHUNKSTREAM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace chunkstream
{

/** Base class of every exception thrown by this library. */
class Error : public std::runtime_error
{
public:
    explicit Error(const std::string &what) : std::runtime_error(what) {}
};

/** Invalid engine configuration, plan, or strategy specification. */
class ConfigError : public Error
{
public:
    explicit ConfigError(const std::string &what) : Error("config: " + what)
    {
    }
};

/** API misuse or invalid domain object (bad declaration, chunk out of
 *  bounds, duplicate chunk, step index not increasing, ...). */
class ValidationError : public Error
{
public:
    explicit ValidationError(const std::string &what)
    : Error("validation: " + what)
    {
    }
};

/** Malformed byte stream: bad magic, unsupported version, truncated or
 *  trailing bytes in an encoded announcement or wire frame. */
class ProtocolError : public Error
{
public:
    explicit ProtocolError(const std::string &what)
    : Error("protocol: " + what)
    {
    }
};

/** A reader gave up waiting for a writer's contact information. */
class RendezvousTimeout : public Error
{
public:
    explicit RendezvousTimeout(const std::string &what)
    : Error("rendezvous timeout: " + what)
    {
    }
};

/** A live peer connection broke before a clean end-of-stream. */
class ConnectionLost : public Error
{
public:
    explicit ConnectionLost(const std::string &what)
    : Error("connection lost: " + what)
    {
    }
};

/** A requested region is not fully covered by the written chunks of the
 *  current step.  Readers never receive zero-filled bytes instead. */
class UnavailableRegion : public Error
{
public:
    explicit UnavailableRegion(const std::string &what)
    : Error("unavailable region: " + what)
    {
    }
};

/** A container file is damaged or incomplete. */
class ContainerError : public Error
{
public:
    explicit ContainerError(const std::string &what)
    : Error("container: " + what)
    {
    }
};

/** The container's trailing footer is missing or fails its checksum.
 *  Recovery may still salvage intact step records. */
class CorruptFooter : public ContainerError
{
public:
    explicit CorruptFooter(const std::string &what) : ContainerError(what) {}
};

} // end namespace chunkstream

#endif /* CHUNKSTREAM_ERRORS_HPP */
