/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Backend.hpp : the seam between the engine-neutral Writer/Reader
 *               facade and the two backends.  The facade owns all
 *               validation, bracketing, coverage, and stitching; a
 *               backend only moves committed steps and chunk bytes.
 *
 */

#ifndef CHUNKSTREAM_BACKEND_HPP
#define CHUNKSTREAM_BACKEND_HPP

#include "chunkstream/Core.hpp"
#include "chunkstream/Engine.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

namespace chunkstream
{
namespace engine
{

class WriterBackend
{
public:
    virtual ~WriterBackend() = default;

    /** Hands over one validated step fragment; `payloads` parallels
     *  `fragment.chunk_table`.  May block per engine semantics. */
    virtual StepOutcome
    CommitStep(const StepAnnouncement &fragment,
               std::vector<std::vector<std::uint8_t>> payloads) = 0;

    /** Flushes and leaves the group; blocks until the engine no longer
     *  needs this rank. */
    virtual void Close() = 0;

    /** Instrumentation. */
    virtual std::uint32_t MaxStaged() const { return 0; }
    virtual std::uint64_t DataConnections() const { return 0; }
};

class ReaderBackend
{
public:
    virtual ~ReaderBackend() = default;

    /** Blocks for the next step's announcement; nullopt at end of
     *  series.  The previous step must have been released. */
    virtual std::optional<StepAnnouncement> NextStep() = 0;

    /** Reads `piece` of chunk `chunk_index` of the current step's chunk
     *  table; the result is row-major in the piece's own shape. */
    virtual std::vector<std::uint8_t> Fetch(std::size_t chunk_index,
                                            const Region &piece) = 0;

    /** Releases the current step (at most once per step). */
    virtual void ReleaseStep() = 0;

    virtual void Close() = 0;

    /** The reader group roster assignments are computed against. */
    virtual const std::vector<RankMeta> &GroupMembers() const = 0;

    /** Instrumentation: writer ranks a data connection was opened to. */
    virtual std::set<std::uint32_t> WritersContacted() const { return {}; }
};

} // end namespace engine
} // end namespace chunkstream

#endif /* CHUNKSTREAM_BACKEND_HPP */
