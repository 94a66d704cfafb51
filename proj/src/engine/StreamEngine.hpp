/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * StreamEngine.hpp : staging stream backend — framed TCP transport,
 *                    bounded step queue, per-rank data servers
 *
 */

#ifndef CHUNKSTREAM_STREAMENGINE_HPP
#define CHUNKSTREAM_STREAMENGINE_HPP

#include "Backend.hpp"

#include <memory>

namespace chunkstream
{
namespace engine
{

/** One producer rank of a stream.  Rank 0 additionally runs the control
 *  service the whole group shares: step staging, reader registration,
 *  and release accounting.  Every rank runs a data server for the
 *  chunks it staged. */
class StreamWriterBackend : public WriterBackend
{
public:
    StreamWriterBackend(const std::string &series, const GroupSpec &group,
                        const EngineConfig &cfg);
    ~StreamWriterBackend() override;

    StepOutcome
    CommitStep(const StepAnnouncement &fragment,
               std::vector<std::vector<std::uint8_t>> payloads) override;
    void Close() override;
    std::uint32_t MaxStaged() const override;
    std::uint64_t DataConnections() const override;

private:
    struct Core;
    std::shared_ptr<Core> m_Core;
};

/** One consumer rank.  Registration blocks until the whole reader group
 *  is present; data connections to writers are opened lazily on first
 *  fetch. */
class StreamReaderBackend : public ReaderBackend
{
public:
    StreamReaderBackend(const std::string &series, const GroupSpec &group,
                        const EngineConfig &cfg);
    ~StreamReaderBackend() override;

    std::optional<StepAnnouncement> NextStep() override;
    std::vector<std::uint8_t> Fetch(std::size_t chunk_index,
                                    const Region &piece) override;
    void ReleaseStep() override;
    void Close() override;
    const std::vector<RankMeta> &GroupMembers() const override;
    std::set<std::uint32_t> WritersContacted() const override;

private:
    struct Core;
    std::unique_ptr<Core> m_Core;
};

} // end namespace engine
} // end namespace chunkstream

#endif /* CHUNKSTREAM_STREAMENGINE_HPP */
