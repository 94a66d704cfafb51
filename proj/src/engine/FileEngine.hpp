/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * FileEngine.hpp : aggregating container-file backend
 *
 */

#ifndef CHUNKSTREAM_FILEENGINE_HPP
#define CHUNKSTREAM_FILEENGINE_HPP

#include "Backend.hpp"
#include "Container.hpp"

#include <memory>

namespace chunkstream
{
namespace engine
{

class FileWriterBackend : public WriterBackend
{
public:
    FileWriterBackend(const std::string &series, const GroupSpec &group,
                      const EngineConfig &cfg);

    StepOutcome
    CommitStep(const StepAnnouncement &fragment,
               std::vector<std::vector<std::uint8_t>> payloads) override;
    void Close() override;

private:
    std::uint32_t m_Rank;
    std::unique_ptr<ContainerWriter> m_Container;
    bool m_Closed = false;
};

class FileReaderBackend : public ReaderBackend
{
public:
    FileReaderBackend(const std::string &series, const GroupSpec &group,
                      const EngineConfig &cfg);

    std::optional<StepAnnouncement> NextStep() override;
    std::vector<std::uint8_t> Fetch(std::size_t chunk_index,
                                    const Region &piece) override;
    void ReleaseStep() override {}
    void Close() override {}
    const std::vector<RankMeta> &GroupMembers() const override
    {
        return m_Members;
    }

private:
    struct MergedStep
    {
        StepAnnouncement announcement;
        // (file index, payload span), aligned with the chunk table
        std::vector<std::pair<std::size_t, ChunkSpan>> spans;
    };

    std::vector<std::unique_ptr<ContainerReader>> m_Files;
    std::vector<MergedStep> m_Steps;
    std::size_t m_Cursor = 0; // steps delivered so far
    std::vector<RankMeta> m_Members;
};

} // end namespace engine
} // end namespace chunkstream

#endif /* CHUNKSTREAM_FILEENGINE_HPP */
