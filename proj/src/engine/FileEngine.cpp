/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * FileEngine.cpp
 *
 */

#include "FileEngine.hpp"

#include "Stitch.hpp"

#include "chunkstream/Announcement.hpp"
#include "chunkstream/Errors.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <thread>

namespace chunkstream
{
namespace engine
{

namespace
{

std::uint32_t NumFiles(std::uint32_t group_size,
                       std::uint32_t aggregation_group)
{
    return (group_size + aggregation_group - 1) / aggregation_group;
}

/** Blocks until the series' first container file exists, up to the
 *  rendezvous timeout.  Returns its path. */
std::string WaitForSeries(const std::string &series, double timeout_s)
{
    namespace fs = std::filesystem;
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration<double>(timeout_s);
    const std::string split_first = series + ".0";
    while (true)
    {
        if (fs::exists(series))
        {
            return series;
        }
        if (fs::exists(split_first))
        {
            return split_first;
        }
        if (std::chrono::steady_clock::now() >= deadline)
        {
            throw RendezvousTimeout("no container for series '" + series +
                                    "' appeared within " +
                                    std::to_string(timeout_s) + " s");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

} // end anonymous namespace

FileWriterBackend::FileWriterBackend(const std::string &series,
                                     const GroupSpec &group,
                                     const EngineConfig &cfg)
: m_Rank(group.rank)
{
    const std::uint32_t num_files =
        NumFiles(group.group_size, cfg.aggregation_group);
    const std::uint32_t file_index = group.rank / cfg.aggregation_group;

    ContainerHeader header;
    header.series = series;
    header.group_size = group.group_size;
    header.file_index = file_index;
    header.num_files = num_files;
    const std::uint32_t first = file_index * cfg.aggregation_group;
    const std::uint32_t last =
        std::min(first + cfg.aggregation_group, group.group_size);
    for (std::uint32_t r = first; r < last; ++r)
    {
        header.ranks.push_back(r);
    }

    m_Container = std::make_unique<ContainerWriter>(
        ContainerFilePath(series, file_index, num_files), header,
        cfg.file_write_mibps);
}

StepOutcome
FileWriterBackend::CommitStep(const StepAnnouncement &fragment,
                              std::vector<std::vector<std::uint8_t>> payloads)
{
    m_Container->AppendStep(fragment, payloads);
    return StepOutcome::Written;
}

void FileWriterBackend::Close()
{
    if (!m_Closed)
    {
        m_Container->AppendClose(m_Rank);
        m_Closed = true;
    }
}

FileReaderBackend::FileReaderBackend(const std::string &series,
                                     const GroupSpec &group,
                                     const EngineConfig &cfg)
{
    const std::string first =
        WaitForSeries(series, cfg.rendezvous_timeout_s);
    m_Files.push_back(std::make_unique<ContainerReader>(first));
    const std::uint32_t num_files = m_Files[0]->Header().num_files;
    for (std::uint32_t f = 1; f < num_files; ++f)
    {
        m_Files.push_back(std::make_unique<ContainerReader>(
            ContainerFilePath(series, f, num_files)));
    }

    // Merge the per-file step indices into one series.
    std::map<std::uint64_t,
             std::vector<std::pair<std::size_t, const ContainerStep *>>>
        by_index;
    for (std::size_t f = 0; f < m_Files.size(); ++f)
    {
        for (const ContainerStep &step : m_Files[f]->Steps())
        {
            by_index[step.announcement.step_index].emplace_back(f, &step);
        }
    }
    for (const auto &[index, parts] : by_index)
    {
        MergedStep merged;
        std::vector<StepAnnouncement> fragments;
        for (const auto &[f, step] : parts)
        {
            fragments.push_back(step->announcement);
        }
        merged.announcement = MergeAnnouncements(fragments);

        // Align every merged chunk with its (file, span) origin.
        std::vector<
            std::pair<const WrittenChunk *, std::pair<std::size_t, ChunkSpan>>>
            pool;
        for (const auto &[f, step] : parts)
        {
            for (std::size_t c = 0; c < step->announcement.chunk_table.size();
                 ++c)
            {
                pool.emplace_back(&step->announcement.chunk_table[c],
                                  std::make_pair(f, step->spans[c]));
            }
        }
        for (const WrittenChunk &chunk : merged.announcement.chunk_table)
        {
            bool found = false;
            for (auto &[candidate, origin] : pool)
            {
                if (candidate != nullptr && *candidate == chunk)
                {
                    merged.spans.push_back(origin);
                    candidate = nullptr;
                    found = true;
                    break;
                }
            }
            if (!found)
            {
                throw ContainerError("series index lost a chunk span");
            }
        }
        m_Steps.push_back(std::move(merged));
    }

    if (!group.members.empty())
    {
        m_Members = group.members;
        bool self = false;
        for (const RankMeta &m : m_Members)
        {
            self = self || m.rank == group.rank;
        }
        if (!self)
        {
            throw ConfigError("reader group roster does not contain rank " +
                              std::to_string(group.rank));
        }
    }
    else
    {
        const std::string host = LocalHostname();
        for (std::uint32_t r = 0; r < group.group_size; ++r)
        {
            m_Members.push_back(RankMeta{r, host});
        }
    }
}

std::optional<StepAnnouncement> FileReaderBackend::NextStep()
{
    if (m_Cursor >= m_Steps.size())
    {
        return std::nullopt;
    }
    return m_Steps[m_Cursor++].announcement;
}

std::vector<std::uint8_t> FileReaderBackend::Fetch(std::size_t chunk_index,
                                                   const Region &piece)
{
    const MergedStep &step = m_Steps.at(m_Cursor - 1);
    const WrittenChunk &chunk = step.announcement.chunk_table.at(chunk_index);
    const auto &[file, span] = step.spans.at(chunk_index);
    const DatasetDecl *decl = step.announcement.FindDataset(chunk.dataset);
    const std::size_t width = ElemSize(decl->elem_kind);

    std::vector<std::uint8_t> out(ByteSize(piece, decl->elem_kind));
    ForEachRun(chunk.region, piece, piece, [&](const CopyRun &run) {
        m_Files[file]->ReadAt(span.file_offset + run.src_elem * width,
                              out.data() + run.dst_elem * width,
                              run.elems * width);
    });
    return out;
}

} // end namespace engine
} // end namespace chunkstream
