/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Engine.cpp : the engine-neutral Writer/Reader facade.  Everything a
 *              user program can get wrong is rejected here, so both
 *              backends see only well-formed steps and the two engines
 *              stay interchangeable.
 *
 */

#include "chunkstream/Engine.hpp"

#include "chunkstream/Announcement.hpp"
#include "chunkstream/Errors.hpp"

#include "Backend.hpp"
#include "FileEngine.hpp"
#include "Stitch.hpp"
#include "StreamEngine.hpp"

#include <algorithm>
#include <numeric>

namespace chunkstream
{

std::string ToString(StepOutcome outcome)
{
    switch (outcome)
    {
    case StepOutcome::Published:
        return "published";
    case StepOutcome::Discarded:
        return "discarded";
    case StepOutcome::Written:
        return "written";
    }
    throw ValidationError("unknown step outcome");
}

namespace
{

void CheckGroup(const GroupSpec &group)
{
    if (group.group_size == 0)
    {
        throw ConfigError("group_size must be >= 1");
    }
    if (group.rank >= group.group_size)
    {
        throw ConfigError("rank " + std::to_string(group.rank) +
                          " outside group of size " +
                          std::to_string(group.group_size));
    }
    if (group.group_name.empty())
    {
        throw ConfigError("group_name must be nonempty");
    }
}

} // end anonymous namespace

/* -------------------------------------------------------------------- */
/* Writer                                                                */
/* -------------------------------------------------------------------- */

struct Writer::Impl
{
    std::unique_ptr<engine::WriterBackend> backend;
    GroupSpec group;
    std::string hostname = LocalHostname();
    WriterStats stats;

    bool in_step = false;
    bool closed = false;
    std::optional<std::uint64_t> last_index;
    std::uint64_t current_index = 0;

    std::vector<DatasetDecl> decls;
    AttributeMap attributes;

    std::vector<WrittenChunk> chunks;
    std::vector<std::vector<std::uint8_t>> payloads;

    void RequireOpen() const
    {
        if (closed)
        {
            throw ValidationError("writer is closed");
        }
    }
};

Writer::Writer(std::unique_ptr<engine::WriterBackend> backend,
               GroupSpec group)
: m_Impl(std::make_unique<Impl>())
{
    m_Impl->backend = std::move(backend);
    m_Impl->group = std::move(group);
}

Writer::Writer(Writer &&) noexcept = default;
Writer &Writer::operator=(Writer &&) noexcept = default;

Writer::~Writer()
{
    try
    {
        if (m_Impl && !m_Impl->closed && !m_Impl->in_step)
        {
            Close();
        }
    }
    catch (...)
    {
        // Destructors must not throw; an unreleased step or a dead peer
        // at teardown is already a failure elsewhere.
    }
}

void Writer::BeginStep()
{
    m_Impl->RequireOpen();
    BeginStep(m_Impl->last_index ? *m_Impl->last_index + 1 : 0);
}

void Writer::BeginStep(std::uint64_t step_index)
{
    m_Impl->RequireOpen();
    if (m_Impl->in_step)
    {
        throw ValidationError("step " +
                              std::to_string(m_Impl->current_index) +
                              " is still open");
    }
    if (m_Impl->last_index && step_index <= *m_Impl->last_index)
    {
        throw ValidationError("step indices must be strictly increasing: " +
                              std::to_string(step_index) + " after " +
                              std::to_string(*m_Impl->last_index));
    }
    m_Impl->current_index = step_index;
    m_Impl->in_step = true;
    m_Impl->chunks.clear();
    m_Impl->payloads.clear();
}

void Writer::Declare(const DatasetDecl &decl)
{
    m_Impl->RequireOpen();
    if (auto problem = CheckDecl(decl))
    {
        throw ValidationError(*problem);
    }
    for (const DatasetDecl &existing : m_Impl->decls)
    {
        if (existing.name == decl.name)
        {
            if (existing == decl)
            {
                return;
            }
            throw ValidationError("dataset '" + decl.name +
                                  "' redeclared with a different shape or "
                                  "element kind");
        }
    }
    m_Impl->decls.push_back(decl);
    std::sort(m_Impl->decls.begin(), m_Impl->decls.end(),
              [](const DatasetDecl &a, const DatasetDecl &b) {
                  return a.name < b.name;
              });
}

void Writer::SetAttribute(const std::string &name, const AttributeValue &value)
{
    m_Impl->RequireOpen();
    if (name.empty())
    {
        throw ValidationError("attribute name must be nonempty");
    }
    m_Impl->attributes[name] = value;
}

void Writer::PutChunk(const DatasetDecl &decl, const Region &region,
                      std::span<const std::uint8_t> bytes)
{
    m_Impl->RequireOpen();
    if (!m_Impl->in_step)
    {
        throw ValidationError("put_chunk outside of a step");
    }
    Declare(decl);

    WrittenChunk chunk;
    chunk.dataset = decl.name;
    chunk.region = region;
    chunk.producer_rank = m_Impl->group.rank;
    chunk.hostname = m_Impl->hostname;
    if (auto problem = ValidateChunk(chunk, decl))
    {
        throw ValidationError(*problem);
    }
    if (bytes.size() != ByteSize(region, decl.elem_kind))
    {
        throw ValidationError(
            "payload of dataset '" + decl.name + "' is " +
            std::to_string(bytes.size()) + " bytes, region needs " +
            std::to_string(ByteSize(region, decl.elem_kind)));
    }
    for (const WrittenChunk &existing : m_Impl->chunks)
    {
        if (existing.dataset == chunk.dataset && existing.region == region)
        {
            throw ValidationError("duplicate chunk for dataset '" +
                                  decl.name + "' in step " +
                                  std::to_string(m_Impl->current_index));
        }
    }
    m_Impl->chunks.push_back(std::move(chunk));
    m_Impl->payloads.emplace_back(bytes.begin(), bytes.end());
}

StepOutcome Writer::EndStep()
{
    m_Impl->RequireOpen();
    if (!m_Impl->in_step)
    {
        throw ValidationError("end_step without an open step");
    }

    // Bring the fragment into canonical chunk order.
    std::vector<std::size_t> order(m_Impl->chunks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                         return ChunkTableLess(m_Impl->chunks[a],
                                               m_Impl->chunks[b]);
                     });

    StepAnnouncement fragment;
    fragment.step_index = m_Impl->current_index;
    fragment.datasets = m_Impl->decls;
    fragment.attributes = m_Impl->attributes;
    std::vector<std::vector<std::uint8_t>> payloads;
    for (std::size_t i : order)
    {
        fragment.chunk_table.push_back(m_Impl->chunks[i]);
        payloads.push_back(std::move(m_Impl->payloads[i]));
    }
    m_Impl->chunks.clear();
    m_Impl->payloads.clear();
    m_Impl->in_step = false;
    m_Impl->last_index = m_Impl->current_index;

    const StepOutcome outcome =
        m_Impl->backend->CommitStep(fragment, std::move(payloads));
    switch (outcome)
    {
    case StepOutcome::Published:
        ++m_Impl->stats.steps_published;
        break;
    case StepOutcome::Discarded:
        ++m_Impl->stats.steps_discarded;
        break;
    case StepOutcome::Written:
        ++m_Impl->stats.steps_written;
        break;
    }
    return outcome;
}

void Writer::Close()
{
    if (m_Impl->closed)
    {
        return;
    }
    if (m_Impl->in_step)
    {
        throw ValidationError("close with step " +
                              std::to_string(m_Impl->current_index) +
                              " still open");
    }
    m_Impl->backend->Close();
    m_Impl->closed = true;
}

const WriterStats &Writer::Stats() const
{
    m_Impl->stats.max_staged = m_Impl->backend->MaxStaged();
    m_Impl->stats.data_connections = m_Impl->backend->DataConnections();
    return m_Impl->stats;
}

std::uint32_t Writer::Rank() const { return m_Impl->group.rank; }

/* -------------------------------------------------------------------- */
/* Reader                                                                */
/* -------------------------------------------------------------------- */

struct Reader::Impl
{
    std::unique_ptr<engine::ReaderBackend> backend;
    GroupSpec group;
    StrategySpec strategy;
    ReaderStats stats;

    std::optional<StepAnnouncement> current;
    Assignment assignment;
    bool released = true;
    bool closed = false;

    const StepAnnouncement &Require() const
    {
        if (closed)
        {
            throw ValidationError("reader is closed");
        }
        if (!current)
        {
            throw ValidationError("no step is held; call next_step first");
        }
        return *current;
    }
};

Reader::Reader(std::unique_ptr<engine::ReaderBackend> backend,
               GroupSpec group, StrategySpec strategy)
: m_Impl(std::make_unique<Impl>())
{
    m_Impl->backend = std::move(backend);
    m_Impl->group = std::move(group);
    m_Impl->strategy = std::move(strategy);
}

Reader::Reader(Reader &&) noexcept = default;
Reader &Reader::operator=(Reader &&) noexcept = default;

Reader::~Reader()
{
    try
    {
        if (m_Impl && !m_Impl->closed)
        {
            Close();
        }
    }
    catch (...)
    {
    }
}

std::optional<StepAnnouncement> Reader::NextStep()
{
    if (m_Impl->closed)
    {
        throw ValidationError("reader is closed");
    }
    ReleaseStep();
    m_Impl->current = m_Impl->backend->NextStep();
    if (!m_Impl->current)
    {
        return std::nullopt;
    }
    m_Impl->released = false;
    m_Impl->assignment =
        Assign(m_Impl->strategy, m_Impl->current->chunk_table,
               m_Impl->backend->GroupMembers(), m_Impl->current->datasets);
    ++m_Impl->stats.steps_delivered;
    return m_Impl->current;
}

const StepAnnouncement &Reader::Current() const { return m_Impl->Require(); }

const Assignment &Reader::CurrentAssignment() const
{
    m_Impl->Require();
    return m_Impl->assignment;
}

const std::vector<ChunkSlab> &Reader::AssignedSlabs() const
{
    m_Impl->Require();
    return m_Impl->assignment.per_reader.at(m_Impl->group.rank);
}

std::vector<std::uint8_t> Reader::GetRegion(const std::string &dataset,
                                            const Region &region)
{
    const StepAnnouncement &ann = m_Impl->Require();
    if (m_Impl->released)
    {
        throw ValidationError("step " + std::to_string(ann.step_index) +
                              " was already released");
    }
    const DatasetDecl *decl = ann.FindDataset(dataset);
    if (decl == nullptr)
    {
        throw ValidationError("dataset '" + dataset +
                              "' is not announced in step " +
                              std::to_string(ann.step_index));
    }
    if (region.Rank() != decl->global_extent.size())
    {
        throw ValidationError("request rank does not match dataset '" +
                              dataset + "'");
    }

    std::vector<std::uint8_t> out(ByteSize(region, decl->elem_kind));
    if (Volume(region) == 0)
    {
        return out;
    }
    const std::size_t width = ElemSize(decl->elem_kind);
    for (const engine::CoverPiece &piece :
         engine::CoverRegion(ann, dataset, region))
    {
        const std::vector<std::uint8_t> bytes =
            m_Impl->backend->Fetch(piece.chunk_index, piece.region);
        engine::CopyRegion(piece.region, bytes.data(), region, out.data(),
                           piece.region, width);
    }
    ++m_Impl->stats.regions_fetched;
    m_Impl->stats.bytes_fetched += out.size();
    return out;
}

void Reader::ReleaseStep()
{
    if (m_Impl->current && !m_Impl->released)
    {
        m_Impl->backend->ReleaseStep();
        m_Impl->released = true;
    }
}

void Reader::Close()
{
    if (m_Impl->closed)
    {
        return;
    }
    ReleaseStep();
    m_Impl->backend->Close();
    m_Impl->closed = true;
}

const ReaderStats &Reader::Stats() const
{
    m_Impl->stats.writers_contacted = m_Impl->backend->WritersContacted();
    return m_Impl->stats;
}

std::uint32_t Reader::Rank() const { return m_Impl->group.rank; }

const std::vector<RankMeta> &Reader::GroupMembers() const
{
    return m_Impl->backend->GroupMembers();
}

/* -------------------------------------------------------------------- */
/* Factories                                                             */
/* -------------------------------------------------------------------- */

Writer OpenWriter(const std::string &series, const GroupSpec &group,
                  const EngineConfig &cfg)
{
    cfg.Validate();
    CheckGroup(group);
    if (series.empty())
    {
        throw ConfigError("series name must be nonempty");
    }
    std::unique_ptr<engine::WriterBackend> backend;
    if (cfg.engine == EngineKind::File)
    {
        backend =
            std::make_unique<engine::FileWriterBackend>(series, group, cfg);
    }
    else
    {
        backend =
            std::make_unique<engine::StreamWriterBackend>(series, group, cfg);
    }
    return Writer(std::move(backend), group);
}

Reader OpenReader(const std::string &series, const GroupSpec &group,
                  const EngineConfig &cfg)
{
    cfg.Validate();
    CheckGroup(group);
    if (series.empty())
    {
        throw ConfigError("series name must be nonempty");
    }
    std::unique_ptr<engine::ReaderBackend> backend;
    if (cfg.engine == EngineKind::File)
    {
        backend =
            std::make_unique<engine::FileReaderBackend>(series, group, cfg);
    }
    else
    {
        backend =
            std::make_unique<engine::StreamReaderBackend>(series, group, cfg);
    }
    return Reader(std::move(backend), group, cfg.strategy);
}

} // end namespace chunkstream
