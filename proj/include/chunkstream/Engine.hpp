/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Engine.hpp : the step-based writer/reader API.  The same program text
 *              runs against the staging stream engine or the aggregating
 *              file engine; EngineConfig selects the backend at runtime.
 *
 */

#ifndef CHUNKSTREAM_ENGINE_HPP
#define CHUNKSTREAM_ENGINE_HPP

#include "chunkstream/Core.hpp"
#include "chunkstream/Distribution.hpp"
#include "chunkstream/EngineConfig.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace chunkstream
{

namespace engine
{
class WriterBackend;
class ReaderBackend;
} // end namespace engine

/** What became of a completed step. */
enum class StepOutcome
{
    Published, ///< stream: staged and announced to subscribers
    Discarded, ///< stream: dropped because the queue was full
    Written,   ///< file: appended to the container
};

std::string ToString(StepOutcome outcome);

/** This handle's place in its producing or consuming group. */
struct GroupSpec
{
    std::uint32_t rank = 0;
    std::uint32_t group_size = 1;

    /** Readers only: groups with distinct names subscribe independently
     *  and each receives every step. */
    std::string group_name = "readers";

    /** Readers only, file engine only: the full group roster when the
     *  distribution strategy needs the other members' hostnames
     *  (by_hostname).  The stream engine learns the roster from
     *  registration and ignores this field.  When empty, every member is
     *  assumed to share this process's hostname. */
    std::vector<RankMeta> members;
};

struct WriterStats
{
    std::uint64_t steps_published = 0;
    std::uint64_t steps_discarded = 0;
    std::uint64_t steps_written = 0;

    /** Highwater of simultaneously staged steps (stream). */
    std::uint32_t max_staged = 0;

    /** Data connections accepted from readers (stream). */
    std::uint64_t data_connections = 0;
};

struct ReaderStats
{
    std::uint64_t steps_delivered = 0;
    std::uint64_t regions_fetched = 0;
    std::uint64_t bytes_fetched = 0;

    /** Writer ranks this reader opened a data connection to (stream).
     *  Connections are opened lazily, so this is exactly the set of
     *  writers whose data was actually requested. */
    std::set<std::uint32_t> writers_contacted;
};

/** Step-based producer handle; one instance per writer rank.  All step
 *  calls must come from one logical thread. */
class Writer
{
public:
    Writer(Writer &&) noexcept;
    Writer &operator=(Writer &&) noexcept;
    ~Writer();

    /** Opens the next step (indices auto-increment from 0), or a chosen
     *  strictly larger index.  All ranks must open the same sequence of
     *  indices. */
    void BeginStep();
    void BeginStep(std::uint64_t step_index);

    /** Declares a dataset.  Declarations are sticky across steps and are
     *  re-announced with every step; redeclaring with different shape or
     *  kind is an error. */
    void Declare(const DatasetDecl &decl);

    /** Sets a step attribute; sticky across steps.  Different ranks may
     *  set the same attribute only to equal values. */
    void SetAttribute(const std::string &name, const AttributeValue &value);

    /** Publishes the payload of `region` of `decl` (declaring it if
     *  new).  `bytes` must hold exactly the region's payload, row-major.
     *  The bytes are copied; the caller's buffer is free afterwards. */
    void PutChunk(const DatasetDecl &decl, const Region &region,
                  std::span<const std::uint8_t> bytes);

    /** Completes the step.  Stream: hands the step to the queue and
     *  returns promptly (Published) or drops it (Discarded) — or, with
     *  queue_policy=block, waits for a slot.  File: appends to the
     *  container (Written). */
    StepOutcome EndStep();

    /** Flushes and leaves the group.  Stream: waits until every
     *  announced step has been released by its subscribers.  Idempotent. */
    void Close();

    const WriterStats &Stats() const;
    std::uint32_t Rank() const;

private:
    friend Writer OpenWriter(const std::string &, const GroupSpec &,
                             const EngineConfig &);
    explicit Writer(std::unique_ptr<engine::WriterBackend> backend,
                    GroupSpec group);

    struct Impl;
    std::unique_ptr<Impl> m_Impl;
};

/** Step-based consumer handle; one instance per reader rank. */
class Reader
{
public:
    Reader(Reader &&) noexcept;
    Reader &operator=(Reader &&) noexcept;
    ~Reader();

    /** Delivers the next announced step, releasing the previous one.
     *  Blocks on the stream engine until a step is announced or the
     *  writer group closes; returns nullopt at end of series. */
    std::optional<StepAnnouncement> NextStep();

    /** The announcement of the step currently held. */
    const StepAnnouncement &Current() const;

    /** The distribution of the current step's chunk table over the
     *  reader group, computed with the configured strategy.  Identical
     *  on every member of the group. */
    const Assignment &CurrentAssignment() const;

    /** This reader's slabs of the current step. */
    const std::vector<ChunkSlab> &AssignedSlabs() const;

    /** Loads an arbitrary region of a dataset of the current step,
     *  stitched row-major from the chunks that cover it.  Throws
     *  UnavailableRegion when any requested cell was never written. */
    std::vector<std::uint8_t> GetRegion(const std::string &dataset,
                                        const Region &region);

    /** Releases the current step early (NextStep and Close also release
     *  it).  After release, GetRegion on the step is an error. */
    void ReleaseStep();

    /** Releases and unregisters.  Idempotent. */
    void Close();

    const ReaderStats &Stats() const;
    std::uint32_t Rank() const;

    /** The reader group roster assignments are computed against. */
    const std::vector<RankMeta> &GroupMembers() const;

private:
    friend Reader OpenReader(const std::string &, const GroupSpec &,
                             const EngineConfig &);
    explicit Reader(std::unique_ptr<engine::ReaderBackend> backend,
                    GroupSpec group, StrategySpec strategy);

    struct Impl;
    std::unique_ptr<Impl> m_Impl;
};

/** Opens a producer handle for `series`.  Stream: binds the data (and,
 *  on rank 0, control) endpoints and completes the contact rendezvous —
 *  collective over the writer group.  File: creates or joins this
 *  rank's aggregate container file. */
Writer OpenWriter(const std::string &series, const GroupSpec &group,
                  const EngineConfig &cfg);

/** Opens a consumer handle for `series`.  Stream: polls the contact
 *  document, registers with the writer group, and returns once the
 *  whole reader group has registered.  File: opens the container
 *  file(s), which must be complete (footers written). */
Reader OpenReader(const std::string &series, const GroupSpec &group,
                  const EngineConfig &cfg);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_ENGINE_HPP */
