/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Core.hpp : the self-describing data model shared by every engine and
 *            tool — datasets, regions, chunks, attributes, steps.
 *
 */

#ifndef CHUNKSTREAM_CORE_HPP
#define CHUNKSTREAM_CORE_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace chunkstream
{

/** Per-axis cell counts of an n-dimensional dataset or region, ordered
 *  slowest-varying axis first.  A declared dataset must have rank >= 1
 *  and every entry >= 1. */
using Extent = std::vector<std::uint64_t>;

/** Per-axis cell offsets, same ordering and rank as the paired Extent. */
using Offset = std::vector<std::uint64_t>;

/** A half-open n-dimensional hyperslab [offset, offset + extent) in a
 *  dataset's global index space. */
struct Region
{
    Offset offset;
    Extent extent;

    std::size_t Rank() const noexcept { return offset.size(); }

    friend bool operator==(const Region &, const Region &) = default;
};

/** Scalar element kinds: signed/unsigned integers of 1-8 bytes and
 *  IEEE floats of 4/8 bytes. */
enum class ElemKind
{
    Int8,
    Int16,
    Int32,
    Int64,
    UInt8,
    UInt16,
    UInt32,
    UInt64,
    Float32,
    Float64,
};

/** Byte width of one element of the given kind. */
std::size_t ElemSize(ElemKind kind);

/** Stable textual names ("int8", ..., "float64") used in serialized
 *  documents. */
std::string ToString(ElemKind kind);
ElemKind ElemKindFromString(const std::string &name);

/** Declaration of one dataset within a step: a "/"-separated path name
 *  (e.g. "particles/e/position/x"), an element kind, and the global
 *  extent of the dataset's index space. */
struct DatasetDecl
{
    std::string name;
    ElemKind elem_kind = ElemKind::Float64;
    Extent global_extent;

    friend bool operator==(const DatasetDecl &, const DatasetDecl &) =
        default;
};

/** One contiguous region of one dataset as published by one producer
 *  rank in one step. */
struct WrittenChunk
{
    std::string dataset;
    Region region;
    std::uint32_t producer_rank = 0;
    std::string hostname;

    friend bool operator==(const WrittenChunk &, const WrittenChunk &) =
        default;
};

/** Attribute values: 64-bit integers, 64-bit floats, strings, and
 *  homogeneous lists thereof. */
using AttributeValue =
    std::variant<std::int64_t, double, std::string,
                 std::vector<std::int64_t>, std::vector<double>,
                 std::vector<std::string>>;

using AttributeMap = std::map<std::string, AttributeValue>;

/** Self-describing metadata for one published step: which datasets
 *  exist, the attributes attached to the step, and the table of chunks
 *  actually written. */
struct StepAnnouncement
{
    std::uint64_t step_index = 0;
    std::vector<DatasetDecl> datasets;
    AttributeMap attributes;
    std::vector<WrittenChunk> chunk_table;

    friend bool operator==(const StepAnnouncement &,
                           const StepAnnouncement &) = default;

    /** The declaration of the named dataset, if announced. */
    const DatasetDecl *FindDataset(const std::string &name) const;
};

/** Identity of one rank in a producing or consuming group. */
struct RankMeta
{
    std::uint32_t rank = 0;
    std::string hostname;

    friend bool operator==(const RankMeta &, const RankMeta &) = default;
};

/** Number of cells in an extent (product of dims).  An empty extent has
 *  volume 0 by convention so callers can treat "no region" uniformly. */
std::uint64_t Volume(const Extent &extent);
std::uint64_t Volume(const Region &region);

/** Byte size of a region's payload for a given element kind. */
std::uint64_t ByteSize(const Region &region, ElemKind kind);

/** Checks a declaration: rank >= 1, every axis >= 1 cell, name
 *  non-empty with "/"-separated non-empty components.  Returns nullopt
 *  when the declaration is acceptable, otherwise a description. */
std::optional<std::string> CheckDecl(const DatasetDecl &decl);

/** Checks that a chunk's region has the declared rank and lies fully
 *  inside the declared global extent.  Expects c.dataset == d.name.
 *  Returns nullopt when the chunk is acceptable, otherwise a violation
 *  description naming the offending axis. */
std::optional<std::string> ValidateChunk(const WrittenChunk &c,
                                         const DatasetDecl &d);

/** The hostname this process publishes in chunk and rank metadata.
 *  Honors the CHUNKSTREAM_HOSTNAME environment variable (used to model
 *  multi-host topologies on one machine), falling back to
 *  gethostname(). */
std::string LocalHostname();

/** Total ordering of chunk-table entries used wherever a deterministic
 *  chunk order is required: by (producer_rank, dataset, offset, extent),
 *  offsets and extents compared lexicographically. */
bool ChunkTableLess(const WrittenChunk &a, const WrittenChunk &b);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_CORE_HPP */
