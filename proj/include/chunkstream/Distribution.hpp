/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Distribution.hpp : chunk-distribution strategies mapping a step's
 *                    chunk table onto a reader group
 *
 */

#ifndef CHUNKSTREAM_DISTRIBUTION_HPP
#define CHUNKSTREAM_DISTRIBUTION_HPP

#include "chunkstream/Core.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace chunkstream
{

/** A piece of one written chunk: `source` indexes the step's chunk
 *  table, `region` is contained in that chunk's region. */
struct ChunkSlab
{
    std::size_t source = 0;
    Region region;

    friend bool operator==(const ChunkSlab &, const ChunkSlab &) = default;
};

/** The output of a distribution strategy: every reader rank of the
 *  group maps to the (possibly empty) list of slabs it should load.
 *  The slabs of all readers together tile the written chunks exactly:
 *  full cover, no overlap. */
struct Assignment
{
    std::map<std::uint32_t, std::vector<ChunkSlab>> per_reader;

    friend bool operator==(const Assignment &, const Assignment &) = default;
};

enum class StrategyKind
{
    RoundRobin,
    Hyperslabs,
    Binpacking,
    ByHostname,
};

/** Runtime-configurable strategy selection.  by_hostname composes two
 *  sub-strategies (per-host secondary, cross-host fallback), which must
 *  not themselves be by_hostname. */
struct StrategySpec
{
    StrategyKind kind = StrategyKind::Hyperslabs;

    /** hyperslabs only: axis along which datasets are partitioned. */
    std::size_t axis = 0;

    /** by_hostname only. */
    std::shared_ptr<StrategySpec> secondary;
    std::shared_ptr<StrategySpec> fallback;

    /** Throws ConfigError when the spec is not well-formed (missing or
     *  illegally nested sub-strategies). */
    void Validate() const;

    /** JSON of the form
     *  {"kind":"by_hostname","secondary":{"kind":"binpacking"},
     *   "fallback":{"kind":"round_robin"}}; hyperslabs accepts an
     *  optional "axis".  Throws ConfigError on malformed input. */
    static StrategySpec FromJsonText(const std::string &text);
    std::string ToJsonText() const;
};

std::string ToString(StrategyKind kind);
StrategyKind StrategyKindFromString(const std::string &name);

/** Dispatches to the strategy selected by `spec`.  Deterministic for
 *  identical inputs.  Every reader rank appears in the result, possibly
 *  with an empty slab list.  Throws ValidationError on an empty reader
 *  group or on chunks referencing unknown datasets. */
Assignment Assign(const StrategySpec &spec,
                  const std::vector<WrittenChunk> &chunks,
                  const std::vector<RankMeta> &readers,
                  const std::vector<DatasetDecl> &decls);

/** Whole chunks dealt cyclically over the readers (rank order) after
 *  sorting the table into the canonical chunk order.  Never slices. */
Assignment RoundRobin(const std::vector<WrittenChunk> &chunks,
                      const std::vector<RankMeta> &readers);

/** Per dataset, PartitionAxis(global_extent, R, axis) pre-assigns slab
 *  r to the r-th reader (rank order); every chunk contributes its
 *  intersection with each reader's slab. */
Assignment ByHyperslabs(const std::vector<WrittenChunk> &chunks,
                        const std::vector<RankMeta> &readers,
                        const std::vector<DatasetDecl> &decls,
                        std::size_t axis);

/** Byte-balanced packing: computes the ideal per-reader byte load,
 *  slices every chunk so no piece exceeds it, packs pieces with
 *  Next-Fit at that capacity, and deals bins cyclically onto readers.
 *  Guarantees per-reader load <= 2 * ideal bytes. */
Assignment Binpacking(const std::vector<WrittenChunk> &chunks,
                      const std::vector<RankMeta> &readers,
                      const std::vector<DatasetDecl> &decls);

/** The ideal per-reader byte load Binpacking packs against:
 *  max(ceil(total payload bytes / R), widest element among the chunks).
 *  Exposed for tests and reporting. */
std::uint64_t BinpackingIdealBytes(const std::vector<WrittenChunk> &chunks,
                                   std::size_t n_readers,
                                   const std::vector<DatasetDecl> &decls);

/** Two-phase host-aware distribution: chunks written on a host with at
 *  least one reader are distributed among that host's readers by
 *  `secondary`; chunks from reader-less hosts are pooled and
 *  distributed over all readers by `fallback`. */
Assignment ByHostname(const std::vector<WrittenChunk> &chunks,
                      const std::vector<RankMeta> &readers,
                      const StrategySpec &secondary,
                      const StrategySpec &fallback,
                      const std::vector<DatasetDecl> &decls);

/** max reader bytes / ideal bytes, where ideal = total bytes / R (real
 *  division).  1.0 for an assignment with no data. */
double Imbalance(const Assignment &a,
                 const std::vector<WrittenChunk> &chunks,
                 const std::vector<DatasetDecl> &decls);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_DISTRIBUTION_HPP */
