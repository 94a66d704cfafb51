/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Distribution.cpp
 *
 */

#include "chunkstream/Distribution.hpp"
#include "chunkstream/Errors.hpp"
#include "chunkstream/Geometry.hpp"

#include "JsonCodec.hpp"

#include <algorithm>
#include <numeric>

namespace chunkstream
{

namespace
{

/** Readers sorted by rank; strategies use this order wherever "the r-th
 *  reader" matters, so arbitrary input order cannot change results. */
std::vector<RankMeta> SortedReaders(const std::vector<RankMeta> &readers)
{
    std::vector<RankMeta> out = readers;
    std::sort(out.begin(), out.end(),
              [](const RankMeta &a, const RankMeta &b) {
                  return a.rank < b.rank;
              });
    return out;
}

/** Chunk-table indices in the canonical deterministic order. */
std::vector<std::size_t> SortedIndices(const std::vector<WrittenChunk> &chunks)
{
    std::vector<std::size_t> order(chunks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&chunks](std::size_t a, std::size_t b) {
                         return ChunkTableLess(chunks[a], chunks[b]);
                     });
    return order;
}

Assignment EmptyAssignment(const std::vector<RankMeta> &readers)
{
    Assignment a;
    for (const auto &r : readers)
    {
        a.per_reader[r.rank];
    }
    return a;
}

void RequireReaders(const std::vector<RankMeta> &readers)
{
    if (readers.empty())
    {
        throw ValidationError("assign: empty reader group");
    }
}

const DatasetDecl &FindDeclOrThrow(const std::vector<DatasetDecl> &decls,
                                   const std::string &name)
{
    for (const auto &d : decls)
    {
        if (d.name == name)
        {
            return d;
        }
    }
    throw ValidationError("assign: chunk references undeclared dataset \"" +
                          name + "\"");
}

std::uint64_t ChunkBytes(const WrittenChunk &c,
                         const std::vector<DatasetDecl> &decls)
{
    return ByteSize(c.region, FindDeclOrThrow(decls, c.dataset).elem_kind);
}

} // end anonymous namespace

void StrategySpec::Validate() const
{
    if (kind == StrategyKind::ByHostname)
    {
        if (!secondary || !fallback)
        {
            throw ConfigError(
                "by_hostname requires both a secondary and a fallback "
                "strategy");
        }
        if (secondary->kind == StrategyKind::ByHostname ||
            fallback->kind == StrategyKind::ByHostname)
        {
            throw ConfigError(
                "by_hostname must not nest another by_hostname");
        }
        secondary->Validate();
        fallback->Validate();
    }
}

std::string ToString(StrategyKind kind)
{
    switch (kind)
    {
    case StrategyKind::RoundRobin:
        return "round_robin";
    case StrategyKind::Hyperslabs:
        return "hyperslabs";
    case StrategyKind::Binpacking:
        return "binpacking";
    case StrategyKind::ByHostname:
        return "by_hostname";
    }
    throw ConfigError("unknown strategy kind");
}

StrategyKind StrategyKindFromString(const std::string &name)
{
    if (name == "round_robin")
        return StrategyKind::RoundRobin;
    if (name == "hyperslabs")
        return StrategyKind::Hyperslabs;
    if (name == "binpacking")
        return StrategyKind::Binpacking;
    if (name == "by_hostname")
        return StrategyKind::ByHostname;
    throw ConfigError("unknown strategy kind \"" + name + "\"");
}

namespace detail
{

codec::Json StrategyToJson(const StrategySpec &spec)
{
    codec::Json j{{"kind", ToString(spec.kind)}};
    if (spec.kind == StrategyKind::Hyperslabs)
    {
        j["axis"] = spec.axis;
    }
    if (spec.kind == StrategyKind::ByHostname)
    {
        if (spec.secondary)
        {
            j["secondary"] = StrategyToJson(*spec.secondary);
        }
        if (spec.fallback)
        {
            j["fallback"] = StrategyToJson(*spec.fallback);
        }
    }
    return j;
}

StrategySpec StrategyFromJson(const codec::Json &j)
{
    if (!j.is_object())
    {
        throw ConfigError("strategy: expected a JSON object");
    }
    StrategySpec spec;
    if (!j.contains("kind") || !j.at("kind").is_string())
    {
        throw ConfigError("strategy: missing \"kind\"");
    }
    spec.kind = StrategyKindFromString(j.at("kind").get<std::string>());
    if (j.contains("axis"))
    {
        const auto &axis = j.at("axis");
        if (!axis.is_number_unsigned() && !axis.is_number_integer())
        {
            throw ConfigError("strategy: \"axis\" is not an integer");
        }
        if (axis.is_number_integer() && !axis.is_number_unsigned() &&
            axis.get<std::int64_t>() < 0)
        {
            throw ConfigError("strategy: \"axis\" is negative");
        }
        spec.axis = axis.get<std::size_t>();
    }
    if (j.contains("secondary"))
    {
        spec.secondary =
            std::make_shared<StrategySpec>(StrategyFromJson(j.at("secondary")));
    }
    if (j.contains("fallback"))
    {
        spec.fallback =
            std::make_shared<StrategySpec>(StrategyFromJson(j.at("fallback")));
    }
    spec.Validate();
    return spec;
}

} // end namespace detail

StrategySpec StrategySpec::FromJsonText(const std::string &text)
{
    codec::Json j =
        codec::Json::parse(text, /*cb=*/nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
    {
        throw ConfigError("strategy: malformed JSON");
    }
    return detail::StrategyFromJson(j);
}

std::string StrategySpec::ToJsonText() const
{
    return detail::StrategyToJson(*this).dump();
}

Assignment RoundRobin(const std::vector<WrittenChunk> &chunks,
                      const std::vector<RankMeta> &readers)
{
    RequireReaders(readers);
    const std::vector<RankMeta> by_rank = SortedReaders(readers);
    Assignment a = EmptyAssignment(readers);
    const std::vector<std::size_t> order = SortedIndices(chunks);
    for (std::size_t i = 0; i < order.size(); ++i)
    {
        const std::size_t src = order[i];
        a.per_reader[by_rank[i % by_rank.size()].rank].push_back(
            ChunkSlab{src, chunks[src].region});
    }
    return a;
}

Assignment ByHyperslabs(const std::vector<WrittenChunk> &chunks,
                        const std::vector<RankMeta> &readers,
                        const std::vector<DatasetDecl> &decls,
                        std::size_t axis)
{
    RequireReaders(readers);
    const std::vector<RankMeta> by_rank = SortedReaders(readers);
    const auto n = static_cast<std::uint32_t>(by_rank.size());
    Assignment a = EmptyAssignment(readers);

    // one partition per dataset, computed on demand
    std::map<std::string, std::vector<std::optional<Region>>> partitions;
    for (const std::size_t src : SortedIndices(chunks))
    {
        const WrittenChunk &c = chunks[src];
        auto it = partitions.find(c.dataset);
        if (it == partitions.end())
        {
            const DatasetDecl &decl = FindDeclOrThrow(decls, c.dataset);
            if (axis >= decl.global_extent.size())
            {
                throw ValidationError(
                    "hyperslabs: axis " + std::to_string(axis) +
                    " out of range for dataset \"" + c.dataset + "\" of rank " +
                    std::to_string(decl.global_extent.size()));
            }
            it = partitions
                     .emplace(c.dataset,
                              PartitionAxis(decl.global_extent, n, axis))
                     .first;
        }
        for (std::uint32_t r = 0; r < n; ++r)
        {
            const auto &slab = it->second[r];
            if (!slab)
            {
                continue;
            }
            if (auto piece = Intersect(c.region, *slab))
            {
                a.per_reader[by_rank[r].rank].push_back(
                    ChunkSlab{src, *piece});
            }
        }
    }
    return a;
}

std::uint64_t BinpackingIdealBytes(const std::vector<WrittenChunk> &chunks,
                                   std::size_t n_readers,
                                   const std::vector<DatasetDecl> &decls)
{
    if (n_readers == 0)
    {
        throw ValidationError("assign: empty reader group");
    }
    std::uint64_t total = 0;
    std::uint64_t widest = 1;
    for (const auto &c : chunks)
    {
        const auto width = static_cast<std::uint64_t>(
            ElemSize(FindDeclOrThrow(decls, c.dataset).elem_kind));
        total += Volume(c.region) * width;
        widest = std::max(widest, width);
    }
    const std::uint64_t ceil_share =
        (total + n_readers - 1) / n_readers;
    // never below one element's width, so per-chunk cell caps stay >= 1
    return std::max(ceil_share, widest);
}

Assignment Binpacking(const std::vector<WrittenChunk> &chunks,
                      const std::vector<RankMeta> &readers,
                      const std::vector<DatasetDecl> &decls)
{
    RequireReaders(readers);
    const std::vector<RankMeta> by_rank = SortedReaders(readers);
    const std::size_t n = by_rank.size();
    Assignment a = EmptyAssignment(readers);
    if (chunks.empty())
    {
        return a;
    }
    const std::uint64_t ideal = BinpackingIdealBytes(chunks, n, decls);

    struct Piece
    {
        std::size_t source;
        Region region;
        std::uint64_t bytes;
    };
    std::vector<Piece> pieces;
    for (const std::size_t src : SortedIndices(chunks))
    {
        const WrittenChunk &c = chunks[src];
        const auto width = static_cast<std::uint64_t>(
            ElemSize(FindDeclOrThrow(decls, c.dataset).elem_kind));
        const std::uint64_t cap_cells = ideal / width; // >= 1 by construction
        for (Region &piece : SliceToCap(c.region, cap_cells))
        {
            const std::uint64_t bytes = Volume(piece) * width;
            pieces.push_back(Piece{src, std::move(piece), bytes});
        }
    }

    // Next-Fit at capacity `ideal`: a piece that does not fit closes the
    // current bin and opens a new one.  Adjacent bins together exceed the
    // capacity, so at most 2*ceil(total/ideal) <= 2n bins open, and the
    // cyclic deal below gives every reader at most 2 bins = 2*ideal bytes.
    std::vector<std::vector<Piece>> bins;
    std::uint64_t bin_bytes = 0;
    for (Piece &piece : pieces)
    {
        if (bins.empty() || bin_bytes + piece.bytes > ideal)
        {
            bins.emplace_back();
            bin_bytes = 0;
        }
        bin_bytes += piece.bytes;
        bins.back().push_back(std::move(piece));
    }

    for (std::size_t j = 0; j < bins.size(); ++j)
    {
        auto &slabs = a.per_reader[by_rank[j % n].rank];
        for (Piece &piece : bins[j])
        {
            slabs.push_back(ChunkSlab{piece.source, std::move(piece.region)});
        }
    }
    return a;
}

Assignment ByHostname(const std::vector<WrittenChunk> &chunks,
                      const std::vector<RankMeta> &readers,
                      const StrategySpec &secondary,
                      const StrategySpec &fallback,
                      const std::vector<DatasetDecl> &decls)
{
    RequireReaders(readers);
    if (secondary.kind == StrategyKind::ByHostname ||
        fallback.kind == StrategyKind::ByHostname)
    {
        throw ConfigError("by_hostname must not nest another by_hostname");
    }
    Assignment a = EmptyAssignment(readers);

    std::map<std::string, std::vector<RankMeta>> readers_by_host;
    for (const auto &r : readers)
    {
        readers_by_host[r.hostname].push_back(r);
    }

    // phase 1 inputs per host with readers; phase 2 pool for the rest
    std::map<std::string, std::vector<std::size_t>> local;
    std::vector<std::size_t> leftovers;
    for (std::size_t i = 0; i < chunks.size(); ++i)
    {
        if (readers_by_host.count(chunks[i].hostname) != 0)
        {
            local[chunks[i].hostname].push_back(i);
        }
        else
        {
            leftovers.push_back(i);
        }
    }

    const auto merge = [&a](const Assignment &sub,
                            const std::vector<std::size_t> &back_map) {
        for (const auto &[rank, slabs] : sub.per_reader)
        {
            auto &dst = a.per_reader[rank];
            for (const ChunkSlab &slab : slabs)
            {
                dst.push_back(ChunkSlab{back_map[slab.source], slab.region});
            }
        }
    };

    for (const auto &[host, indices] : local)
    {
        std::vector<WrittenChunk> sub_chunks;
        sub_chunks.reserve(indices.size());
        for (const std::size_t i : indices)
        {
            sub_chunks.push_back(chunks[i]);
        }
        merge(Assign(secondary, sub_chunks, readers_by_host[host], decls),
              indices);
    }
    if (!leftovers.empty())
    {
        std::vector<WrittenChunk> sub_chunks;
        sub_chunks.reserve(leftovers.size());
        for (const std::size_t i : leftovers)
        {
            sub_chunks.push_back(chunks[i]);
        }
        merge(Assign(fallback, sub_chunks, readers, decls), leftovers);
    }
    return a;
}

Assignment Assign(const StrategySpec &spec,
                  const std::vector<WrittenChunk> &chunks,
                  const std::vector<RankMeta> &readers,
                  const std::vector<DatasetDecl> &decls)
{
    spec.Validate();
    switch (spec.kind)
    {
    case StrategyKind::RoundRobin:
        return RoundRobin(chunks, readers);
    case StrategyKind::Hyperslabs:
        return ByHyperslabs(chunks, readers, decls, spec.axis);
    case StrategyKind::Binpacking:
        return Binpacking(chunks, readers, decls);
    case StrategyKind::ByHostname:
        return ByHostname(chunks, readers, *spec.secondary, *spec.fallback,
                          decls);
    }
    throw ConfigError("unknown strategy kind");
}

double Imbalance(const Assignment &a,
                 const std::vector<WrittenChunk> &chunks,
                 const std::vector<DatasetDecl> &decls)
{
    if (a.per_reader.empty())
    {
        throw ValidationError("imbalance: empty assignment");
    }
    std::uint64_t total = 0;
    for (const auto &c : chunks)
    {
        total += ChunkBytes(c, decls);
    }
    if (total == 0)
    {
        return 1.0;
    }
    std::uint64_t max_reader = 0;
    for (const auto &[rank, slabs] : a.per_reader)
    {
        std::uint64_t bytes = 0;
        for (const ChunkSlab &slab : slabs)
        {
            bytes += ByteSize(
                slab.region,
                FindDeclOrThrow(decls, chunks[slab.source].dataset).elem_kind);
        }
        max_reader = std::max(max_reader, bytes);
    }
    const double ideal = static_cast<double>(total) /
                         static_cast<double>(a.per_reader.size());
    return static_cast<double>(max_reader) / ideal;
}

} // end namespace chunkstream
