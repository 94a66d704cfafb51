/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Oracles.hpp : brute-force per-cell reference computations and random
 *               instance generators shared by unit and acceptance tests.
 *               Everything here is derived from first principles
 *               (explicit cell enumeration), independent of the library
 *               algorithms under test.
 *
 */

#ifndef CHUNKSTREAM_TESTS_ORACLES_HPP
#define CHUNKSTREAM_TESTS_ORACLES_HPP

#include "chunkstream/Core.hpp"
#include "chunkstream/Distribution.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracles
{

using chunkstream::Assignment;
using chunkstream::DatasetDecl;
using chunkstream::Extent;
using chunkstream::RankMeta;
using chunkstream::Region;
using chunkstream::WrittenChunk;

using Cell = std::vector<std::uint64_t>;
using CellSet = std::set<Cell>;
using CellCounts = std::map<Cell, std::uint64_t>;

/** Every cell coordinate of a region, enumerated one by one. */
inline std::vector<Cell> CellsOf(const Region &r)
{
    std::vector<Cell> cells;
    if (r.extent.empty())
    {
        return cells;
    }
    Cell cur = r.offset;
    while (true)
    {
        cells.push_back(cur);
        // odometer increment, fastest-varying axis last
        std::size_t axis = r.extent.size();
        while (axis > 0)
        {
            --axis;
            if (++cur[axis] < r.offset[axis] + r.extent[axis])
            {
                break;
            }
            cur[axis] = r.offset[axis];
            if (axis == 0)
            {
                return cells;
            }
        }
    }
}

inline CellSet CellSetOf(const Region &r)
{
    const auto cells = CellsOf(r);
    return CellSet(cells.begin(), cells.end());
}

/** Per-dataset multiset of written cells (a cell covered by k chunks
 *  appears with count k). */
inline std::map<std::string, CellCounts> WrittenCells(
    const std::vector<WrittenChunk> &chunks)
{
    std::map<std::string, CellCounts> out;
    for (const auto &c : chunks)
    {
        auto &counts = out[c.dataset];
        for (const Cell &cell : CellsOf(c.region))
        {
            ++counts[cell];
        }
    }
    return out;
}

/** Per-dataset multiset of assigned cells, over all readers. */
inline std::map<std::string, CellCounts> AssignedCells(
    const Assignment &a, const std::vector<WrittenChunk> &chunks)
{
    std::map<std::string, CellCounts> out;
    for (const auto &[rank, slabs] : a.per_reader)
    {
        for (const auto &slab : slabs)
        {
            auto &counts = out[chunks[slab.source].dataset];
            for (const Cell &cell : CellsOf(slab.region))
            {
                ++counts[cell];
            }
        }
    }
    return out;
}

/** True iff inner lies fully inside outer (per-axis interval check). */
inline bool Contains(const Region &outer, const Region &inner)
{
    if (outer.Rank() != inner.Rank())
    {
        return false;
    }
    for (std::size_t axis = 0; axis < outer.Rank(); ++axis)
    {
        if (inner.offset[axis] < outer.offset[axis] ||
            inner.offset[axis] + inner.extent[axis] >
                outer.offset[axis] + outer.extent[axis])
        {
            return false;
        }
    }
    return true;
}

/** Total bytes assigned to each reader, computed slab by slab. */
inline std::map<std::uint32_t, std::uint64_t> ReaderBytes(
    const Assignment &a, const std::vector<WrittenChunk> &chunks,
    const std::vector<DatasetDecl> &decls)
{
    std::map<std::uint32_t, std::uint64_t> out;
    for (const auto &[rank, slabs] : a.per_reader)
    {
        std::uint64_t bytes = 0;
        for (const auto &slab : slabs)
        {
            const auto &name = chunks[slab.source].dataset;
            for (const auto &d : decls)
            {
                if (d.name == name)
                {
                    bytes += chunkstream::Volume(slab.region) *
                             chunkstream::ElemSize(d.elem_kind);
                    break;
                }
            }
        }
        out[rank] = bytes;
    }
    return out;
}

/** One random distribution instance: datasets, a chunk table validated
 *  against them, and a reader group. */
struct RandomInstance
{
    std::vector<DatasetDecl> decls;
    std::vector<WrittenChunk> chunks;
    std::vector<RankMeta> readers;
};

/** Generator tuned so every region stays small enough for per-cell
 *  oracles: rank <= 3, <= 64 chunks, <= 16 readers, chunk volumes a few
 *  hundred cells at most. */
inline RandomInstance MakeRandomInstance(std::mt19937_64 &rng)
{
    RandomInstance inst;
    const char *kHosts[] = {"nodeA", "nodeB", "nodeC", "nodeD"};
    const chunkstream::ElemKind kKinds[] = {
        chunkstream::ElemKind::UInt8, chunkstream::ElemKind::Int32,
        chunkstream::ElemKind::Float32, chunkstream::ElemKind::Float64};

    auto randint = [&rng](std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
    };

    const std::size_t n_datasets = randint(1, 3);
    for (std::size_t d = 0; d < n_datasets; ++d)
    {
        DatasetDecl decl;
        decl.name = "data/set" + std::to_string(d);
        decl.elem_kind = kKinds[randint(0, 3)];
        const std::size_t rank = randint(1, 3);
        for (std::size_t axis = 0; axis < rank; ++axis)
        {
            decl.global_extent.push_back(randint(1, rank == 1 ? 40 : 12));
        }
        inst.decls.push_back(std::move(decl));
    }

    const std::size_t n_chunks = randint(0, 64);
    for (std::size_t i = 0; i < n_chunks; ++i)
    {
        const DatasetDecl &decl =
            inst.decls[randint(0, inst.decls.size() - 1)];
        WrittenChunk c;
        c.dataset = decl.name;
        for (const std::uint64_t g : decl.global_extent)
        {
            const std::uint64_t off = randint(0, g - 1);
            c.region.offset.push_back(off);
            c.region.extent.push_back(randint(1, g - off));
        }
        c.producer_rank = static_cast<std::uint32_t>(randint(0, 7));
        c.hostname = kHosts[randint(0, 3)];
        inst.chunks.push_back(std::move(c));
    }

    const std::size_t n_readers = randint(1, 16);
    for (std::size_t r = 0; r < n_readers; ++r)
    {
        inst.readers.push_back(RankMeta{static_cast<std::uint32_t>(r),
                                        kHosts[randint(0, 3)]});
    }
    return inst;
}

} // end namespace oracles

#endif /* CHUNKSTREAM_TESTS_ORACLES_HPP */
