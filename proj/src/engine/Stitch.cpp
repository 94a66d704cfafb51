/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Stitch.cpp
 *
 */

#include "Stitch.hpp"

#include "chunkstream/Errors.hpp"
#include "chunkstream/Geometry.hpp"

#include <cstring>
#include <deque>
#include <string>

namespace chunkstream
{
namespace engine
{

namespace
{

std::uint64_t LinearIndex(const Offset &abs, const Region &box)
{
    std::uint64_t index = 0;
    for (std::size_t axis = 0; axis < box.extent.size(); ++axis)
    {
        index = index * box.extent[axis] + (abs[axis] - box.offset[axis]);
    }
    return index;
}

} // end anonymous namespace

void ForEachRun(const Region &src, const Region &dst, const Region &piece,
                const std::function<void(const CopyRun &)> &fn)
{
    const std::size_t rank = piece.Rank();
    if (src.Rank() != rank || dst.Rank() != rank)
    {
        throw ValidationError("copy regions of mismatched rank");
    }
    if (rank == 0 || Volume(piece.extent) == 0)
    {
        return;
    }

    const std::size_t last = rank - 1;
    const std::uint64_t run_elems = piece.extent[last];

    // Odometer over every axis but the fastest-varying one; each position
    // yields one contiguous run of run_elems elements.
    Offset abs = piece.offset;
    while (true)
    {
        fn(CopyRun{LinearIndex(abs, src), LinearIndex(abs, dst), run_elems});

        std::size_t axis = last;
        while (axis > 0)
        {
            --axis;
            if (++abs[axis] < piece.offset[axis] + piece.extent[axis])
            {
                break;
            }
            abs[axis] = piece.offset[axis];
            if (axis == 0)
            {
                return;
            }
        }
        if (rank == 1)
        {
            return;
        }
    }
}

void CopyRegion(const Region &src, const std::uint8_t *src_buf,
                const Region &dst, std::uint8_t *dst_buf,
                const Region &piece, std::size_t elem_size)
{
    ForEachRun(src, dst, piece, [&](const CopyRun &run) {
        std::memcpy(dst_buf + run.dst_elem * elem_size,
                    src_buf + run.src_elem * elem_size,
                    run.elems * elem_size);
    });
}

std::vector<CoverPiece> CoverRegion(const StepAnnouncement &ann,
                                    const std::string &dataset,
                                    const Region &request)
{
    std::vector<CoverPiece> pieces;
    std::deque<Region> remaining{request};

    for (std::size_t i = 0; i < ann.chunk_table.size() && !remaining.empty();
         ++i)
    {
        const WrittenChunk &chunk = ann.chunk_table[i];
        if (chunk.dataset != dataset)
        {
            continue;
        }
        const std::size_t pending = remaining.size();
        for (std::size_t j = 0; j < pending; ++j)
        {
            Region rem = remaining.front();
            remaining.pop_front();
            if (auto overlap = Intersect(rem, chunk.region))
            {
                pieces.push_back(CoverPiece{i, *overlap});
                for (Region &rest : Subtract(rem, *overlap))
                {
                    remaining.push_back(rest);
                }
            }
            else
            {
                remaining.push_back(rem);
            }
        }
    }

    if (!remaining.empty())
    {
        std::uint64_t missing = 0;
        for (const Region &rem : remaining)
        {
            missing += Volume(rem);
        }
        throw UnavailableRegion("step " + std::to_string(ann.step_index) +
                                " dataset '" + dataset + "': " +
                                std::to_string(missing) +
                                " requested element(s) were never written");
    }
    return pieces;
}

} // end namespace engine
} // end namespace chunkstream
