/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Geometry.cpp
 *
 */

#include "chunkstream/Geometry.hpp"
#include "chunkstream/Errors.hpp"

#include <algorithm>

namespace chunkstream
{

std::optional<Region> Intersect(const Region &a, const Region &b)
{
    if (a.Rank() != b.Rank() || a.offset.size() != a.extent.size() ||
        b.offset.size() != b.extent.size())
    {
        throw ValidationError("intersect: rank mismatch (" +
                              std::to_string(a.Rank()) + " vs " +
                              std::to_string(b.Rank()) + ")");
    }
    Region out;
    out.offset.resize(a.Rank());
    out.extent.resize(a.Rank());
    for (std::size_t axis = 0; axis < a.Rank(); ++axis)
    {
        const std::uint64_t lo =
            std::max(a.offset[axis], b.offset[axis]);
        const std::uint64_t hi =
            std::min(a.offset[axis] + a.extent[axis],
                     b.offset[axis] + b.extent[axis]);
        if (hi <= lo)
        {
            return std::nullopt;
        }
        out.offset[axis] = lo;
        out.extent[axis] = hi - lo;
    }
    return out;
}

std::vector<std::optional<Region>> PartitionAxis(const Extent &global,
                                                 std::uint32_t n_parts,
                                                 std::size_t axis)
{
    if (n_parts == 0)
    {
        throw ValidationError("partition: zero parts requested");
    }
    if (axis >= global.size())
    {
        throw ValidationError("partition: axis " + std::to_string(axis) +
                              " out of range for rank " +
                              std::to_string(global.size()));
    }
    const std::uint64_t cells = global[axis];
    const std::uint64_t base = cells / n_parts;
    const std::uint64_t remainder = cells % n_parts;

    std::vector<std::optional<Region>> parts;
    parts.reserve(n_parts);
    std::uint64_t start = 0;
    for (std::uint32_t p = 0; p < n_parts; ++p)
    {
        // ceil-sized parts come first so larger slabs precede smaller ones
        const std::uint64_t thickness = base + (p < remainder ? 1 : 0);
        if (thickness == 0)
        {
            parts.push_back(std::nullopt);
            continue;
        }
        Region r;
        r.offset.assign(global.size(), 0);
        r.extent = global;
        r.offset[axis] = start;
        r.extent[axis] = thickness;
        parts.push_back(std::move(r));
        start += thickness;
    }
    return parts;
}

namespace
{

void SliceRec(const Region &r, std::uint64_t cap, std::size_t axis,
              std::vector<Region> &out)
{
    const std::uint64_t vol = Volume(r);
    if (vol <= cap)
    {
        out.push_back(r);
        return;
    }
    // vol > cap >= 1 guarantees some axis at or after `axis` has extent > 1,
    // and unit slabs of the last axis always have volume 1 here, so the
    // recursion below never runs past the last axis
    const std::uint64_t slab = vol / r.extent[axis];
    if (slab > cap)
    {
        Region unit = r;
        unit.extent[axis] = 1;
        for (std::uint64_t i = 0; i < r.extent[axis]; ++i)
        {
            unit.offset[axis] = r.offset[axis] + i;
            SliceRec(unit, cap, axis + 1, out);
        }
        return;
    }
    const std::uint64_t thickness = cap / slab;
    for (std::uint64_t start = 0; start < r.extent[axis]; start += thickness)
    {
        Region piece = r;
        piece.offset[axis] = r.offset[axis] + start;
        piece.extent[axis] = std::min(thickness, r.extent[axis] - start);
        out.push_back(std::move(piece));
    }
}

} // end anonymous namespace

std::vector<Region> SliceToCap(const Region &r, std::uint64_t cap)
{
    if (cap == 0)
    {
        throw ValidationError("slice: cap must be >= 1");
    }
    if (r.offset.size() != r.extent.size())
    {
        throw ValidationError("slice: offset/extent rank mismatch");
    }
    std::vector<Region> out;
    SliceRec(r, cap, 0, out);
    return out;
}

std::vector<Region> Subtract(const Region &a, const Region &b)
{
    const auto overlap = Intersect(a, b);
    if (!overlap)
    {
        return {a};
    }
    std::vector<Region> out;
    Region rem = a;
    for (std::size_t axis = 0; axis < a.Rank(); ++axis)
    {
        const std::uint64_t cut_lo = overlap->offset[axis];
        const std::uint64_t cut_hi = cut_lo + overlap->extent[axis];
        const std::uint64_t rem_lo = rem.offset[axis];
        const std::uint64_t rem_hi = rem_lo + rem.extent[axis];
        if (cut_lo > rem_lo)
        {
            Region before = rem;
            before.extent[axis] = cut_lo - rem_lo;
            out.push_back(std::move(before));
        }
        if (rem_hi > cut_hi)
        {
            Region after = rem;
            after.offset[axis] = cut_hi;
            after.extent[axis] = rem_hi - cut_hi;
            out.push_back(std::move(after));
        }
        rem.offset[axis] = cut_lo;
        rem.extent[axis] = cut_hi - cut_lo;
    }
    // rem has shrunk to the overlap itself and is dropped
    return out;
}

} // end namespace chunkstream
