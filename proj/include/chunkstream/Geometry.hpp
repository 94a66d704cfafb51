/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Geometry.hpp : n-dimensional hyperslab algebra — intersection,
 *                axis partitioning, volume-capped slicing, subtraction
 *
 */

#ifndef CHUNKSTREAM_GEOMETRY_HPP
#define CHUNKSTREAM_GEOMETRY_HPP

#include "chunkstream/Core.hpp"

#include <optional>
#include <vector>

namespace chunkstream
{

/** The maximal region contained in both inputs, or nullopt when the
 *  per-axis overlap is empty anywhere (half-open convention: touching
 *  regions are disjoint).  Throws ValidationError on rank mismatch. */
std::optional<Region> Intersect(const Region &a, const Region &b);

/** Splits the global extent into n_parts contiguous slabs along `axis`.
 *  Slab thicknesses differ by at most one, larger parts first (ceil
 *  before floor).  When n_parts exceeds the axis extent, surplus parts
 *  are reported as nullopt.  The non-empty parts tile the global extent
 *  exactly.  Throws ValidationError when axis >= rank or n_parts == 0. */
std::vector<std::optional<Region>> PartitionAxis(const Extent &global,
                                                 std::uint32_t n_parts,
                                                 std::size_t axis);

/** Slices r into pieces of volume <= cap that tile r exactly.  Chopping
 *  proceeds along the slowest-varying axis first and recurses to faster
 *  axes only when a single unit-thickness slab still exceeds cap.  If
 *  volume(r) <= cap the result is {r}.  The piece count never exceeds
 *  2 * ceil(volume(r) / cap).  Throws ValidationError when cap == 0. */
std::vector<Region> SliceToCap(const Region &r, std::uint64_t cap);

/** Disjoint regions covering exactly the cells of a that are not in b.
 *  Returns {a} when the regions do not overlap.  Throws ValidationError
 *  on rank mismatch. */
std::vector<Region> Subtract(const Region &a, const Region &b);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_GEOMETRY_HPP */
