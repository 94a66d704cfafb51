/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Stitch.hpp : region coverage planning and n-D sub-array copying,
 *              shared by both engines' read paths
 *
 */

#ifndef CHUNKSTREAM_STITCH_HPP
#define CHUNKSTREAM_STITCH_HPP

#include "chunkstream/Core.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace chunkstream
{
namespace engine
{

/** One contiguous run along the fastest-varying axis: element offsets
 *  into a buffer laid out as the source region and one laid out as the
 *  destination region. */
struct CopyRun
{
    std::uint64_t src_elem = 0;
    std::uint64_t dst_elem = 0;
    std::uint64_t elems = 0;
};

/** Enumerates the runs that copy `piece` from a row-major buffer shaped
 *  like `src` into a row-major buffer shaped like `dst`.  `piece` must
 *  lie inside both regions. */
void ForEachRun(const Region &src, const Region &dst, const Region &piece,
                const std::function<void(const CopyRun &)> &fn);

/** Copies `piece` between two row-major buffers (`elem_size` bytes per
 *  element). */
void CopyRegion(const Region &src, const std::uint8_t *src_buf,
                const Region &dst, std::uint8_t *dst_buf,
                const Region &piece, std::size_t elem_size);

/** A planned read: which chunk-table entry serves which part of a
 *  request. */
struct CoverPiece
{
    std::size_t chunk_index = 0;
    Region region;
};

/** Plans the coverage of `request` by the chunks of `dataset` in table
 *  order (earlier chunks win where written regions overlap; the pieces
 *  are disjoint and cover the request exactly).  Throws
 *  UnavailableRegion when any cell of the request was never written. */
std::vector<CoverPiece> CoverRegion(const StepAnnouncement &ann,
                                    const std::string &dataset,
                                    const Region &request);

} // end namespace engine
} // end namespace chunkstream

#endif /* CHUNKSTREAM_STITCH_HPP */
