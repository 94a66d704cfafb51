/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Announcement.hpp : canonical byte encoding of step announcements
 *
 */

#ifndef CHUNKSTREAM_ANNOUNCEMENT_HPP
#define CHUNKSTREAM_ANNOUNCEMENT_HPP

#include "chunkstream/Core.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace chunkstream
{

/** Version tag prepended to every encoded announcement. */
inline constexpr char AnnouncementTag[4] = {'C', 'S', 'A', '1'};

/** Encodes an announcement canonically: a 4-byte version tag, an 8-byte
 *  little-endian payload length, and a UTF-8 JSON document with sorted
 *  object keys.  Structurally equal announcements encode to identical
 *  bytes. */
std::vector<std::uint8_t> EncodeAnnouncement(const StepAnnouncement &s);

/** Decodes bytes produced by EncodeAnnouncement.  Throws ProtocolError
 *  on truncated input, version mismatch, trailing bytes, or a malformed
 *  document. */
StepAnnouncement DecodeAnnouncement(std::span<const std::uint8_t> bytes);

/** Merges per-process fragments of one step into the full announcement:
 *  dataset lists are united (same-name declarations must be equal),
 *  attribute maps are united (same-key values must be equal), chunk
 *  tables are concatenated and brought into the canonical
 *  (producer_rank, dataset, offset) order.  All fragments must carry
 *  the same step_index.  Throws ValidationError on conflicts. */
StepAnnouncement MergeAnnouncements(
    const std::vector<StepAnnouncement> &fragments);

} // end namespace chunkstream

#endif /* CHUNKSTREAM_ANNOUNCEMENT_HPP */
