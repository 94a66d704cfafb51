/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Contact.hpp : stream rendezvous — the contact document readers poll
 *
 */

#ifndef CHUNKSTREAM_CONTACT_HPP
#define CHUNKSTREAM_CONTACT_HPP

#include "chunkstream/Core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chunkstream
{
namespace engine
{

/** Everything a reader needs to join a running stream: the writer group
 *  layout, each rank's data endpoint, and rank 0's control endpoint.
 *  Written atomically (temp + rename) by writer rank 0, polled by
 *  readers and by peer writer processes. */
struct ContactDocument
{
    std::string series;
    std::uint32_t group_size = 0;
    /** one entry per writer rank, ascending, ranks contiguous from 0 */
    std::vector<RankMeta> ranks;
    /** data endpoint ("address:port") of each writer rank, same order */
    std::vector<std::string> endpoints;
    /** control endpoint of writer rank 0 */
    std::string control;

    std::string ToJsonText() const;
    static ContactDocument FromJsonText(const std::string &text);

    /** Validates invariants (one endpoint per rank, contiguous ranks). */
    void Validate() const;

    void WriteAtomic(const std::string &path) const;

    /** One read attempt: nullopt when the file is absent, partially
     *  written, or describes a different series. */
    static std::optional<ContactDocument>
    TryRead(const std::string &path, const std::string &series);

    /** Polls `path` until a document for `series` appears or timeout_s
     *  elapses; throws RendezvousTimeout. */
    static ContactDocument Poll(const std::string &path,
                                const std::string &series,
                                double timeout_s);
};

/** One writer process's share of the contact information, exchanged
 *  through a parts directory before rank 0 assembles the document. */
struct ContactPart
{
    std::vector<RankMeta> ranks;
    std::string data_endpoint;

    std::string ToJsonText() const;
    static ContactPart FromJsonText(const std::string &text);
};

/** Directory used to exchange ContactParts for a given contact path. */
std::string PartsDir(const std::string &contact_path);

/** Writes `text` to `path` atomically (temp file + rename). */
void WriteTextAtomic(const std::string &path, const std::string &text);

} // end namespace engine
} // end namespace chunkstream

#endif /* CHUNKSTREAM_CONTACT_HPP */
