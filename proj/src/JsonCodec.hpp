/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * JsonCodec.hpp : internal JSON (de)serialization of the domain types.
 *                 Not installed; m_-free utility namespace.
 *
 */

#ifndef CHUNKSTREAM_JSONCODEC_HPP
#define CHUNKSTREAM_JSONCODEC_HPP

#include "chunkstream/Core.hpp"

#include <json.hpp>

namespace chunkstream
{
namespace codec
{

using Json = nlohmann::json;

Json ToJson(const AttributeValue &v);
AttributeValue AttributeFromJson(const Json &j);

Json ToJson(const Region &r);
Region RegionFromJson(const Json &j);

Json ToJson(const DatasetDecl &d);
DatasetDecl DeclFromJson(const Json &j);

Json ToJson(const WrittenChunk &c);
WrittenChunk ChunkFromJson(const Json &j);

Json ToJson(const StepAnnouncement &s);
StepAnnouncement AnnouncementFromJson(const Json &j);

Json ToJson(const RankMeta &m);
RankMeta RankMetaFromJson(const Json &j);

/** Parses text, rethrowing parse failures as ProtocolError. */
Json Parse(const std::string &text, const char *what);

/** Field access helpers that throw ProtocolError on absent or
 *  wrongly-typed fields. */
const Json &Require(const Json &j, const char *key, const char *what);
std::uint64_t RequireU64(const Json &j, const char *key, const char *what);
std::string RequireString(const Json &j, const char *key, const char *what);
Extent U64ListFromJson(const Json &j, const char *what);

} // end namespace codec
} // end namespace chunkstream

#endif /* CHUNKSTREAM_JSONCODEC_HPP */
