/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Announcement.cpp : canonical codec and fragment merging
 *
 */

#include "chunkstream/Announcement.hpp"
#include "chunkstream/Errors.hpp"

#include "JsonCodec.hpp"

#include <algorithm>
#include <cstring>

namespace chunkstream
{

namespace codec
{

Json Parse(const std::string &text, const char *what)
{
    Json j = Json::parse(text, /*cb=*/nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
    {
        throw ProtocolError(std::string(what) + ": malformed JSON");
    }
    return j;
}

const Json &Require(const Json &j, const char *key, const char *what)
{
    if (!j.is_object() || !j.contains(key))
    {
        throw ProtocolError(std::string(what) + ": missing field \"" + key +
                            "\"");
    }
    return j.at(key);
}

std::uint64_t RequireU64(const Json &j, const char *key, const char *what)
{
    const Json &f = Require(j, key, what);
    if (!f.is_number_unsigned() && !f.is_number_integer())
    {
        throw ProtocolError(std::string(what) + ": field \"" + key +
                            "\" is not an integer");
    }
    if (f.is_number_integer() && !f.is_number_unsigned() &&
        f.get<std::int64_t>() < 0)
    {
        throw ProtocolError(std::string(what) + ": field \"" + key +
                            "\" is negative");
    }
    return f.get<std::uint64_t>();
}

std::string RequireString(const Json &j, const char *key, const char *what)
{
    const Json &f = Require(j, key, what);
    if (!f.is_string())
    {
        throw ProtocolError(std::string(what) + ": field \"" + key +
                            "\" is not a string");
    }
    return f.get<std::string>();
}

Extent U64ListFromJson(const Json &j, const char *what)
{
    if (!j.is_array())
    {
        throw ProtocolError(std::string(what) + ": expected integer list");
    }
    Extent out;
    out.reserve(j.size());
    for (const Json &e : j)
    {
        if (!e.is_number_unsigned() && !e.is_number_integer())
        {
            throw ProtocolError(std::string(what) +
                                ": list entry is not an integer");
        }
        if (e.is_number_integer() && !e.is_number_unsigned() &&
            e.get<std::int64_t>() < 0)
        {
            throw ProtocolError(std::string(what) + ": list entry is negative");
        }
        out.push_back(e.get<std::uint64_t>());
    }
    return out;
}

Json ToJson(const AttributeValue &v)
{
    Json out = Json::object();
    std::visit(
        [&out](const auto &x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::int64_t>)
            {
                out["t"] = "i";
            }
            else if constexpr (std::is_same_v<T, double>)
            {
                out["t"] = "f";
            }
            else if constexpr (std::is_same_v<T, std::string>)
            {
                out["t"] = "s";
            }
            else if constexpr (std::is_same_v<T, std::vector<std::int64_t>>)
            {
                out["t"] = "li";
            }
            else if constexpr (std::is_same_v<T, std::vector<double>>)
            {
                out["t"] = "lf";
            }
            else
            {
                out["t"] = "ls";
            }
            out["v"] = x;
        },
        v);
    return out;
}

AttributeValue AttributeFromJson(const Json &j)
{
    const std::string t = RequireString(j, "t", "attribute");
    const Json &v = Require(j, "v", "attribute");
    try
    {
        if (t == "i")
        {
            if (!v.is_number_integer() && !v.is_number_unsigned())
            {
                throw ProtocolError("attribute: not an integer");
            }
            return v.get<std::int64_t>();
        }
        if (t == "f")
        {
            if (!v.is_number())
            {
                throw ProtocolError("attribute: not a number");
            }
            return v.get<double>();
        }
        if (t == "s")
        {
            if (!v.is_string())
            {
                throw ProtocolError("attribute: not a string");
            }
            return v.get<std::string>();
        }
        if (t == "li")
        {
            return v.get<std::vector<std::int64_t>>();
        }
        if (t == "lf")
        {
            return v.get<std::vector<double>>();
        }
        if (t == "ls")
        {
            return v.get<std::vector<std::string>>();
        }
    }
    catch (const Json::exception &e)
    {
        throw ProtocolError(std::string("attribute: ") + e.what());
    }
    throw ProtocolError("attribute: unknown type tag \"" + t + "\"");
}

Json ToJson(const Region &r)
{
    return Json{{"offset", r.offset}, {"extent", r.extent}};
}

Region RegionFromJson(const Json &j)
{
    Region r;
    r.offset = U64ListFromJson(Require(j, "offset", "region"), "region");
    r.extent = U64ListFromJson(Require(j, "extent", "region"), "region");
    return r;
}

Json ToJson(const DatasetDecl &d)
{
    return Json{{"name", d.name},
                {"elem_kind", ToString(d.elem_kind)},
                {"global_extent", d.global_extent}};
}

DatasetDecl DeclFromJson(const Json &j)
{
    DatasetDecl d;
    d.name = RequireString(j, "name", "dataset");
    d.elem_kind =
        ElemKindFromString(RequireString(j, "elem_kind", "dataset"));
    d.global_extent =
        U64ListFromJson(Require(j, "global_extent", "dataset"), "dataset");
    return d;
}

Json ToJson(const WrittenChunk &c)
{
    return Json{{"dataset", c.dataset},
                {"offset", c.region.offset},
                {"extent", c.region.extent},
                {"producer_rank", c.producer_rank},
                {"hostname", c.hostname}};
}

WrittenChunk ChunkFromJson(const Json &j)
{
    WrittenChunk c;
    c.dataset = RequireString(j, "dataset", "chunk");
    c.region.offset = U64ListFromJson(Require(j, "offset", "chunk"), "chunk");
    c.region.extent = U64ListFromJson(Require(j, "extent", "chunk"), "chunk");
    c.producer_rank = static_cast<std::uint32_t>(
        RequireU64(j, "producer_rank", "chunk"));
    c.hostname = RequireString(j, "hostname", "chunk");
    return c;
}

Json ToJson(const StepAnnouncement &s)
{
    Json datasets = Json::array();
    for (const auto &d : s.datasets)
    {
        datasets.push_back(ToJson(d));
    }
    Json attributes = Json::object();
    for (const auto &[name, value] : s.attributes)
    {
        attributes[name] = ToJson(value);
    }
    Json chunks = Json::array();
    for (const auto &c : s.chunk_table)
    {
        chunks.push_back(ToJson(c));
    }
    return Json{{"step_index", s.step_index},
                {"datasets", std::move(datasets)},
                {"attributes", std::move(attributes)},
                {"chunk_table", std::move(chunks)}};
}

StepAnnouncement AnnouncementFromJson(const Json &j)
{
    StepAnnouncement s;
    s.step_index = RequireU64(j, "step_index", "announcement");
    const Json &datasets = Require(j, "datasets", "announcement");
    if (!datasets.is_array())
    {
        throw ProtocolError("announcement: \"datasets\" is not a list");
    }
    for (const Json &d : datasets)
    {
        s.datasets.push_back(DeclFromJson(d));
    }
    const Json &attributes = Require(j, "attributes", "announcement");
    if (!attributes.is_object())
    {
        throw ProtocolError("announcement: \"attributes\" is not a map");
    }
    for (const auto &[name, value] : attributes.items())
    {
        s.attributes.emplace(name, AttributeFromJson(value));
    }
    const Json &chunks = Require(j, "chunk_table", "announcement");
    if (!chunks.is_array())
    {
        throw ProtocolError("announcement: \"chunk_table\" is not a list");
    }
    for (const Json &c : chunks)
    {
        s.chunk_table.push_back(ChunkFromJson(c));
    }
    return s;
}

Json ToJson(const RankMeta &m)
{
    return Json{{"rank", m.rank}, {"hostname", m.hostname}};
}

RankMeta RankMetaFromJson(const Json &j)
{
    RankMeta m;
    m.rank = static_cast<std::uint32_t>(RequireU64(j, "rank", "rank meta"));
    m.hostname = RequireString(j, "hostname", "rank meta");
    return m;
}

} // end namespace codec

namespace
{

void PutU64LE(std::vector<std::uint8_t> &out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
    {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint64_t GetU64LE(const std::uint8_t *p)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
    {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

} // end anonymous namespace

std::vector<std::uint8_t> EncodeAnnouncement(const StepAnnouncement &s)
{
    // nlohmann objects keep their keys sorted, so dump() is canonical for
    // structurally equal announcements
    const std::string body = codec::ToJson(s).dump();
    std::vector<std::uint8_t> out;
    out.reserve(12 + body.size());
    out.insert(out.end(), std::begin(AnnouncementTag),
               std::end(AnnouncementTag));
    PutU64LE(out, body.size());
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

StepAnnouncement DecodeAnnouncement(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 12)
    {
        throw ProtocolError("announcement: truncated header (" +
                            std::to_string(bytes.size()) + " bytes)");
    }
    if (std::memcmp(bytes.data(), AnnouncementTag, 4) != 0)
    {
        throw ProtocolError("announcement: unknown version tag");
    }
    const std::uint64_t len = GetU64LE(bytes.data() + 4);
    if (bytes.size() < 12 + len)
    {
        throw ProtocolError("announcement: truncated body (expected " +
                            std::to_string(len) + " bytes, have " +
                            std::to_string(bytes.size() - 12) + ")");
    }
    if (bytes.size() > 12 + len)
    {
        throw ProtocolError("announcement: trailing bytes after body");
    }
    const std::string body(reinterpret_cast<const char *>(bytes.data() + 12),
                           len);
    return codec::AnnouncementFromJson(codec::Parse(body, "announcement"));
}

StepAnnouncement MergeAnnouncements(
    const std::vector<StepAnnouncement> &fragments)
{
    if (fragments.empty())
    {
        throw ValidationError("merge: no fragments");
    }
    StepAnnouncement out;
    out.step_index = fragments.front().step_index;
    for (const auto &frag : fragments)
    {
        if (frag.step_index != out.step_index)
        {
            throw ValidationError(
                "merge: fragments disagree on step index (" +
                std::to_string(frag.step_index) + " vs " +
                std::to_string(out.step_index) + ")");
        }
        for (const auto &d : frag.datasets)
        {
            if (const DatasetDecl *known = out.FindDataset(d.name))
            {
                if (!(*known == d))
                {
                    throw ValidationError(
                        "merge: conflicting declarations for dataset \"" +
                        d.name + "\"");
                }
            }
            else
            {
                out.datasets.push_back(d);
            }
        }
        for (const auto &[name, value] : frag.attributes)
        {
            const auto [it, inserted] = out.attributes.emplace(name, value);
            if (!inserted && !(it->second == value))
            {
                throw ValidationError(
                    "merge: conflicting values for attribute \"" + name +
                    "\"");
            }
        }
        out.chunk_table.insert(out.chunk_table.end(),
                               frag.chunk_table.begin(),
                               frag.chunk_table.end());
    }
    std::sort(out.datasets.begin(), out.datasets.end(),
              [](const DatasetDecl &a, const DatasetDecl &b) {
                  return a.name < b.name;
              });
    std::stable_sort(out.chunk_table.begin(), out.chunk_table.end(),
                     ChunkTableLess);
    return out;
}

} // end namespace chunkstream
