/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * Contact.cpp
 *
 */

#include "Contact.hpp"

#include "chunkstream/Errors.hpp"

#include "../JsonCodec.hpp"

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include <cstdio>
#include <unistd.h>

namespace chunkstream
{
namespace engine
{

std::string ContactDocument::ToJsonText() const
{
    codec::Json ranks_json = codec::Json::array();
    for (const auto &r : ranks)
    {
        ranks_json.push_back(codec::ToJson(r));
    }
    return codec::Json{{"series", series},
                       {"group_size", group_size},
                       {"ranks", std::move(ranks_json)},
                       {"endpoints", endpoints},
                       {"control", control}}
        .dump();
}

ContactDocument ContactDocument::FromJsonText(const std::string &text)
{
    const codec::Json j = codec::Parse(text, "contact document");
    ContactDocument doc;
    doc.series = codec::RequireString(j, "series", "contact document");
    doc.group_size = static_cast<std::uint32_t>(
        codec::RequireU64(j, "group_size", "contact document"));
    const codec::Json &ranks = codec::Require(j, "ranks", "contact document");
    if (!ranks.is_array())
    {
        throw ProtocolError("contact document: \"ranks\" is not a list");
    }
    for (const auto &r : ranks)
    {
        doc.ranks.push_back(codec::RankMetaFromJson(r));
    }
    const codec::Json &eps =
        codec::Require(j, "endpoints", "contact document");
    if (!eps.is_array())
    {
        throw ProtocolError("contact document: \"endpoints\" is not a list");
    }
    for (const auto &e : eps)
    {
        if (!e.is_string())
        {
            throw ProtocolError("contact document: endpoint is not a string");
        }
        doc.endpoints.push_back(e.get<std::string>());
    }
    doc.control = codec::RequireString(j, "control", "contact document");
    doc.Validate();
    return doc;
}

void ContactDocument::Validate() const
{
    if (ranks.size() != group_size || endpoints.size() != group_size)
    {
        throw ProtocolError(
            "contact document: entry count does not match group size");
    }
    for (std::uint32_t i = 0; i < group_size; ++i)
    {
        if (ranks[i].rank != i)
        {
            throw ProtocolError(
                "contact document: ranks not contiguous from 0");
        }
    }
}

void ContactDocument::WriteAtomic(const std::string &path) const
{
    WriteTextAtomic(path, ToJsonText());
}

std::optional<ContactDocument>
ContactDocument::TryRead(const std::string &path, const std::string &series)
{
    std::ifstream in(path);
    if (!in)
    {
        return std::nullopt;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try
    {
        ContactDocument doc = FromJsonText(buf.str());
        if (doc.series == series)
        {
            return doc;
        }
        // a different series at the same path: probably a stale file
        // about to be replaced — treat as not there yet
    }
    catch (const Error &)
    {
        // unreadable or partially written
    }
    return std::nullopt;
}

ContactDocument ContactDocument::Poll(const std::string &path,
                                      const std::string &series,
                                      double timeout_s)
{
    using Clock = std::chrono::steady_clock;
    const auto deadline =
        Clock::now() + std::chrono::duration_cast<Clock::duration>(
                           std::chrono::duration<double>(timeout_s));
    while (true)
    {
        if (auto doc = TryRead(path, series))
        {
            return *doc;
        }
        if (Clock::now() >= deadline)
        {
            throw RendezvousTimeout("no contact document for series \"" +
                                    series + "\" at \"" + path + "\" within " +
                                    std::to_string(timeout_s) + " s");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

std::string ContactPart::ToJsonText() const
{
    codec::Json ranks_json = codec::Json::array();
    for (const auto &r : ranks)
    {
        ranks_json.push_back(codec::ToJson(r));
    }
    return codec::Json{{"ranks", std::move(ranks_json)},
                       {"data_endpoint", data_endpoint}}
        .dump();
}

ContactPart ContactPart::FromJsonText(const std::string &text)
{
    const codec::Json j = codec::Parse(text, "contact part");
    ContactPart part;
    const codec::Json &ranks = codec::Require(j, "ranks", "contact part");
    for (const auto &r : ranks)
    {
        part.ranks.push_back(codec::RankMetaFromJson(r));
    }
    part.data_endpoint =
        codec::RequireString(j, "data_endpoint", "contact part");
    return part;
}

std::string PartsDir(const std::string &contact_path)
{
    return contact_path + ".parts";
}

void WriteTextAtomic(const std::string &path, const std::string &text)
{
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out)
        {
            throw ConfigError("cannot write \"" + tmp + "\"");
        }
        out << text;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
    {
        throw ConfigError("cannot move \"" + tmp + "\" into place at \"" +
                          path + "\"");
    }
}

} // end namespace engine
} // end namespace chunkstream
