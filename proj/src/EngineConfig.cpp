/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * EngineConfig.cpp
 *
 */

#include "chunkstream/EngineConfig.hpp"
#include "chunkstream/Errors.hpp"

#include "JsonCodec.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace chunkstream
{

namespace detail
{
// defined in Distribution.cpp
codec::Json StrategyToJson(const StrategySpec &spec);
StrategySpec StrategyFromJson(const codec::Json &j);
} // end namespace detail

std::string ToString(EngineKind kind)
{
    return kind == EngineKind::Stream ? "stream" : "file";
}

EngineKind EngineKindFromString(const std::string &name)
{
    if (name == "stream")
        return EngineKind::Stream;
    if (name == "file")
        return EngineKind::File;
    throw ConfigError("unknown engine kind \"" + name + "\"");
}

std::string ToString(QueuePolicy policy)
{
    return policy == QueuePolicy::Discard ? "discard" : "block";
}

QueuePolicy QueuePolicyFromString(const std::string &name)
{
    if (name == "discard")
        return QueuePolicy::Discard;
    if (name == "block")
        return QueuePolicy::Block;
    throw ConfigError("unknown queue policy \"" + name + "\"");
}

void EngineConfig::Validate() const
{
    if (queue_depth == 0)
    {
        throw ConfigError("queue_depth must be >= 1");
    }
    if (aggregation_group == 0)
    {
        throw ConfigError("aggregation_group must be >= 1");
    }
    if (rendezvous_timeout_s <= 0.0)
    {
        throw ConfigError("rendezvous_timeout_s must be positive");
    }
    if (file_write_mibps < 0.0)
    {
        throw ConfigError("file_write_mibps must not be negative");
    }
    if (port_range && port_range->first > port_range->second)
    {
        throw ConfigError("port_range lower bound exceeds upper bound");
    }
    if (engine == EngineKind::Stream && contact_path.empty())
    {
        throw ConfigError("stream engine requires a contact_path");
    }
    strategy.Validate();
}

EngineConfig EngineConfig::FromJsonText(const std::string &text)
{
    codec::Json j =
        codec::Json::parse(text, /*cb=*/nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object())
    {
        throw ConfigError("engine config: malformed JSON");
    }
    EngineConfig cfg;
    try
    {
        if (j.contains("engine"))
        {
            cfg.engine = EngineKindFromString(j.at("engine").get<std::string>());
        }
        if (j.contains("queue_policy"))
        {
            cfg.queue_policy =
                QueuePolicyFromString(j.at("queue_policy").get<std::string>());
        }
        if (j.contains("queue_depth"))
        {
            cfg.queue_depth = j.at("queue_depth").get<std::uint32_t>();
        }
        if (j.contains("contact_path"))
        {
            cfg.contact_path = j.at("contact_path").get<std::string>();
        }
        if (j.contains("rendezvous_timeout_s"))
        {
            cfg.rendezvous_timeout_s =
                j.at("rendezvous_timeout_s").get<double>();
        }
        if (j.contains("bind_address"))
        {
            cfg.bind_address = j.at("bind_address").get<std::string>();
        }
        if (j.contains("port_range"))
        {
            const auto &pr = j.at("port_range");
            if (!pr.is_array() || pr.size() != 2)
            {
                throw ConfigError("port_range must be [low, high]");
            }
            cfg.port_range = {pr[0].get<std::uint16_t>(),
                              pr[1].get<std::uint16_t>()};
        }
        if (j.contains("strategy"))
        {
            cfg.strategy = detail::StrategyFromJson(j.at("strategy"));
        }
        if (j.contains("aggregation_group"))
        {
            cfg.aggregation_group =
                j.at("aggregation_group").get<std::uint32_t>();
        }
        if (j.contains("file_write_mibps"))
        {
            cfg.file_write_mibps = j.at("file_write_mibps").get<double>();
        }
    }
    catch (const codec::Json::exception &e)
    {
        throw ConfigError(std::string("engine config: ") + e.what());
    }
    cfg.Validate();
    return cfg;
}

std::string EngineConfig::ToJsonText() const
{
    codec::Json j{
        {"engine", ToString(engine)},
        {"queue_policy", ToString(queue_policy)},
        {"queue_depth", queue_depth},
        {"rendezvous_timeout_s", rendezvous_timeout_s},
        {"bind_address", bind_address},
        {"strategy", detail::StrategyToJson(strategy)},
        {"aggregation_group", aggregation_group},
        {"file_write_mibps", file_write_mibps},
    };
    if (!contact_path.empty())
    {
        j["contact_path"] = contact_path;
    }
    if (port_range)
    {
        j["port_range"] = {port_range->first, port_range->second};
    }
    return j.dump();
}

EngineConfig EngineConfig::Load(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw ConfigError("cannot read config file \"" + path + "\"");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return FromJsonText(buf.str());
}

EngineConfig EngineConfig::LoadOrEnv(const std::string &path)
{
    if (!path.empty())
    {
        return Load(path);
    }
    if (const char *env = std::getenv("CHUNKSTREAM_CONFIG"))
    {
        if (*env != '\0')
        {
            return Load(env);
        }
    }
    throw ConfigError(
        "no config path given and CHUNKSTREAM_CONFIG is not set");
}

} // end namespace chunkstream
