/*
 * Distributed under the OSI-approved Apache License, Version 2.0.  See
 * accompanying file Copyright.txt for details.
 *
 * EngineConfig.hpp : runtime-loadable engine selection and transport
 *                    parameters
 *
 */

#ifndef CHUNKSTREAM_ENGINECONFIG_HPP
#define CHUNKSTREAM_ENGINECONFIG_HPP

#include "chunkstream/Distribution.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace chunkstream
{

enum class EngineKind
{
    Stream,
    File,
};

/** What a stream writer does with a finished step when the queue is
 *  already at queue_depth: drop the new step, or wait for a slot. */
enum class QueuePolicy
{
    Discard,
    Block,
};

std::string ToString(EngineKind kind);
EngineKind EngineKindFromString(const std::string &name);
std::string ToString(QueuePolicy policy);
QueuePolicy QueuePolicyFromString(const std::string &name);

/** Runtime configuration document selecting the engine and its
 *  transport/queueing/distribution parameters.  The same producer or
 *  consumer code runs against either engine; only this document
 *  changes. */
struct EngineConfig
{
    EngineKind engine = EngineKind::File;

    /** stream only */
    QueuePolicy queue_policy = QueuePolicy::Discard;
    std::uint32_t queue_depth = 2;
    std::string contact_path;
    double rendezvous_timeout_s = 30.0;
    std::string bind_address = "127.0.0.1";
    std::optional<std::pair<std::uint16_t, std::uint16_t>> port_range;

    /** reader side: how announced chunks are divided among the readers */
    StrategySpec strategy;

    /** file only: writer ranks per aggregate container file */
    std::uint32_t aggregation_group = 1;

    /** file only: synthetic bandwidth cap in MiB/s applied to container
     *  appends (0 = unthrottled).  Models a slow parallel filesystem for
     *  benchmarking on local disks. */
    double file_write_mibps = 0.0;

    /** Throws ConfigError when invariants are violated (queue_depth or
     *  aggregation_group of 0, malformed port range, bad strategy). */
    void Validate() const;

    /** JSON round trip.  FromJsonText validates. */
    static EngineConfig FromJsonText(const std::string &text);
    std::string ToJsonText() const;

    /** Reads and parses the file at `path`. */
    static EngineConfig Load(const std::string &path);

    /** Resolves a config source: an explicit path if nonempty, otherwise
     *  the CHUNKSTREAM_CONFIG environment variable.  Throws ConfigError
     *  when neither is available. */
    static EngineConfig LoadOrEnv(const std::string &path);
};

} // end namespace chunkstream

#endif /* CHUNKSTREAM_ENGINECONFIG_HPP */
